#include "pipetteloc/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include <json.hpp>

#include "pipetteloc/nn/optim.hpp"

namespace pipetteloc {

using nn::Tensor;

std::string to_string(StageKind k) {
    switch (k) {
        case StageKind::encoder_only: return "encoder_only";
        case StageKind::decoder_only: return "decoder_only";
        default: return "joint";
    }
}

StageKind stage_kind_from_string(const std::string& s) {
    if (s == "encoder_only") return StageKind::encoder_only;
    if (s == "decoder_only") return StageKind::decoder_only;
    if (s == "joint") return StageKind::joint;
    throw std::invalid_argument("unknown stage kind: " + s);
}

void StageSpec::validate() const {
    if (epochs < 0) throw std::invalid_argument("StageSpec: epochs must be >= 0");
    if (learning_rate <= 0.0) throw std::invalid_argument("StageSpec: learning_rate must be > 0");
    if (plateau_patience < 1) throw std::invalid_argument("StageSpec: plateau_patience must be >= 1");
    if (plateau_factor <= 0.0 || plateau_factor >= 1.0)
        throw std::invalid_argument("StageSpec: plateau_factor must lie in (0,1)");
}

void TrainConfig::validate() const {
    if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
    if (validation_fraction <= 0.0 || validation_fraction >= 1.0)
        throw std::invalid_argument("TrainConfig: validation_fraction must lie in (0,1)");
    if (augmentation.scale_min <= 0.0 || augmentation.scale_max >= 2.0 ||
        augmentation.scale_min > augmentation.scale_max)
        throw std::invalid_argument("TrainConfig: scale range must lie within (0,2)");
    if (stages.size() != 3 || stages[0].name != StageKind::encoder_only ||
        stages[1].name != StageKind::decoder_only || stages[2].name != StageKind::joint)
        throw std::invalid_argument(
            "TrainConfig: stage order is fixed as encoder_only, decoder_only, joint");
    for (const StageSpec& s : stages) s.validate();
}

// --------------------------------------------------------------------------- augmentation

LabeledScene flip_horizontal(const LabeledScene& scene) {
    LabeledScene out = scene;
    const int W = scene.image.width;
    for (int y = 0; y < scene.image.height; ++y)
        for (int x = 0; x < W; ++x) out.image.at(y, x) = scene.image.at(y, W - 1 - x);
    for (Vec2& t : out.tips) t.x = W - 1 - t.x;
    return out;
}

LabeledScene flip_vertical(const LabeledScene& scene) {
    LabeledScene out = scene;
    const int H = scene.image.height;
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < scene.image.width; ++x)
            out.image.at(y, x) = scene.image.at(H - 1 - y, x);
    for (Vec2& t : out.tips) t.y = H - 1 - t.y;
    return out;
}

LabeledScene scale_about_center(const LabeledScene& scene, double factor) {
    if (factor <= 0.0) throw std::invalid_argument("scale_about_center: factor must be > 0");
    if (factor == 1.0) return scene;
    LabeledScene out = scene;
    const int H = scene.image.height, W = scene.image.width;
    const double cx = (W - 1) / 2.0, cy = (H - 1) / 2.0;
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            const double sx = cx + (x - cx) / factor;
            const double sy = cy + (y - cy) / factor;
            double v = 0.0;
            if (sx >= 0.0 && sx <= W - 1 && sy >= 0.0 && sy <= H - 1) {
                const int x0 = static_cast<int>(sx), y0 = static_cast<int>(sy);
                const int x1 = std::min(x0 + 1, W - 1), y1 = std::min(y0 + 1, H - 1);
                const double fx = sx - x0, fy = sy - y0;
                v = scene.image.at(y0, x0) * (1 - fx) * (1 - fy) +
                    scene.image.at(y0, x1) * fx * (1 - fy) +
                    scene.image.at(y1, x0) * (1 - fx) * fy + scene.image.at(y1, x1) * fx * fy;
            }
            out.image.at(y, x) = v;
        }
    for (Vec2& t : out.tips) {
        t.x = std::clamp(cx + factor * (t.x - cx), 0.0, static_cast<double>(W - 1));
        t.y = std::clamp(cy + factor * (t.y - cy), 0.0, static_cast<double>(H - 1));
    }
    return out;
}

LabeledScene augment(const LabeledScene& scene, Rng& rng, const AugmentationConfig& cfg) {
    LabeledScene out = scene;
    if (cfg.horizontal_flip && rng.bernoulli(0.5)) out = flip_horizontal(out);
    if (cfg.vertical_flip && rng.bernoulli(0.5)) out = flip_vertical(out);
    if (cfg.scale_max > cfg.scale_min) {
        out = scale_about_center(out, rng.uniform(cfg.scale_min, cfg.scale_max));
    } else if (cfg.scale_min != 1.0) {
        out = scale_about_center(out, cfg.scale_min);
    }
    return out;
}

// --------------------------------------------------------------------------- schedule

double lr_from_history(double initial, const std::vector<double>& val_history, int patience,
                       double factor) {
    double lr = initial;
    double best = std::numeric_limits<double>::infinity();
    int since_improvement = 0;
    for (double v : val_history) {
        if (v < best) {
            best = v;
            since_improvement = 0;
        } else if (++since_improvement == patience) {
            lr *= factor;
            since_improvement = 0;
        }
    }
    return lr;
}

// --------------------------------------------------------------------------- stage loop

namespace {

Tensor scenes_to_batch(const std::vector<const LabeledScene*>& scenes) {
    const int B = static_cast<int>(scenes.size());
    const int H = scenes[0]->image.height, W = scenes[0]->image.width;
    Tensor t({B, 1, H, W});
    for (int b = 0; b < B; ++b) {
        const auto& v = scenes[b]->image.values;
        float* dst = t.data() + static_cast<size_t>(b) * H * W;
        for (size_t i = 0; i < v.size(); ++i) dst[i] = static_cast<float>(v[i]);
    }
    return t;
}

Heatmap heatmap_from_tensor(const Tensor& t, int b) {
    const int H = t.dim(2), W = t.dim(3);
    Heatmap hm(H, W);
    const float* src = t.data() + static_cast<size_t>(b) * H * W;
    for (size_t i = 0; i < hm.values.size(); ++i) hm.values[i] = src[i];
    return hm;
}

struct BatchLoss {
    double value = 0.0;
    Tensor dheatmap;  // grad wrt predicted heatmaps (dice path), empty if unused
    Tensor dcoords;   // grad wrt predicted coords, empty if unused
};

// Stage-specific loss over one batch. Gradients are already scaled by 1/B.
BatchLoss batch_loss(StageKind kind, const Tensor* pred_hm, const Tensor* pred_coords,
                     const std::vector<const LabeledScene*>& scenes,
                     const std::vector<Heatmap>& gt_heatmaps, const TrainConfig& cfg,
                     int max_tips, bool want_grads) {
    const int B = static_cast<int>(scenes.size());
    const double inv_b = 1.0 / B;
    BatchLoss out;
    const bool use_dice = kind != StageKind::decoder_only;
    const bool use_hung = kind != StageKind::encoder_only;
    if (use_dice && want_grads) out.dheatmap.resize(pred_hm->shape());
    if (use_hung && want_grads) out.dcoords.resize(pred_coords->shape());

    for (int b = 0; b < B; ++b) {
        if (use_dice) {
            const Heatmap ph = heatmap_from_tensor(*pred_hm, b);
            out.value += inv_b * dice_loss(ph, gt_heatmaps[b], cfg.loss.dice_smoothing);
            if (want_grads) {
                const Heatmap g = dice_loss_grad(ph, gt_heatmaps[b], cfg.loss.dice_smoothing);
                float* dst = out.dheatmap.data() + static_cast<size_t>(b) * g.values.size();
                for (size_t i = 0; i < g.values.size(); ++i)
                    dst[i] = static_cast<float>(g.values[i] * inv_b);
            }
        }
        if (use_hung) {
            const std::vector<Vec2> tips = coords_from_tensor(*pred_coords, b, max_tips);
            const auto [mean_dist, assignment] = hungarian_loss(tips, scenes[b]->tips);
            const double weight = kind == StageKind::joint ? cfg.loss.alpha : 1.0;
            out.value += inv_b * weight * mean_dist;
            if (want_grads) {
                const std::vector<Vec2> g = hungarian_loss_grad(tips, scenes[b]->tips, assignment);
                float* dst = out.dcoords.data() + static_cast<size_t>(b) * 2 * max_tips;
                for (int i = 0; i < max_tips; ++i) {
                    dst[2 * i] = static_cast<float>(g[i].x * weight * inv_b);
                    dst[2 * i + 1] = static_cast<float>(g[i].y * weight * inv_b);
                }
            }
        }
    }
    return out;
}

double stage_loss_on(LocalizerModel& model, StageKind kind,
                     const std::vector<LabeledScene>& scenes,
                     const std::vector<Heatmap>& gt_heatmaps, const TrainConfig& cfg) {
    model.set_training(false);
    const int max_tips = model.decoder_config.max_tips;
    double total = 0.0;
    const int B = cfg.batch_size;
    const int n = static_cast<int>(scenes.size());
    for (int start = 0; start < n; start += B) {
        std::vector<const LabeledScene*> batch;
        std::vector<Heatmap> gts;
        for (int i = start; i < std::min(start + B, n); ++i) {
            batch.push_back(&scenes[i]);
            gts.push_back(gt_heatmaps[i]);
        }
        Tensor images = scenes_to_batch(batch);
        Tensor hm = model.encoder->forward(images);
        Tensor coords;
        if (kind != StageKind::encoder_only) coords = model.decoder->forward(hm);
        const BatchLoss l =
            batch_loss(kind, &hm, &coords, batch, gts, cfg, max_tips, /*want_grads=*/false);
        total += l.value * batch.size();
    }
    return total / n;
}

std::vector<Heatmap> gt_heatmaps_for(const std::vector<LabeledScene>& scenes,
                                     const HeatmapConfig& cfg) {
    std::vector<Heatmap> out;
    out.reserve(scenes.size());
    for (const LabeledScene& s : scenes)
        out.push_back(gaussian_heatmap(s.tips, s.image.height, s.image.width, cfg));
    return out;
}

}  // namespace

StageHistory run_stage(LocalizerModel& model, const std::vector<LabeledScene>& train_scenes,
                       const std::vector<LabeledScene>& val_scenes, const StageSpec& stage,
                       const TrainConfig& config, int stage_index) {
    stage.validate();
    if (train_scenes.empty() || val_scenes.empty())
        throw std::invalid_argument("run_stage: empty dataset");

    const StageKind kind = stage.name;
    const int max_tips = model.decoder_config.max_tips;

    // Frozen components stay in eval mode and out of the optimizer.
    std::vector<nn::Parameter*> params;
    const bool train_encoder = kind != StageKind::decoder_only;
    const bool train_decoder = kind != StageKind::encoder_only;
    if (train_encoder)
        for (nn::Parameter* p : nn::collect_parameters(*model.encoder)) params.push_back(p);
    if (train_decoder)
        for (nn::Parameter* p : nn::collect_parameters(*model.decoder)) params.push_back(p);
    nn::Adam::Options opts;
    opts.lr = static_cast<float>(stage.learning_rate);
    nn::Adam optimizer(params, opts);

    const std::vector<Heatmap> val_gt = gt_heatmaps_for(val_scenes, config.heatmap);

    StageHistory history;
    history.spec = stage;
    std::vector<double> val_history;

    std::vector<int> order(train_scenes.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

    for (int epoch = 1; epoch <= stage.epochs; ++epoch) {
        const double lr = lr_from_history(stage.learning_rate, val_history,
                                          stage.plateau_patience, stage.plateau_factor);
        optimizer.set_lr(static_cast<float>(lr));

        Rng rng(Rng::mix(config.seed, 0x57a6e000ULL + stage_index, static_cast<uint64_t>(epoch)));
        for (size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[rng.uniform_int(0, static_cast<int>(i) - 1)]);

        model.set_training(true);
        if (!train_encoder) model.encoder->set_training(false);
        if (!train_decoder) model.decoder->set_training(false);

        double epoch_loss = 0.0;
        const int n = static_cast<int>(train_scenes.size());
        for (int start = 0; start < n; start += config.batch_size) {
            const int end = std::min(start + config.batch_size, n);
            std::vector<LabeledScene> augmented;
            std::vector<const LabeledScene*> batch;
            std::vector<Heatmap> gts;
            augmented.reserve(end - start);
            for (int i = start; i < end; ++i) {
                augmented.push_back(augment(train_scenes[order[i]], rng, config.augmentation));
                const LabeledScene& s = augmented.back();
                gts.push_back(gaussian_heatmap(s.tips, s.image.height, s.image.width,
                                               config.heatmap));
            }
            for (const LabeledScene& s : augmented) batch.push_back(&s);

            Tensor images = scenes_to_batch(batch);
            Tensor hm = model.encoder->forward(images);
            Tensor coords;
            if (kind != StageKind::encoder_only) coords = model.decoder->forward(hm);

            BatchLoss loss =
                batch_loss(kind, &hm, &coords, batch, gts, config, max_tips, /*want_grads=*/true);
            if (!std::isfinite(loss.value))
                throw std::runtime_error("run_stage: non-finite loss in stage " +
                                         to_string(kind) + " epoch " + std::to_string(epoch));
            epoch_loss += loss.value * batch.size();

            optimizer.zero_grad();
            switch (kind) {
                case StageKind::encoder_only:
                    model.encoder->backward(loss.dheatmap);
                    break;
                case StageKind::decoder_only:
                    model.decoder->backward(loss.dcoords);
                    break;
                case StageKind::joint: {
                    Tensor dhm = model.decoder->backward(loss.dcoords);
                    for (int64_t i = 0; i < dhm.numel(); ++i) dhm[i] += loss.dheatmap[i];
                    model.encoder->backward(dhm);
                    break;
                }
            }
            optimizer.step();
        }
        epoch_loss /= n;

        const double val_loss = stage_loss_on(model, kind, val_scenes, val_gt, config);
        if (!std::isfinite(val_loss))
            throw std::runtime_error("run_stage: non-finite validation loss in stage " +
                                     to_string(kind) + " epoch " + std::to_string(epoch));
        val_history.push_back(val_loss);
        history.epochs.push_back({to_string(kind), epoch, lr, epoch_loss, val_loss});
    }
    return history;
}

void split_dataset(const std::vector<LabeledScene>& dataset, double validation_fraction,
                   uint64_t seed, std::vector<LabeledScene>& train_out,
                   std::vector<LabeledScene>& val_out) {
    std::vector<int> idx(dataset.size());
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
    Rng rng(Rng::mix(seed, 0x5b117000ULL));
    for (size_t i = idx.size(); i > 1; --i)
        std::swap(idx[i - 1], idx[rng.uniform_int(0, static_cast<int>(i) - 1)]);
    const size_t n_val =
        std::max<size_t>(1, static_cast<size_t>(std::lround(validation_fraction * dataset.size())));
    train_out.clear();
    val_out.clear();
    for (size_t i = 0; i < idx.size(); ++i)
        (i < n_val ? val_out : train_out).push_back(dataset[idx[i]]);
}

TrainReport train(LocalizerModel& model, const std::vector<LabeledScene>& dataset,
                  const TrainConfig& config) {
    config.validate();
    if (dataset.empty()) throw std::invalid_argument("train: empty dataset");

    std::vector<LabeledScene> train_scenes, val_scenes;
    split_dataset(dataset, config.validation_fraction, config.seed, train_scenes, val_scenes);
    if (train_scenes.empty()) throw std::invalid_argument("train: no training scenes after split");

    const std::vector<Heatmap> val_gt = gt_heatmaps_for(val_scenes, config.heatmap);

    TrainReport report;
    report.train_scenes = train_scenes.size();
    report.val_scenes = val_scenes.size();
    report.initial_val_total =
        stage_loss_on(model, StageKind::joint, val_scenes, val_gt, config);

    for (size_t s = 0; s < config.stages.size(); ++s) {
        const StageSpec& stage = config.stages[s];
        if (stage.epochs == 0) continue;
        StageHistory h =
            run_stage(model, train_scenes, val_scenes, stage, config, static_cast<int>(s));
        report.epochs.insert(report.epochs.end(), h.epochs.begin(), h.epochs.end());
        if (!config.checkpoint_dir.empty()) {
            std::filesystem::create_directories(config.checkpoint_dir);
            model.save(config.checkpoint_dir + "/after_" + to_string(stage.name) + ".ckpt");
        }
    }

    report.final_val_total = stage_loss_on(model, StageKind::joint, val_scenes, val_gt, config);
    return report;
}

void save_train_report(const TrainReport& report, const std::string& path) {
    nlohmann::json epochs = nlohmann::json::array();
    for (const EpochRecord& e : report.epochs)
        epochs.push_back({{"stage", e.stage},
                          {"epoch", e.epoch},
                          {"lr", e.lr},
                          {"train_loss", e.train_loss},
                          {"val_loss", e.val_loss}});
    nlohmann::json root = {{"format", "pipetteloc-train-report"},
                           {"epochs", epochs},
                           {"initial_val_total", report.initial_val_total},
                           {"final_val_total", report.final_val_total},
                           {"train_scenes", report.train_scenes},
                           {"val_scenes", report.val_scenes}};
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_train_report: cannot write " + path);
    out << root.dump(2) << "\n";
}

}  // namespace pipetteloc
