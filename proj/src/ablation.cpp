#include "pipetteloc/ablation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "pipetteloc/evaluation.hpp"
#include "pipetteloc/nn/optim.hpp"

namespace pipetteloc {

using nn::Tensor;

std::vector<Vec2> heatmap_peaks(const Heatmap& map, int count, double suppression_radius) {
    Heatmap work = map;
    std::vector<Vec2> peaks;
    const double r2 = suppression_radius * suppression_radius;
    for (int k = 0; k < count; ++k) {
        int best = 0;
        for (size_t i = 1; i < work.values.size(); ++i)
            if (work.values[i] > work.values[best]) best = static_cast<int>(i);
        const int py = best / map.width, px = best % map.width;
        peaks.push_back({static_cast<double>(px), static_cast<double>(py)});
        const int y0 = std::max(0, py - static_cast<int>(suppression_radius));
        const int y1 = std::min(map.height - 1, py + static_cast<int>(suppression_radius));
        const int x0 = std::max(0, px - static_cast<int>(suppression_radius));
        const int x1 = std::min(map.width - 1, px + static_cast<int>(suppression_radius));
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x)
                if ((y - py) * (y - py) + (x - px) * (x - px) <= r2) work.at(y, x) = -1.0;
    }
    return peaks;
}

namespace {

// Shallow direct regression head used by the no-coarse, no-finer row.
class DirectRegressor : public nn::Module {
public:
    DirectRegressor(int max_tips, int output_scale, Rng& rng)
        : output_scale_(output_scale),
          conv1_(1, 16, 3, 2, 1, rng),
          bn1_(16),
          conv2_(16, 32, 3, 2, 1, rng),
          bn2_(32),
          conv3_(32, 64, 3, 2, 1, rng),
          bn3_(64),
          pool_(4),
          fc_(64 * 16, 2 * max_tips, rng, 0.01f) {}

    Tensor forward(const Tensor& x) override {
        Tensor h = relu1_.forward(bn1_.forward(conv1_.forward(x)));
        h = relu2_.forward(bn2_.forward(conv2_.forward(h)));
        h = relu3_.forward(bn3_.forward(conv3_.forward(h)));
        h = pool_.forward(h);
        Tensor flat({h.dim(0), 64 * 16});
        std::copy(h.data(), h.data() + h.numel(), flat.data());
        Tensor y = squash_.forward(fc_.forward(flat));
        for (int64_t i = 0; i < y.numel(); ++i) y[i] *= static_cast<float>(output_scale_);
        return y;
    }

    Tensor backward(const Tensor& dy) override {
        Tensor d(dy.shape());
        for (int64_t i = 0; i < dy.numel(); ++i)
            d[i] = dy[i] * static_cast<float>(output_scale_);
        Tensor dflat = fc_.backward(squash_.backward(d));
        Tensor dpool({dflat.dim(0), 64, 4, 4});
        std::copy(dflat.data(), dflat.data() + dflat.numel(), dpool.data());
        Tensor h = pool_.backward(dpool);
        h = conv3_.backward(bn3_.backward(relu3_.backward(h)));
        h = conv2_.backward(bn2_.backward(relu2_.backward(h)));
        return conv1_.backward(bn1_.backward(relu1_.backward(h)));
    }

    void visit_params(const std::string& prefix, const nn::ParamVisitor& fn) override {
        conv1_.visit_params(prefix + "conv1.", fn);
        bn1_.visit_params(prefix + "bn1.", fn);
        conv2_.visit_params(prefix + "conv2.", fn);
        bn2_.visit_params(prefix + "bn2.", fn);
        conv3_.visit_params(prefix + "conv3.", fn);
        bn3_.visit_params(prefix + "bn3.", fn);
        fc_.visit_params(prefix + "fc.", fn);
    }

    void for_each_child(const std::function<void(nn::Module&)>& fn) override {
        fn(conv1_);
        fn(bn1_);
        fn(relu1_);
        fn(conv2_);
        fn(bn2_);
        fn(relu2_);
        fn(conv3_);
        fn(bn3_);
        fn(relu3_);
        fn(pool_);
        fn(fc_);
        fn(squash_);
    }

private:
    int output_scale_;
    nn::Conv2d conv1_;
    nn::BatchNorm2d bn1_;
    nn::ReLU relu1_;
    nn::Conv2d conv2_;
    nn::BatchNorm2d bn2_;
    nn::ReLU relu2_;
    nn::Conv2d conv3_;
    nn::BatchNorm2d bn3_;
    nn::ReLU relu3_;
    nn::AdaptiveAvgPool2d pool_;
    nn::Linear fc_;
    nn::Sigmoid squash_;
};

Tensor scenes_to_batch(const std::vector<const LabeledScene*>& scenes) {
    const int B = static_cast<int>(scenes.size());
    const int H = scenes[0]->image.height, W = scenes[0]->image.width;
    Tensor t({B, 1, H, W});
    for (int b = 0; b < B; ++b)
        for (size_t i = 0; i < scenes[b]->image.values.size(); ++i)
            t[static_cast<size_t>(b) * H * W + i] =
                static_cast<float>(scenes[b]->image.values[i]);
    return t;
}

// Plain coordinate-regression training with the matched-distance loss; used
// for the two rows that have no coarse learner.
void train_tip_regressor(nn::Module& net, const std::vector<LabeledScene>& scenes, int epochs,
                         double lr, const RunConfig& cfg, int max_tips) {
    nn::Adam::Options opts;
    opts.lr = static_cast<float>(lr);
    nn::Adam optimizer(nn::collect_parameters(net), opts);
    net.set_training(true);

    std::vector<int> order(scenes.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

    for (int epoch = 1; epoch <= epochs; ++epoch) {
        Rng rng(Rng::mix(cfg.train.seed, 0xab1a7e, static_cast<uint64_t>(epoch)));
        for (size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[rng.uniform_int(0, static_cast<int>(i) - 1)]);
        const int n = static_cast<int>(scenes.size());
        for (int start = 0; start < n; start += cfg.train.batch_size) {
            const int end = std::min(start + cfg.train.batch_size, n);
            std::vector<LabeledScene> augmented;
            for (int i = start; i < end; ++i)
                augmented.push_back(augment(scenes[order[i]], rng, cfg.train.augmentation));
            std::vector<const LabeledScene*> batch;
            for (const LabeledScene& s : augmented) batch.push_back(&s);

            Tensor coords = net.forward(scenes_to_batch(batch));
            const double inv_b = 1.0 / batch.size();
            Tensor dcoords(coords.shape());
            for (size_t b = 0; b < batch.size(); ++b) {
                const std::vector<Vec2> tips =
                    coords_from_tensor(coords, static_cast<int>(b), max_tips);
                const auto [dist, assignment] = hungarian_loss(tips, batch[b]->tips);
                const std::vector<Vec2> g =
                    hungarian_loss_grad(tips, batch[b]->tips, assignment);
                float* dst = dcoords.data() + b * 2 * max_tips;
                for (int i = 0; i < max_tips; ++i) {
                    dst[2 * i] = static_cast<float>(g[i].x * inv_b);
                    dst[2 * i + 1] = static_cast<float>(g[i].y * inv_b);
                }
            }
            optimizer.zero_grad();
            net.backward(dcoords);
            optimizer.step();
        }
    }
    net.set_training(false);
}

double acc_from_report(const EvalReport& r, double threshold) {
    return r.accuracy_at.at(threshold);
}

}  // namespace

AblationTable run_ablation(const std::vector<LabeledScene>& dataset, const RunConfig& config) {
    config.validate();
    if (dataset.empty()) throw std::invalid_argument("run_ablation: empty dataset");

    std::vector<LabeledScene> train_scenes, val_scenes;
    split_dataset(dataset, config.train.validation_fraction, config.train.seed, train_scenes,
                  val_scenes);

    int total_epochs = 0;
    for (const StageSpec& s : config.train.stages) total_epochs += s.epochs;
    const int max_tips = config.decoder.max_tips;
    const std::vector<double> thresholds = {10.0};
    EvalOptions eval_opts;
    eval_opts.heatmap = config.heatmap;
    eval_opts.iou_threshold = config.iou_threshold;

    AblationTable table;

    {  // Row 1: direct regression head on (enhanced) images; no heatmap.
        Rng rng(Rng::mix(config.seed, 0xab01));
        DirectRegressor net(max_tips, config.scene.image_size, rng);
        train_tip_regressor(net, train_scenes, total_epochs,
                            config.train.stages[1].learning_rate, config, max_tips);
        Predictor pred = [&](const LabeledScene& scene) {
            Prediction p;
            Tensor coords = net.forward(scenes_to_batch({&scene}));
            p.tips = coords_from_tensor(coords, 0, max_tips);
            return p;  // no heatmap: IoU absent
        };
        const EvalReport r = evaluate(pred, val_scenes, thresholds, 1.0, eval_opts);
        table.rows.push_back({true, false, false, std::nullopt, r.mean_matched_distance_um,
                              acc_from_report(r, 10.0),
                              "stand-in: shallow direct regression head"});
    }

    {  // Row 2: coarse learner only; tips read as heatmap peaks.
        LocalizerModel model = LocalizerModel::create(config.encoder, config.decoder,
                                                      config.scene.image_size, config.seed);
        StageSpec stage{StageKind::encoder_only, total_epochs,
                        config.train.stages[0].learning_rate,
                        config.train.stages[0].plateau_patience,
                        config.train.stages[0].plateau_factor};
        run_stage(model, train_scenes, val_scenes, stage, config.train, 0);
        model.set_training(false);
        const double suppress = 2.0 * config.heatmap.sigma;
        Predictor pred = [&](const LabeledScene& scene) {
            Prediction p;
            p.heatmap = encode(scene.image, model);
            p.tips = heatmap_peaks(p.heatmap, max_tips, suppress);
            return p;
        };
        const EvalReport r = evaluate(pred, val_scenes, thresholds, 1.0, eval_opts);
        table.rows.push_back({true, true, false, r.heatmap_iou, r.mean_matched_distance_um,
                              acc_from_report(r, 10.0), "tips via heatmap peak extraction"});
    }

    {  // Row 3: finer learner fed the raw image instead of a heatmap.
        Rng rng(Rng::mix(config.seed, 0xab03));
        FineDecoder net(config.decoder, rng);
        train_tip_regressor(net, train_scenes, total_epochs,
                            config.train.stages[1].learning_rate, config, max_tips);
        Predictor pred = [&](const LabeledScene& scene) {
            Prediction p;
            Tensor coords = net.forward(scenes_to_batch({&scene}));
            p.tips = coords_from_tensor(coords, 0, max_tips);
            return p;
        };
        const EvalReport r = evaluate(pred, val_scenes, thresholds, 1.0, eval_opts);
        table.rows.push_back({true, false, true, std::nullopt, r.mean_matched_distance_um,
                              acc_from_report(r, 10.0),
                              "stand-in: finer decoder on the raw image"});
    }

    {  // Row 4: full coarse-to-fine configuration.
        LocalizerModel model = LocalizerModel::create(config.encoder, config.decoder,
                                                      config.scene.image_size, config.seed);
        TrainConfig tc = config.train;
        tc.checkpoint_dir.clear();
        train(model, dataset, tc);
        model.set_training(false);
        Predictor pred = model_predictor(model);
        const EvalReport r = evaluate(pred, val_scenes, thresholds, 1.0, eval_opts);
        table.rows.push_back({true, true, true, r.heatmap_iou, r.mean_matched_distance_um,
                              acc_from_report(r, 10.0), "full configuration"});
    }

    return table;
}

void save_ablation_table(const AblationTable& table, const std::string& path) {
    nlohmann::json rows = nlohmann::json::array();
    for (const AblationRow& r : table.rows) {
        nlohmann::json row = {{"gan", r.gan},
                              {"coarse_learner", r.coarse_learner},
                              {"finer_learner", r.finer_learner},
                              {"mean_matched_distance_px", r.mean_matched_distance_px},
                              {"acc_at_10px", r.acc_at_10px},
                              {"note", r.note}};
        if (r.iou)
            row["iou"] = *r.iou;
        else
            row["iou"] = nullptr;
        rows.push_back(row);
    }
    nlohmann::json root = {{"format", "pipetteloc-ablation-table"}, {"rows", rows}};
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_ablation_table: cannot write " + path);
    out << root.dump(2) << "\n";
}

}  // namespace pipetteloc
