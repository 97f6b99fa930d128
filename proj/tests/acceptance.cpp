// Acceptance suite: one pass/fail line per criterion. Exit code is the
// number of failed criteria. `acceptance --only N` runs a single criterion.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <functional>
#include <iostream>
#include <string>
#include <vector>

#include "pipetteloc/ablation.hpp"
#include "pipetteloc/assignment.hpp"
#include "pipetteloc/enhancer.hpp"
#include "pipetteloc/evaluation.hpp"
#include "pipetteloc/heatmap.hpp"
#include "pipetteloc/localizer.hpp"
#include "pipetteloc/losses.hpp"
#include "pipetteloc/rng.hpp"
#include "pipetteloc/runconfig.hpp"
#include "pipetteloc/synthdata.hpp"
#include "pipetteloc/trainer.hpp"

using namespace pipetteloc;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

double seconds_since(const std::chrono::steady_clock::time_point& t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v, int prec = 3) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", prec, v);
    return buf;
}

// ---------------------------------------------------------------- criterion 1

Outcome criterion_hungarian_optimality() {
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng(0xC1);
    for (int trial = 0; trial < 1000; ++trial) {
        CostMatrix c;
        c.n_pred = rng.uniform_int(1, 4);
        c.n_true = rng.uniform_int(1, 4);
        c.entries.resize(static_cast<size_t>(c.n_pred) * c.n_true);
        for (double& e : c.entries) e = rng.uniform() * 256.0;
        const Assignment h = hungarian(c);
        const Assignment b = brute_force_assignment(c);
        if (h.total_cost != b.total_cost)
            return {false, "cost mismatch at trial " + std::to_string(trial)};
    }
    const double elapsed = seconds_since(t0);
    if (elapsed >= 5.0) return {false, "runtime " + fmt(elapsed) + "s exceeds 5s"};
    return {true, "1000 matrices exact, " + fmt(elapsed) + "s"};
}

// ---------------------------------------------------------------- criterion 2

Outcome criterion_permutation_invariance() {
    Rng rng(0xC2);
    double worst = 0.0;
    for (int trial = 0; trial < 200; ++trial) {
        const int n = rng.uniform_int(1, 4);
        std::vector<Vec2> pred(n), truth(n);
        for (Vec2& t : pred) t = {rng.uniform() * 256, rng.uniform() * 256};
        for (Vec2& t : truth) t = {rng.uniform() * 256, rng.uniform() * 256};
        const double base = hungarian_loss(pred, truth).first;
        std::vector<int> perm(n);
        for (int i = 0; i < n; ++i) perm[i] = i;
        do {
            std::vector<Vec2> tp(n), pp(n);
            for (int i = 0; i < n; ++i) {
                tp[i] = truth[perm[i]];
                pp[i] = pred[perm[i]];
            }
            worst = std::max(worst, std::abs(hungarian_loss(pred, tp).first - base));
            worst = std::max(worst, std::abs(hungarian_loss(pp, truth).first - base));
        } while (std::next_permutation(perm.begin(), perm.end()));
    }
    if (worst >= 1e-9) return {false, "worst deviation " + fmt(worst, 12)};
    return {true, "200 tip sets, all permutations, worst deviation " + fmt(worst, 12)};
}

// ---------------------------------------------------------------- criterion 3

Outcome criterion_heatmap_math() {
    const HeatmapConfig cfg{10.0};
    const Heatmap map = gaussian_heatmap({{128.0, 128.0}}, 256, 256, cfg);
    if (map.at(128, 128) != 1.0) return {false, "peak is not 1.0"};
    if (std::abs(map.at(128, 138) - std::exp(-0.5)) > 1e-9)
        return {false, "value at distance sigma deviates from exp(-1/2)"};
    for (int d = 1; d <= 120; ++d)
        if (std::abs(map.at(128 + d, 128) - map.at(128, 128 + d)) > 1e-12)
            return {false, "radial symmetry broken at d=" + std::to_string(d)};
    for (int x = 129; x < 256; ++x)
        if (map.at(128, x) > map.at(128, x - 1)) return {false, "monotone decay broken (+x)"};
    for (int x = 127; x >= 0; --x)
        if (map.at(128, x) > map.at(128, x + 1)) return {false, "monotone decay broken (-x)"};
    for (int y = 129; y < 256; ++y)
        if (map.at(y, 128) > map.at(y - 1, 128)) return {false, "monotone decay broken (+y)"};
    for (int y = 127; y >= 0; --y)
        if (map.at(y, 128) > map.at(y + 1, 128)) return {false, "monotone decay broken (-y)"};

    // Second isolated tip on the same grid keeps both properties.
    const Heatmap two = gaussian_heatmap({{64.0, 64.0}, {192.0, 192.0}}, 256, 256, cfg);
    if (two.at(64, 64) != 1.0 || two.at(192, 192) != 1.0)
        return {false, "isolated tips do not peak at 1.0"};
    return {true, "peak, sigma value, symmetry and decay hold on 256x256, sigma=10"};
}

// ---------------------------------------------------------------- criterion 4

Outcome criterion_gradient_checks() {
    Rng rng(0xC4);
    const double h = 1e-4;
    double worst = 0.0;
    int points = 0;
    while (points < 20) {
        // Dice at a random non-degenerate point.
        Heatmap p(12, 12), q(12, 12);
        for (double& v : p.values) v = 0.05 + 0.9 * rng.uniform();
        for (double& v : q.values) v = 0.05 + 0.9 * rng.uniform();
        const Heatmap g = dice_loss_grad(p, q);
        for (int k = 0; k < 3; ++k) {
            const size_t j = static_cast<size_t>(rng.uniform() * p.values.size());
            Heatmap pp = p, pm = p;
            pp.values[j] += h;
            pm.values[j] -= h;
            const double num = (dice_loss(pp, q) - dice_loss(pm, q)) / (2 * h);
            const double rel =
                std::abs(num - g.values[j]) / std::max({1e-9, std::abs(num), std::abs(g.values[j])});
            worst = std::max(worst, rel);
            if (rel >= 1e-3) return {false, "dice gradient relative error " + fmt(rel, 6)};
        }

        // Hungarian (assignment frozen) at a random non-degenerate point.
        const int n = rng.uniform_int(1, 4);
        std::vector<Vec2> pred(n), truth(n);
        for (Vec2& t : pred) t = {rng.uniform() * 200 + 5, rng.uniform() * 200 + 5};
        for (Vec2& t : truth) t = {rng.uniform() * 200 + 5, rng.uniform() * 200 + 5};
        const auto [loss, assignment] = hungarian_loss(pred, truth);
        bool degenerate = false;
        for (const auto& [i, j] : assignment.pairs)
            if (euclidean(pred[i], truth[j]) < 0.5) degenerate = true;
        // No tied assignments: require a margin between the two best matchings.
        const Assignment best = brute_force_assignment(cost_matrix(pred, truth));
        if (n >= 2) {
            double second = std::numeric_limits<double>::infinity();
            std::vector<int> perm(n);
            for (int i = 0; i < n; ++i) perm[i] = i;
            do {
                double total = 0.0;
                for (int i = 0; i < n; ++i) total += euclidean(pred[i], truth[perm[i]]);
                if (total > best.total_cost + 1e-9) second = std::min(second, total);
            } while (std::next_permutation(perm.begin(), perm.end()));
            if (second - best.total_cost < 1e-3) degenerate = true;
        }
        if (degenerate) continue;

        const std::vector<Vec2> grad = hungarian_loss_grad(pred, truth, assignment);
        auto frozen = [&](const std::vector<Vec2>& pt) {
            double s = 0.0;
            for (const auto& [i, j] : assignment.pairs) s += euclidean(pt[i], truth[j]);
            return s / assignment.pairs.size();
        };
        for (int i = 0; i < n; ++i)
            for (int axis = 0; axis < 2; ++axis) {
                std::vector<Vec2> pp = pred, pm = pred;
                (axis ? pp[i].y : pp[i].x) += h;
                (axis ? pm[i].y : pm[i].x) -= h;
                const double num = (frozen(pp) - frozen(pm)) / (2 * h);
                const double ana = axis ? grad[i].y : grad[i].x;
                const double rel =
                    std::abs(num - ana) / std::max({1e-9, std::abs(num), std::abs(ana)});
                worst = std::max(worst, rel);
                if (rel >= 1e-3)
                    return {false, "hungarian gradient relative error " + fmt(rel, 6)};
            }
        ++points;
    }
    return {true, "20 non-degenerate points, worst relative error " + fmt(worst, 6)};
}

// ---------------------------------------------------------------- criterion 5

Outcome criterion_shapes_and_freezing() {
    // Default configuration: 256 tokens of width 768, 256x256 heatmap,
    // 4x2 coordinates bounded in [0,256].
    LocalizerModel model = LocalizerModel::create({}, {}, 256, 1);
    if (model.encoder->token_count() != 256 || model.encoder->token_dim() != 768)
        return {false, "token grid is not 256x768"};
    model.set_training(false);
    ImageGrid image(256, 256, 0.0);
    Rng rng(0xC5);
    for (double& v : image.values) v = rng.uniform();
    const Prediction pred = predict(image, model);
    if (pred.heatmap.height != 256 || pred.heatmap.width != 256)
        return {false, "heatmap is not 256x256"};
    if (pred.tips.size() != 4) return {false, "tip tensor is not 4x2"};
    for (const Vec2& t : pred.tips)
        if (t.x < 0 || t.x > 256 || t.y < 0 || t.y > 256)
            return {false, "coordinates escape [0,256]"};

    // Stage freezing at desk scale: frozen parameters bit-identical.
    SceneConfig scfg;
    scfg.image_size = 64;
    scfg.pipette_count_max = 2;
    std::vector<LabeledScene> scenes;
    for (int i = 0; i < 8; ++i) scenes.push_back(render_scene(scfg, 500 + i));
    std::vector<LabeledScene> train_scenes(scenes.begin(), scenes.begin() + 6);
    std::vector<LabeledScene> val_scenes(scenes.begin() + 6, scenes.end());
    TrainConfig tcfg;
    tcfg.batch_size = 4;
    tcfg.heatmap.sigma = 5.0;
    tcfg.seed = 7;

    LocalizerModel small = LocalizerModel::small_preset(2);
    const uint64_t enc0 = parameter_checksum(*small.encoder);
    run_stage(small, train_scenes, val_scenes, {StageKind::decoder_only, 1, 1e-3, 20, 0.5}, tcfg,
              1);
    if (parameter_checksum(*small.encoder) != enc0)
        return {false, "encoder bits changed during the decoder-only stage"};
    const uint64_t dec0 = parameter_checksum(*small.decoder);
    run_stage(small, train_scenes, val_scenes, {StageKind::encoder_only, 1, 1e-4, 20, 0.5}, tcfg,
              0);
    if (parameter_checksum(*small.decoder) != dec0)
        return {false, "decoder bits changed during the encoder-only stage"};
    return {true, "default shapes hold; stage-frozen parameters bit-identical"};
}

// ---------------------------------------------------------------- criterion 6

Outcome criterion_desk_scale_end_to_end() {
    const auto t0 = std::chrono::steady_clock::now();

    RunConfig cfg = RunConfig::defaults();
    cfg.apply_small_preset();
    cfg.seed = 2026;
    cfg.scene.rng_seed = 2026;
    cfg.scene.pipette_count_min = 1;
    cfg.scene.pipette_count_max = 4;
    cfg.scene.noise_profile = {1.5, 0.02, 0.2};  // moderate noise
    cfg.train.seed = 2026;
    cfg.train.batch_size = 32;
    cfg.train.validation_fraction = 0.1;  // 200 of 2000 held out
    cfg.train.stages[0] = {StageKind::encoder_only, 5, 3e-4, 20, 0.5};
    cfg.train.stages[1] = {StageKind::decoder_only, 5, 1e-3, 20, 0.5};
    cfg.train.stages[2] = {StageKind::joint, 10, 1e-4, 20, 0.5};
    cfg.finalize();
    cfg.validate();

    std::vector<LabeledScene> scenes;
    scenes.reserve(2000);
    for (int i = 0; i < 2000; ++i) scenes.push_back(render_scene(cfg.scene, i));

    LocalizerModel model =
        LocalizerModel::create(cfg.encoder, cfg.decoder, cfg.scene.image_size, cfg.seed);
    const TrainReport report = train(model, scenes, cfg.train);

    std::vector<LabeledScene> train_scenes, val_scenes;
    split_dataset(scenes, cfg.train.validation_fraction, cfg.train.seed, train_scenes,
                  val_scenes);

    EvalOptions opts;
    opts.heatmap = cfg.heatmap;
    const EvalReport eval_report =
        evaluate(model_predictor(model), val_scenes, {10.0}, 1.0, opts);
    const double acc10 = eval_report.accuracy_at.at(10.0);
    const double dist = eval_report.mean_matched_distance_um;
    const double elapsed = seconds_since(t0);

    const std::string detail = "acc@10px " + fmt(acc10, 2) + "% (need >= 90), mean dist " +
                               fmt(dist, 2) + " px (need <= 5), val " +
                               std::to_string(val_scenes.size()) + " scenes, " +
                               fmt(elapsed / 60.0, 1) + " min (limit 30), val loss " +
                               fmt(report.initial_val_total, 3) + " -> " +
                               fmt(report.final_val_total, 3);
    if (acc10 < 90.0 || dist > 5.0 || elapsed > 1800.0) return {false, detail};
    return {true, detail};
}

// ---------------------------------------------------------------- criterion 7

Outcome criterion_enhancer_contracts() {
    // Contract checks with an identity translator.
    SceneConfig scfg;
    scfg.image_size = 128;
    scfg.pipette_count_min = 2;
    scfg.pipette_count_max = 3;
    const LabeledScene scene = render_scene(scfg, 99);
    const LabeledScene identity_out =
        enhance_scene_with(scene, [](const ImageGrid& p) { return p; });
    if (identity_out.image.values != scene.image.values)
        return {false, "identity-generator round-trip is not exact"};
    for (size_t i = 0; i < scene.tips.size(); ++i)
        if (identity_out.tips[i].x != scene.tips[i].x ||
            identity_out.tips[i].y != scene.tips[i].y)
            return {false, "labels not preserved"};

    // Locality: a constant translator must only touch the crop windows.
    const LabeledScene painted =
        enhance_scene_with(scene, [](const ImageGrid& p) {
            ImageGrid q = p;
            for (double& v : q.values) v = 1.0;
            return q;
        });
    std::vector<char> window(scene.image.values.size(), 0);
    for (const CropRecord& rec : crop_tips(scene))
        for (int py = rec.pad_top; py < kGanPatchSize - rec.pad_bottom; ++py)
            for (int px = rec.pad_left; px < kGanPatchSize - rec.pad_right; ++px)
                window[static_cast<size_t>(rec.origin_y + py) * scene.image.width +
                       (rec.origin_x + px)] = 1;
    for (size_t i = 0; i < window.size(); ++i) {
        if (!window[i] && painted.image.values[i] != scene.image.values[i])
            return {false, "pixels outside the crop windows changed"};
        if (window[i] && painted.image.values[i] != 1.0)
            return {false, "pixels inside the crop windows were not written"};
    }

    // Toy CycleGAN: 200 patches per domain, 5 epochs, cycle loss decreases.
    std::vector<ImageGrid> noisy, clean;
    SceneConfig noisy_cfg = scfg;
    noisy_cfg.rng_seed = 1;
    SceneConfig clean_cfg = scfg;
    clean_cfg.domain = Domain::exvivo_like;
    clean_cfg.rng_seed = 2;
    for (uint64_t s = 0; noisy.size() < 200; ++s)
        for (CropRecord& rec : crop_tips(render_scene(noisy_cfg, s))) {
            if (noisy.size() >= 200) break;
            noisy.push_back(std::move(rec.patch));
        }
    for (uint64_t s = 0; clean.size() < 200; ++s)
        for (CropRecord& rec : crop_tips(render_scene(clean_cfg, s))) {
            if (clean.size() >= 200) break;
            clean.push_back(std::move(rec.patch));
        }

    GanConfig gcfg;
    gcfg.base_channels = 8;
    gcfg.res_blocks = 6;
    gcfg.epochs = 5;
    gcfg.decay_start = 5;
    gcfg.batch_size = 4;
    gcfg.seed = 11;
    const CycleGanBundle bundle = train_cyclegan(noisy, clean, gcfg);
    if (bundle.cycle_loss_history.size() != 5)
        return {false, "expected 5 epochs of cycle loss history"};
    const double first = bundle.cycle_loss_history.front();
    const double last = bundle.cycle_loss_history.back();
    if (!(last < first))
        return {false, "cycle loss did not decrease: " + fmt(first, 4) + " -> " + fmt(last, 4)};
    return {true,
            "contracts hold; toy cycle loss " + fmt(first, 4) + " -> " + fmt(last, 4)};
}

// ---------------------------------------------------------------- criterion 8

Outcome criterion_metric_protocol() {
    SceneConfig scfg;
    scfg.image_size = 64;
    scfg.pipette_count_min = 1;
    scfg.pipette_count_max = 2;
    std::vector<LabeledScene> scenes;
    for (int i = 0; i < 10; ++i) scenes.push_back(render_scene(scfg, 800 + i));

    EvalOptions opts;
    opts.heatmap.sigma = 5.0;
    Predictor offset = [&](const LabeledScene& scene) {
        Prediction p;
        for (const Vec2& t : scene.tips) p.tips.push_back({t.x, t.y + 4.0});
        p.heatmap = gaussian_heatmap(scene.tips, 64, 64, opts.heatmap);
        return p;
    };
    const EvalReport r = evaluate(offset, scenes, {3.0, 5.0, 10.0}, 1.0, opts);
    if (r.accuracy_at.at(3.0) != 0.0) return {false, "acc@3 is not exactly 0"};
    if (r.accuracy_at.at(5.0) != 100.0) return {false, "acc@5 is not exactly 100"};
    if (r.accuracy_at.at(10.0) != 100.0) return {false, "acc@10 is not exactly 100"};
    if (std::abs(r.mean_matched_distance_um - 4.0) > 1e-12)
        return {false, "mean distance is not exactly 4.0"};

    // Threshold monotonicity on a noisy predictor.
    Rng rng(0xC8);
    Predictor noisy = [&rng](const LabeledScene& scene) {
        Prediction p;
        for (const Vec2& t : scene.tips)
            p.tips.push_back({std::clamp(t.x + rng.normal(0, 5.0), 0.0, 63.0),
                              std::clamp(t.y + rng.normal(0, 5.0), 0.0, 63.0)});
        p.heatmap = gaussian_heatmap(p.tips, 64, 64, {5.0});
        return p;
    };
    const std::vector<double> thresholds = {0.5, 1, 2, 3, 4, 5, 7, 10, 15, 20};
    const EvalReport rn = evaluate(noisy, scenes, thresholds, 1.0, opts);
    for (size_t i = 1; i < thresholds.size(); ++i)
        if (rn.accuracy_at.at(thresholds[i - 1]) > rn.accuracy_at.at(thresholds[i]))
            return {false, "accuracy not monotone in the threshold"};
    return {true, "offset example exact; monotone thresholds"};
}

// ---------------------------------------------------------------- criterion 9

Outcome criterion_latency_harness() {
    LocalizerModel model = LocalizerModel::small_preset(3);
    std::vector<double> means;
    for (int repeat = 0; repeat < 3; ++repeat) {
        const LatencyReport r = benchmark_inference(model, 1, 100, 10);
        if (static_cast<int>(r.samples_seconds.size()) != 100)
            return {false, "raw samples not retained"};
        double sum = 0.0;
        for (double s : r.samples_seconds) sum += s;
        const double recomputed = sum / r.iterations / r.batch_size;
        if (recomputed != r.mean_seconds_per_image)
            return {false, "mean is not exactly recomputable from the samples"};
        means.push_back(r.mean_seconds_per_image);
    }
    const double mean = (means[0] + means[1] + means[2]) / 3.0;
    double var = 0.0;
    for (double m : means) var += (m - mean) * (m - mean);
    var /= 3.0;
    const double cov = std::sqrt(var) / mean;
    const std::string detail = "mean " + fmt(mean * 1e3, 3) + " ms/image, CoV " +
                               fmt(100.0 * cov, 1) + "% across 3 repeats (limit 25%)";
    if (cov >= 0.25) return {false, detail};
    return {true, detail};
}

// ---------------------------------------------------------------- criterion 10

Outcome criterion_ablation_table() {
    const auto t0 = std::chrono::steady_clock::now();
    RunConfig cfg = RunConfig::defaults();
    cfg.apply_small_preset();
    cfg.seed = 77;
    cfg.scene.rng_seed = 77;
    cfg.scene.noise_profile = {1.5, 0.02, 0.2};
    cfg.train.seed = 77;
    cfg.train.batch_size = 32;
    cfg.train.validation_fraction = 0.2;
    cfg.train.stages[0] = {StageKind::encoder_only, 3, 3e-4, 20, 0.5};
    cfg.train.stages[1] = {StageKind::decoder_only, 3, 1e-3, 20, 0.5};
    cfg.train.stages[2] = {StageKind::joint, 6, 1e-4, 20, 0.5};
    cfg.finalize();

    std::vector<LabeledScene> scenes;
    for (int i = 0; i < 600; ++i) scenes.push_back(render_scene(cfg.scene, 5000 + i));

    const AblationTable table = run_ablation(scenes, cfg);
    if (table.rows.size() != 4) return {false, "table does not have 4 rows"};
    if (table.rows[0].iou || table.rows[2].iou)
        return {false, "rows without a coarse learner must omit IoU"};
    if (!table.rows[1].iou || !table.rows[3].iou)
        return {false, "rows with a coarse learner must report IoU"};

    const double full = table.rows[3].acc_at_10px;
    std::string accs;
    for (const AblationRow& r : table.rows) accs += fmt(r.acc_at_10px, 1) + "% ";
    const std::string detail = "acc@10px rows: " + accs + "(" +
                               fmt(seconds_since(t0) / 60.0, 1) + " min)";
    for (int row : {0, 1, 2})
        if (full < table.rows[row].acc_at_10px)
            return {false, "full configuration beaten by row " + std::to_string(row + 1) + "; " +
                               detail};
    return {true, detail};
}

}  // namespace

int main(int argc, char** argv) {
    int only = 0;
    for (int i = 1; i < argc; ++i)
        if (std::strcmp(argv[i], "--only") == 0 && i + 1 < argc) only = std::atoi(argv[i + 1]);

    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
        {"hungarian optimality vs brute force", criterion_hungarian_optimality},
        {"hungarian-loss permutation invariance", criterion_permutation_invariance},
        {"heatmap math at sigma=10", criterion_heatmap_math},
        {"analytic vs finite-difference gradients", criterion_gradient_checks},
        {"shape and freezing contracts", criterion_shapes_and_freezing},
        {"desk-scale end-to-end training", criterion_desk_scale_end_to_end},
        {"enhancer contracts and toy CycleGAN", criterion_enhancer_contracts},
        {"metric protocol", criterion_metric_protocol},
        {"latency harness stability", criterion_latency_harness},
        {"ablation table", criterion_ablation_table},
    };

    int failures = 0;
    for (size_t i = 0; i < criteria.size(); ++i) {
        if (only != 0 && only != static_cast<int>(i + 1)) continue;
        Outcome outcome;
        try {
            outcome = criteria[i].second();
        } catch (const std::exception& e) {
            outcome = {false, std::string("exception: ") + e.what()};
        }
        std::cout << (outcome.pass ? "[PASS]" : "[FAIL]") << " criterion " << (i + 1) << ": "
                  << criteria[i].first << " — " << outcome.detail << std::endl;
        if (!outcome.pass) ++failures;
    }
    return failures;
}
