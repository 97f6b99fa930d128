#include "pipetteloc/evaluation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <limits>

#include <json.hpp>

#include "pipetteloc/assignment.hpp"
#include "pipetteloc/imageio.hpp"
#include "pipetteloc/rng.hpp"

namespace pipetteloc {

Predictor model_predictor(LocalizerModel& model) {
    return [&model](const LabeledScene& scene) {
        model.set_training(false);
        return predict(scene.image, model);
    };
}

EvalReport evaluate(const Predictor& predict_fn, const std::vector<LabeledScene>& dataset,
                    const std::vector<double>& thresholds_um, double um_per_pixel,
                    const EvalOptions& options) {
    if (dataset.empty()) throw std::invalid_argument("evaluate: empty dataset");
    if (um_per_pixel <= 0.0) throw std::invalid_argument("evaluate: um_per_pixel must be > 0");
    for (double t : thresholds_um)
        if (t <= 0.0) throw std::invalid_argument("evaluate: thresholds must be positive");

    EvalReport report;
    report.um_per_pixel = um_per_pixel;
    std::map<double, int> correct;
    for (double t : thresholds_um) correct[t] = 0;

    int total_true = 0;
    double sum_dist = 0.0, sum_sq = 0.0, sum_iou = 0.0;
    int matched_total = 0;
    int iou_scenes = 0;

    for (const LabeledScene& scene : dataset) {
        const Prediction pred = predict_fn(scene);
        PerSceneRecord rec;
        rec.id = scene.id;
        rec.n_true = static_cast<int>(scene.tips.size());
        total_true += rec.n_true;

        const Assignment a = hungarian(cost_matrix(pred.tips, scene.tips));
        std::vector<double> dist_by_true(scene.tips.size(), -1.0);
        for (const auto& [pi, ti] : a.pairs)
            dist_by_true[ti] = euclidean(pred.tips[pi], scene.tips[ti]) * um_per_pixel;
        for (size_t ti = 0; ti < scene.tips.size(); ++ti) {
            const double d = dist_by_true[ti];
            rec.matched_distances_um.push_back(d);
            if (d < 0.0) continue;  // unmatched ground truth counts as incorrect
            ++matched_total;
            sum_dist += d;
            sum_sq += d * d;
            for (double t : thresholds_um)
                if (d <= t) ++correct[t];
        }

        if (pred.heatmap.values.empty()) {
            // Predictors without a coarse learner do not emit heatmaps.
            rec.heatmap_iou = std::numeric_limits<double>::quiet_NaN();
        } else {
            const Heatmap gt_hm = gaussian_heatmap(scene.tips, scene.image.height,
                                                   scene.image.width, options.heatmap);
            rec.heatmap_iou = heatmap_iou(pred.heatmap, gt_hm, options.iou_threshold);
            sum_iou += rec.heatmap_iou;
            ++iou_scenes;
        }
        report.per_scene.push_back(std::move(rec));
    }

    report.mean_matched_distance_um = matched_total > 0 ? sum_dist / matched_total : 0.0;
    report.mean_squared_distance_um2 = matched_total > 0 ? sum_sq / matched_total : 0.0;
    report.heatmap_iou = iou_scenes > 0 ? sum_iou / iou_scenes
                                        : std::numeric_limits<double>::quiet_NaN();
    for (double t : thresholds_um)
        report.accuracy_at[t] = 100.0 * correct[t] / static_cast<double>(total_true);
    return report;
}

LatencyReport benchmark_inference(LocalizerModel& model, int batch_size, int iterations,
                                  int warmup) {
    if (iterations < 1) throw std::invalid_argument("benchmark_inference: iterations must be >= 1");
    if (warmup < 0) throw std::invalid_argument("benchmark_inference: warmup must be >= 0");
    if (batch_size < 1) throw std::invalid_argument("benchmark_inference: batch_size must be >= 1");

    model.set_training(false);
    const int S = model.image_size;
    nn::Tensor batch({batch_size, 1, S, S});
    Rng rng(0xbe9cc);
    for (int64_t i = 0; i < batch.numel(); ++i)
        batch[i] = static_cast<float>(rng.uniform());

    auto run_once = [&]() {
        nn::Tensor hm = model.encoder->forward(batch);
        nn::Tensor coords = model.decoder->forward(hm);
        (void)coords;
    };
    // CPU backend executes synchronously; this barrier is where a device
    // queue flush would go.
    auto device_sync = []() {};

    for (int i = 0; i < warmup; ++i) run_once();

    LatencyReport report;
    report.batch_size = batch_size;
    report.iterations = iterations;
    report.warmup_iterations = warmup;
    if (const char* dev = std::getenv("PIPETTELOC_DEVICE")) report.device_label = dev;

    using clock = std::chrono::steady_clock;
    for (int i = 0; i < iterations; ++i) {
        device_sync();
        const auto t0 = clock::now();
        run_once();
        device_sync();
        const auto t1 = clock::now();
        report.samples_seconds.push_back(std::chrono::duration<double>(t1 - t0).count());
    }
    double sum = 0.0;
    for (double s : report.samples_seconds) sum += s;
    report.mean_seconds_per_image = sum / iterations / batch_size;
    return report;
}

namespace {

void put_pixel(OverlayImage& img, int x, int y, uint8_t r, uint8_t g, uint8_t b) {
    if (x < 0 || y < 0 || x >= img.width || y >= img.height) return;
    const size_t i = (static_cast<size_t>(y) * img.width + x) * 3;
    img.rgb[i] = r;
    img.rgb[i + 1] = g;
    img.rgb[i + 2] = b;
}

void draw_dot(OverlayImage& img, double cx, double cy, int radius, uint8_t r, uint8_t g,
              uint8_t b) {
    const int x0 = static_cast<int>(std::lround(cx)), y0 = static_cast<int>(std::lround(cy));
    for (int dy = -radius; dy <= radius; ++dy)
        for (int dx = -radius; dx <= radius; ++dx)
            if (dx * dx + dy * dy <= radius * radius) put_pixel(img, x0 + dx, y0 + dy, r, g, b);
}

void draw_cross(OverlayImage& img, double cx, double cy, int arm, uint8_t r, uint8_t g,
                uint8_t b) {
    const int x0 = static_cast<int>(std::lround(cx)), y0 = static_cast<int>(std::lround(cy));
    for (int d = -arm; d <= arm; ++d) {
        put_pixel(img, x0 + d, y0 + d, r, g, b);
        put_pixel(img, x0 + d, y0 - d, r, g, b);
    }
}

}  // namespace

OverlayImage render_overlay(const LabeledScene& scene, const Prediction& prediction,
                            double um_per_pixel, double correct_threshold_um) {
    const int H = scene.image.height, W = scene.image.width;
    OverlayImage img;
    img.height = H;
    img.width = 2 * W;
    img.rgb.assign(static_cast<size_t>(H) * 2 * W * 3, 0);

    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            const auto v = static_cast<uint8_t>(std::lround(scene.image.at(y, x) * 255.0));
            put_pixel(img, x, y, v, v, v);
            const double hv = std::clamp(prediction.heatmap.at(y, x), 0.0, 1.0);
            const auto h = static_cast<uint8_t>(std::lround(hv * 255.0));
            put_pixel(img, W + x, y, h, h, h);
        }
    }

    // Ground truth in green; matched predictions colored by correctness.
    // Without ground truth (plain inference) all predictions are drawn neutral.
    for (const Vec2& t : scene.tips) draw_dot(img, t.x, t.y, 2, 0, 255, 0);
    if (scene.tips.empty()) {
        for (const Vec2& t : prediction.tips) draw_cross(img, t.x, t.y, 4, 64, 64, 255);
        return img;
    }
    const Assignment a = hungarian(cost_matrix(prediction.tips, scene.tips));
    for (const auto& [pi, ti] : a.pairs) {
        const double d = euclidean(prediction.tips[pi], scene.tips[ti]) * um_per_pixel;
        if (d <= correct_threshold_um)
            draw_cross(img, prediction.tips[pi].x, prediction.tips[pi].y, 4, 64, 64, 255);
        else
            draw_cross(img, prediction.tips[pi].x, prediction.tips[pi].y, 4, 255, 64, 64);
    }
    return img;
}

void write_overlay_png(const OverlayImage& overlay, const std::string& path) {
    write_png_rgb8(path, overlay.rgb, overlay.height, overlay.width);
}

void save_eval_report(const EvalReport& report, const std::string& path) {
    nlohmann::json acc = nlohmann::json::object();
    for (const auto& [t, pct] : report.accuracy_at) {
        char key[32];
        std::snprintf(key, sizeof(key), "%g", t);
        acc[key] = pct;
    }
    nlohmann::json per_scene = nlohmann::json::array();
    for (const PerSceneRecord& r : report.per_scene)
        per_scene.push_back({{"id", r.id},
                             {"n_true", r.n_true},
                             {"matched_distances_um", r.matched_distances_um},
                             {"heatmap_iou", r.heatmap_iou}});
    nlohmann::json root = {{"format", "pipetteloc-eval-report"},
                           {"mean_matched_distance_um", report.mean_matched_distance_um},
                           {"mean_squared_distance_um2", report.mean_squared_distance_um2},
                           {"accuracy_at", acc},
                           {"heatmap_iou", report.heatmap_iou},
                           {"um_per_pixel", report.um_per_pixel},
                           {"per_scene", per_scene}};
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_eval_report: cannot write " + path);
    out << root.dump(2) << "\n";
}

void save_latency_report(const LatencyReport& report, const std::string& path) {
    nlohmann::json root = {{"format", "pipetteloc-latency-report"},
                           {"mean_seconds_per_image", report.mean_seconds_per_image},
                           {"batch_size", report.batch_size},
                           {"iterations", report.iterations},
                           {"warmup_iterations", report.warmup_iterations},
                           {"device_label", report.device_label},
                           {"samples_seconds", report.samples_seconds}};
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_latency_report: cannot write " + path);
    out << root.dump(2) << "\n";
}

}  // namespace pipetteloc
