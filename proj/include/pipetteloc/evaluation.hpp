#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "pipetteloc/heatmap.hpp"
#include "pipetteloc/localizer.hpp"
#include "pipetteloc/types.hpp"

namespace pipetteloc {

// Anything that maps a scene to (heatmap, tips). The localizer adapter is the
// production path; tests inject oracle/offset predictors.
using Predictor = std::function<Prediction(const LabeledScene&)>;

Predictor model_predictor(LocalizerModel& model);

struct PerSceneRecord {
    std::string id;
    int n_true = 0;
    std::vector<double> matched_distances_um;  // ordered by ground-truth tip index
    double heatmap_iou = 0.0;
};

struct EvalReport {
    double mean_matched_distance_um = 0.0;   // paper-parity "MSE" (distance units)
    double mean_squared_distance_um2 = 0.0;  // dimensionally honest companion
    std::map<double, double> accuracy_at;    // threshold um -> percentage
    double heatmap_iou = 0.0;                // mean over scenes
    double um_per_pixel = 1.0;
    std::vector<PerSceneRecord> per_scene;
};

struct EvalOptions {
    HeatmapConfig heatmap;            // ground-truth heatmap generation for IoU
    double iou_threshold = 0.5;
};

// Per scene: predict, Hungarian-match predictions against ground truth on the
// rectangular cost matrix (surplus predictions are ignored), convert matched
// pixel distances to micrometers. A ground-truth tip is correct at threshold
// e iff its matched distance <= e.
EvalReport evaluate(const Predictor& predict, const std::vector<LabeledScene>& dataset,
                    const std::vector<double>& thresholds_um, double um_per_pixel,
                    const EvalOptions& options = {});

struct LatencyReport {
    double mean_seconds_per_image = 0.0;
    int batch_size = 1;
    int iterations = 0;
    int warmup_iterations = 0;
    std::string device_label = "cpu";
    std::vector<double> samples_seconds;  // raw per-iteration wall-clock samples
};

// Warmup passes unmeasured, then `iterations` timed forward passes on a fixed
// synthetic batch. The device-synchronization contract (all queued work done
// before each clock read) is trivially met by the synchronous CPU backend.
LatencyReport benchmark_inference(LocalizerModel& model, int batch_size, int iterations,
                                  int warmup);

// Side-by-side overlay: scene with ground-truth and matched-prediction
// markers, predicted heatmap as the right panel. RGB rows, width doubled.
struct OverlayImage {
    int height = 0, width = 0;
    std::vector<uint8_t> rgb;
};

OverlayImage render_overlay(const LabeledScene& scene, const Prediction& prediction,
                            double um_per_pixel, double correct_threshold_um = 10.0);

void write_overlay_png(const OverlayImage& overlay, const std::string& path);

void save_eval_report(const EvalReport& report, const std::string& path);
void save_latency_report(const LatencyReport& report, const std::string& path);

}  // namespace pipetteloc
