#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "pipetteloc/enhancer.hpp"
#include "pipetteloc/heatmap.hpp"
#include "pipetteloc/localizer.hpp"
#include "pipetteloc/losses.hpp"
#include "pipetteloc/synthdata.hpp"
#include "pipetteloc/trainer.hpp"

namespace pipetteloc {

// Merged configuration for every subcommand: JSON file plus CLI overrides.
// Unknown keys are rejected with their full key path; every field is
// validated against its module's invariants at load time.
struct RunConfig {
    uint64_t seed = 0;
    SceneConfig scene;
    HeatmapConfig heatmap;
    double iou_threshold = 0.5;
    LossConfig loss;
    EncoderConfig encoder;
    DecoderConfig decoder;
    TrainConfig train;
    GanConfig gan;
    std::vector<double> eval_thresholds_um = {3.0, 5.0, 10.0};

    static RunConfig defaults();
    static RunConfig from_json(const nlohmann::json& j);
    static RunConfig load_file(const std::string& path);

    nlohmann::json to_json() const;
    void validate() const;

    // Desk-scale preset: 64 px scenes, depth-2 encoder, narrow decoder.
    void apply_small_preset();

    // Keeps derived invariants in sync (decoder output scale == image size,
    // trainer heatmap/loss settings).
    void finalize();
};

}  // namespace pipetteloc
