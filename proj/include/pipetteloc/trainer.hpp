#pragma once

#include <string>
#include <vector>

#include "pipetteloc/heatmap.hpp"
#include "pipetteloc/localizer.hpp"
#include "pipetteloc/losses.hpp"
#include "pipetteloc/rng.hpp"
#include "pipetteloc/types.hpp"

namespace pipetteloc {

enum class StageKind { encoder_only, decoder_only, joint };

std::string to_string(StageKind k);
StageKind stage_kind_from_string(const std::string& s);

struct StageSpec {
    StageKind name = StageKind::joint;
    int epochs = 0;
    double learning_rate = 1e-4;
    int plateau_patience = 20;
    double plateau_factor = 0.5;

    void validate() const;
};

struct AugmentationConfig {
    bool vertical_flip = true;
    bool horizontal_flip = true;
    double scale_min = 0.9;
    double scale_max = 1.1;
};

struct TrainConfig {
    int batch_size = 32;
    std::vector<StageSpec> stages = {
        {StageKind::encoder_only, 50, 1e-4, 20, 0.5},
        {StageKind::decoder_only, 50, 1e-3, 20, 0.5},
        {StageKind::joint, 100, 1e-4, 20, 0.5},
    };
    AugmentationConfig augmentation;
    double validation_fraction = 0.1;
    uint64_t seed = 0;
    HeatmapConfig heatmap;
    LossConfig loss;
    std::string checkpoint_dir;  // stage-boundary checkpoints when non-empty

    void validate() const;
};

// Deterministic augmentation primitives. Tips and image move together;
// ground-truth heatmaps must be regenerated afterwards.
LabeledScene flip_horizontal(const LabeledScene& scene);
LabeledScene flip_vertical(const LabeledScene& scene);
LabeledScene scale_about_center(const LabeledScene& scene, double factor);

// Random flips (p=0.5 each) plus a uniform scale draw from the config range.
LabeledScene augment(const LabeledScene& scene, Rng& rng, const AugmentationConfig& cfg = {});

struct EpochRecord {
    std::string stage;
    int epoch = 0;  // 1-based within the stage
    double lr = 0.0;
    double train_loss = 0.0;
    double val_loss = 0.0;
};

struct StageHistory {
    StageSpec spec;
    std::vector<EpochRecord> epochs;
};

struct TrainReport {
    std::vector<EpochRecord> epochs;
    double initial_val_total = 0.0;  // Eq-8-style total on the val split, before training
    double final_val_total = 0.0;
    size_t train_scenes = 0, val_scenes = 0;
};

// The learning rate in effect after observing `val_history`, as a pure
// function: halve whenever the loss fails to strictly improve for
// `patience` consecutive epochs; the counter resets on each halving.
double lr_from_history(double initial, const std::vector<double>& val_history, int patience,
                       double factor);

// One stage; frozen components keep bit-identical parameters. Stage losses:
// encoder_only trains on the heatmap loss alone, decoder_only on the matched
// coordinate loss (heatmaps flow through the frozen encoder), joint on the
// weighted combination.
StageHistory run_stage(LocalizerModel& model, const std::vector<LabeledScene>& train_scenes,
                       const std::vector<LabeledScene>& val_scenes, const StageSpec& stage,
                       const TrainConfig& config, int stage_index = 0);

// Deterministic split then the configured stages in order.
TrainReport train(LocalizerModel& model, const std::vector<LabeledScene>& dataset,
                  const TrainConfig& config);

void save_train_report(const TrainReport& report, const std::string& path);

// Split helper exposed for evaluation of the same held-out scenes.
void split_dataset(const std::vector<LabeledScene>& dataset, double validation_fraction,
                   uint64_t seed, std::vector<LabeledScene>& train_out,
                   std::vector<LabeledScene>& val_out);

}  // namespace pipetteloc
