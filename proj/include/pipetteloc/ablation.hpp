#pragma once

#include <optional>
#include <string>
#include <vector>

#include "pipetteloc/runconfig.hpp"
#include "pipetteloc/types.hpp"

namespace pipetteloc {

// One row of the component-ablation table. Rows without a coarse learner do
// not predict heatmaps, so their IoU is absent.
struct AblationRow {
    bool gan = true;
    bool coarse_learner = false;
    bool finer_learner = false;
    std::optional<double> iou;
    double mean_matched_distance_px = 0.0;
    double acc_at_10px = 0.0;
    std::string note;
};

struct AblationTable {
    std::vector<AblationRow> rows;  // always 4, fixed order
};

// Trains and evaluates the four configurations on a deterministic split of
// `dataset`, with equal per-row epoch budgets taken from config.train.
// Rows 1 and 3 use documented stand-ins for the missing coarse learner:
// a shallow direct regression head, and the finer decoder fed the raw image.
AblationTable run_ablation(const std::vector<LabeledScene>& dataset, const RunConfig& config);

void save_ablation_table(const AblationTable& table, const std::string& path);

// Iterative peak extraction with radius suppression; used by the
// coarse-learner-only row to read tips straight off the heatmap.
std::vector<Vec2> heatmap_peaks(const Heatmap& map, int count, double suppression_radius);

}  // namespace pipetteloc
