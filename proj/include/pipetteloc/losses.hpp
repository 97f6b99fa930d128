#pragma once

#include "pipetteloc/assignment.hpp"
#include "pipetteloc/heatmap.hpp"

namespace pipetteloc {

enum class DistanceReduction { mean_over_matched };

struct LossConfig {
    double alpha = 0.15;
    double dice_smoothing = 1e-6;
    DistanceReduction distance_reduction = DistanceReduction::mean_over_matched;
};

// Soft Dice with squared-sum denominator:
//   1 - (2*sum(p*q) + eps) / (sum(p^2) + sum(q^2) + eps).
double dice_loss(const Heatmap& pred, const Heatmap& truth, double smoothing = 1e-6);

// d(dice_loss)/d(pred), same shape as pred.
Heatmap dice_loss_grad(const Heatmap& pred, const Heatmap& truth, double smoothing = 1e-6);

// Optimal assignment between the tip sets, then the mean Euclidean distance
// over matched pairs. The assignment is a constant for differentiation.
std::pair<double, Assignment> hungarian_loss(const std::vector<Vec2>& pred_tips,
                                             const std::vector<Vec2>& true_tips);

// Gradient of the matched mean distance w.r.t. pred_tips with the assignment
// frozen; unmatched predictions receive zero gradient.
std::vector<Vec2> hungarian_loss_grad(const std::vector<Vec2>& pred_tips,
                                      const std::vector<Vec2>& true_tips,
                                      const Assignment& assignment);

// Eq-style combination: dice + alpha * matched mean distance.
double total_loss(const Heatmap& pred_heatmap, const Heatmap& true_heatmap,
                  const std::vector<Vec2>& pred_tips, const std::vector<Vec2>& true_tips,
                  const LossConfig& config = {});

}  // namespace pipetteloc
