#include "pipetteloc/losses.hpp"

#include <cmath>

namespace pipetteloc {

namespace {

void check_shapes(const Heatmap& pred, const Heatmap& truth) {
    if (!pred.same_shape(truth)) throw std::invalid_argument("dice_loss: shape mismatch");
    if (pred.values.empty()) throw std::invalid_argument("dice_loss: empty heatmap");
}

}  // namespace

double dice_loss(const Heatmap& pred, const Heatmap& truth, double smoothing) {
    check_shapes(pred, truth);
    double pq = 0.0, pp = 0.0, qq = 0.0;
    for (size_t i = 0; i < pred.values.size(); ++i) {
        const double p = pred.values[i];
        const double q = truth.values[i];
        pq += p * q;
        pp += p * p;
        qq += q * q;
    }
    return 1.0 - (2.0 * pq + smoothing) / (pp + qq + smoothing);
}

Heatmap dice_loss_grad(const Heatmap& pred, const Heatmap& truth, double smoothing) {
    check_shapes(pred, truth);
    double pq = 0.0, pp = 0.0, qq = 0.0;
    for (size_t i = 0; i < pred.values.size(); ++i) {
        const double p = pred.values[i];
        const double q = truth.values[i];
        pq += p * q;
        pp += p * p;
        qq += q * q;
    }
    const double num = 2.0 * pq + smoothing;
    const double den = pp + qq + smoothing;
    Heatmap grad(pred.height, pred.width, 0.0);
    // d/dp_k [1 - num/den] = -(2*q_k*den - num*2*p_k) / den^2
    const double inv_den2 = 1.0 / (den * den);
    for (size_t i = 0; i < pred.values.size(); ++i) {
        grad.values[i] = -(2.0 * truth.values[i] * den - num * 2.0 * pred.values[i]) * inv_den2;
    }
    return grad;
}

std::pair<double, Assignment> hungarian_loss(const std::vector<Vec2>& pred_tips,
                                             const std::vector<Vec2>& true_tips) {
    if (pred_tips.empty() || true_tips.empty())
        throw std::invalid_argument("hungarian_loss: empty tip list");
    Assignment a = hungarian(cost_matrix(pred_tips, true_tips));
    const double mean = a.total_cost / static_cast<double>(a.pairs.size());
    return {mean, std::move(a)};
}

std::vector<Vec2> hungarian_loss_grad(const std::vector<Vec2>& pred_tips,
                                      const std::vector<Vec2>& true_tips,
                                      const Assignment& assignment) {
    std::vector<Vec2> grad(pred_tips.size());
    if (assignment.pairs.empty()) return grad;
    const double inv_n = 1.0 / static_cast<double>(assignment.pairs.size());
    for (const auto& [i, j] : assignment.pairs) {
        const double dx = pred_tips[i].x - true_tips[j].x;
        const double dy = pred_tips[i].y - true_tips[j].y;
        const double d = std::sqrt(dx * dx + dy * dy);
        if (d > 0.0) {
            grad[i].x = inv_n * dx / d;
            grad[i].y = inv_n * dy / d;
        }
        // d == 0: the distance is non-differentiable there; subgradient 0.
    }
    return grad;
}

double total_loss(const Heatmap& pred_heatmap, const Heatmap& true_heatmap,
                  const std::vector<Vec2>& pred_tips, const std::vector<Vec2>& true_tips,
                  const LossConfig& config) {
    if (config.alpha <= 0.0 || config.alpha >= 1.0)
        throw std::invalid_argument("total_loss: alpha must lie in (0,1)");
    const double dice = dice_loss(pred_heatmap, true_heatmap, config.dice_smoothing);
    const double hung = hungarian_loss(pred_tips, true_tips).first;
    return dice + config.alpha * hung;
}

}  // namespace pipetteloc
