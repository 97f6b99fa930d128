#include "pipetteloc/heatmap.hpp"

#include <cmath>

namespace pipetteloc {

Heatmap gaussian_heatmap(const std::vector<Vec2>& tips, int height, int width,
                         const HeatmapConfig& config) {
    if (tips.empty()) throw std::invalid_argument("gaussian_heatmap: empty tip list");
    if (config.sigma <= 0.0) throw std::invalid_argument("gaussian_heatmap: sigma must be > 0");
    if (height <= 0 || width <= 0)
        throw std::invalid_argument("gaussian_heatmap: non-positive grid size");
    for (const Vec2& t : tips) {
        if (t.x < 0.0 || t.x > width - 1 || t.y < 0.0 || t.y > height - 1)
            throw std::invalid_argument("gaussian_heatmap: tip out of bounds");
    }

    Heatmap map(height, width, 0.0);
    const double inv_two_sigma2 = 1.0 / (2.0 * config.sigma * config.sigma);
    // Separable evaluation: exp(-(dx^2+dy^2)/2s^2) == exp(-dx^2/2s^2)*exp(-dy^2/2s^2).
    std::vector<double> ex(width), ey(height);
    for (const Vec2& t : tips) {
        for (int x = 0; x < width; ++x) {
            const double dx = x - t.x;
            ex[x] = std::exp(-dx * dx * inv_two_sigma2);
        }
        for (int y = 0; y < height; ++y) {
            const double dy = y - t.y;
            ey[y] = std::exp(-dy * dy * inv_two_sigma2);
        }
        for (int y = 0; y < height; ++y) {
            double* row = map.values.data() + static_cast<size_t>(y) * width;
            const double w = ey[y];
            for (int x = 0; x < width; ++x) row[x] += w * ex[x];
        }
    }
    for (double& v : map.values) v = std::min(1.0, v);
    return map;
}

double heatmap_iou(const Heatmap& pred, const Heatmap& truth, double binarize_threshold) {
    if (!pred.same_shape(truth)) throw std::invalid_argument("heatmap_iou: shape mismatch");
    if (binarize_threshold <= 0.0 || binarize_threshold >= 1.0)
        throw std::invalid_argument("heatmap_iou: threshold must lie in (0,1)");
    size_t inter = 0, uni = 0;
    for (size_t i = 0; i < pred.values.size(); ++i) {
        const bool a = pred.values[i] >= binarize_threshold;
        const bool b = truth.values[i] >= binarize_threshold;
        inter += (a && b);
        uni += (a || b);
    }
    if (uni == 0) return 1.0;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

std::vector<uint8_t> heatmap_to_u8(const Heatmap& map) {
    std::vector<uint8_t> out(map.values.size());
    for (size_t i = 0; i < out.size(); ++i) {
        double v = std::min(1.0, std::max(0.0, map.values[i]));
        out[i] = static_cast<uint8_t>(std::lround(v * 255.0));
    }
    return out;
}

}  // namespace pipetteloc
