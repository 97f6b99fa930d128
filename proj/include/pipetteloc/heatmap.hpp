#pragma once

#include "pipetteloc/types.hpp"

namespace pipetteloc {

using Heatmap = ImageGrid;

enum class ClampMode { clamp_to_one };

struct HeatmapConfig {
    double sigma = 10.0;
    ClampMode clamp_mode = ClampMode::clamp_to_one;
};

// Ground-truth heatmap: per-pixel min(1, sum_i exp(-((x-xi)^2+(y-yi)^2)/(2 sigma^2)))
// sampled at integer pixel centers. Throws on an empty tip list, out-of-bounds
// tips or sigma <= 0.
Heatmap gaussian_heatmap(const std::vector<Vec2>& tips, int height, int width,
                         const HeatmapConfig& config = {});

// IoU of the binary masks {pred >= t} and {truth >= t}; 1.0 when both masks
// are empty. Throws on shape mismatch or threshold outside (0,1).
double heatmap_iou(const Heatmap& pred, const Heatmap& truth, double binarize_threshold);

// 8-bit export for visual inspection (value*255 rounded).
std::vector<uint8_t> heatmap_to_u8(const Heatmap& map);

}  // namespace pipetteloc
