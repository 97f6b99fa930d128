#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pipetteloc/types.hpp"

namespace pipetteloc {

struct NoiseProfile {
    double background_cell_blob_density = 2.0;  // blobs per kilopixel
    double speckle_std = 0.03;                  // additive intensity noise
    double vignette_strength = 0.25;            // 0 disables
};

struct SceneConfig {
    int image_size = 256;                  // pixels per side, >= 64, divisible by 16
    int pipette_count_min = 1;             // inclusive, within [1,4]
    int pipette_count_max = 4;
    double taper_angle_min_deg = 3.0;      // cone half-angle
    double taper_angle_max_deg = 8.0;
    double tip_brightness = 0.9;           // (0,1]
    NoiseProfile noise_profile;
    double um_per_pixel = 1.0;
    uint64_t rng_seed = 0;
    Domain domain = Domain::invivo_like;   // exvivo_like renders exactly one pipette

    void validate() const;                 // throws std::invalid_argument
};

// Deterministic function of (config, seed). Pipettes are bright tapered
// wedges entering from an image edge with a Gaussian glow at the tip;
// invivo_like scenes add cell-like blobs, speckle and vignetting.
// Intensities are quantized to the 8-bit grid so dataset round-trips are exact.
LabeledScene render_scene(const SceneConfig& config, uint64_t seed);

struct ManifestEntry {
    std::string id;
    std::vector<Vec2> tips;
    Domain domain = Domain::invivo_like;
    double um_per_pixel = 1.0;
};

struct DatasetManifest {
    std::vector<ManifestEntry> entries;
};

// Layout: <path>/images/<id>.png (8-bit grayscale) + <path>/labels.json.
DatasetManifest write_dataset(const std::vector<LabeledScene>& scenes, const std::string& path);

// Scenes in manifest order; validates per-scene invariants on load.
std::vector<LabeledScene> read_dataset(const std::string& path);

}  // namespace pipetteloc
