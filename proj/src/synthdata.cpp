#include "pipetteloc/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "pipetteloc/imageio.hpp"
#include "pipetteloc/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace pipetteloc {

std::string to_string(Domain d) {
    return d == Domain::invivo_like ? "invivo_like" : "exvivo_like";
}

Domain domain_from_string(const std::string& s) {
    if (s == "invivo_like") return Domain::invivo_like;
    if (s == "exvivo_like") return Domain::exvivo_like;
    throw std::invalid_argument("unknown domain tag: " + s);
}

void SceneConfig::validate() const {
    if (image_size < 64 || image_size % 16 != 0)
        throw std::invalid_argument("SceneConfig: image_size must be >= 64 and divisible by 16");
    if (pipette_count_min < 1 || pipette_count_max > 4 || pipette_count_min > pipette_count_max)
        throw std::invalid_argument("SceneConfig: pipette count range must lie within [1,4]");
    if (um_per_pixel <= 0.0) throw std::invalid_argument("SceneConfig: um_per_pixel must be > 0");
    if (tip_brightness <= 0.0 || tip_brightness > 1.0)
        throw std::invalid_argument("SceneConfig: tip_brightness must lie in (0,1]");
    if (taper_angle_min_deg <= 0.0 || taper_angle_max_deg < taper_angle_min_deg ||
        taper_angle_max_deg >= 45.0)
        throw std::invalid_argument("SceneConfig: taper angle range invalid");
    if (noise_profile.background_cell_blob_density < 0.0 || noise_profile.speckle_std < 0.0 ||
        noise_profile.vignette_strength < 0.0)
        throw std::invalid_argument("SceneConfig: noise profile values must be >= 0");
}

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kMinTipSeparation = 20.0;  // px, enforced during placement

struct Wedge {
    Vec2 tip;
    Vec2 entry;      // point on the image edge the shank comes from
    double half_angle_rad = 0.0;
    double brightness = 1.0;
};

// Additive splat of one wedge + tip glow. The wedge carries an intensity
// ramp rising toward the apex; the glow is cut at 3x its radius so untouched
// background stays exactly zero.
void splat_pipette(ImageGrid& img, const Wedge& w) {
    const double ax = w.entry.x - w.tip.x;
    const double ay = w.entry.y - w.tip.y;
    const double len = std::sqrt(ax * ax + ay * ay);
    const double ux = ax / len, uy = ay / len;
    const double tan_half = std::tan(w.half_angle_rad);
    const double glow_radius = 2.5;
    const double glow_cut = 3.0 * glow_radius;

    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            const double px = x - w.tip.x;
            const double py = y - w.tip.y;
            double v = 0.0;
            const double t = px * ux + py * uy;  // distance from apex along axis
            if (t >= 0.0 && t <= len) {
                const double perp = std::abs(px * uy - py * ux);
                const double half_width = 0.75 + t * tan_half;
                if (perp <= half_width) {
                    const double ramp = 0.35 + 0.65 * (1.0 - t / len);
                    const double edge = std::min(1.0, (half_width - perp) / 1.5 + 0.25);
                    v = w.brightness * 0.8 * ramp * edge;
                }
            }
            const double r2 = px * px + py * py;
            if (r2 <= glow_cut * glow_cut) {
                const double glow = w.brightness * std::exp(-r2 / (2.0 * glow_radius * glow_radius));
                v = std::max(v, glow);
            }
            if (v > 0.0) img.at(y, x) = std::min(1.0, img.at(y, x) + v);
        }
    }
}

Vec2 sample_edge_entry(Rng& rng, int size) {
    const int edge = rng.uniform_int(0, 3);
    const double u = rng.uniform(0.1, 0.9) * (size - 1);
    switch (edge) {
        case 0: return {u, 0.0};
        case 1: return {u, static_cast<double>(size - 1)};
        case 2: return {0.0, u};
        default: return {static_cast<double>(size - 1), u};
    }
}

void add_cell_blobs(ImageGrid& img, Rng& rng, double density_per_kilopixel) {
    const double kilopixels = img.size() / 1000.0;
    const int count = static_cast<int>(std::lround(density_per_kilopixel * kilopixels));
    for (int i = 0; i < count; ++i) {
        const double cx = rng.uniform(0.0, img.width - 1);
        const double cy = rng.uniform(0.0, img.height - 1);
        const double radius = rng.uniform(1.5, 5.0);
        const double amp = rng.uniform(0.08, 0.35);
        const double cut = 3.0 * radius;
        const int x0 = std::max(0, static_cast<int>(cx - cut));
        const int x1 = std::min(img.width - 1, static_cast<int>(cx + cut));
        const int y0 = std::max(0, static_cast<int>(cy - cut));
        const int y1 = std::min(img.height - 1, static_cast<int>(cy + cut));
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x) {
                const double dx = x - cx, dy = y - cy;
                const double g = amp * std::exp(-(dx * dx + dy * dy) / (2.0 * radius * radius));
                img.at(y, x) = std::min(1.0, img.at(y, x) + g);
            }
    }
}

}  // namespace

LabeledScene render_scene(const SceneConfig& config, uint64_t seed) {
    config.validate();
    Rng rng(Rng::mix(config.rng_seed, seed));
    const int size = config.image_size;

    LabeledScene scene;
    scene.image = ImageGrid(size, size, 0.0);
    scene.domain = config.domain;
    scene.um_per_pixel = config.um_per_pixel;

    const int count = config.domain == Domain::exvivo_like
                          ? 1
                          : rng.uniform_int(config.pipette_count_min, config.pipette_count_max);

    // Place tips with a minimum pairwise separation; restart the scene with a
    // fresh substream if a placement gets stuck.
    const double margin = std::max(8.0, size * 0.1);
    for (int attempt = 0;; ++attempt) {
        scene.tips.clear();
        bool ok = true;
        for (int i = 0; i < count && ok; ++i) {
            bool placed = false;
            for (int k = 0; k < 200; ++k) {
                Vec2 cand{rng.uniform(margin, size - 1 - margin),
                          rng.uniform(margin, size - 1 - margin)};
                bool far_enough = true;
                for (const Vec2& t : scene.tips)
                    if (euclidean(cand, t) < kMinTipSeparation) far_enough = false;
                if (far_enough) {
                    scene.tips.push_back(cand);
                    placed = true;
                    break;
                }
            }
            ok = placed;
        }
        if (ok) break;
        if (attempt > 50)
            throw std::runtime_error("render_scene: could not place tips with required separation");
    }

    for (const Vec2& tip : scene.tips) {
        Wedge w;
        w.tip = tip;
        w.entry = sample_edge_entry(rng, size);
        w.half_angle_rad =
            rng.uniform(config.taper_angle_min_deg, config.taper_angle_max_deg) * kPi / 180.0;
        w.brightness = config.tip_brightness;
        splat_pipette(scene.image, w);
    }

    if (config.domain == Domain::invivo_like) {
        const NoiseProfile& np = config.noise_profile;
        if (np.background_cell_blob_density > 0.0)
            add_cell_blobs(scene.image, rng, np.background_cell_blob_density);
        if (np.speckle_std > 0.0)
            for (double& v : scene.image.values)
                v = std::min(1.0, std::max(0.0, v + rng.normal(0.0, np.speckle_std)));
        if (np.vignette_strength > 0.0) {
            const double cx = (size - 1) / 2.0, cy = (size - 1) / 2.0;
            const double rmax2 = cx * cx + cy * cy;
            for (int y = 0; y < size; ++y)
                for (int x = 0; x < size; ++x) {
                    const double r2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
                    scene.image.at(y, x) *= 1.0 - np.vignette_strength * (r2 / rmax2);
                }
        }
    }

    // Quantize to the 8-bit grid so the PNG round-trip is bit-exact.
    for (double& v : scene.image.values)
        v = std::lround(std::min(1.0, std::max(0.0, v)) * 255.0) / 255.0;
    return scene;
}

namespace {

void validate_scene(const LabeledScene& scene, const std::string& context) {
    if (scene.tips.empty() || scene.tips.size() > 4)
        throw std::runtime_error(context + ": tip count must lie in [1,4]");
    for (const Vec2& t : scene.tips)
        if (t.x < 0.0 || t.x > scene.image.width - 1 || t.y < 0.0 || t.y > scene.image.height - 1)
            throw std::runtime_error(context + ": tip out of image bounds");
    for (double v : scene.image.values)
        if (v < 0.0 || v > 1.0) throw std::runtime_error(context + ": intensity outside [0,1]");
}

}  // namespace

DatasetManifest write_dataset(const std::vector<LabeledScene>& scenes, const std::string& path) {
    fs::create_directories(fs::path(path) / "images");

    DatasetManifest manifest;
    json scenes_json = json::array();
    for (size_t i = 0; i < scenes.size(); ++i) {
        const LabeledScene& s = scenes[i];
        char buf[32];
        std::snprintf(buf, sizeof(buf), "scene_%05zu", i);
        const std::string id = s.id.empty() ? buf : s.id;
        write_image((fs::path(path) / "images" / (id + ".png")).string(), s.image);

        json tips = json::array();
        for (const Vec2& t : s.tips) tips.push_back({t.x, t.y});
        scenes_json.push_back({{"id", id},
                               {"tips", tips},
                               {"domain", to_string(s.domain)},
                               {"um_per_pixel", s.um_per_pixel}});
        manifest.entries.push_back({id, s.tips, s.domain, s.um_per_pixel});
    }

    json root = {{"format", "pipetteloc-dataset"}, {"version", 1}, {"scenes", scenes_json}};
    std::ofstream out(fs::path(path) / "labels.json");
    if (!out) throw std::runtime_error("write_dataset: cannot write labels.json under " + path);
    out << root.dump(2) << "\n";
    if (!out) throw std::runtime_error("write_dataset: I/O failure writing labels.json");
    return manifest;
}

std::vector<LabeledScene> read_dataset(const std::string& path) {
    const fs::path labels = fs::path(path) / "labels.json";
    std::ifstream in(labels);
    if (!in) throw std::runtime_error("read_dataset: missing manifest " + labels.string());
    json root;
    try {
        in >> root;
    } catch (const json::exception& e) {
        throw std::runtime_error("read_dataset: corrupt labels.json: " + std::string(e.what()));
    }
    if (!root.contains("scenes") || !root["scenes"].is_array())
        throw std::runtime_error("read_dataset: labels.json has no scenes array");

    std::vector<LabeledScene> scenes;
    for (const json& entry : root["scenes"]) {
        LabeledScene s;
        try {
            s.id = entry.at("id").get<std::string>();
            for (const json& tip : entry.at("tips"))
                s.tips.push_back({tip.at(0).get<double>(), tip.at(1).get<double>()});
            s.domain = domain_from_string(entry.at("domain").get<std::string>());
            s.um_per_pixel = entry.at("um_per_pixel").get<double>();
        } catch (const json::exception& e) {
            throw std::runtime_error("read_dataset: corrupt label entry: " + std::string(e.what()));
        }
        const fs::path image_path = fs::path(path) / "images" / (s.id + ".png");
        if (!fs::exists(image_path))
            throw std::runtime_error("read_dataset: missing image file " + image_path.string());
        s.image = read_image(image_path.string());
        validate_scene(s, "read_dataset[" + s.id + "]");
        scenes.push_back(std::move(s));
    }
    return scenes;
}

}  // namespace pipetteloc
