#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>

#include "pipetteloc/synthdata.hpp"

namespace fs = std::filesystem;
using namespace pipetteloc;

namespace {

SceneConfig small_config() {
    SceneConfig cfg;
    cfg.image_size = 64;
    cfg.pipette_count_min = 1;
    cfg.pipette_count_max = 3;
    return cfg;
}

double median_intensity(const ImageGrid& img) {
    std::vector<double> v = img.values;
    std::nth_element(v.begin(), v.begin() + v.size() / 2, v.end());
    return v[v.size() / 2];
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("forced single-pipette count") {
    SceneConfig cfg = small_config();
    cfg.pipette_count_min = cfg.pipette_count_max = 1;
    const LabeledScene scene = render_scene(cfg, 42);
    CHECK(scene.tips.size() == 1);
}

TEST_CASE("rendering is deterministic in (config, seed)") {
    const SceneConfig cfg = small_config();
    const LabeledScene a = render_scene(cfg, 7);
    const LabeledScene b = render_scene(cfg, 7);
    REQUIRE(a.tips.size() == b.tips.size());
    for (size_t i = 0; i < a.tips.size(); ++i) {
        CHECK(a.tips[i].x == b.tips[i].x);
        CHECK(a.tips[i].y == b.tips[i].y);
    }
    CHECK(a.image.values == b.image.values);

    const LabeledScene c = render_scene(cfg, 8);
    CHECK(a.image.values != c.image.values);
}

TEST_CASE("zero-noise ex-vivo scene has an untouched zero background") {
    SceneConfig cfg = small_config();
    cfg.domain = Domain::exvivo_like;
    cfg.noise_profile = {0.0, 0.0, 0.0};
    const LabeledScene scene = render_scene(cfg, 3);
    REQUIRE(scene.tips.size() == 1);

    // Background dominates and is exactly zero.
    const size_t zeros = std::count(scene.image.values.begin(), scene.image.values.end(), 0.0);
    CHECK(zeros > scene.image.values.size() / 2);

    // Every nonzero pixel belongs to the single rendered pipette: one
    // 8-connected component that contains the tip.
    const int H = scene.image.height, W = scene.image.width;
    std::vector<int> label(static_cast<size_t>(H) * W, 0);
    int components = 0;
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            if (scene.image.at(y, x) == 0.0 || label[y * W + x]) continue;
            ++components;
            std::vector<std::pair<int, int>> stack = {{y, x}};
            label[y * W + x] = components;
            while (!stack.empty()) {
                const auto [cy, cx] = stack.back();
                stack.pop_back();
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int ny = cy + dy, nx = cx + dx;
                        if (ny < 0 || nx < 0 || ny >= H || nx >= W) continue;
                        if (scene.image.at(ny, nx) == 0.0 || label[ny * W + nx]) continue;
                        label[ny * W + nx] = components;
                        stack.push_back({ny, nx});
                    }
            }
        }
    CHECK(components == 1);
    const int ty = static_cast<int>(std::lround(scene.tips[0].y));
    const int tx = static_cast<int>(std::lround(scene.tips[0].x));
    CHECK(label[ty * W + tx] == 1);
}

TEST_CASE("tips sit on bright apexes in noisy scenes") {
    SceneConfig cfg = small_config();
    cfg.pipette_count_max = 4;
    for (uint64_t seed : {1ULL, 2ULL, 3ULL, 4ULL, 5ULL}) {
        const LabeledScene scene = render_scene(cfg, seed);
        const double median = median_intensity(scene.image);
        for (const Vec2& tip : scene.tips) {
            double brightest = 0.0;
            for (int dy = -5; dy <= 5; ++dy)
                for (int dx = -5; dx <= 5; ++dx) {
                    const int y = static_cast<int>(std::lround(tip.y)) + dy;
                    const int x = static_cast<int>(std::lround(tip.x)) + dx;
                    if (y < 0 || x < 0 || y >= scene.image.height || x >= scene.image.width)
                        continue;
                    if (dx * dx + dy * dy > 25) continue;
                    brightest = std::max(brightest, scene.image.at(y, x));
                }
            CHECK(brightest > median);
        }
    }
}

TEST_CASE("pairwise tip separation is at least 20 px") {
    SceneConfig cfg = small_config();
    cfg.pipette_count_min = cfg.pipette_count_max = 3;
    for (uint64_t seed = 0; seed < 10; ++seed) {
        const LabeledScene scene = render_scene(cfg, seed);
        for (size_t i = 0; i < scene.tips.size(); ++i)
            for (size_t j = i + 1; j < scene.tips.size(); ++j)
                CHECK(euclidean(scene.tips[i], scene.tips[j]) >= 20.0);
    }
}

TEST_CASE("config invariants are enforced") {
    SceneConfig cfg = small_config();
    cfg.image_size = 60;  // not divisible by 16
    CHECK_THROWS_AS(render_scene(cfg, 0), std::invalid_argument);
    cfg = small_config();
    cfg.image_size = 48;  // < 64
    CHECK_THROWS_AS(render_scene(cfg, 0), std::invalid_argument);
    cfg = small_config();
    cfg.pipette_count_max = 5;
    CHECK_THROWS_AS(render_scene(cfg, 0), std::invalid_argument);
    cfg = small_config();
    cfg.pipette_count_min = 0;
    CHECK_THROWS_AS(render_scene(cfg, 0), std::invalid_argument);
    cfg = small_config();
    cfg.um_per_pixel = 0.0;
    CHECK_THROWS_AS(render_scene(cfg, 0), std::invalid_argument);
}

TEST_CASE("dataset round-trip is exact") {
    TempDir dir("pipetteloc_synth_roundtrip");
    SceneConfig cfg = small_config();
    std::vector<LabeledScene> scenes;
    for (uint64_t s = 0; s < 3; ++s) scenes.push_back(render_scene(cfg, s));

    const DatasetManifest manifest = write_dataset(scenes, dir.path.string());
    CHECK(manifest.entries.size() == 3);

    const std::vector<LabeledScene> loaded = read_dataset(dir.path.string());
    REQUIRE(loaded.size() == 3);
    for (size_t i = 0; i < 3; ++i) {
        CHECK(loaded[i].image.values == scenes[i].image.values);  // bit-exact
        REQUIRE(loaded[i].tips.size() == scenes[i].tips.size());
        for (size_t t = 0; t < scenes[i].tips.size(); ++t) {
            CHECK(std::abs(loaded[i].tips[t].x - scenes[i].tips[t].x) <= 1e-9);
            CHECK(std::abs(loaded[i].tips[t].y - scenes[i].tips[t].y) <= 1e-9);
        }
        CHECK(loaded[i].domain == scenes[i].domain);
        CHECK(loaded[i].um_per_pixel == scenes[i].um_per_pixel);
    }
}

TEST_CASE("empty scene list produces an empty manifest without error") {
    TempDir dir("pipetteloc_synth_empty");
    const DatasetManifest manifest = write_dataset({}, dir.path.string());
    CHECK(manifest.entries.empty());
    CHECK(read_dataset(dir.path.string()).empty());
}

TEST_CASE("missing image file is reported by name") {
    TempDir dir("pipetteloc_synth_missing");
    std::vector<LabeledScene> scenes = {render_scene(small_config(), 1)};
    write_dataset(scenes, dir.path.string());
    fs::remove(dir.path / "images" / "scene_00000.png");
    try {
        read_dataset(dir.path.string());
        FAIL("expected an error for the missing image");
    } catch (const std::runtime_error& e) {
        CHECK(std::string(e.what()).find("scene_00000.png") != std::string::npos);
    }
}

TEST_CASE("out-of-bounds tips in the label file are rejected") {
    TempDir dir("pipetteloc_synth_oob");
    std::vector<LabeledScene> scenes = {render_scene(small_config(), 1)};
    write_dataset(scenes, dir.path.string());
    // Tamper: tip far outside the 64 px image.
    std::ifstream in(dir.path / "labels.json");
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();
    const std::string tip = "\"tips\": [";
    const size_t pos = text.find(tip);
    REQUIRE(pos != std::string::npos);
    text.replace(pos, tip.size(), "\"tips\": [[999.0, 10.0], ");
    std::ofstream out(dir.path / "labels.json");
    out << text;
    out.close();
    CHECK_THROWS_AS(read_dataset(dir.path.string()), std::runtime_error);
}

TEST_CASE("manifest-only directory fails cleanly") {
    TempDir dir("pipetteloc_synth_manifest_only");
    CHECK_THROWS_AS(read_dataset(dir.path.string()), std::runtime_error);

    std::ofstream out(dir.path / "labels.json");
    out << "{ not json";
    out.close();
    CHECK_THROWS_AS(read_dataset(dir.path.string()), std::runtime_error);
}
