#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "pipetteloc/cli.hpp"
#include "pipetteloc/runconfig.hpp"
#include "pipetteloc/synthdata.hpp"

namespace fs = std::filesystem;
using namespace pipetteloc;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("config round-trip is the identity on the effective configuration") {
    const RunConfig defaults = RunConfig::defaults();
    const nlohmann::json dumped = defaults.to_json();
    const RunConfig reloaded = RunConfig::from_json(dumped);
    CHECK(reloaded.to_json() == dumped);

    RunConfig small = RunConfig::defaults();
    small.apply_small_preset();
    const nlohmann::json small_json = small.to_json();
    CHECK(RunConfig::from_json(small_json).to_json() == small_json);
}

TEST_CASE("unknown keys are rejected with their path") {
    nlohmann::json j = RunConfig::defaults().to_json();
    j["train"]["augmentation"]["scale_mxn"] = 1.0;
    try {
        RunConfig::from_json(j);
        FAIL("expected rejection of the unknown key");
    } catch (const std::invalid_argument& e) {
        CHECK(std::string(e.what()).find("train.augmentation.scale_mxn") != std::string::npos);
    }

    nlohmann::json top = {{"sceen", nlohmann::json::object()}};
    CHECK_THROWS_AS(RunConfig::from_json(top), std::invalid_argument);
}

TEST_CASE("invalid field values are reported with their key") {
    nlohmann::json j = RunConfig::defaults().to_json();
    j["loss"]["alpha"] = 2.0;
    try {
        RunConfig::from_json(j);
        FAIL("expected validation failure");
    } catch (const std::invalid_argument& e) {
        CHECK(std::string(e.what()).find("alpha") != std::string::npos);
    }
}

TEST_CASE("small preset keeps derived invariants in sync") {
    RunConfig cfg = RunConfig::defaults();
    cfg.apply_small_preset();
    CHECK(cfg.scene.image_size == 64);
    CHECK(cfg.decoder.output_scale == 64);
    CHECK(cfg.encoder.depth == 2);
    cfg.validate();
}

TEST_CASE("synth subcommand writes the requested dataset") {
    TempDir dir("pipetteloc_cli_synth");
    const std::string out = (dir.path / "data").string();
    const int rc = dispatch({"pipetteloc", "synth", "--count", "10", "--out", out, "--seed", "1",
                             "--small"});
    REQUIRE(rc == 0);
    int images = 0;
    for (const auto& entry : fs::directory_iterator(fs::path(out) / "images")) {
        (void)entry;
        ++images;
    }
    CHECK(images == 10);
    CHECK(fs::exists(fs::path(out) / "labels.json"));
    CHECK(read_dataset(out).size() == 10);
}

TEST_CASE("synth respects the domain flag") {
    TempDir dir("pipetteloc_cli_synth_domain");
    const std::string out = (dir.path / "clean").string();
    REQUIRE(dispatch({"pipetteloc", "synth", "--count", "3", "--out", out, "--seed", "2",
                      "--small", "--domain", "exvivo_like"}) == 0);
    for (const LabeledScene& s : read_dataset(out)) {
        CHECK(s.domain == Domain::exvivo_like);
        CHECK(s.tips.size() == 1);
    }
}

TEST_CASE("unknown subcommands and flags exit nonzero") {
    CHECK(dispatch({"pipetteloc", "frobnicate"}) != 0);
    CHECK(dispatch({"pipetteloc", "synth", "--count", "1", "--out", "/tmp/x", "--bogus"}) != 0);
    CHECK(dispatch({"pipetteloc"}) != 0);  // a subcommand is required
}

TEST_CASE("config file feeds the pipeline and bad configs fail with a diagnostic") {
    TempDir dir("pipetteloc_cli_config");
    const std::string cfg_path = (dir.path / "cfg.json").string();
    {
        RunConfig cfg = RunConfig::defaults();
        cfg.apply_small_preset();
        std::ofstream out(cfg_path);
        out << cfg.to_json().dump(2);
    }
    const std::string data = (dir.path / "data").string();
    CHECK(dispatch({"pipetteloc", "synth", "--count", "2", "--out", data, "--config", cfg_path}) ==
          0);

    {
        std::ofstream out(cfg_path);
        out << R"({"loss": {"alpha": 5.0}})";
    }
    CHECK(dispatch({"pipetteloc", "synth", "--count", "2", "--out", data, "--config", cfg_path}) !=
          0);
}

TEST_CASE("infer prints tips for a rendered image") {
    TempDir dir("pipetteloc_cli_infer");
    const std::string data = (dir.path / "data").string();
    REQUIRE(dispatch({"pipetteloc", "synth", "--count", "1", "--out", data, "--seed", "3",
                      "--small"}) == 0);
    // Build a throwaway checkpoint.
    LocalizerModel model = LocalizerModel::small_preset(1);
    const std::string ckpt = (dir.path / "model.ckpt").string();
    model.save(ckpt);
    const std::string image = data + "/images/scene_00000.png";
    const std::string overlay = (dir.path / "overlay.png").string();
    CHECK(dispatch({"pipetteloc", "infer", "--image", image, "--ckpt", ckpt, "--overlay",
                    overlay}) == 0);
    CHECK(fs::exists(overlay));
}
