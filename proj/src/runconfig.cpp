#include "pipetteloc/runconfig.hpp"

#include <fstream>
#include <set>

namespace pipetteloc {

using nlohmann::json;

namespace {

void reject_unknown(const json& obj, const std::set<std::string>& known, const std::string& path) {
    for (const auto& [key, _] : obj.items())
        if (!known.count(key))
            throw std::invalid_argument("config: unknown key " +
                                        (path.empty() ? key : path + "." + key));
}

template <typename T>
void get_if(const json& obj, const char* key, T& dst) {
    if (obj.contains(key)) dst = obj.at(key).get<T>();
}

}  // namespace

RunConfig RunConfig::defaults() {
    RunConfig cfg;
    cfg.finalize();
    return cfg;
}

void RunConfig::finalize() {
    decoder.output_scale = scene.image_size;
    train.heatmap = heatmap;
    train.loss = loss;
    if (train.seed == 0) train.seed = seed;
    if (gan.seed == 0) gan.seed = seed;
}

void RunConfig::validate() const {
    scene.validate();
    if (heatmap.sigma <= 0.0) throw std::invalid_argument("config: heatmap.sigma must be > 0");
    if (iou_threshold <= 0.0 || iou_threshold >= 1.0)
        throw std::invalid_argument("config: heatmap.iou_threshold must lie in (0,1)");
    if (loss.alpha <= 0.0 || loss.alpha >= 1.0)
        throw std::invalid_argument("config: loss.alpha must lie in (0,1)");
    if (loss.dice_smoothing <= 0.0)
        throw std::invalid_argument("config: loss.dice_smoothing must be > 0");
    encoder.validate(scene.image_size);
    decoder.validate();
    if (decoder.output_scale != scene.image_size)
        throw std::invalid_argument("config: decoder.output_scale must equal scene.image_size");
    train.validate();
    gan.validate();
    if (eval_thresholds_um.empty())
        throw std::invalid_argument("config: eval.thresholds_um must be non-empty");
    for (double t : eval_thresholds_um)
        if (t <= 0.0) throw std::invalid_argument("config: eval.thresholds_um must be positive");
}

void RunConfig::apply_small_preset() {
    scene.image_size = 64;
    encoder.patch_size = 8;
    encoder.depth = 2;
    encoder.embed_dim = 64;
    encoder.heads = 4;
    encoder.head_channels = 64;
    decoder.residual_depth = 10;
    decoder.base_width = 16;
    decoder.stem = "compact";
    decoder.final_pool = 4;
    heatmap.sigma = 5.0;
    finalize();
}

RunConfig RunConfig::from_json(const json& j) {
    RunConfig cfg;
    reject_unknown(j, {"seed", "scene", "heatmap", "loss", "encoder", "decoder", "train", "gan",
                       "eval"},
                   "");
    get_if(j, "seed", cfg.seed);

    if (j.contains("scene")) {
        const json& s = j.at("scene");
        reject_unknown(s,
                       {"image_size", "pipette_count_min", "pipette_count_max",
                        "taper_angle_min_deg", "taper_angle_max_deg", "tip_brightness", "noise",
                        "um_per_pixel", "rng_seed", "domain"},
                       "scene");
        get_if(s, "image_size", cfg.scene.image_size);
        get_if(s, "pipette_count_min", cfg.scene.pipette_count_min);
        get_if(s, "pipette_count_max", cfg.scene.pipette_count_max);
        get_if(s, "taper_angle_min_deg", cfg.scene.taper_angle_min_deg);
        get_if(s, "taper_angle_max_deg", cfg.scene.taper_angle_max_deg);
        get_if(s, "tip_brightness", cfg.scene.tip_brightness);
        get_if(s, "um_per_pixel", cfg.scene.um_per_pixel);
        get_if(s, "rng_seed", cfg.scene.rng_seed);
        if (s.contains("domain"))
            cfg.scene.domain = domain_from_string(s.at("domain").get<std::string>());
        if (s.contains("noise")) {
            const json& n = s.at("noise");
            reject_unknown(n, {"background_cell_blob_density", "speckle_std", "vignette_strength"},
                           "scene.noise");
            get_if(n, "background_cell_blob_density",
                   cfg.scene.noise_profile.background_cell_blob_density);
            get_if(n, "speckle_std", cfg.scene.noise_profile.speckle_std);
            get_if(n, "vignette_strength", cfg.scene.noise_profile.vignette_strength);
        }
    }
    if (j.contains("heatmap")) {
        const json& h = j.at("heatmap");
        reject_unknown(h, {"sigma", "iou_threshold"}, "heatmap");
        get_if(h, "sigma", cfg.heatmap.sigma);
        get_if(h, "iou_threshold", cfg.iou_threshold);
    }
    if (j.contains("loss")) {
        const json& l = j.at("loss");
        reject_unknown(l, {"alpha", "dice_smoothing"}, "loss");
        get_if(l, "alpha", cfg.loss.alpha);
        get_if(l, "dice_smoothing", cfg.loss.dice_smoothing);
    }
    if (j.contains("encoder")) {
        const json& e = j.at("encoder");
        reject_unknown(e, {"patch_size", "depth", "embed_dim", "heads", "head_channels",
                           "mlp_ratio"},
                       "encoder");
        get_if(e, "patch_size", cfg.encoder.patch_size);
        get_if(e, "depth", cfg.encoder.depth);
        get_if(e, "embed_dim", cfg.encoder.embed_dim);
        get_if(e, "heads", cfg.encoder.heads);
        get_if(e, "head_channels", cfg.encoder.head_channels);
        get_if(e, "mlp_ratio", cfg.encoder.mlp_ratio);
    }
    if (j.contains("decoder")) {
        const json& d = j.at("decoder");
        reject_unknown(d, {"residual_depth", "base_width", "max_tips", "stem", "final_pool"},
                       "decoder");
        get_if(d, "residual_depth", cfg.decoder.residual_depth);
        get_if(d, "base_width", cfg.decoder.base_width);
        get_if(d, "max_tips", cfg.decoder.max_tips);
        get_if(d, "stem", cfg.decoder.stem);
        get_if(d, "final_pool", cfg.decoder.final_pool);
    }
    if (j.contains("train")) {
        const json& t = j.at("train");
        reject_unknown(t,
                       {"batch_size", "validation_fraction", "augmentation", "stages", "seed",
                        "checkpoint_dir"},
                       "train");
        get_if(t, "batch_size", cfg.train.batch_size);
        get_if(t, "validation_fraction", cfg.train.validation_fraction);
        get_if(t, "seed", cfg.train.seed);
        get_if(t, "checkpoint_dir", cfg.train.checkpoint_dir);
        if (t.contains("augmentation")) {
            const json& a = t.at("augmentation");
            reject_unknown(a, {"horizontal_flip", "vertical_flip", "scale_min", "scale_max"},
                           "train.augmentation");
            get_if(a, "horizontal_flip", cfg.train.augmentation.horizontal_flip);
            get_if(a, "vertical_flip", cfg.train.augmentation.vertical_flip);
            get_if(a, "scale_min", cfg.train.augmentation.scale_min);
            get_if(a, "scale_max", cfg.train.augmentation.scale_max);
        }
        if (t.contains("stages")) {
            const json& stages = t.at("stages");
            if (!stages.is_array() || stages.size() != 3)
                throw std::invalid_argument("config: train.stages must list exactly 3 stages");
            for (size_t i = 0; i < 3; ++i) {
                const json& s = stages[i];
                reject_unknown(
                    s, {"name", "epochs", "learning_rate", "plateau_patience", "plateau_factor"},
                    "train.stages[" + std::to_string(i) + "]");
                StageSpec& spec = cfg.train.stages[i];
                if (s.contains("name"))
                    spec.name = stage_kind_from_string(s.at("name").get<std::string>());
                get_if(s, "epochs", spec.epochs);
                get_if(s, "learning_rate", spec.learning_rate);
                get_if(s, "plateau_patience", spec.plateau_patience);
                get_if(s, "plateau_factor", spec.plateau_factor);
            }
        }
    }
    if (j.contains("gan")) {
        const json& g = j.at("gan");
        reject_unknown(g,
                       {"base_channels", "res_blocks", "cycle_weight", "lr", "epochs",
                        "decay_start", "batch_size", "checkpoint_every", "seed"},
                       "gan");
        get_if(g, "base_channels", cfg.gan.base_channels);
        get_if(g, "res_blocks", cfg.gan.res_blocks);
        get_if(g, "cycle_weight", cfg.gan.cycle_weight);
        get_if(g, "lr", cfg.gan.lr);
        get_if(g, "epochs", cfg.gan.epochs);
        get_if(g, "decay_start", cfg.gan.decay_start);
        get_if(g, "batch_size", cfg.gan.batch_size);
        get_if(g, "checkpoint_every", cfg.gan.checkpoint_every);
        get_if(g, "seed", cfg.gan.seed);
    }
    if (j.contains("eval")) {
        const json& e = j.at("eval");
        reject_unknown(e, {"thresholds_um"}, "eval");
        get_if(e, "thresholds_um", cfg.eval_thresholds_um);
    }
    cfg.finalize();
    cfg.validate();
    return cfg;
}

RunConfig RunConfig::load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("config: cannot open " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw std::runtime_error("config: invalid JSON in " + path + ": " + e.what());
    }
    return from_json(j);
}

nlohmann::json RunConfig::to_json() const {
    json stages = json::array();
    for (const StageSpec& s : train.stages)
        stages.push_back({{"name", to_string(s.name)},
                          {"epochs", s.epochs},
                          {"learning_rate", s.learning_rate},
                          {"plateau_patience", s.plateau_patience},
                          {"plateau_factor", s.plateau_factor}});
    return {
        {"seed", seed},
        {"scene",
         {{"image_size", scene.image_size},
          {"pipette_count_min", scene.pipette_count_min},
          {"pipette_count_max", scene.pipette_count_max},
          {"taper_angle_min_deg", scene.taper_angle_min_deg},
          {"taper_angle_max_deg", scene.taper_angle_max_deg},
          {"tip_brightness", scene.tip_brightness},
          {"um_per_pixel", scene.um_per_pixel},
          {"rng_seed", scene.rng_seed},
          {"domain", to_string(scene.domain)},
          {"noise",
           {{"background_cell_blob_density", scene.noise_profile.background_cell_blob_density},
            {"speckle_std", scene.noise_profile.speckle_std},
            {"vignette_strength", scene.noise_profile.vignette_strength}}}}},
        {"heatmap", {{"sigma", heatmap.sigma}, {"iou_threshold", iou_threshold}}},
        {"loss", {{"alpha", loss.alpha}, {"dice_smoothing", loss.dice_smoothing}}},
        {"encoder",
         {{"patch_size", encoder.patch_size},
          {"depth", encoder.depth},
          {"embed_dim", encoder.embed_dim},
          {"heads", encoder.heads},
          {"head_channels", encoder.head_channels},
          {"mlp_ratio", encoder.mlp_ratio}}},
        {"decoder",
         {{"residual_depth", decoder.residual_depth},
          {"base_width", decoder.base_width},
          {"max_tips", decoder.max_tips},
          {"stem", decoder.stem},
          {"final_pool", decoder.final_pool}}},
        {"train",
         {{"batch_size", train.batch_size},
          {"validation_fraction", train.validation_fraction},
          {"seed", train.seed},
          {"checkpoint_dir", train.checkpoint_dir},
          {"augmentation",
           {{"horizontal_flip", train.augmentation.horizontal_flip},
            {"vertical_flip", train.augmentation.vertical_flip},
            {"scale_min", train.augmentation.scale_min},
            {"scale_max", train.augmentation.scale_max}}},
          {"stages", stages}}},
        {"gan",
         {{"base_channels", gan.base_channels},
          {"res_blocks", gan.res_blocks},
          {"cycle_weight", gan.cycle_weight},
          {"lr", gan.lr},
          {"epochs", gan.epochs},
          {"decay_start", gan.decay_start},
          {"batch_size", gan.batch_size},
          {"checkpoint_every", gan.checkpoint_every},
          {"seed", gan.seed}}},
        {"eval", {{"thresholds_um", eval_thresholds_um}}},
    };
}

}  // namespace pipetteloc
