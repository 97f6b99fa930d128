#include "pipetteloc/cli.hpp"

#include <filesystem>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "pipetteloc/ablation.hpp"
#include "pipetteloc/enhancer.hpp"
#include "pipetteloc/evaluation.hpp"
#include "pipetteloc/imageio.hpp"
#include "pipetteloc/runconfig.hpp"
#include "pipetteloc/synthdata.hpp"
#include "pipetteloc/trainer.hpp"

namespace fs = std::filesystem;

namespace pipetteloc {

namespace {

struct CommonOpts {
    std::string config_path;
    uint64_t seed = 0;
    bool seed_set = false;
    bool small = false;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
    cmd->add_option("--config", opts.config_path, "JSON run configuration file");
    cmd->add_option("--seed", opts.seed, "override the configured seed")
        ->each([&opts](const std::string&) { opts.seed_set = true; });
    cmd->add_flag("--small", opts.small, "apply the desk-scale preset (64 px, depth-2 encoder)");
}

RunConfig resolve_config(const CommonOpts& opts) {
    RunConfig cfg =
        opts.config_path.empty() ? RunConfig::defaults() : RunConfig::load_file(opts.config_path);
    if (opts.small) cfg.apply_small_preset();
    if (opts.seed_set) {
        cfg.seed = opts.seed;
        cfg.train.seed = opts.seed;
        cfg.gan.seed = opts.seed;
        cfg.scene.rng_seed = opts.seed;
    }
    cfg.finalize();
    cfg.validate();
    return cfg;
}

std::vector<ImageGrid> collect_patches(const std::vector<LabeledScene>& scenes) {
    std::vector<ImageGrid> patches;
    for (const LabeledScene& s : scenes)
        for (CropRecord& rec : crop_tips(s)) patches.push_back(std::move(rec.patch));
    return patches;
}

int check_image_size(const RunConfig& cfg, const std::vector<LabeledScene>& scenes) {
    if (scenes.empty()) throw std::runtime_error("dataset is empty");
    const int size = scenes[0].image.height;
    if (size != cfg.scene.image_size)
        throw std::runtime_error("dataset image size " + std::to_string(size) +
                                 " does not match configured scene.image_size " +
                                 std::to_string(cfg.scene.image_size) +
                                 " (did you mean --small?)");
    return size;
}

}  // namespace

int dispatch(const std::vector<std::string>& argv) {
    CLI::App app{"multi-pipette tip localization: synthetic data, GAN enhancement, "
                 "coarse-to-fine localizer, evaluation"};
    app.require_subcommand(1);

    // ---- synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic labelled dataset");
    CommonOpts synth_opts;
    int synth_count = 10;
    std::string synth_out;
    std::string synth_domain;
    add_common(synth, synth_opts);
    synth->add_option("--count", synth_count, "number of scenes")->required();
    synth->add_option("--out", synth_out, "output dataset directory")->required();
    synth->add_option("--domain", synth_domain, "invivo_like or exvivo_like");
    synth->callback([&]() {
        RunConfig cfg = resolve_config(synth_opts);
        SceneConfig scene_cfg = cfg.scene;
        if (!synth_domain.empty()) scene_cfg.domain = domain_from_string(synth_domain);
        std::vector<LabeledScene> scenes;
        scenes.reserve(synth_count);
        for (int i = 0; i < synth_count; ++i)
            scenes.push_back(render_scene(scene_cfg, cfg.seed + static_cast<uint64_t>(i)));
        write_dataset(scenes, synth_out);
        std::cout << "wrote " << scenes.size() << " scenes to " << synth_out << "\n";
    });

    // ---- train-gan
    auto* tgan = app.add_subcommand("train-gan", "train the background-elimination CycleGAN");
    CommonOpts tgan_opts;
    std::string tgan_noisy, tgan_clean, tgan_out;
    int tgan_epochs = -1;
    add_common(tgan, tgan_opts);
    tgan->add_option("--noisy", tgan_noisy, "dataset directory, noisy (in-vivo-like) domain")
        ->required();
    tgan->add_option("--clean", tgan_clean, "dataset directory, clean (ex-vivo-like) domain")
        ->required();
    tgan->add_option("--epochs", tgan_epochs, "override configured gan.epochs");
    tgan->add_option("--out", tgan_out, "output checkpoint file")->required();
    tgan->callback([&]() {
        RunConfig cfg = resolve_config(tgan_opts);
        GanConfig gan_cfg = cfg.gan;
        if (tgan_epochs >= 0) {
            gan_cfg.epochs = tgan_epochs;
            gan_cfg.decay_start = std::min(gan_cfg.decay_start, tgan_epochs);
        }
        gan_cfg.checkpoint_path = tgan_out;
        const auto noisy = collect_patches(read_dataset(tgan_noisy));
        const auto clean = collect_patches(read_dataset(tgan_clean));
        std::cout << "training CycleGAN on " << noisy.size() << " noisy / " << clean.size()
                  << " clean patches for " << gan_cfg.epochs << " epochs\n";
        CycleGanBundle bundle = train_cyclegan(noisy, clean, gan_cfg);
        bundle.save(tgan_out);
        if (!bundle.cycle_loss_history.empty())
            std::cout << "cycle loss: first epoch " << bundle.cycle_loss_history.front()
                      << ", last epoch " << bundle.cycle_loss_history.back() << "\n";
        std::cout << "saved checkpoint " << tgan_out << "\n";
    });

    // ---- enhance
    auto* enh = app.add_subcommand("enhance", "translate tip patches toward the clean domain");
    std::string enh_in, enh_ckpt, enh_out;
    enh->add_option("--in", enh_in, "input dataset directory")->required();
    enh->add_option("--ckpt", enh_ckpt, "CycleGAN checkpoint")->required();
    enh->add_option("--out", enh_out, "output dataset directory")->required();
    enh->callback([&]() {
        const CycleGanBundle bundle = CycleGanBundle::load(enh_ckpt);
        std::vector<LabeledScene> scenes = read_dataset(enh_in);
        for (LabeledScene& s : scenes) s = enhance_scene(s, bundle);
        write_dataset(scenes, enh_out);
        std::cout << "enhanced " << scenes.size() << " scenes into " << enh_out << "\n";
    });

    // ---- train
    auto* tr = app.add_subcommand("train", "run the three-stage localizer training");
    CommonOpts tr_opts;
    std::string tr_data, tr_out, tr_report;
    add_common(tr, tr_opts);
    tr->add_option("--data", tr_data, "training dataset directory")->required();
    tr->add_option("--out", tr_out, "output model checkpoint")->required();
    tr->add_option("--report", tr_report, "write the training report JSON here");
    tr->callback([&]() {
        RunConfig cfg = resolve_config(tr_opts);
        const std::vector<LabeledScene> scenes = read_dataset(tr_data);
        check_image_size(cfg, scenes);
        LocalizerModel model =
            LocalizerModel::create(cfg.encoder, cfg.decoder, cfg.scene.image_size, cfg.seed);
        const TrainReport report = train(model, scenes, cfg.train);
        model.save(tr_out);
        if (!tr_report.empty()) save_train_report(report, tr_report);
        std::cout << "trained on " << report.train_scenes << " scenes (" << report.val_scenes
                  << " held out); val total loss " << report.initial_val_total << " -> "
                  << report.final_val_total << "\nsaved checkpoint " << tr_out << "\n";
    });

    // ---- eval
    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a labelled dataset");
    CommonOpts ev_opts;
    std::string ev_ckpt, ev_data, ev_out, ev_overlays;
    double ev_um_per_px = -1.0;
    std::vector<double> ev_thresholds;
    add_common(ev, ev_opts);
    ev->add_option("--ckpt", ev_ckpt, "localizer checkpoint")->required();
    ev->add_option("--data", ev_data, "dataset directory")->required();
    ev->add_option("--um-per-px", ev_um_per_px, "micrometers per pixel (default: from dataset)");
    ev->add_option("--thresholds", ev_thresholds, "accuracy thresholds in um")->delimiter(',');
    ev->add_option("--out", ev_out, "write the report JSON here (default: stdout)");
    ev->add_option("--overlays", ev_overlays, "directory for per-scene overlay images");
    ev->callback([&]() {
        RunConfig cfg = resolve_config(ev_opts);
        LocalizerModel model = LocalizerModel::load(ev_ckpt);
        const std::vector<LabeledScene> scenes = read_dataset(ev_data);
        if (scenes.empty()) throw std::runtime_error("dataset is empty");
        const double um = ev_um_per_px > 0.0 ? ev_um_per_px : scenes[0].um_per_pixel;
        const std::vector<double> thresholds =
            ev_thresholds.empty() ? cfg.eval_thresholds_um : ev_thresholds;
        EvalOptions opts;
        opts.heatmap = cfg.heatmap;
        opts.iou_threshold = cfg.iou_threshold;
        const EvalReport report =
            evaluate(model_predictor(model), scenes, thresholds, um, opts);
        if (!ev_out.empty()) {
            save_eval_report(report, ev_out);
            std::cout << "wrote " << ev_out << "\n";
        }
        std::cout << "mean matched distance: " << report.mean_matched_distance_um << " um\n";
        for (const auto& [t, pct] : report.accuracy_at)
            std::cout << "acc@" << t << "um: " << pct << "%\n";
        std::cout << "heatmap IoU: " << report.heatmap_iou << "\n";
        if (!ev_overlays.empty()) {
            fs::create_directories(ev_overlays);
            for (const LabeledScene& s : scenes) {
                const Prediction pred = model_predictor(model)(s);
                const OverlayImage overlay = render_overlay(s, pred, um);
                write_overlay_png(overlay, ev_overlays + "/" + s.id + "_overlay.png");
            }
            std::cout << "wrote overlays to " << ev_overlays << "\n";
        }
    });

    // ---- bench
    auto* be = app.add_subcommand("bench", "inference latency benchmark");
    std::string be_ckpt, be_out;
    int be_batch = 1, be_iters = 100, be_warmup = 10;
    be->add_option("--ckpt", be_ckpt, "localizer checkpoint")->required();
    be->add_option("--batch", be_batch, "batch size");
    be->add_option("--iters", be_iters, "timed iterations");
    be->add_option("--warmup", be_warmup, "unmeasured warmup iterations");
    be->add_option("--out", be_out, "write the latency report JSON here");
    be->callback([&]() {
        LocalizerModel model = LocalizerModel::load(be_ckpt);
        const LatencyReport report = benchmark_inference(model, be_batch, be_iters, be_warmup);
        if (!be_out.empty()) save_latency_report(report, be_out);
        std::cout << "mean seconds per image: " << report.mean_seconds_per_image << " ("
                  << report.device_label << ", batch " << report.batch_size << ", "
                  << report.iterations << " iterations)\n";
    });

    // ---- infer
    auto* in = app.add_subcommand("infer", "predict tips for a single image");
    std::string in_image, in_ckpt, in_overlay;
    in->add_option("--image", in_image, "grayscale PNG input")->required();
    in->add_option("--ckpt", in_ckpt, "localizer checkpoint")->required();
    in->add_option("--overlay", in_overlay, "write an overlay PNG here");
    in->callback([&]() {
        LocalizerModel model = LocalizerModel::load(in_ckpt);
        const ImageGrid image = read_image(in_image);
        if (image.height != model.image_size || image.width != model.image_size)
            throw std::runtime_error("image is " + std::to_string(image.width) + "x" +
                                     std::to_string(image.height) + " but the model expects " +
                                     std::to_string(model.image_size));
        model.set_training(false);
        const Prediction pred = predict(image, model);
        nlohmann::json tips = nlohmann::json::array();
        for (const Vec2& t : pred.tips) tips.push_back({t.x, t.y});
        std::cout << nlohmann::json{{"tips", tips}}.dump(2) << "\n";
        if (!in_overlay.empty()) {
            LabeledScene scene;
            scene.image = image;
            write_overlay_png(render_overlay(scene, pred, 1.0), in_overlay);
        }
    });

    // ---- ablate
    auto* ab = app.add_subcommand("ablate", "train/evaluate the component-ablation table");
    CommonOpts ab_opts;
    std::string ab_data, ab_out;
    add_common(ab, ab_opts);
    ab->add_option("--data", ab_data, "dataset directory")->required();
    ab->add_option("--out", ab_out, "write the table JSON here")->required();
    ab->callback([&]() {
        RunConfig cfg = resolve_config(ab_opts);
        const std::vector<LabeledScene> scenes = read_dataset(ab_data);
        check_image_size(cfg, scenes);
        const AblationTable table = run_ablation(scenes, cfg);
        save_ablation_table(table, ab_out);
        for (const AblationRow& r : table.rows)
            std::cout << (r.coarse_learner ? "coarse " : "       ")
                      << (r.finer_learner ? "finer " : "      ") << "| iou "
                      << (r.iou ? std::to_string(*r.iou) : std::string("-")) << " | dist "
                      << r.mean_matched_distance_px << " px | acc@10px " << r.acc_at_10px
                      << "%\n";
        std::cout << "wrote " << ab_out << "\n";
    });

    std::vector<const char*> cargs;
    cargs.reserve(argv.size());
    for (const std::string& a : argv) cargs.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(cargs.size()), cargs.data());
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

}  // namespace pipetteloc
