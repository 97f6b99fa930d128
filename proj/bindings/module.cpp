#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "pipetteloc/ablation.hpp"
#include "pipetteloc/assignment.hpp"
#include "pipetteloc/enhancer.hpp"
#include "pipetteloc/evaluation.hpp"
#include "pipetteloc/heatmap.hpp"
#include "pipetteloc/localizer.hpp"
#include "pipetteloc/losses.hpp"
#include "pipetteloc/runconfig.hpp"
#include "pipetteloc/synthdata.hpp"
#include "pipetteloc/trainer.hpp"

namespace py = pybind11;
using namespace pipetteloc;

namespace {

py::array_t<double> grid_to_array(const ImageGrid& grid) {
    py::array_t<double> arr({grid.height, grid.width});
    std::copy(grid.values.begin(), grid.values.end(), arr.mutable_data());
    return arr;
}

ImageGrid array_to_grid(const py::array_t<double, py::array::c_style | py::array::forcecast>& arr) {
    if (arr.ndim() != 2) throw std::invalid_argument("expected a 2-d array");
    ImageGrid grid(static_cast<int>(arr.shape(0)), static_cast<int>(arr.shape(1)));
    std::copy(arr.data(), arr.data() + arr.size(), grid.values.begin());
    return grid;
}

py::array_t<double> tips_to_array(const std::vector<Vec2>& tips) {
    py::array_t<double> arr({static_cast<py::ssize_t>(tips.size()), py::ssize_t(2)});
    auto* data = arr.mutable_data();
    for (size_t i = 0; i < tips.size(); ++i) {
        data[2 * i] = tips[i].x;
        data[2 * i + 1] = tips[i].y;
    }
    return arr;
}

std::vector<Vec2> array_to_tips(
    const py::array_t<double, py::array::c_style | py::array::forcecast>& arr) {
    if (arr.ndim() != 2 || arr.shape(1) != 2)
        throw std::invalid_argument("expected an (n, 2) array of tips");
    std::vector<Vec2> tips(static_cast<size_t>(arr.shape(0)));
    const double* data = arr.data();
    for (size_t i = 0; i < tips.size(); ++i) tips[i] = {data[2 * i], data[2 * i + 1]};
    return tips;
}

CostMatrix array_to_cost(
    const py::array_t<double, py::array::c_style | py::array::forcecast>& arr) {
    if (arr.ndim() != 2) throw std::invalid_argument("expected a 2-d cost matrix");
    CostMatrix c;
    c.n_pred = static_cast<int>(arr.shape(0));
    c.n_true = static_cast<int>(arr.shape(1));
    c.entries.assign(arr.data(), arr.data() + arr.size());
    return c;
}

py::dict assignment_to_dict(const Assignment& a) {
    py::list pairs;
    for (const auto& [i, j] : a.pairs) pairs.append(py::make_tuple(i, j));
    py::dict d;
    d["pairs"] = pairs;
    d["total_cost"] = a.total_cost;
    return d;
}

py::dict eval_report_to_dict(const EvalReport& r) {
    py::dict acc;
    for (const auto& [t, pct] : r.accuracy_at) acc[py::float_(t)] = pct;
    py::dict d;
    d["mean_matched_distance_um"] = r.mean_matched_distance_um;
    d["mean_squared_distance_um2"] = r.mean_squared_distance_um2;
    d["accuracy_at"] = acc;
    d["heatmap_iou"] = r.heatmap_iou;
    d["um_per_pixel"] = r.um_per_pixel;
    return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "multi-pipette tip localization core";

    py::class_<SceneConfig>(m, "SceneConfig")
        .def(py::init<>())
        .def_readwrite("image_size", &SceneConfig::image_size)
        .def_readwrite("pipette_count_min", &SceneConfig::pipette_count_min)
        .def_readwrite("pipette_count_max", &SceneConfig::pipette_count_max)
        .def_readwrite("taper_angle_min_deg", &SceneConfig::taper_angle_min_deg)
        .def_readwrite("taper_angle_max_deg", &SceneConfig::taper_angle_max_deg)
        .def_readwrite("tip_brightness", &SceneConfig::tip_brightness)
        .def_readwrite("um_per_pixel", &SceneConfig::um_per_pixel)
        .def_readwrite("rng_seed", &SceneConfig::rng_seed)
        .def_property(
            "domain", [](const SceneConfig& c) { return to_string(c.domain); },
            [](SceneConfig& c, const std::string& s) { c.domain = domain_from_string(s); })
        .def_property(
            "noise",
            [](const SceneConfig& c) {
                return py::make_tuple(c.noise_profile.background_cell_blob_density,
                                      c.noise_profile.speckle_std,
                                      c.noise_profile.vignette_strength);
            },
            [](SceneConfig& c, py::tuple t) {
                c.noise_profile = {t[0].cast<double>(), t[1].cast<double>(),
                                   t[2].cast<double>()};
            });

    py::class_<LabeledScene>(m, "LabeledScene")
        .def(py::init<>())
        .def_property(
            "image", [](const LabeledScene& s) { return grid_to_array(s.image); },
            [](LabeledScene& s, const py::array_t<double>& a) { s.image = array_to_grid(a); })
        .def_property(
            "tips", [](const LabeledScene& s) { return tips_to_array(s.tips); },
            [](LabeledScene& s, const py::array_t<double>& a) { s.tips = array_to_tips(a); })
        .def_property(
            "domain", [](const LabeledScene& s) { return to_string(s.domain); },
            [](LabeledScene& s, const std::string& d) { s.domain = domain_from_string(d); })
        .def_readwrite("um_per_pixel", &LabeledScene::um_per_pixel)
        .def_readwrite("id", &LabeledScene::id);

    m.def("render_scene", &render_scene, py::arg("config"), py::arg("seed"));
    m.def(
        "write_dataset",
        [](const std::vector<LabeledScene>& scenes, const std::string& path) {
            write_dataset(scenes, path);
        },
        py::arg("scenes"), py::arg("path"));
    m.def("read_dataset", &read_dataset, py::arg("path"));

    m.def(
        "gaussian_heatmap",
        [](const py::array_t<double>& tips, int height, int width, double sigma) {
            return grid_to_array(gaussian_heatmap(array_to_tips(tips), height, width, {sigma}));
        },
        py::arg("tips"), py::arg("height"), py::arg("width"), py::arg("sigma") = 10.0);
    m.def(
        "heatmap_iou",
        [](const py::array_t<double>& pred, const py::array_t<double>& truth, double threshold) {
            return heatmap_iou(array_to_grid(pred), array_to_grid(truth), threshold);
        },
        py::arg("pred"), py::arg("truth"), py::arg("threshold") = 0.5);

    m.def(
        "cost_matrix",
        [](const py::array_t<double>& pred, const py::array_t<double>& truth) {
            const CostMatrix c = cost_matrix(array_to_tips(pred), array_to_tips(truth));
            py::array_t<double> arr({c.n_pred, c.n_true});
            std::copy(c.entries.begin(), c.entries.end(), arr.mutable_data());
            return arr;
        },
        py::arg("pred"), py::arg("truth"));
    m.def(
        "hungarian",
        [](const py::array_t<double>& cost) { return assignment_to_dict(hungarian(array_to_cost(cost))); },
        py::arg("cost"));
    m.def(
        "brute_force_assignment",
        [](const py::array_t<double>& cost) {
            return assignment_to_dict(brute_force_assignment(array_to_cost(cost)));
        },
        py::arg("cost"));

    m.def(
        "dice_loss",
        [](const py::array_t<double>& pred, const py::array_t<double>& truth, double smoothing) {
            return dice_loss(array_to_grid(pred), array_to_grid(truth), smoothing);
        },
        py::arg("pred"), py::arg("truth"), py::arg("smoothing") = 1e-6);
    m.def(
        "hungarian_loss",
        [](const py::array_t<double>& pred, const py::array_t<double>& truth) {
            const auto [loss, assignment] =
                hungarian_loss(array_to_tips(pred), array_to_tips(truth));
            return py::make_tuple(loss, assignment_to_dict(assignment));
        },
        py::arg("pred_tips"), py::arg("true_tips"));
    m.def(
        "total_loss",
        [](const py::array_t<double>& pred_hm, const py::array_t<double>& true_hm,
           const py::array_t<double>& pred_tips, const py::array_t<double>& true_tips,
           double alpha) {
            LossConfig cfg;
            cfg.alpha = alpha;
            return total_loss(array_to_grid(pred_hm), array_to_grid(true_hm),
                              array_to_tips(pred_tips), array_to_tips(true_tips), cfg);
        },
        py::arg("pred_heatmap"), py::arg("true_heatmap"), py::arg("pred_tips"),
        py::arg("true_tips"), py::arg("alpha") = 0.15);

    m.def(
        "crop_tips",
        [](const LabeledScene& scene) {
            py::list out;
            for (const CropRecord& rec : crop_tips(scene)) {
                py::dict d;
                d["patch"] = grid_to_array(rec.patch);
                d["origin"] = py::make_tuple(rec.origin_x, rec.origin_y);
                d["pad"] = py::make_tuple(rec.pad_left, rec.pad_top, rec.pad_right,
                                          rec.pad_bottom);
                out.append(d);
            }
            return out;
        },
        py::arg("scene"));

    py::class_<LocalizerModel>(m, "LocalizerModel")
        .def_static("small_preset", &LocalizerModel::small_preset, py::arg("seed") = 0)
        .def_static(
            "create_default",
            [](uint64_t seed) { return LocalizerModel::create({}, {}, 256, seed); },
            py::arg("seed") = 0)
        .def_static("load", &LocalizerModel::load, py::arg("path"))
        .def("save", &LocalizerModel::save, py::arg("path"))
        .def_property_readonly("image_size",
                               [](const LocalizerModel& m_) { return m_.image_size; })
        .def_property_readonly(
            "max_tips", [](const LocalizerModel& m_) { return m_.decoder_config.max_tips; })
        .def(
            "predict",
            [](LocalizerModel& model, const py::array_t<double>& image) {
                model.set_training(false);
                const Prediction p = predict(array_to_grid(image), model);
                return py::make_tuple(grid_to_array(p.heatmap), tips_to_array(p.tips));
            },
            py::arg("image"));

    m.def(
        "evaluate_model",
        [](LocalizerModel& model, const std::vector<LabeledScene>& scenes,
           const std::vector<double>& thresholds, double um_per_pixel, double sigma) {
            EvalOptions opts;
            opts.heatmap.sigma = sigma;
            return eval_report_to_dict(
                evaluate(model_predictor(model), scenes, thresholds, um_per_pixel, opts));
        },
        py::arg("model"), py::arg("scenes"), py::arg("thresholds"), py::arg("um_per_pixel") = 1.0,
        py::arg("sigma") = 10.0);

    m.def(
        "benchmark_inference",
        [](LocalizerModel& model, int batch, int iterations, int warmup) {
            const LatencyReport r = benchmark_inference(model, batch, iterations, warmup);
            py::dict d;
            d["mean_seconds_per_image"] = r.mean_seconds_per_image;
            d["batch_size"] = r.batch_size;
            d["iterations"] = r.iterations;
            d["warmup_iterations"] = r.warmup_iterations;
            d["device_label"] = r.device_label;
            d["samples_seconds"] = r.samples_seconds;
            return d;
        },
        py::arg("model"), py::arg("batch") = 1, py::arg("iterations") = 100,
        py::arg("warmup") = 10);

    m.def(
        "train_localizer",
        [](LocalizerModel& model, const std::vector<LabeledScene>& scenes,
           const std::string& config_json) {
            const RunConfig cfg = config_json.empty()
                                      ? RunConfig::defaults()
                                      : RunConfig::from_json(nlohmann::json::parse(config_json));
            const TrainReport r = train(model, scenes, cfg.train);
            py::dict d;
            d["initial_val_total"] = r.initial_val_total;
            d["final_val_total"] = r.final_val_total;
            d["train_scenes"] = r.train_scenes;
            d["val_scenes"] = r.val_scenes;
            py::list epochs;
            for (const EpochRecord& e : r.epochs) {
                py::dict ed;
                ed["stage"] = e.stage;
                ed["epoch"] = e.epoch;
                ed["lr"] = e.lr;
                ed["train_loss"] = e.train_loss;
                ed["val_loss"] = e.val_loss;
                epochs.append(ed);
            }
            d["epochs"] = epochs;
            return d;
        },
        py::arg("model"), py::arg("scenes"), py::arg("config_json") = std::string());

    m.attr("GAN_PATCH_SIZE") = kGanPatchSize;
    m.attr("__version__") = "0.1.0";
}
