#include "pipetteloc/enhancer.hpp"

#include <algorithm>
#include <cmath>

#include "pipetteloc/nn/serialize.hpp"
#include "pipetteloc/rng.hpp"

namespace pipetteloc {

using nn::Tensor;

std::vector<CropRecord> crop_tips(const LabeledScene& scene) {
    if (scene.tips.empty()) throw std::invalid_argument("crop_tips: scene has no tips");
    const int half = kGanPatchSize / 2;
    const int H = scene.image.height, W = scene.image.width;
    std::vector<CropRecord> records;
    records.reserve(scene.tips.size());
    for (const Vec2& tip : scene.tips) {
        CropRecord rec;
        rec.origin_x = static_cast<int>(std::llround(tip.x)) - half;
        rec.origin_y = static_cast<int>(std::llround(tip.y)) - half;
        rec.pad_left = std::max(0, -rec.origin_x);
        rec.pad_top = std::max(0, -rec.origin_y);
        rec.pad_right = std::max(0, rec.origin_x + kGanPatchSize - W);
        rec.pad_bottom = std::max(0, rec.origin_y + kGanPatchSize - H);
        rec.patch = ImageGrid(kGanPatchSize, kGanPatchSize, 0.0);
        for (int py = rec.pad_top; py < kGanPatchSize - rec.pad_bottom; ++py)
            for (int px = rec.pad_left; px < kGanPatchSize - rec.pad_right; ++px)
                rec.patch.at(py, px) = scene.image.at(rec.origin_y + py, rec.origin_x + px);
        records.push_back(std::move(rec));
    }
    return records;
}

void GanConfig::validate() const {
    if (base_channels < 1 || res_blocks < 1)
        throw std::invalid_argument("GanConfig: base_channels and res_blocks must be >= 1");
    if (lr <= 0.0) throw std::invalid_argument("GanConfig: lr must be > 0");
    if (epochs < 0 || decay_start < 0 || decay_start > epochs)
        throw std::invalid_argument("GanConfig: need 0 <= decay_start <= epochs");
    if (batch_size < 1) throw std::invalid_argument("GanConfig: batch_size must be >= 1");
    if (cycle_weight <= 0.0) throw std::invalid_argument("GanConfig: cycle_weight must be > 0");
}

double GanConfig::lr_at_epoch(int epoch) const {
    if (epoch <= decay_start || epochs == decay_start) return lr;
    return lr * (1.0 - static_cast<double>(epoch - decay_start) / (epochs - decay_start));
}

namespace {

// conv-IN-ReLU / conv-IN with a skip connection; reflect padding.
class GanResBlock : public nn::Module {
public:
    GanResBlock(int ch, Rng& rng)
        : conv1_(ch, ch, 3, 1, 1, rng, nn::PadMode::reflect, true, 0.02f),
          in1_(ch),
          conv2_(ch, ch, 3, 1, 1, rng, nn::PadMode::reflect, true, 0.02f),
          in2_(ch) {}

    Tensor forward(const Tensor& x) override {
        Tensor y = in2_.forward(conv2_.forward(relu_.forward(in1_.forward(conv1_.forward(x)))));
        for (int64_t i = 0; i < y.numel(); ++i) y[i] += x[i];
        return y;
    }

    Tensor backward(const Tensor& dy) override {
        Tensor dx = conv1_.backward(in1_.backward(relu_.backward(conv2_.backward(in2_.backward(dy)))));
        for (int64_t i = 0; i < dx.numel(); ++i) dx[i] += dy[i];
        return dx;
    }

    void visit_params(const std::string& prefix, const nn::ParamVisitor& fn) override {
        conv1_.visit_params(prefix + "conv1.", fn);
        conv2_.visit_params(prefix + "conv2.", fn);
    }

    void for_each_child(const std::function<void(nn::Module&)>& fn) override {
        fn(conv1_);
        fn(in1_);
        fn(relu_);
        fn(conv2_);
        fn(in2_);
    }

private:
    nn::Conv2d conv1_;
    nn::InstanceNorm2d in1_;
    nn::ReLU relu_;
    nn::Conv2d conv2_;
    nn::InstanceNorm2d in2_;
};

std::unique_ptr<nn::Sequential> make_generator(const GanConfig& cfg, Rng& rng) {
    auto g = std::make_unique<nn::Sequential>();
    const int k = cfg.base_channels;
    g->emplace<nn::Conv2d>(1, k, 7, 1, 3, rng, nn::PadMode::reflect, true, 0.02f);
    g->emplace<nn::InstanceNorm2d>(k);
    g->emplace<nn::ReLU>();
    g->emplace<nn::Conv2d>(k, 2 * k, 3, 2, 1, rng, nn::PadMode::zero, true, 0.02f);
    g->emplace<nn::InstanceNorm2d>(2 * k);
    g->emplace<nn::ReLU>();
    g->emplace<nn::Conv2d>(2 * k, 4 * k, 3, 2, 1, rng, nn::PadMode::zero, true, 0.02f);
    g->emplace<nn::InstanceNorm2d>(4 * k);
    g->emplace<nn::ReLU>();
    for (int i = 0; i < cfg.res_blocks; ++i) g->emplace<GanResBlock>(4 * k, rng);
    g->emplace<nn::ConvTranspose2d>(4 * k, 2 * k, 3, 2, 1, 1, rng, true, 0.02f);
    g->emplace<nn::InstanceNorm2d>(2 * k);
    g->emplace<nn::ReLU>();
    g->emplace<nn::ConvTranspose2d>(2 * k, k, 3, 2, 1, 1, rng, true, 0.02f);
    g->emplace<nn::InstanceNorm2d>(k);
    g->emplace<nn::ReLU>();
    g->emplace<nn::Conv2d>(k, 1, 7, 1, 3, rng, nn::PadMode::reflect, true, 0.02f);
    g->emplace<nn::Tanh>();
    return g;
}

std::unique_ptr<nn::Sequential> make_discriminator(const GanConfig& cfg, Rng& rng) {
    auto d = std::make_unique<nn::Sequential>();
    const int k = cfg.base_channels;
    d->emplace<nn::Conv2d>(1, k, 4, 2, 1, rng, nn::PadMode::zero, true, 0.02f);
    d->emplace<nn::LeakyReLU>(0.2f);
    d->emplace<nn::Conv2d>(k, 2 * k, 4, 2, 1, rng, nn::PadMode::zero, true, 0.02f);
    d->emplace<nn::InstanceNorm2d>(2 * k);
    d->emplace<nn::LeakyReLU>(0.2f);
    d->emplace<nn::Conv2d>(2 * k, 4 * k, 4, 2, 1, rng, nn::PadMode::zero, true, 0.02f);
    d->emplace<nn::InstanceNorm2d>(4 * k);
    d->emplace<nn::LeakyReLU>(0.2f);
    d->emplace<nn::Conv2d>(4 * k, 8 * k, 4, 1, 1, rng, nn::PadMode::zero, true, 0.02f);
    d->emplace<nn::InstanceNorm2d>(8 * k);
    d->emplace<nn::LeakyReLU>(0.2f);
    d->emplace<nn::Conv2d>(8 * k, 1, 4, 1, 1, rng, nn::PadMode::zero, true, 0.02f);
    return d;
}

// Least-squares adversarial loss: mean((pred - target)^2). Returns the loss
// and writes its gradient.
double mse_to_constant(const Tensor& pred, float target, Tensor& grad, double scale = 1.0) {
    grad.resize(pred.shape());
    double loss = 0.0;
    const double inv_n = 1.0 / static_cast<double>(pred.numel());
    for (int64_t i = 0; i < pred.numel(); ++i) {
        const double diff = pred[i] - target;
        loss += diff * diff;
        grad[i] = static_cast<float>(scale * 2.0 * diff * inv_n);
    }
    return scale * loss * inv_n;
}

double l1_loss(const Tensor& pred, const Tensor& target, Tensor& grad, double scale) {
    grad.resize(pred.shape());
    double loss = 0.0;
    const double inv_n = 1.0 / static_cast<double>(pred.numel());
    for (int64_t i = 0; i < pred.numel(); ++i) {
        const double diff = pred[i] - target[i];
        loss += std::abs(diff);
        grad[i] = static_cast<float>(scale * (diff > 0 ? 1.0 : (diff < 0 ? -1.0 : 0.0)) * inv_n);
    }
    return scale * loss * inv_n;
}

Tensor patches_to_tensor(const std::vector<ImageGrid>& patches, const std::vector<int>& idx) {
    Tensor t({static_cast<int>(idx.size()), 1, kGanPatchSize, kGanPatchSize});
    for (size_t b = 0; b < idx.size(); ++b) {
        const ImageGrid& p = patches[idx[b]];
        float* dst = t.data() + b * kGanPatchSize * kGanPatchSize;
        for (size_t i = 0; i < p.values.size(); ++i)
            dst[i] = static_cast<float>(p.values[i] * 2.0 - 1.0);  // [0,1] -> [-1,1]
    }
    return t;
}

void add_into(Tensor& dst, const Tensor& src) {
    for (int64_t i = 0; i < dst.numel(); ++i) dst[i] += src[i];
}

}  // namespace

CycleGanBundle CycleGanBundle::create(const GanConfig& cfg) {
    cfg.validate();
    CycleGanBundle b;
    b.config = cfg;
    Rng rng(Rng::mix(cfg.seed, 0xc7c1e9a7ULL));
    b.gen_noisy_to_clean = make_generator(cfg, rng);
    b.gen_clean_to_noisy = make_generator(cfg, rng);
    b.disc_clean = make_discriminator(cfg, rng);
    b.disc_noisy = make_discriminator(cfg, rng);

    std::vector<nn::Parameter*> gen_params = nn::collect_parameters(*b.gen_noisy_to_clean);
    for (nn::Parameter* p : nn::collect_parameters(*b.gen_clean_to_noisy)) gen_params.push_back(p);
    nn::Adam::Options opts;
    opts.lr = static_cast<float>(cfg.lr);
    opts.beta1 = 0.5f;  // standard for adversarial training
    b.gen_opt = std::make_unique<nn::Adam>(std::move(gen_params), opts);
    b.disc_clean_opt = std::make_unique<nn::Adam>(nn::collect_parameters(*b.disc_clean), opts);
    b.disc_noisy_opt = std::make_unique<nn::Adam>(nn::collect_parameters(*b.disc_noisy), opts);
    return b;
}

ImageGrid CycleGanBundle::translate_to_clean(const ImageGrid& patch) const {
    if (patch.height != kGanPatchSize || patch.width != kGanPatchSize)
        throw std::invalid_argument("translate_to_clean: patch must be 80x80");
    Tensor in({1, 1, kGanPatchSize, kGanPatchSize});
    for (size_t i = 0; i < patch.values.size(); ++i)
        in[static_cast<int64_t>(i)] = static_cast<float>(patch.values[i] * 2.0 - 1.0);
    // Lives in const context for callers; forward caching is irrelevant here.
    auto* gen = const_cast<nn::Sequential*>(gen_noisy_to_clean.get());
    const bool was_training = gen->training();
    gen->set_training(false);
    Tensor out = gen->forward(in);
    gen->set_training(was_training);
    ImageGrid result(kGanPatchSize, kGanPatchSize);
    for (size_t i = 0; i < result.values.size(); ++i) {
        const double v = (out[static_cast<int64_t>(i)] + 1.0) / 2.0;
        result.values[i] = std::min(1.0, std::max(0.0, v));
    }
    return result;
}

void train_cyclegan_epochs(CycleGanBundle& bundle, const std::vector<ImageGrid>& noisy_patches,
                           const std::vector<ImageGrid>& clean_patches) {
    const GanConfig& cfg = bundle.config;
    if (cfg.epochs > 0 && (noisy_patches.empty() || clean_patches.empty()))
        throw std::invalid_argument("train_cyclegan: empty patch set");
    for (const auto* set : {&noisy_patches, &clean_patches})
        for (const ImageGrid& p : *set)
            if (p.height != kGanPatchSize || p.width != kGanPatchSize)
                throw std::invalid_argument("train_cyclegan: patches must be 80x80");

    nn::Sequential& G = *bundle.gen_noisy_to_clean;
    nn::Sequential& Gp = *bundle.gen_clean_to_noisy;
    nn::Sequential& De = *bundle.disc_clean;
    nn::Sequential& Di = *bundle.disc_noisy;

    Tensor grad, grad2;
    for (int epoch = bundle.epoch + 1; epoch <= cfg.epochs; ++epoch) {
        const float lr = static_cast<float>(cfg.lr_at_epoch(epoch));
        bundle.gen_opt->set_lr(lr);
        bundle.disc_clean_opt->set_lr(lr);
        bundle.disc_noisy_opt->set_lr(lr);

        Rng rng(Rng::mix(cfg.seed, 0xe90c5ULL, static_cast<uint64_t>(epoch)));
        std::vector<int> noisy_idx(noisy_patches.size()), clean_idx(clean_patches.size());
        for (size_t i = 0; i < noisy_idx.size(); ++i) noisy_idx[i] = static_cast<int>(i);
        for (size_t i = 0; i < clean_idx.size(); ++i) clean_idx[i] = static_cast<int>(i);
        for (size_t i = noisy_idx.size(); i > 1; --i)
            std::swap(noisy_idx[i - 1], noisy_idx[rng.uniform_int(0, static_cast<int>(i) - 1)]);
        for (size_t i = clean_idx.size(); i > 1; --i)
            std::swap(clean_idx[i - 1], clean_idx[rng.uniform_int(0, static_cast<int>(i) - 1)]);

        const size_t per_epoch = std::max(noisy_patches.size(), clean_patches.size());
        const size_t steps = (per_epoch + cfg.batch_size - 1) / cfg.batch_size;
        double epoch_cycle = 0.0;

        for (size_t step = 0; step < steps; ++step) {
            std::vector<int> nb, cb;
            for (int k = 0; k < cfg.batch_size; ++k) {
                const size_t i = step * cfg.batch_size + k;
                nb.push_back(noisy_idx[i % noisy_idx.size()]);
                cb.push_back(clean_idx[i % clean_idx.size()]);
            }
            Tensor x = patches_to_tensor(noisy_patches, nb);  // in-vivo-like
            Tensor y = patches_to_tensor(clean_patches, cb);  // ex-vivo-like

            // Generator update; discriminator gradients accumulated here are
            // discarded before the discriminator steps.
            bundle.gen_opt->zero_grad();
            De.zero_grad();
            Di.zero_grad();

            Tensor fake_clean = G.forward(x);
            Tensor pred = De.forward(fake_clean);
            mse_to_constant(pred, 1.0f, grad);
            Tensor dfake = De.backward(grad);
            Tensor rec_x = Gp.forward(fake_clean);
            epoch_cycle += l1_loss(rec_x, x, grad2, cfg.cycle_weight);
            add_into(dfake, Gp.backward(grad2));
            G.backward(dfake);

            Tensor fake_noisy = Gp.forward(y);
            pred = Di.forward(fake_noisy);
            mse_to_constant(pred, 1.0f, grad);
            Tensor dfake2 = Di.backward(grad);
            Tensor rec_y = G.forward(fake_noisy);
            epoch_cycle += l1_loss(rec_y, y, grad2, cfg.cycle_weight);
            add_into(dfake2, G.backward(grad2));
            Gp.backward(dfake2);

            bundle.gen_opt->step();

            // Discriminator updates on (real, generated) pairs.
            bundle.disc_clean_opt->zero_grad();
            pred = De.forward(y);
            mse_to_constant(pred, 1.0f, grad, 0.5);
            De.backward(grad);
            pred = De.forward(fake_clean);
            mse_to_constant(pred, 0.0f, grad, 0.5);
            De.backward(grad);
            bundle.disc_clean_opt->step();

            bundle.disc_noisy_opt->zero_grad();
            pred = Di.forward(x);
            mse_to_constant(pred, 1.0f, grad, 0.5);
            Di.backward(grad);
            pred = Di.forward(fake_noisy);
            mse_to_constant(pred, 0.0f, grad, 0.5);
            Di.backward(grad);
            bundle.disc_noisy_opt->step();
        }

        bundle.epoch = epoch;
        bundle.cycle_loss_history.push_back(epoch_cycle / static_cast<double>(steps));
        if (cfg.checkpoint_every > 0 && !cfg.checkpoint_path.empty() &&
            epoch % cfg.checkpoint_every == 0)
            bundle.save(cfg.checkpoint_path + ".epoch" + std::to_string(epoch));
    }
}

CycleGanBundle train_cyclegan(const std::vector<ImageGrid>& noisy_patches,
                              const std::vector<ImageGrid>& clean_patches,
                              const GanConfig& config) {
    CycleGanBundle bundle = CycleGanBundle::create(config);
    train_cyclegan_epochs(bundle, noisy_patches, clean_patches);
    return bundle;
}

LabeledScene enhance_scene_with(const LabeledScene& scene, const PatchTranslator& translate) {
    if (scene.tips.empty()) throw std::invalid_argument("enhance_scene: scene has no tips");
    const int H = scene.image.height, W = scene.image.width;
    ImageGrid sum(H, W, 0.0);
    ImageGrid lo(H, W, 0.0), hi(H, W, 0.0);
    std::vector<int> count(static_cast<size_t>(H) * W, 0);

    for (const CropRecord& rec : crop_tips(scene)) {
        const ImageGrid translated = translate(rec.patch);
        if (translated.height != kGanPatchSize || translated.width != kGanPatchSize)
            throw std::runtime_error("enhance_scene: translator changed the patch size");
        for (int py = rec.pad_top; py < kGanPatchSize - rec.pad_bottom; ++py)
            for (int px = rec.pad_left; px < kGanPatchSize - rec.pad_right; ++px) {
                const int sy = rec.origin_y + py;
                const int sx = rec.origin_x + px;
                const double v = translated.at(py, px);
                const size_t i = static_cast<size_t>(sy) * W + sx;
                sum.at(sy, sx) += v;
                lo.values[i] = count[i] == 0 ? v : std::min(lo.values[i], v);
                hi.values[i] = count[i] == 0 ? v : std::max(hi.values[i], v);
                ++count[i];
            }
    }

    LabeledScene out = scene;
    out.domain = Domain::exvivo_like;
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            const size_t i = static_cast<size_t>(y) * W + x;
            const int c = count[i];
            if (c == 0) continue;
            // Agreeing contributions average to themselves exactly; the
            // general case divides the accumulated sum.
            out.image.at(y, x) =
                lo.values[i] == hi.values[i] ? lo.values[i] : sum.at(y, x) / c;
        }
    return out;
}

LabeledScene enhance_scene(const LabeledScene& scene, const CycleGanBundle& bundle) {
    return enhance_scene_with(scene,
                              [&](const ImageGrid& p) { return bundle.translate_to_clean(p); });
}

// --------------------------------------------------------------------------- persistence

void CycleGanBundle::save(const std::string& path) const {
    nn::Checkpoint ckpt;
    ckpt.header["kind"] = "cyclegan";
    ckpt.header["epoch"] = epoch;
    ckpt.header["cycle_loss_history"] = cycle_loss_history;
    ckpt.header["config"] = {{"base_channels", config.base_channels},
                             {"res_blocks", config.res_blocks},
                             {"cycle_weight", config.cycle_weight},
                             {"lr", config.lr},
                             {"epochs", config.epochs},
                             {"decay_start", config.decay_start},
                             {"batch_size", config.batch_size},
                             {"seed", config.seed}};
    const std::pair<const char*, nn::Sequential*> nets[] = {
        {"g.", gen_noisy_to_clean.get()},
        {"gp.", gen_clean_to_noisy.get()},
        {"de.", disc_clean.get()},
        {"di.", disc_noisy.get()}};
    for (const auto& [prefix, net] : nets)
        net->visit_params(prefix, [&](const std::string& name, nn::Parameter& p) {
            ckpt.tensors.emplace(name, p.value);
        });
    const std::pair<const char*, nn::Adam*> opts[] = {{"adam.g.", gen_opt.get()},
                                                      {"adam.de.", disc_clean_opt.get()},
                                                      {"adam.di.", disc_noisy_opt.get()}};
    for (const auto& [prefix, opt] : opts) {
        ckpt.header[std::string(prefix) + "t"] = opt->step_count();
        for (size_t i = 0; i < opt->first_moments().size(); ++i) {
            ckpt.tensors.emplace(prefix + std::string("m.") + std::to_string(i),
                                 opt->first_moments()[i]);
            ckpt.tensors.emplace(prefix + std::string("v.") + std::to_string(i),
                                 opt->second_moments()[i]);
        }
    }
    nn::save_checkpoint(path, ckpt);
}

CycleGanBundle CycleGanBundle::load(const std::string& path) {
    nn::Checkpoint ckpt = nn::load_checkpoint(path);
    if (ckpt.header.value("kind", "") != "cyclegan")
        throw std::runtime_error("CycleGanBundle::load: not a cyclegan checkpoint: " + path);
    GanConfig cfg;
    const auto& cj = ckpt.header.at("config");
    cfg.base_channels = cj.at("base_channels");
    cfg.res_blocks = cj.at("res_blocks");
    cfg.cycle_weight = cj.at("cycle_weight");
    cfg.lr = cj.at("lr");
    cfg.epochs = cj.at("epochs");
    cfg.decay_start = cj.at("decay_start");
    cfg.batch_size = cj.at("batch_size");
    cfg.seed = cj.at("seed");

    CycleGanBundle bundle = create(cfg);
    bundle.epoch = ckpt.header.at("epoch");
    bundle.cycle_loss_history =
        ckpt.header.at("cycle_loss_history").get<std::vector<double>>();

    auto restore = [&](const std::string& name, nn::Tensor& dst) {
        auto it = ckpt.tensors.find(name);
        if (it == ckpt.tensors.end())
            throw std::runtime_error("CycleGanBundle::load: missing tensor " + name);
        dst = it->second;
    };
    const std::pair<const char*, nn::Sequential*> nets[] = {
        {"g.", bundle.gen_noisy_to_clean.get()},
        {"gp.", bundle.gen_clean_to_noisy.get()},
        {"de.", bundle.disc_clean.get()},
        {"di.", bundle.disc_noisy.get()}};
    for (const auto& [prefix, net] : nets)
        net->visit_params(prefix, [&](const std::string& name, nn::Parameter& p) {
            restore(name, p.value);
        });

    const std::pair<const char*, nn::Adam*> opts[] = {{"adam.g.", bundle.gen_opt.get()},
                                                      {"adam.de.", bundle.disc_clean_opt.get()},
                                                      {"adam.di.", bundle.disc_noisy_opt.get()}};
    for (const auto& [prefix, opt] : opts) {
        std::vector<nn::Tensor> m(opt->first_moments().size()), v(opt->second_moments().size());
        for (size_t i = 0; i < m.size(); ++i) {
            restore(prefix + std::string("m.") + std::to_string(i), m[i]);
            restore(prefix + std::string("v.") + std::to_string(i), v[i]);
        }
        opt->restore_state(std::move(m), std::move(v),
                           ckpt.header.at(std::string(prefix) + "t").get<int64_t>());
    }
    return bundle;
}

}  // namespace pipetteloc
