#include "pipetteloc/localizer.hpp"

#include <cmath>

#include "pipetteloc/nn/serialize.hpp"

namespace pipetteloc {

using nn::Tensor;

void EncoderConfig::validate(int image_size) const {
    if (patch_size <= 0 || image_size % patch_size != 0)
        throw std::invalid_argument("EncoderConfig: image size not divisible by patch size");
    if (embed_dim % heads != 0)
        throw std::invalid_argument("EncoderConfig: embed_dim not divisible by heads");
    if (depth < 1 || head_channels < 1 || mlp_ratio < 1)
        throw std::invalid_argument("EncoderConfig: depth, head_channels, mlp_ratio must be >= 1");
}

void DecoderConfig::validate() const {
    if (max_tips < 1) throw std::invalid_argument("DecoderConfig: max_tips must be >= 1");
    if (residual_depth != 18 && residual_depth != 10)
        throw std::invalid_argument("DecoderConfig: residual_depth must be 10 or 18");
    if (base_width < 1) throw std::invalid_argument("DecoderConfig: base_width must be >= 1");
    if (stem != "imagenet" && stem != "compact")
        throw std::invalid_argument("DecoderConfig: stem must be 'imagenet' or 'compact'");
    if (final_pool < 1) throw std::invalid_argument("DecoderConfig: final_pool must be >= 1");
    if (output_scale < 1) throw std::invalid_argument("DecoderConfig: output_scale must be >= 1");
}

std::vector<int> DecoderConfig::blocks_per_stage() const {
    return residual_depth == 18 ? std::vector<int>{2, 2, 2, 2} : std::vector<int>{1, 1, 1, 1};
}

namespace {

// Pre-norm transformer block: x + MSA(LN(x)), then u + MLP(LN(u)).
class VitBlock : public nn::Module {
public:
    VitBlock(int dim, int heads, int mlp_ratio, Rng& rng)
        : ln1_(dim),
          attn_(dim, heads, rng),
          ln2_(dim),
          fc1_(dim, mlp_ratio * dim, rng, 0.02f),
          fc2_(mlp_ratio * dim, dim, rng, 0.02f) {}

    Tensor forward(const Tensor& x) override {
        Tensor u = attn_.forward(ln1_.forward(x));
        for (int64_t i = 0; i < u.numel(); ++i) u[i] += x[i];
        Tensor m = fc2_.forward(act_.forward(fc1_.forward(ln2_.forward(u))));
        for (int64_t i = 0; i < m.numel(); ++i) m[i] += u[i];
        return m;
    }

    Tensor backward(const Tensor& dy) override {
        Tensor du = ln2_.backward(fc1_.backward(act_.backward(fc2_.backward(dy))));
        for (int64_t i = 0; i < du.numel(); ++i) du[i] += dy[i];
        Tensor dx = ln1_.backward(attn_.backward(du));
        for (int64_t i = 0; i < dx.numel(); ++i) dx[i] += du[i];
        return dx;
    }

    void visit_params(const std::string& prefix, const nn::ParamVisitor& fn) override {
        ln1_.visit_params(prefix + "ln1.", fn);
        attn_.visit_params(prefix + "attn.", fn);
        ln2_.visit_params(prefix + "ln2.", fn);
        fc1_.visit_params(prefix + "mlp.fc1.", fn);
        fc2_.visit_params(prefix + "mlp.fc2.", fn);
    }

    void for_each_child(const std::function<void(nn::Module&)>& fn) override {
        fn(ln1_);
        fn(attn_);
        fn(ln2_);
        fn(fc1_);
        fn(act_);
        fn(fc2_);
    }

private:
    nn::LayerNorm ln1_;
    nn::MultiHeadSelfAttention attn_;
    nn::LayerNorm ln2_;
    nn::Linear fc1_;
    nn::Gelu act_;
    nn::Linear fc2_;
};

class BasicBlock : public nn::Module {
public:
    BasicBlock(int in_ch, int out_ch, int stride, Rng& rng)
        : conv1_(in_ch, out_ch, 3, stride, 1, rng, nn::PadMode::zero, false),
          bn1_(out_ch),
          conv2_(out_ch, out_ch, 3, 1, 1, rng, nn::PadMode::zero, false),
          bn2_(out_ch) {
        if (stride != 1 || in_ch != out_ch) {
            down_conv_ = std::make_unique<nn::Conv2d>(in_ch, out_ch, 1, stride, 0, rng,
                                                      nn::PadMode::zero, false);
            down_bn_ = std::make_unique<nn::BatchNorm2d>(out_ch);
        }
    }

    Tensor forward(const Tensor& x) override {
        Tensor main = bn2_.forward(conv2_.forward(relu1_.forward(bn1_.forward(conv1_.forward(x)))));
        Tensor skip = down_conv_ ? down_bn_->forward(down_conv_->forward(x)) : x;
        for (int64_t i = 0; i < main.numel(); ++i) main[i] += skip[i];
        return relu2_.forward(main);
    }

    Tensor backward(const Tensor& dy) override {
        Tensor dsum = relu2_.backward(dy);
        Tensor dmain = conv1_.backward(bn1_.backward(relu1_.backward(conv2_.backward(bn2_.backward(dsum)))));
        Tensor dskip = down_conv_ ? down_conv_->backward(down_bn_->backward(dsum)) : dsum;
        for (int64_t i = 0; i < dmain.numel(); ++i) dmain[i] += dskip[i];
        return dmain;
    }

    void visit_params(const std::string& prefix, const nn::ParamVisitor& fn) override {
        conv1_.visit_params(prefix + "conv1.", fn);
        bn1_.visit_params(prefix + "bn1.", fn);
        conv2_.visit_params(prefix + "conv2.", fn);
        bn2_.visit_params(prefix + "bn2.", fn);
        if (down_conv_) {
            down_conv_->visit_params(prefix + "down.conv.", fn);
            down_bn_->visit_params(prefix + "down.bn.", fn);
        }
    }

    void visit_buffers(const std::string& prefix, const nn::BufferVisitor& fn) override {
        bn1_.visit_buffers(prefix + "bn1.", fn);
        bn2_.visit_buffers(prefix + "bn2.", fn);
        if (down_bn_) down_bn_->visit_buffers(prefix + "down.bn.", fn);
    }

    void for_each_child(const std::function<void(nn::Module&)>& fn) override {
        fn(conv1_);
        fn(bn1_);
        fn(relu1_);
        fn(conv2_);
        fn(bn2_);
        fn(relu2_);
        if (down_conv_) {
            fn(*down_conv_);
            fn(*down_bn_);
        }
    }

private:
    nn::Conv2d conv1_;
    nn::BatchNorm2d bn1_;
    nn::ReLU relu1_;
    nn::Conv2d conv2_;
    nn::BatchNorm2d bn2_;
    nn::ReLU relu2_;
    std::unique_ptr<nn::Conv2d> down_conv_;
    std::unique_ptr<nn::BatchNorm2d> down_bn_;
};

}  // namespace

// --------------------------------------------------------------------------- CoarseEncoder

CoarseEncoder::CoarseEncoder(const EncoderConfig& cfg, int image_size, Rng& rng)
    : cfg_(cfg),
      image_size_(image_size),
      grid_(image_size / cfg.patch_size),
      tokens_(grid_ * grid_),
      patch_embed_(3 * cfg.patch_size * cfg.patch_size, cfg.embed_dim, rng, 0.02f),
      final_ln_(cfg.embed_dim),
      head_conv3_(cfg.embed_dim, cfg.head_channels, 3, 1, 1, rng),
      head_up_(cfg.patch_size),
      head_conv1_(cfg.head_channels, 1, 1, 1, 0, rng) {
    cfg.validate(image_size);
    pos_embed_.value.resize({tokens_, cfg.embed_dim});
    for (int64_t i = 0; i < pos_embed_.value.numel(); ++i) {
        float v = static_cast<float>(rng.normal(0.0, 0.02));
        while (std::abs(v) > 0.04f) v = static_cast<float>(rng.normal(0.0, 0.02));
        pos_embed_.value[i] = v;
    }
    for (int i = 0; i < cfg.depth; ++i)
        blocks_.push_back(std::make_unique<VitBlock>(cfg.embed_dim, cfg.heads, cfg.mlp_ratio, rng));
}

Tensor CoarseEncoder::patchify(const Tensor& images) const {
    const int B = images.dim(0), H = images.dim(2), W = images.dim(3);
    const int P = cfg_.patch_size;
    const int gw = W / P;
    Tensor tokens({B, tokens_, 3 * P * P});
    // Grayscale input replicated to 3 channels, channel-major within a token.
    for (int b = 0; b < B; ++b) {
        const float* img = images.data() + static_cast<size_t>(b) * H * W;
        for (int ty = 0; ty < grid_; ++ty)
            for (int tx = 0; tx < gw; ++tx) {
                float* tok = tokens.data() +
                             (static_cast<size_t>(b) * tokens_ + ty * gw + tx) * 3 * P * P;
                for (int py = 0; py < P; ++py)
                    for (int px = 0; px < P; ++px) {
                        const float v = img[(ty * P + py) * W + tx * P + px];
                        const int i = py * P + px;
                        tok[i] = v;
                        tok[P * P + i] = v;
                        tok[2 * P * P + i] = v;
                    }
            }
    }
    return tokens;
}

Tensor CoarseEncoder::unpatchify_grad(const Tensor& dtokens, int B) const {
    const int P = cfg_.patch_size;
    Tensor dimg({B, 1, image_size_, image_size_});
    for (int b = 0; b < B; ++b) {
        float* img = dimg.data() + static_cast<size_t>(b) * image_size_ * image_size_;
        for (int ty = 0; ty < grid_; ++ty)
            for (int tx = 0; tx < grid_; ++tx) {
                const float* tok = dtokens.data() +
                                   (static_cast<size_t>(b) * tokens_ + ty * grid_ + tx) * 3 * P * P;
                for (int py = 0; py < P; ++py)
                    for (int px = 0; px < P; ++px) {
                        const int i = py * P + px;
                        img[(ty * P + py) * image_size_ + tx * P + px] =
                            tok[i] + tok[P * P + i] + tok[2 * P * P + i];
                    }
            }
    }
    return dimg;
}

Tensor CoarseEncoder::forward(const Tensor& images) {
    const int B = images.dim(0);
    if (images.dim(2) != image_size_ || images.dim(3) != image_size_)
        throw std::invalid_argument("CoarseEncoder: image size mismatch");
    if (images.dim(2) % cfg_.patch_size != 0)
        throw std::invalid_argument("CoarseEncoder: dimensions not divisible by patch size");

    Tensor x = patch_embed_.forward(patchify(images));  // (B, N, d)
    const int64_t nd = static_cast<int64_t>(tokens_) * cfg_.embed_dim;
    for (int b = 0; b < B; ++b)
        for (int64_t i = 0; i < nd; ++i) x[b * nd + i] += pos_embed_.value[i];

    for (auto& block : blocks_) x = block->forward(x);
    x = final_ln_.forward(x);

    // Tokens back to a (B, d, h, w) map for the heatmap head.
    Tensor fmap({B, cfg_.embed_dim, grid_, grid_});
    for (int b = 0; b < B; ++b)
        for (int t = 0; t < tokens_; ++t)
            for (int c = 0; c < cfg_.embed_dim; ++c)
                fmap[((static_cast<int64_t>(b) * cfg_.embed_dim + c) * grid_ + t / grid_) * grid_ +
                     t % grid_] = x[(static_cast<int64_t>(b) * tokens_ + t) * cfg_.embed_dim + c];

    Tensor h = head_conv3_.forward(fmap);
    h = head_relu_.forward(h);
    h = head_up_.forward(h);
    h = head_conv1_.forward(h);
    return head_sigmoid_.forward(h);
}

Tensor CoarseEncoder::backward(const Tensor& dheatmap) {
    const int B = dheatmap.dim(0);
    Tensor dh = head_sigmoid_.backward(dheatmap);
    dh = head_conv1_.backward(dh);
    dh = head_up_.backward(dh);
    dh = head_relu_.backward(dh);
    Tensor dfmap = head_conv3_.backward(dh);

    Tensor dx({B, tokens_, cfg_.embed_dim});
    for (int b = 0; b < B; ++b)
        for (int t = 0; t < tokens_; ++t)
            for (int c = 0; c < cfg_.embed_dim; ++c)
                dx[(static_cast<int64_t>(b) * tokens_ + t) * cfg_.embed_dim + c] =
                    dfmap[((static_cast<int64_t>(b) * cfg_.embed_dim + c) * grid_ + t / grid_) *
                              grid_ +
                          t % grid_];

    dx = final_ln_.backward(dx);
    for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) dx = (*it)->backward(dx);

    pos_embed_.ensure_grad();
    const int64_t nd = static_cast<int64_t>(tokens_) * cfg_.embed_dim;
    for (int b = 0; b < B; ++b)
        for (int64_t i = 0; i < nd; ++i) pos_embed_.grad[i] += dx[b * nd + i];

    return unpatchify_grad(patch_embed_.backward(dx), B);
}

void CoarseEncoder::visit_params(const std::string& prefix, const nn::ParamVisitor& fn) {
    patch_embed_.visit_params(prefix + "patch_embed.", fn);
    fn(prefix + "pos_embed", pos_embed_);
    for (size_t i = 0; i < blocks_.size(); ++i)
        blocks_[i]->visit_params(prefix + "blocks." + std::to_string(i) + ".", fn);
    final_ln_.visit_params(prefix + "final_ln.", fn);
    head_conv3_.visit_params(prefix + "head.conv3.", fn);
    head_conv1_.visit_params(prefix + "head.conv1.", fn);
}

void CoarseEncoder::for_each_child(const std::function<void(nn::Module&)>& fn) {
    fn(patch_embed_);
    for (auto& b : blocks_) fn(*b);
    fn(final_ln_);
    fn(head_conv3_);
    fn(head_relu_);
    fn(head_up_);
    fn(head_conv1_);
    fn(head_sigmoid_);
}

// --------------------------------------------------------------------------- FineDecoder

FineDecoder::FineDecoder(const DecoderConfig& cfg, Rng& rng) : cfg_(cfg), pool_(cfg.final_pool) {
    cfg.validate();
    const int w = cfg.base_width;
    if (cfg.stem == "imagenet") {
        trunk_.emplace<nn::Conv2d>(1, w, 7, 2, 3, rng, nn::PadMode::zero, false);
        trunk_.emplace<nn::BatchNorm2d>(w);
        trunk_.emplace<nn::ReLU>();
        trunk_.emplace<nn::MaxPool2d>(3, 2, 1);
    } else {
        trunk_.emplace<nn::Conv2d>(1, w, 3, 2, 1, rng, nn::PadMode::zero, false);
        trunk_.emplace<nn::BatchNorm2d>(w);
        trunk_.emplace<nn::ReLU>();
    }
    const std::vector<int> blocks = cfg.blocks_per_stage();
    int in_ch = w;
    for (size_t stage = 0; stage < blocks.size(); ++stage) {
        const int out_ch = w << stage;
        const int stride = stage == 0 ? 1 : 2;
        for (int b = 0; b < blocks[stage]; ++b) {
            trunk_.emplace<BasicBlock>(in_ch, out_ch, b == 0 ? stride : 1, rng);
            in_ch = out_ch;
        }
    }
    fc_in_ = in_ch * cfg.final_pool * cfg.final_pool;
    fc_ = std::make_unique<nn::Linear>(fc_in_, 2 * cfg.max_tips, rng, 0.01f);
}

Tensor FineDecoder::forward(const Tensor& heatmaps) {
    if (heatmaps.dim(1) != 1)
        throw std::invalid_argument("FineDecoder: expects a single-channel heatmap");
    Tensor x = pool_.forward(trunk_.forward(heatmaps));
    const int B = x.dim(0);
    Tensor flat({B, fc_in_});
    std::copy(x.data(), x.data() + x.numel(), flat.data());
    Tensor raw = fc_->forward(flat);
    Tensor squashed = squash_.forward(raw);
    for (int64_t i = 0; i < squashed.numel(); ++i)
        squashed[i] *= static_cast<float>(cfg_.output_scale);
    return squashed;  // (B, 2*max_tips), values in [0, output_scale]
}

Tensor FineDecoder::backward(const Tensor& dcoords) {
    Tensor dsq(dcoords.shape());
    for (int64_t i = 0; i < dcoords.numel(); ++i)
        dsq[i] = dcoords[i] * static_cast<float>(cfg_.output_scale);
    Tensor dflat = fc_->backward(squash_.backward(dsq));
    const int B = dflat.dim(0);
    const int ch = fc_in_ / (cfg_.final_pool * cfg_.final_pool);
    Tensor dpooled({B, ch, cfg_.final_pool, cfg_.final_pool});
    std::copy(dflat.data(), dflat.data() + dflat.numel(), dpooled.data());
    return trunk_.backward(pool_.backward(dpooled));
}

void FineDecoder::visit_params(const std::string& prefix, const nn::ParamVisitor& fn) {
    trunk_.visit_params(prefix + "trunk.", fn);
    fc_->visit_params(prefix + "fc.", fn);
}

void FineDecoder::visit_buffers(const std::string& prefix, const nn::BufferVisitor& fn) {
    trunk_.visit_buffers(prefix + "trunk.", fn);
}

void FineDecoder::for_each_child(const std::function<void(nn::Module&)>& fn) {
    fn(trunk_);
    fn(pool_);
    fn(*fc_);
    fn(squash_);
}

// --------------------------------------------------------------------------- LocalizerModel

LocalizerModel LocalizerModel::create(const EncoderConfig& enc, const DecoderConfig& dec,
                                      int image_size, uint64_t seed) {
    enc.validate(image_size);
    dec.validate();
    if (dec.output_scale != image_size)
        throw std::invalid_argument("LocalizerModel: decoder output_scale must equal image size");
    LocalizerModel model;
    model.encoder_config = enc;
    model.decoder_config = dec;
    model.image_size = image_size;
    Rng rng(Rng::mix(seed, 0x10ca112e5ULL));
    model.encoder = std::make_unique<CoarseEncoder>(enc, image_size, rng);
    model.decoder = std::make_unique<FineDecoder>(dec, rng);
    return model;
}

LocalizerModel LocalizerModel::small_preset(uint64_t seed) {
    EncoderConfig enc;
    enc.patch_size = 8;  // keeps the paper's patch-to-image ratio at 64 px
    enc.depth = 2;
    enc.embed_dim = 64;
    enc.heads = 4;
    enc.head_channels = 64;
    DecoderConfig dec;
    dec.residual_depth = 10;
    dec.base_width = 16;
    dec.output_scale = 64;
    dec.stem = "compact";
    dec.final_pool = 4;
    return create(enc, dec, 64, seed);
}

void LocalizerModel::set_training(bool train) {
    encoder->set_training(train);
    decoder->set_training(train);
}

void LocalizerModel::save(const std::string& path) const {
    nn::Checkpoint ckpt;
    ckpt.header["kind"] = "localizer";
    ckpt.header["image_size"] = image_size;
    ckpt.header["encoder_config"] = {{"patch_size", encoder_config.patch_size},
                                     {"depth", encoder_config.depth},
                                     {"embed_dim", encoder_config.embed_dim},
                                     {"heads", encoder_config.heads},
                                     {"head_channels", encoder_config.head_channels},
                                     {"mlp_ratio", encoder_config.mlp_ratio}};
    ckpt.header["decoder_config"] = {{"residual_depth", decoder_config.residual_depth},
                                     {"base_width", decoder_config.base_width},
                                     {"max_tips", decoder_config.max_tips},
                                     {"output_scale", decoder_config.output_scale},
                                     {"stem", decoder_config.stem},
                                     {"final_pool", decoder_config.final_pool}};
    encoder->visit_params("encoder.", [&](const std::string& name, nn::Parameter& p) {
        ckpt.tensors.emplace(name, p.value);
    });
    decoder->visit_params("decoder.", [&](const std::string& name, nn::Parameter& p) {
        ckpt.tensors.emplace(name, p.value);
    });
    decoder->visit_buffers("decoder.", [&](const std::string& name, nn::Tensor& t) {
        ckpt.tensors.emplace(name, t);
    });
    nn::save_checkpoint(path, ckpt);
}

LocalizerModel LocalizerModel::load(const std::string& path) {
    nn::Checkpoint ckpt = nn::load_checkpoint(path);
    if (ckpt.header.value("kind", "") != "localizer")
        throw std::runtime_error("LocalizerModel::load: not a localizer checkpoint: " + path);
    EncoderConfig enc;
    const auto& ej = ckpt.header.at("encoder_config");
    enc.patch_size = ej.at("patch_size");
    enc.depth = ej.at("depth");
    enc.embed_dim = ej.at("embed_dim");
    enc.heads = ej.at("heads");
    enc.head_channels = ej.at("head_channels");
    enc.mlp_ratio = ej.at("mlp_ratio");
    DecoderConfig dec;
    const auto& dj = ckpt.header.at("decoder_config");
    dec.residual_depth = dj.at("residual_depth");
    dec.base_width = dj.at("base_width");
    dec.max_tips = dj.at("max_tips");
    dec.output_scale = dj.at("output_scale");
    dec.stem = dj.at("stem");
    dec.final_pool = dj.at("final_pool");

    LocalizerModel model = create(enc, dec, ckpt.header.at("image_size"), 0);
    auto restore = [&](const std::string& name, nn::Tensor& dst) {
        auto it = ckpt.tensors.find(name);
        if (it == ckpt.tensors.end())
            throw std::runtime_error("LocalizerModel::load: missing tensor " + name);
        if (it->second.shape() != dst.shape())
            throw std::runtime_error("LocalizerModel::load: shape mismatch for " + name);
        dst = it->second;
    };
    model.encoder->visit_params("encoder.", [&](const std::string& name, nn::Parameter& p) {
        restore(name, p.value);
    });
    model.decoder->visit_params("decoder.", [&](const std::string& name, nn::Parameter& p) {
        restore(name, p.value);
    });
    model.decoder->visit_buffers("decoder.", [&](const std::string& name, nn::Tensor& t) {
        restore(name, t);
    });
    return model;
}

// --------------------------------------------------------------------------- glue

nn::Tensor image_to_tensor(const ImageGrid& image) {
    Tensor t({1, 1, image.height, image.width});
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<float>(image.values[i]);
    return t;
}

ImageGrid tensor_to_image(const nn::Tensor& t, int batch_index) {
    const int H = t.dim(2), W = t.dim(3);
    ImageGrid img(H, W);
    const float* src = t.data() + static_cast<size_t>(batch_index) * H * W;
    for (size_t i = 0; i < img.values.size(); ++i) img.values[i] = src[i];
    return img;
}

std::vector<Vec2> coords_from_tensor(const nn::Tensor& coords, int batch_index, int max_tips) {
    std::vector<Vec2> tips(max_tips);
    const float* src = coords.data() + static_cast<size_t>(batch_index) * 2 * max_tips;
    for (int i = 0; i < max_tips; ++i) tips[i] = {src[2 * i], src[2 * i + 1]};
    return tips;
}

Heatmap encode(const ImageGrid& image, LocalizerModel& model) {
    Tensor out = model.encoder->forward(image_to_tensor(image));
    return tensor_to_image(out, 0);
}

std::vector<Vec2> decode(const Heatmap& heatmap, LocalizerModel& model) {
    Tensor in({1, 1, heatmap.height, heatmap.width});
    for (int64_t i = 0; i < in.numel(); ++i) in[i] = static_cast<float>(heatmap.values[i]);
    Tensor out = model.decoder->forward(in);
    return coords_from_tensor(out, 0, model.decoder_config.max_tips);
}

Prediction predict(const ImageGrid& image, LocalizerModel& model) {
    Prediction pred;
    pred.heatmap = encode(image, model);
    pred.tips = decode(pred.heatmap, model);
    return pred;
}

uint64_t parameter_checksum(nn::Module& m) {
    uint64_t h = 1469598103934665603ULL;  // FNV-1a
    m.visit_params("", [&](const std::string&, nn::Parameter& p) {
        const auto* bytes = reinterpret_cast<const unsigned char*>(p.value.data());
        const size_t n = static_cast<size_t>(p.value.numel()) * sizeof(float);
        for (size_t i = 0; i < n; ++i) {
            h ^= bytes[i];
            h *= 1099511628211ULL;
        }
    });
    return h;
}

}  // namespace pipetteloc
