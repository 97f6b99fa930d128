#pragma once

#include <memory>

#include "pipetteloc/heatmap.hpp"
#include "pipetteloc/nn/layers.hpp"
#include "pipetteloc/types.hpp"

namespace pipetteloc {

struct EncoderConfig {
    int patch_size = 16;
    int depth = 12;        // attention blocks
    int embed_dim = 768;   // token width
    int heads = 12;
    int head_channels = 256;
    int mlp_ratio = 4;

    void validate(int image_size) const;
};

struct DecoderConfig {
    int residual_depth = 18;     // 18 -> two basic blocks per stage, 10 -> one
    int base_width = 64;
    int max_tips = 4;
    int output_scale = 256;      // == image_size
    std::string stem = "imagenet";  // "imagenet": 7x7/2 + maxpool, "compact": 3x3/2
    int final_pool = 1;          // adaptive average-pool size feeding the FC

    void validate() const;
    std::vector<int> blocks_per_stage() const;
};

// Patch-token attention encoder ending in the heatmap head:
// 3x3 conv -> ReLU -> x16 bilinear upsample -> 1x1 conv -> sigmoid.
// The original classifier head is replaced by identity, so all patch tokens
// feed the head; there is no class token.
class CoarseEncoder : public nn::Module {
public:
    CoarseEncoder(const EncoderConfig& cfg, int image_size, Rng& rng);

    nn::Tensor forward(const nn::Tensor& images) override;  // (B,1,H,W) -> (B,1,H,W)
    nn::Tensor backward(const nn::Tensor& dheatmap) override;
    void visit_params(const std::string& prefix, const nn::ParamVisitor& fn) override;
    void for_each_child(const std::function<void(nn::Module&)>& fn) override;

    int token_count() const { return tokens_; }
    int token_dim() const { return cfg_.embed_dim; }

private:
    nn::Tensor patchify(const nn::Tensor& images) const;
    nn::Tensor unpatchify_grad(const nn::Tensor& dtokens, int B) const;

    EncoderConfig cfg_;
    int image_size_, grid_, tokens_;

    nn::Linear patch_embed_;
    nn::Parameter pos_embed_;  // (tokens, dim)
    std::vector<std::unique_ptr<nn::Module>> blocks_;
    nn::LayerNorm final_ln_;
    nn::Conv2d head_conv3_;
    nn::ReLU head_relu_;
    nn::BilinearUpsample head_up_;
    nn::Conv2d head_conv1_;
    nn::Sigmoid head_sigmoid_;
};

// Residual coordinate regressor: basic-block trunk, adaptive average pool,
// fully connected layer emitting 2*max_tips values squashed to [0, scale].
class FineDecoder : public nn::Module {
public:
    FineDecoder(const DecoderConfig& cfg, Rng& rng);

    nn::Tensor forward(const nn::Tensor& heatmaps) override;  // (B,1,H,W) -> (B, 2*max_tips)
    nn::Tensor backward(const nn::Tensor& dcoords) override;
    void visit_params(const std::string& prefix, const nn::ParamVisitor& fn) override;
    void visit_buffers(const std::string& prefix, const nn::BufferVisitor& fn) override;
    void for_each_child(const std::function<void(nn::Module&)>& fn) override;

    nn::Linear& final_fc() { return *fc_; }

private:
    DecoderConfig cfg_;
    nn::Sequential trunk_;
    nn::AdaptiveAvgPool2d pool_;
    std::unique_ptr<nn::Linear> fc_;
    nn::Sigmoid squash_;
    int fc_in_ = 0;
};

struct LocalizerModel {
    EncoderConfig encoder_config;
    DecoderConfig decoder_config;
    int image_size = 256;
    std::unique_ptr<CoarseEncoder> encoder;
    std::unique_ptr<FineDecoder> decoder;

    static LocalizerModel create(const EncoderConfig& enc, const DecoderConfig& dec,
                                 int image_size, uint64_t seed);
    static LocalizerModel small_preset(uint64_t seed);  // 64 px, depth-2 encoder

    void set_training(bool train);
    void save(const std::string& path) const;
    static LocalizerModel load(const std::string& path);
};

struct Prediction {
    Heatmap heatmap;
    std::vector<Vec2> tips;
};

Heatmap encode(const ImageGrid& image, LocalizerModel& model);
std::vector<Vec2> decode(const Heatmap& heatmap, LocalizerModel& model);
Prediction predict(const ImageGrid& image, LocalizerModel& model);

// Batch glue used by the trainer: ImageGrid <-> (B,1,H,W) float tensors.
nn::Tensor image_to_tensor(const ImageGrid& image);
ImageGrid tensor_to_image(const nn::Tensor& t, int batch_index = 0);
std::vector<Vec2> coords_from_tensor(const nn::Tensor& coords, int batch_index, int max_tips);

uint64_t parameter_checksum(nn::Module& m);

}  // namespace pipetteloc
