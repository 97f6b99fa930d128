#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "pipetteloc/nn/tensor.hpp"
#include "pipetteloc/rng.hpp"

namespace pipetteloc::nn {

struct Parameter {
    Tensor value;
    Tensor grad;  // lazily sized on first accumulation

    void ensure_grad() {
        if (!grad.same_shape(value)) grad.resize(value.shape());
    }
};

using ParamVisitor = std::function<void(const std::string&, Parameter&)>;
using BufferVisitor = std::function<void(const std::string&, Tensor&)>;

// Layer with explicit forward/backward. forward() caches whatever backward()
// needs while in training mode; eval-mode forwards keep no activations.
class Module {
public:
    virtual ~Module() = default;
    virtual Tensor forward(const Tensor& x) = 0;
    virtual Tensor backward(const Tensor& dy) = 0;

    virtual void visit_params(const std::string& prefix, const ParamVisitor& fn) {}
    // Non-trainable state (e.g. batchnorm running stats).
    virtual void visit_buffers(const std::string& prefix, const BufferVisitor& fn) {}
    virtual void for_each_child(const std::function<void(Module&)>& fn) {}

    void set_training(bool t) {
        training_ = t;
        for_each_child([t](Module& m) { m.set_training(t); });
    }
    bool training() const { return training_; }

    void zero_grad() {
        visit_params("", [](const std::string&, Parameter& p) {
            if (!p.grad.empty()) p.grad.zero();
        });
        for_each_child([](Module& m) { m.zero_grad(); });
    }

    int64_t parameter_count() {
        int64_t n = 0;
        visit_params("", [&](const std::string&, Parameter& p) { n += p.value.numel(); });
        return n;
    }

protected:
    bool training_ = true;
};

// ---------------------------------------------------------------------------

class Linear : public Module {
public:
    Linear(int in_features, int out_features, Rng& rng, float init_std = -1.0f,
           bool bias = true);

    Tensor forward(const Tensor& x) override;  // (..., in) -> (..., out)
    Tensor backward(const Tensor& dy) override;
    void visit_params(const std::string& prefix, const ParamVisitor& fn) override;

    Parameter weight;  // (out, in)
    Parameter bias;    // (out), empty when disabled
    int in_features, out_features;

private:
    Tensor cached_input_;
    std::vector<int> input_shape_;
};

enum class PadMode { zero, reflect };

class Conv2d : public Module {
public:
    Conv2d(int in_ch, int out_ch, int kernel, int stride, int pad, Rng& rng,
           PadMode pad_mode = PadMode::zero, bool bias = true, float init_std = -1.0f);

    Tensor forward(const Tensor& x) override;  // (B, Cin, H, W) -> (B, Cout, Ho, Wo)
    Tensor backward(const Tensor& dy) override;
    void visit_params(const std::string& prefix, const ParamVisitor& fn) override;

    Parameter weight;  // (out_ch, in_ch*k*k)
    Parameter bias;    // (out_ch)
    int in_ch, out_ch, kernel, stride, pad;
    PadMode pad_mode;

private:
    Tensor cached_input_;
    AlignedFloats col_;  // scratch, one sample at a time
};

class ConvTranspose2d : public Module {
public:
    ConvTranspose2d(int in_ch, int out_ch, int kernel, int stride, int pad, int output_pad,
                    Rng& rng, bool bias = true, float init_std = -1.0f);

    Tensor forward(const Tensor& x) override;  // upsamples by `stride`
    Tensor backward(const Tensor& dy) override;
    void visit_params(const std::string& prefix, const ParamVisitor& fn) override;

    Parameter weight;  // (in_ch, out_ch*k*k)
    Parameter bias;    // (out_ch)
    int in_ch, out_ch, kernel, stride, pad, output_pad;

private:
    Tensor cached_input_;
    AlignedFloats col_;
};

class BatchNorm2d : public Module {
public:
    BatchNorm2d(int channels, float eps = 1e-5f, float momentum = 0.1f);

    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& dy) override;
    void visit_params(const std::string& prefix, const ParamVisitor& fn) override;
    void visit_buffers(const std::string& prefix, const BufferVisitor& fn) override;

    Parameter gamma, beta;
    Tensor running_mean, running_var;
    int channels;
    float eps, momentum;

private:
    Tensor xhat_;
    std::vector<float> invstd_;
};

class InstanceNorm2d : public Module {
public:
    explicit InstanceNorm2d(int channels, float eps = 1e-5f);

    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& dy) override;

    int channels;
    float eps;

private:
    Tensor xhat_;
    std::vector<float> invstd_;  // per (b, c)
};

class LayerNorm : public Module {
public:
    explicit LayerNorm(int dim, float eps = 1e-6f);

    Tensor forward(const Tensor& x) override;  // normalizes the last axis
    Tensor backward(const Tensor& dy) override;
    void visit_params(const std::string& prefix, const ParamVisitor& fn) override;

    Parameter gamma, beta;
    int dim;
    float eps;

private:
    Tensor xhat_;
    std::vector<float> invstd_;
};

class ReLU : public Module {
public:
    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& dy) override;

private:
    Tensor mask_;
};

class LeakyReLU : public Module {
public:
    explicit LeakyReLU(float slope = 0.2f) : slope(slope) {}
    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& dy) override;
    float slope;

private:
    Tensor input_;
};

class Gelu : public Module {
public:
    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& dy) override;

private:
    Tensor input_;
};

class Sigmoid : public Module {
public:
    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& dy) override;

private:
    Tensor output_;
};

class Tanh : public Module {
public:
    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& dy) override;

private:
    Tensor output_;
};

class MultiHeadSelfAttention : public Module {
public:
    MultiHeadSelfAttention(int dim, int heads, Rng& rng);

    Tensor forward(const Tensor& x) override;  // (B, N, D)
    Tensor backward(const Tensor& dy) override;
    void visit_params(const std::string& prefix, const ParamVisitor& fn) override;
    void for_each_child(const std::function<void(Module&)>& fn) override;

    int dim, heads, head_dim;
    Linear qkv;
    Linear proj;

private:
    Tensor qkv_out_;   // (B, N, 3D)
    Tensor attn_;      // (B, heads, N, N) softmax weights
};

// Half-pixel-center bilinear upsampling by an integer factor.
class BilinearUpsample : public Module {
public:
    explicit BilinearUpsample(int scale) : scale(scale) {}
    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& dy) override;
    int scale;

private:
    std::vector<int> in_shape_;
};

class MaxPool2d : public Module {
public:
    MaxPool2d(int kernel, int stride, int pad) : kernel(kernel), stride(stride), pad(pad) {}
    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& dy) override;
    int kernel, stride, pad;

private:
    std::vector<int> argmax_;
    std::vector<int> in_shape_;
};

class AdaptiveAvgPool2d : public Module {
public:
    explicit AdaptiveAvgPool2d(int out_size) : out_size(out_size) {}
    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& dy) override;
    int out_size;

private:
    std::vector<int> in_shape_;
};

class Sequential : public Module {
public:
    Sequential() = default;
    template <typename M, typename... Args>
    M* emplace(Args&&... args) {
        auto m = std::make_unique<M>(std::forward<Args>(args)...);
        M* raw = m.get();
        modules_.push_back(std::move(m));
        return raw;
    }
    void push(std::unique_ptr<Module> m) { modules_.push_back(std::move(m)); }

    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& dy) override;
    void visit_params(const std::string& prefix, const ParamVisitor& fn) override;
    void visit_buffers(const std::string& prefix, const BufferVisitor& fn) override;
    void for_each_child(const std::function<void(Module&)>& fn) override;

    size_t size() const { return modules_.size(); }
    Module& at(size_t i) { return *modules_[i]; }

private:
    std::vector<std::unique_ptr<Module>> modules_;
};

// Row-wise softmax over the last axis, with its backward. Used by attention
// and exposed for tests.
void softmax_rows(float* data, int rows, int cols);
void softmax_backward_rows(const float* y, const float* dy, float* dx, int rows, int cols);

}  // namespace pipetteloc::nn
