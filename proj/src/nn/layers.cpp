#include "pipetteloc/nn/layers.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>

namespace pipetteloc::nn {

namespace {

using MatRM = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<MatRM>;
using CMapM = Eigen::Map<const MatRM>;
using StrideT = Eigen::OuterStride<Eigen::Dynamic>;
using SMapM = Eigen::Map<MatRM, 0, StrideT>;
using CSMapM = Eigen::Map<const MatRM, 0, StrideT>;

float normal_sample(Rng& rng, float std) { return static_cast<float>(rng.normal(0.0, std)); }

void init_normal(Tensor& t, Rng& rng, float std) {
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = normal_sample(rng, std);
}

void init_trunc_normal(Tensor& t, Rng& rng, float std) {
    for (int64_t i = 0; i < t.numel(); ++i) {
        float v = normal_sample(rng, std);
        while (std::abs(v) > 2.0f * std) v = normal_sample(rng, std);
        t[i] = v;
    }
}

void init_uniform(Tensor& t, Rng& rng, float bound) {
    for (int64_t i = 0; i < t.numel(); ++i)
        t[i] = static_cast<float>(rng.uniform(-bound, bound));
}

inline int reflect_index(int i, int n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * n - 2 - i;
    return i;
}

int conv_out_size(int in, int kernel, int stride, int pad) {
    return (in + 2 * pad - kernel) / stride + 1;
}

// col has shape (C*k*k, Ho*Wo), row-major.
void im2col(const float* x, int C, int H, int W, int k, int stride, int pad, PadMode mode,
            float* col) {
    const int Ho = conv_out_size(H, k, stride, pad);
    const int Wo = conv_out_size(W, k, stride, pad);
    const int plane = H * W;
    const int out_plane = Ho * Wo;
    for (int c = 0; c < C; ++c) {
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                float* dst = col + (static_cast<size_t>(c) * k * k + ky * k + kx) * out_plane;
                const float* src = x + static_cast<size_t>(c) * plane;
                for (int oy = 0; oy < Ho; ++oy) {
                    int iy = oy * stride - pad + ky;
                    if (mode == PadMode::reflect) iy = reflect_index(iy, H);
                    const bool row_ok = iy >= 0 && iy < H;
                    for (int ox = 0; ox < Wo; ++ox) {
                        int ix = ox * stride - pad + kx;
                        if (mode == PadMode::reflect) ix = reflect_index(ix, W);
                        dst[oy * Wo + ox] =
                            (row_ok && ix >= 0 && ix < W) ? src[iy * W + ix] : 0.0f;
                    }
                }
            }
        }
    }
}

// Scatter-add transpose of im2col.
void col2im_add(const float* col, int C, int H, int W, int k, int stride, int pad, PadMode mode,
                float* x) {
    const int Ho = conv_out_size(H, k, stride, pad);
    const int Wo = conv_out_size(W, k, stride, pad);
    const int plane = H * W;
    const int out_plane = Ho * Wo;
    for (int c = 0; c < C; ++c) {
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                const float* src = col + (static_cast<size_t>(c) * k * k + ky * k + kx) * out_plane;
                float* dst = x + static_cast<size_t>(c) * plane;
                for (int oy = 0; oy < Ho; ++oy) {
                    int iy = oy * stride - pad + ky;
                    if (mode == PadMode::reflect) iy = reflect_index(iy, H);
                    if (iy < 0 || iy >= H) continue;
                    for (int ox = 0; ox < Wo; ++ox) {
                        int ix = ox * stride - pad + kx;
                        if (mode == PadMode::reflect) ix = reflect_index(ix, W);
                        if (ix < 0 || ix >= W) continue;
                        dst[iy * W + ix] += src[oy * Wo + ox];
                    }
                }
            }
        }
    }
}

}  // namespace

// --------------------------------------------------------------------------- Linear

Linear::Linear(int in_f, int out_f, Rng& rng, float init_std, bool with_bias)
    : in_features(in_f), out_features(out_f) {
    weight.value.resize({out_f, in_f});
    if (init_std > 0.0f) {
        init_trunc_normal(weight.value, rng, init_std);
    } else {
        init_uniform(weight.value, rng, 1.0f / std::sqrt(static_cast<float>(in_f)));
    }
    if (with_bias) bias.value.resize({out_f});
}

Tensor Linear::forward(const Tensor& x) {
    if (x.numel() % in_features != 0)
        throw std::invalid_argument("Linear: input not divisible by in_features");
    const int rows = static_cast<int>(x.numel() / in_features);
    std::vector<int> out_shape = x.shape();
    out_shape.back() = out_features;
    Tensor y(out_shape);

    CMapM xm(x.data(), rows, in_features);
    CMapM wm(weight.value.data(), out_features, in_features);
    MapM ym(y.data(), rows, out_features);
    ym.noalias() = xm * wm.transpose();
    if (!bias.value.empty()) {
        Eigen::Map<const Eigen::VectorXf> bm(bias.value.data(), out_features);
        ym.rowwise() += bm.transpose();
    }
    if (training_) {
        cached_input_ = x;
        input_shape_ = x.shape();
    }
    return y;
}

Tensor Linear::backward(const Tensor& dy) {
    const int rows = static_cast<int>(dy.numel() / out_features);
    weight.ensure_grad();
    CMapM dym(dy.data(), rows, out_features);
    CMapM xm(cached_input_.data(), rows, in_features);
    MapM dwm(weight.grad.data(), out_features, in_features);
    dwm.noalias() += dym.transpose() * xm;
    if (!bias.value.empty()) {
        bias.ensure_grad();
        Eigen::Map<Eigen::VectorXf> dbm(bias.grad.data(), out_features);
        dbm += dym.colwise().sum().transpose();
    }
    Tensor dx(input_shape_);
    MapM dxm(dx.data(), rows, in_features);
    CMapM wm(weight.value.data(), out_features, in_features);
    dxm.noalias() = dym * wm;
    return dx;
}

void Linear::visit_params(const std::string& prefix, const ParamVisitor& fn) {
    fn(prefix + "weight", weight);
    if (!bias.value.empty()) fn(prefix + "bias", bias);
}

// --------------------------------------------------------------------------- Conv2d

Conv2d::Conv2d(int in_c, int out_c, int k, int s, int p, Rng& rng, PadMode mode, bool with_bias,
               float init_std)
    : in_ch(in_c), out_ch(out_c), kernel(k), stride(s), pad(p), pad_mode(mode) {
    weight.value.resize({out_c, in_c * k * k});
    const float std =
        init_std > 0.0f ? init_std : std::sqrt(2.0f / static_cast<float>(k * k * out_c));
    init_normal(weight.value, rng, std);
    if (with_bias) bias.value.resize({out_c});
}

Tensor Conv2d::forward(const Tensor& x) {
    const int B = x.dim(0), H = x.dim(2), W = x.dim(3);
    if (x.dim(1) != in_ch) throw std::invalid_argument("Conv2d: channel mismatch");
    const int Ho = conv_out_size(H, kernel, stride, pad);
    const int Wo = conv_out_size(W, kernel, stride, pad);
    const int K = in_ch * kernel * kernel;
    Tensor y({B, out_ch, Ho, Wo});
    col_.resize(static_cast<size_t>(K) * Ho * Wo);

    CMapM wm(weight.value.data(), out_ch, K);
    for (int b = 0; b < B; ++b) {
        im2col(x.data() + static_cast<size_t>(b) * in_ch * H * W, in_ch, H, W, kernel, stride,
               pad, pad_mode, col_.data());
        CMapM cm(col_.data(), K, Ho * Wo);
        MapM ym(y.data() + static_cast<size_t>(b) * out_ch * Ho * Wo, out_ch, Ho * Wo);
        ym.noalias() = wm * cm;
        if (!bias.value.empty())
            for (int c = 0; c < out_ch; ++c) ym.row(c).array() += bias.value[c];
    }
    if (training_) cached_input_ = x;
    return y;
}

Tensor Conv2d::backward(const Tensor& dy) {
    const Tensor& x = cached_input_;
    const int B = x.dim(0), H = x.dim(2), W = x.dim(3);
    const int Ho = dy.dim(2), Wo = dy.dim(3);
    const int K = in_ch * kernel * kernel;
    weight.ensure_grad();
    if (!bias.value.empty()) bias.ensure_grad();

    Tensor dx({B, in_ch, H, W});
    AlignedFloats dcol(static_cast<size_t>(K) * Ho * Wo);
    CMapM wm(weight.value.data(), out_ch, K);
    MapM dwm(weight.grad.data(), out_ch, K);
    for (int b = 0; b < B; ++b) {
        im2col(x.data() + static_cast<size_t>(b) * in_ch * H * W, in_ch, H, W, kernel, stride,
               pad, pad_mode, col_.data());
        CMapM cm(col_.data(), K, Ho * Wo);
        CMapM dym(dy.data() + static_cast<size_t>(b) * out_ch * Ho * Wo, out_ch, Ho * Wo);
        dwm.noalias() += dym * cm.transpose();
        if (!bias.value.empty())
            for (int c = 0; c < out_ch; ++c) bias.grad[c] += dym.row(c).sum();
        MapM dcm(dcol.data(), K, Ho * Wo);
        dcm.noalias() = wm.transpose() * dym;
        col2im_add(dcol.data(), in_ch, H, W, kernel, stride, pad, pad_mode,
                   dx.data() + static_cast<size_t>(b) * in_ch * H * W);
    }
    return dx;
}

void Conv2d::visit_params(const std::string& prefix, const ParamVisitor& fn) {
    fn(prefix + "weight", weight);
    if (!bias.value.empty()) fn(prefix + "bias", bias);
}

// --------------------------------------------------------------------------- ConvTranspose2d

ConvTranspose2d::ConvTranspose2d(int in_c, int out_c, int k, int s, int p, int op, Rng& rng,
                                 bool with_bias, float init_std)
    : in_ch(in_c), out_ch(out_c), kernel(k), stride(s), pad(p), output_pad(op) {
    weight.value.resize({in_c, out_c * k * k});
    const float std =
        init_std > 0.0f ? init_std : std::sqrt(2.0f / static_cast<float>(k * k * out_c));
    init_normal(weight.value, rng, std);
    if (with_bias) bias.value.resize({out_c});
}

Tensor ConvTranspose2d::forward(const Tensor& x) {
    const int B = x.dim(0), Hi = x.dim(2), Wi = x.dim(3);
    if (x.dim(1) != in_ch) throw std::invalid_argument("ConvTranspose2d: channel mismatch");
    const int Ho = (Hi - 1) * stride - 2 * pad + kernel + output_pad;
    const int Wo = (Wi - 1) * stride - 2 * pad + kernel + output_pad;
    const int K = out_ch * kernel * kernel;
    Tensor y({B, out_ch, Ho, Wo});
    col_.resize(static_cast<size_t>(K) * Hi * Wi);

    CMapM wm(weight.value.data(), in_ch, K);
    for (int b = 0; b < B; ++b) {
        CMapM xm(x.data() + static_cast<size_t>(b) * in_ch * Hi * Wi, in_ch, Hi * Wi);
        MapM cm(col_.data(), K, Hi * Wi);
        cm.noalias() = wm.transpose() * xm;
        float* out = y.data() + static_cast<size_t>(b) * out_ch * Ho * Wo;
        col2im_add(col_.data(), out_ch, Ho, Wo, kernel, stride, pad, PadMode::zero, out);
        if (!bias.value.empty()) {
            for (int c = 0; c < out_ch; ++c) {
                float* plane = out + static_cast<size_t>(c) * Ho * Wo;
                for (int i = 0; i < Ho * Wo; ++i) plane[i] += bias.value[c];
            }
        }
    }
    if (training_) cached_input_ = x;
    return y;
}

Tensor ConvTranspose2d::backward(const Tensor& dy) {
    const Tensor& x = cached_input_;
    const int B = x.dim(0), Hi = x.dim(2), Wi = x.dim(3);
    const int Ho = dy.dim(2), Wo = dy.dim(3);
    const int K = out_ch * kernel * kernel;
    weight.ensure_grad();
    if (!bias.value.empty()) bias.ensure_grad();

    Tensor dx({B, in_ch, Hi, Wi});
    CMapM wm(weight.value.data(), in_ch, K);
    MapM dwm(weight.grad.data(), in_ch, K);
    for (int b = 0; b < B; ++b) {
        im2col(dy.data() + static_cast<size_t>(b) * out_ch * Ho * Wo, out_ch, Ho, Wo, kernel,
               stride, pad, PadMode::zero, col_.data());
        CMapM cm(col_.data(), K, Hi * Wi);
        CMapM xm(x.data() + static_cast<size_t>(b) * in_ch * Hi * Wi, in_ch, Hi * Wi);
        dwm.noalias() += xm * cm.transpose();
        MapM dxm(dx.data() + static_cast<size_t>(b) * in_ch * Hi * Wi, in_ch, Hi * Wi);
        dxm.noalias() = wm * cm;
        if (!bias.value.empty()) {
            const float* g = dy.data() + static_cast<size_t>(b) * out_ch * Ho * Wo;
            for (int c = 0; c < out_ch; ++c) {
                float s = 0.0f;
                const float* plane = g + static_cast<size_t>(c) * Ho * Wo;
                for (int i = 0; i < Ho * Wo; ++i) s += plane[i];
                bias.grad[c] += s;
            }
        }
    }
    return dx;
}

void ConvTranspose2d::visit_params(const std::string& prefix, const ParamVisitor& fn) {
    fn(prefix + "weight", weight);
    if (!bias.value.empty()) fn(prefix + "bias", bias);
}

// --------------------------------------------------------------------------- BatchNorm2d

BatchNorm2d::BatchNorm2d(int ch, float e, float mom) : channels(ch), eps(e), momentum(mom) {
    gamma.value.resize({ch});
    gamma.value.fill(1.0f);
    beta.value.resize({ch});
    running_mean.resize({ch});
    running_var.resize({ch});
    running_var.fill(1.0f);
}

Tensor BatchNorm2d::forward(const Tensor& x) {
    const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (C != channels) throw std::invalid_argument("BatchNorm2d: channel mismatch");
    const int plane = H * W;
    const int64_t n = static_cast<int64_t>(B) * plane;
    Tensor y({B, C, H, W});

    if (training_) {
        xhat_.resize({B, C, H, W});
        invstd_.assign(C, 0.0f);
        for (int c = 0; c < C; ++c) {
            double sum = 0.0, sq = 0.0;
            for (int b = 0; b < B; ++b) {
                const float* p = x.data() + (static_cast<size_t>(b) * C + c) * plane;
                for (int i = 0; i < plane; ++i) {
                    sum += p[i];
                    sq += static_cast<double>(p[i]) * p[i];
                }
            }
            const double mean = sum / n;
            const double var = std::max(0.0, sq / n - mean * mean);
            const float istd = static_cast<float>(1.0 / std::sqrt(var + eps));
            invstd_[c] = istd;
            const float m = static_cast<float>(mean);
            for (int b = 0; b < B; ++b) {
                const float* p = x.data() + (static_cast<size_t>(b) * C + c) * plane;
                float* xh = xhat_.data() + (static_cast<size_t>(b) * C + c) * plane;
                float* yo = y.data() + (static_cast<size_t>(b) * C + c) * plane;
                for (int i = 0; i < plane; ++i) {
                    xh[i] = (p[i] - m) * istd;
                    yo[i] = gamma.value[c] * xh[i] + beta.value[c];
                }
            }
            const double unbiased = n > 1 ? var * n / (n - 1.0) : var;
            running_mean[c] = (1.0f - momentum) * running_mean[c] + momentum * m;
            running_var[c] =
                (1.0f - momentum) * running_var[c] + momentum * static_cast<float>(unbiased);
        }
    } else {
        for (int c = 0; c < C; ++c) {
            const float istd = 1.0f / std::sqrt(running_var[c] + eps);
            const float m = running_mean[c];
            for (int b = 0; b < B; ++b) {
                const float* p = x.data() + (static_cast<size_t>(b) * C + c) * plane;
                float* yo = y.data() + (static_cast<size_t>(b) * C + c) * plane;
                for (int i = 0; i < plane; ++i)
                    yo[i] = gamma.value[c] * (p[i] - m) * istd + beta.value[c];
            }
        }
    }
    return y;
}

Tensor BatchNorm2d::backward(const Tensor& dy) {
    const int B = dy.dim(0), C = dy.dim(1), H = dy.dim(2), W = dy.dim(3);
    const int plane = H * W;
    const double n = static_cast<double>(B) * plane;
    gamma.ensure_grad();
    beta.ensure_grad();
    Tensor dx({B, C, H, W});
    for (int c = 0; c < C; ++c) {
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (int b = 0; b < B; ++b) {
            const float* g = dy.data() + (static_cast<size_t>(b) * C + c) * plane;
            const float* xh = xhat_.data() + (static_cast<size_t>(b) * C + c) * plane;
            for (int i = 0; i < plane; ++i) {
                sum_dy += g[i];
                sum_dy_xhat += static_cast<double>(g[i]) * xh[i];
            }
        }
        gamma.grad[c] += static_cast<float>(sum_dy_xhat);
        beta.grad[c] += static_cast<float>(sum_dy);
        const float k = gamma.value[c] * invstd_[c];
        const float mean_dy = static_cast<float>(sum_dy / n);
        const float mean_dy_xhat = static_cast<float>(sum_dy_xhat / n);
        for (int b = 0; b < B; ++b) {
            const float* g = dy.data() + (static_cast<size_t>(b) * C + c) * plane;
            const float* xh = xhat_.data() + (static_cast<size_t>(b) * C + c) * plane;
            float* d = dx.data() + (static_cast<size_t>(b) * C + c) * plane;
            for (int i = 0; i < plane; ++i) d[i] = k * (g[i] - mean_dy - xh[i] * mean_dy_xhat);
        }
    }
    return dx;
}

void BatchNorm2d::visit_params(const std::string& prefix, const ParamVisitor& fn) {
    fn(prefix + "gamma", gamma);
    fn(prefix + "beta", beta);
}

void BatchNorm2d::visit_buffers(const std::string& prefix, const BufferVisitor& fn) {
    fn(prefix + "running_mean", running_mean);
    fn(prefix + "running_var", running_var);
}

// --------------------------------------------------------------------------- InstanceNorm2d

InstanceNorm2d::InstanceNorm2d(int ch, float e) : channels(ch), eps(e) {}

Tensor InstanceNorm2d::forward(const Tensor& x) {
    const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (C != channels) throw std::invalid_argument("InstanceNorm2d: channel mismatch");
    const int plane = H * W;
    Tensor y({B, C, H, W});
    if (training_) {
        xhat_.resize({B, C, H, W});
        invstd_.assign(static_cast<size_t>(B) * C, 0.0f);
    }
    for (int b = 0; b < B; ++b) {
        for (int c = 0; c < C; ++c) {
            const float* p = x.data() + (static_cast<size_t>(b) * C + c) * plane;
            double sum = 0.0, sq = 0.0;
            for (int i = 0; i < plane; ++i) {
                sum += p[i];
                sq += static_cast<double>(p[i]) * p[i];
            }
            const double mean = sum / plane;
            const double var = std::max(0.0, sq / plane - mean * mean);
            const float istd = static_cast<float>(1.0 / std::sqrt(var + eps));
            const float m = static_cast<float>(mean);
            float* yo = y.data() + (static_cast<size_t>(b) * C + c) * plane;
            if (training_) {
                float* xh = xhat_.data() + (static_cast<size_t>(b) * C + c) * plane;
                invstd_[static_cast<size_t>(b) * C + c] = istd;
                for (int i = 0; i < plane; ++i) {
                    xh[i] = (p[i] - m) * istd;
                    yo[i] = xh[i];
                }
            } else {
                for (int i = 0; i < plane; ++i) yo[i] = (p[i] - m) * istd;
            }
        }
    }
    return y;
}

Tensor InstanceNorm2d::backward(const Tensor& dy) {
    const int B = dy.dim(0), C = dy.dim(1), H = dy.dim(2), W = dy.dim(3);
    const int plane = H * W;
    Tensor dx({B, C, H, W});
    for (int b = 0; b < B; ++b) {
        for (int c = 0; c < C; ++c) {
            const float* g = dy.data() + (static_cast<size_t>(b) * C + c) * plane;
            const float* xh = xhat_.data() + (static_cast<size_t>(b) * C + c) * plane;
            float* d = dx.data() + (static_cast<size_t>(b) * C + c) * plane;
            double sum_dy = 0.0, sum_dy_xhat = 0.0;
            for (int i = 0; i < plane; ++i) {
                sum_dy += g[i];
                sum_dy_xhat += static_cast<double>(g[i]) * xh[i];
            }
            const float istd = invstd_[static_cast<size_t>(b) * C + c];
            const float mean_dy = static_cast<float>(sum_dy / plane);
            const float mean_dy_xhat = static_cast<float>(sum_dy_xhat / plane);
            for (int i = 0; i < plane; ++i)
                d[i] = istd * (g[i] - mean_dy - xh[i] * mean_dy_xhat);
        }
    }
    return dx;
}

// --------------------------------------------------------------------------- LayerNorm

LayerNorm::LayerNorm(int d, float e) : dim(d), eps(e) {
    gamma.value.resize({d});
    gamma.value.fill(1.0f);
    beta.value.resize({d});
}

Tensor LayerNorm::forward(const Tensor& x) {
    const int rows = static_cast<int>(x.numel() / dim);
    Tensor y(x.shape());
    if (training_) {
        xhat_.resize(x.shape());
        invstd_.assign(rows, 0.0f);
    }
    for (int r = 0; r < rows; ++r) {
        const float* p = x.data() + static_cast<size_t>(r) * dim;
        float* yo = y.data() + static_cast<size_t>(r) * dim;
        double sum = 0.0, sq = 0.0;
        for (int i = 0; i < dim; ++i) {
            sum += p[i];
            sq += static_cast<double>(p[i]) * p[i];
        }
        const double mean = sum / dim;
        const double var = std::max(0.0, sq / dim - mean * mean);
        const float istd = static_cast<float>(1.0 / std::sqrt(var + eps));
        const float m = static_cast<float>(mean);
        if (training_) {
            invstd_[r] = istd;
            float* xh = xhat_.data() + static_cast<size_t>(r) * dim;
            for (int i = 0; i < dim; ++i) {
                xh[i] = (p[i] - m) * istd;
                yo[i] = gamma.value[i] * xh[i] + beta.value[i];
            }
        } else {
            for (int i = 0; i < dim; ++i)
                yo[i] = gamma.value[i] * (p[i] - m) * istd + beta.value[i];
        }
    }
    return y;
}

Tensor LayerNorm::backward(const Tensor& dy) {
    const int rows = static_cast<int>(dy.numel() / dim);
    gamma.ensure_grad();
    beta.ensure_grad();
    Tensor dx(dy.shape());
    for (int r = 0; r < rows; ++r) {
        const float* g = dy.data() + static_cast<size_t>(r) * dim;
        const float* xh = xhat_.data() + static_cast<size_t>(r) * dim;
        float* d = dx.data() + static_cast<size_t>(r) * dim;
        double sum_dyg = 0.0, sum_dyg_xhat = 0.0;
        for (int i = 0; i < dim; ++i) {
            const double dyg = static_cast<double>(g[i]) * gamma.value[i];
            sum_dyg += dyg;
            sum_dyg_xhat += dyg * xh[i];
            gamma.grad[i] += g[i] * xh[i];
            beta.grad[i] += g[i];
        }
        const float istd = invstd_[r];
        const float mean_dyg = static_cast<float>(sum_dyg / dim);
        const float mean_dyg_xhat = static_cast<float>(sum_dyg_xhat / dim);
        for (int i = 0; i < dim; ++i) {
            const float dyg = g[i] * gamma.value[i];
            d[i] = istd * (dyg - mean_dyg - xh[i] * mean_dyg_xhat);
        }
    }
    return dx;
}

void LayerNorm::visit_params(const std::string& prefix, const ParamVisitor& fn) {
    fn(prefix + "gamma", gamma);
    fn(prefix + "beta", beta);
}

// --------------------------------------------------------------------------- activations

Tensor ReLU::forward(const Tensor& x) {
    Tensor y(x.shape());
    if (training_) mask_.resize(x.shape());
    for (int64_t i = 0; i < x.numel(); ++i) {
        const bool pos = x[i] > 0.0f;
        y[i] = pos ? x[i] : 0.0f;
        if (training_) mask_[i] = pos ? 1.0f : 0.0f;
    }
    return y;
}

Tensor ReLU::backward(const Tensor& dy) {
    Tensor dx(dy.shape());
    for (int64_t i = 0; i < dy.numel(); ++i) dx[i] = dy[i] * mask_[i];
    return dx;
}

Tensor LeakyReLU::forward(const Tensor& x) {
    Tensor y(x.shape());
    for (int64_t i = 0; i < x.numel(); ++i) y[i] = x[i] > 0.0f ? x[i] : slope * x[i];
    if (training_) input_ = x;
    return y;
}

Tensor LeakyReLU::backward(const Tensor& dy) {
    Tensor dx(dy.shape());
    for (int64_t i = 0; i < dy.numel(); ++i)
        dx[i] = dy[i] * (input_[i] > 0.0f ? 1.0f : slope);
    return dx;
}

Tensor Gelu::forward(const Tensor& x) {
    Tensor y(x.shape());
    for (int64_t i = 0; i < x.numel(); ++i) {
        const float v = x[i];
        y[i] = 0.5f * v * (1.0f + std::erf(v * 0.70710678118654752440f));
    }
    if (training_) input_ = x;
    return y;
}

Tensor Gelu::backward(const Tensor& dy) {
    Tensor dx(dy.shape());
    constexpr float inv_sqrt2 = 0.70710678118654752440f;
    constexpr float inv_sqrt2pi = 0.39894228040143267794f;
    for (int64_t i = 0; i < dy.numel(); ++i) {
        const float v = input_[i];
        const float cdf = 0.5f * (1.0f + std::erf(v * inv_sqrt2));
        const float pdf = inv_sqrt2pi * std::exp(-0.5f * v * v);
        dx[i] = dy[i] * (cdf + v * pdf);
    }
    return dx;
}

Tensor Sigmoid::forward(const Tensor& x) {
    Tensor y(x.shape());
    for (int64_t i = 0; i < x.numel(); ++i) y[i] = 1.0f / (1.0f + std::exp(-x[i]));
    if (training_) output_ = y;
    return y;
}

Tensor Sigmoid::backward(const Tensor& dy) {
    Tensor dx(dy.shape());
    for (int64_t i = 0; i < dy.numel(); ++i) dx[i] = dy[i] * output_[i] * (1.0f - output_[i]);
    return dx;
}

Tensor Tanh::forward(const Tensor& x) {
    Tensor y(x.shape());
    for (int64_t i = 0; i < x.numel(); ++i) y[i] = std::tanh(x[i]);
    if (training_) output_ = y;
    return y;
}

Tensor Tanh::backward(const Tensor& dy) {
    Tensor dx(dy.shape());
    for (int64_t i = 0; i < dy.numel(); ++i) dx[i] = dy[i] * (1.0f - output_[i] * output_[i]);
    return dx;
}

// --------------------------------------------------------------------------- softmax

void softmax_rows(float* data, int rows, int cols) {
    for (int r = 0; r < rows; ++r) {
        float* p = data + static_cast<size_t>(r) * cols;
        float mx = p[0];
        for (int i = 1; i < cols; ++i) mx = std::max(mx, p[i]);
        float sum = 0.0f;
        for (int i = 0; i < cols; ++i) {
            p[i] = std::exp(p[i] - mx);
            sum += p[i];
        }
        const float inv = 1.0f / sum;
        for (int i = 0; i < cols; ++i) p[i] *= inv;
    }
}

void softmax_backward_rows(const float* y, const float* dy, float* dx, int rows, int cols) {
    for (int r = 0; r < rows; ++r) {
        const float* yr = y + static_cast<size_t>(r) * cols;
        const float* gr = dy + static_cast<size_t>(r) * cols;
        float* dr = dx + static_cast<size_t>(r) * cols;
        float dot = 0.0f;
        for (int i = 0; i < cols; ++i) dot += yr[i] * gr[i];
        for (int i = 0; i < cols; ++i) dr[i] = yr[i] * (gr[i] - dot);
    }
}

// --------------------------------------------------------------------------- attention

MultiHeadSelfAttention::MultiHeadSelfAttention(int d, int h, Rng& rng)
    : dim(d), heads(h), head_dim(d / h), qkv(d, 3 * d, rng, 0.02f), proj(d, d, rng, 0.02f) {
    if (d % h != 0)
        throw std::invalid_argument("MultiHeadSelfAttention: dim not divisible by heads");
}

Tensor MultiHeadSelfAttention::forward(const Tensor& x) {
    const int B = x.dim(0), N = x.dim(1);
    Tensor qkv_out = qkv.forward(x);  // (B, N, 3D)
    Tensor ctx({B, N, dim});
    const float scale = 1.0f / std::sqrt(static_cast<float>(head_dim));

    if (training_) attn_.resize({B, heads, N, N});
    MatRM scores(N, N);
    for (int b = 0; b < B; ++b) {
        const float* base = qkv_out.data() + static_cast<size_t>(b) * N * 3 * dim;
        for (int h = 0; h < heads; ++h) {
            CSMapM Q(base + static_cast<size_t>(h) * head_dim, N, head_dim, StrideT(3 * dim));
            CSMapM K(base + dim + static_cast<size_t>(h) * head_dim, N, head_dim,
                     StrideT(3 * dim));
            CSMapM V(base + 2 * dim + static_cast<size_t>(h) * head_dim, N, head_dim,
                     StrideT(3 * dim));
            scores.noalias() = Q * K.transpose();
            scores *= scale;
            softmax_rows(scores.data(), N, N);
            SMapM out(ctx.data() + static_cast<size_t>(b) * N * dim +
                          static_cast<size_t>(h) * head_dim,
                      N, head_dim, StrideT(dim));
            out.noalias() = scores * V;
            if (training_) {
                float* cache = attn_.data() +
                               ((static_cast<size_t>(b) * heads + h) * N) * N;
                std::copy(scores.data(), scores.data() + static_cast<size_t>(N) * N, cache);
            }
        }
    }
    if (training_) qkv_out_ = std::move(qkv_out);
    return proj.forward(ctx);
}

Tensor MultiHeadSelfAttention::backward(const Tensor& dy) {
    Tensor dctx = proj.backward(dy);  // (B, N, D)
    const int B = dctx.dim(0), N = dctx.dim(1);
    const float scale = 1.0f / std::sqrt(static_cast<float>(head_dim));

    Tensor dqkv({B, N, 3 * dim});
    MatRM dA(N, N), dS(N, N);
    for (int b = 0; b < B; ++b) {
        const float* base = qkv_out_.data() + static_cast<size_t>(b) * N * 3 * dim;
        float* dbase = dqkv.data() + static_cast<size_t>(b) * N * 3 * dim;
        for (int h = 0; h < heads; ++h) {
            CSMapM Q(base + static_cast<size_t>(h) * head_dim, N, head_dim, StrideT(3 * dim));
            CSMapM K(base + dim + static_cast<size_t>(h) * head_dim, N, head_dim,
                     StrideT(3 * dim));
            CSMapM V(base + 2 * dim + static_cast<size_t>(h) * head_dim, N, head_dim,
                     StrideT(3 * dim));
            CSMapM dOut(dctx.data() + static_cast<size_t>(b) * N * dim +
                            static_cast<size_t>(h) * head_dim,
                        N, head_dim, StrideT(dim));
            const float* A = attn_.data() + ((static_cast<size_t>(b) * heads + h) * N) * N;
            CMapM Am(A, N, N);

            dA.noalias() = dOut * V.transpose();
            softmax_backward_rows(A, dA.data(), dS.data(), N, N);
            dS *= scale;

            SMapM dQ(dbase + static_cast<size_t>(h) * head_dim, N, head_dim, StrideT(3 * dim));
            SMapM dK(dbase + dim + static_cast<size_t>(h) * head_dim, N, head_dim,
                     StrideT(3 * dim));
            SMapM dV(dbase + 2 * dim + static_cast<size_t>(h) * head_dim, N, head_dim,
                     StrideT(3 * dim));
            dQ.noalias() = dS * K;
            dK.noalias() = dS.transpose() * Q;
            dV.noalias() = Am.transpose() * dOut;
        }
    }
    return qkv.backward(dqkv);
}

void MultiHeadSelfAttention::visit_params(const std::string& prefix, const ParamVisitor& fn) {
    qkv.visit_params(prefix + "qkv.", fn);
    proj.visit_params(prefix + "proj.", fn);
}

void MultiHeadSelfAttention::for_each_child(const std::function<void(Module&)>& fn) {
    fn(qkv);
    fn(proj);
}

// --------------------------------------------------------------------------- resampling

Tensor BilinearUpsample::forward(const Tensor& x) {
    const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int Ho = H * scale, Wo = W * scale;
    in_shape_ = x.shape();
    Tensor y({B, C, Ho, Wo});

    std::vector<int> y0(Ho), y1(Ho), x0(Wo), x1(Wo);
    std::vector<float> wy(Ho), wx(Wo);
    auto setup = [&](int out, int in, std::vector<int>& i0, std::vector<int>& i1,
                     std::vector<float>& w) {
        for (int o = 0; o < out; ++o) {
            float src = (o + 0.5f) / scale - 0.5f;
            src = std::max(0.0f, std::min(src, static_cast<float>(in - 1)));
            i0[o] = static_cast<int>(src);
            i1[o] = std::min(i0[o] + 1, in - 1);
            w[o] = src - i0[o];
        }
    };
    setup(Ho, H, y0, y1, wy);
    setup(Wo, W, x0, x1, wx);

    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
            const float* src = x.data() + (static_cast<size_t>(b) * C + c) * H * W;
            float* dst = y.data() + (static_cast<size_t>(b) * C + c) * Ho * Wo;
            for (int oy = 0; oy < Ho; ++oy) {
                const float* r0 = src + static_cast<size_t>(y0[oy]) * W;
                const float* r1 = src + static_cast<size_t>(y1[oy]) * W;
                const float fy = wy[oy];
                for (int ox = 0; ox < Wo; ++ox) {
                    const float fx = wx[ox];
                    const float top = r0[x0[ox]] * (1.0f - fx) + r0[x1[ox]] * fx;
                    const float bot = r1[x0[ox]] * (1.0f - fx) + r1[x1[ox]] * fx;
                    dst[static_cast<size_t>(oy) * Wo + ox] = top * (1.0f - fy) + bot * fy;
                }
            }
        }
    return y;
}

Tensor BilinearUpsample::backward(const Tensor& dy) {
    const int B = in_shape_[0], C = in_shape_[1], H = in_shape_[2], W = in_shape_[3];
    const int Ho = H * scale, Wo = W * scale;
    Tensor dx(in_shape_);

    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
            const float* g = dy.data() + (static_cast<size_t>(b) * C + c) * Ho * Wo;
            float* d = dx.data() + (static_cast<size_t>(b) * C + c) * H * W;
            for (int oy = 0; oy < Ho; ++oy) {
                float src_y = (oy + 0.5f) / scale - 0.5f;
                src_y = std::max(0.0f, std::min(src_y, static_cast<float>(H - 1)));
                const int iy0 = static_cast<int>(src_y);
                const int iy1 = std::min(iy0 + 1, H - 1);
                const float fy = src_y - iy0;
                for (int ox = 0; ox < Wo; ++ox) {
                    float src_x = (ox + 0.5f) / scale - 0.5f;
                    src_x = std::max(0.0f, std::min(src_x, static_cast<float>(W - 1)));
                    const int ix0 = static_cast<int>(src_x);
                    const int ix1 = std::min(ix0 + 1, W - 1);
                    const float fx = src_x - ix0;
                    const float go = g[static_cast<size_t>(oy) * Wo + ox];
                    d[static_cast<size_t>(iy0) * W + ix0] += go * (1.0f - fy) * (1.0f - fx);
                    d[static_cast<size_t>(iy0) * W + ix1] += go * (1.0f - fy) * fx;
                    d[static_cast<size_t>(iy1) * W + ix0] += go * fy * (1.0f - fx);
                    d[static_cast<size_t>(iy1) * W + ix1] += go * fy * fx;
                }
            }
        }
    return dx;
}

Tensor MaxPool2d::forward(const Tensor& x) {
    const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int Ho = conv_out_size(H, kernel, stride, pad);
    const int Wo = conv_out_size(W, kernel, stride, pad);
    in_shape_ = x.shape();
    Tensor y({B, C, Ho, Wo});
    argmax_.assign(static_cast<size_t>(B) * C * Ho * Wo, -1);

    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
            const float* src = x.data() + (static_cast<size_t>(b) * C + c) * H * W;
            float* dst = y.data() + (static_cast<size_t>(b) * C + c) * Ho * Wo;
            int* arg = argmax_.data() + (static_cast<size_t>(b) * C + c) * Ho * Wo;
            for (int oy = 0; oy < Ho; ++oy)
                for (int ox = 0; ox < Wo; ++ox) {
                    float best = -std::numeric_limits<float>::infinity();
                    int best_idx = -1;
                    for (int ky = 0; ky < kernel; ++ky) {
                        const int iy = oy * stride - pad + ky;
                        if (iy < 0 || iy >= H) continue;
                        for (int kx = 0; kx < kernel; ++kx) {
                            const int ix = ox * stride - pad + kx;
                            if (ix < 0 || ix >= W) continue;
                            const float v = src[iy * W + ix];
                            if (v > best) {
                                best = v;
                                best_idx = iy * W + ix;
                            }
                        }
                    }
                    dst[oy * Wo + ox] = best;
                    arg[oy * Wo + ox] = best_idx;
                }
        }
    return y;
}

Tensor MaxPool2d::backward(const Tensor& dy) {
    const int B = in_shape_[0], C = in_shape_[1], H = in_shape_[2], W = in_shape_[3];
    const int Ho = dy.dim(2), Wo = dy.dim(3);
    Tensor dx(in_shape_);
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
            const float* g = dy.data() + (static_cast<size_t>(b) * C + c) * Ho * Wo;
            const int* arg = argmax_.data() + (static_cast<size_t>(b) * C + c) * Ho * Wo;
            float* d = dx.data() + (static_cast<size_t>(b) * C + c) * H * W;
            for (int i = 0; i < Ho * Wo; ++i)
                if (arg[i] >= 0) d[arg[i]] += g[i];
        }
    return dx;
}

Tensor AdaptiveAvgPool2d::forward(const Tensor& x) {
    const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int P = out_size;
    in_shape_ = x.shape();
    Tensor y({B, C, P, P});
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
            const float* src = x.data() + (static_cast<size_t>(b) * C + c) * H * W;
            float* dst = y.data() + (static_cast<size_t>(b) * C + c) * P * P;
            for (int py = 0; py < P; ++py) {
                const int y0 = py * H / P, y1 = ((py + 1) * H + P - 1) / P;
                for (int px = 0; px < P; ++px) {
                    const int x0 = px * W / P, x1 = ((px + 1) * W + P - 1) / P;
                    float sum = 0.0f;
                    for (int iy = y0; iy < y1; ++iy)
                        for (int ix = x0; ix < x1; ++ix) sum += src[iy * W + ix];
                    dst[py * P + px] = sum / static_cast<float>((y1 - y0) * (x1 - x0));
                }
            }
        }
    return y;
}

Tensor AdaptiveAvgPool2d::backward(const Tensor& dy) {
    const int B = in_shape_[0], C = in_shape_[1], H = in_shape_[2], W = in_shape_[3];
    const int P = out_size;
    Tensor dx(in_shape_);
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
            const float* g = dy.data() + (static_cast<size_t>(b) * C + c) * P * P;
            float* d = dx.data() + (static_cast<size_t>(b) * C + c) * H * W;
            for (int py = 0; py < P; ++py) {
                const int y0 = py * H / P, y1 = ((py + 1) * H + P - 1) / P;
                for (int px = 0; px < P; ++px) {
                    const int x0 = px * W / P, x1 = ((px + 1) * W + P - 1) / P;
                    const float share = g[py * P + px] / static_cast<float>((y1 - y0) * (x1 - x0));
                    for (int iy = y0; iy < y1; ++iy)
                        for (int ix = x0; ix < x1; ++ix) d[iy * W + ix] += share;
                }
            }
        }
    return dx;
}

// --------------------------------------------------------------------------- Sequential

Tensor Sequential::forward(const Tensor& x) {
    Tensor cur = x;
    for (auto& m : modules_) cur = m->forward(cur);
    return cur;
}

Tensor Sequential::backward(const Tensor& dy) {
    Tensor cur = dy;
    for (auto it = modules_.rbegin(); it != modules_.rend(); ++it) cur = (*it)->backward(cur);
    return cur;
}

void Sequential::visit_params(const std::string& prefix, const ParamVisitor& fn) {
    for (size_t i = 0; i < modules_.size(); ++i)
        modules_[i]->visit_params(prefix + std::to_string(i) + ".", fn);
}

void Sequential::visit_buffers(const std::string& prefix, const BufferVisitor& fn) {
    for (size_t i = 0; i < modules_.size(); ++i)
        modules_[i]->visit_buffers(prefix + std::to_string(i) + ".", fn);
}

void Sequential::for_each_child(const std::function<void(Module&)>& fn) {
    for (auto& m : modules_) fn(*m);
}

}  // namespace pipetteloc::nn
