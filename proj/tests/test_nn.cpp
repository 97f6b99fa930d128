#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "pipetteloc/nn/layers.hpp"
#include "pipetteloc/nn/optim.hpp"
#include "pipetteloc/nn/serialize.hpp"
#include "pipetteloc/rng.hpp"

using namespace pipetteloc;
using nn::Tensor;

namespace {

Tensor random_tensor(std::vector<int> shape, Rng& rng, double scale = 1.0) {
    Tensor t(std::move(shape));
    for (int64_t i = 0; i < t.numel(); ++i)
        t[i] = static_cast<float>(rng.normal(0.0, scale));
    return t;
}

// Scalar readout sum(c * module(x)) so dL/dy = c.
double readout(nn::Module& m, const Tensor& x, const Tensor& c) {
    const Tensor y = m.forward(x);
    double s = 0.0;
    for (int64_t i = 0; i < y.numel(); ++i) s += static_cast<double>(c[i]) * y[i];
    return s;
}

// Central-difference check of input gradients on a sample of coordinates.
void check_input_grad(nn::Module& m, Tensor x, Rng& rng, double tol = 3e-2,
                      float step = 1e-2f) {
    m.set_training(true);
    Tensor y = m.forward(x);
    Tensor c = random_tensor(y.shape(), rng);
    m.forward(x);  // refresh caches (readout above not used for analytic pass)
    Tensor dx = m.backward(c);

    const int checks = static_cast<int>(std::min<int64_t>(20, x.numel()));
    for (int k = 0; k < checks; ++k) {
        const int64_t j = static_cast<int64_t>(rng.uniform() * x.numel());
        Tensor xp = x, xm = x;
        xp[j] += step;
        xm[j] -= step;
        const double num = (readout(m, xp, c) - readout(m, xm, c)) / (2.0 * step);
        const double ana = dx[j];
        const double denom = std::max(1.0, std::abs(num) + std::abs(ana));
        CHECK(std::abs(num - ana) / denom < tol);
    }
}

// Same check for every parameter of the module.
void check_param_grads(nn::Module& m, const Tensor& x, Rng& rng, double tol = 3e-2,
                       float step = 1e-2f) {
    m.set_training(true);
    Tensor y = m.forward(x);
    Tensor c = random_tensor(y.shape(), rng);
    m.zero_grad();
    m.forward(x);
    m.backward(c);

    std::vector<nn::Parameter*> params = nn::collect_parameters(m);
    for (nn::Parameter* p : params) {
        const int checks = static_cast<int>(std::min<int64_t>(8, p->value.numel()));
        for (int k = 0; k < checks; ++k) {
            const int64_t j = static_cast<int64_t>(rng.uniform() * p->value.numel());
            const float orig = p->value[j];
            p->value[j] = orig + step;
            const double lp = readout(m, x, c);
            p->value[j] = orig - step;
            const double lm = readout(m, x, c);
            p->value[j] = orig;
            const double num = (lp - lm) / (2.0 * step);
            const double ana = p->grad.empty() ? 0.0 : p->grad[j];
            const double denom = std::max(1.0, std::abs(num) + std::abs(ana));
            CHECK(std::abs(num - ana) / denom < tol);
        }
    }
}

}  // namespace

TEST_CASE("linear gradients") {
    Rng rng(1);
    nn::Linear lin(7, 5, rng);
    Tensor x = random_tensor({3, 7}, rng);
    check_input_grad(lin, x, rng);
    check_param_grads(lin, x, rng);
}

TEST_CASE("linear applies to trailing axis of 3-d input") {
    Rng rng(2);
    nn::Linear lin(4, 6, rng);
    Tensor x = random_tensor({2, 5, 4}, rng);
    Tensor y = lin.forward(x);
    CHECK(y.shape() == std::vector<int>{2, 5, 6});
}

TEST_CASE("conv2d gradients, zero padding") {
    Rng rng(3);
    nn::Conv2d conv(3, 4, 3, 1, 1, rng);
    Tensor x = random_tensor({2, 3, 6, 6}, rng);
    check_input_grad(conv, x, rng);
    check_param_grads(conv, x, rng);
}

TEST_CASE("conv2d gradients, stride 2 reflect padding") {
    Rng rng(4);
    nn::Conv2d conv(2, 3, 3, 2, 1, rng, nn::PadMode::reflect);
    Tensor x = random_tensor({2, 2, 8, 8}, rng);
    check_input_grad(conv, x, rng);
    check_param_grads(conv, x, rng);
}

TEST_CASE("conv2d 7x7 stride 2 output shape") {
    Rng rng(5);
    nn::Conv2d conv(1, 8, 7, 2, 3, rng);
    Tensor x = random_tensor({1, 1, 64, 64}, rng);
    CHECK(conv.forward(x).shape() == std::vector<int>{1, 8, 32, 32});
}

TEST_CASE("conv_transpose2d gradients and shape") {
    Rng rng(6);
    nn::ConvTranspose2d conv(3, 2, 3, 2, 1, 1, rng);
    Tensor x = random_tensor({2, 3, 5, 5}, rng);
    Tensor y = conv.forward(x);
    CHECK(y.shape() == std::vector<int>{2, 2, 10, 10});
    check_input_grad(conv, x, rng);
    check_param_grads(conv, x, rng);
}

TEST_CASE("batchnorm2d gradients and running stats") {
    Rng rng(7);
    nn::BatchNorm2d bn(3);
    Tensor x = random_tensor({4, 3, 5, 5}, rng, 2.0);
    check_input_grad(bn, x, rng);
    check_param_grads(bn, x, rng);

    // Running stats move toward the batch stats in train mode only.
    nn::BatchNorm2d bn2(1);
    Tensor ones({2, 1, 2, 2});
    ones.fill(3.0f);
    bn2.forward(ones);
    CHECK(bn2.running_mean[0] == doctest::Approx(0.3));
    bn2.set_training(false);
    const float rm = bn2.running_mean[0];
    bn2.forward(ones);
    CHECK(bn2.running_mean[0] == rm);
}

TEST_CASE("instancenorm2d gradients") {
    Rng rng(8);
    nn::InstanceNorm2d in(3);
    Tensor x = random_tensor({2, 3, 6, 6}, rng, 2.0);
    check_input_grad(in, x, rng);
}

TEST_CASE("layernorm gradients") {
    Rng rng(9);
    nn::LayerNorm ln(16);
    Tensor x = random_tensor({3, 4, 16}, rng, 2.0);
    check_input_grad(ln, x, rng);
    check_param_grads(ln, x, rng);
}

TEST_CASE("activation gradients") {
    Rng rng(10);
    Tensor x = random_tensor({2, 40}, rng);
    {
        nn::ReLU relu;
        check_input_grad(relu, x, rng);
    }
    {
        nn::LeakyReLU lrelu(0.2f);
        check_input_grad(lrelu, x, rng);
    }
    {
        nn::Gelu gelu;
        check_input_grad(gelu, x, rng);
    }
    {
        nn::Sigmoid sig;
        check_input_grad(sig, x, rng);
    }
    {
        nn::Tanh tanh;
        check_input_grad(tanh, x, rng);
    }
}

TEST_CASE("softmax rows sum to one and backward matches identity on uniform") {
    Rng rng(11);
    Tensor x = random_tensor({4, 6}, rng);
    nn::softmax_rows(x.data(), 4, 6);
    for (int r = 0; r < 4; ++r) {
        float s = 0.0f;
        for (int i = 0; i < 6; ++i) s += x[r * 6 + i];
        CHECK(s == doctest::Approx(1.0f));
    }
}

TEST_CASE("multi-head self-attention gradients") {
    Rng rng(12);
    nn::MultiHeadSelfAttention attn(8, 2, rng);
    Tensor x = random_tensor({2, 5, 8}, rng);
    check_input_grad(attn, x, rng);
    check_param_grads(attn, x, rng);
}

TEST_CASE("bilinear upsample gradients and constancy") {
    Rng rng(13);
    nn::BilinearUpsample up(4);
    Tensor x = random_tensor({1, 2, 3, 3}, rng);
    Tensor y = up.forward(x);
    CHECK(y.shape() == std::vector<int>{1, 2, 12, 12});
    check_input_grad(up, x, rng);

    Tensor flat({1, 1, 2, 2});
    flat.fill(0.7f);
    Tensor fy = up.forward(flat);
    for (int64_t i = 0; i < fy.numel(); ++i) CHECK(fy[i] == doctest::Approx(0.7f));
}

TEST_CASE("maxpool gradients route to the argmax") {
    Rng rng(14);
    nn::MaxPool2d pool(3, 2, 1);
    Tensor x = random_tensor({2, 2, 6, 6}, rng);
    check_input_grad(pool, x, rng);
}

TEST_CASE("adaptive average pool gradients") {
    Rng rng(15);
    nn::AdaptiveAvgPool2d pool(2);
    Tensor x = random_tensor({2, 3, 7, 7}, rng);
    Tensor y = pool.forward(x);
    CHECK(y.shape() == std::vector<int>{2, 3, 2, 2});
    check_input_grad(pool, x, rng);
}

TEST_CASE("sequential composes forward and backward") {
    Rng rng(16);
    nn::Sequential seq;
    seq.emplace<nn::Linear>(6, 10, rng);
    seq.emplace<nn::Gelu>();
    seq.emplace<nn::Linear>(10, 4, rng);
    Tensor x = random_tensor({3, 6}, rng);
    check_input_grad(seq, x, rng);
    check_param_grads(seq, x, rng);
}

TEST_CASE("adam minimizes a quadratic") {
    nn::Parameter p;
    p.value.resize({4});
    for (int i = 0; i < 4; ++i) p.value[i] = static_cast<float>(i + 1);
    nn::Adam::Options opts;
    opts.lr = 0.1f;
    nn::Adam adam({&p}, opts);
    for (int step = 0; step < 300; ++step) {
        p.ensure_grad();
        for (int i = 0; i < 4; ++i) p.grad[i] = 2.0f * p.value[i];
        adam.step();
        adam.zero_grad();
    }
    for (int i = 0; i < 4; ++i) CHECK(std::abs(p.value[i]) < 1e-2f);
}

TEST_CASE("frozen parameters keep their bits when excluded from the optimizer") {
    Rng rng(17);
    nn::Linear trained(4, 4, rng), frozen(4, 4, rng);
    nn::Adam adam(nn::collect_parameters(trained), {});
    Tensor before = frozen.weight.value;
    Tensor x = random_tensor({2, 4}, rng);
    for (int step = 0; step < 3; ++step) {
        Tensor y = trained.forward(frozen.forward(x));
        Tensor c = random_tensor(y.shape(), rng);
        adam.zero_grad();
        frozen.zero_grad();
        frozen.backward(trained.backward(c));
        adam.step();
    }
    for (int64_t i = 0; i < before.numel(); ++i) CHECK(before[i] == frozen.weight.value[i]);
}

TEST_CASE("checkpoint round-trip preserves tensors and header") {
    nn::Checkpoint ckpt;
    ckpt.header["kind"] = "test";
    ckpt.header["note"] = 42;
    Rng rng(18);
    ckpt.tensors.emplace("a", random_tensor({3, 4}, rng));
    ckpt.tensors.emplace("b.c", random_tensor({2, 2, 2}, rng));
    const std::string path = "/tmp/pipetteloc_test_ckpt.bin";
    nn::save_checkpoint(path, ckpt);
    nn::Checkpoint loaded = nn::load_checkpoint(path);
    CHECK(loaded.header.at("kind") == "test");
    CHECK(loaded.header.at("note") == 42);
    REQUIRE(loaded.tensors.count("a") == 1);
    REQUIRE(loaded.tensors.count("b.c") == 1);
    for (const char* name : {"a", "b.c"}) {
        const Tensor& orig = ckpt.tensors.at(name);
        const Tensor& got = loaded.tensors.at(name);
        REQUIRE(orig.shape() == got.shape());
        for (int64_t i = 0; i < orig.numel(); ++i) CHECK(orig[i] == got[i]);
    }
}

TEST_CASE("eval mode forwards keep no caches but stay deterministic") {
    Rng rng(19);
    nn::Sequential seq;
    seq.emplace<nn::Conv2d>(1, 4, 3, 1, 1, rng);
    seq.emplace<nn::BatchNorm2d>(4);
    seq.emplace<nn::ReLU>();
    seq.set_training(false);
    Tensor x = random_tensor({1, 1, 8, 8}, rng);
    Tensor y1 = seq.forward(x);
    Tensor y2 = seq.forward(x);
    for (int64_t i = 0; i < y1.numel(); ++i) CHECK(y1[i] == y2[i]);
}
