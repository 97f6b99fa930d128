#include "pipetteloc/nn/optim.hpp"

#include <cmath>

namespace pipetteloc::nn {

Adam::Adam(std::vector<Parameter*> params, Options opts)
    : params_(std::move(params)), opts_(opts) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (Parameter* p : params_) {
        m_.emplace_back(p->value.shape());
        v_.emplace_back(p->value.shape());
    }
}

void Adam::step() {
    ++t_;
    const float bc1 = 1.0f - std::pow(opts_.beta1, static_cast<float>(t_));
    const float bc2 = 1.0f - std::pow(opts_.beta2, static_cast<float>(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
        Parameter& p = *params_[i];
        if (p.grad.empty()) continue;  // no gradient accumulated this step
        Tensor& m = m_[i];
        Tensor& v = v_[i];
        for (int64_t j = 0; j < p.value.numel(); ++j) {
            const float g = p.grad[j];
            m[j] = opts_.beta1 * m[j] + (1.0f - opts_.beta1) * g;
            v[j] = opts_.beta2 * v[j] + (1.0f - opts_.beta2) * g * g;
            const float mhat = m[j] / bc1;
            const float vhat = v[j] / bc2;
            p.value[j] -= opts_.lr * mhat / (std::sqrt(vhat) + opts_.eps);
        }
    }
}

void Adam::zero_grad() {
    for (Parameter* p : params_)
        if (!p->grad.empty()) p->grad.zero();
}

void Adam::restore_state(std::vector<Tensor> m, std::vector<Tensor> v, int64_t t) {
    if (m.size() != params_.size() || v.size() != params_.size())
        throw std::invalid_argument("Adam::restore_state: moment count mismatch");
    m_ = std::move(m);
    v_ = std::move(v);
    t_ = t;
}

std::vector<Parameter*> collect_parameters(Module& m) {
    std::vector<Parameter*> out;
    m.visit_params("", [&](const std::string&, Parameter& p) { out.push_back(&p); });
    return out;
}

}  // namespace pipetteloc::nn
