#pragma once

#include <string>
#include <vector>

#include "pipetteloc/nn/layers.hpp"

namespace pipetteloc::nn {

// Adam over an explicit parameter list. Parameters not in the list are
// frozen by construction: they receive no updates and keep their bits.
class Adam {
public:
    struct Options {
        float lr = 1e-3f;
        float beta1 = 0.9f;
        float beta2 = 0.999f;
        float eps = 1e-8f;
    };

    Adam(std::vector<Parameter*> params, Options opts);

    void step();
    void zero_grad();

    float lr() const { return opts_.lr; }
    void set_lr(float lr) { opts_.lr = lr; }
    int64_t step_count() const { return t_; }

    // Serialization hooks: moment vectors aligned with the parameter list.
    const std::vector<Tensor>& first_moments() const { return m_; }
    const std::vector<Tensor>& second_moments() const { return v_; }
    void restore_state(std::vector<Tensor> m, std::vector<Tensor> v, int64_t t);

private:
    std::vector<Parameter*> params_;
    Options opts_;
    std::vector<Tensor> m_, v_;
    int64_t t_ = 0;
};

// Collects parameters of a module in deterministic visit order.
std::vector<Parameter*> collect_parameters(Module& m);

}  // namespace pipetteloc::nn
