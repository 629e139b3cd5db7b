#pragma once

// Seeded xavier-uniform initialization and the Adam optimizer over a
// parameter registry. Parameter sweeps iterate the registry in name order so
// updates are deterministic.

#include <cmath>
#include <map>
#include <string>

#include "apa/nn/registry.hpp"

namespace apa::nn {

// Xavier-uniform: U(-L, L) with L = sqrt(6 / (fan_in + fan_out)). For a
// rank-2 [in, out] tensor the fans are its two dims; rank-1 tensors are
// initialized to zero (biases) unless `ones` is requested (layer-norm gains).
inline void xavier_init(const TensorPtr<float>& t, Rng& rng) {
    if (t->shape.size() == 2) {
        const double limit = std::sqrt(6.0 / (t->shape[0] + t->shape[1]));
        for (float& v : t->data) v = static_cast<float>(rng.uniform(-limit, limit));
    } else {
        for (float& v : t->data) v = 0.0f;
    }
}

inline TensorPtr<float> make_param(Registry& registry, const std::string& name, Shape shape,
                                   Rng& rng) {
    auto t = make_tensor<float>(std::move(shape));
    xavier_init(t, rng);
    t->requires_grad = true;
    t->ensure_grad();
    if (!registry.emplace(name, t).second)
        throw Error("duplicate parameter name \"" + name + "\"");
    return t;
}

inline TensorPtr<float> make_param_ones(Registry& registry, const std::string& name,
                                        Shape shape) {
    auto t = make_tensor<float>(std::move(shape));
    for (float& v : t->data) v = 1.0f;
    t->requires_grad = true;
    t->ensure_grad();
    if (!registry.emplace(name, t).second)
        throw Error("duplicate parameter name \"" + name + "\"");
    return t;
}

class Adam {
public:
    explicit Adam(double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999,
                  double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    // One update over every registry tensor from its accumulated gradient.
    // Tensors listed in `frozen` (exact names) are skipped.
    void step(Registry& registry, const std::map<std::string, bool>* frozen = nullptr) {
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, t_);
        const double bc2 = 1.0 - std::pow(beta2_, t_);
        for (auto& [name, param] : registry) {
            if (frozen != nullptr) {
                auto it = frozen->find(name);
                if (it != frozen->end() && it->second) continue;
            }
            auto& m = m_[name];
            auto& v = v_[name];
            if (m.size() != param->numel()) m.assign(param->numel(), 0.0);
            if (v.size() != param->numel()) v.assign(param->numel(), 0.0);
            for (std::size_t i = 0; i < param->numel(); ++i) {
                const double g = static_cast<double>(param->grad[i]);
                m[i] = beta1_ * m[i] + (1.0 - beta1_) * g;
                v[i] = beta2_ * v[i] + (1.0 - beta2_) * g * g;
                const double mhat = m[i] / bc1;
                const double vhat = v[i] / bc2;
                param->data[i] -= static_cast<float>(lr_ * mhat / (std::sqrt(vhat) + eps_));
            }
        }
    }

    double learning_rate() const { return lr_; }

private:
    double lr_, beta1_, beta2_, eps_;
    long t_ = 0;
    std::map<std::string, std::vector<double>> m_, v_;
};

}  // namespace apa::nn
