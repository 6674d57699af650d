#pragma once

#include <cmath>
#include <vector>

#include "sadm/tensor/value.hpp"

namespace sadm {

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Adam over a fixed list of parameter handles.
class Adam {
public:
    Adam(std::vector<Value> params, AdamConfig config = {}) : params_(std::move(params)), config_(config) {
        for (const auto& p : params_) {
            m_.emplace_back(p.shape(), 0.0);
            v_.emplace_back(p.shape(), 0.0);
        }
    }

    AdamConfig& config() noexcept { return config_; }
    long steps() const noexcept { return t_; }

    // Parameters without an accumulated gradient are left untouched.
    void step() {
        ++t_;
        const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
        for (std::size_t k = 0; k < params_.size(); ++k) {
            auto& p = params_[k];
            if (!p.has_grad()) continue;
            const auto& g = p.grad();
            auto& w = p.mutable_value();
            auto& m = m_[k];
            auto& v = v_[k];
            for (std::size_t i = 0; i < w.size(); ++i) {
                m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g[i];
                v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g[i] * g[i];
                w[i] -= config_.lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + config_.eps);
            }
        }
    }

    void zero_grad() {
        for (auto& p : params_) p.zero_grad();
    }

private:
    std::vector<Value> params_;
    AdamConfig config_;
    std::vector<Array> m_, v_;
    long t_ = 0;
};

// Global L2 norm of the gradients held by params.
inline double grad_norm(const std::vector<Value>& params) {
    double s = 0.0;
    for (const auto& p : params) {
        if (!p.has_grad()) continue;
        for (double g : p.grad().values()) s += g * g;
    }
    return std::sqrt(s);
}

// Rescales gradients so their global norm is at most max_norm; returns the norm before clipping.
inline double clip_grad_norm(std::vector<Value>& params, double max_norm) {
    const double norm = grad_norm(params);
    if (max_norm > 0.0 && norm > max_norm) {
        const double c = max_norm / (norm + 1e-12);
        for (auto& p : params) {
            if (!p.has_grad()) continue;
            for (auto& g : p.node()->grad.storage()) g *= c;
        }
    }
    return norm;
}

}  // namespace sadm
