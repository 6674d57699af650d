#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "sadm/tensor/ops.hpp"

namespace sadm {

// Normalizer used where the attention model would use softmax.
enum class Activation { softmax, entmax15 };

inline const char* to_string(Activation a) { return a == Activation::softmax ? "softmax" : "entmax15"; }

inline Activation activation_from_string(const std::string& s) {
    if (s == "softmax") return Activation::softmax;
    if (s == "entmax15") return Activation::entmax15;
    throw ContractError("unknown activation '" + s + "'");
}

// Entropy order matched to each normalizer: Shannon for softmax, Tsallis 1.5 for entmax15.
inline double entropy_alpha(Activation a) { return a == Activation::softmax ? 1.0 : 1.5; }

// Distribution with its support and the entmax order that produced it.
struct SparseDist {
    std::vector<double> probs;
    double alpha = 1.0;

    std::vector<std::size_t> support() const {
        std::vector<std::size_t> s;
        for (std::size_t i = 0; i < probs.size(); ++i) {
            if (probs[i] > 0.0) s.push_back(i);
        }
        return s;
    }
    std::size_t support_size() const {
        return static_cast<std::size_t>(std::count_if(probs.begin(), probs.end(), [](double p) { return p > 0.0; }));
    }
};

namespace kernels {

// Exact 1.5-entmax of one row. With z' = z/2 sorted in decreasing order, the
// support size k is the largest k whose threshold
//   tau_k = mean_k - sqrt((1 - k * (msq_k - mean_k^2)) / k)
// satisfies tau_k <= z'_(k); then p_i = max(0, z'_i - tau)^2.
inline void entmax15_row(const double* z, double* p, std::size_t n) {
    std::vector<double> sorted;
    sorted.reserve(n);
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
        if (!is_masked(z[i])) mx = std::max(mx, z[i]);
    }
    if (mx == -std::numeric_limits<double>::infinity()) {
        throw InfeasibleError("entmax15: every entry of the row is masked");
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (!is_masked(z[i])) sorted.push_back((z[i] - mx) / 2.0);
    }
    std::sort(sorted.begin(), sorted.end(), std::greater<>());

    double csum = 0.0, csq = 0.0, tau = sorted[0] - 1.0;
    for (std::size_t k = 1; k <= sorted.size(); ++k) {
        const double v = sorted[k - 1];
        csum += v;
        csq += v * v;
        const double kd = static_cast<double>(k);
        const double mean = csum / kd;
        const double delta = (1.0 - kd * (csq / kd - mean * mean)) / kd;
        const double tau_k = mean - std::sqrt(std::max(delta, 0.0));
        if (tau_k <= v) tau = tau_k;
        else break;
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (is_masked(z[i])) {
            p[i] = 0.0;
            continue;
        }
        const double d = (z[i] - mx) / 2.0 - tau;
        p[i] = d > 0.0 ? d * d : 0.0;
    }
}

// Vector-Jacobian product of 1.5-entmax: with s = sqrt(p),
//   dz = s * (v - <s, v> / sum(s)).
// Entries at the support boundary have s = 0 and receive no gradient.
inline void entmax15_row_vjp(const double* p, const double* v, double* dz, std::size_t n) {
    double ssum = 0.0, sv = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double s = std::sqrt(p[i]);
        ssum += s;
        sv += s * v[i];
    }
    const double q = sv / ssum;
    for (std::size_t i = 0; i < n; ++i) dz[i] += std::sqrt(p[i]) * (v[i] - q);
}

inline void normalize_row(Activation act, const double* z, double* p, std::size_t n) {
    act == Activation::softmax ? ops::kernels::softmax_row(z, p, n) : entmax15_row(z, p, n);
}

inline void normalize_row_vjp(Activation act, const double* p, const double* v, double* dz, std::size_t n) {
    act == Activation::softmax ? ops::kernels::softmax_row_vjp(p, v, dz, n) : entmax15_row_vjp(p, v, dz, n);
}

// Tsallis entropy of order alpha; alpha == 1 is the Shannon entropy.
inline double tsallis_row(const double* p, std::size_t n, double alpha) {
    double h = 0.0;
    if (alpha == 1.0) {
        for (std::size_t i = 0; i < n; ++i) {
            if (p[i] > 0.0) h -= p[i] * std::log(p[i]);
        }
        return h;
    }
    for (std::size_t i = 0; i < n; ++i) h += p[i] - std::pow(p[i], alpha);
    return h / (alpha * (alpha - 1.0));
}

// d H / d p_i. Zero-probability entries get 0 under Shannon (p log p -> 0).
inline void tsallis_row_grad(const double* p, std::size_t n, double alpha, double upstream, double* dp) {
    if (alpha == 1.0) {
        for (std::size_t i = 0; i < n; ++i) {
            if (p[i] > 0.0) dp[i] += upstream * -(std::log(p[i]) + 1.0);
        }
        return;
    }
    const double c = 1.0 / (alpha * (alpha - 1.0));
    for (std::size_t i = 0; i < n; ++i) dp[i] += upstream * c * (1.0 - alpha * std::pow(p[i], alpha - 1.0));
}

}  // namespace kernels

namespace ops {

// Row-wise normalization (softmax or 1.5-entmax) along the last axis.
// Entries carrying the mask sentinel receive exactly zero.
inline Value normalize(const Value& z, Activation act) {
    if (act == Activation::softmax) return softmax(z);
    const auto& in = z.value();
    const std::size_t rows = in.rows(), cols = in.cols();
    Array out(in.shape());
    for (std::size_t r = 0; r < rows; ++r) sadm::kernels::entmax15_row(in.data() + r * cols, out.data() + r * cols, cols);
    return make_result(std::move(out), {z}, [rows, cols](Node& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        auto& g = p.grad_buffer();
        for (std::size_t r = 0; r < rows; ++r) {
            sadm::kernels::entmax15_row_vjp(self.value.data() + r * cols, self.grad.data() + r * cols, g.data() + r * cols,
                                      cols);
        }
    });
}

inline Value entmax15(const Value& z) { return normalize(z, Activation::entmax15); }

// Tsallis entropy of each row of p -> vector [rows]; a rank-1 input gives a scalar.
inline Value tsallis_entropy(const Value& p, double alpha) {
    const auto& in = p.value();
    const std::size_t rows = in.rows(), cols = in.cols();
    Array out = in.rank() <= 1 ? Array::scalar(0.0) : Array(Shape{rows});
    for (std::size_t r = 0; r < rows; ++r) out[r] = sadm::kernels::tsallis_row(in.data() + r * cols, cols, alpha);
    return make_result(std::move(out), {p}, [rows, cols, alpha](Node& self) {
        auto& parent = *self.parents[0];
        if (!parent.requires_grad) return;
        auto& g = parent.grad_buffer();
        for (std::size_t r = 0; r < rows; ++r) {
            sadm::kernels::tsallis_row_grad(parent.value.data() + r * cols, cols, alpha, self.grad[r], g.data() + r * cols);
        }
    });
}

}  // namespace ops

// General alpha-entmax by bisection on the threshold. Forward only; used as
// an oracle for the closed form and for orders without one.
inline std::vector<double> entmax_bisect(std::span<const double> z, double alpha, int iters) {
    if (!(alpha > 1.0)) throw ContractError("entmax_bisect: alpha must exceed 1");
    if (iters < 1) throw ContractError("entmax_bisect: iters must be at least 1");
    const std::size_t n = z.size();
    std::vector<double> x(n), p(n, 0.0);
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
        x[i] = (alpha - 1.0) * z[i];
        if (!is_masked(z[i])) mx = std::max(mx, x[i]);
    }
    if (mx == -std::numeric_limits<double>::infinity()) throw InfeasibleError("entmax_bisect: every entry is masked");
    const double inv = 1.0 / (alpha - 1.0);
    auto mass = [&](double tau) {
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double d = x[i] - tau;
            p[i] = (!is_masked(z[i]) && d > 0.0) ? std::pow(d, inv) : 0.0;
            total += p[i];
        }
        return total;
    };
    // Sum of p is decreasing in tau: >= 1 at max - 1, <= 1 at max.
    double lo = mx - 1.0, hi = mx;
    for (int it = 0; it < iters; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (mass(mid) >= 1.0) lo = mid;
        else hi = mid;
    }
    const double total = mass(lo);
    for (double& v : p) v /= total;
    return p;
}

inline SparseDist entmax15(std::span<const double> z) {
    SparseDist d{std::vector<double>(z.size()), 1.5};
    sadm::kernels::entmax15_row(z.data(), d.probs.data(), z.size());
    return d;
}

inline std::vector<double> softmax(std::span<const double> z) {
    std::vector<double> p(z.size());
    ops::kernels::softmax_row(z.data(), p.data(), z.size());
    return p;
}

inline double tsallis_entropy(std::span<const double> p, double alpha) {
    return sadm::kernels::tsallis_row(p.data(), p.size(), alpha);
}

}  // namespace sadm
