#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "sadm/tensor/value.hpp"

namespace sadm {

// Logit written into infeasible positions. Any entry at or below
// kMaskThreshold is treated as masked by the normalizers.
inline constexpr double kMaskSentinel = -1e18;
inline constexpr double kMaskThreshold = -1e17;

inline bool is_masked(double z) noexcept { return !(z > kMaskThreshold); }

// Offsets of contiguous row groups: segment s spans rows [offsets[s], offsets[s+1]).
struct Segments {
    std::vector<std::size_t> offsets{0};

    std::size_t count() const noexcept { return offsets.size() - 1; }
    std::size_t begin(std::size_t s) const noexcept { return offsets[s]; }
    std::size_t end(std::size_t s) const noexcept { return offsets[s + 1]; }
    std::size_t length(std::size_t s) const noexcept { return offsets[s + 1] - offsets[s]; }
    std::size_t total() const noexcept { return offsets.back(); }
    void push(std::size_t len) { offsets.push_back(offsets.back() + len); }
};

namespace ops {

namespace detail {

inline void require(bool ok, const std::string& what) {
    if (!ok) throw DimensionError(what);
}

inline std::string pair_shapes(const char* op, const Value& a, const Value& b) {
    return std::string(op) + ": incompatible shapes " + shape_string(a.shape()) + " and " + shape_string(b.shape());
}

inline void accumulate(Node& parent, const Array& g) {
    if (!parent.requires_grad) return;
    auto& buf = parent.grad_buffer();
    auto* dst = buf.data();
    const auto* src = g.data();
    for (std::size_t i = 0, n = g.size(); i < n; ++i) dst[i] += src[i];
}

// Sum of an elementwise gradient into a scalar-shaped parent.
inline void accumulate_reduced(Node& parent, const Array& g) {
    if (!parent.requires_grad) return;
    double s = 0.0;
    for (double v : g.values()) s += v;
    parent.grad_buffer()[0] += s;
}

template <typename F>
Value unary(const Value& x, F&& f, std::function<void(Node&)> back) {
    Array out(x.shape());
    const auto* in = x.value().data();
    auto* o = out.data();
    for (std::size_t i = 0, n = out.size(); i < n; ++i) o[i] = f(in[i]);
    return make_result(std::move(out), {x}, std::move(back));
}

enum class Binary { add, sub, mul };

inline Value binary(const Value& a, const Value& b, Binary kind, const char* name) {
    const bool a_scalar = a.value().size() == 1 && a.value().rank() == 0;
    const bool b_scalar = b.value().size() == 1 && b.value().rank() == 0;
    require(a.shape() == b.shape() || a_scalar || b_scalar, pair_shapes(name, a, b));
    const Shape shape = (a_scalar && !b_scalar) ? b.shape() : a.shape();
    Array out(shape);
    const std::size_t n = out.size();
    const auto* pa = a.value().data();
    const auto* pb = b.value().data();
    const std::size_t sa = a.value().size() == n ? 1 : 0;
    const std::size_t sb = b.value().size() == n ? 1 : 0;
    auto* o = out.data();
    for (std::size_t i = 0; i < n; ++i) {
        const double x = pa[i * sa], y = pb[i * sb];
        o[i] = kind == Binary::add ? x + y : kind == Binary::sub ? x - y : x * y;
    }
    return make_result(std::move(out), {a, b}, [kind, sa, sb](Node& self) {
        auto& na = *self.parents[0];
        auto& nb = *self.parents[1];
        const auto& g = self.grad;
        const std::size_t n = g.size();
        if (na.requires_grad) {
            Array ga(self.value.shape());
            for (std::size_t i = 0; i < n; ++i) {
                ga[i] = kind == Binary::mul ? g[i] * nb.value[i * sb] : g[i];
            }
            sa ? accumulate(na, ga) : accumulate_reduced(na, ga);
        }
        if (nb.requires_grad) {
            Array gb(self.value.shape());
            for (std::size_t i = 0; i < n; ++i) {
                gb[i] = kind == Binary::mul ? g[i] * na.value[i * sa] : kind == Binary::sub ? -g[i] : g[i];
            }
            sb ? accumulate(nb, gb) : accumulate_reduced(nb, gb);
        }
    });
}

}  // namespace detail

inline Value add(const Value& a, const Value& b) { return detail::binary(a, b, detail::Binary::add, "add"); }
inline Value sub(const Value& a, const Value& b) { return detail::binary(a, b, detail::Binary::sub, "sub"); }
inline Value mul(const Value& a, const Value& b) { return detail::binary(a, b, detail::Binary::mul, "mul"); }

inline Value scale(const Value& x, double c) {
    return detail::unary(x, [c](double v) { return c * v; }, [c](Node& self) {
        Array g(self.grad.shape());
        for (std::size_t i = 0; i < g.size(); ++i) g[i] = c * self.grad[i];
        detail::accumulate(*self.parents[0], g);
    });
}

inline Value relu(const Value& x) {
    return detail::unary(x, [](double v) { return v > 0.0 ? v : 0.0; }, [](Node& self) {
        const auto& in = self.parents[0]->value;
        Array g(self.grad.shape());
        for (std::size_t i = 0; i < g.size(); ++i) g[i] = in[i] > 0.0 ? self.grad[i] : 0.0;
        detail::accumulate(*self.parents[0], g);
    });
}

inline Value tanh(const Value& x) {
    return detail::unary(x, [](double v) { return std::tanh(v); }, [](Node& self) {
        Array g(self.grad.shape());
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double t = self.value[i];
            g[i] = self.grad[i] * (1.0 - t * t);
        }
        detail::accumulate(*self.parents[0], g);
    });
}

// Natural log; inputs must be positive.
inline Value log(const Value& x) {
    for (double v : x.value().values()) {
        if (!(v > 0.0)) throw ContractError("log of non-positive value");
    }
    return detail::unary(x, [](double v) { return std::log(v); }, [](Node& self) {
        const auto& in = self.parents[0]->value;
        Array g(self.grad.shape());
        for (std::size_t i = 0; i < g.size(); ++i) g[i] = self.grad[i] / in[i];
        detail::accumulate(*self.parents[0], g);
    });
}

inline Value sum(const Value& x) {
    double s = 0.0;
    for (double v : x.value().values()) s += v;
    return make_result(Array::scalar(s), {x}, [](Node& self) {
        auto& p = *self.parents[0];
        Array g(p.value.shape(), self.grad[0]);
        detail::accumulate(p, g);
    });
}

inline Value mean(const Value& x) { return scale(sum(x), 1.0 / static_cast<double>(x.value().size())); }

// [m x k] . [k x n] -> [m x n]
inline Value matmul(const Value& a, const Value& b) {
    detail::require(a.value().rank() == 2 && b.value().rank() == 2 && a.shape()[1] == b.shape()[0],
                    detail::pair_shapes("matmul", a, b));
    Array out(Shape{a.shape()[0], b.shape()[1]});
    out.mat().noalias() = a.value().mat() * b.value().mat();
    return make_result(std::move(out), {a, b}, [](Node& self) {
        auto& na = *self.parents[0];
        auto& nb = *self.parents[1];
        if (na.requires_grad) na.grad_buffer().mat().noalias() += self.grad.mat() * nb.value.mat().transpose();
        if (nb.requires_grad) nb.grad_buffer().mat().noalias() += na.value.mat().transpose() * self.grad.mat();
    });
}

// [m x n] + bias[n], bias broadcast over rows.
inline Value add_bias(const Value& x, const Value& bias) {
    detail::require(x.value().rank() == 2 && bias.value().rank() == 1 && bias.shape()[0] == x.shape()[1],
                    detail::pair_shapes("add_bias", x, bias));
    Array out = x.value();
    out.mat().rowwise() += bias.value().mat().row(0);
    return make_result(std::move(out), {x, bias}, [](Node& self) {
        detail::accumulate(*self.parents[0], self.grad);
        auto& nb = *self.parents[1];
        if (nb.requires_grad) nb.grad_buffer().mat().row(0) += self.grad.mat().colwise().sum();
    });
}

inline Value linear(const Value& x, const Value& weight, const Value& bias) {
    return add_bias(matmul(x, weight), bias);
}

// Replaces entries whose flag is set by kMaskSentinel; no gradient flows there.
inline Value masked_fill(const Value& x, std::span<const std::uint8_t> masked) {
    detail::require(masked.size() == x.value().size(), "masked_fill: mask length does not match " + shape_string(x.shape()));
    Array out = x.value();
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (masked[i]) out[i] = kMaskSentinel;
    }
    std::vector<std::uint8_t> keep(masked.begin(), masked.end());
    return make_result(std::move(out), {x}, [keep = std::move(keep)](Node& self) {
        Array g = self.grad;
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (keep[i]) g[i] = 0.0;
        }
        detail::accumulate(*self.parents[0], g);
    });
}

namespace kernels {

// Numerically stable softmax over one row; masked entries get exactly 0.
inline void softmax_row(const double* z, double* p, std::size_t n) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
        if (!is_masked(z[i])) mx = std::max(mx, z[i]);
    }
    if (mx == -std::numeric_limits<double>::infinity()) {
        throw InfeasibleError("softmax: every entry of the row is masked");
    }
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        p[i] = is_masked(z[i]) ? 0.0 : std::exp(z[i] - mx);
        total += p[i];
    }
    for (std::size_t i = 0; i < n; ++i) p[i] /= total;
}

// Vector-Jacobian product of softmax: dz = p * (dp - <p, dp>).
inline void softmax_row_vjp(const double* p, const double* dp, double* dz, std::size_t n) {
    double dot = 0.0;
    for (std::size_t i = 0; i < n; ++i) dot += p[i] * dp[i];
    for (std::size_t i = 0; i < n; ++i) dz[i] += p[i] * (dp[i] - dot);
}

}  // namespace kernels

// Softmax along the last axis (each row of a matrix, or the whole vector).
inline Value softmax(const Value& z) {
    const auto& in = z.value();
    const std::size_t rows = in.rows(), cols = in.cols();
    Array out(in.shape());
    for (std::size_t r = 0; r < rows; ++r) kernels::softmax_row(in.data() + r * cols, out.data() + r * cols, cols);
    return make_result(std::move(out), {z}, [rows, cols](Node& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        auto& g = p.grad_buffer();
        for (std::size_t r = 0; r < rows; ++r) {
            kernels::softmax_row_vjp(self.value.data() + r * cols, self.grad.data() + r * cols, g.data() + r * cols, cols);
        }
    });
}

// Running statistics of a batch-norm layer. Mutated in train mode.
struct RunningStats {
    Array mean;
    Array var;

    explicit RunningStats(std::size_t d = 1) : mean(Shape{d}, 0.0), var(Shape{d}, 1.0) {}
};

enum class NormMode { train, eval };

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

// Batch normalization over the rows of x [B x d].
inline Value batch_norm(const Value& x, const Value& gamma, const Value& beta, RunningStats& stats, NormMode mode) {
    detail::require(x.value().rank() == 2 && gamma.value().size() == x.shape()[1] && beta.value().size() == x.shape()[1],
                    "batch_norm: x " + shape_string(x.shape()) + " vs gamma " + shape_string(gamma.shape()));
    const std::size_t batch = x.shape()[0], d = x.shape()[1];
    if (mode == NormMode::train && batch < 2) {
        throw ContractError("batch_norm: degenerate batch of " + std::to_string(batch) + " row(s) in train mode");
    }
    const auto xm = x.value().mat();
    Eigen::RowVectorXd mu(d), inv_std(d);
    if (mode == NormMode::train) {
        mu = xm.colwise().mean();
        Eigen::RowVectorXd var = (xm.rowwise() - mu).array().square().colwise().sum() / static_cast<double>(batch);
        inv_std = (var.array() + kBatchNormEps).rsqrt();
        const double unbias = static_cast<double>(batch) / static_cast<double>(batch - 1);
        auto rm = stats.mean.mat();
        auto rv = stats.var.mat();
        rm = (1.0 - kBatchNormMomentum) * rm + kBatchNormMomentum * mu;
        rv = (1.0 - kBatchNormMomentum) * rv + kBatchNormMomentum * unbias * var;
    } else {
        mu = stats.mean.mat().row(0);
        inv_std = (stats.var.mat().row(0).array() + kBatchNormEps).rsqrt();
    }
    Array xhat(x.shape());
    xhat.mat() = (xm.rowwise() - mu).array().rowwise() * inv_std.array();
    Array out(x.shape());
    out.mat() = (xhat.mat().array().rowwise() * gamma.value().mat().row(0).array()).rowwise() +
                beta.value().mat().row(0).array();
    return make_result(std::move(out), {x, gamma, beta},
                       [xhat = std::move(xhat), inv_std, mode, batch](Node& self) {
                           auto& nx = *self.parents[0];
                           auto& ng = *self.parents[1];
                           auto& nb = *self.parents[2];
                           const auto gy = self.grad.mat();
                           if (ng.requires_grad) {
                               ng.grad_buffer().mat().row(0) += (gy.array() * xhat.mat().array()).colwise().sum().matrix();
                           }
                           if (nb.requires_grad) nb.grad_buffer().mat().row(0) += gy.colwise().sum();
                           if (!nx.requires_grad) return;
                           RowMatrix dxhat = gy.array().rowwise() * ng.value.mat().row(0).array();
                           auto gx = nx.grad_buffer().mat();
                           if (mode == NormMode::eval) {
                               gx.array() += dxhat.array().rowwise() * inv_std.array();
                               return;
                           }
                           const double n = static_cast<double>(batch);
                           const Eigen::RowVectorXd sum_d = dxhat.colwise().sum();
                           const Eigen::RowVectorXd sum_dx = (dxhat.array() * xhat.mat().array()).colwise().sum().matrix();
                           RowMatrix t = (dxhat * n).rowwise() - sum_d;
                           t.array() -= xhat.mat().array().rowwise() * sum_dx.array();
                           gx.array() += (t.array().rowwise() * inv_std.array()) / n;
                       });
}

// Concatenate matrices with equal row counts along columns.
inline Value concat_cols(const std::vector<Value>& parts) {
    detail::require(!parts.empty(), "concat_cols: no inputs");
    const std::size_t rows = parts[0].value().rows();
    std::size_t cols = 0;
    std::vector<std::size_t> starts;
    for (const auto& p : parts) {
        detail::require(p.value().rank() == 2 && p.value().rows() == rows,
                        "concat_cols: row mismatch at " + shape_string(p.shape()));
        starts.push_back(cols);
        cols += p.value().cols();
    }
    Array out(Shape{rows, cols});
    for (std::size_t k = 0; k < parts.size(); ++k) {
        out.mat().middleCols(starts[k], parts[k].value().cols()) = parts[k].value().mat();
    }
    return make_result(std::move(out), parts, [starts](Node& self) {
        for (std::size_t k = 0; k < self.parents.size(); ++k) {
            auto& p = *self.parents[k];
            if (!p.requires_grad) continue;
            p.grad_buffer().mat() += self.grad.mat().middleCols(starts[k], p.value.cols());
        }
    });
}

// Stack matrices with equal column counts along rows.
inline Value concat_rows(const std::vector<Value>& parts) {
    detail::require(!parts.empty(), "concat_rows: no inputs");
    const std::size_t cols = parts[0].value().cols();
    std::size_t rows = 0;
    std::vector<std::size_t> starts;
    for (const auto& p : parts) {
        detail::require(p.value().rank() == 2 && p.value().cols() == cols,
                        "concat_rows: column mismatch at " + shape_string(p.shape()));
        starts.push_back(rows);
        rows += p.value().rows();
    }
    Array out(Shape{rows, cols});
    for (std::size_t k = 0; k < parts.size(); ++k) {
        out.mat().middleRows(starts[k], parts[k].value().rows()) = parts[k].value().mat();
    }
    return make_result(std::move(out), parts, [starts](Node& self) {
        for (std::size_t k = 0; k < self.parents.size(); ++k) {
            auto& p = *self.parents[k];
            if (!p.requires_grad) continue;
            p.grad_buffer().mat() += self.grad.mat().middleRows(starts[k], p.value.rows());
        }
    });
}

// Rows of x [N x d] at the given indices -> [idx.size() x d]; indices may repeat.
inline Value gather_rows(const Value& x, std::vector<std::size_t> idx) {
    detail::require(x.value().rank() == 2 && !idx.empty(), "gather_rows: expected matrix and non-empty index list");
    const std::size_t d = x.shape()[1];
    Array out(Shape{idx.size(), d});
    for (std::size_t r = 0; r < idx.size(); ++r) {
        detail::require(idx[r] < x.shape()[0], "gather_rows: index out of range");
        std::copy_n(x.value().data() + idx[r] * d, d, out.data() + r * d);
    }
    return make_result(std::move(out), {x}, [idx = std::move(idx), d](Node& self) {
        if (!self.parents[0]->requires_grad) return;
        auto& g = self.parents[0]->grad_buffer();
        for (std::size_t r = 0; r < idx.size(); ++r) {
            for (std::size_t c = 0; c < d; ++c) g[idx[r] * d + c] += self.grad[r * d + c];
        }
    });
}

// Flat elements of x at the given indices -> vector.
inline Value gather_elems(const Value& x, std::vector<std::size_t> idx) {
    std::vector<double> out(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        detail::require(idx[i] < x.value().size(), "gather_elems: index out of range");
        out[i] = x.value()[idx[i]];
    }
    return make_result(Array::vector(std::move(out)), {x}, [idx = std::move(idx)](Node& self) {
        if (!self.parents[0]->requires_grad) return;
        auto& g = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < idx.size(); ++i) g[idx[i]] += self.grad[i];
    });
}

// Vector x [k] added into a zero vector of length n at positions idx.
inline Value scatter_add(const Value& x, std::vector<std::size_t> idx, std::size_t n) {
    detail::require(x.value().size() == idx.size(), "scatter_add: index count does not match input");
    Array out(Shape{n}, 0.0);
    for (std::size_t i = 0; i < idx.size(); ++i) {
        detail::require(idx[i] < n, "scatter_add: index out of range");
        out[idx[i]] += x.value()[i];
    }
    return make_result(std::move(out), {x}, [idx = std::move(idx)](Node& self) {
        if (!self.parents[0]->requires_grad) return;
        auto& g = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < idx.size(); ++i) g[i] += self.grad[idx[i]];
    });
}

// Column means of each row segment of x [N x d] -> [segments x d].
inline Value segment_mean(const Value& x, const Segments& seg) {
    detail::require(x.value().rank() == 2 && seg.total() == x.shape()[0], "segment_mean: segments do not cover rows");
    const std::size_t d = x.shape()[1];
    Array out(Shape{seg.count(), d});
    for (std::size_t s = 0; s < seg.count(); ++s) {
        detail::require(seg.length(s) > 0, "segment_mean: empty segment");
        out.mat().row(s) = x.value().mat().middleRows(seg.begin(s), seg.length(s)).colwise().mean();
    }
    return make_result(std::move(out), {x}, [seg](Node& self) {
        if (!self.parents[0]->requires_grad) return;
        auto g = self.parents[0]->grad_buffer().mat();
        for (std::size_t s = 0; s < seg.count(); ++s) {
            const double inv = 1.0 / static_cast<double>(seg.length(s));
            g.middleRows(seg.begin(s), seg.length(s)).rowwise() += inv * self.grad.mat().row(s);
        }
    });
}

}  // namespace ops
}  // namespace sadm
