#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "sadm/sparse_act.hpp"

namespace sadm::ops {

// Multi-head scaled dot-product attention where query row r attends only to
// the key/value rows of segment q_segment[r]. Heads split the feature axis
// into equal slices. Rows flagged in kv_masked (may be empty) are excluded.
//
//   Q [R x d], K [N x d], V [N x d]  ->  [R x d]
inline Value segment_attention(const Value& q, const Value& k, const Value& v, const Segments& kv_seg,
                               std::vector<std::size_t> q_segment, std::size_t heads, Activation act,
                               std::vector<std::uint8_t> kv_masked = {}) {
    const std::size_t rows = q.value().rows(), d = q.value().cols();
    detail::require(q.value().rank() == 2 && k.value().rank() == 2 && v.value().rank() == 2 && k.shape() == v.shape() &&
                        k.value().cols() == d && kv_seg.total() == k.value().rows() && q_segment.size() == rows,
                    "segment_attention: incompatible shapes " + shape_string(q.shape()) + ", " + shape_string(k.shape()) +
                        ", " + shape_string(v.shape()));
    detail::require(heads > 0 && d % heads == 0, "segment_attention: feature size not divisible by head count");
    detail::require(kv_masked.empty() || kv_masked.size() == kv_seg.total(), "segment_attention: mask length mismatch");
    const std::size_t dk = d / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dk));

    // probs for (row r, head h) start at prob_offset[r] + h * len(r)
    std::vector<std::size_t> prob_offset(rows + 1, 0);
    for (std::size_t r = 0; r < rows; ++r) {
        detail::require(q_segment[r] < kv_seg.count(), "segment_attention: segment index out of range");
        prob_offset[r + 1] = prob_offset[r] + heads * kv_seg.length(q_segment[r]);
    }
    std::vector<double> probs(prob_offset[rows]);
    std::vector<double> scores;
    Array out(Shape{rows, d}, 0.0);
    const double* Q = q.value().data();
    const double* K = k.value().data();
    const double* V = v.value().data();
    for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t s = q_segment[r], b = kv_seg.begin(s), m = kv_seg.length(s);
        scores.resize(m);
        for (std::size_t h = 0; h < heads; ++h) {
            const double* qh = Q + r * d + h * dk;
            for (std::size_t j = 0; j < m; ++j) {
                if (!kv_masked.empty() && kv_masked[b + j]) {
                    scores[j] = kMaskSentinel;
                    continue;
                }
                const double* kj = K + (b + j) * d + h * dk;
                double acc = 0.0;
                for (std::size_t c = 0; c < dk; ++c) acc += qh[c] * kj[c];
                scores[j] = acc * scale;
            }
            double* p = probs.data() + prob_offset[r] + h * m;
            sadm::kernels::normalize_row(act, scores.data(), p, m);
            double* oh = out.data() + r * d + h * dk;
            for (std::size_t j = 0; j < m; ++j) {
                if (p[j] == 0.0) continue;
                const double* vj = V + (b + j) * d + h * dk;
                for (std::size_t c = 0; c < dk; ++c) oh[c] += p[j] * vj[c];
            }
        }
    }
    return make_result(
        std::move(out), {q, k, v},
        [kv_seg, q_segment = std::move(q_segment), probs = std::move(probs), prob_offset = std::move(prob_offset), heads,
         dk, d, scale, act](Node& self) {
            auto& nq = *self.parents[0];
            auto& nk = *self.parents[1];
            auto& nv = *self.parents[2];
            const double* Q = nq.value.data();
            const double* K = nk.value.data();
            const double* V = nv.value.data();
            double* dQ = nq.requires_grad ? nq.grad_buffer().data() : nullptr;
            double* dK = nk.requires_grad ? nk.grad_buffer().data() : nullptr;
            double* dV = nv.requires_grad ? nv.grad_buffer().data() : nullptr;
            const double* dO = self.grad.data();
            std::vector<double> dp, ds;
            for (std::size_t r = 0; r < q_segment.size(); ++r) {
                const std::size_t s = q_segment[r], b = kv_seg.begin(s), m = kv_seg.length(s);
                dp.assign(m, 0.0);
                ds.assign(m, 0.0);
                for (std::size_t h = 0; h < heads; ++h) {
                    const double* p = probs.data() + prob_offset[r] + h * m;
                    const double* go = dO + r * d + h * dk;
                    for (std::size_t j = 0; j < m; ++j) {
                        const double* vj = V + (b + j) * d + h * dk;
                        double acc = 0.0;
                        for (std::size_t c = 0; c < dk; ++c) acc += go[c] * vj[c];
                        dp[j] = acc;
                        if (dV && p[j] != 0.0) {
                            double* gv = dV + (b + j) * d + h * dk;
                            for (std::size_t c = 0; c < dk; ++c) gv[c] += p[j] * go[c];
                        }
                    }
                    std::fill(ds.begin(), ds.end(), 0.0);
                    sadm::kernels::normalize_row_vjp(act, p, dp.data(), ds.data(), m);
                    const double* qh = Q + r * d + h * dk;
                    for (std::size_t j = 0; j < m; ++j) {
                        const double g = ds[j] * scale;
                        if (g == 0.0) continue;
                        const double* kj = K + (b + j) * d + h * dk;
                        if (dQ) {
                            double* gq = dQ + r * d + h * dk;
                            for (std::size_t c = 0; c < dk; ++c) gq[c] += g * kj[c];
                        }
                        if (dK) {
                            double* gk = dK + (b + j) * d + h * dk;
                            for (std::size_t c = 0; c < dk; ++c) gk[c] += g * qh[c];
                        }
                    }
                }
            }
        });
}

// Dot products of each query row with every key row of its segment, padded
// to `width` columns with zeros:  out[r, j] = <Q[r], K[begin(seg_r) + j]>.
inline Value segment_dot(const Value& q, const Value& k, const Segments& kv_seg, std::vector<std::size_t> q_segment,
                         std::size_t width) {
    const std::size_t rows = q.value().rows(), d = q.value().cols();
    detail::require(q.value().rank() == 2 && k.value().rank() == 2 && k.value().cols() == d &&
                        kv_seg.total() == k.value().rows() && q_segment.size() == rows,
                    detail::pair_shapes("segment_dot", q, k));
    Array out(Shape{rows, width}, 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t s = q_segment[r];
        detail::require(s < kv_seg.count() && kv_seg.length(s) <= width, "segment_dot: segment wider than output");
        const auto b = static_cast<Eigen::Index>(kv_seg.begin(s));
        const auto m = static_cast<Eigen::Index>(kv_seg.length(s));
        out.mat().row(r).head(m).noalias() = q.value().mat().row(r) * k.value().mat().middleRows(b, m).transpose();
    }
    return make_result(std::move(out), {q, k}, [kv_seg, q_segment = std::move(q_segment)](Node& self) {
        auto& nq = *self.parents[0];
        auto& nk = *self.parents[1];
        for (std::size_t r = 0; r < q_segment.size(); ++r) {
            const auto s = q_segment[r];
            const auto b = static_cast<Eigen::Index>(kv_seg.begin(s));
            const auto m = static_cast<Eigen::Index>(kv_seg.length(s));
            const auto g = self.grad.mat().row(r).head(m);
            if (nq.requires_grad) nq.grad_buffer().mat().row(r).noalias() += g * nk.value.mat().middleRows(b, m);
            if (nk.requires_grad) {
                nk.grad_buffer().mat().middleRows(b, m).noalias() += g.transpose() * nq.value.mat().row(r);
            }
        }
    });
}

}  // namespace sadm::ops
