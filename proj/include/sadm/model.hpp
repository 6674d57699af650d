#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "sadm/attention.hpp"
#include "sadm/random.hpp"
#include "sadm/tensor/ops.hpp"
#include "sadm/vrp.hpp"

namespace sadm {

struct ModelConfig {
    std::size_t d_h = 128;
    std::size_t n_layers = 3;
    std::size_t n_heads = 8;
    std::size_t ff_hidden = 512;
    Activation attention = Activation::softmax;  // encoder and glimpse normalization
    Activation output = Activation::softmax;     // action distribution
    double clip = 10.0;

    static constexpr std::size_t kFeatures = 3;  // x, y, normalized demand

    std::size_t context_dim() const noexcept { return 2 * d_h + 1; }

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Activation presets matching the experiment grid: plain attention model,
// sparse attention only, sparse attention plus sparse action distribution.
enum class Preset { softmax, entmax_reg, entmax_both };

inline Preset preset_from_string(const std::string& s) {
    if (s == "softmax") return Preset::softmax;
    if (s == "entmax-reg") return Preset::entmax_reg;
    if (s == "entmax-both") return Preset::entmax_both;
    throw ContractError("unknown activation preset '" + s + "' (expected softmax|entmax-reg|entmax-both)");
}

inline const char* to_string(Preset p) {
    switch (p) {
        case Preset::softmax: return "softmax";
        case Preset::entmax_reg: return "entmax-reg";
        default: return "entmax-both";
    }
}

inline ModelConfig with_preset(ModelConfig c, Preset p) {
    c.attention = p == Preset::softmax ? Activation::softmax : Activation::entmax15;
    c.output = p == Preset::entmax_both ? Activation::entmax15 : Activation::softmax;
    return c;
}

struct EncoderLayer {
    Value w_q, w_k, w_v, w_o;
    Value ff_w0, ff_b0, ff_w1, ff_b1;
    Value bn1_gamma, bn1_beta, bn2_gamma, bn2_beta;
    ops::RunningStats bn1, bn2;
};

// All learnable weights plus batch-norm running statistics. Weight matrices
// are stored [in x out] and applied as x . W.
class ModelParams {
public:
    ModelConfig config;

    Value w_x, b_x, w_0, b_0;  // customer / depot input projections
    std::vector<EncoderLayer> layers;
    Value w_ctx;                                  // context [2 d_h + 1] -> d_h query
    Value glimpse_w_k, glimpse_w_v, glimpse_w_o;  // decoder multi-head glimpse
    Value w_q, w_k;                               // single-head pointer

    static ModelParams initialize(const ModelConfig& config, std::uint64_t seed) {
        if (config.d_h == 0 || config.n_heads == 0 || config.d_h % config.n_heads != 0) {
            throw ContractError("model: d_h must be a positive multiple of the head count");
        }
        ModelParams p;
        p.config = config;
        p.allocate();
        Rng rng(seed);
        for (auto& [name, v] : p.named_parameters()) {
            auto& a = v.mutable_value();
            if (name.find("gamma") != std::string::npos) {
                a.fill(1.0);
            } else if (name.find("beta") != std::string::npos) {
                a.fill(0.0);
            } else {
                // fan-in is the leading dimension of weights; biases use their layer's fan-in
                const double fan_in = static_cast<double>(a.rank() == 2 ? a.shape()[0] : p.bias_fan_in(name));
                std::uniform_real_distribution<double> u(-1.0 / std::sqrt(fan_in), 1.0 / std::sqrt(fan_in));
                for (auto& x : a.storage()) x = u(rng);
            }
        }
        return p;
    }

    // Learnable parameters in a fixed order.
    std::vector<std::pair<std::string, Value>> named_parameters() const {
        std::vector<std::pair<std::string, Value>> out{
            {"init.w_x", w_x}, {"init.b_x", b_x}, {"init.w_0", w_0}, {"init.b_0", b_0}};
        for (std::size_t l = 0; l < layers.size(); ++l) {
            const auto& L = layers[l];
            const std::string pre = "enc." + std::to_string(l) + ".";
            out.insert(out.end(), {{pre + "mha.w_q", L.w_q},
                                   {pre + "mha.w_k", L.w_k},
                                   {pre + "mha.w_v", L.w_v},
                                   {pre + "mha.w_o", L.w_o},
                                   {pre + "ff.w0", L.ff_w0},
                                   {pre + "ff.b0", L.ff_b0},
                                   {pre + "ff.w1", L.ff_w1},
                                   {pre + "ff.b1", L.ff_b1},
                                   {pre + "bn1.gamma", L.bn1_gamma},
                                   {pre + "bn1.beta", L.bn1_beta},
                                   {pre + "bn2.gamma", L.bn2_gamma},
                                   {pre + "bn2.beta", L.bn2_beta}});
        }
        out.insert(out.end(), {{"dec.w_ctx", w_ctx},
                               {"dec.glimpse.w_k", glimpse_w_k},
                               {"dec.glimpse.w_v", glimpse_w_v},
                               {"dec.glimpse.w_o", glimpse_w_o},
                               {"dec.w_q", w_q},
                               {"dec.w_k", w_k}});
        return out;
    }

    std::vector<Value> parameters() const {
        std::vector<Value> out;
        for (auto& [n, v] : named_parameters()) out.push_back(v);
        return out;
    }

    // Batch-norm running statistics in a fixed order.
    std::vector<std::pair<std::string, Array*>> named_buffers() {
        std::vector<std::pair<std::string, Array*>> out;
        for (std::size_t l = 0; l < layers.size(); ++l) {
            auto& L = layers[l];
            const std::string pre = "enc." + std::to_string(l) + ".";
            out.insert(out.end(), {{pre + "bn1.running_mean", &L.bn1.mean},
                                   {pre + "bn1.running_var", &L.bn1.var},
                                   {pre + "bn2.running_mean", &L.bn2.mean},
                                   {pre + "bn2.running_var", &L.bn2.var}});
        }
        return out;
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (auto& [name, v] : named_parameters()) n += v.value().size();
        return n;
    }

    // Independent deep copy (frozen baseline snapshots).
    ModelParams clone() const {
        ModelParams c;
        c.config = config;
        c.allocate();
        auto src = named_parameters();
        auto dst = c.named_parameters();
        for (std::size_t i = 0; i < src.size(); ++i) dst[i].second.mutable_value() = src[i].second.value();
        auto sb = const_cast<ModelParams*>(this)->named_buffers();
        auto db = c.named_buffers();
        for (std::size_t i = 0; i < sb.size(); ++i) *db[i].second = *sb[i].second;
        return c;
    }

    void zero_grad() {
        for (auto& [n, v] : named_parameters()) v.zero_grad();
    }

private:
    void allocate() {
        const auto d = config.d_h, f = ModelConfig::kFeatures, h = config.ff_hidden;
        auto param = [](Shape s) { return Value::parameter(Array(std::move(s), 0.0)); };
        w_x = param({f, d});
        b_x = param({d});
        w_0 = param({f, d});
        b_0 = param({d});
        layers.clear();
        for (std::size_t l = 0; l < config.n_layers; ++l) {
            EncoderLayer L{param({d, d}), param({d, d}), param({d, d}), param({d, d}),
                           param({d, h}), param({h}),    param({h, d}), param({d}),
                           param({d}),    param({d}),    param({d}),    param({d}),
                           ops::RunningStats(d), ops::RunningStats(d)};
            layers.push_back(std::move(L));
        }
        w_ctx = param({config.context_dim(), d});
        glimpse_w_k = param({d, d});
        glimpse_w_v = param({d, d});
        glimpse_w_o = param({d, d});
        w_q = param({d, d});
        w_k = param({d, d});
    }

    std::size_t bias_fan_in(const std::string& name) const {
        if (name == "init.b_x" || name == "init.b_0") return ModelConfig::kFeatures;
        if (name.ends_with("ff.b0")) return config.d_h;
        return config.ff_hidden;  // ff.b1
    }
};

// Depot plus a subset of customers of one instance. nodes[0] is the depot;
// customers follow in increasing original index.
struct Subgraph {
    const Instance* inst = nullptr;
    std::vector<std::size_t> nodes;
};

inline Subgraph full_graph(const Instance& inst) {
    Subgraph s{&inst, {}};
    for (std::size_t i = 0; i <= inst.n; ++i) s.nodes.push_back(i);
    return s;
}

// Node embeddings for a batch of subgraphs; segment s holds subgraph s.
struct Embeddings {
    Value node_emb;   // [N x d_h]
    Value graph_emb;  // [segments x d_h], mean of each segment
    Segments seg;
    std::vector<std::vector<std::size_t>> index_map;  // position -> original node, per segment
    Value glimpse_k, glimpse_v, logit_k;              // decoder projections of node_emb

    std::size_t segments() const noexcept { return seg.count(); }

    // Embedding rows of one segment as a plain matrix.
    Array segment_rows(std::size_t s) const {
        const std::size_t d = node_emb.value().cols();
        Array a(Shape{seg.length(s), d});
        a.mat() = node_emb.value().mat().middleRows(seg.begin(s), seg.length(s));
        return a;
    }
};

// Encoder: input projection (separate weights for the depot), then per layer
//   h <- BN(h + MHA(h)),  h <- BN(h + FF(h)).
// Attention never crosses subgraph boundaries; batch-norm statistics in train
// mode are taken over all rows of all subgraphs.
inline Embeddings encode(ModelParams& params, const std::vector<Subgraph>& subs, ops::NormMode mode) {
    if (subs.empty()) throw ContractError("encode: no subgraphs");
    const auto& cfg = params.config;
    Embeddings e;
    std::vector<double> depot_feat, cust_feat;
    std::vector<std::size_t> order;  // row in [depots; customers] stacking for each node row
    std::size_t n_cust = 0;
    for (const auto& s : subs) {
        if (s.nodes.empty() || s.nodes[0] != 0 || !s.inst) throw ContractError("encode: subgraph without depot");
        n_cust += s.nodes.size() - 1;
    }
    std::size_t cust_row = 0;
    for (std::size_t k = 0; k < subs.size(); ++k) {
        const auto& s = subs[k];
        const auto& inst = *s.inst;
        e.seg.push(s.nodes.size());
        e.index_map.push_back(s.nodes);
        depot_feat.insert(depot_feat.end(), {inst.depot.x, inst.depot.y, 0.0});
        order.push_back(k);
        for (std::size_t i = 1; i < s.nodes.size(); ++i) {
            const auto node = s.nodes[i];
            if (node == 0 || node > inst.n) throw ContractError("encode: invalid customer index in subgraph");
            const auto& p = inst.node(node);
            cust_feat.insert(cust_feat.end(), {p.x, p.y, inst.demand_hat(node)});
            order.push_back(subs.size() + cust_row++);
        }
    }
    const std::size_t f = ModelConfig::kFeatures;
    auto h_depot = ops::linear(Value::constant(Array::matrix(subs.size(), f, std::move(depot_feat))), params.w_0, params.b_0);
    Value h;
    if (n_cust == 0) {
        h = h_depot;
    } else {
        auto h_cust = ops::linear(Value::constant(Array::matrix(n_cust, f, std::move(cust_feat))), params.w_x, params.b_x);
        h = ops::gather_rows(ops::concat_rows({h_depot, h_cust}), std::move(order));
    }

    std::vector<std::size_t> row_segment(e.seg.total());
    for (std::size_t s = 0; s < e.seg.count(); ++s) {
        std::fill(row_segment.begin() + static_cast<long>(e.seg.begin(s)), row_segment.begin() + static_cast<long>(e.seg.end(s)), s);
    }
    for (auto& L : params.layers) {
        auto q = ops::matmul(h, L.w_q);
        auto k = ops::matmul(h, L.w_k);
        auto v = ops::matmul(h, L.w_v);
        auto att = ops::segment_attention(q, k, v, e.seg, row_segment, cfg.n_heads, cfg.attention);
        h = ops::batch_norm(ops::add(h, ops::matmul(att, L.w_o)), L.bn1_gamma, L.bn1_beta, L.bn1, mode);
        auto ff = ops::linear(ops::relu(ops::linear(h, L.ff_w0, L.ff_b0)), L.ff_w1, L.ff_b1);
        h = ops::batch_norm(ops::add(h, ff), L.bn2_gamma, L.bn2_beta, L.bn2, mode);
    }
    e.node_emb = h;
    e.graph_emb = ops::segment_mean(h, e.seg);
    e.glimpse_k = ops::matmul(h, params.glimpse_w_k);
    e.glimpse_v = ops::matmul(h, params.glimpse_w_v);
    e.logit_k = ops::matmul(h, params.w_k);
    return e;
}

inline Embeddings encode(ModelParams& params, const Subgraph& sub, ops::NormMode mode) {
    return encode(params, std::vector<Subgraph>{sub}, mode);
}

// One decoding query: the instance owning embedding segment `segment`, its
// last visited node (as a position in that segment), remaining normalized
// capacity, and per-position infeasibility flags.
struct DecodeQuery {
    std::size_t segment = 0;
    std::size_t last_pos = 0;
    double remaining = 1.0;
    std::vector<std::uint8_t> masked;
};

struct DecodeOutput {
    Value probs;   // [R x width]; zero on masked and padding columns
    Array scores;  // clipped compatibilities before masking, [R x width]
    std::size_t width = 0;
};

// Decoder step for a batch of queries: context [graph_emb, h_last, remaining]
// -> multi-head glimpse over feasible nodes -> single-head clipped scores
// clip * tanh(q.k / sqrt(d_h)) -> masked normalization.
inline DecodeOutput decode(ModelParams& params, const Embeddings& emb, const std::vector<DecodeQuery>& queries) {
    const auto& cfg = params.config;
    const std::size_t rows = queries.size();
    if (rows == 0) throw ContractError("decode: no queries");
    std::size_t width = 0;
    std::vector<std::size_t> q_seg(rows), last_rows(rows);
    std::vector<double> cap(rows);
    std::vector<std::uint8_t> kv_masked(emb.seg.total(), 1);
    for (std::size_t r = 0; r < rows; ++r) {
        const auto& q = queries[r];
        const auto m = emb.seg.length(q.segment);
        if (q.masked.size() != m || q.last_pos >= m) throw ContractError("decode: query does not match its segment");
        if (std::all_of(q.masked.begin(), q.masked.end(), [](auto f) { return f != 0; })) {
            throw InfeasibleError("decode: no feasible action");
        }
        width = std::max(width, m);
        q_seg[r] = q.segment;
        last_rows[r] = emb.seg.begin(q.segment) + q.last_pos;
        cap[r] = q.remaining;
        for (std::size_t j = 0; j < m; ++j) kv_masked[emb.seg.begin(q.segment) + j] = q.masked[j];
    }
    auto ctx = ops::concat_cols({ops::gather_rows(emb.graph_emb, q_seg), ops::gather_rows(emb.node_emb, last_rows),
                                 Value::constant(Array::matrix(rows, 1, cap))});
    auto q_ctx = ops::matmul(ctx, params.w_ctx);
    auto glimpse = ops::segment_attention(q_ctx, emb.glimpse_k, emb.glimpse_v, emb.seg, q_seg, cfg.n_heads,
                                          cfg.attention, std::move(kv_masked));
    auto q = ops::matmul(ops::matmul(glimpse, params.glimpse_w_o), params.w_q);
    auto compat = ops::segment_dot(q, emb.logit_k, emb.seg, q_seg, width);
    auto scores = ops::scale(ops::tanh(ops::scale(compat, 1.0 / std::sqrt(static_cast<double>(cfg.d_h)))), cfg.clip);

    std::vector<std::uint8_t> masked(rows * width, 1);
    for (std::size_t r = 0; r < rows; ++r) {
        std::copy(queries[r].masked.begin(), queries[r].masked.end(), masked.begin() + static_cast<long>(r * width));
    }
    DecodeOutput out;
    out.scores = scores.value();
    out.probs = ops::normalize(ops::masked_fill(scores, masked), cfg.output);
    out.width = width;
    return out;
}

// Per-instance construction state. Node indices are original instance indices.
struct DecodeState {
    const Instance* inst = nullptr;
    std::vector<std::uint8_t> visited;  // size n + 1; entry 0 unused
    std::size_t n_visited = 0;
    double remaining = 1.0;  // normalized capacity left in the current vehicle
    std::size_t last = 0;
    std::size_t step = 0;             // decisions taken
    std::vector<std::size_t> trace;   // every emitted node, forced depot waits included
    std::vector<std::size_t> chosen;  // decisions only

    static DecodeState start(const Instance& inst) {
        DecodeState s;
        s.inst = &inst;
        s.visited.assign(inst.n + 1, 0);
        return s;
    }

    bool all_visited() const noexcept { return n_visited == inst->n; }
    bool finished() const noexcept { return all_visited() && last == 0; }

    // Depot is blocked at the start of a route; customers are blocked once
    // visited or when their demand exceeds the remaining capacity.
    bool infeasible(std::size_t node) const {
        if (node == 0) return last == 0;
        return visited[node] != 0 || inst->demand_hat(node) > remaining + 1e-12;
    }

    std::vector<std::uint8_t> mask(const std::vector<std::size_t>& index_map) const {
        std::vector<std::uint8_t> m(index_map.size());
        for (std::size_t i = 0; i < index_map.size(); ++i) m[i] = infeasible(index_map[i]) ? 1 : 0;
        return m;
    }

    void apply(std::size_t node) {
        ++step;
        chosen.push_back(node);
        trace.push_back(node);
        if (node == 0) {
            remaining = 1.0;
        } else {
            visited[node] = 1;
            ++n_visited;
            remaining -= inst->demand_hat(node);
        }
        last = node;
    }

    // Unvisited customers plus the depot.
    Subgraph remaining_subgraph() const {
        Subgraph s{inst, {0}};
        for (std::size_t i = 1; i <= inst->n; ++i) {
            if (!visited[i]) s.nodes.push_back(i);
        }
        return s;
    }
};

inline std::size_t position_of(const std::vector<std::size_t>& index_map, std::size_t node) {
    auto it = std::find(index_map.begin(), index_map.end(), node);
    if (it == index_map.end()) throw ContractError("node " + std::to_string(node) + " not in active subgraph");
    return static_cast<std::size_t>(it - index_map.begin());
}

// Action distribution over the active nodes of a single-segment embedding.
inline SparseDist decode_step(ModelParams& params, const Embeddings& emb, const DecodeState& state) {
    if (emb.segments() != 1) throw ContractError("decode_step: expected a single-instance embedding");
    const auto& map = emb.index_map[0];
    DecodeQuery q{0, position_of(map, state.last), state.remaining, state.mask(map)};
    auto out = decode(params, emb, {q});
    SparseDist d{std::vector<double>(map.size()), entropy_alpha(params.config.output)};
    std::copy_n(out.probs.value().data(), map.size(), d.probs.data());
    return d;
}

// Re-encodes the unvisited subproblem when the last action closed a route;
// otherwise returns the embeddings unchanged.
inline Embeddings maybe_reencode(ModelParams& params, const DecodeState& state, const Embeddings& emb,
                                 ops::NormMode mode) {
    if (state.step == 0 || state.last != 0 || state.all_visited()) return emb;
    return encode(params, state.remaining_subgraph(), mode);
}

enum class DecodeMode { sample, greedy, replay };

struct StepRecord {
    std::size_t instance = 0;
    std::vector<std::size_t> nodes;  // active subgraph, original indices
    std::vector<std::uint8_t> masked;
    std::vector<double> probs;
    std::vector<double> scores;
    std::size_t action = 0;
};

struct RolloutOptions {
    DecodeMode mode = DecodeMode::greedy;
    std::optional<ops::NormMode> norm;  // default: train when sampling, eval otherwise
    const std::vector<std::vector<std::size_t>>* replay = nullptr;  // decisions per instance
    std::function<void(const Embeddings&, const std::vector<Subgraph>&)> on_encode;
    std::function<void(const StepRecord&)> on_step;
};

struct RolloutResult {
    std::vector<Tour> tours;                      // canonical
    std::vector<std::vector<std::size_t>> traces;  // with forced depot waits
    std::vector<std::vector<std::size_t>> decisions;
    Value sum_logprob;  // [B]
    Value sum_entropy;  // [B]
    double support_fraction_sum = 0.0;
    std::size_t decision_steps = 0;
    std::size_t encode_rounds = 0;

    double mean_support_fraction() const {
        return decision_steps ? support_fraction_sum / static_cast<double>(decision_steps) : 0.0;
    }
};

// Lock-step construction over a batch of same-size instances. An instance
// that returns to the depot waits there (forced, not a decision) until every
// unfinished instance has closed its current route; then all remaining
// subproblems are re-encoded together and decoding resumes.
inline RolloutResult rollout_batch(ModelParams& params, const std::vector<const Instance*>& batch, Rng& rng,
                                   const RolloutOptions& opt = {}) {
    const std::size_t B = batch.size();
    if (B == 0) throw ContractError("rollout: empty batch");
    const std::size_t n = batch[0]->n;
    for (auto* inst : batch) {
        if (inst->n != n) throw ContractError("rollout: mixed instance sizes within one batch");
    }
    if (opt.mode == DecodeMode::replay && (!opt.replay || opt.replay->size() != B)) {
        throw ContractError("rollout: replay mode needs one decision list per instance");
    }
    const auto norm = opt.norm.value_or(opt.mode == DecodeMode::greedy ? ops::NormMode::eval : ops::NormMode::train);
    const double alpha = entropy_alpha(params.config.output);
    const std::size_t budget = 6 * n;

    std::vector<DecodeState> states;
    for (auto* inst : batch) states.push_back(DecodeState::start(*inst));
    std::vector<std::uint8_t> waiting(B, 0);
    std::vector<std::size_t> seg_of(B, 0);

    RolloutResult res;
    res.sum_logprob = Value::constant(Array(Shape{B}, 0.0));
    res.sum_entropy = Value::constant(Array(Shape{B}, 0.0));

    auto run_encode = [&](const std::vector<std::size_t>& members) {
        std::vector<Subgraph> subs;
        for (std::size_t k = 0; k < members.size(); ++k) {
            subs.push_back(states[members[k]].step == 0 ? full_graph(*batch[members[k]])
                                                        : states[members[k]].remaining_subgraph());
            seg_of[members[k]] = k;
        }
        auto e = encode(params, subs, norm);
        ++res.encode_rounds;
        if (opt.on_encode) opt.on_encode(e, subs);
        return e;
    };

    std::vector<std::size_t> all(B);
    for (std::size_t b = 0; b < B; ++b) all[b] = b;
    Embeddings emb = run_encode(all);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    while (true) {
        std::vector<std::size_t> deciding;
        for (std::size_t b = 0; b < B; ++b) {
            if (!states[b].finished() && !waiting[b]) deciding.push_back(b);
        }
        if (deciding.empty()) {
            std::vector<std::size_t> open;
            for (std::size_t b = 0; b < B; ++b) {
                waiting[b] = 0;
                if (!states[b].finished()) open.push_back(b);
            }
            if (open.empty()) break;
            emb = run_encode(open);
            continue;
        }
        for (std::size_t b = 0; b < B; ++b) {
            if (waiting[b] && !states[b].finished()) states[b].trace.push_back(0);
        }

        std::vector<DecodeQuery> queries;
        for (auto b : deciding) {
            const auto& map = emb.index_map[seg_of[b]];
            queries.push_back({seg_of[b], position_of(map, states[b].last), states[b].remaining, states[b].mask(map)});
        }
        auto out = decode(params, emb, queries);
        const auto& P = out.probs.value();
        const std::size_t W = out.width;

        std::vector<std::size_t> flat(deciding.size());
        for (std::size_t r = 0; r < deciding.size(); ++r) {
            const auto b = deciding[r];
            const auto& map = emb.index_map[seg_of[b]];
            const double* p = P.data() + r * W;
            const std::size_t m = map.size();
            std::size_t pos = 0;
            if (opt.mode == DecodeMode::greedy) {
                for (std::size_t j = 1; j < m; ++j) {
                    if (p[j] > p[pos]) pos = j;
                }
            } else if (opt.mode == DecodeMode::sample) {
                const double u = unit(rng);
                double cum = 0.0;
                std::size_t last_support = m;
                pos = m;
                for (std::size_t j = 0; j < m; ++j) {
                    if (p[j] <= 0.0) continue;
                    last_support = j;
                    cum += p[j];
                    if (u < cum) {
                        pos = j;
                        break;
                    }
                }
                if (pos == m) pos = last_support;
            } else {
                const auto& plan = (*opt.replay)[b];
                if (states[b].step >= plan.size()) throw ContractError("rollout: replay sequence too short");
                pos = position_of(map, plan[states[b].step]);
            }
            if (queries[r].masked[pos]) throw ContractError("rollout: selected a masked action");
            flat[r] = r * W + pos;

            std::size_t feasible = 0, support = 0;
            for (std::size_t j = 0; j < m; ++j) {
                feasible += queries[r].masked[j] ? 0 : 1;
                support += p[j] > 0.0 ? 1 : 0;
            }
            res.support_fraction_sum += static_cast<double>(support) / static_cast<double>(feasible);
            ++res.decision_steps;

            if (opt.on_step) {
                StepRecord rec{b, map, queries[r].masked, std::vector<double>(p, p + m),
                               std::vector<double>(out.scores.data() + r * W, out.scores.data() + r * W + m), map[pos]};
                opt.on_step(rec);
            }
        }

        auto logp = ops::log(ops::gather_elems(out.probs, flat));
        auto ent = ops::tsallis_entropy(out.probs, alpha);
        res.sum_logprob = ops::add(res.sum_logprob, ops::scatter_add(logp, deciding, B));
        res.sum_entropy = ops::add(res.sum_entropy, ops::scatter_add(ent, deciding, B));

        for (std::size_t r = 0; r < deciding.size(); ++r) {
            const auto b = deciding[r];
            const auto node = emb.index_map[seg_of[b]][flat[r] - r * W];
            states[b].apply(node);
            if (node == 0 && !states[b].finished()) waiting[b] = 1;
            if (states[b].step > budget) {
                throw RunawayError("rollout: instance " + std::to_string(b) + " exceeded " + std::to_string(budget) +
                                   " decoding steps");
            }
        }
    }

    for (auto& s : states) {
        res.tours.push_back(canonical_tour(s.trace));
        res.traces.push_back(std::move(s.trace));
        res.decisions.push_back(std::move(s.chosen));
    }
    return res;
}

struct SingleRollout {
    Tour tour;
    Value sum_logprob;  // scalar
    Value sum_entropy;  // scalar
};

inline SingleRollout rollout(ModelParams& params, const Instance& inst, DecodeMode mode, Rng& rng) {
    RolloutOptions opt;
    opt.mode = mode;
    auto r = rollout_batch(params, {&inst}, rng, opt);
    return {r.tours[0], ops::sum(r.sum_logprob), ops::sum(r.sum_entropy)};
}

// Greedy tours for any list of instances, batched by size, without recording
// gradients. Batch norm uses running statistics, so batching does not couple
// instances.
inline std::vector<Tour> greedy_tours(ModelParams& params, const std::vector<Instance>& instances,
                                      std::size_t batch_size = 256) {
    NoGradGuard guard;
    std::vector<Tour> tours(instances.size());
    std::map<std::size_t, std::vector<std::size_t>> by_size;
    for (std::size_t i = 0; i < instances.size(); ++i) by_size[instances[i].n].push_back(i);
    Rng unused(0);
    for (auto& [n, idx] : by_size) {
        for (std::size_t start = 0; start < idx.size(); start += batch_size) {
            const std::size_t stop = std::min(idx.size(), start + batch_size);
            std::vector<const Instance*> batch;
            for (std::size_t k = start; k < stop; ++k) batch.push_back(&instances[idx[k]]);
            auto r = rollout_batch(params, batch, unused);
            for (std::size_t k = start; k < stop; ++k) tours[idx[k]] = std::move(r.tours[k - start]);
        }
    }
    return tours;
}

inline double mean_cost(const std::vector<Instance>& instances, const std::vector<Tour>& tours) {
    double total = 0.0;
    for (std::size_t i = 0; i < instances.size(); ++i) total += tour_cost(instances[i], tours[i]);
    return instances.empty() ? 0.0 : total / static_cast<double>(instances.size());
}

}  // namespace sadm
