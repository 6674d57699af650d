#pragma once

#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

#include "sadm/checkpoint.hpp"
#include "sadm/model.hpp"
#include "sadm/tensor/optim.hpp"

namespace sadm {

enum class BaselineKind { greedy_rollout, ema };

inline BaselineKind baseline_from_string(const std::string& s) {
    if (s == "greedy-rollout" || s == "greedy_rollout" || s == "rollout") return BaselineKind::greedy_rollout;
    if (s == "ema") return BaselineKind::ema;
    throw ContractError("unknown baseline '" + s + "' (expected greedy-rollout|ema)");
}

inline const char* to_string(BaselineKind b) { return b == BaselineKind::ema ? "ema" : "greedy-rollout"; }

struct TrainConfig {
    std::vector<std::size_t> sizes{10};
    std::size_t batch_size = 128;
    std::size_t batches_per_epoch = 100;
    std::size_t epochs = 1;
    double beta = 0.01;
    bool beta_decay = true;     // linear decay to 0 over all batches
    bool entropy_bonus = true;  // false flips the sign of the entropy term
    ModelConfig model = with_preset(ModelConfig{}, Preset::entmax_both);
    BaselineKind baseline = BaselineKind::greedy_rollout;
    bool normalize_cost = false;
    std::uint64_t seed = 1;
    double lr = 1e-4;
    double max_grad_norm = 1.0;  // 0 disables clipping
    double ema_decay = 0.8;
    std::size_t baseline_eval_size = 1000;  // held-out instances per size for the baseline test
    double significance = 0.05;

    void check() const {
        if (sizes.empty()) throw ContractError("train: sizes must be non-empty");
        for (auto n : sizes) {
            if (n < 1) throw ContractError("train: sizes must be at least 1");
        }
        if (batch_size < 2) throw ContractError("train: batch size must be at least 2");
        if (batches_per_epoch == 0 || batches_per_epoch % sizes.size() != 0) {
            throw ContractError("train: batches per epoch (" + std::to_string(batches_per_epoch) +
                                ") must be a positive multiple of the number of sizes (" +
                                std::to_string(sizes.size()) + ")");
        }
        if (!(beta >= 0.0)) throw ContractError("train: beta must be non-negative");
        if (!(lr > 0.0)) throw ContractError("train: learning rate must be positive");
        if (baseline == BaselineKind::greedy_rollout && baseline_eval_size < 2) {
            throw ContractError("train: the rollout baseline needs at least 2 held-out instances");
        }
    }
};

// 1-based size-subset index for batch i of an epoch: m = (i + 1) - floor(i / M) * M.
inline std::size_t schedule(std::size_t i, std::size_t M) {
    if (M < 1) throw ContractError("schedule: M must be at least 1");
    return (i + 1) - (i / M) * M;
}

// One-sided paired t-test of "candidate costs are lower than baseline costs".
// Returns the p-value; zero-variance differences give 0 (all better) or 1.
inline double paired_t_test_one_sided(const std::vector<double>& baseline, const std::vector<double>& candidate) {
    if (baseline.size() != candidate.size() || baseline.size() < 2) {
        throw ContractError("t-test: need two aligned samples of size >= 2");
    }
    const auto n = static_cast<double>(baseline.size());
    double mean = 0.0;
    for (std::size_t i = 0; i < baseline.size(); ++i) mean += baseline[i] - candidate[i];
    mean /= n;
    double ss = 0.0;
    for (std::size_t i = 0; i < baseline.size(); ++i) {
        const double d = baseline[i] - candidate[i] - mean;
        ss += d * d;
    }
    const double sd = std::sqrt(ss / (n - 1.0));
    if (sd == 0.0) return mean > 0.0 ? 0.0 : 1.0;
    const double t = mean / (sd / std::sqrt(n));
    boost::math::students_t dist(n - 1.0);
    return boost::math::cdf(boost::math::complement(dist, t));
}

// b(s) for the REINFORCE advantage.
class Baseline {
public:
    Baseline(BaselineKind kind, double ema_decay = 0.8) : kind_(kind), decay_(ema_decay) {}

    BaselineKind kind() const noexcept { return kind_; }

    // Greedy-rollout kind: freezes a snapshot and builds its held-out sets.
    void initialize(const ModelParams& params, const TrainConfig& cfg) {
        if (kind_ != BaselineKind::greedy_rollout) return;
        snapshot_ = params.clone();
        cfg_sizes_ = cfg.sizes;
        eval_size_ = cfg.baseline_eval_size;
        eval_seed_ = derive_seed(cfg.seed, 3);
        regenerate_eval_set();
    }

    // Per-instance baseline costs for a batch; `costs` are the sampled costs
    // of the same batch (used by the EMA kind). Never records gradients.
    std::vector<double> evaluate(const std::vector<Instance>& batch, const std::vector<double>& costs) {
        NoGradGuard guard;
        std::vector<double> b(batch.size());
        if (kind_ == BaselineKind::greedy_rollout) {
            auto tours = greedy_tours(*snapshot_, batch, batch.size());
            for (std::size_t i = 0; i < batch.size(); ++i) b[i] = tour_cost(batch[i], tours[i]);
            return b;
        }
        double mean = 0.0;
        for (double c : costs) mean += c;
        mean /= static_cast<double>(costs.size());
        const std::size_t n = batch.front().n;
        auto it = ema_.find(n);
        if (it == ema_.end()) it = ema_.emplace(n, mean).first;
        else it->second = decay_ * it->second + (1.0 - decay_) * mean;
        std::fill(b.begin(), b.end(), it->second);
        return b;
    }

    struct UpdateResult {
        bool replaced = false;
        double p_value = 1.0;
        double candidate_mean = 0.0;
        double baseline_mean = 0.0;
    };

    // End-of-epoch update: the snapshot is replaced when `params` is better on
    // the held-out set by a one-sided paired t-test at the configured level.
    UpdateResult update(ModelParams& params, double significance = 0.05) {
        UpdateResult r;
        if (kind_ != BaselineKind::greedy_rollout) return r;
        auto cand = held_out_costs(params);
        if (baseline_costs_.empty()) baseline_costs_ = held_out_costs(*snapshot_);
        for (std::size_t i = 0; i < cand.size(); ++i) {
            r.candidate_mean += cand[i];
            r.baseline_mean += baseline_costs_[i];
        }
        r.candidate_mean /= static_cast<double>(cand.size());
        r.baseline_mean /= static_cast<double>(cand.size());
        r.p_value = paired_t_test_one_sided(baseline_costs_, cand);
        if (r.candidate_mean < r.baseline_mean && r.p_value < significance) {
            snapshot_ = params.clone();
            ++generation_;
            regenerate_eval_set();
            r.replaced = true;
        }
        return r;
    }

    const ModelParams* snapshot() const { return snapshot_ ? &*snapshot_ : nullptr; }
    std::optional<double> ema_value(std::size_t n) const {
        auto it = ema_.find(n);
        return it == ema_.end() ? std::nullopt : std::optional<double>(it->second);
    }
    const std::vector<Instance>& eval_set() const noexcept { return eval_set_; }

private:
    std::vector<double> held_out_costs(ModelParams& p) const {
        auto tours = greedy_tours(p, eval_set_);
        std::vector<double> c(eval_set_.size());
        for (std::size_t i = 0; i < c.size(); ++i) c[i] = tour_cost(eval_set_[i], tours[i]);
        return c;
    }

    // A fresh held-out set after each replacement avoids selecting on noise.
    void regenerate_eval_set() {
        eval_set_.clear();
        for (std::size_t k = 0; k < cfg_sizes_.size(); ++k) {
            auto part = generate_set(cfg_sizes_[k], eval_size_, derive_seed(eval_seed_, generation_, k));
            eval_set_.insert(eval_set_.end(), part.begin(), part.end());
        }
        baseline_costs_.clear();
    }

    BaselineKind kind_;
    double decay_;
    std::optional<ModelParams> snapshot_;
    std::vector<std::size_t> cfg_sizes_;
    std::size_t eval_size_ = 0;
    std::uint64_t eval_seed_ = 0;
    std::uint64_t generation_ = 0;
    std::vector<Instance> eval_set_;
    std::vector<double> baseline_costs_;
    std::map<std::size_t, double> ema_;
};

// Sampled lock-step rollouts over one batch (depot-synchronized re-encoding).
inline RolloutResult batched_rollout(ModelParams& params, const std::vector<Instance>& batch, Rng& rng) {
    std::vector<const Instance*> ptrs;
    for (const auto& inst : batch) ptrs.push_back(&inst);
    RolloutOptions opt;
    opt.mode = DecodeMode::sample;
    return rollout_batch(params, ptrs, rng, opt);
}

// L2 norm of the current gradients grouped by parameter-name prefix
// ("init", "enc.0", ..., "dec").
inline std::map<std::string, double> grad_norms_by_group(const ModelParams& params) {
    std::map<std::string, double> sq;
    for (const auto& [name, v] : params.named_parameters()) {
        const auto first = name.find('.');
        std::string group = name.substr(0, first);
        if (group == "enc") group = name.substr(0, name.find('.', first + 1));
        double s = 0.0;
        if (v.has_grad()) {
            for (double g : v.grad().values()) s += g * g;
        }
        sq[group] += s;
    }
    for (auto& [k, v] : sq) v = std::sqrt(v);
    return sq;
}

struct StepStats {
    double mean_cost = 0.0;  // unnormalized travel cost
    double loss = 0.0;
    double grad_norm = 0.0;  // before clipping
    double support_fraction = 0.0;
    double beta = 0.0;
    std::vector<double> advantages;
};

// One REINFORCE update:
//   loss = mean(adv * sum_logprob) -/+ beta * mean(sum_entropy)
// with adv = cost - b(s) treated as a constant.
inline StepStats reinforce_step(ModelParams& params, Adam& optimizer, const std::vector<Instance>& batch,
                                const TrainConfig& cfg, Baseline& baseline, Rng& rng, double beta) {
    StepStats st;
    st.beta = beta;
    auto roll = batched_rollout(params, batch, rng);
    const std::size_t B = batch.size();
    std::vector<double> costs(B);
    for (std::size_t i = 0; i < B; ++i) {
        costs[i] = tour_cost(batch[i], roll.tours[i]);
        st.mean_cost += costs[i];
    }
    st.mean_cost /= static_cast<double>(B);
    st.support_fraction = roll.mean_support_fraction();

    const double scale = cfg.normalize_cost ? 1.0 / static_cast<double>(batch.front().n) : 1.0;
    std::vector<double> scaled(B);
    for (std::size_t i = 0; i < B; ++i) scaled[i] = costs[i] * scale;
    auto b = baseline.evaluate(batch, scaled);
    if (baseline.kind() == BaselineKind::greedy_rollout) {
        for (auto& v : b) v *= scale;
    }
    st.advantages.resize(B);
    for (std::size_t i = 0; i < B; ++i) st.advantages[i] = scaled[i] - b[i];

    auto adv = Value::constant(Array::vector(st.advantages));
    auto policy = ops::mean(ops::mul(adv, roll.sum_logprob));
    const double sign = cfg.entropy_bonus ? -1.0 : 1.0;
    auto loss = ops::add(policy, ops::scale(ops::mean(roll.sum_entropy), sign * beta));
    st.loss = loss.item();

    params.zero_grad();
    backward(loss);
    auto plist = params.parameters();
    st.grad_norm = grad_norm(plist);
    if (!std::isfinite(st.loss) || !std::isfinite(st.grad_norm)) {
        std::ostringstream msg;
        msg << "training diverged: loss " << st.loss << ", gradient norm " << st.grad_norm << "; per-group norms:";
        for (const auto& [g, v] : grad_norms_by_group(params)) msg << ' ' << g << '=' << v;
        throw DivergenceError(msg.str());
    }
    if (cfg.max_grad_norm > 0.0) clip_grad_norm(plist, cfg.max_grad_norm);
    optimizer.step();
    return st;
}

struct EpochStats {
    std::size_t epoch = 0;
    std::string size_mix;
    double mean_cost = 0.0;
    double loss = 0.0;
    double grad_norm = 0.0;
    double support_fraction = 0.0;
    double wall_seconds = 0.0;
    std::map<std::size_t, std::size_t> batches_per_size;
    std::vector<std::size_t> batch_sizes;  // instance size of each batch, in order
    Baseline::UpdateResult baseline_update;
};

inline std::string csv_header() { return "epoch,size_mix,mean_cost,loss,grad_norm,support_fraction,wall_seconds"; }

inline std::string csv_row(const EpochStats& e) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(6) << e.epoch << ',' << e.size_mix << ',' << e.mean_cost << ',' << e.loss << ','
      << e.grad_norm << ',' << e.support_fraction << ',' << e.wall_seconds;
    return s.str();
}

// Owns the parameters, optimizer, baseline and randomness of one training run.
class Trainer {
public:
    explicit Trainer(TrainConfig cfg)
        : Trainer(cfg, ModelParams::initialize(cfg.model, derive_seed(cfg.seed, 1))) {}

    Trainer(TrainConfig cfg, ModelParams params)
        : cfg_(std::move(cfg)),
          params_(std::move(params)),
          optimizer_(params_.parameters(), AdamConfig{cfg_.lr}),
          baseline_(cfg_.baseline, cfg_.ema_decay),
          sampler_(derive_seed(cfg_.seed, 2)) {
        cfg_.check();
        if (!(params_.config == cfg_.model)) throw ContractError("train: parameters do not match the model config");
        baseline_.initialize(params_, cfg_);
    }

    ModelParams& params() noexcept { return params_; }
    const TrainConfig& config() const noexcept { return cfg_; }
    Baseline& baseline() noexcept { return baseline_; }
    std::size_t epochs_done() const noexcept { return epoch_; }

    double current_beta() const {
        if (!cfg_.beta_decay) return cfg_.beta;
        const double total = static_cast<double>(cfg_.epochs * cfg_.batches_per_epoch);
        return cfg_.beta * std::max(0.0, 1.0 - static_cast<double>(global_batch_) / total);
    }

    // Training instances for batch i of epoch e: a fresh seeded set per batch.
    std::vector<Instance> batch_instances(std::size_t epoch, std::size_t i) const {
        const std::size_t n = cfg_.sizes[schedule(i, cfg_.sizes.size()) - 1];
        return generate_set(n, cfg_.batch_size, derive_seed(derive_seed(cfg_.seed, 4), epoch, i));
    }

    EpochStats run_epoch(const std::function<void(std::size_t, const StepStats&)>& on_batch = {}) {
        const auto t0 = std::chrono::steady_clock::now();
        EpochStats e;
        e.epoch = epoch_ + 1;
        for (std::size_t k = 0; k < cfg_.sizes.size(); ++k) {
            if (k) e.size_mix += '+';
            e.size_mix += std::to_string(cfg_.sizes[k]);
        }
        for (std::size_t i = 0; i < cfg_.batches_per_epoch; ++i) {
            auto batch = batch_instances(epoch_, i);
            auto st = reinforce_step(params_, optimizer_, batch, cfg_, baseline_, sampler_, current_beta());
            ++global_batch_;
            ++e.batches_per_size[batch.front().n];
            e.batch_sizes.push_back(batch.front().n);
            e.mean_cost += st.mean_cost;
            e.loss += st.loss;
            e.grad_norm += st.grad_norm;
            e.support_fraction += st.support_fraction;
            if (on_batch) on_batch(i, st);
        }
        const auto nb = static_cast<double>(cfg_.batches_per_epoch);
        e.mean_cost /= nb;
        e.loss /= nb;
        e.grad_norm /= nb;
        e.support_fraction /= nb;
        e.baseline_update = baseline_.update(params_, cfg_.significance);
        ++epoch_;
        e.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        return e;
    }

    // Runs all configured epochs. With an output directory, writes log.csv,
    // a checkpoint per epoch (epoch-<k>) and the final checkpoint (model).
    std::vector<EpochStats> train(const std::string& out_dir = "",
                                  const std::function<void(const EpochStats&)>& on_epoch = {}) {
        std::vector<EpochStats> all;
        std::ofstream log;
        if (!out_dir.empty()) {
            std::filesystem::create_directories(out_dir);
            log.open(std::filesystem::path(out_dir) / "log.csv", std::ios::trunc);
            if (!log) throw IoError("cannot write training log in '" + out_dir + "'");
            log << csv_header() << '\n';
        }
        while (epoch_ < cfg_.epochs) {
            auto e = run_epoch();
            if (!out_dir.empty()) {
                log << csv_row(e) << '\n' << std::flush;
                save_checkpoint(params_, (std::filesystem::path(out_dir) / ("epoch-" + std::to_string(e.epoch))).string(),
                                {{"epoch", e.epoch}});
            }
            if (on_epoch) on_epoch(e);
            all.push_back(std::move(e));
        }
        if (!out_dir.empty()) {
            save_checkpoint(params_, (std::filesystem::path(out_dir) / "model").string(), {{"epochs", epoch_}});
        }
        return all;
    }

private:
    TrainConfig cfg_;
    ModelParams params_;
    Adam optimizer_;
    Baseline baseline_;
    Rng sampler_;
    std::size_t epoch_ = 0;
    std::size_t global_batch_ = 0;
};

}  // namespace sadm
