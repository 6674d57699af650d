#pragma once

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "sadm/augment.hpp"
#include "sadm/baselines.hpp"
#include "sadm/checkpoint.hpp"
#include "sadm/parallel.hpp"
#include "sadm/trainer.hpp"

#ifndef SADM_VERSION
#define SADM_VERSION "dev"
#endif

namespace sadm::cli {

enum ExitCode : int { kOk = 0, kFailure = 1, kUsage = 2, kValidation = 3, kDivergence = 4 };

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

namespace detail {

inline std::string utc_now() {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::ostringstream s;
    s << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return s.str();
}

inline void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out << text;
    if (!out) throw IoError("write to '" + path.string() + "' failed");
}

inline void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

inline std::string fixed6(double v) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(6) << v;
    return s.str();
}

inline void prepare_file(const std::string& out) {
    const fs::path p(out);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

// Parses "default", "identity" or "R:k1,k2,..." (R equally spaced rotations).
inline AugmentationSet parse_augs(const std::string& text) {
    if (text == "default") return AugmentationSet::default_set();
    if (text == "identity") return AugmentationSet::identity_only();
    const auto colon = text.find(':');
    if (colon == std::string::npos) throw ContractError("--augs: expected default, identity or R:k1,k2,...; got '" + text + "'");
    AugmentationSet s;
    s.rotations.clear();
    s.dilations.clear();
    try {
        const int r = std::stoi(text.substr(0, colon));
        if (r < 1) throw ContractError("--augs: rotation count must be at least 1");
        for (int q = 0; q < r; ++q) s.rotations.push_back(2.0 * std::numbers::pi * q / r);
        std::stringstream ks(text.substr(colon + 1));
        std::string tok;
        while (std::getline(ks, tok, ',')) s.dilations.push_back(std::stod(tok));
    } catch (const std::logic_error& e) {
        if (dynamic_cast<const ContractError*>(&e)) throw;
        throw ContractError("--augs: cannot parse '" + text + "'");
    }
    if (s.dilations.empty()) throw ContractError("--augs: no dilation factors in '" + text + "'");
    s.check();
    return s;
}

}  // namespace detail

// Everything needed to repeat a run: argv, resolved configuration, seeds,
// version, paths and timings.
struct RunManifest {
    json data;

    RunManifest(const std::string& command, const std::vector<std::string>& argv) {
        data["command"] = command;
        data["argv"] = argv;
        data["version"] = SADM_VERSION;
        data["config"] = json::object();
        data["seeds"] = json::object();
        data["inputs"] = json::object();
        data["outputs"] = json::object();
        data["timings"] = {{"started_at", detail::utc_now()}};
    }

    void finish(double seconds, const std::string& status = "ok") {
        data["status"] = status;
        data["timings"]["wall_seconds"] = seconds;
    }
};

struct Context {
    std::vector<std::string> argv;
    std::ostream& out;
    std::ostream& err;
};

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---- gen ----

struct GenOptions {
    std::size_t n = 0;
    std::size_t count = 0;
    std::uint64_t seed = 1;
    std::string out;
};

inline int cmd_gen(const GenOptions& o, Context& ctx) {
    const auto t0 = std::chrono::steady_clock::now();
    detail::prepare_file(o.out);
    const auto items = generate_set(o.n, o.count, o.seed);
    write_instances(o.out, items);
    RunManifest m("gen", ctx.argv);
    m.data["config"] = {{"n", o.n}, {"count", o.count}, {"capacity", capacity_for(o.n)}};
    m.data["seeds"] = {{"seed", o.seed}};
    m.data["outputs"] = {{"instances", o.out}};
    m.finish(seconds_since(t0));
    detail::write_json(o.out + ".manifest.json", m.data);
    ctx.out << "wrote " << o.count << " instances (n = " << o.n << ", capacity " << capacity_for(o.n) << ") to " << o.out
            << '\n';
    return kOk;
}

// ---- train ----

struct TrainOptions {
    std::vector<std::size_t> sizes{10};
    std::size_t epochs = 1;
    std::size_t batch = 128;
    std::size_t batches = 100;
    double beta = 0.01;
    bool no_beta_decay = false;
    std::string activation = "entmax-both";
    std::string baseline = "greedy-rollout";
    std::uint64_t seed = 1;
    double lr = 1e-4;
    double max_grad_norm = 1.0;
    std::size_t baseline_eval_size = 1000;
    bool normalize_cost = false;
    std::size_t hidden = 128;
    std::size_t layers = 3;
    std::size_t heads = 8;
    std::size_t ff = 512;
    std::string out;
};

inline TrainConfig to_train_config(const TrainOptions& o) {
    TrainConfig c;
    c.sizes = o.sizes;
    c.epochs = o.epochs;
    c.batch_size = o.batch;
    c.batches_per_epoch = o.batches;
    c.beta = o.beta;
    c.beta_decay = !o.no_beta_decay;
    c.baseline = baseline_from_string(o.baseline);
    c.seed = o.seed;
    c.lr = o.lr;
    c.max_grad_norm = o.max_grad_norm;
    c.baseline_eval_size = o.baseline_eval_size;
    c.normalize_cost = o.normalize_cost;
    ModelConfig mc;
    mc.d_h = o.hidden;
    mc.n_layers = o.layers;
    mc.n_heads = o.heads;
    mc.ff_hidden = o.ff;
    c.model = with_preset(mc, preset_from_string(o.activation));
    c.check();
    return c;
}

inline json train_config_json(const TrainConfig& c) {
    return {{"sizes", c.sizes},
            {"epochs", c.epochs},
            {"batch_size", c.batch_size},
            {"batches_per_epoch", c.batches_per_epoch},
            {"beta", c.beta},
            {"beta_decay", c.beta_decay},
            {"entropy_bonus", c.entropy_bonus},
            {"baseline", to_string(c.baseline)},
            {"baseline_eval_size", c.baseline_eval_size},
            {"significance", c.significance},
            {"ema_decay", c.ema_decay},
            {"normalize_cost", c.normalize_cost},
            {"lr", c.lr},
            {"max_grad_norm", c.max_grad_norm},
            {"model",
             {{"d_h", c.model.d_h},
              {"n_layers", c.model.n_layers},
              {"n_heads", c.model.n_heads},
              {"ff_hidden", c.model.ff_hidden},
              {"clip", c.model.clip},
              {"attention", to_string(c.model.attention)},
              {"output", to_string(c.model.output)}}}};
}

inline json epoch_json(const EpochStats& e) {
    json per_size = json::object();
    for (const auto& [n, k] : e.batches_per_size) per_size[std::to_string(n)] = k;
    return {{"epoch", e.epoch},
            {"size_mix", e.size_mix},
            {"mean_cost", e.mean_cost},
            {"loss", e.loss},
            {"grad_norm", e.grad_norm},
            {"support_fraction", e.support_fraction},
            {"wall_seconds", e.wall_seconds},
            {"batches_per_size", per_size},
            {"batch_sizes", e.batch_sizes},
            {"baseline_update",
             {{"replaced", e.baseline_update.replaced},
              {"p_value", e.baseline_update.p_value},
              {"candidate_mean", e.baseline_update.candidate_mean},
              {"baseline_mean", e.baseline_update.baseline_mean}}}};
}

inline int cmd_train(const TrainOptions& o, Context& ctx) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto cfg = to_train_config(o);
    if (cfg.model.attention == Activation::entmax15 && cfg.model.output == Activation::entmax15 && cfg.beta == 0.0) {
        ctx.err << "warning: entmax-both without an entropy bonus (beta = 0) tends to collapse onto few actions early "
                   "and heavily degrades performance; continuing\n";
    }
    const fs::path dir(o.out);
    fs::create_directories(dir);
    RunManifest m("train", ctx.argv);
    m.data["config"] = train_config_json(cfg);
    m.data["seeds"] = {{"seed", cfg.seed},
                       {"init", derive_seed(cfg.seed, 1)},
                       {"sampler", derive_seed(cfg.seed, 2)},
                       {"baseline_eval", derive_seed(cfg.seed, 3)},
                       {"instances", derive_seed(cfg.seed, 4)}};
    m.data["outputs"] = {{"log", (dir / "log.csv").string()},
                         {"log_json", (dir / "log.json").string()},
                         {"checkpoint", (dir / "model.json").string()},
                         {"epoch_checkpoints", (dir / "epoch-<k>.json").string()}};
    detail::write_json(dir / "manifest.json", m.data);

    Trainer trainer(cfg);
    json log = json::array();
    try {
        trainer.train(dir.string(), [&](const EpochStats& e) {
            log.push_back(epoch_json(e));
            detail::write_json(dir / "log.json", log);
            ctx.out << "epoch " << e.epoch << " [" << e.size_mix << "] cost " << detail::fixed6(e.mean_cost) << " loss "
                    << detail::fixed6(e.loss) << " grad " << detail::fixed6(e.grad_norm) << " support "
                    << detail::fixed6(e.support_fraction) << " baseline "
                    << (e.baseline_update.replaced ? "replaced" : "kept") << " (" << detail::fixed6(e.wall_seconds)
                    << " s)\n";
        });
    } catch (const DivergenceError&) {
        m.finish(seconds_since(t0), "diverged");
        detail::write_json(dir / "manifest.json", m.data);
        throw;
    }
    m.finish(seconds_since(t0));
    detail::write_json(dir / "manifest.json", m.data);
    ctx.out << "checkpoint: " << (dir / "model.json").string() << '\n';
    return kOk;
}

// ---- eval ----

struct EvalOptions {
    std::string checkpoint;
    std::string instances;
    std::string mode = "greedy";
    std::string augs = "default";
    std::string reference;
    std::string out;
    std::string check;
    std::size_t threads = 0;
};

// Validates a tour file against its instance file; costs must match the
// recomputed route lengths.
inline int check_tours(const std::string& tours_path, const std::string& instances_path, Context& ctx) {
    const auto instances = read_instances(instances_path);
    std::map<std::uint64_t, const Instance*> by_seed;
    for (const auto& inst : instances) by_seed[inst.seed] = &inst;
    const auto records = read_tours(tours_path);
    std::size_t bad = 0;
    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto& r = records[i];
        auto it = by_seed.find(r.instance_seed);
        std::string problem;
        if (it == by_seed.end()) {
            problem = "no instance with seed " + std::to_string(r.instance_seed);
        } else {
            const auto rep = validate(*it->second, r.tour);
            if (!rep.ok()) problem = rep.summary();
            else if (std::abs(tour_length(*it->second, r.tour) - r.cost) > 1e-6) problem = "recorded cost does not match";
        }
        if (!problem.empty()) {
            ++bad;
            ctx.err << tours_path << ":" << (i + 1) << ": " << problem << '\n';
        }
    }
    ctx.out << records.size() - bad << "/" << records.size() << " tours valid\n";
    return bad == 0 ? kOk : kValidation;
}

inline int cmd_eval(const EvalOptions& o, Context& ctx) {
    if (!o.check.empty()) return check_tours(o.check, o.instances, ctx);
    if (o.checkpoint.empty() || o.out.empty()) throw ContractError("eval: --checkpoint and --out are required");
    const auto t0 = std::chrono::steady_clock::now();
    const auto threads = resolve_threads(o.threads);
    auto params = load_checkpoint(o.checkpoint);
    const auto instances = read_instances(o.instances);
    if (instances.empty()) throw ContractError("eval: no instances in '" + o.instances + "'");

    std::vector<Tour> tours;
    std::vector<AugmentedResult> aug;
    AugmentationSet set = AugmentationSet::identity_only();
    if (o.mode == "greedy") {
        tours = greedy_tours_parallel(params, instances, threads);
    } else if (o.mode == "augmented") {
        set = detail::parse_augs(o.augs);
        aug = augmented_infer(params, instances, set, threads);
        for (auto& r : aug) tours.push_back(r.tour);
    } else {
        throw ContractError("eval: unknown mode '" + o.mode + "' (expected greedy|augmented)");
    }

    std::vector<double> costs;
    std::vector<std::uint64_t> seeds;
    std::vector<TourRecord> records;
    for (std::size_t i = 0; i < instances.size(); ++i) {
        const auto rep = validate(instances[i], tours[i]);
        if (!rep.ok()) throw ValidationError("instance seed " + std::to_string(instances[i].seed) + ": " + rep.summary());
        costs.push_back(tour_length(instances[i], tours[i]));
        seeds.push_back(instances[i].seed);
        records.push_back({instances[i].seed, tours[i], costs.back()});
    }

    const fs::path dir(o.out);
    fs::create_directories(dir);
    write_tours((dir / "tours.jsonl").string(), records);

    json summary;
    summary["mode"] = o.mode;
    summary["instances"] = instances.size();
    if (!o.reference.empty()) {
        const auto ref = read_reference_costs(o.reference);
        std::vector<double> refs;
        for (auto s : seeds) {
            auto it = ref.find(s);
            if (it == ref.end()) throw ValidationError("reference file has no cost for instance seed " + std::to_string(s));
            refs.push_back(it->second);
        }
        const auto report = gap_report(costs, refs, seeds);
        detail::write_text(dir / "costs.csv", report.to_csv());
        auto j = report.to_json();
        summary["mean_cost"] = report.mean_cost;
        summary["mean_reference"] = report.mean_reference;
        summary["mean_gap"] = report.mean_gap;
        summary["per_instance"] = j["instances"];
        ctx.out << "mean cost " << detail::fixed6(report.mean_cost) << ", mean gap "
                << detail::fixed6(100.0 * report.mean_gap) << "%\n";
    } else {
        std::ostringstream csv;
        csv << std::fixed << std::setprecision(6) << "instance_seed,cost,reference,gap\n";
        json rows = json::array();
        double mean = 0.0;
        for (std::size_t i = 0; i < costs.size(); ++i) {
            csv << seeds[i] << ',' << costs[i] << ",,\n";
            rows.push_back({{"instance_seed", seeds[i]}, {"cost", costs[i]}});
            mean += costs[i];
        }
        mean /= static_cast<double>(costs.size());
        detail::write_text(dir / "costs.csv", csv.str());
        summary["mean_cost"] = mean;
        summary["per_instance"] = rows;
        ctx.out << "mean cost " << detail::fixed6(mean) << '\n';
    }

    if (!aug.empty()) {
        // per-transform mean cost and how often it gave the best tour
        const auto& ts = aug.front().transforms;
        std::vector<double> mean(ts.size(), 0.0);
        std::vector<std::size_t> wins(ts.size(), 0);
        std::ostringstream detail_csv;
        detail_csv << std::fixed << std::setprecision(6) << "instance_seed,theta,k,cost\n";
        for (std::size_t i = 0; i < aug.size(); ++i) {
            for (std::size_t j = 0; j < ts.size(); ++j) {
                mean[j] += aug[i].costs[j];
                detail_csv << seeds[i] << ',' << ts[j].theta << ',' << ts[j].k << ',' << aug[i].costs[j] << '\n';
            }
            ++wins[aug[i].best];
        }
        std::ostringstream table;
        table << std::fixed << std::setprecision(6) << "theta,k,mean_cost,best_count\n";
        json rows = json::array();
        for (std::size_t j = 0; j < ts.size(); ++j) {
            mean[j] /= static_cast<double>(aug.size());
            table << ts[j].theta << ',' << ts[j].k << ',' << mean[j] << ',' << wins[j] << '\n';
            rows.push_back({{"theta", ts[j].theta}, {"k", ts[j].k}, {"mean_cost", mean[j]}, {"best_count", wins[j]}});
        }
        detail::write_text(dir / "augmentations.csv", table.str());
        detail::write_text(dir / "augmentation_costs.csv", detail_csv.str());
        summary["augmentations"] = rows;
    }
    detail::write_json(dir / "results.json", summary);

    RunManifest m("eval", ctx.argv);
    m.data["config"] = {{"mode", o.mode}, {"augs", o.mode == "augmented" ? o.augs : "identity"}, {"threads", threads}};
    m.data["inputs"] = {{"checkpoint", o.checkpoint}, {"instances", o.instances}, {"reference", o.reference}};
    m.data["outputs"] = {{"tours", (dir / "tours.jsonl").string()},
                         {"costs", (dir / "costs.csv").string()},
                         {"results", (dir / "results.json").string()}};
    m.finish(seconds_since(t0));
    detail::write_json(dir / "manifest.json", m.data);
    return kOk;
}

// ---- ablate-dilation ----

struct AblateOptions {
    std::string checkpoint;
    std::string instances;
    double kmin = 1.0;
    double kmax = 1.8;
    double step = 0.1;
    std::string out;
    std::size_t threads = 0;
};

inline int cmd_ablate(const AblateOptions& o, Context& ctx) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto grid = dilation_grid(o.kmin, o.kmax, o.step);
    const auto threads = resolve_threads(o.threads);
    auto params = load_checkpoint(o.checkpoint);
    const auto instances = read_instances(o.instances);
    const auto rows = dilation_ablation(params, instances, grid, threads);

    const fs::path dir(o.out);
    fs::create_directories(dir);
    detail::write_text(dir / "ablation.csv", ablation_csv(rows));
    json j = json::array();
    for (const auto& r : rows) j.push_back({{"k", r.k}, {"mean_cost", r.mean_cost}, {"cumulative_mean_cost", r.cumulative_mean_cost}});
    detail::write_json(dir / "ablation.json", j);
    for (const auto& r : rows) {
        ctx.out << "k " << detail::fixed6(r.k) << "  mean " << detail::fixed6(r.mean_cost) << "  cumulative "
                << detail::fixed6(r.cumulative_mean_cost) << '\n';
    }

    RunManifest m("ablate-dilation", ctx.argv);
    m.data["config"] = {{"kmin", o.kmin}, {"kmax", o.kmax}, {"step", o.step}, {"grid", grid}, {"threads", threads}};
    m.data["inputs"] = {{"checkpoint", o.checkpoint}, {"instances", o.instances}};
    m.data["outputs"] = {{"ablation", (dir / "ablation.csv").string()}, {"ablation_json", (dir / "ablation.json").string()}};
    m.finish(seconds_since(t0));
    detail::write_json(dir / "manifest.json", m.data);
    return kOk;
}

// ---- oracle ----

struct OracleOptions {
    std::string instances;
    std::string method = "cw";
    std::string out;
    std::size_t threads = 0;
};

inline int cmd_oracle(const OracleOptions& o, Context& ctx) {
    const auto t0 = std::chrono::steady_clock::now();
    if (o.method != "brute" && o.method != "cw") throw ContractError("oracle: unknown method '" + o.method + "' (expected brute|cw)");
    const auto instances = read_instances(o.instances);
    if (o.method == "brute") {
        std::string offending;
        std::size_t count = 0;
        for (const auto& inst : instances) {
            if (inst.n > kBruteForceLimit) {
                if (count++ < 20) offending += (offending.empty() ? "" : ", ") + std::to_string(inst.seed);
            }
        }
        if (count) {
            throw SizeLimitError("oracle: brute force supports n <= " + std::to_string(kBruteForceLimit) + "; " +
                                 std::to_string(count) + " instance(s) too large, seeds: " + offending +
                                 (count > 20 ? ", ..." : ""));
        }
    }
    const auto threads = resolve_threads(o.threads);
    std::vector<TourRecord> records(instances.size());
    parallel_for(instances.size(), threads, [&](std::size_t i) {
        const auto& inst = instances[i];
        Tour t = o.method == "brute" ? brute_force_optimal(inst).tour : clarke_wright(inst);
        records[i] = {inst.seed, t, tour_length(inst, t)};
    });
    std::vector<std::uint64_t> seeds;
    std::vector<double> costs;
    double mean = 0.0;
    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto rep = validate(instances[i], records[i].tour);
        if (!rep.ok()) throw ValidationError("oracle produced an invalid tour for seed " + std::to_string(records[i].instance_seed));
        seeds.push_back(records[i].instance_seed);
        costs.push_back(records[i].cost);
        mean += records[i].cost;
    }
    detail::prepare_file(o.out);
    write_reference_costs(o.out, seeds, costs);
    json j = json::array();
    for (const auto& r : records) j.push_back({{"instance_seed", r.instance_seed}, {"cost", r.cost}});
    detail::write_json(o.out + ".json", j);
    write_tours(o.out + ".tours.jsonl", records);

    RunManifest m("oracle", ctx.argv);
    m.data["config"] = {{"method", o.method}, {"threads", threads}};
    m.data["inputs"] = {{"instances", o.instances}};
    m.data["outputs"] = {{"costs", o.out}, {"costs_json", o.out + ".json"}, {"tours", o.out + ".tours.jsonl"}};
    m.finish(seconds_since(t0));
    detail::write_json(o.out + ".manifest.json", m.data);
    if (!records.empty()) mean /= static_cast<double>(records.size());
    ctx.out << o.method << ": " << records.size() << " instances, mean cost " << detail::fixed6(mean) << '\n';
    return kOk;
}

// ---- entry point ----

inline int run(const std::vector<std::string>& argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"Sparse attention model for capacitated vehicle routing"};
    app.set_version_flag("--version", SADM_VERSION);
    app.require_subcommand(1);
    app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

    GenOptions gen;
    auto* g = app.add_subcommand("gen", "Generate random instances");
    const CLI::Range at_least_one(std::size_t{1}, std::numeric_limits<std::size_t>::max(), "at least 1");
    g->add_option("--n", gen.n, "Customers per instance")->required()->check(at_least_one);
    g->add_option("--count", gen.count, "Number of instances")->required()->check(at_least_one);
    g->add_option("--seed", gen.seed, "Root seed")->capture_default_str();
    g->add_option("--out", gen.out, "Instance file (JSON lines)")->required();

    TrainOptions tr;
    auto* t = app.add_subcommand("train", "Train with REINFORCE");
    t->add_option("--sizes", tr.sizes, "Instance sizes, comma separated")
        ->delimiter(',')
        ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll)
        ->capture_default_str();
    t->add_option("--epochs", tr.epochs)->check(CLI::PositiveNumber)->capture_default_str();
    t->add_option("--batch", tr.batch, "Instances per batch")->check(CLI::PositiveNumber)->capture_default_str();
    t->add_option("--batches", tr.batches, "Batches per epoch")->check(CLI::PositiveNumber)->capture_default_str();
    t->add_option("--beta", tr.beta, "Entropy weight")->check(CLI::NonNegativeNumber)->capture_default_str();
    t->add_flag("--no-beta-decay", tr.no_beta_decay, "Keep beta constant instead of decaying it to 0");
    t->add_option("--activation", tr.activation)
        ->check(CLI::IsMember({"softmax", "entmax-reg", "entmax-both"}))
        ->capture_default_str();
    t->add_option("--baseline", tr.baseline)->check(CLI::IsMember({"greedy-rollout", "ema"}))->capture_default_str();
    t->add_option("--seed", tr.seed)->capture_default_str();
    t->add_option("--lr", tr.lr, "Adam learning rate")->check(CLI::PositiveNumber)->capture_default_str();
    t->add_option("--max-grad-norm", tr.max_grad_norm, "0 disables clipping")->capture_default_str();
    t->add_option("--baseline-eval-size", tr.baseline_eval_size, "Held-out instances per size for the rollout baseline")
        ->capture_default_str();
    t->add_flag("--normalize-cost", tr.normalize_cost, "Divide costs by n in the advantage");
    t->add_option("--hidden", tr.hidden)->check(CLI::PositiveNumber)->capture_default_str();
    t->add_option("--layers", tr.layers)->check(CLI::PositiveNumber)->capture_default_str();
    t->add_option("--heads", tr.heads)->check(CLI::PositiveNumber)->capture_default_str();
    t->add_option("--ff", tr.ff, "Feed-forward hidden width")->check(CLI::PositiveNumber)->capture_default_str();
    t->add_option("--out", tr.out, "Output directory")->required();

    EvalOptions ev;
    auto* e = app.add_subcommand("eval", "Evaluate a checkpoint, or validate a tour file with --check");
    e->add_option("--checkpoint", ev.checkpoint);
    e->add_option("--instances", ev.instances)->required();
    e->add_option("--mode", ev.mode)->check(CLI::IsMember({"greedy", "augmented"}))->capture_default_str();
    e->add_option("--augs", ev.augs, "default | identity | R:k1,k2,... (R rotations)")->capture_default_str();
    e->add_option("--reference", ev.reference, "Reference cost CSV (instance_seed,cost)");
    e->add_option("--out", ev.out, "Output directory");
    e->add_option("--check", ev.check, "Validate this tour file against --instances and exit");
    e->add_option("--threads", ev.threads, "Worker cap (default: SADM_THREADS or 1)");

    AblateOptions ab;
    auto* a = app.add_subcommand("ablate-dilation", "Greedy cost over a grid of dilation factors");
    a->add_option("--checkpoint", ab.checkpoint)->required();
    a->add_option("--instances", ab.instances)->required();
    a->add_option("--kmin", ab.kmin)->capture_default_str();
    a->add_option("--kmax", ab.kmax)->capture_default_str();
    a->add_option("--step", ab.step)->capture_default_str();
    a->add_option("--out", ab.out, "Output directory")->required();
    a->add_option("--threads", ab.threads, "Worker cap (default: SADM_THREADS or 1)");

    OracleOptions orc;
    auto* r = app.add_subcommand("oracle", "Reference costs by brute force (n <= 8) or Clarke-Wright");
    r->add_option("--instances", orc.instances)->required();
    r->add_option("--method", orc.method)->check(CLI::IsMember({"brute", "cw"}))->capture_default_str();
    r->add_option("--out", orc.out, "Reference cost CSV")->required();
    r->add_option("--threads", orc.threads, "Worker cap (default: SADM_THREADS or 1)");

    std::vector<char*> cargv;
    std::vector<std::string> storage = argv;
    if (storage.empty()) storage.push_back("sadm");
    for (auto& s : storage) cargv.push_back(s.data());
    try {
        app.parse(static_cast<int>(cargv.size()), cargv.data());
    } catch (const CLI::ParseError& pe) {
        const int code = app.exit(pe, out, err);
        return code == 0 ? kOk : kUsage;
    }

    Context ctx{storage, out, err};
    try {
        if (*g) return cmd_gen(gen, ctx);
        if (*t) return cmd_train(tr, ctx);
        if (*e) return cmd_eval(ev, ctx);
        if (*a) return cmd_ablate(ab, ctx);
        if (*r) return cmd_oracle(orc, ctx);
    } catch (const DivergenceError& x) {
        err << "error: " << x.what() << '\n';
        return kDivergence;
    } catch (const ValidationError& x) {
        err << "validation error: " << x.what() << '\n';
        return kValidation;
    } catch (const SizeLimitError& x) {
        err << "size limit: " << x.what() << '\n';
        return kValidation;
    } catch (const ContractError& x) {
        err << "usage error: " << x.what() << '\n';
        return kUsage;
    } catch (const VersionError& x) {
        err << "version error: " << x.what() << '\n';
        return kFailure;
    } catch (const std::exception& x) {
        err << "error: " << x.what() << '\n';
        return kFailure;
    }
    return kUsage;
}

}  // namespace sadm::cli
