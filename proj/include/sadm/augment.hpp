#pragma once

#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "sadm/model.hpp"
#include "sadm/parallel.hpp"

namespace sadm {

inline constexpr Point kAugmentCenter{0.5, 0.5};

inline Point rotate_point(const Point& p, double theta) {
    const double c = std::cos(theta), s = std::sin(theta);
    const double dx = p.x - kAugmentCenter.x, dy = p.y - kAugmentCenter.y;
    return {c * dx - s * dy + kAugmentCenter.x, s * dx + c * dy + kAugmentCenter.y};
}

inline Point dilate_point(const Point& p, double k) {
    return {k * (p.x - kAugmentCenter.x) + kAugmentCenter.x, k * (p.y - kAugmentCenter.y) + kAugmentCenter.y};
}

// Rotation of every node (depot included) about the centre of the unit square.
inline Instance rotate(const Instance& inst, double theta) {
    Instance out = inst;
    if (theta == 0.0) return out;
    out.depot = rotate_point(inst.depot, theta);
    for (auto& p : out.coords) p = rotate_point(p, theta);
    return out;
}

// Scaling about the centre of the unit square; all distances scale by k.
inline Instance dilate(const Instance& inst, double k) {
    if (!(k > 0.0) || !std::isfinite(k)) throw ContractError("dilate: factor must be finite and positive");
    Instance out = inst;
    if (k == 1.0) return out;
    out.depot = dilate_point(inst.depot, k);
    for (auto& p : out.coords) p = dilate_point(p, k);
    return out;
}

struct Transform {
    double theta = 0.0;
    double k = 1.0;

    bool identity() const noexcept { return theta == 0.0 && k == 1.0; }
    Instance apply(const Instance& inst) const { return dilate(rotate(inst, theta), k); }
    friend bool operator==(const Transform&, const Transform&) = default;
};

struct AugmentationSet {
    std::vector<double> rotations{0.0};  // radians
    std::vector<double> dilations{1.0};
    bool include_identity = true;

    // Eight multiples of 45 degrees times factors {1.0, 1.1, 1.2, 1.6, 1.8}.
    static AugmentationSet default_set() {
        AugmentationSet s;
        s.rotations.clear();
        for (int q = 0; q < 8; ++q) s.rotations.push_back(q * std::numbers::pi / 4.0);
        s.dilations = {1.0, 1.1, 1.2, 1.6, 1.8};
        return s;
    }

    static AugmentationSet identity_only() { return AugmentationSet{}; }

    void check() const {
        for (double k : dilations) {
            if (!(k > 0.0) || !std::isfinite(k)) throw ContractError("augmentation: dilation factors must be finite and positive");
        }
        for (double t : rotations) {
            if (!std::isfinite(t)) throw ContractError("augmentation: rotation angles must be finite");
        }
    }

    // Every rotation x dilation pair, identity first when included, duplicates removed.
    std::vector<Transform> transforms() const {
        check();
        std::vector<Transform> out;
        auto add = [&](Transform t) {
            if (std::find(out.begin(), out.end(), t) == out.end()) out.push_back(t);
        };
        if (include_identity) add({});
        for (double t : rotations) {
            for (double k : dilations) add({t, k});
        }
        if (out.empty()) throw ContractError("augmentation: empty transform set");
        return out;
    }
};

// Greedy tours in fixed chunks spread over workers; results do not depend on
// the worker count because chunk composition is fixed.
inline std::vector<Tour> greedy_tours_parallel(ModelParams& params, const std::vector<Instance>& instances,
                                               std::size_t threads, std::size_t chunk = 128) {
    std::vector<Tour> tours(instances.size());
    const std::size_t chunks = (instances.size() + chunk - 1) / chunk;
    parallel_for(chunks, threads, [&](std::size_t c) {
        const std::size_t lo = c * chunk, hi = std::min(instances.size(), lo + chunk);
        std::vector<Instance> part(instances.begin() + static_cast<long>(lo), instances.begin() + static_cast<long>(hi));
        auto t = greedy_tours(params, part, chunk);
        for (std::size_t i = lo; i < hi; ++i) tours[i] = std::move(t[i - lo]);
    });
    return tours;
}

struct AugmentedResult {
    Tour tour;                        // best over the set
    double cost = 0.0;                // on the original coordinates
    std::size_t best = 0;             // index into transforms
    std::vector<Transform> transforms;
    std::vector<double> costs;        // per transform, on the original coordinates
};

// Greedy inference on every transformed copy of each instance; each tour is
// re-costed on the original coordinates and the cheapest is kept (first on ties).
inline std::vector<AugmentedResult> augmented_infer(ModelParams& params, const std::vector<Instance>& instances,
                                                    const AugmentationSet& augs, std::size_t threads = 1) {
    const auto ts = augs.transforms();
    std::vector<Instance> expanded;
    expanded.reserve(instances.size() * ts.size());
    for (const auto& inst : instances) {
        for (const auto& t : ts) expanded.push_back(t.apply(inst));
    }
    auto tours = greedy_tours_parallel(params, expanded, threads);
    std::vector<AugmentedResult> out(instances.size());
    for (std::size_t i = 0; i < instances.size(); ++i) {
        auto& r = out[i];
        r.transforms = ts;
        for (std::size_t j = 0; j < ts.size(); ++j) {
            const auto& tour = tours[i * ts.size() + j];
            const double c = tour_cost(instances[i], tour);
            r.costs.push_back(c);
            if (j == 0 || c < r.cost) {
                r.cost = c;
                r.best = j;
                r.tour = tour;
            }
        }
    }
    return out;
}

inline AugmentedResult augmented_infer(ModelParams& params, const Instance& inst, const AugmentationSet& augs,
                                       std::size_t threads = 1) {
    return augmented_infer(params, std::vector<Instance>{inst}, augs, threads).front();
}

struct AblationRow {
    double k = 1.0;
    double mean_cost = 0.0;
    double cumulative_mean_cost = 0.0;  // mean over instances of the best cost for factors up to k
};

// Per-factor greedy mean cost (re-costed on originals) and the cumulative
// best-so-far mean, in grid order.
inline std::vector<AblationRow> dilation_ablation(ModelParams& params, const std::vector<Instance>& instances,
                                                  const std::vector<double>& grid, std::size_t threads = 1) {
    if (grid.empty()) throw ContractError("dilation_ablation: empty grid");
    if (instances.empty()) throw ContractError("dilation_ablation: empty evaluation set");
    std::vector<double> best(instances.size(), std::numeric_limits<double>::infinity());
    std::vector<AblationRow> rows;
    for (double k : grid) {
        std::vector<Instance> scaled;
        for (const auto& inst : instances) scaled.push_back(dilate(inst, k));
        auto tours = greedy_tours_parallel(params, scaled, threads);
        AblationRow row{k, 0.0, 0.0};
        for (std::size_t i = 0; i < instances.size(); ++i) {
            const double c = tour_cost(instances[i], tours[i]);
            row.mean_cost += c;
            best[i] = std::min(best[i], c);
            row.cumulative_mean_cost += best[i];
        }
        row.mean_cost /= static_cast<double>(instances.size());
        row.cumulative_mean_cost /= static_cast<double>(instances.size());
        rows.push_back(row);
    }
    return rows;
}

// kmin, kmin + step, ... up to kmax (inclusive, with rounding slack).
inline std::vector<double> dilation_grid(double kmin, double kmax, double step) {
    if (!(step > 0.0) || !(kmin <= kmax) || !(kmin > 0.0)) {
        throw ContractError("dilation grid: need 0 < kmin <= kmax and step > 0");
    }
    const auto count = static_cast<std::size_t>(std::floor((kmax - kmin) / step + 1e-9)) + 1;
    std::vector<double> g;
    for (std::size_t i = 0; i < count; ++i) g.push_back(std::round((kmin + static_cast<double>(i) * step) * 1e9) / 1e9);
    return g;
}

inline std::string ablation_csv(const std::vector<AblationRow>& rows) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(6) << "k,mean_cost,cumulative_mean_cost\n";
    for (const auto& r : rows) s << r.k << ',' << r.mean_cost << ',' << r.cumulative_mean_cost << '\n';
    return s.str();
}

}  // namespace sadm
