#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sadm/vrp.hpp"

namespace sadm {

// Parallel Clarke-Wright savings. Savings s_ij = d(0,i) + d(0,j) - d(i,j) are
// processed in decreasing order, ties by (i, j); a positive saving merges two
// distinct routes when i and j are endpoints and the load fits.
inline Tour clarke_wright(const Instance& inst) {
    const std::size_t n = inst.n;
    std::vector<std::deque<std::size_t>> routes(n + 1);
    std::vector<long> load(n + 1, 0);
    std::vector<std::size_t> owner(n + 1);
    for (std::size_t i = 1; i <= n; ++i) {
        routes[i] = {i};
        load[i] = inst.demand(i);
        owner[i] = i;
    }
    struct Saving {
        double s;
        std::size_t i, j;
    };
    std::vector<Saving> savings;
    savings.reserve(n * (n - 1) / 2);
    for (std::size_t i = 1; i <= n; ++i) {
        for (std::size_t j = i + 1; j <= n; ++j) savings.push_back({inst.dist(0, i) + inst.dist(0, j) - inst.dist(i, j), i, j});
    }
    std::sort(savings.begin(), savings.end(), [](const Saving& a, const Saving& b) {
        if (a.s != b.s) return a.s > b.s;
        return a.i != b.i ? a.i < b.i : a.j < b.j;
    });
    for (const auto& sv : savings) {
        if (!(sv.s > 0.0)) break;
        const auto ra = owner[sv.i], rb = owner[sv.j];
        if (ra == rb || load[ra] + load[rb] > inst.capacity) continue;
        auto& a = routes[ra];
        auto& b = routes[rb];
        const bool i_end = a.back() == sv.i, i_start = a.front() == sv.i;
        const bool j_end = b.back() == sv.j, j_start = b.front() == sv.j;
        if (!(i_end || i_start) || !(j_end || j_start)) continue;
        // orient so that a ends with i and b starts with j
        if (!i_end) std::reverse(a.begin(), a.end());
        if (!j_start) std::reverse(b.begin(), b.end());
        for (auto c : b) {
            a.push_back(c);
            owner[c] = ra;
        }
        load[ra] += load[rb];
        b.clear();
        load[rb] = 0;
    }
    Tour t;
    for (std::size_t r = 1; r <= n; ++r) {
        if (!routes[r].empty()) t.routes.emplace_back(routes[r].begin(), routes[r].end());
    }
    return t;
}

inline constexpr std::size_t kBruteForceLimit = 8;

struct OptimalResult {
    Tour tour;
    double cost = 0.0;
};

// Exact optimum for n <= 8: Held-Karp gives the shortest route through every
// capacity-feasible customer subset, then a DP over subsets picks the best
// partition into routes.
inline OptimalResult brute_force_optimal(const Instance& inst) {
    const std::size_t n = inst.n;
    if (n > kBruteForceLimit) {
        throw SizeLimitError("brute_force_optimal: n = " + std::to_string(n) + " exceeds the limit of " +
                             std::to_string(kBruteForceLimit) + " (instance seed " + std::to_string(inst.seed) + ")");
    }
    const double inf = std::numeric_limits<double>::infinity();
    const std::size_t full = std::size_t{1} << n;
    // path[S][j]: shortest depot -> ... -> j visiting exactly S (j in S)
    std::vector<double> path(full * n, inf);
    std::vector<int> prev(full * n, -1);
    for (std::size_t j = 0; j < n; ++j) path[(std::size_t{1} << j) * n + j] = inst.dist(0, j + 1);
    for (std::size_t S = 1; S < full; ++S) {
        for (std::size_t j = 0; j < n; ++j) {
            const double base = path[S * n + j];
            if (!(S >> j & 1) || base == inf) continue;
            for (std::size_t k = 0; k < n; ++k) {
                if (S >> k & 1) continue;
                const std::size_t T = S | (std::size_t{1} << k);
                const double c = base + inst.dist(j + 1, k + 1);
                if (c < path[T * n + k]) {
                    path[T * n + k] = c;
                    prev[T * n + k] = static_cast<int>(j);
                }
            }
        }
    }
    std::vector<double> route(full, inf);
    std::vector<int> route_end(full, -1);
    for (std::size_t S = 1; S < full; ++S) {
        long demand = 0;
        for (std::size_t j = 0; j < n; ++j) demand += (S >> j & 1) ? inst.demand(j + 1) : 0;
        if (demand > inst.capacity) continue;
        for (std::size_t j = 0; j < n; ++j) {
            if (!(S >> j & 1)) continue;
            const double c = path[S * n + j] + inst.dist(j + 1, 0);
            if (c < route[S]) {
                route[S] = c;
                route_end[S] = static_cast<int>(j);
            }
        }
    }
    // best[S]: cheapest set of routes covering S; the route holding the lowest
    // customer of S is chosen first so each partition is seen once.
    std::vector<double> best(full, inf);
    std::vector<std::size_t> pick(full, 0);
    best[0] = 0.0;
    for (std::size_t S = 1; S < full; ++S) {
        const std::size_t low = S & (~S + 1);
        const std::size_t rest = S ^ low;
        for (std::size_t sub = rest;; sub = (sub - 1) & rest) {
            const std::size_t T = sub | low;
            if (route[T] < inf) {
                const double c = route[T] + best[S ^ T];
                if (c < best[S]) {
                    best[S] = c;
                    pick[S] = T;
                }
            }
            if (sub == 0) break;
        }
    }
    OptimalResult res;
    for (std::size_t S = full - 1; S != 0;) {
        const std::size_t T = pick[S];
        Route r;
        std::size_t cur = T;
        int j = route_end[T];
        while (j >= 0) {
            r.push_back(static_cast<std::size_t>(j) + 1);
            const int p = prev[cur * n + static_cast<std::size_t>(j)];
            cur ^= std::size_t{1} << j;
            j = p;
        }
        std::reverse(r.begin(), r.end());
        res.tour.routes.push_back(std::move(r));
        S ^= T;
    }
    std::sort(res.tour.routes.begin(), res.tour.routes.end());
    res.cost = tour_length(inst, res.tour);
    return res;
}

struct GapEntry {
    std::uint64_t instance_seed = 0;
    double cost = 0.0;
    double reference = 0.0;
    double gap = 0.0;  // cost / reference - 1
};

struct GapReport {
    std::vector<GapEntry> entries;
    double mean_cost = 0.0;
    double mean_reference = 0.0;
    double mean_gap = 0.0;

    std::string to_csv() const {
        std::ostringstream s;
        s << std::fixed << std::setprecision(6) << "instance_seed,cost,reference,gap\n";
        for (const auto& e : entries) s << e.instance_seed << ',' << e.cost << ',' << e.reference << ',' << e.gap << '\n';
        return s.str();
    }

    nlohmann::json to_json() const {
        nlohmann::json rows = nlohmann::json::array();
        for (const auto& e : entries) {
            rows.push_back({{"instance_seed", e.instance_seed}, {"cost", e.cost}, {"reference", e.reference}, {"gap", e.gap}});
        }
        return {{"mean_cost", mean_cost}, {"mean_reference", mean_reference}, {"mean_gap", mean_gap}, {"instances", rows}};
    }
};

inline GapReport gap_report(const std::vector<double>& costs, const std::vector<double>& references,
                            const std::vector<std::uint64_t>& seeds = {}) {
    if (costs.size() != references.size() || (!seeds.empty() && seeds.size() != costs.size())) {
        throw ContractError("gap_report: cost and reference lists are not aligned");
    }
    GapReport rep;
    for (std::size_t i = 0; i < costs.size(); ++i) {
        if (!(references[i] > 0.0)) {
            throw ContractError("gap_report: reference cost " + std::to_string(references[i]) + " at position " +
                                std::to_string(i) + " is not positive");
        }
        GapEntry e{seeds.empty() ? i : seeds[i], costs[i], references[i], costs[i] / references[i] - 1.0};
        rep.mean_cost += e.cost;
        rep.mean_reference += e.reference;
        rep.mean_gap += e.gap;
        rep.entries.push_back(e);
    }
    if (!costs.empty()) {
        const auto k = static_cast<double>(costs.size());
        rep.mean_cost /= k;
        rep.mean_reference /= k;
        rep.mean_gap /= k;
    }
    return rep;
}

// Reference-cost file: CSV with header "instance_seed,cost".
inline void write_reference_costs(const std::string& path, const std::vector<std::uint64_t>& seeds,
                                  const std::vector<double>& costs) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out << std::fixed << std::setprecision(6) << "instance_seed,cost\n";
    for (std::size_t i = 0; i < seeds.size(); ++i) out << seeds[i] << ',' << costs[i] << '\n';
    if (!out) throw IoError("write to '" + path + "' failed");
}

inline std::map<std::uint64_t, double> read_reference_costs(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open reference file '" + path + "'");
    std::map<std::uint64_t, double> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line.rfind("instance_seed", 0) == 0) continue;
        const auto comma = line.find(',');
        try {
            if (comma == std::string::npos) throw std::invalid_argument("missing comma");
            out[std::stoull(line.substr(0, comma))] = std::stod(line.substr(comma + 1));
        } catch (const std::exception&) {
            throw IoError(path + ":" + std::to_string(lineno) + ": expected 'instance_seed,cost'");
        }
    }
    return out;
}

}  // namespace sadm
