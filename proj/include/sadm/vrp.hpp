#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sadm/errors.hpp"
#include "sadm/random.hpp"

namespace sadm {

struct Point {
    double x = 0.0;
    double y = 0.0;

    friend bool operator==(const Point&, const Point&) = default;
};

inline double distance(const Point& a, const Point& b) { return std::hypot(a.x - b.x, a.y - b.y); }

// CVRP instance. Node 0 is the depot; customers are nodes 1..n, and
// coords[i - 1] / demands[i - 1] belong to node i.
struct Instance {
    std::size_t n = 0;
    Point depot;
    std::vector<Point> coords;
    std::vector<int> demands;
    int capacity = 0;
    std::uint64_t seed = 0;

    const Point& node(std::size_t i) const { return i == 0 ? depot : coords[i - 1]; }
    int demand(std::size_t i) const { return i == 0 ? 0 : demands[i - 1]; }
    double dist(std::size_t i, std::size_t j) const { return distance(node(i), node(j)); }

    // Normalized demand used as a model feature; capacity becomes 1.
    double demand_hat(std::size_t i) const { return static_cast<double>(demand(i)) / capacity; }

    void check() const {
        if (coords.size() != n || demands.size() != n) throw ValidationError("instance: coords/demands length differs from n");
        if (capacity <= 0) throw ValidationError("instance: capacity must be positive");
        for (std::size_t i = 0; i < n; ++i) {
            if (demands[i] <= 0 || demands[i] > capacity) {
                throw ValidationError("instance: demand of customer " + std::to_string(i + 1) + " outside (0, capacity]");
            }
            if (!std::isfinite(coords[i].x) || !std::isfinite(coords[i].y)) {
                throw ValidationError("instance: non-finite coordinate");
            }
        }
    }

    friend bool operator==(const Instance&, const Instance&) = default;
};

// Vehicle capacity for n customers. Anchors 20 -> 30, 50 -> 40, 100 -> 50,
// piecewise-linear in between, constant outside.
inline int capacity_for(std::size_t n) {
    const double x = static_cast<double>(n);
    double c;
    if (x <= 20.0) c = 30.0;
    else if (x <= 50.0) c = 30.0 + (x - 20.0) * 10.0 / 30.0;
    else if (x <= 100.0) c = 40.0 + (x - 50.0) * 10.0 / 50.0;
    else c = 50.0;
    return static_cast<int>(std::lround(c));
}

// Depot and customers uniform in the unit square, demands uniform in 1..9.
inline Instance generate(std::size_t n, std::uint64_t seed) {
    if (n < 1) throw ContractError("generate: n must be at least 1");
    Rng rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_int_distribution<int> demand(1, 9);
    Instance inst;
    inst.n = n;
    inst.seed = seed;
    inst.capacity = capacity_for(n);
    inst.depot = {unit(rng), unit(rng)};
    inst.coords.resize(n);
    for (auto& p : inst.coords) p = {unit(rng), unit(rng)};
    inst.demands.resize(n);
    for (auto& d : inst.demands) d = demand(rng);
    return inst;
}

// `count` instances whose seeds derive from `seed`.
inline std::vector<Instance> generate_set(std::size_t n, std::size_t count, std::uint64_t seed) {
    std::vector<Instance> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) out.push_back(generate(n, derive_seed(seed, i)));
    return out;
}

using Route = std::vector<std::size_t>;

// Routes of customer node indices (1..n); the depot is implicit at both ends.
struct Tour {
    std::vector<Route> routes;

    std::size_t route_count() const noexcept { return routes.size(); }
    friend bool operator==(const Tour&, const Tour&) = default;
};

// Splits a node sequence on depot visits; empty routes (consecutive depot
// visits, including forced waits at the depot) disappear.
inline Tour canonical_tour(const std::vector<std::size_t>& trace) {
    Tour t;
    Route cur;
    for (auto v : trace) {
        if (v == 0) {
            if (!cur.empty()) t.routes.push_back(std::move(cur));
            cur.clear();
        } else {
            cur.push_back(v);
        }
    }
    if (!cur.empty()) t.routes.push_back(std::move(cur));
    return t;
}

struct Violation {
    enum class Kind { out_of_range, duplicate, missing, capacity };
    Kind kind;
    std::size_t index;  // customer for out_of_range/duplicate/missing, route for capacity
    std::string message;
};

struct ValidationReport {
    std::vector<Violation> violations;

    bool ok() const noexcept { return violations.empty(); }
    std::string summary() const {
        std::string s;
        for (const auto& v : violations) {
            if (!s.empty()) s += "; ";
            s += v.message;
        }
        return s;
    }
};

inline ValidationReport validate(const Instance& inst, const Tour& tour) {
    ValidationReport rep;
    std::vector<int> seen(inst.n + 1, 0);
    for (std::size_t r = 0; r < tour.routes.size(); ++r) {
        long load = 0;
        for (auto c : tour.routes[r]) {
            if (c < 1 || c > inst.n) {
                rep.violations.push_back({Violation::Kind::out_of_range, c,
                                          "customer index " + std::to_string(c) + " out of range in route " +
                                              std::to_string(r)});
                continue;
            }
            if (++seen[c] == 2) {
                rep.violations.push_back(
                    {Violation::Kind::duplicate, c, "customer " + std::to_string(c) + " visited more than once"});
            }
            load += inst.demand(c);
        }
        if (load > inst.capacity) {
            rep.violations.push_back({Violation::Kind::capacity, r,
                                      "route " + std::to_string(r) + " load " + std::to_string(load) +
                                          " exceeds capacity " + std::to_string(inst.capacity)});
        }
    }
    for (std::size_t c = 1; c <= inst.n; ++c) {
        if (seen[c] == 0) {
            rep.violations.push_back({Violation::Kind::missing, c, "customer " + std::to_string(c) + " not visited"});
        }
    }
    return rep;
}

// Length of depot -> route -> depot; no feasibility check.
inline double route_length(const Instance& inst, const Route& route) {
    if (route.empty()) return 0.0;
    double len = inst.dist(0, route.front());
    for (std::size_t k = 1; k < route.size(); ++k) len += inst.dist(route[k - 1], route[k]);
    return len + inst.dist(route.back(), 0);
}

inline double tour_length(const Instance& inst, const Tour& tour) {
    double total = 0.0;
    for (const auto& r : tour.routes) total += route_length(inst, r);
    return total;
}

// Total travel distance of a valid tour.
inline double tour_cost(const Instance& inst, const Tour& tour) {
    const auto rep = validate(inst, tour);
    if (!rep.ok()) throw ValidationError("invalid tour: " + rep.summary());
    return tour_length(inst, tour);
}

// ---- line-oriented JSON files ----

inline nlohmann::json to_json(const Instance& inst) {
    nlohmann::json coords = nlohmann::json::array();
    for (const auto& p : inst.coords) coords.push_back({p.x, p.y});
    return {{"n", inst.n},
            {"seed", inst.seed},
            {"capacity", inst.capacity},
            {"depot", {inst.depot.x, inst.depot.y}},
            {"coords", coords},
            {"demands", inst.demands}};
}

inline Instance instance_from_json(const nlohmann::json& j) {
    Instance inst;
    inst.n = j.at("n").get<std::size_t>();
    inst.seed = j.at("seed").get<std::uint64_t>();
    inst.capacity = j.at("capacity").get<int>();
    inst.depot = {j.at("depot").at(0).get<double>(), j.at("depot").at(1).get<double>()};
    for (const auto& c : j.at("coords")) inst.coords.push_back({c.at(0).get<double>(), c.at(1).get<double>()});
    inst.demands = j.at("demands").get<std::vector<int>>();
    inst.check();
    return inst;
}

struct TourRecord {
    std::uint64_t instance_seed = 0;
    Tour tour;
    double cost = 0.0;
};

inline nlohmann::json to_json(const TourRecord& rec) {
    return {{"instance_seed", rec.instance_seed}, {"routes", rec.tour.routes}, {"cost", rec.cost}};
}

inline TourRecord tour_from_json(const nlohmann::json& j) {
    TourRecord rec;
    rec.instance_seed = j.at("instance_seed").get<std::uint64_t>();
    rec.tour.routes = j.at("routes").get<std::vector<Route>>();
    rec.cost = j.at("cost").get<double>();
    return rec;
}

namespace detail {

template <typename T, typename Parse>
std::vector<T> read_lines(const std::string& path, Parse parse) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path + "' for reading");
    std::vector<T> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            out.push_back(parse(nlohmann::json::parse(line)));
        } catch (const nlohmann::json::exception& e) {
            throw IoError(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

template <typename T>
void write_lines(const std::string& path, const std::vector<T>& items) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    for (const auto& it : items) out << to_json(it).dump() << '\n';
    if (!out) throw IoError("write to '" + path + "' failed");
}

}  // namespace detail

inline std::vector<Instance> read_instances(const std::string& path) {
    return detail::read_lines<Instance>(path, instance_from_json);
}
inline void write_instances(const std::string& path, const std::vector<Instance>& items) {
    detail::write_lines(path, items);
}
inline std::vector<TourRecord> read_tours(const std::string& path) {
    return detail::read_lines<TourRecord>(path, tour_from_json);
}
inline void write_tours(const std::string& path, const std::vector<TourRecord>& items) {
    detail::write_lines(path, items);
}

}  // namespace sadm
