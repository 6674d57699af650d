#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>

#include "sadm/baselines.hpp"
#include "sadm/random.hpp"

using namespace sadm;

namespace {

Instance make(Point depot, std::vector<Point> pts, std::vector<int> demands, int capacity) {
    Instance inst;
    inst.n = pts.size();
    inst.depot = depot;
    inst.coords = std::move(pts);
    inst.demands = std::move(demands);
    inst.capacity = capacity;
    return inst;
}

// Every customer order, cut into consecutive routes at every split pattern.
double enumerate_optimum(const Instance& inst) {
    std::vector<std::size_t> perm(inst.n);
    std::iota(perm.begin(), perm.end(), 1);
    double best = std::numeric_limits<double>::infinity();
    do {
        for (std::size_t cuts = 0; cuts < (std::size_t{1} << (inst.n - 1)); ++cuts) {
            Tour t;
            Route r{perm[0]};
            for (std::size_t k = 1; k < inst.n; ++k) {
                if (cuts >> (k - 1) & 1) {
                    t.routes.push_back(r);
                    r.clear();
                }
                r.push_back(perm[k]);
            }
            t.routes.push_back(r);
            if (validate(inst, t).ok()) best = std::min(best, tour_length(inst, t));
        }
    } while (std::next_permutation(perm.begin(), perm.end()));
    return best;
}

Tour random_feasible_tour(const Instance& inst, Rng& rng) {
    std::vector<std::size_t> perm(inst.n);
    std::iota(perm.begin(), perm.end(), 1);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Tour t;
    Route r;
    long load = 0;
    for (auto c : perm) {
        const bool cut = load + inst.demand(c) > inst.capacity || u(rng) < 0.3;
        if (cut && !r.empty()) {
            t.routes.push_back(r);
            r.clear();
            load = 0;
        }
        r.push_back(c);
        load += inst.demand(c);
    }
    t.routes.push_back(r);
    return t;
}

double singleton_cost(const Instance& inst) {
    double s = 0.0;
    for (std::size_t i = 1; i <= inst.n; ++i) s += 2.0 * inst.dist(0, i);
    return s;
}

}  // namespace

TEST_CASE("clarke-wright on tiny instances", "[baselines]") {
    auto one = make({0.5, 0.5}, {{0.9, 0.5}}, {3}, 10);
    CHECK(clarke_wright(one).routes == std::vector<Route>{{1}});

    // two customers on opposite sides: saving is zero, no merge
    auto opposite = make({0.5, 0.5}, {{0.25, 0.5}, {0.75, 0.5}}, {1, 1}, 10);
    CHECK(clarke_wright(opposite).route_count() == 2);

    // nearby customers merge when the load fits, stay apart when it does not
    auto close = make({0.0, 0.0}, {{1.0, 0.0}, {1.0, 0.1}}, {4, 5}, 10);
    auto merged = clarke_wright(close);
    REQUIRE(merged.route_count() == 1);
    CHECK(tour_length(close, merged) == Catch::Approx(1.0 + 0.1 + std::hypot(1.0, 0.1)));
    close.capacity = 8;
    CHECK(clarke_wright(close).route_count() == 2);
}

TEST_CASE("clarke-wright merges a chain in savings order", "[baselines]") {
    // customers along a line away from the depot: best is one out-and-back route
    auto line = make({0.0, 0.0}, {{0.2, 0.0}, {0.4, 0.0}, {0.6, 0.0}, {0.8, 0.0}}, {1, 1, 1, 1}, 10);
    auto t = clarke_wright(line);
    REQUIRE(t.route_count() == 1);
    CHECK(tour_length(line, t) == Catch::Approx(1.6));
    CHECK(validate(line, t).ok());
}

TEST_CASE("clarke-wright is valid and no worse than singletons", "[baselines][property]") {
    for (std::size_t n : {5, 10, 20, 50}) {
        for (std::uint64_t s = 0; s < 25; ++s) {
            auto inst = generate(n, 1000 + s);
            auto t = clarke_wright(inst);
            INFO("n " << n << " seed " << s);
            CHECK(validate(inst, t).ok());
            CHECK(tour_length(inst, t) <= singleton_cost(inst) + 1e-12);
            CHECK(clarke_wright(inst) == t);
        }
    }
}

TEST_CASE("brute force matches exhaustive enumeration", "[baselines][oracle]") {
    for (std::size_t n = 1; n <= 7; ++n) {
        for (std::uint64_t s = 0; s < (n <= 5 ? 12u : 4u); ++s) {
            auto inst = generate(n, 77 + 31 * s);
            auto opt = brute_force_optimal(inst);
            INFO("n " << n << " seed " << inst.seed);
            CHECK(validate(inst, opt.tour).ok());
            CHECK(opt.cost == Catch::Approx(enumerate_optimum(inst)).margin(1e-9));
            CHECK(opt.cost == Catch::Approx(tour_length(inst, opt.tour)).margin(1e-12));
        }
    }
}

TEST_CASE("brute force with tight capacity", "[baselines][oracle]") {
    // every pair exceeds capacity: one route per customer
    auto inst = make({0.5, 0.5}, {{0.1, 0.1}, {0.9, 0.1}, {0.5, 0.9}}, {6, 6, 6}, 10);
    auto opt = brute_force_optimal(inst);
    CHECK(opt.tour.route_count() == 3);
    CHECK(opt.cost == Catch::Approx(singleton_cost(inst)));
    // n = 2 with room for both: min(one route, two singletons)
    auto two = make({0.0, 0.0}, {{1.0, 0.0}, {0.0, 1.0}}, {1, 1}, 10);
    CHECK(brute_force_optimal(two).cost == Catch::Approx(std::min(2.0 + std::sqrt(2.0), 4.0)));
}

TEST_CASE("brute force lower-bounds random feasible tours and CW", "[baselines][property]") {
    Rng rng(5);
    for (std::uint64_t s = 0; s < 3; ++s) {
        auto inst = generate(6, 500 + s);
        const double opt = brute_force_optimal(inst).cost;
        CHECK(opt <= tour_length(inst, clarke_wright(inst)) + 1e-12);
        double best_random = std::numeric_limits<double>::infinity();
        for (int k = 0; k < 10000; ++k) {
            auto t = random_feasible_tour(inst, rng);
            REQUIRE(validate(inst, t).ok());
            best_random = std::min(best_random, tour_length(inst, t));
        }
        CHECK(opt <= best_random + 1e-12);
    }
}

TEST_CASE("brute force refuses large instances", "[baselines]") {
    auto inst = generate(9, 42);
    try {
        brute_force_optimal(inst);
        FAIL("expected SizeLimitError");
    } catch (const SizeLimitError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("n = 9") != std::string::npos);
        CHECK(msg.find("42") != std::string::npos);
    }
    CHECK_NOTHROW(brute_force_optimal(generate(8, 42)));
}

TEST_CASE("gap report", "[baselines]") {
    auto r = gap_report({11.0, 11.0}, {10.0, 10.0});
    CHECK(r.mean_gap == Catch::Approx(0.10).margin(1e-12));
    CHECK(gap_report({16.28}, {15.65}).mean_gap == Catch::Approx(0.0403).margin(5e-5));
    CHECK(gap_report({10.0}, {10.0}).mean_gap == 0.0);
    CHECK_THROWS_AS(gap_report({1.0}, {0.0}), ContractError);
    CHECK_THROWS_AS(gap_report({1.0}, {-2.0}), ContractError);
    CHECK_THROWS_AS(gap_report({1.0, 2.0}, {1.0}), ContractError);

    auto rep = gap_report({3.0, 4.5}, {2.0, 4.5}, {7, 9});
    CHECK(rep.to_csv() == "instance_seed,cost,reference,gap\n7,3.000000,2.000000,0.500000\n9,4.500000,4.500000,0.000000\n");
    auto j = rep.to_json();
    CHECK(j["mean_gap"].get<double>() == Catch::Approx(0.25));
    CHECK(j["instances"].size() == 2);
}

TEST_CASE("reference cost file round trip", "[baselines]") {
    auto path = (std::filesystem::temp_directory_path() / "sadm_ref_costs.csv").string();
    write_reference_costs(path, {3, 17}, {1.25, 2.5});
    auto m = read_reference_costs(path);
    CHECK(m.size() == 2);
    CHECK(m.at(3) == 1.25);
    CHECK(m.at(17) == 2.5);
    std::filesystem::remove(path);
    CHECK_THROWS_AS(read_reference_costs(path), IoError);
}
