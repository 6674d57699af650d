#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "sadm/sparse_act.hpp"
#include "support/fd_oracle.hpp"

using namespace sadm;
using sadm::testing::check_gradients;
using sadm::testing::random_array;

namespace {

std::vector<double> random_logits(std::mt19937_64& rng, std::size_t n, double lo = -5, double hi = 5) {
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<double> z(n);
    for (auto& v : z) v = u(rng);
    return z;
}

double sum(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s;
}

// Smallest gap between any z'_i = z_i / 2 and the threshold, i.e. distance to
// a support change. Uses the bisection result so it does not trust the closed form.
double support_margin(const std::vector<double>& z) {
    auto p = entmax_bisect(z, 1.5, 200);
    // recover tau from any support entry: p = (z/2 - tau)^2
    double tau = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        if (p[i] > 0.0) {
            tau = z[i] / 2.0 - std::sqrt(p[i]);
            break;
        }
    }
    double m = std::numeric_limits<double>::infinity();
    for (double v : z) m = std::min(m, std::abs(v / 2.0 - tau));
    return m;
}

}  // namespace

TEST_CASE("entmax15 examples", "[entmax]") {
    auto u = entmax15(std::vector<double>{0.3, 0.3, 0.3, 0.3});
    for (double p : u.probs) CHECK(p == Catch::Approx(0.25).epsilon(1e-14));

    auto d = entmax15(std::vector<double>{10, 0, 0});
    CHECK(d.probs[0] == 1.0);
    CHECK(d.probs[1] == 0.0);
    CHECK(d.probs[2] == 0.0);
    CHECK(d.support() == std::vector<std::size_t>{0});

    std::vector<double> z{1.0, 0.5, -1.0};
    auto p = entmax15(z);
    CHECK(std::abs(sum(p.probs) - 1.0) < 1e-12);
    CHECK(p.probs[2] == 0.0);
    auto ref = entmax_bisect(z, 1.5, 60);
    for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(p.probs[i] - ref[i]) < 1e-8);
}

TEST_CASE("entmax15 rejects a fully masked row", "[entmax]") {
    CHECK_THROWS_AS(entmax15(std::vector<double>{kMaskSentinel, kMaskSentinel}), InfeasibleError);
    auto p = entmax15(std::vector<double>{kMaskSentinel, 2.0, kMaskSentinel});
    CHECK(p.probs == std::vector<double>{0.0, 1.0, 0.0});
}

TEST_CASE("entmax15 agrees with bisection on random vectors", "[entmax][property]") {
    std::mt19937_64 rng(101);
    double worst = 0.0;
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t n = 2 + rng() % 99;
        auto z = random_logits(rng, n);
        auto a = entmax15(z).probs;
        auto b = entmax_bisect(z, 1.5, 60);
        for (std::size_t i = 0; i < n; ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
    }
    CHECK(worst < 1e-8);
}

TEST_CASE("entmax_bisect contract", "[entmax]") {
    std::mt19937_64 rng(7);
    SECTION("near alpha = 1 it approaches softmax") {
        for (int trial = 0; trial < 50; ++trial) {
            auto z = random_logits(rng, 2 + rng() % 20, -2, 2);
            auto a = entmax_bisect(z, 1.0001, 60);
            auto s = softmax(z);
            for (std::size_t i = 0; i < z.size(); ++i) CHECK(std::abs(a[i] - s[i]) < 1e-3);
        }
    }
    SECTION("alpha = 2 is sparsemax") {
        auto p = entmax_bisect(std::vector<double>{1, 0}, 2.0, 60);
        CHECK(p[0] == Catch::Approx(1.0).margin(1e-12));
        CHECK(p[1] == Catch::Approx(0.0).margin(1e-12));
    }
    SECTION("sums to one and is nonnegative for any alpha") {
        std::uniform_real_distribution<double> ua(1.01, 4.0);
        for (int trial = 0; trial < 300; ++trial) {
            auto z = random_logits(rng, 1 + rng() % 50, -10, 10);
            auto p = entmax_bisect(z, ua(rng), 60);
            for (double v : p) CHECK(v >= 0.0);
            CHECK(std::abs(sum(p) - 1.0) < 1e-9);
        }
    }
    SECTION("preconditions") {
        CHECK_THROWS_AS(entmax_bisect(std::vector<double>{1, 2}, 1.0, 10), ContractError);
        CHECK_THROWS_AS(entmax_bisect(std::vector<double>{1, 2}, 1.5, 0), ContractError);
    }
}

TEST_CASE("entmax15 distribution properties", "[entmax][property]") {
    std::mt19937_64 rng(19);
    std::uniform_real_distribution<double> uc(-10, 10);
    for (int trial = 0; trial < 500; ++trial) {
        const std::size_t n = 1 + rng() % 60;
        auto z = random_logits(rng, n, -8, 8);
        auto p = entmax15(z);
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            CHECK(p.probs[i] >= 0.0);
            total += p.probs[i];
        }
        CHECK(std::abs(total - 1.0) <= 1e-9);
        CHECK(p.support_size() <= n);

        // translation invariance
        const double c = uc(rng);
        auto shifted = z;
        for (auto& v : shifted) v += c;
        auto q = entmax15(shifted);
        for (std::size_t i = 0; i < n; ++i) CHECK(std::abs(p.probs[i] - q.probs[i]) <= 1e-12);
    }
}

TEST_CASE("entmax15 is sparser than softmax", "[entmax][property]") {
    std::mt19937_64 rng(29);
    std::size_t strictly_sparse = 0;
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 2 + rng() % 30;
        auto z = random_logits(rng, n);
        auto p = entmax15(z);
        auto s = softmax(z);
        const auto dense = static_cast<std::size_t>(std::count_if(s.begin(), s.end(), [](double v) { return v > 0; }));
        CHECK(dense == n);
        CHECK(p.support_size() <= dense);
        strictly_sparse += p.support_size() < n ? 1 : 0;
    }
    CHECK(strictly_sparse > 100);
}

TEST_CASE("entmax15 gradient matches finite differences", "[entmax][grad]") {
    std::mt19937_64 rng(41);
    int checked = 0;
    while (checked < 40) {
        const std::size_t rows = 1 + rng() % 3, cols = 2 + rng() % 12;
        auto z0 = random_array({rows, cols}, rng, -3, 3);
        bool clear = true;
        for (std::size_t r = 0; r < rows; ++r) {
            std::vector<double> row(z0.data() + r * cols, z0.data() + (r + 1) * cols);
            clear = clear && support_margin(row) > 1e-3;
        }
        if (!clear) continue;
        ++checked;
        auto z = Value::parameter(z0);
        auto w = Value::constant(random_array({rows, cols}, rng));
        auto res = check_gradients({z}, [&] { return ops::sum(ops::mul(ops::entmax15(z), w)); }, 1e-6);
        INFO(res.worst);
        CHECK(res.max_rel_error < 1e-4);
    }
}

TEST_CASE("tsallis entropy", "[entmax]") {
    CHECK(tsallis_entropy(std::vector<double>{0, 1, 0}, 1.5) == 0.0);
    CHECK(tsallis_entropy(std::vector<double>{0, 1, 0}, 1.0) == 0.0);

    const double direct = (1.0 / (1.5 * 0.5)) * ((0.5 - std::pow(0.5, 1.5)) * 2.0);
    CHECK(tsallis_entropy(std::vector<double>{0.5, 0.5}, 1.5) == Catch::Approx(direct).epsilon(1e-14));
    CHECK(direct == Catch::Approx(0.39052).margin(5e-6));

    CHECK(tsallis_entropy(std::vector<double>{0.5, 0.5}, 1.0) == Catch::Approx(std::log(2.0)));

    std::mt19937_64 rng(43);
    std::uniform_real_distribution<double> ua(1.0, 3.0);
    for (int trial = 0; trial < 500; ++trial) {
        auto z = random_logits(rng, 1 + rng() % 20);
        auto p = trial % 2 ? entmax15(z).probs : softmax(z);
        const double alpha = trial % 3 == 0 ? 1.0 : ua(rng);
        CHECK(tsallis_entropy(p, alpha) >= -1e-15);
    }
}

TEST_CASE("tsallis entropy gradient matches finite differences", "[entmax][grad]") {
    std::mt19937_64 rng(47);
    for (double alpha : {1.0, 1.5, 2.0}) {
        auto p = Value::parameter(random_array({3, 5}, rng, 0.05, 0.5));
        auto w = Value::constant(random_array({3}, rng));
        auto res = check_gradients({p}, [&] { return ops::sum(ops::mul(ops::tsallis_entropy(p, alpha), w)); });
        INFO(alpha << " " << res.worst);
        CHECK(res.max_rel_error < 1e-6);
    }
}

TEST_CASE("entropy of entmax15 output is differentiable end to end", "[entmax][grad]") {
    std::mt19937_64 rng(53);
    auto z = Value::parameter(Array::vector({1.3, 0.2, -0.4, 0.9}));
    REQUIRE(support_margin({1.3, 0.2, -0.4, 0.9}) > 1e-3);
    auto res = check_gradients({z}, [&] { return ops::tsallis_entropy(ops::entmax15(z), 1.5); }, 1e-6);
    INFO(res.worst);
    CHECK(res.max_rel_error < 1e-4);
}
