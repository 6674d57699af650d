#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <limits>
#include <random>

#include "sadm/sparse_act.hpp"
#include "sadm/tensor/ops.hpp"
#include "sadm/tensor/optim.hpp"
#include "support/fd_oracle.hpp"

using namespace sadm;
using sadm::testing::check_gradients;
using sadm::testing::random_array;

namespace {

// Weighted sum gives every output entry a distinct upstream gradient.
Value weighted_sum(const Value& y, const Array& w) { return ops::sum(ops::mul(y, Value::constant(w))); }

}  // namespace

TEST_CASE("matmul values", "[tensor]") {
    auto id = Value::constant(Array::matrix({{1, 0}, {0, 1}}));
    auto m = Value::constant(Array::matrix({{1.5, -2}, {3, 4.25}}));
    auto r = ops::matmul(id, m);
    CHECK(r.value().storage() == m.value().storage());

    auto a = Value::constant(Array::matrix({{1, 2}}));
    auto b = Value::constant(Array::matrix({{3}, {4}}));
    CHECK(ops::matmul(a, b).item() == 11.0);
}

TEST_CASE("matmul shape error names both shapes", "[tensor]") {
    auto a = Value::constant(Array(Shape{2, 3}));
    auto b = Value::constant(Array(Shape{2, 3}));
    try {
        ops::matmul(a, b);
        FAIL("expected DimensionError");
    } catch (const DimensionError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("[2x3]") != std::string::npos);
    }
}

TEST_CASE("matmul gradient matches finite differences", "[tensor][grad]") {
    std::mt19937_64 rng(3);
    auto a = Value::parameter(random_array({3, 4}, rng));
    auto b = Value::parameter(random_array({4, 2}, rng));
    const auto w = random_array({3, 2}, rng);
    auto res = check_gradients({a, b}, [&] { return weighted_sum(ops::matmul(a, b), w); });
    INFO(res.worst);
    CHECK(res.max_rel_error < 1e-6);
}

TEST_CASE("elementwise values", "[tensor]") {
    auto x = Value::constant(Array::vector({-1, 0, 2}));
    CHECK(ops::relu(x).value().to_vector() == std::vector<double>{0, 0, 2});
    CHECK(ops::tanh(Value::constant(Array::scalar(0.0))).item() == 0.0);
    auto s = ops::scale(x, 2.0);
    CHECK(s.value().to_vector() == std::vector<double>{-2, 0, 4});
    auto sc = ops::add(x, Value::constant(Array::scalar(1.0)));
    CHECK(sc.value().to_vector() == std::vector<double>{0, 1, 3});
    CHECK_THROWS_AS(ops::add(x, Value::constant(Array::vector({1, 2}))), DimensionError);
}

TEST_CASE("mul gradient matches finite differences", "[tensor][grad]") {
    std::mt19937_64 rng(11);
    auto a = Value::parameter(random_array({2, 3}, rng));
    auto b = Value::parameter(random_array({2, 3}, rng));
    const auto w = random_array({2, 3}, rng);
    auto res = check_gradients({a, b}, [&] { return weighted_sum(ops::mul(a, b), w); });
    CHECK(res.max_rel_error < 1e-6);
}

TEST_CASE("softmax values and masking", "[tensor]") {
    auto p = ops::softmax(Value::constant(Array::vector({0, 0, 0})));
    for (double v : p.value().values()) CHECK(v == Catch::Approx(1.0 / 3.0).epsilon(1e-15));

    const double inf = std::numeric_limits<double>::infinity();
    auto q = ops::softmax(Value::constant(Array::vector({-inf, 0})));
    CHECK(q.value()[0] == 0.0);
    CHECK(q.value()[1] == 1.0);

    auto s = ops::softmax(Value::constant(Array::vector({kMaskSentinel, 1.0, kMaskSentinel})));
    CHECK(s.value()[0] == 0.0);
    CHECK(s.value()[2] == 0.0);

    CHECK_THROWS_AS(ops::softmax(Value::constant(Array::vector({-inf, kMaskSentinel}))), InfeasibleError);
}

TEST_CASE("softmax gradient matches finite differences", "[tensor][grad]") {
    std::mt19937_64 rng(5);
    auto z = Value::parameter(random_array({5}, rng, -3, 3));
    const auto w = random_array({5}, rng);
    auto res = check_gradients({z}, [&] { return weighted_sum(ops::softmax(z), w); });
    CHECK(res.max_rel_error < 1e-6);
}

TEST_CASE("softmax rows sum to one and are nonnegative", "[tensor][property]") {
    std::mt19937_64 rng(17);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t rows = 1 + rng() % 4, cols = 1 + rng() % 30;
        auto z = random_array({rows, cols}, rng, -30, 30);
        auto p = ops::softmax(Value::constant(z)).value();
        for (std::size_t r = 0; r < rows; ++r) {
            double total = 0.0;
            for (std::size_t c = 0; c < cols; ++c) {
                CHECK(p.at(r, c) >= 0.0);
                total += p.at(r, c);
            }
            CHECK(std::abs(total - 1.0) <= 1e-12);
        }
    }
}

TEST_CASE("batch_norm forward", "[tensor]") {
    ops::RunningStats stats(2);
    auto gamma = Value::constant(Array::vector({1, 1}));
    auto beta = Value::constant(Array::vector({0, 0}));

    SECTION("constant column normalizes to beta") {
        auto x = Value::constant(Array::matrix({{3, 1}, {3, 2}, {3, 6}}));
        auto g2 = Value::constant(Array::vector({2, 1}));
        auto b2 = Value::constant(Array::vector({0.5, 0}));
        auto y = ops::batch_norm(x, g2, b2, stats, ops::NormMode::train);
        for (std::size_t r = 0; r < 3; ++r) CHECK(y.value().at(r, 0) == Catch::Approx(0.5).margin(1e-12));
    }
    SECTION("standardized input is left unchanged") {
        // each column has mean 0 and (biased) variance 1
        auto x = Value::constant(Array::matrix({{1, -1.4142135623730951}, {-1, 0}, {1, 1.4142135623730951}, {-1, 0}}));
        auto y = ops::batch_norm(x, gamma, beta, stats, ops::NormMode::train);
        for (std::size_t i = 0; i < 8; ++i) CHECK(std::abs(y.value()[i] - x.value()[i]) < 1e-4);
    }
    SECTION("running statistics update with momentum 0.1") {
        auto x = Value::constant(Array::matrix({{0, 2}, {2, 4}}));
        ops::batch_norm(x, gamma, beta, stats, ops::NormMode::train);
        CHECK(stats.mean[0] == Catch::Approx(0.1));
        CHECK(stats.mean[1] == Catch::Approx(0.3));
        // unbiased batch variance is 2 in both columns
        CHECK(stats.var[0] == Catch::Approx(0.9 + 0.2));
        auto y = ops::batch_norm(x, gamma, beta, stats, ops::NormMode::eval);
        CHECK(y.value().at(0, 0) == Catch::Approx((0 - 0.1) / std::sqrt(1.1 + 1e-5)));
    }
    SECTION("degenerate batch in train mode") {
        auto x = Value::constant(Array::matrix({{1, 2}}));
        CHECK_THROWS_AS(ops::batch_norm(x, gamma, beta, stats, ops::NormMode::train), ContractError);
        CHECK_NOTHROW(ops::batch_norm(x, gamma, beta, stats, ops::NormMode::eval));
    }
}

TEST_CASE("batch_norm gradient matches finite differences", "[tensor][grad]") {
    std::mt19937_64 rng(23);
    auto x = Value::parameter(random_array({5, 3}, rng, -2, 2));
    auto g = Value::parameter(random_array({3}, rng, 0.5, 1.5));
    auto b = Value::parameter(random_array({3}, rng));
    const auto w = random_array({5, 3}, rng);
    for (auto mode : {ops::NormMode::train, ops::NormMode::eval}) {
        ops::RunningStats stats(3);
        stats.mean = random_array({3}, rng);
        auto res = check_gradients({x, g, b}, [&] {
            ops::RunningStats scratch = stats;  // keep eval statistics fixed across evaluations
            return weighted_sum(ops::batch_norm(x, g, b, scratch, mode), w);
        });
        INFO(res.worst);
        CHECK(res.max_rel_error < 1e-4);
    }
}

TEST_CASE("backward basics", "[tensor]") {
    auto w = Value::parameter(Array::matrix({{1, 2, 3}, {4, 5, 6}}));
    backward(ops::sum(w));
    for (double g : w.grad().values()) CHECK(g == 1.0);

    auto v = Value::parameter(Array::vector({1, 2}));
    backward(ops::sum(ops::mul(v, v)));
    CHECK(v.grad()[0] == 2.0);
    CHECK(v.grad()[1] == 4.0);

    CHECK_THROWS_AS(backward(ops::mul(v, v)), ContractError);
}

TEST_CASE("shared subexpressions accumulate like the expanded graph", "[tensor][property]") {
    std::mt19937_64 rng(31);
    for (int trial = 0; trial < 20; ++trial) {
        const auto x0 = random_array({3, 3}, rng);
        const auto w0 = random_array({3, 3}, rng);
        // shared: t = tanh(x w); loss = sum(t * t + t)
        auto x = Value::parameter(x0);
        auto w = Value::parameter(w0);
        auto t = ops::tanh(ops::matmul(x, w));
        backward(ops::sum(ops::add(ops::mul(t, t), t)));
        // expanded: three independent copies of t
        auto x2 = Value::parameter(x0);
        auto w2 = Value::parameter(w0);
        auto t1 = ops::tanh(ops::matmul(x2, w2));
        auto t2 = ops::tanh(ops::matmul(x2, w2));
        auto t3 = ops::tanh(ops::matmul(x2, w2));
        backward(ops::sum(ops::add(ops::mul(t1, t2), t3)));
        for (std::size_t i = 0; i < 9; ++i) {
            CHECK(x.grad()[i] == Catch::Approx(x2.grad()[i]).epsilon(1e-12).margin(1e-14));
            CHECK(w.grad()[i] == Catch::Approx(w2.grad()[i]).epsilon(1e-12).margin(1e-14));
        }
    }
}

TEST_CASE("every differentiable op agrees with finite differences over 20 seeds", "[tensor][grad][property]") {
    for (unsigned seed = 0; seed < 20; ++seed) {
        std::mt19937_64 rng(1000 + seed);
        auto a = Value::parameter(random_array({3, 4}, rng));
        auto b = Value::parameter(random_array({3, 4}, rng));
        auto m = Value::parameter(random_array({4, 2}, rng));
        auto bias = Value::parameter(random_array({2}, rng));
        auto pos = Value::parameter(random_array({3, 4}, rng, 0.5, 2.0));
        const auto w34 = random_array({3, 4}, rng);
        const auto w32 = random_array({3, 2}, rng);
        const auto w2x4 = random_array({2, 4}, rng);
        const auto w38 = random_array({3, 8}, rng);
        const auto w6x4 = random_array({6, 4}, rng);

        std::vector<std::pair<const char*, std::function<Value()>>> cases{
            {"add", [&] { return weighted_sum(ops::add(a, b), w34); }},
            {"sub", [&] { return weighted_sum(ops::sub(a, b), w34); }},
            {"mul", [&] { return weighted_sum(ops::mul(a, b), w34); }},
            {"scale", [&] { return weighted_sum(ops::scale(a, -1.7), w34); }},
            {"relu", [&] { return weighted_sum(ops::relu(a), w34); }},
            {"tanh", [&] { return weighted_sum(ops::tanh(a), w34); }},
            {"log", [&] { return weighted_sum(ops::log(pos), w34); }},
            {"linear", [&] { return weighted_sum(ops::linear(a, m, bias), w32); }},
            {"softmax", [&] { return weighted_sum(ops::softmax(a), w34); }},
            {"entmax15", [&] { return weighted_sum(ops::entmax15(ops::scale(a, 3.0)), w34); }},
            {"tsallis", [&] { return ops::sum(ops::tsallis_entropy(ops::softmax(a), 1.5)); }},
            {"shannon", [&] { return ops::sum(ops::tsallis_entropy(ops::softmax(a), 1.0)); }},
            {"concat_cols", [&] { return weighted_sum(ops::concat_cols({a, b}), w38); }},
            {"concat_rows", [&] { return weighted_sum(ops::concat_rows({a, b}), w6x4); }},
            {"gather_rows", [&] { return weighted_sum(ops::gather_rows(a, {2, 0}), w2x4); }},
            {"segment_mean", [&] {
                 Segments s;
                 s.push(1);
                 s.push(2);
                 return weighted_sum(ops::segment_mean(a, s), w2x4);
             }},
            {"mean", [&] { return ops::mean(ops::mul(a, a)); }},
        };
        for (auto& [name, fn] : cases) {
            auto res = check_gradients({a, b, m, bias, pos}, fn);
            INFO(name << " seed " << seed << " " << res.worst);
            CHECK(res.max_rel_error < 1e-4);
        }
    }
}

TEST_CASE("grad mode can be disabled", "[tensor]") {
    auto w = Value::parameter(Array::vector({1, 2}));
    NoGradGuard guard;
    auto y = ops::sum(ops::mul(w, w));
    CHECK_FALSE(y.requires_grad());
    CHECK(y.node()->parents.empty());
}

TEST_CASE("adam moves parameters against the gradient", "[tensor]") {
    auto w = Value::parameter(Array::vector({1.0, -1.0}));
    Adam opt({w}, AdamConfig{0.1});
    for (int i = 0; i < 100; ++i) {
        opt.zero_grad();
        backward(ops::sum(ops::mul(w, w)));
        opt.step();
    }
    CHECK(std::abs(w.value()[0]) < 0.1);
    CHECK(std::abs(w.value()[1]) < 0.1);
}
