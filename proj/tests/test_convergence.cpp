#include <catch2/catch_amalgamated.hpp>

#include <cstdio>

#include "sadm/trainer.hpp"

using namespace sadm;

// Long run (about half an hour on one core); registered separately.
TEST_CASE("smoke convergence on n = 10", "[trainer][slow]") {
    TrainConfig cfg;
    cfg.sizes = {10};
    cfg.batch_size = 128;
    cfg.batches_per_epoch = 100;
    cfg.epochs = 20;
    cfg.seed = 10;
    Trainer trainer(cfg);
    auto untrained = trainer.params().clone();
    trainer.train("", [](const EpochStats& e) {
        std::fprintf(stderr, "epoch %zu mean cost %.4f (%.1f s)\n", e.epoch, e.mean_cost, e.wall_seconds);
    });
    auto set = generate_set(10, 500, 1010);
    const double before = mean_cost(set, greedy_tours(untrained, set));
    const double after = mean_cost(set, greedy_tours(trainer.params(), set));
    INFO("untrained " << before << ", trained " << after);
    CHECK(after <= 0.8 * before);
}
