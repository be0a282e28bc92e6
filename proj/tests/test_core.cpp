#include <catch2/catch_amalgamated.hpp>

#include <memory>

#include "rltf/core.hpp"

using namespace rltf;

namespace {

TaskInstancePtr make_instance() {
    auto inst = std::make_shared<TaskInstance>();
    inst->task_id = 7;
    auto task = std::make_shared<BitVectorTask>();
    task->target = {1, 0, 1};
    inst->bitvector = task;
    return inst;
}

Response resp(std::initializer_list<std::uint8_t> toks) {
    Response y;
    y.tokens = toks;
    return y;
}

}  // namespace

TEST_CASE("advance_prompt appends in order and leaves the input untouched") {
    PromptState x0 = initial_prompt(make_instance());
    REQUIRE(x0.turn_index() == 0);

    Critique c{2, std::nullopt};
    PromptState x1 = advance_prompt(x0, resp({0, 0, 1}), c);
    REQUIRE(x1.turn_index() == 1);
    REQUIRE(x0.turn_index() == 0);  // input unchanged
    REQUIRE(x1.history[0].first.tokens == std::vector<std::uint8_t>{0, 0, 1});

    PromptState x2 = advance_prompt(x1, resp({1, 1, 1}), Critique{1, 1});
    REQUIRE(x2.turn_index() == 2);
    REQUIRE(x2.history[0].first.tokens == std::vector<std::uint8_t>{0, 0, 1});
    REQUIRE(x2.history[1].first.tokens == std::vector<std::uint8_t>{1, 1, 1});

    // the initial task is shared by reference, never copied
    REQUIRE(x2.initial.get() == x0.initial.get());
}

TEST_CASE("multi_turn_return sums realized turns") {
    Trajectory traj;
    TurnRecord t0, t1;
    t0.reward = 0.0;
    t1.reward = 1.0;
    traj.turns = {t0, t1};
    REQUIRE(multi_turn_return(traj, 1.0) == 1.0);

    Trajectory coarse;
    TurnRecord a, b;
    a.reward = 0.5;
    b.reward = 1.0;
    coarse.turns = {a, b};
    // hand evaluation: 0.5 + 0.9 * 1.0
    REQUIRE(multi_turn_return(coarse, 0.9) == Catch::Approx(1.4).epsilon(1e-15));

    Trajectory early;
    TurnRecord only;
    only.reward = 1.0;
    early.turns = {only};
    early.terminated_early = true;
    REQUIRE(multi_turn_return(early, 0.5) == 1.0);

    REQUIRE_THROWS_AS(multi_turn_return(traj, 1.5), std::invalid_argument);
}

TEST_CASE("neumaier sum recovers cancellation") {
    NeumaierSum s;
    s.add(1.0);
    s.add(1e100);
    s.add(1.0);
    s.add(-1e100);
    REQUIRE(s.value() == 2.0);
}
