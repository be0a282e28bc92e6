#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <map>
#include <memory>
#include <vector>

#include "rltf/envs.hpp"
#include "rltf/rng.hpp"

using namespace rltf;

namespace {

Response resp(std::vector<std::uint8_t> toks) {
    Response y;
    y.tokens = std::move(toks);
    return y;
}

EnvSpec bitvector_spec(int L, CritiqueMode mode = CritiqueMode::Localizing) {
    EnvSpec s;
    s.kind = EnvKind::BitVectorGuess;
    s.response_length = L;
    s.alphabet_size = 2;
    s.critique_mode = mode;
    s.instance_seed = 11;
    return s;
}

TaskInstance bitvector_instance(const Environment& env, std::vector<std::uint8_t> target) {
    TaskInstance inst;
    inst.task_id = 0;
    inst.response_space_size = env.response_space_size();
    auto task = std::make_shared<BitVectorTask>();
    task->target = std::move(target);
    inst.bitvector = task;
    return inst;
}

// fully open 2x2 grid, start upper-left, goal lower-right
TaskInstance open_grid_instance() {
    TaskInstance inst;
    auto g = std::make_shared<GridTask>();
    g->rows = 2;
    g->cols = 2;
    g->blocked = {0, 0, 0, 0};
    g->start = 0;
    g->goal = 3;
    g->dist_to_goal = gridpath::bfs_distances(2, 2, g->blocked, g->goal);
    g->canonical_moves = {0, 2};  // down, right
    inst.grid = g;
    inst.response_space_size = 16;
    return inst;
}

EnvSpec grid_spec(int L) {
    EnvSpec s;
    s.kind = EnvKind::GridPathMicro;
    s.response_length = L;
    s.alphabet_size = 4;
    s.grid_rows = 2;
    s.grid_cols = 2;
    s.instance_seed = 3;
    return s;
}

}  // namespace

TEST_CASE("bitvector reward is exact string equality") {
    Environment env(bitvector_spec(3));
    TaskInstance inst = bitvector_instance(env, {1, 0, 1});
    REQUIRE(env.reward(inst, resp({1, 0, 1})) == 1.0);
    REQUIRE(env.reward(inst, resp({0, 0, 1})) == 0.0);
    REQUIRE_THROWS_AS(env.reward(inst, resp({1, 0})), std::invalid_argument);
}

TEST_CASE("bitvector critiques: localizing, count, correctness_only") {
    RngStream rng(1);
    {
        Environment env(bitvector_spec(3, CritiqueMode::Localizing));
        TaskInstance inst = bitvector_instance(env, {1, 0, 1});
        PromptState x = initial_prompt(std::make_shared<TaskInstance>(inst));
        Critique c = env.feedback(x, resp({0, 0, 1}), rng);
        REQUIRE(c.kind == 0);
        REQUIRE(c.payload == 0);
        REQUIRE(env.feedback(x, resp({1, 0, 1}), rng).kind == env.correct_kind());
    }
    {
        Environment env(bitvector_spec(3, CritiqueMode::Count));
        TaskInstance inst = bitvector_instance(env, {1, 1, 0});
        PromptState x = initial_prompt(std::make_shared<TaskInstance>(inst));
        // hand count: one positional match
        REQUIRE(env.feedback(x, resp({0, 0, 0}), rng).kind == 1);
        REQUIRE(env.feedback(x, resp({1, 1, 0}), rng).kind == env.correct_kind());
    }
    {
        Environment env(bitvector_spec(3, CritiqueMode::CorrectnessOnly));
        TaskInstance inst = bitvector_instance(env, {1, 0, 1});
        PromptState x = initial_prompt(std::make_shared<TaskInstance>(inst));
        REQUIRE(env.critique_alphabet_size() == 2);
        // kind equals 1{reward = 1}, exhaustively
        for (std::int64_t i = 0; i < 8; ++i) {
            Response y = resp(env.tokens_of_index(i));
            REQUIRE(env.feedback(x, y, rng).kind == (env.reward(inst, y) == 1.0 ? 1 : 0));
        }
    }
}

TEST_CASE("localizing feedback is informative: exhaustive on L=3") {
    Environment env(bitvector_spec(3, CritiqueMode::Localizing));
    for (std::int64_t t = 0; t < 8; ++t) {
        TaskInstance inst = bitvector_instance(env, env.tokens_of_index(t));
        PromptState x = initial_prompt(std::make_shared<TaskInstance>(inst));
        for (std::int64_t i = 0; i < 8; ++i) {
            Response y = resp(env.tokens_of_index(i));
            auto row = env.feedback_distribution(x, y);
            for (int kind = 0; kind < env.critique_alphabet_size(); ++kind) {
                if (row[kind] == 0.0 || kind == env.correct_kind()) continue;
                // mismatch at the named position, match strictly before it
                REQUIRE(inst.bitvector->target[kind] != y.tokens[kind]);
                for (int before = 0; before < kind; ++before)
                    REQUIRE(inst.bitvector->target[before] == y.tokens[before]);
            }
        }
    }
}

TEST_CASE("feeder noise mixes the emission row with uniform") {
    EnvSpec spec = bitvector_spec(3);
    spec.feeder_noise = 0.3;
    Environment env(spec);
    TaskInstance inst = bitvector_instance(env, {1, 0, 1});
    PromptState x = initial_prompt(std::make_shared<TaskInstance>(inst));
    auto row = env.feedback_distribution(x, resp({0, 0, 1}));
    int nc = env.critique_alphabet_size();
    double total = 0.0;
    for (int k = 0; k < nc; ++k) {
        total += row[k];
        double expect = (k == 0 ? 0.7 : 0.0) + 0.3 / nc;
        REQUIRE(row[k] == Catch::Approx(expect).margin(1e-15));
    }
    REQUIRE(total == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("enumeration is lexicographic with round-trip indices") {
    {
        Environment env(bitvector_spec(1));
        auto all = env.enumerate_responses(env.instance_at(0));
        REQUIRE(all.size() == 2);
        REQUIRE(all[0].tokens == std::vector<std::uint8_t>{0});
        REQUIRE(all[1].tokens == std::vector<std::uint8_t>{1});
    }
    {
        Environment env(bitvector_spec(2));
        auto all = env.enumerate_responses(env.instance_at(0));
        std::vector<std::vector<std::uint8_t>> expect = {{0, 0}, {0, 1}, {1, 0}, {1, 1}};
        for (int i = 0; i < 4; ++i) {
            REQUIRE(all[i].tokens == expect[i]);
            REQUIRE(all[i].index == i);
        }
    }
    {
        Environment env(bitvector_spec(3));
        auto all = env.enumerate_responses(env.instance_at(0));
        REQUIRE(all.size() == 8);
        // binary encoding oracle
        REQUIRE(env.token_index(resp({1, 0, 1})) == 5);
    }
    // the enumerable cap is enforced at construction
    REQUIRE_THROWS_AS(Environment(bitvector_spec(30)), std::invalid_argument);
}

TEST_CASE("instance sampling is deterministic and uniform") {
    Environment env(bitvector_spec(3));
    auto a = env.sample_instances(5);
    auto b = env.sample_instances(5);
    for (int i = 0; i < 5; ++i) REQUIRE(a[i].bitvector->target == b[i].bitvector->target);

    std::map<std::int64_t, int> counts;
    const int n = 4000;
    for (const TaskInstance& inst : env.sample_instances(n)) {
        Response y;
        y.tokens = inst.bitvector->target;
        counts[env.token_index(y)]++;
    }
    double se = std::sqrt(0.125 * 0.875 / n);
    for (auto& [idx, c] : counts)
        REQUIRE(std::abs(double(c) / n - 0.125) < 3.0 * se + 1e-12);
}

TEST_CASE("grid reward matches a brute-force shortest-path oracle") {
    Environment env(grid_spec(2));
    TaskInstance inst = open_grid_instance();
    // oracle: simulate every move sequence of length 2 over the open grid
    auto simulate = [&](const std::vector<std::uint8_t>& moves) {
        int r = 0, c = 0;
        for (auto m : moves) {
            r += gridpath::kDr[m];
            c += gridpath::kDc[m];
            if (r < 0 || r > 1 || c < 0 || c > 1) return false;
        }
        return r == 1 && c == 1;
    };
    int winners = 0;
    for (std::int64_t i = 0; i < env.response_space_size(); ++i) {
        Response y = resp(env.tokens_of_index(i));
        bool expect = simulate(y.tokens);
        REQUIRE(env.reward(inst, y) == (expect ? 1.0 : 0.0));
        winners += expect;
    }
    REQUIRE(winners == 2);  // right-down and down-right
    // "right, down" is rewarded
    REQUIRE(env.reward(inst, resp({2, 0})) == 1.0);
}

TEST_CASE("grid critiques localize the first move that fails to approach the goal") {
    Environment env(grid_spec(2));
    TaskInstance inst = open_grid_instance();
    PromptState x = initial_prompt(std::make_shared<TaskInstance>(inst));
    RngStream rng(1);
    REQUIRE(env.feedback(x, resp({3, 0}), rng).kind == 0);  // up leaves the grid
    REQUIRE(env.feedback(x, resp({2, 1}), rng).kind == 1);  // right then back-left
    REQUIRE(env.feedback(x, resp({2, 0}), rng).kind == env.correct_kind());
}

TEST_CASE("sampled grid instances admit a length-L shortest path") {
    EnvSpec spec = grid_spec(3);
    spec.grid_rows = 3;
    spec.grid_cols = 3;
    Environment env(spec);
    for (const TaskInstance& inst : env.sample_instances(20)) {
        REQUIRE(inst.grid->dist_to_goal[inst.grid->start] == 3);
        REQUIRE(inst.grid->canonical_moves.size() == 3);
        Response y = resp(std::vector<std::uint8_t>(inst.grid->canonical_moves));
        REQUIRE(env.reward(inst, y) == 1.0);
    }
}

TEST_CASE("bandit success measure matches epsilon0 under uniform draws") {
    EnvSpec spec;
    spec.kind = EnvKind::SyntheticCritiqueBandit;
    spec.response_length = 3;
    spec.alphabet_size = 10;
    spec.epsilon0 = 0.04;
    spec.instance_seed = 21;
    Environment env(spec);
    TaskInstance inst = env.instance_at(0);
    REQUIRE(inst.bandit->success_ids.size() == 40);  // round(0.04 * 1000)

    RngStream rng(2);
    const int n = 100000;
    int hits = 0;
    for (int i = 0; i < n; ++i) {
        Response y = resp(env.tokens_of_index(std::int64_t(rng.next_below(1000))));
        hits += env.reward(inst, y) == 1.0;
    }
    double se = std::sqrt(0.04 * 0.96 / n);
    REQUIRE(std::abs(double(hits) / n - 0.04) < 3.0 * se);
}

TEST_CASE("bandit emission rows are validated") {
    EnvSpec spec;
    spec.kind = EnvKind::SyntheticCritiqueBandit;
    spec.response_length = 2;
    spec.alphabet_size = 4;
    Environment env(spec);
    FeederSpec bad;
    bad.critique_alphabet = 2;
    bad.emission = {{0.5, 0.4}};  // does not sum to 1
    REQUIRE_THROWS_AS(env.set_feeder(bad), std::invalid_argument);

    FeederSpec ok;
    ok.critique_alphabet = 2;
    ok.emission = {{0.5, 0.5}, {0.1, 0.9}, {1.0, 0.0}, {0.0, 1.0}};
    REQUIRE_NOTHROW(env.set_feeder(ok));
}

TEST_CASE("history evidence modulates bitvector features") {
    EnvSpec spec = bitvector_spec(3);
    spec.evidence_scale = 0.5;
    Environment env(spec);
    TaskInstance inst = bitvector_instance(env, {1, 0, 1});
    PromptState x0 = initial_prompt(std::make_shared<TaskInstance>(inst));
    int m = env.feature_dim();
    REQUIRE(m == 3 * 2 + 1);

    std::vector<double> phi(m);
    env.joint_features(x0, resp({1, 0, 1}), phi.data());
    // target symbols agree with the hint channel: +1 at each chosen one-hot
    REQUIRE(phi[0 * 2 + 1] == 1.0);
    REQUIRE(phi[1 * 2 + 0] == 1.0);
    REQUIRE(phi[2 * 2 + 1] == 1.0);
    REQUIRE(phi[m - 1] == 1.0);

    // critique at position 0 marks the previous symbol 0 as known-bad there
    Critique c{0, 0};
    PromptState x1 = advance_prompt(x0, resp({0, 0, 1}), c);
    env.joint_features(x1, resp({0, 0, 1}), phi.data());
    REQUIRE(phi[0 * 2 + 0] == Catch::Approx(-1.0 - 0.5));  // hint -1, evidence -nu
}

TEST_CASE("position features sum to the joint features") {
    Environment env(bitvector_spec(3));
    TaskInstance inst = bitvector_instance(env, {1, 1, 0});
    PromptState x = initial_prompt(std::make_shared<TaskInstance>(inst));
    Response y = resp({0, 1, 0});
    int m = env.feature_dim();
    std::vector<double> joint(m), acc(m, 0.0), pos(m);
    env.joint_features(x, y, joint.data());
    for (int t = 0; t < 3; ++t) {
        env.position_features(x, t, y.tokens[t], pos.data());
        for (int j = 0; j < m; ++j) acc[j] += pos[j];
    }
    for (int j = 0; j < m; ++j) REQUIRE(acc[j] == Catch::Approx(joint[j]).margin(1e-12));
}
