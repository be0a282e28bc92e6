#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <memory>
#include <vector>

#include "rltf/envs.hpp"
#include "rltf/estimators.hpp"
#include "rltf/rollout.hpp"
#include "rltf/rng.hpp"

using namespace rltf;

namespace {

EnvSpec bitvector_spec(int L) {
    EnvSpec s;
    s.kind = EnvKind::BitVectorGuess;
    s.response_length = L;
    s.alphabet_size = 2;
    s.critique_mode = CritiqueMode::Localizing;
    s.instance_seed = 7;
    return s;
}

Response resp_idx(const Environment& env, std::int64_t i) {
    Response y;
    y.tokens = env.tokens_of_index(i);
    y.index = i;
    return y;
}

// group with prescribed rewards; second turns advance on a real critique so
// prompts stay well-formed
RolloutGroup fake_group(const Environment& env, const TaskInstance& inst,
                        const std::vector<double>& r0, const std::vector<double>& r1,
                        bool second_prompt_equals_first = false) {
    RolloutGroup g;
    g.instance = std::make_shared<TaskInstance>(inst);
    RngStream rng(99);
    for (std::size_t i = 0; i < r0.size(); ++i) {
        Trajectory traj;
        PromptState x0 = initial_prompt(g.instance);
        TurnRecord t0;
        t0.prompt = x0;
        t0.response = resp_idx(env, std::int64_t(i) % env.response_space_size());
        t0.reward = r0[i];
        Critique c = env.feedback(x0, t0.response, rng);
        t0.critique = c;
        TurnRecord t1;
        t1.prompt = second_prompt_equals_first ? x0 : advance_prompt(x0, t0.response, c);
        t1.response = resp_idx(env, std::int64_t(i + 1) % env.response_space_size());
        t1.reward = r1[i];
        traj.turns = {t0, t1};
        g.trajectories.push_back(std::move(traj));
    }
    return g;
}

}  // namespace

TEST_CASE("advantage variants") {
    Environment env(bitvector_spec(2));
    TaskInstance inst = env.instance_at(0);

    SECTION("constant groups collapse to zero") {
        RolloutGroup g = fake_group(env, inst, {0, 0, 0, 0}, {1, 1, 1, 1});
        for (double a : advantages(AdvKind::SecondTurnMean, g)) REQUIRE(a == 0.0);
    }
    SECTION("first-turn baseline with zero first-turn rewards") {
        RolloutGroup g = fake_group(env, inst, {0, 0, 0, 0}, {1, 1, 0, 1});
        auto a = advantages(AdvKind::FirstTurnMean, g);
        REQUIRE(a == std::vector<double>{1, 1, 0, 1});
    }
    SECTION("second-turn mean centers in-sample") {
        RolloutGroup g = fake_group(env, inst, {0, 0, 0, 0}, {1, 0, 1, 1});
        auto a = advantages(AdvKind::SecondTurnMean, g);
        REQUIRE(a[0] == Catch::Approx(0.25));
        REQUIRE(a[1] == Catch::Approx(-0.75));
        REQUIRE(a[2] == Catch::Approx(0.25));
        REQUIRE(a[3] == Catch::Approx(0.25));
        double sum = a[0] + a[1] + a[2] + a[3];
        REQUIRE(std::abs(sum) < 1e-15);
    }
    SECTION("leave-one-out and improvement variants") {
        RolloutGroup g = fake_group(env, inst, {1, 0, 0, 1}, {1, 0, 1, 1});
        auto loo = advantages(AdvKind::SecondTurnLOO, g);
        REQUIRE(loo[0] == Catch::Approx(1.0 - 2.0 / 3.0));
        REQUIRE(loo[1] == Catch::Approx(0.0 - 1.0));
        auto imp = advantages(AdvKind::TrajectoryImprovement, g);
        REQUIRE(imp == std::vector<double>{0, 0, 1, 0});
        auto raw = advantages(AdvKind::RawReward, g);
        REQUIRE(raw == std::vector<double>{1, 0, 1, 1});
    }
    SECTION("early-terminated members reuse the first turn") {
        RolloutGroup g = fake_group(env, inst, {1, 0}, {1, 1});
        Trajectory shortened;
        shortened.turns = {g.trajectories[0].turns[0]};
        shortened.terminated_early = true;
        g.trajectories[0] = shortened;
        auto a = advantages(AdvKind::TrajectoryImprovement, g);
        REQUIRE(a[0] == 0.0);  // r1 := r0
    }
}

TEST_CASE("weighted terms") {
    WeightingSpec full{WeightingSpec::Kind::FullIS};
    WeightingSpec cispo{WeightingSpec::Kind::CispoClip, 0.2};
    WeightingSpec ppo{WeightingSpec::Kind::PpoClip, 0.2};
    WeightingSpec nois{WeightingSpec::Kind::NoIS};
    WeightingSpec sft{WeightingSpec::Kind::SftIndicator};

    // on-policy identity: W = 1 never clips
    for (const auto& spec : {full, cispo, ppo, nois, sft}) {
        auto t = weighted_term(spec, 1.0, 0.7);
        REQUIRE(t.coefficient == Catch::Approx(0.7));
        REQUIRE_FALSE(t.clipped);
    }
    REQUIRE_FALSE(weighted_term(ppo, 1.0, 0.0).clipped);

    auto c = weighted_term(cispo, 3.0, 1.0);  // clip(3.0, 0.8, 1.2) * 1
    REQUIRE(c.coefficient == Catch::Approx(1.2));
    REQUIRE(c.clipped);

    auto p = weighted_term(ppo, 3.0, 1.0);  // upper clip zeroes the term
    REQUIRE(p.coefficient == 0.0);
    REQUIRE(p.clipped);
    auto pn = weighted_term(ppo, 0.5, -1.0);  // lower clip against negative advantage
    REQUIRE(pn.coefficient == 0.0);
    REQUIRE(pn.clipped);
    REQUIRE(weighted_term(ppo, 0.9, 1.0).coefficient == Catch::Approx(0.9));

    REQUIRE(weighted_term(sft, 2.0, 1.0).coefficient == 1.0);
    REQUIRE(weighted_term(sft, 2.0, 0.0).coefficient == 0.0);
    REQUIRE(weighted_term(nois, 5.0, -0.5).coefficient == Catch::Approx(-0.5));

    REQUIRE_THROWS_AS(weighted_term(full, 0.0, 1.0), std::invalid_argument);
    WeightingSpec bad{WeightingSpec::Kind::CispoClip, 1.5};
    REQUIRE_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("collapsed groups produce a zero distillation gradient") {
    Environment env(bitvector_spec(2));
    TaskInstance inst = env.instance_at(1);
    PolicyParams theta = PolicyParams::init(2, env, 0.4, RngStream(2));
    RolloutGroup g = fake_group(env, inst, {0, 0, 0, 0}, {1, 1, 1, 1});
    GradientEstimate est = self_distill_gradient(g, AdvKind::SecondTurnMean,
                                                 WeightingSpec{WeightingSpec::Kind::FullIS},
                                                 theta, env);
    REQUIRE(est.diag.collapsed);
    for (double v : est.grad) REQUIRE(v == 0.0);
}

TEST_CASE("sft weighting reduces to reward-weighted likelihood on second turns") {
    Environment env(bitvector_spec(2));
    TaskInstance inst = env.instance_at(2);
    PolicyParams theta = PolicyParams::init(2, env, 0.5, RngStream(3));
    auto ip = std::make_shared<TaskInstance>(inst);
    RolloutGroup g = rollout_group(theta, env, ip, 4, 2, false, RngStream(4).child(0));

    GradientEstimate est = self_distill_gradient(
        g, AdvKind::SecondTurnMean /* ignored for SFT */,
        WeightingSpec{WeightingSpec::Kind::SftIndicator}, theta, env);

    PromptState x0 = initial_prompt(ip);
    ActionDist dist0 = build_action_dist(theta, env, x0);
    std::vector<double> manual(theta.total_params(), 0.0);
    for (const Trajectory& traj : g.trajectories) {
        double r = traj.turns[1].reward;
        if (r > 0.0)
            accumulate_policy_score(theta, dist0, *traj.turns[1].response.index, r / g.size(),
                                    manual);
    }
    for (int k = 0; k < theta.total_params(); ++k)
        REQUIRE(est.grad[k] == Catch::Approx(manual[k]).margin(1e-12));
}

TEST_CASE("exact single-turn gradient: degenerate rewards and finite differences") {
    SECTION("constant rewards annihilate the gradient") {
        EnvSpec spec;
        spec.kind = EnvKind::SyntheticCritiqueBandit;
        spec.response_length = 2;
        spec.alphabet_size = 4;
        spec.epsilon0 = 0.25;
        Environment env(spec);
        TaskInstance inst = env.instance_at(0);
        PolicyParams theta = PolicyParams::init(2, env, 0.5, RngStream(5));

        auto none = std::make_shared<BanditTask>(*inst.bandit);
        none->success_ids.clear();  // R == 0 everywhere
        TaskInstance zero = inst;
        zero.bandit = none;
        for (double v : exact_single_turn_gradient(theta, env, zero)) REQUIRE(v == 0.0);

        auto all = std::make_shared<BanditTask>(*inst.bandit);
        all->success_ids.resize(env.response_space_size());
        std::iota(all->success_ids.begin(), all->success_ids.end(), 0);
        TaskInstance one = inst;
        one.bandit = all;  // R == 1 everywhere: score identity kills the sum
        for (double v : exact_single_turn_gradient(theta, env, one))
            REQUIRE(std::abs(v) < 1e-12);
    }

    SECTION("matches finite differences of the exactly computed objective") {
        Environment env(bitvector_spec(2));
        TaskInstance inst = env.instance_at(3);
        PolicyParams theta = PolicyParams::init(2, env, 0.6, RngStream(6));
        std::vector<double> grad = exact_single_turn_gradient(theta, env, inst);
        std::vector<double> flat = theta.flatten();
        const double h = 1e-5;
        double max_abs = 0.0, max_err = 0.0;
        for (int k = 0; k < theta.d + theta.p(); ++k) {
            std::vector<double> v = flat;
            v[k] += h;
            PolicyParams up = theta;
            up.unflatten(v);
            v[k] -= 2 * h;
            PolicyParams dn = theta;
            dn.unflatten(v);
            double fd = (exact_j_single(up, env, inst) - exact_j_single(dn, env, inst)) / (2 * h);
            max_err = std::max(max_err, std::abs(fd - grad[k]));
            max_abs = std::max(max_abs, std::abs(grad[k]));
        }
        REQUIRE(max_err / std::max(max_abs, 1e-8) < 1e-6);
    }
}

TEST_CASE("full-IS + first-turn baseline estimator is unbiased (MC vs enumeration)") {
    Environment env(bitvector_spec(2));
    TaskInstance inst = env.instance_at(4);
    auto ip = std::make_shared<TaskInstance>(inst);
    PolicyParams theta = PolicyParams::init(2, env, 0.5, RngStream(7));
    std::vector<double> exact = exact_single_turn_gradient(theta, env, inst);

    const int M = 20000, N = 4;
    int total = theta.total_params();
    std::vector<double> sum(total, 0.0), sum2(total, 0.0);
    RngStream groups_rng(8);
    for (int g = 0; g < M; ++g) {
        RolloutGroup group =
            rollout_group(theta, env, ip, N, 2, /*early_term=*/false, groups_rng.child(g));
        GradientEstimate est = self_distill_gradient(group, AdvKind::FirstTurnMean,
                                                     WeightingSpec{WeightingSpec::Kind::FullIS},
                                                     theta, env);
        for (int k = 0; k < total; ++k) {
            sum[k] += est.grad[k];
            sum2[k] += est.grad[k] * est.grad[k];
        }
    }
    for (int k = 0; k < total; ++k) {
        double mean = sum[k] / M;
        double var = std::max(0.0, sum2[k] / M - mean * mean);
        double se = std::sqrt(var / M);
        // absolute floor guards coordinates that are identically zero
        REQUIRE(std::abs(mean - exact[k]) < 4.0 * se + 1e-12);
    }
}

TEST_CASE("grpo gradient: centering and single-turn unbiasedness") {
    Environment env(bitvector_spec(2));
    TaskInstance inst = env.instance_at(5);
    auto ip = std::make_shared<TaskInstance>(inst);
    PolicyParams theta = PolicyParams::init(2, env, 0.5, RngStream(9));

    SECTION("equal returns contribute nothing") {
        RolloutGroup g = fake_group(env, inst, {1, 1, 1}, {0, 0, 0});
        GradientEstimate est = grpo_gradient({g}, 2, 1.0, theta, env);
        REQUIRE(est.diag.collapsed);
        for (double v : est.grad) REQUIRE(v == 0.0);
    }

    SECTION("turns=1 matches (1 - 1/N) times the exact single-turn gradient in MC mean") {
        // the in-sample group-mean baseline couples with its own member, so
        // the estimator carries the same (1 - 1/N) shrinkage as the two-turn
        // case; the direction is exact
        std::vector<double> exact = exact_single_turn_gradient(theta, env, inst);
        const int M = 20000, N = 4;
        int total = theta.total_params();
        std::vector<double> sum(total, 0.0), sum2(total, 0.0);
        RngStream rng(10);
        for (int g = 0; g < M; ++g) {
            RolloutGroup group = rollout_group(theta, env, ip, N, 1, false, rng.child(g));
            GradientEstimate est = grpo_gradient({group}, 1, 1.0, theta, env);
            for (int k = 0; k < total; ++k) {
                sum[k] += est.grad[k];
                sum2[k] += est.grad[k] * est.grad[k];
            }
        }
        double shrink = 1.0 - 1.0 / N;
        for (int k = 0; k < total; ++k) {
            double mean = sum[k] / M;
            double var = std::max(0.0, sum2[k] / M - mean * mean);
            double se = std::sqrt(var / M);
            REQUIRE(std::abs(mean - shrink * exact[k]) < 4.0 * se + 1e-12);
        }
    }
}

TEST_CASE("token-level clipping agrees with no-IS when contexts coincide") {
    Environment env(bitvector_spec(3));
    TaskInstance inst = env.instance_at(6);
    PolicyParams theta = PolicyParams::init(2, env, 0.5, RngStream(11));
    RolloutGroup g =
        fake_group(env, inst, {0, 1, 0, 0}, {1, 0, 0, 1}, /*second_prompt_equals_first=*/true);

    WeightingSpec token_cispo{WeightingSpec::Kind::CispoClip, 0.2, /*token_level=*/true};
    WeightingSpec nois{WeightingSpec::Kind::NoIS};
    GradientEstimate a = self_distill_gradient(g, AdvKind::FirstTurnMean, token_cispo, theta, env);
    GradientEstimate b = self_distill_gradient(g, AdvKind::FirstTurnMean, nois, theta, env);
    REQUIRE(a.diag.clip_fraction == 0.0);
    for (int k = 0; k < theta.total_params(); ++k)
        REQUIRE(a.grad[k] == Catch::Approx(b.grad[k]).margin(1e-9));
}

TEST_CASE("diagnostics track weights and clipping") {
    EnvSpec spec = bitvector_spec(3);
    spec.evidence_scale = 2.0;  // strong history shift so ratios leave the band
    Environment env(spec);
    TaskInstance inst = env.instance_at(7);
    auto ip = std::make_shared<TaskInstance>(inst);
    PolicyParams theta = PolicyParams::init(2, env, 0.9, RngStream(12));
    RolloutGroup group = rollout_group(theta, env, ip, 6, 2, false, RngStream(13).child(0));
    GradientEstimate est = self_distill_gradient(
        group, AdvKind::FirstTurnMean, WeightingSpec{WeightingSpec::Kind::CispoClip, 0.05}, theta,
        env);
    REQUIRE(est.diag.weight_mean > 0.0);
    REQUIRE(est.diag.weight_second_moment > 0.0);
    REQUIRE(est.diag.group_count == 1);
    REQUIRE(est.diag.clip_fraction >= 0.0);
}
