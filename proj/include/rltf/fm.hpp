// Feedback modeling: the critique-prediction loss, the joint objective with
// group-baseline RL, test-time self-feedback rollouts, and self-critique RL.

#pragma once

#include <memory>
#include <stdexcept>
#include <tuple>
#include <vector>

#include "rltf/core.hpp"
#include "rltf/envs.hpp"
#include "rltf/estimators.hpp"
#include "rltf/policy.hpp"
#include "rltf/rollout.hpp"

namespace rltf {

// Tuples (x_h, y_h, c_h) pooled from interaction trajectories, all turns of
// all group members, uniform weight.
struct FmBatch {
    struct Tuple {
        PromptState prompt;
        Response response;
        Critique critique;
    };
    std::vector<Tuple> tuples;
};

inline FmBatch collect_fm_batch(const std::vector<RolloutGroup>& groups, int critique_alphabet) {
    FmBatch batch;
    for (const RolloutGroup& g : groups)
        for (const Trajectory& traj : g.trajectories)
            for (const TurnRecord& turn : traj.turns) {
                if (!turn.critique) continue;  // terminal early-stop turns carry no critique
                if (turn.critique->kind < 0 || turn.critique->kind >= critique_alphabet)
                    throw std::invalid_argument("collect_fm_batch: critique kind outside alphabet");
                batch.tuples.push_back({turn.prompt, turn.response, *turn.critique});
            }
    return batch;
}

struct FmLossResult {
    double loss = 0.0;
    std::vector<double> grad;  // full layout [b | w | psi]; b block is zero
};

// Mean cross-entropy of the critique head over the batch; responses are
// constants, so the gradient touches only (w, psi).
inline FmLossResult fm_loss(const PolicyParams& theta, const Environment& env,
                            const FmBatch& batch) {
    if (batch.tuples.empty()) throw std::invalid_argument("fm_loss: empty batch");
    FmLossResult out;
    out.grad.assign(theta.total_params(), 0.0);
    double inv = 1.0 / double(batch.tuples.size());
    NeumaierSum loss;
    for (const auto& t : batch.tuples) {
        CritiqueDist cd = build_critique_dist(theta, env, t.prompt, t.response);
        loss.add(-cd.logprob[t.critique.kind]);
        // gradient of the loss: minus the log-likelihood score
        accumulate_critique_score(theta, cd, t.critique.kind, -inv, out.grad);
    }
    out.loss = loss.value() * inv;
    return out;
}

// Ascent gradient of J_MultiTurn - lambda_fm * fm_loss over 2-turn groups.
inline GradientEstimate joint_gradient(const std::vector<RolloutGroup>& groups,
                                       const PolicyParams& theta, const Environment& env,
                                       double lambda_fm, double gamma) {
    if (lambda_fm < 0.0) throw std::invalid_argument("joint_gradient: lambda_fm >= 0");
    GradientEstimate est = grpo_gradient(groups, 2, gamma, theta, env);
    if (lambda_fm > 0.0) {
        FmBatch batch = collect_fm_batch(groups, env.critique_alphabet_size());
        if (!batch.tuples.empty()) {
            FmLossResult fm = fm_loss(theta, env, batch);
            for (int k = 0; k < theta.total_params(); ++k)
                est.grad[k] -= lambda_fm * fm.grad[k];
        }
    }
    return est;
}

// ---------------------------------------------------------------------------
// Test-time self-feedback (no environment feeder involved)
// ---------------------------------------------------------------------------

// At each round, sample a response, critique it with the policy's own
// feedback head, and advance the prompt on that self-critique.  Rewards are
// recorded for evaluation only; there is no early termination because no
// reward signal is available at inference time.
inline Trajectory self_critique_rollout(const PolicyParams& theta, const Environment& env,
                                        TaskInstancePtr x0, int H, RngStream traj_stream) {
    if (H < 1) throw std::invalid_argument("self_critique_rollout: H >= 1 required");
    theta.check_compatible(env);
    Trajectory traj;
    PromptState x = initial_prompt(std::move(x0));
    for (int h = 0; h < H; ++h) {
        RngStream resp_rng = traj_stream.child(4 * h + 0);
        RngStream crit_rng = traj_stream.child(4 * h + 2);
        ActionDist dist = build_action_dist(theta, env, x);
        std::int64_t yi = dist.sample_index(resp_rng);
        Response y;
        y.tokens = env.tokens_of_index(yi);
        y.index = yi;
        TurnRecord rec;
        rec.prompt = x;
        rec.response = y;
        rec.reward = env.reward(*x.initial, y);
        Critique c = sample_critique(theta, env, x, y, crit_rng);
        rec.critique = c;
        traj.turns.push_back(rec);
        if (h + 1 < H) x = advance_prompt(x, y, c);
    }
    return traj;
}

// ---------------------------------------------------------------------------
// Self-critique RL (two second-turn branches per member)
// ---------------------------------------------------------------------------

struct DualBranchRollout {
    PromptState x0;
    Response y0;
    double r0 = 0.0;
    Critique feeder_critique;
    PromptState x1;        // feeder branch prompt
    Response y1;
    double r1 = 0.0;
    Critique self_critique;
    PromptState self_x1;   // self-critique branch prompt
    Response self_y1;
    double self_r1 = 0.0;
};

struct SelfCritiqueGroup {
    TaskInstancePtr instance;
    std::vector<DualBranchRollout> members;
};

// Early termination is disabled under this training variant, so both
// branches always realize their second turn.
inline SelfCritiqueGroup rollout_self_critique_group(const PolicyParams& theta,
                                                     const Environment& env, TaskInstancePtr x0,
                                                     int N, RngStream group_stream) {
    if (N < 2) throw std::invalid_argument("rollout_self_critique_group: N >= 2 required");
    SelfCritiqueGroup group;
    group.instance = x0;
    group.members.reserve(N);
    for (int i = 0; i < N; ++i) {
        RngStream ts = group_stream.child(i);
        DualBranchRollout m;
        m.x0 = initial_prompt(x0);
        ActionDist dist0 = build_action_dist(theta, env, m.x0);
        RngStream r0s = ts.child(0), c0s = ts.child(1), sc0s = ts.child(2);
        std::int64_t y0i = dist0.sample_index(r0s);
        m.y0.tokens = env.tokens_of_index(y0i);
        m.y0.index = y0i;
        m.r0 = env.reward(*x0, m.y0);
        m.feeder_critique = env.feedback(m.x0, m.y0, c0s);
        m.self_critique = sample_critique(theta, env, m.x0, m.y0, sc0s);

        m.x1 = advance_prompt(m.x0, m.y0, m.feeder_critique);
        m.self_x1 = advance_prompt(m.x0, m.y0, m.self_critique);
        ActionDist dist1 = build_action_dist(theta, env, m.x1);
        ActionDist dist1s = build_action_dist(theta, env, m.self_x1);
        RngStream r1s = ts.child(4), r1ss = ts.child(7);
        std::int64_t y1i = dist1.sample_index(r1s);
        std::int64_t y1si = dist1s.sample_index(r1ss);
        m.y1.tokens = env.tokens_of_index(y1i);
        m.y1.index = y1i;
        m.r1 = env.reward(*x0, m.y1);
        m.self_y1.tokens = env.tokens_of_index(y1si);
        m.self_y1.index = y1si;
        m.self_r1 = env.reward(*x0, m.self_y1);
        group.members.push_back(std::move(m));
    }
    return group;
}

// Three-term RL gradient with blended return R = r0 + (gamma/2)(r1 + r~1),
// plus the feedback-modeling term on the feeder critiques.  The self-critique
// tokens are scored with the advantage of their own branch.
inline GradientEstimate self_critique_rl_gradient(const std::vector<SelfCritiqueGroup>& groups,
                                                  const PolicyParams& theta,
                                                  const Environment& env, double gamma,
                                                  double lambda_fm) {
    if (groups.empty()) throw std::invalid_argument("self_critique_rl_gradient: no groups");
    GradientEstimate est;
    est.grad.assign(theta.total_params(), 0.0);
    est.diag.group_count = static_cast<int>(groups.size());
    bool all_zero = true;
    double inv_groups = 1.0 / double(groups.size());
    for (const SelfCritiqueGroup& group : groups) {
        int N = static_cast<int>(group.members.size());
        if (N < 2) throw std::invalid_argument("self_critique_rl_gradient: group size >= 2");
        double mean_ret = 0.0, mean_r1 = 0.0, mean_sr1 = 0.0;
        for (const DualBranchRollout& m : group.members) {
            mean_ret += (m.r0 + 0.5 * gamma * (m.r1 + m.self_r1)) / N;
            mean_r1 += m.r1 / N;
            mean_sr1 += m.self_r1 / N;
        }
        bool group_zero = true;
        for (const DualBranchRollout& m : group.members) {
            double adv0 = (m.r0 + 0.5 * gamma * (m.r1 + m.self_r1)) - mean_ret;
            double adv1 = m.r1 - mean_r1;
            double adv1s = m.self_r1 - mean_sr1;
            if (adv0 != 0.0 || adv1 != 0.0 || adv1s != 0.0) group_zero = false;
            if (adv0 != 0.0) {
                ActionDist dist0 = build_action_dist(theta, env, m.x0);
                accumulate_policy_score(theta, dist0, *m.y0.index, adv0 * inv_groups / N,
                                        est.grad);
            }
            if (adv1 != 0.0) {
                ActionDist dist1 = build_action_dist(theta, env, m.x1);
                accumulate_policy_score(theta, dist1, *m.y1.index, adv1 * inv_groups / N,
                                        est.grad);
            }
            if (adv1s != 0.0) {
                CritiqueDist cd = build_critique_dist(theta, env, m.x0, m.y0);
                accumulate_critique_score(theta, cd, m.self_critique.kind,
                                          adv1s * inv_groups / N, est.grad);
            }
            // feedback-modeling term on the feeder critique
            if (lambda_fm > 0.0) {
                CritiqueDist cd = build_critique_dist(theta, env, m.x0, m.y0);
                accumulate_critique_score(theta, cd, m.feeder_critique.kind,
                                          lambda_fm * inv_groups / N, est.grad);
            }
        }
        if (group_zero) est.diag.collapsed_groups += 1;
        else all_zero = false;
    }
    est.diag.collapsed = all_zero;
    return est;
}

}  // namespace rltf
