// Episode and group rollout drivers for the multi-turn interaction protocol.
//
// Stream layout within one trajectory stream: child(4h + 0) draws the
// response at turn h, child(4h + 1) the feeder critique; offsets 2 and 3 are
// reserved for the self-critique variants.

#pragma once

#include <memory>
#include <stdexcept>

#include "rltf/core.hpp"
#include "rltf/envs.hpp"
#include "rltf/policy.hpp"
#include "rltf/rng.hpp"

namespace rltf {

// One H-turn episode.  Turn h samples y_h from pi(.|x_h), evaluates the
// reward on the original instance, samples a critique, and advances the
// prompt.  With early_term the episode stops as soon as r_h = 1, leaving the
// final turn without a critique.
inline Trajectory run_episode(const PolicyParams& theta, const Environment& env,
                              TaskInstancePtr x0, int H, bool early_term,
                              RngStream traj_stream) {
    if (H < 1) throw std::invalid_argument("run_episode: H >= 1 required");
    theta.check_compatible(env);
    Trajectory traj;
    PromptState x = initial_prompt(std::move(x0));
    for (int h = 0; h < H; ++h) {
        RngStream resp_rng = traj_stream.child(4 * h + 0);
        RngStream crit_rng = traj_stream.child(4 * h + 1);
        ActionDist dist = build_action_dist(theta, env, x);
        std::int64_t yi = dist.sample_index(resp_rng);
        Response y;
        y.tokens = env.tokens_of_index(yi);
        y.index = yi;
        double r = env.reward(*x.initial, y);

        TurnRecord rec;
        rec.prompt = x;
        rec.response = y;
        rec.reward = r;
        if (early_term && r == 1.0) {
            traj.turns.push_back(std::move(rec));
            traj.terminated_early = true;
            break;
        }
        Critique c = env.feedback(x, y, crit_rng);
        rec.critique = c;
        traj.turns.push_back(rec);
        if (h + 1 < H) x = advance_prompt(x, y, c);
    }
    return traj;
}

// N independent episodes for the same instance, each on a disjoint
// sub-stream.
inline RolloutGroup rollout_group(const PolicyParams& theta, const Environment& env,
                                  TaskInstancePtr x0, int N, int H, bool early_term,
                                  RngStream group_stream) {
    if (N < 2) throw std::invalid_argument("rollout_group: N >= 2 required (baselines)");
    RolloutGroup group;
    group.instance = x0;
    group.trajectories.reserve(N);
    for (int i = 0; i < N; ++i)
        group.trajectories.push_back(
            run_episode(theta, env, x0, H, early_term, group_stream.child(i)));
    return group;
}

}  // namespace rltf
