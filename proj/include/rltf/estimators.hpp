// Gradient estimators for self distillation and group-baseline RL:
// advantage variants, importance-weighting/clipping schemes, and their
// assembly into parameter-space gradient estimates.
//
// Sign convention: every assembler emits an ascent direction on its
// objective.  Advantages and importance weights are treated as constants
// with respect to theta.
//
// Gradient layout matches PolicyParams::flatten(): [b | w | psi].  Pure RL
// estimators leave the psi block at zero.

#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "rltf/core.hpp"
#include "rltf/envs.hpp"
#include "rltf/policy.hpp"

namespace rltf {

enum class AdvKind { SecondTurnMean, SecondTurnLOO, FirstTurnMean, TrajectoryImprovement, RawReward };

inline std::string to_string(AdvKind a) {
    switch (a) {
        case AdvKind::SecondTurnMean: return "second_turn_mean";
        case AdvKind::SecondTurnLOO: return "second_turn_loo";
        case AdvKind::FirstTurnMean: return "first_turn_mean";
        case AdvKind::TrajectoryImprovement: return "trajectory_improvement";
        case AdvKind::RawReward: return "raw_reward";
    }
    return "?";
}

struct WeightingSpec {
    enum class Kind { FullIS, CispoClip, PpoClip, NoIS, SftIndicator };
    Kind kind = Kind::NoIS;
    double epsilon = 0.2;       // clip half-width, in (0,1)
    bool token_level = false;   // apply clipping per token instead of per sequence

    void validate() const {
        bool clipped = kind == Kind::CispoClip || kind == Kind::PpoClip;
        if (clipped && (epsilon <= 0.0 || epsilon >= 1.0))
            throw std::invalid_argument("WeightingSpec: epsilon must lie in (0,1)");
    }
};

inline std::string to_string(WeightingSpec::Kind k) {
    switch (k) {
        case WeightingSpec::Kind::FullIS: return "full_is";
        case WeightingSpec::Kind::CispoClip: return "cispo_clip";
        case WeightingSpec::Kind::PpoClip: return "ppo_clip";
        case WeightingSpec::Kind::NoIS: return "no_is";
        case WeightingSpec::Kind::SftIndicator: return "sft_indicator";
    }
    return "?";
}

struct GradDiagnostics {
    double clip_fraction = 0.0;
    double weight_mean = 1.0;
    double weight_second_moment = 1.0;
    bool collapsed = false;   // every advantage in the assembly was exactly zero
    int collapsed_groups = 0; // groups whose advantages were all exactly zero
    int group_count = 0;
};

struct GradientEstimate {
    std::vector<double> grad;  // full parameter layout [b | w | psi]
    GradDiagnostics diag;
};

// ---------------------------------------------------------------------------
// Per-trajectory turn views with the early-termination completion: a
// trajectory that stopped at a correct first turn reuses (y0, r0) as its
// second turn and keeps x1 = x0.
// ---------------------------------------------------------------------------

struct TwoTurnView {
    const PromptState* x0 = nullptr;
    const Response* y0 = nullptr;
    double r0 = 0.0;
    const PromptState* x1 = nullptr;  // equals x0 for early-terminated trajectories
    const Response* y1 = nullptr;     // equals y0 for early-terminated trajectories
    double r1 = 0.0;
    bool duplicated = false;
};

inline TwoTurnView two_turn_view(const Trajectory& traj) {
    if (traj.turns.empty()) throw std::invalid_argument("two_turn_view: empty trajectory");
    TwoTurnView v;
    v.x0 = &traj.turns[0].prompt;
    v.y0 = &traj.turns[0].response;
    v.r0 = traj.turns[0].reward;
    if (traj.turns.size() >= 2) {
        v.x1 = &traj.turns[1].prompt;
        v.y1 = &traj.turns[1].response;
        v.r1 = traj.turns[1].reward;
    } else {
        if (!traj.terminated_early)
            throw std::invalid_argument("two_turn_view: single-turn trajectory without early termination");
        v.x1 = v.x0;
        v.y1 = v.y0;
        v.r1 = v.r0;
        v.duplicated = true;
    }
    return v;
}

// ---------------------------------------------------------------------------
// Advantages
// ---------------------------------------------------------------------------

inline std::vector<double> advantages(AdvKind spec, const RolloutGroup& group) {
    int N = group.size();
    if (N < 2) throw std::invalid_argument("advantages: group size >= 2 required");
    std::vector<double> r0(N), r1(N);
    for (int i = 0; i < N; ++i) {
        TwoTurnView v = two_turn_view(group.trajectories[i]);
        r0[i] = v.r0;
        r1[i] = v.r1;
    }
    double mean_r0 = 0.0, mean_r1 = 0.0;
    for (int i = 0; i < N; ++i) {
        mean_r0 += r0[i] / N;
        mean_r1 += r1[i] / N;
    }
    std::vector<double> a(N);
    switch (spec) {
        case AdvKind::SecondTurnMean:
            for (int i = 0; i < N; ++i) a[i] = r1[i] - mean_r1;
            break;
        case AdvKind::SecondTurnLOO:
            for (int i = 0; i < N; ++i) a[i] = r1[i] - (N * mean_r1 - r1[i]) / (N - 1);
            break;
        case AdvKind::FirstTurnMean:
            for (int i = 0; i < N; ++i) a[i] = r1[i] - mean_r0;
            break;
        case AdvKind::TrajectoryImprovement:
            for (int i = 0; i < N; ++i) a[i] = r1[i] - r0[i];
            break;
        case AdvKind::RawReward:
            for (int i = 0; i < N; ++i) a[i] = r1[i];
            break;
    }
    return a;
}

// ---------------------------------------------------------------------------
// Weighted terms
// ---------------------------------------------------------------------------

struct WeightedTerm {
    double coefficient = 0.0;
    bool clipped = false;
};

inline WeightedTerm weighted_term(const WeightingSpec& spec, double W, double A) {
    if (W <= 0.0) throw std::invalid_argument("weighted_term: W must be positive");
    WeightedTerm t;
    switch (spec.kind) {
        case WeightingSpec::Kind::FullIS:
            t.coefficient = W * A;
            break;
        case WeightingSpec::Kind::CispoClip: {
            double c = std::clamp(W, 1.0 - spec.epsilon, 1.0 + spec.epsilon);
            t.coefficient = c * A;
            t.clipped = W < 1.0 - spec.epsilon || W > 1.0 + spec.epsilon;
            break;
        }
        case WeightingSpec::Kind::PpoClip:
            // gradient of the clipped surrogate: the term survives only while
            // clipping does not bind against the advantage sign
            if (A > 0.0) {
                if (W <= 1.0 + spec.epsilon) t.coefficient = W * A;
                else t.clipped = true;
            } else if (A < 0.0) {
                if (W >= 1.0 - spec.epsilon) t.coefficient = W * A;
                else t.clipped = true;
            }
            break;
        case WeightingSpec::Kind::NoIS:
            t.coefficient = A;
            break;
        case WeightingSpec::Kind::SftIndicator:
            t.coefficient = A > 0.0 ? A : 0.0;
            break;
    }
    return t;
}

// ---------------------------------------------------------------------------
// Per-position score terms (token-level surrogates)
// ---------------------------------------------------------------------------

inline void accumulate_position_score(const PolicyParams& theta, const Environment& env,
                                      const PromptState& x, int t, int a_chosen, double c,
                                      std::vector<double>& grad) {
    int K = env.spec().alphabet_size;
    std::vector<double> phi(theta.m), zi(theta.d);
    std::vector<double> probs(K);
    std::vector<double> scores(K);
    std::vector<double> feat(std::size_t(K) * theta.m);
    std::vector<double> zs(std::size_t(K) * theta.d);
    for (int a = 0; a < K; ++a) {
        env.position_features(x, t, a, phi.data());
        std::copy(phi.begin(), phi.end(), feat.begin() + std::size_t(a) * theta.m);
        theta.z_from_features(phi.data(), zi.data());
        std::copy(zi.begin(), zi.end(), zs.begin() + std::size_t(a) * theta.d);
        double s = 0.0;
        for (int k = 0; k < theta.d; ++k) s += theta.b[k] * zi[k];
        scores[a] = theta.tau * s;
    }
    double lse = logsumexp(scores);
    std::vector<double> z_mean(theta.d, 0.0), feat_mean(theta.m, 0.0);
    for (int a = 0; a < K; ++a) {
        probs[a] = std::exp(scores[a] - lse);
        for (int k = 0; k < theta.d; ++k) z_mean[k] += probs[a] * zs[a * theta.d + k];
        for (int j = 0; j < theta.m; ++j) feat_mean[j] += probs[a] * feat[a * theta.m + j];
    }
    const double* za = zs.data() + std::size_t(a_chosen) * theta.d;
    const double* fa = feat.data() + std::size_t(a_chosen) * theta.m;
    for (int k = 0; k < theta.d; ++k) grad[k] += c * theta.tau * (za[k] - z_mean[k]);
    double* wblock = grad.data() + theta.w_offset();
    for (int i = 0; i < theta.d; ++i) {
        double bi = c * theta.tau * theta.b[i];
        double* row = wblock + std::size_t(i) * theta.m;
        for (int j = 0; j < theta.m; ++j) row[j] += bi * (fa[j] - feat_mean[j]);
    }
}

// ---------------------------------------------------------------------------
// Self-distillation estimator (single group)
// ---------------------------------------------------------------------------

inline GradientEstimate self_distill_gradient(const RolloutGroup& group, AdvKind adv,
                                              const WeightingSpec& wt, const PolicyParams& theta,
                                              const Environment& env) {
    wt.validate();
    int N = group.size();
    if (N < 2) throw std::invalid_argument("self_distill_gradient: group size >= 2");
    // the SFT special case scores raw second-turn rewards, whatever adv says
    AdvKind adv_used = wt.kind == WeightingSpec::Kind::SftIndicator ? AdvKind::RawReward : adv;
    std::vector<double> a = advantages(adv_used, group);

    GradientEstimate est;
    est.grad.assign(theta.total_params(), 0.0);
    est.diag.group_count = 1;

    PromptState x0 = initial_prompt(group.instance);
    ActionDist dist0 = build_action_dist(theta, env, x0);

    bool all_zero = true;
    double wsum = 0.0, w2sum = 0.0;
    long clip_events = 0, clip_terms = 0;
    for (int i = 0; i < N; ++i) {
        TwoTurnView v = two_turn_view(group.trajectories[i]);
        std::int64_t y1_idx = env.token_index(*v.y1);
        double W = 1.0;
        if (!v.duplicated) {
            ActionDist dist1 = build_action_dist(theta, env, *v.x1);
            W = sequence_weight(dist0, dist1, y1_idx);
        }
        wsum += W;
        w2sum += W * W;
        if (a[i] != 0.0) all_zero = false;

        bool token_clip = wt.token_level && (wt.kind == WeightingSpec::Kind::CispoClip ||
                                             wt.kind == WeightingSpec::Kind::PpoClip);
        if (!token_clip) {
            WeightedTerm term = weighted_term(wt, W, a[i]);
            ++clip_terms;
            if (term.clipped) ++clip_events;
            if (term.coefficient != 0.0)
                accumulate_policy_score(theta, dist0, y1_idx, term.coefficient / N, est.grad);
        } else {
            // token-level surrogate: clip each per-token ratio separately
            SequenceIw iw = sequence_iw(theta, env, x0, *v.x1, *v.y1);
            for (int t = 0; t < env.spec().response_length; ++t) {
                WeightedTerm term = weighted_term(wt, iw.per_token_ratios[t], a[i]);
                ++clip_terms;
                if (term.clipped) ++clip_events;
                if (term.coefficient != 0.0)
                    accumulate_position_score(theta, env, x0, t, v.y1->tokens[t],
                                              term.coefficient / N, est.grad);
            }
        }
    }
    est.diag.weight_mean = wsum / N;
    est.diag.weight_second_moment = w2sum / N;
    est.diag.clip_fraction = clip_terms > 0 ? double(clip_events) / double(clip_terms) : 0.0;
    est.diag.collapsed = all_zero;
    est.diag.collapsed_groups = all_zero ? 1 : 0;
    return est;
}

// ---------------------------------------------------------------------------
// Group-baseline RL gradient (GRPO style), 1 or 2 turns
// ---------------------------------------------------------------------------

inline GradientEstimate grpo_gradient(const std::vector<RolloutGroup>& groups, int turns,
                                      double gamma, const PolicyParams& theta,
                                      const Environment& env) {
    if (turns != 1 && turns != 2) throw std::invalid_argument("grpo_gradient: turns must be 1 or 2");
    if (groups.empty()) throw std::invalid_argument("grpo_gradient: no groups");
    GradientEstimate est;
    est.grad.assign(theta.total_params(), 0.0);
    est.diag.group_count = static_cast<int>(groups.size());
    est.diag.clip_fraction = 0.0;

    bool all_zero = true;
    double inv_groups = 1.0 / double(groups.size());
    for (const RolloutGroup& group : groups) {
        int N = group.size();
        if (N < 2) throw std::invalid_argument("grpo_gradient: group size >= 2");
        PromptState x0 = initial_prompt(group.instance);
        ActionDist dist0 = build_action_dist(theta, env, x0);
        bool group_zero = true;

        if (turns == 1) {
            double mean_r0 = 0.0;
            for (const Trajectory& tr : group.trajectories) mean_r0 += tr.turns[0].reward / N;
            for (const Trajectory& tr : group.trajectories) {
                double adv = tr.turns[0].reward - mean_r0;
                if (adv != 0.0) {
                    group_zero = false;
                    accumulate_policy_score(theta, dist0, env.token_index(tr.turns[0].response),
                                            adv * inv_groups / N, est.grad);
                }
            }
        } else {
            std::vector<TwoTurnView> views;
            views.reserve(N);
            double mean_ret = 0.0, mean_r1 = 0.0;
            for (const Trajectory& tr : group.trajectories) {
                TwoTurnView v = two_turn_view(tr);
                mean_ret += (v.r0 + gamma * v.r1) / N;
                mean_r1 += v.r1 / N;
                views.push_back(v);
            }
            for (const TwoTurnView& v : views) {
                double adv0 = (v.r0 + gamma * v.r1) - mean_ret;
                double adv1 = v.r1 - mean_r1;
                if (adv0 != 0.0 || adv1 != 0.0) group_zero = false;
                if (adv0 != 0.0)
                    accumulate_policy_score(theta, dist0, env.token_index(*v.y0),
                                            adv0 * inv_groups / N, est.grad);
                if (adv1 != 0.0) {
                    if (v.duplicated) {
                        accumulate_policy_score(theta, dist0, env.token_index(*v.y1),
                                                adv1 * inv_groups / N, est.grad);
                    } else {
                        ActionDist dist1 = build_action_dist(theta, env, *v.x1);
                        accumulate_policy_score(theta, dist1, env.token_index(*v.y1),
                                                adv1 * inv_groups / N, est.grad);
                    }
                }
            }
        }
        if (group_zero) est.diag.collapsed_groups += 1;
        else all_zero = false;
    }
    est.diag.collapsed = all_zero;
    return est;
}

// ---------------------------------------------------------------------------
// Exact single-turn quantities (enumeration oracles)
// ---------------------------------------------------------------------------

inline double exact_j_single(const PolicyParams& theta, const Environment& env,
                             const TaskInstance& x0) {
    PromptState x = initial_prompt(std::make_shared<TaskInstance>(x0));
    ActionDist dist = build_action_dist(theta, env, x);
    NeumaierSum acc;
    Response y;
    for (std::int64_t i = 0; i < dist.n; ++i) {
        y.tokens = env.tokens_of_index(i);
        acc.add(dist.prob[i] * env.reward(x0, y));
    }
    return acc.value();
}

// sum_y pi(y|x0) R(x0,y) grad log pi(y|x0), exact; psi block zero.
inline std::vector<double> exact_single_turn_gradient(const PolicyParams& theta,
                                                      const Environment& env,
                                                      const TaskInstance& x0) {
    if (env.response_space_size() > Environment::kEnumerableCap)
        throw std::invalid_argument("exact_single_turn_gradient: environment not enumerable");
    PromptState x = initial_prompt(std::make_shared<TaskInstance>(x0));
    ActionDist dist = build_action_dist(theta, env, x);
    std::vector<double> grad(theta.total_params(), 0.0);
    Response y;
    for (std::int64_t i = 0; i < dist.n; ++i) {
        y.tokens = env.tokens_of_index(i);
        double r = env.reward(x0, y);
        if (r != 0.0) accumulate_policy_score(theta, dist, i, dist.prob[i] * r, grad);
    }
    return grad;
}

}  // namespace rltf
