// Training loops for all methods (single/multi-turn group-baseline RL,
// self distillation, feedback modeling, feedback modeling with self-critique)
// and exact / Monte-Carlo policy evaluation.
//
// Randomness layout: RngStream(seed).child(1) is the rollout root; step t,
// group b, member i draw from root.child(t).child(b).child(i).  Evaluation
// uses child(2).  Training instances are env.instance_at(t*B + b); evaluation
// instances live at indices >= 2^40 so the two sequences never collide.

#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "rltf/core.hpp"
#include "rltf/envs.hpp"
#include "rltf/estimators.hpp"
#include "rltf/fm.hpp"
#include "rltf/parallel.hpp"
#include "rltf/policy.hpp"
#include "rltf/rollout.hpp"

namespace rltf {

enum class Method { Grpo1Turn, Grpo2Turn, RltfSd, RltfFm, RltfFmSelfCritique };
enum class OptimizerKind { Sgd, Adaptive };

inline std::string to_string(Method m) {
    switch (m) {
        case Method::Grpo1Turn: return "grpo_1turn";
        case Method::Grpo2Turn: return "grpo_2turn";
        case Method::RltfSd: return "rltf_sd";
        case Method::RltfFm: return "rltf_fm";
        case Method::RltfFmSelfCritique: return "rltf_fm_selfcritique";
    }
    return "?";
}

inline std::string to_string(OptimizerKind k) {
    return k == OptimizerKind::Sgd ? "sgd" : "adaptive";
}

struct TrainerConfig {
    Method method = Method::RltfSd;
    int group_size = 8;        // N
    int groups_per_batch = 16; // B
    int steps = 100;           // T
    double learning_rate = 0.1;
    double gamma = 1.0;
    double lambda_fm = 0.2;
    double rl_coefficient = 0.1;
    bool rl_coefficient_linear_schedule = false;
    AdvKind adv_spec = AdvKind::FirstTurnMean;
    WeightingSpec weight_spec{};
    bool early_term = true;
    std::uint64_t seed = 1;
    EnvSpec env_spec{};
    OptimizerKind optimizer = OptimizerKind::Sgd;

    int horizon = 2;           // fixed by method except for eval
    int repr_dim = 4;          // d
    double init_scale = 0.01;
    double tau = 1.0;
    int eval_every = 10;
    int eval_instances = 32;
    int eval_episodes = 8;     // episodes per instance for multi-turn eval

    void validate() const {
        if (group_size < 2) throw std::invalid_argument("config: group_size must be >= 2");
        if (groups_per_batch < 1) throw std::invalid_argument("config: groups_per_batch >= 1");
        if (steps < 1) throw std::invalid_argument("config: steps >= 1");
        if (learning_rate < 0.0) throw std::invalid_argument("config: learning_rate >= 0");
        if (gamma < 0.0 || gamma > 1.0) throw std::invalid_argument("config: gamma in [0,1]");
        if (lambda_fm < 0.0) throw std::invalid_argument("config: lambda_fm >= 0");
        weight_spec.validate();
    }

    int turns_per_episode() const {
        switch (method) {
            case Method::Grpo1Turn: return 1;
            case Method::RltfFmSelfCritique: return 3;  // y0, y1, self y1 reward evals
            default: return 2;
        }
    }

    // Nominal env-interaction budget used for matched-budget comparisons.
    long long nominal_budget() const {
        return static_cast<long long>(steps) * groups_per_batch * group_size *
               turns_per_episode();
    }
};

// ---------------------------------------------------------------------------
// Optimizers (ascent orientation)
// ---------------------------------------------------------------------------

struct OptimizerState {
    std::vector<double> m1, m2;
    long t = 0;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
};

inline void optimizer_step(OptimizerKind kind, OptimizerState& state, std::vector<double>& params,
                           const std::vector<double>& grad, double eta) {
    if (params.size() != grad.size()) throw std::invalid_argument("optimizer_step: shape mismatch");
    if (kind == OptimizerKind::Sgd) {
        for (std::size_t i = 0; i < params.size(); ++i) params[i] += eta * grad[i];
        return;
    }
    if (state.m1.size() != params.size()) {
        state.m1.assign(params.size(), 0.0);
        state.m2.assign(params.size(), 0.0);
        state.t = 0;
    }
    ++state.t;
    double c1 = 1.0 - std::pow(state.beta1, double(state.t));
    double c2 = 1.0 - std::pow(state.beta2, double(state.t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        state.m1[i] = state.beta1 * state.m1[i] + (1.0 - state.beta1) * grad[i];
        state.m2[i] = state.beta2 * state.m2[i] + (1.0 - state.beta2) * grad[i] * grad[i];
        double mhat = state.m1[i] / c1;
        double vhat = state.m2[i] / c2;
        params[i] += eta * mhat / (std::sqrt(vhat) + state.eps);
    }
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

struct ScalarEstimate {
    double value = 0.0;
    double se = 0.0;
};

// Exact when enumerable (always within the cap): mean over instances of
// sum_y pi(y|x0) R(x0, y).
inline ScalarEstimate eval_single_turn(const PolicyParams& theta, const Environment& env,
                                       const std::vector<TaskInstance>& instances) {
    if (instances.empty()) throw std::invalid_argument("eval_single_turn: no instances");
    NeumaierSum acc;
    for (const TaskInstance& inst : instances) acc.add(exact_j_single(theta, env, inst));
    return {acc.value() / double(instances.size()), 0.0};
}

struct MultiTurnEval {
    double return_mean = 0.0;
    double return_se = 0.0;
    double final_success = 0.0;   // the paper-style multi-turn accuracy
    double final_success_se = 0.0;
    long realized_turns = 0;
};

inline MultiTurnEval eval_multi_turn(const PolicyParams& theta, const Environment& env,
                                     const std::vector<TaskInstance>& instances, int H,
                                     double gamma, bool early_term, int episodes_per_instance,
                                     RngStream eval_stream) {
    if (H < 1) throw std::invalid_argument("eval_multi_turn: H >= 1");
    if (episodes_per_instance < 1)
        throw std::invalid_argument("eval_multi_turn: episodes_per_instance >= 1");
    double sum_r = 0.0, sum_r2 = 0.0, sum_f = 0.0, sum_f2 = 0.0;
    long n = 0, turns = 0;
    for (std::size_t ii = 0; ii < instances.size(); ++ii) {
        auto inst = std::make_shared<TaskInstance>(instances[ii]);
        RngStream is = eval_stream.child(ii);
        for (int e = 0; e < episodes_per_instance; ++e) {
            Trajectory traj = run_episode(theta, env, inst, H, early_term, is.child(e));
            double ret = multi_turn_return(traj, gamma);
            double fin = traj.turns.back().reward;
            sum_r += ret;
            sum_r2 += ret * ret;
            sum_f += fin;
            sum_f2 += fin * fin;
            turns += static_cast<long>(traj.turns.size());
            ++n;
        }
    }
    MultiTurnEval out;
    out.return_mean = sum_r / n;
    out.final_success = sum_f / n;
    if (n > 1) {
        out.return_se = std::sqrt(std::max(0.0, (sum_r2 / n - out.return_mean * out.return_mean) /
                                                    double(n - 1)));
        out.final_success_se = std::sqrt(
            std::max(0.0, (sum_f2 / n - out.final_success * out.final_success) / double(n - 1)));
    }
    out.realized_turns = turns;
    return out;
}

// Mean reward per self-critique round (round k = reward of the k-th
// response, k = 1..rounds).
inline std::vector<ScalarEstimate> eval_self_critique(const PolicyParams& theta,
                                                      const Environment& env,
                                                      const std::vector<TaskInstance>& instances,
                                                      int rounds, int episodes_per_instance,
                                                      RngStream eval_stream) {
    std::vector<double> sum(rounds, 0.0), sum2(rounds, 0.0);
    long n = 0;
    for (std::size_t ii = 0; ii < instances.size(); ++ii) {
        auto inst = std::make_shared<TaskInstance>(instances[ii]);
        RngStream is = eval_stream.child(ii);
        for (int e = 0; e < episodes_per_instance; ++e) {
            Trajectory traj = self_critique_rollout(theta, env, inst, rounds, is.child(e));
            for (int h = 0; h < rounds; ++h) {
                double r = traj.turns[h].reward;
                sum[h] += r;
                sum2[h] += r * r;
            }
            ++n;
        }
    }
    std::vector<ScalarEstimate> out(rounds);
    for (int h = 0; h < rounds; ++h) {
        out[h].value = sum[h] / n;
        if (n > 1)
            out[h].se = std::sqrt(
                std::max(0.0, (sum2[h] / n - out[h].value * out[h].value) / double(n - 1)));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct EvalPoint {
    int step = 0;
    double j_single = 0.0;
    double j_single_se = 0.0;
    double j_multi = 0.0;     // final-turn success rate
    double j_multi_se = 0.0;
    double return_mean = 0.0;
    double return_se = 0.0;
    long long env_interactions = 0;
};

struct StepDiag {
    int step = 0;
    double grad_norm = 0.0;
    double clip_fraction = 0.0;
    double weight_mean = 1.0;
    double weight_second_moment = 1.0;
    int collapsed_groups = 0;
    int group_count = 0;
    long long env_interactions = 0;  // cumulative
};

struct TrainingRun {
    std::vector<EvalPoint> eval_curve;
    std::vector<StepDiag> diagnostics;
    PolicyParams final_params;
    long long env_interactions = 0;
};

struct NumericAbort : std::runtime_error {
    explicit NumericAbort(const std::string& what) : std::runtime_error(what) {}
};

inline long realized_turns(const RolloutGroup& g) {
    long t = 0;
    for (const Trajectory& traj : g.trajectories) t += static_cast<long>(traj.turns.size());
    return t;
}

constexpr std::int64_t kEvalInstanceBase = std::int64_t(1) << 40;

inline TrainingRun train(const TrainerConfig& config) {
    config.validate();
    Environment env(config.env_spec);
    const int N = config.group_size, B = config.groups_per_batch, T = config.steps;
    bool early_term = config.early_term;
    if (config.method == Method::RltfFmSelfCritique) early_term = false;

    RngStream root(config.seed);
    PolicyParams theta = PolicyParams::init(config.repr_dim, env, config.init_scale,
                                            root.child(7), 0.0, config.tau);
    std::vector<TaskInstance> eval_instances =
        env.sample_instances(config.eval_instances, kEvalInstanceBase);

    TrainingRun run;
    OptimizerState opt_state;
    std::vector<double> params = theta.flatten();
    long long interactions = 0;

    auto record_eval = [&](int step) {
        EvalPoint pt;
        pt.step = step;
        ScalarEstimate js = eval_single_turn(theta, env, eval_instances);
        pt.j_single = js.value;
        pt.j_single_se = js.se;
        (void)step;
        // common random numbers across all evaluation points: the curve is
        // exactly frozen for eta = 0 and much smoother otherwise
        MultiTurnEval mt =
            eval_multi_turn(theta, env, eval_instances, /*H=*/2, config.gamma, early_term,
                            config.eval_episodes, root.child(2));
        pt.j_multi = mt.final_success;
        pt.j_multi_se = mt.final_success_se;
        pt.return_mean = mt.return_mean;
        pt.return_se = mt.return_se;
        pt.env_interactions = interactions;
        run.eval_curve.push_back(pt);
    };

    record_eval(0);
    RngStream rollout_root = root.child(1);
    for (int t = 0; t < T; ++t) {
      try {
        RngStream step_stream = rollout_root.child(t);
        GradientEstimate grad;
        long long step_interactions = 0;

        if (config.method == Method::RltfFmSelfCritique) {
            std::vector<SelfCritiqueGroup> groups(B);
            parallel_for(B, [&](std::int64_t b) {
                auto inst = std::make_shared<TaskInstance>(
                    env.instance_at(std::int64_t(t) * B + b));
                groups[b] = rollout_self_critique_group(theta, env, inst, N,
                                                        step_stream.child(b));
            });
            step_interactions = static_cast<long long>(B) * N * 3;
            grad = self_critique_rl_gradient(groups, theta, env, config.gamma, config.lambda_fm);
        } else {
            int H = config.method == Method::Grpo1Turn ? 1 : 2;
            std::vector<RolloutGroup> groups(B);
            parallel_for(B, [&](std::int64_t b) {
                auto inst = std::make_shared<TaskInstance>(
                    env.instance_at(std::int64_t(t) * B + b));
                groups[b] = rollout_group(theta, env, inst, N, H, early_term,
                                          step_stream.child(b));
            });
            for (const RolloutGroup& g : groups) step_interactions += realized_turns(g);

            switch (config.method) {
                case Method::Grpo1Turn:
                    grad = grpo_gradient(groups, 1, config.gamma, theta, env);
                    break;
                case Method::Grpo2Turn:
                    grad = grpo_gradient(groups, 2, config.gamma, theta, env);
                    break;
                case Method::RltfSd: {
                    double rl_coef = config.rl_coefficient;
                    if (config.rl_coefficient_linear_schedule && T > 1)
                        rl_coef = config.rl_coefficient * double(t) / double(T - 1);
                    GradientEstimate rl = grpo_gradient(groups, 2, config.gamma, theta, env);
                    // distillation estimate averaged over groups
                    GradientEstimate distill;
                    distill.grad.assign(theta.total_params(), 0.0);
                    distill.diag.group_count = B;
                    distill.diag.collapsed = true;
                    double wsum = 0.0, w2sum = 0.0, clip = 0.0;
                    std::vector<GradientEstimate> parts(B);
                    parallel_for(B, [&](std::int64_t b) {
                        parts[b] = self_distill_gradient(groups[b], config.adv_spec,
                                                         config.weight_spec, theta, env);
                    });
                    for (const GradientEstimate& part : parts) {
                        for (int k = 0; k < theta.total_params(); ++k)
                            distill.grad[k] += part.grad[k] / B;
                        wsum += part.diag.weight_mean / B;
                        w2sum += part.diag.weight_second_moment / B;
                        clip += part.diag.clip_fraction / B;
                        distill.diag.collapsed_groups += part.diag.collapsed_groups;
                        if (!part.diag.collapsed) distill.diag.collapsed = false;
                    }
                    distill.diag.weight_mean = wsum;
                    distill.diag.weight_second_moment = w2sum;
                    distill.diag.clip_fraction = clip;
                    grad = distill;
                    for (int k = 0; k < theta.total_params(); ++k)
                        grad.grad[k] += rl_coef * rl.grad[k];
                    grad.diag.collapsed = distill.diag.collapsed && rl.diag.collapsed;
                    break;
                }
                case Method::RltfFm:
                    grad = joint_gradient(groups, theta, env, config.lambda_fm, config.gamma);
                    break;
                default:
                    throw std::logic_error("unreachable method");
            }
        }

        double norm2 = 0.0;
        for (double g : grad.grad) norm2 += g * g;
        if (!std::isfinite(norm2))
            throw NumericAbort("non-finite gradient at step " + std::to_string(t) +
                               " (|grad|^2 = " + std::to_string(norm2) + ", method " +
                               to_string(config.method) + ")");

        optimizer_step(config.optimizer, opt_state, params, grad.grad, config.learning_rate);
        theta.unflatten(params);
        interactions += step_interactions;

        StepDiag diag;
        diag.step = t;
        diag.grad_norm = std::sqrt(norm2);
        diag.clip_fraction = grad.diag.clip_fraction;
        diag.weight_mean = grad.diag.weight_mean;
        diag.weight_second_moment = grad.diag.weight_second_moment;
        diag.collapsed_groups = grad.diag.collapsed_groups;
        diag.group_count = grad.diag.group_count;
        diag.env_interactions = interactions;
        run.diagnostics.push_back(diag);

        if ((t + 1) % config.eval_every == 0 || t + 1 == T) record_eval(t + 1);
      } catch (const NumericAbort&) {
        throw;
      } catch (const std::runtime_error& e) {
        // numeric blowups inside rollouts or assembly surface with context
        throw NumericAbort("numeric failure at step " + std::to_string(t) + ": " + e.what());
      }
    }
    run.final_params = theta;
    run.env_interactions = interactions;
    return run;
}

}  // namespace rltf
