// Numerical verification of the estimator propositions and the
// representation-learning results against exact enumeration oracles.
//
// Conventions:
//   - every "exact" quantity is an enumeration with no sampling;
//   - statistical checks pass within 3-4 standard errors as stated per check;
//   - exact-vs-exact identities must agree to 1e-9 (1e-10 / 1e-12 where
//     stated) and a miss is a hard failure, not a statistical one;
//   - estimator checks run with early termination disabled: the propositions
//     assume both turns are actually sampled.

#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "rltf/core.hpp"
#include "rltf/envs.hpp"
#include "rltf/estimators.hpp"
#include "rltf/fm.hpp"
#include "rltf/policy.hpp"
#include "rltf/rollout.hpp"
#include "rltf/rng.hpp"

namespace rltf::theory {

struct CheckResult {
    std::string name;
    double measured = 0.0;
    double predicted = 0.0;
    double se = 0.0;
    double tolerance = 0.0;  // |measured - predicted| <= tolerance
    bool pass = false;
    std::uint64_t seed = 0;
    long long samples = 0;
    std::string note;
};

inline CheckResult make_result(std::string name, double measured, double predicted, double se,
                               double tolerance, std::uint64_t seed, long long samples,
                               std::string note = "") {
    CheckResult r;
    r.name = std::move(name);
    r.measured = measured;
    r.predicted = predicted;
    r.se = se;
    r.tolerance = tolerance;
    r.pass = std::abs(measured - predicted) <= tolerance;
    r.seed = seed;
    r.samples = samples;
    r.note = std::move(note);
    return r;
}

struct TheoryReport {
    std::vector<CheckResult> checks;
    std::uint64_t seed = 0;

    bool all_pass() const {
        for (const CheckResult& c : checks)
            if (!c.pass) return false;
        return true;
    }
};

// O(1) sampling from a fixed discrete distribution (Vose alias method).
class AliasTable {
  public:
    explicit AliasTable(const std::vector<double>& probs) {
        std::size_t n = probs.size();
        if (n == 0) throw std::invalid_argument("AliasTable: empty distribution");
        prob_.assign(n, 0.0);
        alias_.assign(n, 0);
        std::vector<double> scaled(n);
        double total = 0.0;
        for (double p : probs) total += p;
        for (std::size_t i = 0; i < n; ++i) scaled[i] = probs[i] * double(n) / total;
        std::vector<std::size_t> small, large;
        for (std::size_t i = 0; i < n; ++i)
            (scaled[i] < 1.0 ? small : large).push_back(i);
        while (!small.empty() && !large.empty()) {
            std::size_t s = small.back(), l = large.back();
            small.pop_back();
            large.pop_back();
            prob_[s] = scaled[s];
            alias_[s] = l;
            scaled[l] = (scaled[l] + scaled[s]) - 1.0;
            (scaled[l] < 1.0 ? small : large).push_back(l);
        }
        for (std::size_t s : small) prob_[s] = 1.0;
        for (std::size_t l : large) prob_[l] = 1.0;
    }

    std::size_t sample(RngStream& rng) const {
        std::size_t i = std::size_t(rng.next_below(prob_.size()));
        return rng.next_double() < prob_[i] ? i : alias_[i];
    }

  private:
    std::vector<double> prob_;
    std::vector<std::size_t> alias_;
};

// ---------------------------------------------------------------------------
// Frozen base distribution d0 over (instance, response), enumerated
// ---------------------------------------------------------------------------

struct BaseDistribution {
    const Environment* env = nullptr;
    std::vector<TaskInstance> instances;
    std::vector<ActionDist> dists;       // one per instance, at theta0
    std::vector<double> joint;           // instance-major (x, y) probabilities
    std::vector<double> rewards;         // R(x0, y) per (x, y)
    double epsilon0 = 0.0;               // Pr(reward = 1) under d0
    std::int64_t n_responses = 0;

    std::size_t flat(std::size_t xi, std::int64_t yi) const { return xi * n_responses + yi; }
};

inline BaseDistribution build_base_distribution(const PolicyParams& theta,
                                                const Environment& env,
                                                std::vector<TaskInstance> instances) {
    BaseDistribution d0;
    d0.env = &env;
    d0.instances = std::move(instances);
    d0.n_responses = env.response_space_size();
    double mu = 1.0 / double(d0.instances.size());
    NeumaierSum eps;
    Response y;
    for (std::size_t xi = 0; xi < d0.instances.size(); ++xi) {
        PromptState x = initial_prompt(std::make_shared<TaskInstance>(d0.instances[xi]));
        d0.dists.push_back(build_action_dist(theta, env, x));
        const ActionDist& dist = d0.dists.back();
        for (std::int64_t yi = 0; yi < d0.n_responses; ++yi) {
            y.tokens = env.tokens_of_index(yi);
            double r = env.reward(d0.instances[xi], y);
            d0.joint.push_back(mu * dist.prob[yi]);
            d0.rewards.push_back(r);
            if (r == 1.0) eps.add(mu * dist.prob[yi]);
        }
    }
    d0.epsilon0 = eps.value();
    return d0;
}

// ---------------------------------------------------------------------------
// Exact identities (Fisher forms, importance-weight second moment, token
// factorization, score expectation)
// ---------------------------------------------------------------------------

inline std::vector<CheckResult> check_exact_identities(const Environment& env,
                                                       const PolicyParams& theta,
                                                       std::uint64_t seed) {
    std::vector<CheckResult> out;
    auto instances = env.sample_instances(4);

    // Fisher three-way agreement: closed form tau^2 E[Cov(z)] vs E[g g^T]
    {
        std::vector<double> closed = fisher_head(theta, env, instances);
        int d = theta.d;
        std::vector<double> outer(d * d, 0.0);
        for (const TaskInstance& inst : instances) {
            PromptState x = initial_prompt(std::make_shared<TaskInstance>(inst));
            ActionDist dist = build_action_dist(theta, env, x);
            for (std::int64_t i = 0; i < dist.n; ++i) {
                auto g = score_head(theta, dist, i);
                for (int a = 0; a < d; ++a)
                    for (int b = 0; b < d; ++b)
                        outer[a * d + b] +=
                            dist.prob[i] * g[a] * g[b] / double(instances.size());
            }
        }
        double frob = 0.0;
        for (int k = 0; k < d * d; ++k)
            frob += (closed[k] - outer[k]) * (closed[k] - outer[k]);
        out.push_back(make_result("identity/fisher_three_way", std::sqrt(frob), 0.0, 0.0, 1e-10,
                                  seed, env.response_space_size() * 4));
    }

    // Score expectation zero under enumeration
    {
        PromptState x = initial_prompt(std::make_shared<TaskInstance>(instances[0]));
        ActionDist dist = build_action_dist(theta, env, x);
        int n_coords = theta.d + theta.p();
        std::vector<NeumaierSum> mean(n_coords);
        for (std::int64_t i = 0; i < dist.n; ++i) {
            std::vector<double> g(theta.total_params(), 0.0);
            accumulate_policy_score(theta, dist, i, dist.prob[i], g);
            for (int k = 0; k < n_coords; ++k) mean[k].add(g[k]);
        }
        double worst = 0.0;
        for (int k = 0; k < n_coords; ++k) worst = std::max(worst, std::abs(mean[k].value()));
        out.push_back(make_result("identity/score_expectation_zero", worst, 0.0, 0.0, 1e-12,
                                  seed, dist.n));
    }

    // Importance-weight second moment and token factorization after one
    // protocol step
    {
        RngStream rng = RngStream(seed).child(3);
        TaskInstance inst = instances[0];
        auto ip = std::make_shared<TaskInstance>(inst);
        PromptState x0 = initial_prompt(ip);
        ActionDist d0 = build_action_dist(theta, env, x0);
        Response y0;
        y0.tokens = env.tokens_of_index(d0.sample_index(rng));
        Critique c = env.feedback(x0, y0, rng);
        PromptState x1 = advance_prompt(x0, y0, c);
        ActionDist d1 = build_action_dist(theta, env, x1);

        NeumaierSum m2, chi2;
        for (std::int64_t i = 0; i < d1.n; ++i) {
            double w = sequence_weight(d0, d1, i);
            m2.add(d1.prob[i] * w * w);
            double diff = d0.prob[i] - d1.prob[i];
            chi2.add(diff * diff / d1.prob[i]);
        }
        out.push_back(make_result("identity/iw_second_moment_chi2", m2.value(),
                                  1.0 + chi2.value(), 0.0, 1e-9, seed, d1.n,
                                  "chi2 = " + std::to_string(chi2.value())));

        double worst = 0.0;
        const int n_seq = 1000;
        for (int rep = 0; rep < n_seq; ++rep) {
            Response y;
            y.tokens = env.tokens_of_index(
                std::int64_t(rng.next_below(std::uint64_t(env.response_space_size()))));
            SequenceIw iw = sequence_iw(theta, env, x0, x1, y);
            double prod = 1.0;
            for (double r : iw.per_token_ratios) prod *= r;
            worst = std::max(worst, std::abs(prod - iw.weight));
        }
        out.push_back(make_result("identity/token_ratio_product", worst, 0.0, 0.0, 1e-9, seed,
                                  n_seq));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Estimator bias / shrinkage (common random numbers across variants)
// ---------------------------------------------------------------------------

struct BiasVariant {
    std::string name;
    AdvKind adv;
    WeightingSpec wt;
    double predicted_slope = 1.0;
    // when set, the estimator actually computed differs from the label
    // (negative-control fixture)
    std::optional<AdvKind> mislabeled_as;
};

inline std::vector<CheckResult> check_bias(const Environment& env, const PolicyParams& theta,
                                           const TaskInstance& x0,
                                           const std::vector<BiasVariant>& variants, int N,
                                           long M, std::uint64_t seed) {
    std::vector<double> exact = exact_single_turn_gradient(theta, env, x0);
    int n_coords = theta.d + theta.p();
    double exact_sq = 0.0;
    for (int k = 0; k < n_coords; ++k) exact_sq += exact[k] * exact[k];
    if (exact_sq <= 0.0)
        throw std::invalid_argument("check_bias: exact gradient vanishes; pick another instance");

    std::size_t V = variants.size();
    std::vector<std::vector<double>> sum(V, std::vector<double>(n_coords, 0.0));
    std::vector<std::vector<double>> sum2(V, std::vector<double>(n_coords, 0.0));
    std::vector<double> proj_sum(V, 0.0), proj_sum2(V, 0.0);

    auto ip = std::make_shared<TaskInstance>(x0);
    RngStream rng = RngStream(seed).child(1);
    for (long g = 0; g < M; ++g) {
        RolloutGroup group = rollout_group(theta, env, ip, N, 2, /*early_term=*/false,
                                           rng.child(std::uint64_t(g)));
        for (std::size_t v = 0; v < V; ++v) {
            AdvKind adv = variants[v].mislabeled_as.value_or(variants[v].adv);
            GradientEstimate est =
                self_distill_gradient(group, adv, variants[v].wt, theta, env);
            double proj = 0.0;
            for (int k = 0; k < n_coords; ++k) {
                sum[v][k] += est.grad[k];
                sum2[v][k] += est.grad[k] * est.grad[k];
                proj += est.grad[k] * exact[k];
            }
            proj /= exact_sq;
            proj_sum[v] += proj;
            proj_sum2[v] += proj * proj;
        }
    }

    std::vector<CheckResult> out;
    for (std::size_t v = 0; v < V; ++v) {
        double slope = proj_sum[v] / M;
        double slope_var = std::max(0.0, proj_sum2[v] / M - slope * slope);
        double slope_se = std::sqrt(slope_var / M);
        double c = variants[v].predicted_slope;

        // per-coordinate 4 se agreement with c * exact (absolute floor for
        // coordinates that are identically zero)
        double worst_z = 0.0;
        int worst_k = -1;
        bool coords_ok = true;
        for (int k = 0; k < n_coords; ++k) {
            double mean = sum[v][k] / M;
            double var = std::max(0.0, sum2[v][k] / M - mean * mean);
            double se = std::sqrt(var / M);
            double miss = std::abs(mean - c * exact[k]);
            if (miss > 4.0 * se + 1e-12) coords_ok = false;
            if (miss > 1e-12 && se > 0.0 && miss / se > worst_z) {
                worst_z = miss / se;
                worst_k = k;
            }
        }
        CheckResult r = make_result("bias/" + variants[v].name, slope, c, slope_se,
                                    std::max(4.0 * slope_se, 0.02), seed, M,
                                    "worst coordinate z = " + std::to_string(worst_z) +
                                        " at k = " + std::to_string(worst_k));
        r.pass = r.pass && coords_ok;
        out.push_back(std::move(r));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Collapse frequency for Bernoulli second-turn rewards
// ---------------------------------------------------------------------------

inline std::vector<CheckResult> check_collapse(double p1, int N, long M, std::uint64_t seed) {
    if (p1 <= 0.0 || p1 > 1.0) throw std::invalid_argument("check_collapse: p1 in (0,1]");
    RngStream rng = RngStream(seed).child(2);
    long collapsed = 0;
    for (long g = 0; g < M; ++g) {
        int ones = 0;
        for (int i = 0; i < N; ++i) ones += rng.next_double() < p1;
        collapsed += (ones == 0 || ones == N);
    }
    double freq = double(collapsed) / double(M);
    long double p = p1;
    double predicted = double(std::pow(p, N) + std::pow(1.0L - p, N));
    double se = std::sqrt(predicted * (1.0 - predicted) / double(M));

    std::vector<CheckResult> out;
    out.push_back(make_result("collapse/frequency_p" + std::to_string(p1) + "_N" +
                                  std::to_string(N),
                              freq, predicted, se, 3.0 * se + 1e-12, seed, M));
    if (p1 >= 0.99) {
        // asymptotic note: nonzero-update probability ~ N (1 - p1)
        double nonzero = 1.0 - freq;
        double approx = N * (1.0 - p1);
        out.push_back(make_result("collapse/nonzero_update_asymptote_p" + std::to_string(p1),
                                  nonzero, approx, se, 0.10 * approx, seed, M,
                                  "exact 1 - p^N = " + std::to_string(1.0 - double(std::pow(p, N)))));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Variance gap between the improvement advantage and the first-turn-mean
// advantage.
//
// The gap formula is derived with the baseline independent of the scored
// member (the self-term is dropped), so the check realizes exactly that
// regime: the baseline is the mean of N fresh first-turn draws.  Training
// code keeps the in-group baseline.
// ---------------------------------------------------------------------------

inline CheckResult check_variance_gap(double p0, bool coupled, int N, long M,
                                      std::uint64_t seed) {
    RngStream rng = RngStream(seed).child(3);
    // exact moments of the constructed pair
    double var_r0 = p0 * (1.0 - p0);
    double cov = coupled ? var_r0 : 0.0;
    double predicted = (1.0 - 1.0 / N) * var_r0 - 2.0 * cov;

    const int batches = 50;
    long per_batch = std::max<long>(1, M / batches);
    std::vector<double> batch_gap;
    for (int bi = 0; bi < batches; ++bi) {
        double s_d = 0.0, s2_d = 0.0, s_a = 0.0, s2_a = 0.0;
        long n = 0;
        for (long g = 0; g < per_batch; ++g) {
            double baseline = 0.0;
            for (int i = 0; i < N; ++i) baseline += (rng.next_double() < p0) ? 1.0 : 0.0;
            baseline /= N;
            for (int i = 0; i < N; ++i) {
                double r0 = (rng.next_double() < p0) ? 1.0 : 0.0;
                double r1 = coupled ? r0 : ((rng.next_double() < p0) ? 1.0 : 0.0);
                double a_delta = r1 - r0;
                double a_zero = r1 - baseline;
                s_d += a_delta;
                s2_d += a_delta * a_delta;
                s_a += a_zero;
                s2_a += a_zero * a_zero;
                ++n;
            }
        }
        double var_d = s2_d / n - (s_d / n) * (s_d / n);
        double var_a = s2_a / n - (s_a / n) * (s_a / n);
        batch_gap.push_back(var_d - var_a);
    }
    double mean = 0.0;
    for (double v : batch_gap) mean += v / batches;
    double var = 0.0;
    for (double v : batch_gap) var += (v - mean) * (v - mean) / (batches - 1);
    double se = std::sqrt(var / batches);
    return make_result(std::string("variance_gap/") + (coupled ? "coupled" : "independent"),
                       mean, predicted, se, 3.0 * se, seed, per_batch * batches * N);
}

// ---------------------------------------------------------------------------
// SNR bounds and the 1/eps0 sample-complexity scaling
// ---------------------------------------------------------------------------

struct SnrStudy {
    std::vector<CheckResult> checks;
};

// Full policy score g(x,y) = [score_head; score_repr] per (x, y) of d0.
inline std::vector<std::vector<double>> score_table(const PolicyParams& theta,
                                                    const BaseDistribution& d0) {
    std::vector<std::vector<double>> table;
    table.reserve(d0.joint.size());
    for (std::size_t xi = 0; xi < d0.instances.size(); ++xi) {
        const ActionDist& dist = d0.dists[xi];
        for (std::int64_t yi = 0; yi < d0.n_responses; ++yi) {
            std::vector<double> g(theta.total_params(), 0.0);
            accumulate_policy_score(theta, dist, yi, 1.0, g);
            g.resize(theta.d + theta.p());
            table.push_back(std::move(g));
        }
    }
    return table;
}

inline std::vector<double> random_unit_direction(int dim, RngStream& rng) {
    std::vector<double> u(dim);
    double norm = 0.0;
    for (double& v : u) {
        v = rng.next_gaussian();
        norm += v * v;
    }
    norm = std::sqrt(norm);
    for (double& v : u) v /= norm;
    return u;
}

// One environment variant: success set restricted to `success`, everything
// else from the base distribution.
struct SnrVariant {
    std::string label;
    std::vector<std::size_t> success_flat;  // flat (x, y) indices with reward 1
};

// study_direction: one fixed unit direction shared by the sample-complexity
// study across every variant, so N* isolates the eps0 dependence (empty:
// each variant uses its own reward-weighted score direction).
inline SnrStudy check_snr(const PolicyParams& theta, const BaseDistribution& d0,
                          const std::vector<SnrVariant>& variants, int n_directions,
                          long bernstein_reps, long sign_reps, std::uint64_t seed,
                          std::vector<double> study_direction = {}) {
    SnrStudy study;
    int dim = theta.d + theta.p();
    auto g_table = score_table(theta, d0);
    RngStream rng = RngStream(seed).child(4);

    std::vector<double> log_eps, log_nstar;
    for (const SnrVariant& var : variants) {
        std::vector<double> reward(d0.joint.size(), 0.0);
        double eps = 0.0;
        for (std::size_t f : var.success_flat) {
            reward[f] = 1.0;
            eps += d0.joint[f];
        }

        // (a) max directional SNR over random unit directions <= sqrt(eps0)
        double max_snr = 0.0;
        for (int dir = 0; dir < n_directions; ++dir) {
            std::vector<double> u = random_unit_direction(dim, rng);
            NeumaierSum mu, m2;
            for (std::size_t f : var.success_flat) {
                double zu = 0.0;
                for (int k = 0; k < dim; ++k) zu += g_table[f][k] * u[k];
                mu.add(d0.joint[f] * zu);
                m2.add(d0.joint[f] * zu * zu);
            }
            if (m2.value() > 0.0)
                max_snr = std::max(max_snr, std::abs(mu.value()) / std::sqrt(m2.value()));
        }
        CheckResult snr_res =
            make_result("snr/max_bound_" + var.label, max_snr, std::sqrt(eps), 0.0, 0.0, seed,
                        n_directions, "eps0 = " + std::to_string(eps));
        snr_res.pass = max_snr <= std::sqrt(eps) + 0.02;
        snr_res.tolerance = 0.02;
        study.checks.push_back(snr_res);

        // (b) signal direction for the sample-complexity study: shared fixed
        // direction if provided, else the variant's reward-weighted direction
        std::vector<double> u = study_direction;
        if (u.empty()) {
            u.assign(dim, 0.0);
            double un = 0.0;
            for (std::size_t f : var.success_flat)
                for (int k = 0; k < dim; ++k) u[k] += d0.joint[f] * g_table[f][k];
            for (double v : u) un += v * v;
            un = std::sqrt(un);
            for (double& v : u) v /= un;
        }

        std::vector<double> z_table(d0.joint.size(), 0.0);
        double mu_u = 0.0, m2_u = 0.0, g_u = 0.0;
        for (std::size_t f = 0; f < d0.joint.size(); ++f) {
            double dot = 0.0;
            for (int k = 0; k < dim; ++k) dot += g_table[f][k] * u[k];
            g_u = std::max(g_u, std::abs(dot));  // empirical bound G_u
            double zu = reward[f] * dot;
            z_table[f] = zu;
            mu_u += d0.joint[f] * zu;
            m2_u += d0.joint[f] * zu * zu;
        }

        AliasTable sampler(d0.joint);

        // Bernstein concentration: the bound holds in >= 1 - delta of reps
        {
            const double delta = 0.05;
            const long n_draws = 200;
            double bound = std::sqrt(2.0 * m2_u * std::log(2.0 / delta) / n_draws) +
                           4.0 * g_u * std::log(2.0 / delta) / (3.0 * n_draws);
            long violations = 0;
            for (long rep = 0; rep < bernstein_reps; ++rep) {
                double zbar = 0.0;
                for (long i = 0; i < n_draws; ++i) zbar += z_table[sampler.sample(rng)];
                zbar /= double(n_draws);
                violations += std::abs(zbar - mu_u) > bound;
            }
            double rate = double(violations) / double(bernstein_reps);
            CheckResult br = make_result("snr/bernstein_violation_" + var.label, rate, 0.0, 0.0,
                                         delta, seed, bernstein_reps,
                                         "bound = " + std::to_string(bound));
            br.pass = rate <= delta;
            study.checks.push_back(br);
        }

        // (c) smallest N with >= 90% sign recovery: coarse geometric bracket,
        // then a fine linear scan at higher repetitions (the scan step bounds
        // the quantization error of the log-log slope)
        {
            auto recovery_rate = [&](long n_try, long reps) {
                long good = 0;
                for (long rep = 0; rep < reps; ++rep) {
                    double zbar = 0.0;
                    for (long i = 0; i < n_try; ++i) zbar += z_table[sampler.sample(rng)];
                    good += (zbar > 0.0) == (mu_u > 0.0) && zbar != 0.0;
                }
                return double(good) / double(reps);
            };
            long lo = 2, hi = 4;
            while (hi < 4000000 && recovery_rate(hi, sign_reps) < 0.9) {
                lo = hi;
                hi = std::max(hi + 1, long(double(hi) * 1.3));
            }
            if (hi >= 4000000)
                throw std::runtime_error("check_snr: sign recovery never reached 90%");
            long step = std::max<long>(1, (hi - lo) / 12);
            long n_star = hi;
            for (long n_try = lo; n_try <= hi; n_try += step) {
                if (recovery_rate(n_try, 4 * sign_reps) >= 0.9) {
                    n_star = n_try;
                    break;
                }
            }
            log_eps.push_back(std::log(eps));
            log_nstar.push_back(std::log(double(n_star)));
        }
    }

    // log-log regression of N* on eps0
    if (variants.size() >= 2) {
        double mx = 0.0, my = 0.0;
        for (std::size_t i = 0; i < log_eps.size(); ++i) {
            mx += log_eps[i] / log_eps.size();
            my += log_nstar[i] / log_nstar.size();
        }
        double sxy = 0.0, sxx = 0.0;
        for (std::size_t i = 0; i < log_eps.size(); ++i) {
            sxy += (log_eps[i] - mx) * (log_nstar[i] - my);
            sxx += (log_eps[i] - mx) * (log_eps[i] - mx);
        }
        double slope = sxy / sxx;
        study.checks.push_back(make_result("snr/sample_complexity_loglog_slope", slope, -1.0,
                                           0.0, 0.15, seed, long(variants.size())));
    }
    return study;
}

// ---------------------------------------------------------------------------
// Low-signal subspace analysis
// ---------------------------------------------------------------------------

struct SubspaceAnalysis {
    Eigen::MatrixXd sigma_succ;   // p x p, success-conditioned score second moment
    Eigen::VectorXd eigenvalues;  // descending
    double eta = 0.0;
    Eigen::MatrixXd projector;    // onto span of eigenvectors with eigenvalue < eta
    int k = 0;                    // dim(S_low)
};

// Success-conditioned second moment of the representation score at (b0, w),
// with rollout probabilities frozen at d0.
inline Eigen::MatrixXd sigma_succ_at(const PolicyParams& theta_w, const BaseDistribution& d0) {
    int p = theta_w.p();
    Eigen::MatrixXd sigma = Eigen::MatrixXd::Zero(p, p);
    for (std::size_t xi = 0; xi < d0.instances.size(); ++xi) {
        PromptState x = initial_prompt(std::make_shared<TaskInstance>(d0.instances[xi]));
        ActionDist dist_w = build_action_dist(theta_w, *d0.env, x);
        for (std::int64_t yi = 0; yi < d0.n_responses; ++yi) {
            std::size_t f = d0.flat(xi, yi);
            if (d0.rewards[f] != 1.0 || d0.joint[f] == 0.0) continue;
            std::vector<double> s = score_repr(theta_w, dist_w, yi);
            Eigen::Map<Eigen::VectorXd> sv(s.data(), p);
            sigma += (d0.joint[f] / d0.epsilon0) * (sv * sv.transpose());
        }
    }
    return sigma;
}

inline SubspaceAnalysis analyze_subspace(const PolicyParams& theta0, const BaseDistribution& d0,
                                         double eta_fraction = 1e-3) {
    if (d0.epsilon0 <= 0.0)
        throw std::invalid_argument("analyze_subspace: no success support (eps0 = 0)");
    SubspaceAnalysis out;
    out.sigma_succ = sigma_succ_at(theta0, d0);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(out.sigma_succ);
    // SelfAdjointEigenSolver returns ascending order; flip to descending
    Eigen::VectorXd ev = es.eigenvalues().reverse();
    out.eigenvalues = ev;
    out.eta = eta_fraction * std::max(ev(0), 0.0);
    int p = int(out.sigma_succ.rows());
    out.projector = Eigen::MatrixXd::Zero(p, p);
    out.k = 0;
    for (int i = 0; i < p; ++i) {
        double lambda = es.eigenvalues()(i);
        if (lambda < out.eta) {
            Eigen::VectorXd v = es.eigenvectors().col(i);
            out.projector += v * v.transpose();
            ++out.k;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Low-signal progress bounds under frozen d0 (exact ascent)
// ---------------------------------------------------------------------------

inline std::vector<CheckResult> check_low_signal_progress(const PolicyParams& theta0,
                                                          const BaseDistribution& d0,
                                                          const Eigen::MatrixXd& projector,
                                                          double rho, int T,
                                                          std::uint64_t seed) {
    int p = theta0.p();
    PolicyParams theta = theta0;
    Eigen::VectorXd w0 = Eigen::Map<const Eigen::VectorXd>(theta0.w.data(), p);
    double worst_lemma_violation = -1e300;
    NeumaierSum bound_sum;
    for (int t = 0; t < T; ++t) {
        // exact fixed-d0 reward gradient in w at the current parameters
        Eigen::VectorXd g = Eigen::VectorXd::Zero(p);
        for (std::size_t xi = 0; xi < d0.instances.size(); ++xi) {
            PromptState x =
                initial_prompt(std::make_shared<TaskInstance>(d0.instances[xi]));
            ActionDist dist_w = build_action_dist(theta, *d0.env, x);
            for (std::int64_t yi = 0; yi < d0.n_responses; ++yi) {
                std::size_t f = d0.flat(xi, yi);
                if (d0.rewards[f] == 0.0 || d0.joint[f] == 0.0) continue;
                std::vector<double> s = score_repr(theta, dist_w, yi);
                g += (d0.joint[f] * d0.rewards[f]) * Eigen::Map<Eigen::VectorXd>(s.data(), p);
            }
        }
        Eigen::MatrixXd sigma = sigma_succ_at(theta, d0);
        Eigen::MatrixXd proj_sigma = projector * sigma * projector;
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(proj_sigma);
        double opnorm = std::max(0.0, es.eigenvalues().maxCoeff());
        double lhs = (projector * g).norm();
        double rhs = d0.epsilon0 * std::sqrt(opnorm);
        worst_lemma_violation = std::max(worst_lemma_violation, lhs - rhs);
        bound_sum.add(std::sqrt(opnorm));

        Eigen::VectorXd w = Eigen::Map<Eigen::VectorXd>(theta.w.data(), p);
        w += rho * g;
        Eigen::Map<Eigen::VectorXd>(theta.w.data(), p) = w;
    }
    Eigen::VectorXd wT = Eigen::Map<const Eigen::VectorXd>(theta.w.data(), p);
    double progress = (projector * (wT - w0)).norm();
    double theorem_bound = rho * d0.epsilon0 * bound_sum.value();

    std::vector<CheckResult> out;
    CheckResult lemma = make_result("low_signal/projected_gradient_lemma",
                                    std::max(worst_lemma_violation, 0.0), 0.0, 0.0, 1e-9, seed, T,
                                    "max over steps of |Pi g| - eps0 sqrt(|Pi Sigma Pi|_op)");
    lemma.pass = worst_lemma_violation <= 1e-9;
    out.push_back(lemma);
    CheckResult theorem = make_result(
        "low_signal/progress_theorem", progress, theorem_bound, 0.0, 0.0, seed, T,
        "cumulative excitation sum = " + std::to_string(bound_sum.value()));
    theorem.pass = progress <= theorem_bound + 1e-9;
    theorem.tolerance = 1e-9;
    out.push_back(theorem);
    return out;
}

// ---------------------------------------------------------------------------
// FM movement identity under frozen scores
// ---------------------------------------------------------------------------

struct FmMoments {
    Eigen::VectorXd mean;        // m_FM
    Eigen::MatrixXd covariance;  // C_FM (centered)
    // projected-score table for sampling: s_proj[(x,y,c)] = Pi s_FM
    std::vector<Eigen::VectorXd> projected_scores;
    std::vector<double> joint;   // d0(x,y) * feeder(c | x,y)
};

inline FmMoments fm_moments(const PolicyParams& theta0, const BaseDistribution& d0,
                            const Eigen::MatrixXd& projector) {
    int p = theta0.p();
    int nc = theta0.n_critiques;
    FmMoments out;
    out.mean = Eigen::VectorXd::Zero(p);
    out.covariance = Eigen::MatrixXd::Zero(p, p);
    std::vector<Eigen::VectorXd> scores;
    Response y;
    for (std::size_t xi = 0; xi < d0.instances.size(); ++xi) {
        PromptState x = initial_prompt(std::make_shared<TaskInstance>(d0.instances[xi]));
        for (std::int64_t yi = 0; yi < d0.n_responses; ++yi) {
            std::size_t f = d0.flat(xi, yi);
            y.tokens = d0.env->tokens_of_index(yi);
            CritiqueDist cd = build_critique_dist(theta0, *d0.env, x, y);
            auto feeder_row = d0.env->feedback_distribution(x, y);
            for (int c = 0; c < nc; ++c) {
                double w = d0.joint[f] * feeder_row[c];
                std::vector<double> s = critique_score(theta0, cd, c);
                Eigen::VectorXd sv = Eigen::Map<Eigen::VectorXd>(s.data(), p);
                out.mean += w * sv;
                scores.push_back(std::move(sv));
                out.joint.push_back(w);
            }
        }
    }
    for (std::size_t i = 0; i < scores.size(); ++i) {
        Eigen::VectorXd centered = scores[i] - out.mean;
        out.covariance += out.joint[i] * (centered * centered.transpose());
        out.projected_scores.push_back(projector * scores[i]);
    }
    return out;
}

inline std::vector<CheckResult> check_fm_movement(const FmMoments& moments,
                                                  const Eigen::MatrixXd& projector, double rho,
                                                  double lambda, int T, long reps,
                                                  std::uint64_t seed, const std::string& label) {
    Eigen::MatrixXd proj_cov = projector * moments.covariance * projector;
    double trace_term = proj_cov.trace();
    double drift_term = (projector * moments.mean).squaredNorm();
    double predicted = rho * rho * lambda * lambda *
                       (double(T) * trace_term + double(T) * double(T) * drift_term);

    AliasTable sampler(moments.joint);
    RngStream rng = RngStream(seed).child(6);
    double sum = 0.0, sum2 = 0.0;
    int p = int(projector.rows());
    for (long rep = 0; rep < reps; ++rep) {
        Eigen::VectorXd acc = Eigen::VectorXd::Zero(p);
        for (int t = 0; t < T; ++t) acc += moments.projected_scores[sampler.sample(rng)];
        double v = rho * rho * lambda * lambda * acc.squaredNorm();
        sum += v;
        sum2 += v * v;
    }
    double mean = sum / double(reps);
    double se = std::sqrt(std::max(0.0, sum2 / reps - mean * mean) / double(reps));

    std::vector<CheckResult> out;
    out.push_back(make_result("fm_movement/" + label, mean, predicted, se,
                              std::max(4.0 * se, 0.05 * predicted), seed, reps,
                              "tr(Pi C Pi) = " + std::to_string(trace_term) +
                                  ", |Pi m|^2 = " + std::to_string(drift_term)));
    return out;
}

// ---------------------------------------------------------------------------
// Importance-weight tail statistics after one feedback round
// ---------------------------------------------------------------------------

inline std::vector<CheckResult> iw_tail_stats(const PolicyParams& theta, const Environment& env,
                                              const TaskInstance& x0, long M,
                                              std::uint64_t seed) {
    RngStream rng = RngStream(seed).child(7);
    auto ip = std::make_shared<TaskInstance>(x0);
    PromptState prompt0 = initial_prompt(ip);
    ActionDist dist0 = build_action_dist(theta, env, prompt0);
    Response y0;
    y0.tokens = env.tokens_of_index(dist0.sample_index(rng));
    Critique c = env.feedback(prompt0, y0, rng);
    PromptState prompt1 = advance_prompt(prompt0, y0, c);
    ActionDist dist1 = build_action_dist(theta, env, prompt1);

    NeumaierSum m2_exact, chi2;
    for (std::int64_t i = 0; i < dist1.n; ++i) {
        double w = sequence_weight(dist0, dist1, i);
        m2_exact.add(dist1.prob[i] * w * w);
        double diff = dist0.prob[i] - dist1.prob[i];
        chi2.add(diff * diff / dist1.prob[i]);
    }

    double sum_w2 = 0.0, sum_log = 0.0, sum_log2 = 0.0;
    for (long i = 0; i < M; ++i) {
        std::int64_t yi = dist1.sample_index(rng);
        double lw = dist0.logprob[yi] - dist1.logprob[yi];
        double w = std::exp(lw);
        sum_w2 += w * w;
        sum_log += lw;
        sum_log2 += lw * lw;
    }
    double mc_m2 = sum_w2 / M;
    double log_mean = sum_log / M;
    double log_std = std::sqrt(std::max(0.0, sum_log2 / M - log_mean * log_mean));

    std::vector<CheckResult> out;
    out.push_back(make_result("iw_tails/exact_second_moment_vs_chi2", m2_exact.value(),
                              1.0 + chi2.value(), 0.0, 1e-9, seed, dist1.n));
    // MC second moment within 4 se of exact
    double mc_var = 0.0;
    {
        // crude se via batch means over 20 batches
        // (heavy-tailed W^2 makes the naive variance unstable)
        long per = M / 20;
        RngStream rng2 = RngStream(seed).child(8);
        std::vector<double> batch(20, 0.0);
        for (int bi = 0; bi < 20; ++bi) {
            double s = 0.0;
            for (long i = 0; i < per; ++i) {
                std::int64_t yi = dist1.sample_index(rng2);
                double w = std::exp(dist0.logprob[yi] - dist1.logprob[yi]);
                s += w * w;
            }
            batch[bi] = s / double(per);
        }
        double bm = 0.0;
        for (double v : batch) bm += v / 20.0;
        for (double v : batch) mc_var += (v - bm) * (v - bm) / 19.0;
        mc_m2 = bm;
    }
    double mc_se = std::sqrt(mc_var / 20.0);
    out.push_back(make_result("iw_tails/mc_second_moment", mc_m2, m2_exact.value(), mc_se,
                              4.0 * mc_se, seed, M,
                              "log-ratio mean = " + std::to_string(log_mean) +
                                  ", std = " + std::to_string(log_std)));
    return out;
}

}  // namespace rltf::theory
