// The standard verification suite behind `verify`: fixed environments and
// parameters, budget-scaled sample counts, JSON report serialization, and
// the injected-bug fixture proving the checks can fail.

#pragma once

#include <fstream>
#include <json.hpp>
#include <string>
#include <vector>

#include "rltf/theorycheck.hpp"

namespace rltf::theory {

enum class Budget { Quick, Full };
enum class InjectedBug { None, ShrinkageMislabeled };

struct SuiteFixtures {
    Environment bias_env;
    PolicyParams bias_theta;
    TaskInstance bias_instance;

    Environment bandit_env;
    PolicyParams bandit_theta;

    static SuiteFixtures make(std::uint64_t seed) {
        EnvSpec bs;
        bs.kind = EnvKind::BitVectorGuess;
        bs.response_length = 3;
        bs.alphabet_size = 2;
        bs.critique_mode = CritiqueMode::Localizing;
        bs.instance_seed = 101;
        bs.evidence_scale = 0.6;
        Environment bias_env(bs);
        PolicyParams bias_theta =
            PolicyParams::init(2, bias_env, 0.45, RngStream(seed).child(11), 0.2);

        EnvSpec cs;
        cs.kind = EnvKind::SyntheticCritiqueBandit;
        cs.response_length = 3;
        cs.alphabet_size = 10;  // |Y| = 1000
        cs.epsilon0 = 0.04;
        cs.error_types = 3;
        cs.bandit_feature_dim = 9;
        cs.instance_seed = 202;
        Environment bandit_env(cs);
        PolicyParams bandit_theta =
            PolicyParams::init(3, bandit_env, 0.05, RngStream(seed).child(12), 0.3);

        return SuiteFixtures{std::move(bias_env), std::move(bias_theta),
                             bias_env_instance(bs), std::move(bandit_env),
                             std::move(bandit_theta)};
    }

  private:
    static TaskInstance bias_env_instance(const EnvSpec& bs) {
        return Environment(bs).instance_at(0);
    }
};

// Emission matrix whose moments are mismatched with a fresh critique head, so
// the FM drift assumption holds by construction.
inline FeederSpec drifty_feeder(int error_types) {
    FeederSpec f;
    f.critique_alphabet = error_types + 1;
    f.emission.assign(error_types + 1, std::vector<double>(f.critique_alphabet, 0.0));
    f.emission[0][f.critique_alphabet - 1] = 1.0;
    for (int e = 0; e < error_types; ++e) {
        auto& row = f.emission[1 + e];
        for (double& p : row) p = 0.1 / (f.critique_alphabet - 1);
        row[e] = 0.9;
    }
    f.validate();
    return f;
}

// Nested success sets for the sample-complexity scaling study, plus the
// shared study direction.  The master set is a narrow band of atoms whose
// score projections on the study direction nearly coincide, and the smaller
// sets are stratified thinnings of it: the success-conditioned moments of
// the studied statistic are then invariant across scales, so the measured
// N* isolates the rare-event 1/eps0 dependence the bound describes.
struct SnrConstruction {
    std::vector<SnrVariant> variants;
    std::vector<double> study_direction;
};

inline SnrConstruction nested_snr_variants(const PolicyParams& theta,
                                           const BaseDistribution& d0, std::uint64_t seed,
                                           std::size_t master_size = 40) {
    auto g_table = score_table(theta, d0);
    int dim = theta.d + theta.p();
    RngStream rng = RngStream(seed).child(13);
    std::vector<double> u = random_unit_direction(dim, rng);

    std::vector<std::size_t> order(d0.joint.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<double> proj(d0.joint.size());
    for (std::size_t f = 0; f < proj.size(); ++f) {
        double t = 0.0;
        for (int k = 0; k < dim; ++k) t += g_table[f][k] * u[k];
        proj[f] = t;
    }
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return proj[a] > proj[b]; });

    // band just below the extreme top projections (tight, all positive)
    std::size_t band_start = d0.joint.size() / 10;
    if (band_start + master_size > order.size())
        throw std::invalid_argument("nested_snr_variants: response space too small");
    std::vector<std::size_t> master(order.begin() + band_start,
                                    order.begin() + band_start + master_size);

    SnrConstruction out;
    out.study_direction = u;
    out.variants.push_back({"eps_0.04", master});
    std::vector<std::size_t> half, quarter;
    for (std::size_t i = 0; i < master.size(); ++i) {
        if (i % 2 == 0) half.push_back(master[i]);
        if (i % 4 == 0) quarter.push_back(master[i]);
    }
    out.variants.push_back({"eps_0.02", half});
    out.variants.push_back({"eps_0.01", quarter});
    return out;
}

// Bandit instance with geometrically scaled feature columns: the
// success-conditioned score spectrum then spans several decades, so the
// default relative threshold produces a low-signal subspace with small but
// genuinely nonzero excitation (a non-vacuous bound check).
inline TaskInstance anisotropic_bandit_instance(const Environment& env) {
    TaskInstance inst = env.instance_at(0);
    int m = env.feature_dim();
    std::int64_t n = env.response_space_size();
    auto table = std::make_shared<std::vector<double>>(std::size_t(n) * m, 0.0);
    for (std::int64_t y = 0; y < n; ++y) {
        for (int k = 0; k + 1 < m; ++k)
            (*table)[y * m + k] =
                rademacher(0xa15u, std::uint64_t(y), std::uint64_t(k)) * std::pow(2.0, -k);
        (*table)[y * m + m - 1] = 1.0;
    }
    auto task = std::make_shared<BanditTask>(*inst.bandit);
    task->explicit_features = table;
    task->explicit_feature_dim = m;
    inst.bandit = task;
    return inst;
}

inline TheoryReport standard_suite(Budget budget, std::uint64_t seed,
                                   InjectedBug bug = InjectedBug::None) {
    const long M = budget == Budget::Full ? 200000 : 20000;
    const long M_collapse = budget == Budget::Full ? 100000 : 20000;
    const long fm_reps = 20000;
    const int n_directions = 200;
    const long sign_reps = budget == Budget::Full ? 600 : 400;
    const long bernstein_reps = budget == Budget::Full ? 400 : 150;

    SuiteFixtures fx = SuiteFixtures::make(seed);
    TheoryReport report;
    report.seed = seed;
    auto add = [&](const std::vector<CheckResult>& results) {
        report.checks.insert(report.checks.end(), results.begin(), results.end());
    };

    // exact identities
    add(check_exact_identities(fx.bias_env, fx.bias_theta, seed));

    // estimator bias / shrinkage with common random numbers, N = 4
    {
        WeightingSpec full_is{WeightingSpec::Kind::FullIS};
        std::vector<BiasVariant> variants = {
            {"full_is+first_turn_mean_N4", AdvKind::FirstTurnMean, full_is, 1.0, std::nullopt},
            {"full_is+second_turn_mean_N4", AdvKind::SecondTurnMean, full_is, 0.75, std::nullopt},
            {"full_is+second_turn_loo_N4", AdvKind::SecondTurnLOO, full_is, 1.0, std::nullopt},
            {"full_is+raw_reward_N4", AdvKind::RawReward, full_is, 1.0, std::nullopt},
        };
        if (bug == InjectedBug::ShrinkageMislabeled) {
            // the estimator labeled "second_turn_mean" silently computes the
            // leave-one-out correction: the shrinkage check must catch it
            variants[1].mislabeled_as = AdvKind::SecondTurnLOO;
        }
        add(check_bias(fx.bias_env, fx.bias_theta, fx.bias_instance, variants, 4, M, seed));

        std::vector<BiasVariant> v8 = {
            {"full_is+second_turn_mean_N8", AdvKind::SecondTurnMean, full_is, 0.875,
             std::nullopt}};
        add(check_bias(fx.bias_env, fx.bias_theta, fx.bias_instance, v8, 8, M / 2, seed));
    }

    // collapse frequency
    add(check_collapse(0.9, 8, M_collapse, seed));
    add(check_collapse(0.99, 8, M_collapse, seed));

    // variance gap
    add({check_variance_gap(0.5, /*coupled=*/false, 4, M_collapse, seed)});
    add({check_variance_gap(0.5, /*coupled=*/true, 4, M_collapse, seed)});

    // SNR bounds and sample-complexity scaling on the bandit
    {
        BaseDistribution d0 = build_base_distribution(fx.bandit_theta, fx.bandit_env,
                                                      fx.bandit_env.sample_instances(1));
        SnrConstruction snr = nested_snr_variants(fx.bandit_theta, d0, seed);
        add(check_snr(fx.bandit_theta, d0, snr.variants, n_directions, bernstein_reps,
                      sign_reps, seed, snr.study_direction)
                .checks);
    }

    // low-signal progress bounds (exact inequalities, anisotropic features)
    {
        TaskInstance inst = anisotropic_bandit_instance(fx.bandit_env);
        BaseDistribution d0 = build_base_distribution(fx.bandit_theta, fx.bandit_env, {inst});
        SubspaceAnalysis sub = analyze_subspace(fx.bandit_theta, d0);
        add(check_low_signal_progress(fx.bandit_theta, d0, sub.projector, /*rho=*/0.5,
                                      /*T=*/100, seed));
    }

    // FM movement identity plus the matched-moments control
    {
        Environment env = fx.bandit_env;
        env.set_feeder(drifty_feeder(env.spec().error_types));
        PolicyParams theta = fx.bandit_theta;
        BaseDistribution d0 = build_base_distribution(theta, env, env.sample_instances(1));
        SubspaceAnalysis sub = analyze_subspace(theta, d0);
        FmMoments moments = fm_moments(theta, d0, sub.projector);
        add(check_fm_movement(moments, sub.projector, 0.1, 1.0, 64, fm_reps, seed, "drifty"));

        PolicyParams uniform_head = theta;
        std::fill(uniform_head.psi.begin(), uniform_head.psi.end(), 0.0);
        FmMoments control = fm_moments(uniform_head, d0, sub.projector);
        auto results =
            check_fm_movement(control, sub.projector, 0.1, 1.0, 64, 2000, seed, "matched_control");
        results[0].tolerance = 1e-12;
        results[0].pass = std::abs(results[0].measured) < 1e-12 &&
                          std::abs(results[0].predicted) < 1e-12;
        add(results);
    }

    // importance-weight tails
    add(iw_tail_stats(fx.bias_theta, fx.bias_env, fx.bias_instance, M_collapse, seed));

    return report;
}

inline nlohmann::json report_to_json(const TheoryReport& report) {
    nlohmann::json j;
    j["seed"] = report.seed;
    j["all_pass"] = report.all_pass();
    j["checks"] = nlohmann::json::array();
    for (const CheckResult& c : report.checks) {
        j["checks"].push_back({{"name", c.name},
                               {"measured", c.measured},
                               {"predicted", c.predicted},
                               {"se", c.se},
                               {"tolerance", c.tolerance},
                               {"pass", c.pass},
                               {"seed", c.seed},
                               {"samples", c.samples},
                               {"note", c.note}});
    }
    return j;
}

inline void write_theory_report(const std::string& path, const TheoryReport& report) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write theory report to " + path);
    out << report_to_json(report).dump(2) << "\n";
}

}  // namespace rltf::theory
