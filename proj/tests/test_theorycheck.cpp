#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <memory>

#include "rltf/theory_suite.hpp"
#include "rltf/theorycheck.hpp"

using namespace rltf;
using namespace rltf::theory;

namespace {

Environment small_bandit(double eps0, int y_count = 256, int m = 5, int seed = 77) {
    EnvSpec s;
    s.kind = EnvKind::SyntheticCritiqueBandit;
    s.response_length = 4;
    s.alphabet_size = 4;  // |Y| = 256
    (void)y_count;
    s.epsilon0 = eps0;
    s.bandit_feature_dim = m;
    s.error_types = 2;
    s.instance_seed = std::uint64_t(seed);
    return Environment(s);
}

}  // namespace

TEST_CASE("alias table reproduces its distribution") {
    std::vector<double> probs = {0.5, 0.25, 0.125, 0.125};
    AliasTable table(probs);
    RngStream rng(1);
    std::vector<long> counts(4, 0);
    const long n = 200000;
    for (long i = 0; i < n; ++i) counts[table.sample(rng)]++;
    for (int k = 0; k < 4; ++k) {
        double se = std::sqrt(probs[k] * (1 - probs[k]) / n);
        REQUIRE(std::abs(double(counts[k]) / n - probs[k]) < 4 * se);
    }
}

TEST_CASE("collapse frequencies match the closed form") {
    // p = 0.5, N = 2: 0.25 + 0.25
    auto r1 = check_collapse(0.5, 2, 40000, 3);
    REQUIRE(r1[0].predicted == Catch::Approx(0.5).margin(1e-12));
    REQUIRE(r1[0].pass);
    // p = 0.9, N = 8: exact evaluation of p^N + (1-p)^N
    auto r2 = check_collapse(0.9, 8, 40000, 4);
    REQUIRE(r2[0].predicted == Catch::Approx(0.43046722).margin(1e-8));
    REQUIRE(r2[0].pass);
    // p = 1 edge: constant groups always collapse
    auto r3 = check_collapse(1.0, 8, 2000, 5);
    REQUIRE(r3[0].measured == 1.0);
    REQUIRE(r3[0].pass);
    // asymptotic note appears for p >= 0.99 and is within 10% relative
    auto r4 = check_collapse(0.99, 8, 100000, 6);
    REQUIRE(r4.size() == 2);
    REQUIRE(r4[1].predicted == Catch::Approx(0.08).margin(1e-12));
    REQUIRE(r4[1].pass);
}

TEST_CASE("variance gap matches the independence-regime formula") {
    // independent turns, p0 = 0.5, N = 4: (1 - 1/4) * 0.25
    CheckResult ind = check_variance_gap(0.5, false, 4, 200000, 7);
    REQUIRE(ind.predicted == Catch::Approx(0.1875).margin(1e-12));
    REQUIRE(ind.pass);
    // perfectly coupled turns: 0.1875 - 2 * 0.25
    CheckResult cpl = check_variance_gap(0.5, true, 4, 200000, 8);
    REQUIRE(cpl.predicted == Catch::Approx(-0.3125).margin(1e-12));
    REQUIRE(cpl.pass);
    // deterministic first turn: zero gap on both sides
    CheckResult det = check_variance_gap(1.0, false, 4, 20000, 9);
    REQUIRE(det.predicted == 0.0);
    REQUIRE(det.measured == 0.0);
    REQUIRE(det.pass);
}

TEST_CASE("two-point chi-squared hand example") {
    // E_q[W^2] = sum p^2 / q with p = (0.9, 0.1), q = (0.5, 0.5)
    double m2 = 0.81 / 0.5 + 0.01 / 0.5;
    double chi2 = (0.4 * 0.4) / 0.5 + (0.4 * 0.4) / 0.5;
    REQUIRE(m2 == Catch::Approx(1.64).margin(1e-15));
    REQUIRE(1.0 + chi2 == Catch::Approx(m2).margin(1e-15));
}

TEST_CASE("subspace analysis: projector algebra and rank") {
    Environment env = small_bandit(0.5);
    PolicyParams theta = PolicyParams::init(2, env, 0.3, RngStream(11), 0.2);
    BaseDistribution d0 = build_base_distribution(theta, env, env.sample_instances(1));

    SECTION("well-conditioned success scores leave no low-signal directions") {
        SubspaceAnalysis sub = analyze_subspace(theta, d0);
        // the score span has dimension p - (m - ...) >= 1; directions outside
        // it are exactly zero eigenvalues, so k counts at least those
        REQUIRE(sub.k >= 0);
        Eigen::MatrixXd pi = sub.projector;
        REQUIRE((pi * pi - pi).norm() < 1e-10);
        REQUIRE((pi - pi.transpose()).norm() < 1e-10);
        REQUIRE(std::abs(pi.trace() - double(sub.k)) < 1e-10);
        // Pi Sigma Pi has operator norm below eta by construction
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(pi * sub.sigma_succ * pi);
        REQUIRE(es.eigenvalues().maxCoeff() < sub.eta + 1e-12);
    }

    SECTION("a single success atom gives a rank-one spectrum and k = p - 1") {
        TaskInstance inst = env.instance_at(0);
        auto task = std::make_shared<BanditTask>(*inst.bandit);
        task->success_ids = {inst.bandit->success_ids.front()};
        TaskInstance single = inst;
        single.bandit = task;
        BaseDistribution d1 = build_base_distribution(theta, env, {single});
        SubspaceAnalysis sub = analyze_subspace(theta, d1);
        REQUIRE(sub.k == theta.p() - 1);
        REQUIRE(sub.eigenvalues(0) > 0.0);
        REQUIRE(std::abs(sub.eigenvalues(1)) < 1e-12 * sub.eigenvalues(0));
    }

    SECTION("no success support is rejected") {
        TaskInstance inst = env.instance_at(0);
        auto task = std::make_shared<BanditTask>(*inst.bandit);
        task->success_ids.clear();
        TaskInstance none = inst;
        none.bandit = task;
        BaseDistribution dz = build_base_distribution(theta, env, {none});
        REQUIRE_THROWS_AS(analyze_subspace(theta, dz), std::invalid_argument);
    }
}

TEST_CASE("low-signal progress bounds hold with exact quantities") {
    Environment env = small_bandit(0.05);
    PolicyParams theta = PolicyParams::init(2, env, 0.15, RngStream(12), 0.2);
    TaskInstance inst = theory::anisotropic_bandit_instance(env);
    BaseDistribution d0 = build_base_distribution(theta, env, {inst});
    SubspaceAnalysis sub = analyze_subspace(theta, d0);

    auto results = check_low_signal_progress(theta, d0, sub.projector, 0.4, 25, 13);
    REQUIRE(results.size() == 2);
    REQUIRE(results[0].pass);  // lemma at every step
    REQUIRE(results[1].pass);  // cumulative theorem bound

    // at initialization the lemma instantiates to eps0 sqrt(eta)
    Eigen::VectorXd g = Eigen::VectorXd::Zero(theta.p());
    {
        PromptState x = initial_prompt(std::make_shared<TaskInstance>(inst));
        ActionDist dist = build_action_dist(theta, env, x);
        for (std::int64_t yi = 0; yi < d0.n_responses; ++yi) {
            std::size_t f = d0.flat(0, yi);
            if (d0.rewards[f] == 0.0) continue;
            std::vector<double> s = score_repr(theta, dist, yi);
            g += d0.joint[f] * Eigen::Map<Eigen::VectorXd>(s.data(), theta.p());
        }
    }
    REQUIRE((sub.projector * g).norm() <= d0.epsilon0 * std::sqrt(sub.eta) + 1e-12);

    // T = 1: the theorem bound reduces to the lemma bound
    auto t1 = check_low_signal_progress(theta, d0, sub.projector, 0.4, 1, 13);
    Eigen::MatrixXd ps = sub.projector * sigma_succ_at(theta, d0) * sub.projector;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(ps);
    double lemma_bound = 0.4 * d0.epsilon0 * std::sqrt(std::max(0.0, es.eigenvalues().maxCoeff()));
    REQUIRE(t1[1].predicted == Catch::Approx(lemma_bound).margin(1e-12));
}

TEST_CASE("fm movement identity on synthetic moments") {
    // rho = 0.1, lambda = 1, T = 10, tr(Pi C Pi) = 2, |Pi m|^2 = 0.25
    // four-point score distribution with exactly those moments
    FmMoments moments;
    int p = 2;
    moments.mean = Eigen::VectorXd::Zero(p);
    moments.mean(0) = 0.5;
    moments.covariance = Eigen::MatrixXd::Zero(p, p);
    moments.covariance(0, 0) = 1.5;
    moments.covariance(1, 1) = 0.5;
    double a = std::sqrt(3.0), b = 1.0;
    std::vector<Eigen::Vector2d> pts = {{0.5 + a, 0.0}, {0.5 - a, 0.0}, {0.5, b}, {0.5, -b}};
    for (const auto& pt : pts) {
        moments.projected_scores.push_back(pt);
        moments.joint.push_back(0.25);
    }
    Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(p, p);

    auto r10 = check_fm_movement(moments, eye, 0.1, 1.0, 10, 20000, 21, "synthetic_T10");
    REQUIRE(r10[0].predicted == Catch::Approx(0.45).margin(1e-12));
    REQUIRE(r10[0].pass);

    // T = 1: the identity reduces to E |Pi s|^2 = tr + |m|^2
    auto r1 = check_fm_movement(moments, eye, 0.1, 1.0, 1, 20000, 22, "synthetic_T1");
    double direct = 0.0;
    for (const auto& pt : pts) direct += 0.25 * pt.squaredNorm();
    REQUIRE(r1[0].predicted == Catch::Approx(0.01 * direct).margin(1e-12));
    REQUIRE(r1[0].pass);
}

TEST_CASE("fm moments enumeration matches the score identity for a matched head") {
    Environment env = small_bandit(0.1);
    PolicyParams theta = PolicyParams::init(2, env, 0.3, RngStream(14), 0.0);  // uniform head
    BaseDistribution d0 = build_base_distribution(theta, env, env.sample_instances(1));
    Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(theta.p(), theta.p());
    FmMoments moments = fm_moments(theta, d0, eye);
    // with all class embeddings equal the critique score is identically zero
    REQUIRE(moments.mean.norm() < 1e-14);
    REQUIRE(moments.covariance.norm() < 1e-14);
}

TEST_CASE("standard suite passes, reproduces bitwise, and catches the injected bug") {
    TheoryReport a = standard_suite(Budget::Quick, 5);
    REQUIRE(a.all_pass());
    TheoryReport b = standard_suite(Budget::Quick, 5);
    REQUIRE(a.checks.size() == b.checks.size());
    for (std::size_t i = 0; i < a.checks.size(); ++i) {
        REQUIRE(a.checks[i].name == b.checks[i].name);
        REQUIRE(a.checks[i].measured == b.checks[i].measured);  // bitwise
    }

    TheoryReport bugged = standard_suite(Budget::Quick, 5, InjectedBug::ShrinkageMislabeled);
    REQUIRE_FALSE(bugged.all_pass());
    bool shrinkage_failed = false;
    for (const CheckResult& c : bugged.checks)
        if (c.name == "bias/full_is+second_turn_mean_N4" && !c.pass) shrinkage_failed = true;
    REQUIRE(shrinkage_failed);

    nlohmann::json j = report_to_json(a);
    REQUIRE(j["all_pass"] == true);
    REQUIRE(j["checks"].size() == a.checks.size());
}
