// Log-linear (softmax) policy with a learned linear representation and a
// critique head sharing that representation.
//
//   z_w(x, y) = Mat(w) * phi0(x, y)            Mat(w): d x m, phi0 in R^m
//   pi(y|x)   = softmax_y( tau * <b, z_w(x,y)> )
//   p(c|x,y)  = softmax_c( tau * <u_psi(c), z_w(x,y)> )
//
// Parameter layout (used by gradients, optimizers and checkpoints):
//   [ b (d) | w (d*m, row-major) | psi (|C| rows of d) ]
//
// All expectations over the response space are exact enumerations; sampling
// is inverse-CDF over the enumeration order.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <stdexcept>
#include <string>
#include <vector>

#include "rltf/core.hpp"
#include "rltf/envs.hpp"
#include "rltf/rng.hpp"

namespace rltf {

struct PolicyParams {
    int d = 0;          // representation dimension
    int m = 0;          // base feature dimension
    int n_critiques = 0;
    double tau = 1.0;
    std::vector<double> b;    // d
    std::vector<double> w;    // d*m row-major: w[i*m + j]
    std::vector<double> psi;  // n_critiques*d row-major: psi[c*d + i]

    int p() const { return d * m; }
    int total_params() const { return d + p() + n_critiques * d; }
    int b_offset() const { return 0; }
    int w_offset() const { return d; }
    int psi_offset() const { return d + p(); }

    static PolicyParams zeros(int d, int m, int n_critiques, double tau = 1.0) {
        if (d < 1 || m < 1 || n_critiques < 1 || tau <= 0.0)
            throw std::invalid_argument("PolicyParams: bad dimensions or tau");
        PolicyParams t;
        t.d = d;
        t.m = m;
        t.n_critiques = n_critiques;
        t.tau = tau;
        t.b.assign(d, 0.0);
        t.w.assign(std::size_t(d) * m, 0.0);
        t.psi.assign(std::size_t(n_critiques) * d, 0.0);
        return t;
    }

    // Zero-mean i.i.d. init with the given scales; psi defaults to a uniform
    // critique head.
    static PolicyParams init(int d, const Environment& env, double scale, RngStream rng,
                             double psi_scale = 0.0, double tau = 1.0) {
        PolicyParams t = zeros(d, env.feature_dim(), env.critique_alphabet_size(), tau);
        for (auto& v : t.b) v = scale * rng.next_gaussian();
        for (auto& v : t.w) v = scale * rng.next_gaussian();
        if (psi_scale != 0.0)
            for (auto& v : t.psi) v = psi_scale * rng.next_gaussian();
        return t;
    }

    void check_compatible(const Environment& env) const {
        if (m != env.feature_dim())
            throw std::invalid_argument("policy/environment feature dimension mismatch");
        if (n_critiques != env.critique_alphabet_size())
            throw std::invalid_argument("policy/environment critique alphabet mismatch");
    }

    std::vector<double> flatten() const {
        std::vector<double> v;
        v.reserve(total_params());
        v.insert(v.end(), b.begin(), b.end());
        v.insert(v.end(), w.begin(), w.end());
        v.insert(v.end(), psi.begin(), psi.end());
        return v;
    }

    void unflatten(const std::vector<double>& v) {
        if (static_cast<int>(v.size()) != total_params())
            throw std::invalid_argument("unflatten: size mismatch");
        std::copy(v.begin(), v.begin() + d, b.begin());
        std::copy(v.begin() + d, v.begin() + d + p(), w.begin());
        std::copy(v.begin() + d + p(), v.end(), psi.begin());
    }

    // z_w(x,y) for precomputed features.
    void z_from_features(const double* phi, double* out) const {
        for (int i = 0; i < d; ++i) {
            double s = 0.0;
            const double* row = w.data() + std::size_t(i) * m;
            for (int j = 0; j < m; ++j) s += row[j] * phi[j];
            out[i] = s;
        }
    }
};

inline double logsumexp(const std::vector<double>& v) {
    double mx = *std::max_element(v.begin(), v.end());
    NeumaierSum acc;
    for (double x : v) acc.add(std::exp(x - mx));
    return mx + std::log(acc.value());
}

// Exact categorical distribution over the enumerated response space for one
// prompt, with cached features and moments for score computations.
struct ActionDist {
    std::int64_t n = 0;
    int m = 0;
    int d = 0;
    std::vector<double> features;   // n x m row-major
    std::vector<double> z;          // n x d row-major
    std::vector<double> logprob;    // n
    std::vector<double> prob;       // n
    std::vector<double> feat_mean;  // m, E_pi[phi]
    std::vector<double> z_mean;     // d, E_pi[z]

    const double* phi_row(std::int64_t i) const { return features.data() + i * m; }
    const double* z_row(std::int64_t i) const { return z.data() + i * d; }

    std::int64_t sample_index(RngStream& rng) const {
        double u = rng.next_double();
        double cum = 0.0;
        for (std::int64_t i = 0; i < n; ++i) {
            cum += prob[i];
            if (u < cum) return i;
        }
        return n - 1;
    }
};

inline ActionDist build_action_dist(const PolicyParams& theta, const Environment& env,
                                    const PromptState& x) {
    theta.check_compatible(env);
    ActionDist dist;
    dist.n = env.response_space_size();
    dist.m = theta.m;
    dist.d = theta.d;
    dist.features.resize(dist.n * dist.m);
    dist.z.resize(dist.n * dist.d);
    dist.logprob.resize(dist.n);
    dist.prob.resize(dist.n);

    Response y;
    y.tokens.assign(env.spec().response_length, 0);
    std::vector<double> scores(dist.n);
    for (std::int64_t i = 0; i < dist.n; ++i) {
        y.tokens = env.tokens_of_index(i);
        double* phi = dist.features.data() + i * dist.m;
        env.joint_features(x, y, phi);
        double* zi = dist.z.data() + i * dist.d;
        theta.z_from_features(phi, zi);
        double s = 0.0;
        for (int k = 0; k < theta.d; ++k) s += theta.b[k] * zi[k];
        scores[i] = theta.tau * s;
        if (!std::isfinite(scores[i]))
            throw std::runtime_error("build_action_dist: non-finite policy score");
    }
    double lse = logsumexp(scores);
    for (std::int64_t i = 0; i < dist.n; ++i) {
        dist.logprob[i] = scores[i] - lse;
        dist.prob[i] = std::exp(dist.logprob[i]);
    }
    dist.feat_mean.assign(dist.m, 0.0);
    dist.z_mean.assign(dist.d, 0.0);
    for (std::int64_t i = 0; i < dist.n; ++i) {
        const double* phi = dist.phi_row(i);
        const double* zi = dist.z_row(i);
        for (int j = 0; j < dist.m; ++j) dist.feat_mean[j] += dist.prob[i] * phi[j];
        for (int k = 0; k < dist.d; ++k) dist.z_mean[k] += dist.prob[i] * zi[k];
    }
    return dist;
}

// ---------------------------------------------------------------------------
// Joint-variant operations
// ---------------------------------------------------------------------------

inline double log_prob(const PolicyParams& theta, const Environment& env, const PromptState& x,
                       const Response& y) {
    ActionDist dist = build_action_dist(theta, env, x);
    return dist.logprob[env.token_index(y)];
}

inline Response sample(const PolicyParams& theta, const Environment& env, const PromptState& x,
                       RngStream& rng) {
    ActionDist dist = build_action_dist(theta, env, x);
    std::int64_t i = dist.sample_index(rng);
    Response y;
    y.tokens = env.tokens_of_index(i);
    y.index = i;
    return y;
}

// grad_b log pi = tau * (z(x,y) - E_pi[z])
inline std::vector<double> score_head(const PolicyParams& theta, const ActionDist& dist,
                                      std::int64_t y_index) {
    std::vector<double> g(theta.d);
    const double* zi = dist.z_row(y_index);
    for (int k = 0; k < theta.d; ++k) g[k] = theta.tau * (zi[k] - dist.z_mean[k]);
    return g;
}

inline std::vector<double> score_head(const PolicyParams& theta, const Environment& env,
                                      const PromptState& x, const Response& y) {
    ActionDist dist = build_action_dist(theta, env, x);
    return score_head(theta, dist, env.token_index(y));
}

// grad_w log pi = tau * b outer (phi(x,y) - E_pi[phi]), flattened row-major.
inline std::vector<double> score_repr(const PolicyParams& theta, const ActionDist& dist,
                                      std::int64_t y_index) {
    std::vector<double> g(theta.p());
    const double* phi = dist.phi_row(y_index);
    for (int i = 0; i < theta.d; ++i) {
        double bi = theta.tau * theta.b[i];
        double* row = g.data() + std::size_t(i) * theta.m;
        for (int j = 0; j < theta.m; ++j) row[j] = bi * (phi[j] - dist.feat_mean[j]);
    }
    return g;
}

inline std::vector<double> score_repr(const PolicyParams& theta, const Environment& env,
                                      const PromptState& x, const Response& y) {
    ActionDist dist = build_action_dist(theta, env, x);
    return score_repr(theta, dist, env.token_index(y));
}

// Stacked [score_head; score_repr] written into grad[0 .. d+p) with weight c.
inline void accumulate_policy_score(const PolicyParams& theta, const ActionDist& dist,
                                    std::int64_t y_index, double c, std::vector<double>& grad) {
    const double* zi = dist.z_row(y_index);
    for (int k = 0; k < theta.d; ++k)
        grad[k] += c * theta.tau * (zi[k] - dist.z_mean[k]);
    const double* phi = dist.phi_row(y_index);
    double* wblock = grad.data() + theta.w_offset();
    for (int i = 0; i < theta.d; ++i) {
        double bi = c * theta.tau * theta.b[i];
        double* row = wblock + std::size_t(i) * theta.m;
        for (int j = 0; j < theta.m; ++j) row[j] += bi * (phi[j] - dist.feat_mean[j]);
    }
}

// Fisher information restricted to the head: tau^2 E_x[Cov_pi(z)], averaged
// over the given instances, evaluated exactly by enumeration.
inline std::vector<double> fisher_head(const PolicyParams& theta, const Environment& env,
                                       const std::vector<TaskInstance>& instances) {
    if (instances.empty()) throw std::invalid_argument("fisher_head: no instances");
    int d = theta.d;
    std::vector<double> fisher(std::size_t(d) * d, 0.0);
    for (const TaskInstance& inst : instances) {
        PromptState x = initial_prompt(std::make_shared<TaskInstance>(inst));
        ActionDist dist = build_action_dist(theta, env, x);
        for (std::int64_t i = 0; i < dist.n; ++i) {
            const double* zi = dist.z_row(i);
            for (int a = 0; a < d; ++a)
                for (int b2 = 0; b2 < d; ++b2)
                    fisher[a * d + b2] += dist.prob[i] * (zi[a] - dist.z_mean[a]) *
                                          (zi[b2] - dist.z_mean[b2]);
        }
    }
    double scale = theta.tau * theta.tau / double(instances.size());
    for (double& v : fisher) v *= scale;
    return fisher;
}

// ---------------------------------------------------------------------------
// Critique head
// ---------------------------------------------------------------------------

struct CritiqueDist {
    std::vector<double> logprob;  // per kind
    std::vector<double> prob;
    std::vector<double> z;        // z_w(x,y), d
    std::vector<double> phi;      // phi0(x,y), m
    std::vector<double> u_mean;   // E_{c~p}[u(c)], d
};

inline CritiqueDist build_critique_dist(const PolicyParams& theta, const Environment& env,
                                        const PromptState& x, const Response& y) {
    theta.check_compatible(env);
    CritiqueDist cd;
    cd.phi.resize(theta.m);
    env.joint_features(x, y, cd.phi.data());
    cd.z.resize(theta.d);
    theta.z_from_features(cd.phi.data(), cd.z.data());
    int nc = theta.n_critiques;
    std::vector<double> scores(nc);
    for (int c = 0; c < nc; ++c) {
        const double* u = theta.psi.data() + std::size_t(c) * theta.d;
        double s = 0.0;
        for (int k = 0; k < theta.d; ++k) s += u[k] * cd.z[k];
        scores[c] = theta.tau * s;
    }
    double lse = logsumexp(scores);
    cd.logprob.resize(nc);
    cd.prob.resize(nc);
    cd.u_mean.assign(theta.d, 0.0);
    for (int c = 0; c < nc; ++c) {
        cd.logprob[c] = scores[c] - lse;
        cd.prob[c] = std::exp(cd.logprob[c]);
        const double* u = theta.psi.data() + std::size_t(c) * theta.d;
        for (int k = 0; k < theta.d; ++k) cd.u_mean[k] += cd.prob[c] * u[k];
    }
    return cd;
}

inline double critique_log_prob(const PolicyParams& theta, const Environment& env,
                                const PromptState& x, const Response& y, const Critique& c) {
    if (c.kind < 0 || c.kind >= theta.n_critiques)
        throw std::invalid_argument("critique_log_prob: kind outside the alphabet");
    return build_critique_dist(theta, env, x, y).logprob[c.kind];
}

// grad_w log p(c|x,y) = tau * (u(c) - E_p[u]) outer phi(x,y), flattened.
inline std::vector<double> critique_score(const PolicyParams& theta, const CritiqueDist& cd,
                                          int kind) {
    std::vector<double> g(theta.p());
    const double* u = theta.psi.data() + std::size_t(kind) * theta.d;
    for (int i = 0; i < theta.d; ++i) {
        double ci = theta.tau * (u[i] - cd.u_mean[i]);
        double* row = g.data() + std::size_t(i) * theta.m;
        for (int j = 0; j < theta.m; ++j) row[j] = ci * cd.phi[j];
    }
    return g;
}

inline std::vector<double> critique_score(const PolicyParams& theta, const Environment& env,
                                          const PromptState& x, const Response& y,
                                          const Critique& c) {
    return critique_score(theta, build_critique_dist(theta, env, x, y), c.kind);
}

// Accumulate weight * grad log p(c|x,y) into the (w, psi) blocks.
inline void accumulate_critique_score(const PolicyParams& theta, const CritiqueDist& cd, int kind,
                                      double weight, std::vector<double>& grad) {
    const double* u = theta.psi.data() + std::size_t(kind) * theta.d;
    double* wblock = grad.data() + theta.w_offset();
    for (int i = 0; i < theta.d; ++i) {
        double ci = weight * theta.tau * (u[i] - cd.u_mean[i]);
        double* row = wblock + std::size_t(i) * theta.m;
        for (int j = 0; j < theta.m; ++j) row[j] += ci * cd.phi[j];
    }
    double* psiblock = grad.data() + theta.psi_offset();
    for (int c = 0; c < theta.n_critiques; ++c) {
        double ci = weight * theta.tau * ((c == kind ? 1.0 : 0.0) - cd.prob[c]);
        double* row = psiblock + std::size_t(c) * theta.d;
        for (int k = 0; k < theta.d; ++k) row[k] += ci * cd.z[k];
    }
}

inline Critique sample_critique(const PolicyParams& theta, const Environment& env,
                                const PromptState& x, const Response& y, RngStream& rng) {
    CritiqueDist cd = build_critique_dist(theta, env, x, y);
    double u = rng.next_double();
    double cum = 0.0;
    int kind = theta.n_critiques - 1;
    for (int c = 0; c < theta.n_critiques; ++c) {
        cum += cd.prob[c];
        if (u < cum) {
            kind = c;
            break;
        }
    }
    Critique out;
    out.kind = kind;
    return out;
}

// ---------------------------------------------------------------------------
// Autoregressive variant and importance weights
// ---------------------------------------------------------------------------

// Per-position conditional log-probabilities; valid for environments with a
// position-additive feature map.
inline std::vector<double> position_log_probs(const PolicyParams& theta, const Environment& env,
                                              const PromptState& x, int t) {
    int K = env.spec().alphabet_size;
    std::vector<double> phi(theta.m), zi(theta.d), scores(K);
    for (int a = 0; a < K; ++a) {
        env.position_features(x, t, a, phi.data());
        theta.z_from_features(phi.data(), zi.data());
        double s = 0.0;
        for (int k = 0; k < theta.d; ++k) s += theta.b[k] * zi[k];
        scores[a] = theta.tau * s;
    }
    double lse = logsumexp(scores);
    for (double& s : scores) s -= lse;
    return scores;
}

inline double log_prob_autoregressive(const PolicyParams& theta, const Environment& env,
                                      const PromptState& x, const Response& y) {
    double lp = 0.0;
    for (int t = 0; t < env.spec().response_length; ++t)
        lp += position_log_probs(theta, env, x, t)[y.tokens[t]];
    return lp;
}

struct SequenceIw {
    double weight = 1.0;                   // pi(y|x0) / pi(y|x1)
    std::vector<double> per_token_ratios;  // r_t, product equals weight
};

inline SequenceIw sequence_iw(const PolicyParams& theta, const Environment& env,
                              const PromptState& x0, const PromptState& x1, const Response& y) {
    if (!env.has_autoregressive_factorization())
        throw std::invalid_argument("sequence_iw: environment lacks a token factorization");
    SequenceIw out;
    out.weight = std::exp(log_prob(theta, env, x0, y) - log_prob(theta, env, x1, y));
    int L = env.spec().response_length;
    out.per_token_ratios.resize(L);
    for (int t = 0; t < L; ++t) {
        double lp0 = position_log_probs(theta, env, x0, t)[y.tokens[t]];
        double lp1 = position_log_probs(theta, env, x1, t)[y.tokens[t]];
        out.per_token_ratios[t] = std::exp(lp0 - lp1);
    }
    return out;
}

// Sequence weight alone, computed from cached distributions (hot path).
inline double sequence_weight(const ActionDist& d0, const ActionDist& d1, std::int64_t y_index) {
    return std::exp(d0.logprob[y_index] - d1.logprob[y_index]);
}

// ---------------------------------------------------------------------------
// Checkpoint serialization: little-endian header (d, m, p, |C|, tau) as
// 64-bit values followed by b, w, psi as 64-bit floats.
// ---------------------------------------------------------------------------

inline void save_checkpoint(const std::string& path, const PolicyParams& theta) {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw std::runtime_error("save_checkpoint: cannot open " + path);
    auto put_u64 = [&](std::uint64_t v) {
        unsigned char buf[8];
        for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
        std::fwrite(buf, 1, 8, f);
    };
    auto put_f64 = [&](double x) {
        std::uint64_t v;
        std::memcpy(&v, &x, 8);
        put_u64(v);
    };
    put_u64(theta.d);
    put_u64(theta.m);
    put_u64(theta.p());
    put_u64(theta.n_critiques);
    put_f64(theta.tau);
    for (double v : theta.b) put_f64(v);
    for (double v : theta.w) put_f64(v);
    for (double v : theta.psi) put_f64(v);
    std::fclose(f);
}

inline PolicyParams load_checkpoint(const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) throw std::runtime_error("load_checkpoint: cannot open " + path);
    auto get_u64 = [&]() {
        unsigned char buf[8];
        if (std::fread(buf, 1, 8, f) != 8) {
            std::fclose(f);
            throw std::runtime_error("load_checkpoint: truncated file");
        }
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= std::uint64_t(buf[i]) << (8 * i);
        return v;
    };
    auto get_f64 = [&]() {
        std::uint64_t v = get_u64();
        double x;
        std::memcpy(&x, &v, 8);
        return x;
    };
    int d = static_cast<int>(get_u64());
    int m = static_cast<int>(get_u64());
    std::int64_t p = static_cast<std::int64_t>(get_u64());
    int nc = static_cast<int>(get_u64());
    double tau = get_f64();
    if (p != std::int64_t(d) * m) {
        std::fclose(f);
        throw std::runtime_error("load_checkpoint: inconsistent header");
    }
    PolicyParams theta = PolicyParams::zeros(d, m, nc, tau);
    for (double& v : theta.b) v = get_f64();
    for (double& v : theta.w) v = get_f64();
    for (double& v : theta.psi) v = get_f64();
    std::fclose(f);
    return theta;
}

}  // namespace rltf
