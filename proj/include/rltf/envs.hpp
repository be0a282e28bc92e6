// Synthetic tasks with verifiable rewards and programmatic critique
// providers, plus the base feature maps consumed by the log-linear policy.
//
// Environments:
//   BitVectorGuess          guess a hidden symbol string; critiques localize
//                           the first mismatch, count matches, or report
//                           correctness only.
//   SyntheticCritiqueBandit enumerable bandit with an explicit success set
//                           and a directly parameterized critique emission
//                           matrix (one row per success/error-type cell).
//   GridPathMicro           emit a move sequence that is a shortest path on
//                           a small grid; critiques localize the first move
//                           that fails to approach the goal.
//
// Feature maps are position-additive: the joint feature vector of a response
// is the sum of per-position feature vectors plus a bias.  This makes the
// joint softmax and the autoregressive per-position factorization identical,
// which the importance-weight checks rely on.
//
// Prompt history enters the features through two channels:
//   hint      the per-position agreement sign between a symbol and the
//             instance's solution (the "task statement" channel: the task is
//             solvable from the prompt alone),
//   evidence  accumulated information from past critiques (revealed prefix symbols,
//             known-bad symbols, or a scalar correctness nudge), scaled by
//             evidence_scale.

#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <cstring>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "rltf/core.hpp"
#include "rltf/rng.hpp"

namespace rltf {

enum class EnvKind { BitVectorGuess, SyntheticCritiqueBandit, GridPathMicro };
enum class CritiqueMode { Localizing, Count, CorrectnessOnly };

inline std::string to_string(EnvKind k) {
    switch (k) {
        case EnvKind::BitVectorGuess: return "BitVectorGuess";
        case EnvKind::SyntheticCritiqueBandit: return "SyntheticCritiqueBandit";
        case EnvKind::GridPathMicro: return "GridPathMicro";
    }
    return "?";
}

inline std::string to_string(CritiqueMode m) {
    switch (m) {
        case CritiqueMode::Localizing: return "localizing";
        case CritiqueMode::Count: return "count";
        case CritiqueMode::CorrectnessOnly: return "correctness_only";
    }
    return "?";
}

struct EnvSpec {
    EnvKind kind = EnvKind::BitVectorGuess;
    int response_length = 4;        // L
    int alphabet_size = 2;          // K
    CritiqueMode critique_mode = CritiqueMode::Localizing;
    std::uint64_t instance_seed = 1;
    double feeder_noise = 0.0;      // prob. of replacing the critique uniformly
    double evidence_scale = 1.0;    // strength of history-derived features

    // SyntheticCritiqueBandit extras
    double epsilon0 = 0.04;         // target success measure under the base policy
    int error_types = 3;            // error cells besides the success cell
    int bandit_feature_dim = 9;     // m including the bias component

    // GridPathMicro extras
    int grid_rows = 3;
    int grid_cols = 3;
};

// Conditional critique distribution family.  For the bandit this is an
// explicit row-stochastic matrix over (success/error-type) cells; the
// rule-based environments synthesize their rows on demand.
struct FeederSpec {
    int critique_alphabet = 0;
    std::vector<std::vector<double>> emission;  // rows: cell -> distribution over kinds
    double noise = 0.0;

    void validate() const {
        if (noise < 0.0 || noise > 1.0)
            throw std::invalid_argument("FeederSpec: noise must lie in [0,1]");
        for (const auto& row : emission) {
            if (static_cast<int>(row.size()) != critique_alphabet)
                throw std::invalid_argument("FeederSpec: emission row width != |C|");
            double s = 0.0;
            for (double p : row) {
                if (p < 0.0) throw std::invalid_argument("FeederSpec: negative emission prob");
                s += p;
            }
            if (std::abs(s - 1.0) > 1e-12)
                throw std::invalid_argument("FeederSpec: emission row does not sum to 1");
        }
    }
};

namespace gridpath {

// Moves in lexicographic token order.
inline constexpr int kMoves = 4;
inline constexpr int kDr[kMoves] = {1, 0, 0, -1};   // down, left, right, up
inline constexpr int kDc[kMoves] = {0, -1, 1, 0};
inline const char* kMoveNames[kMoves] = {"down", "left", "right", "up"};

inline std::vector<int> bfs_distances(int rows, int cols,
                                      const std::vector<std::uint8_t>& blocked, int goal) {
    std::vector<int> dist(rows * cols, -1);
    std::vector<int> queue;
    if (!blocked[goal]) {
        dist[goal] = 0;
        queue.push_back(goal);
    }
    for (std::size_t head = 0; head < queue.size(); ++head) {
        int cell = queue[head];
        int r = cell / cols, c = cell % cols;
        for (int m = 0; m < kMoves; ++m) {
            int nr = r + kDr[m], nc = c + kDc[m];
            if (nr < 0 || nr >= rows || nc < 0 || nc >= cols) continue;
            int ncell = nr * cols + nc;
            if (blocked[ncell] || dist[ncell] >= 0) continue;
            dist[ncell] = dist[cell] + 1;
            queue.push_back(ncell);
        }
    }
    return dist;
}

}  // namespace gridpath

class Environment {
  public:
    static constexpr std::int64_t kEnumerableCap = std::int64_t(1) << 24;

    explicit Environment(EnvSpec spec) : spec_(std::move(spec)) {
        if (spec_.response_length < 1 || spec_.alphabet_size < 2)
            throw std::invalid_argument("EnvSpec: need response_length >= 1, alphabet >= 2");
        double bits = spec_.response_length * std::log2(double(spec_.alphabet_size));
        if (bits > 24.0 + 1e-9)
            throw std::invalid_argument("EnvSpec: L*log2(K) exceeds the enumerable cap (24 bits)");
        if (spec_.kind == EnvKind::GridPathMicro) {
            if (spec_.alphabet_size != gridpath::kMoves)
                throw std::invalid_argument("GridPathMicro: alphabet_size must equal 4 moves");
            if (spec_.grid_rows > 3 || spec_.grid_cols > 3 || spec_.grid_rows < 2 ||
                spec_.grid_cols < 2)
                throw std::invalid_argument("GridPathMicro: grids are capped at 3x3");
        }
        if (spec_.kind == EnvKind::SyntheticCritiqueBandit) {
            if (spec_.epsilon0 <= 0.0 || spec_.epsilon0 >= 1.0)
                throw std::invalid_argument("SyntheticCritiqueBandit: epsilon0 must be in (0,1)");
            if (spec_.error_types < 1)
                throw std::invalid_argument("SyntheticCritiqueBandit: error_types >= 1");
            if (spec_.bandit_feature_dim < 1)
                throw std::invalid_argument("SyntheticCritiqueBandit: feature_dim >= 1");
            feeder_ = default_bandit_feeder();
        }
        feedback_calls_ = std::make_shared<std::atomic<long>>(0);
    }

    const EnvSpec& spec() const { return spec_; }

    // Replace the bandit emission matrix (theory constructions).
    void set_feeder(FeederSpec feeder) {
        if (spec_.kind != EnvKind::SyntheticCritiqueBandit)
            throw std::invalid_argument("set_feeder: only the bandit has an explicit feeder");
        feeder.validate();
        feeder_ = std::move(feeder);
    }
    const FeederSpec& feeder() const { return feeder_; }

    std::int64_t response_space_size() const {
        std::int64_t n = 1;
        for (int i = 0; i < spec_.response_length; ++i) n *= spec_.alphabet_size;
        return n;
    }

    int critique_alphabet_size() const {
        switch (spec_.kind) {
            case EnvKind::SyntheticCritiqueBandit:
                return spec_.critique_mode == CritiqueMode::CorrectnessOnly
                           ? 2
                           : feeder_.critique_alphabet;
            default:
                return spec_.critique_mode == CritiqueMode::CorrectnessOnly
                           ? 2
                           : spec_.response_length + 1;
        }
    }

    // The distinguished "this answer was correct" kind.
    int correct_kind() const { return critique_alphabet_size() - 1; }

    // ---------------------------------------------------------------- tasks

    // Instance at a fixed index; i.i.d. across indices, deterministic given
    // instance_seed.
    TaskInstance instance_at(std::int64_t index) const {
        RngStream s = RngStream(spec_.instance_seed).child(0).child(std::uint64_t(index));
        TaskInstance inst;
        inst.task_id = std::uint64_t(index);
        inst.response_space_size = response_space_size();
        switch (spec_.kind) {
            case EnvKind::BitVectorGuess: {
                auto task = std::make_shared<BitVectorTask>();
                task->target.resize(spec_.response_length);
                for (auto& t : task->target)
                    t = static_cast<std::uint8_t>(s.next_below(spec_.alphabet_size));
                inst.bitvector = std::move(task);
                break;
            }
            case EnvKind::SyntheticCritiqueBandit: {
                auto task = std::make_shared<BanditTask>();
                task->feature_key = hash_tuple(spec_.instance_seed, 0xfeau, inst.task_id);
                std::int64_t n = response_space_size();
                auto count = static_cast<std::int64_t>(std::llround(spec_.epsilon0 * double(n)));
                count = std::max<std::int64_t>(1, std::min(count, n));
                task->success_ids = lowest_priority_ids(task->feature_key, n, count);
                inst.bandit = std::move(task);
                break;
            }
            case EnvKind::GridPathMicro:
                inst.grid = make_grid_task(s);
                break;
        }
        return inst;
    }

    std::vector<TaskInstance> sample_instances(int count, std::int64_t start_index = 0) const {
        if (count < 1) throw std::invalid_argument("sample_instances: count >= 1");
        std::vector<TaskInstance> out;
        out.reserve(count);
        for (int i = 0; i < count; ++i) out.push_back(instance_at(start_index + i));
        return out;
    }

    // --------------------------------------------------------------- reward

    double reward(const TaskInstance& x0, const Response& y) const {
        check_response(y);
        switch (spec_.kind) {
            case EnvKind::BitVectorGuess:
                return y.tokens == x0.bitvector->target ? 1.0 : 0.0;
            case EnvKind::SyntheticCritiqueBandit: {
                std::int64_t idx = token_index(y);
                const auto& ids = x0.bandit->success_ids;
                return std::binary_search(ids.begin(), ids.end(), std::int32_t(idx)) ? 1.0 : 0.0;
            }
            case EnvKind::GridPathMicro:
                return grid_path_valid(*x0.grid, y.tokens) ? 1.0 : 0.0;
        }
        return 0.0;
    }

    // ------------------------------------------------------------- feedback

    // Exact critique distribution over kinds for (x, y), noise included.
    std::vector<double> feedback_distribution(const PromptState& x, const Response& y) const {
        check_response(y);
        const TaskInstance& inst = *x.initial;
        int nc = critique_alphabet_size();
        std::vector<double> row(nc, 0.0);
        switch (spec_.kind) {
            case EnvKind::SyntheticCritiqueBandit: {
                if (spec_.critique_mode == CritiqueMode::CorrectnessOnly) {
                    row[reward(inst, y) > 0.5 ? 1 : 0] = 1.0;
                } else {
                    row = feeder_.emission[bandit_cell(inst, y)];
                }
                break;
            }
            default:
                row[rule_critique_kind(inst, y)] = 1.0;
        }
        double noise = spec_.kind == EnvKind::SyntheticCritiqueBandit ? feeder_.noise
                                                                      : spec_.feeder_noise;
        if (noise > 0.0) {
            for (double& p : row) p = (1.0 - noise) * p + noise / nc;
        }
        return row;
    }

    Critique feedback(const PromptState& x, const Response& y, RngStream& rng) const {
        feedback_calls_->fetch_add(1, std::memory_order_relaxed);
        std::vector<double> row = feedback_distribution(x, y);
        double u = rng.next_double();
        double cum = 0.0;
        int kind = static_cast<int>(row.size()) - 1;
        for (std::size_t k = 0; k < row.size(); ++k) {
            cum += row[k];
            if (u < cum) {
                kind = static_cast<int>(k);
                break;
            }
        }
        Critique c;
        c.kind = kind;
        if (spec_.kind != EnvKind::SyntheticCritiqueBandit &&
            spec_.critique_mode == CritiqueMode::Localizing && kind < spec_.response_length)
            c.payload = kind;  // mismatch position
        return c;
    }

    long feedback_call_count() const { return feedback_calls_->load(); }
    void reset_feedback_call_count() const { feedback_calls_->store(0); }

    // ---------------------------------------------------------- enumeration

    std::vector<Response> enumerate_responses(const TaskInstance&) const {
        std::int64_t n = response_space_size();
        if (n > kEnumerableCap)
            throw std::invalid_argument("enumerate_responses: |Y| exceeds the enumerable cap");
        std::vector<Response> out(n);
        for (std::int64_t i = 0; i < n; ++i) {
            out[i].tokens = tokens_of_index(i);
            out[i].index = i;
        }
        return out;
    }

    std::int64_t token_index(const Response& y) const {
        std::int64_t idx = 0;
        for (std::uint8_t t : y.tokens) idx = idx * spec_.alphabet_size + t;
        return idx;
    }

    std::vector<std::uint8_t> tokens_of_index(std::int64_t idx) const {
        std::vector<std::uint8_t> tokens(spec_.response_length);
        for (int t = spec_.response_length - 1; t >= 0; --t) {
            tokens[t] = static_cast<std::uint8_t>(idx % spec_.alphabet_size);
            idx /= spec_.alphabet_size;
        }
        return tokens;
    }

    // ------------------------------------------------------------- features

    int feature_dim() const {
        if (spec_.kind == EnvKind::SyntheticCritiqueBandit) return spec_.bandit_feature_dim;
        return spec_.response_length * spec_.alphabet_size + 1;
    }

    // Joint feature vector phi0(x, y); position-additive plus a trailing bias.
    void joint_features(const PromptState& x, const Response& y, double* out) const {
        check_response(y);
        int m = feature_dim();
        std::fill(out, out + m, 0.0);
        if (spec_.kind == EnvKind::SyntheticCritiqueBandit) {
            bandit_features(x, token_index(y), out);
            return;
        }
        for (int t = 0; t < spec_.response_length; ++t)
            out[t * spec_.alphabet_size + y.tokens[t]] = position_value(x, t, y.tokens[t]);
        out[m - 1] = 1.0;
    }

    // Per-position feature vector for symbol a at position t (autoregressive
    // variant).  Prefix-independent by construction; the bias is spread
    // uniformly so that summing positions reproduces the joint features.
    void position_features(const PromptState& x, int t, int a, double* out) const {
        int m = feature_dim();
        std::fill(out, out + m, 0.0);
        if (spec_.kind == EnvKind::SyntheticCritiqueBandit)
            throw std::invalid_argument(
                "position_features: the bandit has no autoregressive factorization");
        out[t * spec_.alphabet_size + a] = position_value(x, t, a);
        out[m - 1] = 1.0 / spec_.response_length;
    }

    bool has_autoregressive_factorization() const {
        return spec_.kind != EnvKind::SyntheticCritiqueBandit;
    }

    // Declared bound on |phi0|_inf (test diagnostic).
    double feature_bound(int max_history) const {
        if (spec_.kind == EnvKind::SyntheticCritiqueBandit)
            return 1.0 + spec_.evidence_scale * max_history;
        return 1.0 + spec_.evidence_scale * (1.0 + max_history);
    }

  private:
    // ----- rule-based critiques -------------------------------------------

    int rule_critique_kind(const TaskInstance& inst, const Response& y) const {
        bool correct = reward(inst, y) > 0.5;
        if (spec_.critique_mode == CritiqueMode::CorrectnessOnly) return correct ? 1 : 0;
        if (correct) return correct_kind();
        if (spec_.kind == EnvKind::BitVectorGuess) {
            const auto& target = inst.bitvector->target;
            if (spec_.critique_mode == CritiqueMode::Localizing) {
                for (int t = 0; t < spec_.response_length; ++t)
                    if (y.tokens[t] != target[t]) return t;
                return correct_kind();  // unreachable for incorrect y
            }
            int matches = 0;
            for (int t = 0; t < spec_.response_length; ++t)
                if (y.tokens[t] == target[t]) ++matches;
            return matches;
        }
        // GridPathMicro: index of the first move that fails to step one cell
        // closer to the goal (out of bounds and blocked cells count as
        // failures).  Count mode reports the length of the good prefix, which
        // is the same index.
        return grid_first_bad_move(*inst.grid, y.tokens);
    }

    static bool in_bounds(const GridTask& g, int r, int c) {
        return r >= 0 && r < g.rows && c >= 0 && c < g.cols;
    }

    static bool grid_path_valid(const GridTask& g, const std::vector<std::uint8_t>& moves) {
        int r = g.start / g.cols, c = g.start % g.cols;
        for (std::uint8_t m : moves) {
            r += gridpath::kDr[m];
            c += gridpath::kDc[m];
            if (!in_bounds(g, r, c) || g.blocked[r * g.cols + c]) return false;
        }
        return r * g.cols + c == g.goal;
    }

    static int grid_first_bad_move(const GridTask& g, const std::vector<std::uint8_t>& moves) {
        int r = g.start / g.cols, c = g.start % g.cols;
        for (std::size_t t = 0; t < moves.size(); ++t) {
            int nr = r + gridpath::kDr[moves[t]];
            int nc = c + gridpath::kDc[moves[t]];
            if (!in_bounds(g, nr, nc) || g.blocked[nr * g.cols + nc])
                return static_cast<int>(t);
            if (g.dist_to_goal[nr * g.cols + nc] != g.dist_to_goal[r * g.cols + c] - 1)
                return static_cast<int>(t);
            r = nr;
            c = nc;
        }
        return static_cast<int>(moves.size());  // reached only when the path is valid
    }

    // ----- feature channels -----------------------------------------------

    // Hint channel: +1 when symbol a at position t agrees with the instance's
    // solution, -1 otherwise.  This is the analog of the task statement being
    // part of the prompt: the optimal single-turn policy is representable by
    // a uniform positive weight on the one-hot block.
    double hint_sign(const TaskInstance& inst, int t, int a) const {
        if (spec_.kind == EnvKind::BitVectorGuess)
            return inst.bitvector->target[t] == a ? 1.0 : -1.0;
        return inst.grid->canonical_moves[t] == a ? 1.0 : -1.0;
    }

    // Evidence channel: what past critiques revealed about (t, a).
    double evidence_value(const PromptState& x, int t, int a) const {
        if (x.history.empty()) return 0.0;
        const TaskInstance& inst = *x.initial;
        double e = 0.0;
        const double L = spec_.response_length;
        for (const auto& [y_prev, c] : x.history) {
            int prev = y_prev.tokens[t];
            switch (spec_.critique_mode) {
                case CritiqueMode::Localizing: {
                    int j = c.kind;
                    if (j == correct_kind()) {
                        e += (a == prev) ? 1.0 : -1.0;
                    } else if (t < j) {
                        // positions before the first mismatch were right
                        e += (a == prev) ? 1.0 : -1.0;
                    } else if (t == j) {
                        if (a == prev) e -= 1.0;  // known-bad symbol
                    }
                    break;
                }
                case CritiqueMode::Count: {
                    // scalar signal: lean toward the previous answer when the
                    // match count was high, away when it was low
                    double lean = (2.0 * c.kind - L) / L;
                    e += (a == prev) ? lean : 0.0;
                    break;
                }
                case CritiqueMode::CorrectnessOnly: {
                    double lean = c.kind == 1 ? 1.0 : -1.0 / L;
                    e += (a == prev) ? lean : 0.0;
                    break;
                }
            }
        }
        return e;
    }

    double position_value(const PromptState& x, int t, int a) const {
        return hint_sign(*x.initial, t, a) +
               spec_.evidence_scale * evidence_value(x, t, a);
    }

    void bandit_features(const PromptState& x, std::int64_t y_idx, double* out) const {
        const BanditTask& task = *x.initial->bandit;
        int m = spec_.bandit_feature_dim;
        if (task.explicit_features) {
            if (task.explicit_feature_dim != m)
                throw std::invalid_argument("bandit explicit feature table width != m");
            const double* row = task.explicit_features->data() + y_idx * m;
            std::copy(row, row + m, out);
        } else {
            for (int k = 0; k + 1 < m; ++k)
                out[k] = rademacher(task.feature_key, 0x11, std::uint64_t(y_idx), k);
            out[m - 1] = 1.0;
        }
        // history perturbation so second-turn conditionals genuinely shift
        for (const auto& [y_prev, c] : x.history) {
            (void)y_prev;
            for (int k = 0; k + 1 < m; ++k)
                out[k] += spec_.evidence_scale *
                          rademacher(task.feature_key, 0x33, std::uint64_t(y_idx),
                                     std::uint64_t(c.kind) * 131 + k);
        }
    }

    // ----- construction helpers -------------------------------------------

    void check_response(const Response& y) const {
        if (static_cast<int>(y.tokens.size()) != spec_.response_length)
            throw std::invalid_argument("response length does not match the environment");
        for (std::uint8_t t : y.tokens)
            if (t >= spec_.alphabet_size)
                throw std::invalid_argument("response symbol outside the alphabet");
    }

    FeederSpec default_bandit_feeder() const {
        FeederSpec f;
        int cells = 1 + spec_.error_types;
        f.critique_alphabet = spec_.error_types + 1;
        f.noise = spec_.feeder_noise;
        f.emission.assign(cells, std::vector<double>(f.critique_alphabet, 0.0));
        // success cell concentrates on the last ("correct") kind; error cell e
        // mostly names its own kind
        const double q = 0.8;
        f.emission[0].assign(f.critique_alphabet, 0.0);
        f.emission[0][f.critique_alphabet - 1] = 1.0;
        for (int e = 0; e < spec_.error_types; ++e) {
            auto& row = f.emission[1 + e];
            for (double& p : row) p = (1.0 - q) / (f.critique_alphabet - 1);
            row[e] = q;
        }
        f.validate();
        return f;
    }

    int bandit_cell(const TaskInstance& inst, const Response& y) const {
        if (reward(inst, y) > 0.5) return 0;
        std::int64_t idx = token_index(y);
        return 1 + static_cast<int>(hash_tuple(inst.bandit->feature_key, 0x22,
                                               std::uint64_t(idx)) %
                                    std::uint64_t(spec_.error_types));
    }

    static std::vector<std::int32_t> lowest_priority_ids(std::uint64_t key, std::int64_t n,
                                                         std::int64_t count) {
        std::vector<std::int32_t> ids(n);
        std::iota(ids.begin(), ids.end(), 0);
        std::partial_sort(ids.begin(), ids.begin() + count, ids.end(),
                          [&](std::int32_t a, std::int32_t b) {
                              return hash_tuple(key, 0x55, std::uint64_t(a)) <
                                     hash_tuple(key, 0x55, std::uint64_t(b));
                          });
        ids.resize(count);
        std::sort(ids.begin(), ids.end());
        return ids;
    }

    std::shared_ptr<const GridTask> make_grid_task(RngStream& s) const {
        // Resample grids until the goal sits at BFS distance exactly L from
        // the start, so every rewarded path is a shortest path.
        for (int attempt = 0; attempt < 10000; ++attempt) {
            auto g = std::make_shared<GridTask>();
            g->rows = spec_.grid_rows;
            g->cols = spec_.grid_cols;
            g->blocked.assign(g->rows * g->cols, 0);
            RngStream gs = s.child(attempt);
            for (auto& b : g->blocked) b = gs.next_double() < 0.25 ? 1 : 0;
            g->start = 0;
            g->blocked[g->start] = 0;
            // candidate goals at distance exactly L
            std::vector<int> dist_from_start =
                gridpath::bfs_distances(g->rows, g->cols, g->blocked, g->start);
            std::vector<int> candidates;
            for (int cell = 0; cell < g->rows * g->cols; ++cell)
                if (dist_from_start[cell] == spec_.response_length) candidates.push_back(cell);
            if (candidates.empty()) continue;
            g->goal = candidates[gs.next_below(candidates.size())];
            g->dist_to_goal = gridpath::bfs_distances(g->rows, g->cols, g->blocked, g->goal);
            g->canonical_moves = canonical_path(*g);
            return g;
        }
        throw std::runtime_error("GridPathMicro: could not sample a grid with a length-L path");
    }

    static std::vector<std::uint8_t> canonical_path(const GridTask& g) {
        // lexicographically least move sequence that decreases the BFS
        // distance at every step
        std::vector<std::uint8_t> moves;
        int r = g.start / g.cols, c = g.start % g.cols;
        while (r * g.cols + c != g.goal) {
            int here = g.dist_to_goal[r * g.cols + c];
            bool advanced = false;
            for (int m = 0; m < gridpath::kMoves; ++m) {
                int nr = r + gridpath::kDr[m], nc = c + gridpath::kDc[m];
                if (nr < 0 || nr >= g.rows || nc < 0 || nc >= g.cols) continue;
                int ncell = nr * g.cols + nc;
                if (g.blocked[ncell] || g.dist_to_goal[ncell] != here - 1) continue;
                moves.push_back(static_cast<std::uint8_t>(m));
                r = nr;
                c = nc;
                advanced = true;
                break;
            }
            if (!advanced) throw std::runtime_error("canonical_path: goal unreachable");
        }
        return moves;
    }

    EnvSpec spec_;
    FeederSpec feeder_;
    std::shared_ptr<std::atomic<long>> feedback_calls_;
};

}  // namespace rltf
