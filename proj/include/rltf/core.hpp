// Interaction-protocol types: prompts, responses, critiques, trajectories,
// rollout groups, and returns.  Everything here is immutable after
// construction and safe to move between threads.

#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <stdexcept>
#include <utility>
#include <vector>

namespace rltf {

// --------------------------------------------------------------------------
// Task payloads.  Each environment stores its hidden state in one of these;
// the policy never reads payloads directly (only through the feature map).
// --------------------------------------------------------------------------

struct BitVectorTask {
    std::vector<std::uint8_t> target;
};

struct GridTask {
    int rows = 0;
    int cols = 0;
    std::vector<std::uint8_t> blocked;   // row-major, 1 = obstacle
    int start = 0;                       // cell index = r * cols + c
    int goal = 0;
    std::vector<int> dist_to_goal;       // BFS distance per cell, -1 unreachable
    std::vector<std::uint8_t> canonical_moves;  // lexicographically least shortest path
};

struct BanditTask {
    std::uint64_t feature_key = 0;       // keys the hashed feature table
    std::vector<std::int32_t> success_ids;  // sorted response indices with reward 1
    // Optional explicit feature table (|Y| x m, row-major); overrides hashing.
    std::shared_ptr<const std::vector<double>> explicit_features;
    int explicit_feature_dim = 0;
};

struct TaskInstance {
    std::uint64_t task_id = 0;
    std::optional<std::int64_t> response_space_size;
    // exactly one payload is populated, matching the owning environment
    std::shared_ptr<const BitVectorTask> bitvector;
    std::shared_ptr<const GridTask> grid;
    std::shared_ptr<const BanditTask> bandit;
};

using TaskInstancePtr = std::shared_ptr<const TaskInstance>;

// --------------------------------------------------------------------------
// Protocol records
// --------------------------------------------------------------------------

struct Response {
    std::vector<std::uint8_t> tokens;
    std::optional<std::int64_t> index;  // position in the enumerated response space
};

struct Critique {
    int kind = 0;
    std::optional<int> payload;  // e.g. the mismatch position for localizing feedback
};

// The evolving prompt x_h: the initial task plus the (response, critique)
// history accumulated so far.  The turn index equals history.size().
struct PromptState {
    TaskInstancePtr initial;
    std::vector<std::pair<Response, Critique>> history;

    int turn_index() const { return static_cast<int>(history.size()); }
};

inline PromptState initial_prompt(TaskInstancePtr instance) {
    PromptState x;
    x.initial = std::move(instance);
    return x;
}

// Prompt update f: structural concatenation.  The input state is untouched;
// the initial task is shared by reference across all turns of a trajectory.
inline PromptState advance_prompt(const PromptState& x, const Response& y, const Critique& c) {
    PromptState next;
    next.initial = x.initial;
    next.history = x.history;
    next.history.emplace_back(y, c);
    return next;
}

struct TurnRecord {
    PromptState prompt;
    Response response;
    double reward = 0.0;
    std::optional<Critique> critique;  // absent when the episode terminated on this turn
};

struct Trajectory {
    std::vector<TurnRecord> turns;
    bool terminated_early = false;
};

struct RolloutGroup {
    TaskInstancePtr instance;
    std::vector<Trajectory> trajectories;

    int size() const { return static_cast<int>(trajectories.size()); }
};

// Sum of gamma^h * r_h over realized turns.
inline double multi_turn_return(const Trajectory& traj, double gamma) {
    if (gamma < 0.0 || gamma > 1.0)
        throw std::invalid_argument("multi_turn_return: gamma must lie in [0,1]");
    double total = 0.0;
    double scale = 1.0;
    for (const TurnRecord& t : traj.turns) {
        total += scale * t.reward;
        scale *= gamma;
    }
    return total;
}

// Compensated (Neumaier) summation, used wherever an enumeration identity is
// asserted to 1e-12 or tighter.
class NeumaierSum {
  public:
    void add(double x) {
        double t = sum_ + x;
        if (std::abs(sum_) >= std::abs(x))
            comp_ += (sum_ - t) + x;
        else
            comp_ += (x - t) + sum_;
        sum_ = t;
    }
    double value() const { return sum_ + comp_; }

  private:
    double sum_ = 0.0;
    double comp_ = 0.0;
};

}  // namespace rltf
