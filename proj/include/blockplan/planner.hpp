#pragma once

// UCT tree search over a deterministic transition model.
//
//   select:   unvisited actions first (highest predicted immediate reward, or
//             uniformly at random in the ablation), then argmax
//             v + k sqrt(ln n_parent / n_child), ties to the lowest index
//   expand:   one model call per (node, action) while the node is fresh
//   backup:   max of discounted return, no leaf bootstrap
//   advance:  the taken child becomes the root, its newest frame is replaced
//             by the real observation, everything below is marked stale but
//             keeps v and n so the previous best line is revisited first.
//
// A node's v is the best return seen from its parent's point of view, i.e.
// it includes the reward of the edge leading into it.

#include <array>
#include <cmath>
#include <concepts>
#include <cstdio>
#include <limits>
#include <memory>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <vector>

#include "blockplan/agent.hpp"
#include "blockplan/gridworld.hpp"
#include "blockplan/replay.hpp"
#include "blockplan/rng.hpp"
#include "blockplan/transition_model.hpp"

namespace blockplan::planner {

using model::RewardVector;
using world::Action;
using world::kNumActions;

struct PlannerConfig {
  int depth = 10;
  int trajectories = 100;
  double k = 8.0;
  double gamma = 0.95;
  bool one_step_ahead = true;
  // Unvisited actions whose predicted reward is within `reward_tie_tolerance`
  // of the best count as tied; ties are drawn from a seeded stream unless
  // `lowest_index_reward_ties` is set. The ablation draws from the same
  // stream over all unvisited actions.
  double reward_tie_tolerance = 0.1;
  bool lowest_index_reward_ties = false;
  std::uint64_t tie_break_seed = 0;

  void validate() const {
    if (depth < 1) throw std::invalid_argument("planner depth must be >= 1");
    if (trajectories < 1) throw std::invalid_argument("planner trajectories must be >= 1");
    if (!(k >= 0.0)) throw std::invalid_argument("planner k must be >= 0");
    if (!(gamma > 0.0 && gamma <= 1.0)) throw std::invalid_argument("planner gamma must lie in (0, 1]");
    if (!(reward_tie_tolerance >= 0.0)) throw std::invalid_argument("planner reward_tie_tolerance must be >= 0");
  }
};

inline double uct(double v, int n_s, int n_p, double k) {
  return v + k * std::sqrt(std::log(static_cast<double>(n_p)) / static_cast<double>(n_s));
}

template <class State>
struct Transition {
  State next;
  RewardVector rewards{};  // immediate reward of each action taken from `next`
};

/// What the planner needs from a model.
template <class M>
concept PlanningModel = requires(const M& m, const typename M::State& s, Action a, const world::WorldState& truth,
                                 const FramePtr& frame) {
  { m.initial(truth, frame) } -> std::same_as<typename M::State>;
  { m.current_rewards(s) } -> std::same_as<RewardVector>;  // the Noop call
  { m.predict(s, a) } -> std::same_as<Transition<typename M::State>>;
  { m.correct(s, truth, frame) } -> std::same_as<typename M::State>;
};

// --- models ------------------------------------------------------------------

/// The learned network: state is the frame stack.
class LearnedModel {
 public:
  using State = FrameStack;
  explicit LearnedModel(const model::ModelNet& net) : net_(&net) {}

  State initial(const world::WorldState&, const FramePtr& frame) const { return FrameStack::replicate(frame); }
  RewardVector current_rewards(const State& s) const { return net_->predict(s, Action::Noop).rewards; }
  Transition<State> predict(const State& s, Action a) const {
    auto p = net_->predict(s, a);
    return {s.pushed(share(std::move(p.frame))), p.rewards};
  }
  State correct(const State& predicted, const world::WorldState&, const FramePtr& frame) const {
    return predicted.with_newest(frame);
  }

 private:
  const model::ModelNet* net_;
};

/// The simulator itself wrapped as a model: exact frames and rewards.
/// Terminal states are absorbing with zero reward.
class OracleModel {
 public:
  struct State {
    world::WorldState world;
    FrameStack frames;
  };

  State initial(const world::WorldState& truth, const FramePtr& frame) const {
    return {truth, FrameStack::replicate(frame)};
  }
  RewardVector current_rewards(const State& s) const { return rewards_from(s.world); }
  Transition<State> predict(const State& s, Action a) const {
    if (s.world.terminal) return {s, RewardVector{}};
    State next = s;
    world::apply_action(next.world, a);
    next.frames = s.frames.pushed(share(world::render(next.world)));
    const auto r = rewards_from(next.world);
    return {std::move(next), r};
  }
  State correct(const State& predicted, const world::WorldState& truth, const FramePtr& frame) const {
    return {truth, predicted.frames.with_newest(frame)};
  }

 private:
  static RewardVector rewards_from(const world::WorldState& s) {
    RewardVector r{};
    if (s.terminal) return r;
    for (int i = 0; i < kNumActions; ++i) {
      auto copy = s;
      r[static_cast<std::size_t>(i)] = static_cast<float>(world::apply_action(copy, world::action_from_index(i)));
    }
    return r;
  }
};

// --- tree --------------------------------------------------------------------

template <class State>
struct SearchNode {
  State state;
  RewardVector rewards{};
  std::optional<double> v;
  int n = 0;
  std::array<std::unique_ptr<SearchNode>, kNumActions> children;
  bool stale = false;

  const SearchNode* child(Action a) const { return children[static_cast<std::size_t>(world::index_of(a))].get(); }
  bool visited(int a) const {
    const auto& c = children[static_cast<std::size_t>(a)];
    return c && c->n > 0 && c->v.has_value();
  }
};

struct PlannerStats {
  long long model_calls = 0;          // since the last plan() returned
  long long total_model_calls = 0;
  long long trajectories = 0;
  std::optional<double> best_return;  // since the last root advance
};

template <PlanningModel M>
class Planner {
 public:
  using State = typename M::State;
  using Node = SearchNode<State>;

  Planner(const M& model, PlannerConfig config) : model_(&model), config_(config) {
    config_.validate();
    rng_ = SplitMix64::from_seed(config_.tie_break_seed);
  }

  const PlannerConfig& config() const { return config_; }
  const Node& root() const { return *root_; }
  Node& mutable_root() { return *root_; }
  const PlannerStats& stats() const { return stats_; }

  /// Audit trail, one row per edge of every completed trajectory.
  void set_log(std::ostream* log) {
    log_ = log;
    if (log_) *log_ << "trajectory,depth,action,edge_reward,return,new_max\n";
  }

  /// New episode: root from the first observation plus one Noop call.
  void reset(const world::WorldState& truth, const FramePtr& frame) {
    root_ = std::make_unique<Node>();
    root_->state = model_->initial(truth, frame);
    root_->rewards = call_current(root_->state);
    stats_.best_return.reset();
    // Keyed by task so results do not depend on evaluation order.
    rng_ = SplitMix64::from_seed(config_.tie_break_seed).split(truth.task.seed);
  }

  /// Picks the child to descend into.
  int select_child(const Node& node) {
    int unvisited[kNumActions];
    int count = 0;
    for (int a = 0; a < kNumActions; ++a)
      if (!node.visited(a)) unvisited[count++] = a;
    if (count > 0) {
      if (!config_.one_step_ahead) return unvisited[rng_.below(static_cast<std::uint64_t>(count))];
      float top = node.rewards[static_cast<std::size_t>(unvisited[0])];
      for (int i = 1; i < count; ++i) top = std::max(top, node.rewards[static_cast<std::size_t>(unvisited[i])]);
      int ties[kNumActions];
      int n_ties = 0;
      for (int i = 0; i < count; ++i)
        if (node.rewards[static_cast<std::size_t>(unvisited[i])] >= top - config_.reward_tie_tolerance)
          ties[n_ties++] = unvisited[i];
      if (config_.lowest_index_reward_ties || n_ties == 1) return ties[0];
      return ties[rng_.below(static_cast<std::uint64_t>(n_ties))];
    }
    int best = 0;
    double best_score = -std::numeric_limits<double>::infinity();
    for (int a = 0; a < kNumActions; ++a) {
      const auto& c = *node.children[static_cast<std::size_t>(a)];
      const double score = uct(*c.v, c.n, std::max(node.n, 1), config_.k);
      if (score > best_score) {
        best_score = score;
        best = a;
      }
    }
    return best;
  }

  /// One descent to the depth limit followed by the max backup. If the model
  /// throws, no value or count changes.
  double rollout() {
    std::vector<Node*> path{root_.get()};
    std::vector<int> actions;
    std::vector<double> edge;
    Node* node = root_.get();
    for (int d = 0; d < config_.depth; ++d) {
      const int a = select_child(*node);
      auto& slot = node->children[static_cast<std::size_t>(a)];
      if (!slot) {
        auto t = call_predict(node->state, world::action_from_index(a));
        auto child = std::make_unique<Node>();
        child->state = std::move(t.next);
        child->rewards = t.rewards;
        slot = std::move(child);
      } else if (slot->stale) {
        auto t = call_predict(node->state, world::action_from_index(a));
        slot->state = std::move(t.next);
        slot->rewards = t.rewards;
        slot->stale = false;
      }
      edge.push_back(node->rewards[static_cast<std::size_t>(a)]);
      actions.push_back(a);
      node = slot.get();
      path.push_back(node);
    }

    // Return from each node's parent onward: R_i = r_i + gamma R_{i+1}.
    std::vector<double> from(edge.size() + 1, 0.0);
    for (std::size_t i = edge.size(); i-- > 0;) from[i] = edge[i] + config_.gamma * from[i + 1];
    const double ret = from[0];
    const bool new_max = !stats_.best_return || ret > *stats_.best_return;
    if (new_max) stats_.best_return = ret;

    root_->v = root_->v ? std::max(*root_->v, ret) : ret;
    ++root_->n;
    for (std::size_t i = 1; i < path.size(); ++i) {
      Node& nd = *path[i];
      nd.v = nd.v ? std::max(*nd.v, from[i - 1]) : from[i - 1];
      ++nd.n;
    }
    ++stats_.trajectories;
    if (log_) {
      for (std::size_t i = 0; i < edge.size(); ++i) {
        char line[160];
        std::snprintf(line, sizeof line, "%lld,%zu,%s,%.6f,%.6f,%d\n", stats_.trajectories, i + 1,
                      std::string(world::action_name(world::action_from_index(actions[i]))).c_str(), edge[i], ret,
                      new_max ? 1 : 0);
        *log_ << line;
      }
    }
    return ret;
  }

  /// Runs the trajectory budget and returns the root action of maximum v.
  Action plan() {
    for (int i = 0; i < config_.trajectories; ++i) rollout();
    const Action a = best_action();
    stats_.model_calls = 0;
    return a;
  }

  Action best_action() const {
    int best = -1;
    for (int a = 0; a < kNumActions; ++a) {
      const auto& c = root_->children[static_cast<std::size_t>(a)];
      if (!c || !c->v) continue;
      if (best < 0 || *c->v > *root_->children[static_cast<std::size_t>(best)]->v) best = a;
    }
    if (best >= 0) return world::action_from_index(best);
    best = 0;
    for (int a = 1; a < kNumActions; ++a)
      if (root_->rewards[static_cast<std::size_t>(a)] > root_->rewards[static_cast<std::size_t>(best)]) best = a;
    return world::action_from_index(best);
  }

  /// Moves the root to the taken child and corrects it with the observation.
  void advance_root(Action taken, const world::WorldState& truth, const FramePtr& frame) {
    auto& slot = root_->children[static_cast<std::size_t>(world::index_of(taken))];
    if (!slot) {
      auto t = call_predict(root_->state, taken);
      slot = std::make_unique<Node>();
      slot->state = std::move(t.next);
      slot->rewards = t.rewards;
    } else if (slot->stale) {
      slot->state = call_predict(root_->state, taken).next;
    }
    std::unique_ptr<Node> next = std::move(slot);
    root_ = std::move(next);
    root_->state = model_->correct(root_->state, truth, frame);
    root_->rewards = call_current(root_->state);
    root_->stale = false;
    for (auto& c : root_->children) mark_stale(c.get());
    stats_.best_return.reset();
  }

  /// Number of nodes in the current tree.
  std::size_t tree_size() const { return count(root_.get()); }

 private:
  RewardVector call_current(const State& s) {
    auto r = model_->current_rewards(s);
    ++stats_.model_calls;
    ++stats_.total_model_calls;
    return r;
  }
  Transition<State> call_predict(const State& s, Action a) {
    auto t = model_->predict(s, a);
    ++stats_.model_calls;
    ++stats_.total_model_calls;
    return t;
  }

  static void mark_stale(Node* n) {
    if (!n) return;
    n->stale = true;
    for (auto& c : n->children) mark_stale(c.get());
  }
  static std::size_t count(const Node* n) {
    if (!n) return 0;
    std::size_t s = 1;
    for (const auto& c : n->children) s += count(c.get());
    return s;
  }

  const M* model_;
  PlannerConfig config_;
  SplitMix64 rng_;
  std::unique_ptr<Node> root_;
  PlannerStats stats_;
  std::ostream* log_ = nullptr;
};

/// Plans every step; optionally acts uniformly at random with probability
/// epsilon (used when collecting training data).
template <PlanningModel M>
class PlannerAgent final : public Agent {
 public:
  PlannerAgent(const M& model, PlannerConfig config, double epsilon = 0.0, std::uint64_t seed = 0)
      : planner_(model, config), epsilon_(epsilon), rng_(SplitMix64::from_seed(seed)) {}

  void begin_episode(const world::WorldState& state, const FramePtr& frame) override { planner_.reset(state, frame); }
  Action act() override {
    const Action planned = planner_.plan();
    if (epsilon_ > 0.0 && rng_.bernoulli(epsilon_))
      return world::action_from_index(static_cast<int>(rng_.below(kNumActions)));
    return planned;
  }
  void observe(Action taken, double, const world::WorldState& state, const FramePtr& frame) override {
    planner_.advance_root(taken, state, frame);
  }

  Planner<M>& planner() { return planner_; }

 private:
  Planner<M> planner_;
  double epsilon_;
  SplitMix64 rng_;
};

}  // namespace blockplan::planner
