#pragma once

// Acting interface shared by every policy, and the episode runner that
// records what happened into an Episode.

#include <functional>
#include <stdexcept>
#include <string>

#include "blockplan/gridworld.hpp"
#include "blockplan/replay.hpp"
#include "blockplan/rng.hpp"

namespace blockplan {

/// A policy acting in the block world. The ground-truth state is passed
/// along for agents that plan with the simulator itself; learned agents only
/// look at frames.
class Agent {
 public:
  virtual ~Agent() = default;
  virtual void begin_episode(const world::WorldState& state, const FramePtr& frame) = 0;
  virtual world::Action act() = 0;
  virtual void observe(world::Action taken, double reward, const world::WorldState& state, const FramePtr& frame) = 0;
};

class RandomAgent final : public Agent {
 public:
  /// Draws come from `base.split(task seed)`, so each task's actions do not
  /// depend on what was played before.
  explicit RandomAgent(SplitMix64 base) : base_(base) {}
  void begin_episode(const world::WorldState& state, const FramePtr&) override { rng_ = base_.split(state.task.seed); }
  world::Action act() override { return world::action_from_index(static_cast<int>(rng_.below(world::kNumActions))); }
  void observe(world::Action, double, const world::WorldState&, const FramePtr&) override {}

 private:
  SplitMix64 base_;
  SplitMix64 rng_;
};

/// Raised when anything goes wrong mid-episode; names the task.
class EpisodeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Plays one task to termination.
inline Episode run_episode(Agent& agent, const world::TaskSpec& task) {
  Episode ep;
  ep.task = task;
  try {
    auto [state, frame] = world::reset(task);
    ep.states.push_back(state);
    agent.begin_episode(state, share(frame));
    while (!state.terminal) {
      const auto a = agent.act();
      const double r = world::apply_action(state, a);
      ep.actions.push_back(a);
      ep.rewards.push_back(r);
      ep.states.push_back(state);
      if (!state.terminal) agent.observe(a, r, state, share(world::render(state)));
    }
  } catch (const std::exception& e) {
    throw EpisodeError("task seed=" + std::to_string(task.seed) + " step " + std::to_string(ep.actions.size()) +
                       ": " + e.what());
  }
  return ep;
}

}  // namespace blockplan
