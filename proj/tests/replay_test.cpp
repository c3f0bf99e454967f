#include <gtest/gtest.h>

#include <filesystem>
#include <map>
#include <set>
#include <stdexcept>

#include "blockplan/agent.hpp"
#include "blockplan/replay.hpp"

namespace bp = blockplan;
namespace w = blockplan::world;
using bp::FrameStack;
using w::Action;

namespace {

bp::FramePtr flat(float v) {
  w::Frame f;
  f.pixels.fill(v);
  return bp::share(f);
}

bp::Episode random_episode(std::uint64_t task_seed, std::uint64_t agent_seed) {
  bp::RandomAgent agent(bp::SplitMix64::from_seed(agent_seed));
  return bp::run_episode(agent, w::generate_task(task_seed));
}

/// Scripted agent that fails on a chosen step.
class ThrowingAgent final : public bp::Agent {
 public:
  explicit ThrowingAgent(int fail_at) : fail_at_(fail_at) {}
  void begin_episode(const w::WorldState&, const bp::FramePtr&) override { t_ = 0; }
  Action act() override {
    if (t_++ == fail_at_) throw std::runtime_error("boom");
    return Action::TurnLeft;
  }
  void observe(Action, double, const w::WorldState&, const bp::FramePtr&) override {}

 private:
  int fail_at_;
  int t_ = 0;
};

/// Records every callback so the runner's contract can be inspected.
class RecordingAgent final : public bp::Agent {
 public:
  int begins = 0, observes = 0;
  std::vector<bool> observed_terminal;
  void begin_episode(const w::WorldState&, const bp::FramePtr&) override { ++begins; }
  Action act() override { return Action::TurnRight; }
  void observe(Action, double, const w::WorldState& s, const bp::FramePtr&) override {
    ++observes;
    observed_terminal.push_back(s.terminal);
  }
};

}  // namespace

// --- frame stack ---------------------------------------------------------------

TEST(FrameStack, ReplicateThenPushShiftsOldestOut) {
  auto s = FrameStack::replicate(flat(0.1f));
  for (int i = 0; i < 4; ++i) EXPECT_EQ(s[i].pixels[0], 0.1f);
  s = s.pushed(flat(0.2f)).pushed(flat(0.3f));
  EXPECT_EQ(s[0].pixels[0], 0.1f);
  EXPECT_EQ(s[1].pixels[0], 0.1f);
  EXPECT_EQ(s[2].pixels[0], 0.2f);
  EXPECT_EQ(s[3].pixels[0], 0.3f);
  EXPECT_EQ(s.newest().pixels[0], 0.3f);
}

TEST(FrameStack, WithNewestKeepsHistory) {
  const auto s = FrameStack::replicate(flat(0.1f)).pushed(flat(0.2f));
  const auto c = s.with_newest(flat(0.9f));
  EXPECT_EQ(c[2].pixels[0], 0.1f);
  EXPECT_EQ(c.newest().pixels[0], 0.9f);
  EXPECT_EQ(s.newest().pixels[0], 0.2f);
}

TEST(FrameStack, CopyToIsOldestFirst) {
  const auto s = FrameStack({flat(0.1f), flat(0.2f), flat(0.3f), flat(0.4f)});
  std::vector<float> v(FrameStack::kValues);
  s.copy_to(v.data());
  for (int i = 0; i < 4; ++i) {
    EXPECT_EQ(v[static_cast<std::size_t>(i) * w::kFramePixels], 0.1f * static_cast<float>(i + 1));
    EXPECT_EQ(v[static_cast<std::size_t>(i + 1) * w::kFramePixels - 1], 0.1f * static_cast<float>(i + 1));
  }
}

TEST(FrameStack, EqualityComparesContents) {
  EXPECT_TRUE(FrameStack::replicate(flat(0.5f)) == FrameStack::replicate(flat(0.5f)));
  EXPECT_FALSE(FrameStack::replicate(flat(0.5f)) == FrameStack::replicate(flat(0.5f)).pushed(flat(0.6f)));
}

// --- episodes and records --------------------------------------------------------

TEST(Episode, StackPadsWithFirstFrame) {
  const auto ep = bp::replay_episode(0, w::generate_task(5), {Action::TurnLeft, Action::TurnLeft, Action::TurnLeft});
  const auto f0 = w::render(ep.states[0]);
  const auto s1 = ep.stack(1);
  EXPECT_EQ(s1[0], f0);
  EXPECT_EQ(s1[1], f0);
  EXPECT_EQ(s1[2], f0);
  EXPECT_EQ(s1[3], w::render(ep.states[1]));
  const auto s3 = ep.stack(3);
  for (int i = 0; i < 4; ++i) EXPECT_EQ(s3[i], w::render(ep.states[static_cast<std::size_t>(i)]));
}

TEST(Episode, ReplayReproducesRunEpisode) {
  const auto ep = random_episode(11, 12);
  const auto again = bp::replay_episode(ep.id, ep.task, ep.actions);
  EXPECT_EQ(again.rewards, ep.rewards);
  EXPECT_EQ(again.states, ep.states);
  EXPECT_LE(ep.length(), w::kMaxActions);
  EXPECT_TRUE(ep.states.back().terminal);
}

TEST(TransitionRecord, NextFieldsAbsentExactlyAtTerminal) {
  const auto ep = random_episode(21, 22);
  for (int t = 0; t < ep.length(); ++t) {
    const auto r = bp::make_record(ep, t);
    EXPECT_EQ(r.next_terminal, t + 1 == ep.length());
    EXPECT_EQ(r.next_action.has_value(), !r.next_terminal);
    EXPECT_EQ(r.next_reward.has_value(), !r.next_terminal);
    EXPECT_EQ(*r.next, w::render(ep.states[static_cast<std::size_t>(t) + 1]));
    EXPECT_EQ(r.reward, ep.rewards[static_cast<std::size_t>(t)]);
    if (r.next_reward) EXPECT_EQ(*r.next_reward, ep.rewards[static_cast<std::size_t>(t) + 1]);
  }
}

// --- replay buffer ---------------------------------------------------------------

TEST(ReplayBuffer, RejectsCapacityBelowOneEpisode) {
  EXPECT_THROW(bp::ReplayBuffer(29), std::invalid_argument);
  EXPECT_NO_THROW(bp::ReplayBuffer(30));
}

TEST(ReplayBuffer, NeverExceedsCapacityAndEvictsOldest) {
  bp::ReplayBuffer buf(100);
  const std::vector<Action> turns(w::kMaxActions, Action::TurnLeft);
  for (std::uint64_t i = 0; i < 10; ++i) {
    buf.add(bp::replay_episode(0, w::generate_task(100 + i), turns));
    EXPECT_LE(buf.size(), 100u);
  }
  // 30-step episodes: three fit; the survivors are the three newest.
  ASSERT_EQ(buf.episode_count(), 3u);
  EXPECT_EQ(buf.episodes().front()->id, 7u);
  EXPECT_EQ(buf.episodes().back()->id, 9u);
  EXPECT_EQ(buf.next_id(), 10u);
}

TEST(ReplayBuffer, LocateWalksEpisodesInOrder) {
  bp::ReplayBuffer buf(1000);
  buf.add(bp::replay_episode(0, w::generate_task(1), {Action::TurnLeft, Action::TurnLeft}));
  buf.add(bp::replay_episode(0, w::generate_task(2), {Action::TurnRight}));
  EXPECT_EQ(buf.size(), 3u);
  EXPECT_EQ(buf.locate(0), (std::pair<std::size_t, int>{0, 0}));
  EXPECT_EQ(buf.locate(1), (std::pair<std::size_t, int>{0, 1}));
  EXPECT_EQ(buf.locate(2), (std::pair<std::size_t, int>{1, 0}));
}

TEST(ReplayBuffer, SamplingIsUniformOverTransitions) {
  bp::ReplayBuffer buf(1000);
  buf.add(bp::replay_episode(0, w::generate_task(1), {Action::TurnLeft}));
  buf.add(bp::replay_episode(0, w::generate_task(2), {Action::TurnLeft, Action::TurnLeft, Action::TurnLeft}));
  auto rng = bp::SplitMix64::from_seed(3);
  std::map<std::uint64_t, int> per_episode;
  const int n = 20000;
  for (const auto& r : buf.sample(n, rng)) ++per_episode[r.episode];
  // Episode 0 holds 1 of 4 transitions.
  EXPECT_NEAR(per_episode[0] / double(n), 0.25, 0.02);
}

TEST(ReplayBuffer, SamplingEmptyThrows) {
  bp::ReplayBuffer buf(100);
  auto rng = bp::SplitMix64::from_seed(1);
  EXPECT_THROW(buf.sample(1, rng), std::logic_error);
}

TEST(ReplayBuffer, RandomPolicyCollectsAllRewardMagnitudes) {
  bp::ReplayBuffer buf(5000);
  for (std::uint64_t i = 0; i < 100; ++i) buf.add(random_episode(1000 + i, 7));
  std::set<double> seen;
  for (std::size_t i = 0; i < buf.size(); ++i) seen.insert(buf.record(i).reward);
  EXPECT_TRUE(seen.count(-0.04));
  EXPECT_TRUE(seen.count(0.96));
  EXPECT_TRUE(seen.count(-1.04));
}

TEST(ReplayBuffer, SaveLoadRoundTrip) {
  bp::ReplayBuffer buf(100);
  for (std::uint64_t i = 0; i < 5; ++i) buf.add(random_episode(50 + i, i));
  const auto path = (std::filesystem::temp_directory_path() / "blockplan_replay_test.txt").string();
  buf.save(path);
  const auto back = bp::ReplayBuffer::load(path);
  std::filesystem::remove(path);
  EXPECT_EQ(back.capacity(), buf.capacity());
  EXPECT_EQ(back.size(), buf.size());
  EXPECT_EQ(back.next_id(), buf.next_id());
  ASSERT_EQ(back.episode_count(), buf.episode_count());
  for (std::size_t e = 0; e < buf.episode_count(); ++e) {
    EXPECT_EQ(back.episodes()[e]->id, buf.episodes()[e]->id);
    EXPECT_EQ(back.episodes()[e]->task, buf.episodes()[e]->task);
    EXPECT_EQ(back.episodes()[e]->states, buf.episodes()[e]->states);
  }
  auto r1 = bp::SplitMix64::from_seed(9), r2 = r1;
  const auto a = buf.sample(10, r1), b = back.sample(10, r2);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].episode, b[i].episode);
    EXPECT_EQ(a[i].t, b[i].t);
    EXPECT_TRUE(a[i].history == b[i].history);
  }
}

// --- episode runner ----------------------------------------------------------------

TEST(RunEpisode, ObservesOnlyNonTerminalSteps) {
  RecordingAgent agent;
  const auto ep = bp::run_episode(agent, w::generate_task(4));
  EXPECT_EQ(agent.begins, 1);
  EXPECT_EQ(agent.observes, w::kMaxActions - 1);
  for (bool t : agent.observed_terminal) EXPECT_FALSE(t);
  EXPECT_EQ(ep.states.size(), ep.actions.size() + 1);
}

TEST(RunEpisode, ErrorsNameTheTask) {
  ThrowingAgent agent(3);
  try {
    bp::run_episode(agent, w::generate_task(77));
    FAIL() << "expected EpisodeError";
  } catch (const bp::EpisodeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("seed=77"), std::string::npos) << msg;
    EXPECT_NE(msg.find("step 3"), std::string::npos) << msg;
  }
}

TEST(RandomAgent, ActionsDependOnlyOnTask) {
  const auto base = bp::SplitMix64::from_seed(5);
  bp::RandomAgent a(base), b(base);
  bp::run_episode(a, w::generate_task(1));  // a has played another task first
  const auto x = bp::run_episode(a, w::generate_task(2));
  const auto y = bp::run_episode(b, w::generate_task(2));
  EXPECT_EQ(x.actions, y.actions);
}
