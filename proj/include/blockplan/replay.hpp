#pragma once

// Frame stacks, recorded episodes and the transition replay buffer shared by
// the transition model and the DQN baseline.
//
// Episodes keep world states rather than pixels; frames are re-rendered on
// demand (a render is a few microseconds, a stored frame is 16 KiB).

#include <algorithm>
#include <array>
#include <cstdint>
#include <deque>
#include <fstream>
#include <memory>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "blockplan/gridworld.hpp"
#include "blockplan/rng.hpp"

namespace blockplan {

using FramePtr = std::shared_ptr<const world::Frame>;

inline FramePtr share(world::Frame f) { return std::make_shared<const world::Frame>(std::move(f)); }

/// The four most recent frames, oldest first.
class FrameStack {
 public:
  static constexpr int kDepth = 4;
  static constexpr std::size_t kValues = kDepth * world::kFramePixels;

  FrameStack() = default;
  explicit FrameStack(std::array<FramePtr, kDepth> frames) : frames_(std::move(frames)) {}

  /// Episode start: the first frame replicated.
  static FrameStack replicate(const FramePtr& f) { return FrameStack({f, f, f, f}); }

  /// Drops the oldest frame and appends `f`.
  FrameStack pushed(FramePtr f) const {
    return FrameStack({frames_[1], frames_[2], frames_[3], std::move(f)});
  }

  /// Same history with the newest frame replaced.
  FrameStack with_newest(FramePtr f) const {
    auto copy = frames_;
    copy[kDepth - 1] = std::move(f);
    return FrameStack(copy);
  }

  const world::Frame& operator[](int i) const { return *frames_[static_cast<std::size_t>(i)]; }
  const world::Frame& newest() const { return *frames_[kDepth - 1]; }
  const FramePtr& newest_ptr() const { return frames_[kDepth - 1]; }
  const FramePtr& ptr(int i) const { return frames_[static_cast<std::size_t>(i)]; }

  /// Writes 4x64x64 values, oldest frame first.
  void copy_to(float* dst) const {
    for (const auto& f : frames_) dst = std::copy(f->pixels.begin(), f->pixels.end(), dst);
  }

  friend bool operator==(const FrameStack& a, const FrameStack& b) {
    for (int i = 0; i < kDepth; ++i)
      if (a.frames_[i] != b.frames_[i] && !(*a.frames_[i] == *b.frames_[i])) return false;
    return true;
  }

 private:
  std::array<FramePtr, kDepth> frames_;
};

/// One complete episode: task, actions, rewards and the visited states.
/// states[t] is s_t; states.size() == actions.size() + 1.
struct Episode {
  std::uint64_t id = 0;
  world::TaskSpec task;
  std::vector<world::Action> actions;
  std::vector<double> rewards;
  std::vector<world::WorldState> states;

  int length() const { return static_cast<int>(actions.size()); }
  bool success() const { return world::is_success(states.back()); }
  double total_reward() const { return world::episode_return(rewards); }

  /// Frame s_t; indices before the start repeat the first frame.
  world::Frame frame(int t) const { return world::render(states[static_cast<std::size_t>(std::max(t, 0))]); }

  FrameStack stack(int t) const {
    std::array<FramePtr, FrameStack::kDepth> f;
    FramePtr first;
    for (int i = 0; i < FrameStack::kDepth; ++i) {
      const int idx = t - (FrameStack::kDepth - 1) + i;
      if (idx <= 0) {
        if (!first) first = share(frame(0));
        f[static_cast<std::size_t>(i)] = first;
      } else {
        f[static_cast<std::size_t>(i)] = share(frame(idx));
      }
    }
    return FrameStack(f);
  }
};

/// Rebuilds an episode from its task and action log (the environment is
/// deterministic, so states and rewards follow).
inline Episode replay_episode(std::uint64_t id, const world::TaskSpec& task, const std::vector<world::Action>& actions) {
  Episode ep;
  ep.id = id;
  ep.task = task;
  ep.states.push_back(world::initial_state(task));
  for (auto a : actions) {
    auto s = ep.states.back();
    ep.rewards.push_back(world::apply_action(s, a));
    ep.actions.push_back(a);
    ep.states.push_back(s);
  }
  return ep;
}

/// One time step t of a stored episode, with everything needed for either a
/// model training pair or a TD target.
struct TransitionRecord {
  std::uint64_t episode = 0;
  int t = 0;
  FrameStack history;  // s_{t-3..t}
  FramePtr next;       // s_{t+1}
  world::Action action = world::Action::Forward;
  double reward = 0.0;  // r_{t+1}
  std::optional<world::Action> next_action;
  std::optional<double> next_reward;  // r_{t+2}
  bool next_terminal = false;
};

inline TransitionRecord make_record(const Episode& ep, int t) {
  TransitionRecord r;
  r.episode = ep.id;
  r.t = t;
  r.history = ep.stack(t);
  r.next = share(ep.frame(t + 1));
  r.action = ep.actions[static_cast<std::size_t>(t)];
  r.reward = ep.rewards[static_cast<std::size_t>(t)];
  r.next_terminal = ep.states[static_cast<std::size_t>(t) + 1].terminal;
  if (t + 1 < ep.length()) {
    r.next_action = ep.actions[static_cast<std::size_t>(t) + 1];
    r.next_reward = ep.rewards[static_cast<std::size_t>(t) + 1];
  }
  return r;
}

/// Whole episodes up to a capacity counted in transitions; oldest episodes
/// are evicted first. Sampling is uniform over stored transitions.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
    if (capacity < static_cast<std::size_t>(world::kMaxActions))
      throw std::invalid_argument("replay capacity must hold at least one episode (" +
                                  std::to_string(world::kMaxActions) + " transitions)");
  }

  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return size_; }
  bool empty() const { return size_ == 0; }
  std::size_t episode_count() const { return episodes_.size(); }
  const std::deque<std::shared_ptr<const Episode>>& episodes() const { return episodes_; }
  std::uint64_t next_id() const { return next_id_; }

  /// Appends an episode (its id is assigned here) and evicts as needed.
  const Episode& add(Episode ep) {
    ep.id = next_id_++;
    size_ += static_cast<std::size_t>(ep.length());
    episodes_.push_back(std::make_shared<const Episode>(std::move(ep)));
    while (size_ > capacity_) {
      size_ -= static_cast<std::size_t>(episodes_.front()->length());
      episodes_.pop_front();
    }
    offsets_dirty_ = true;
    return *episodes_.back();
  }

  /// (episode position, t) of the i-th stored transition.
  std::pair<std::size_t, int> locate(std::size_t i) const {
    refresh_offsets();
    const auto it = std::upper_bound(offsets_.begin(), offsets_.end(), i);
    const auto e = static_cast<std::size_t>(it - offsets_.begin()) - 1;
    return {e, static_cast<int>(i - offsets_[e])};
  }

  TransitionRecord record(std::size_t i) const {
    const auto [e, t] = locate(i);
    return make_record(*episodes_[e], t);
  }

  std::vector<TransitionRecord> sample(std::size_t n, SplitMix64& rng) const {
    if (empty()) throw std::logic_error("sampling an empty replay buffer");
    std::vector<TransitionRecord> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back(record(static_cast<std::size_t>(rng.below(size_))));
    return out;
  }

  /// Text persistence: one episode per line,
  /// `<id> <seed> <colored bits> <row> <col> <heading> <actions...>`.
  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "capacity " << capacity_ << " next_id " << next_id_ << "\n";
    for (const auto& ep : episodes_) {
      const auto& t = ep->task;
      out << ep->id << ' ' << t.seed << ' ' << t.colored.bits() << ' ' << t.start_pose.cell.row << ' '
          << t.start_pose.cell.col << ' ' << static_cast<int>(t.start_pose.heading);
      for (auto a : ep->actions) out << ' ' << world::index_of(a);
      out << '\n';
    }
  }

  static ReplayBuffer load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path);
    std::string tag1, tag2;
    std::size_t capacity = 0;
    std::uint64_t next_id = 0;
    if (!(in >> tag1 >> capacity >> tag2 >> next_id) || tag1 != "capacity" || tag2 != "next_id")
      throw std::runtime_error(path + ": bad replay header");
    ReplayBuffer buf(capacity);
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      std::istringstream ls(line);
      std::uint64_t id = 0;
      world::TaskSpec task;
      std::uint32_t bits = 0;
      int heading = 0;
      if (!(ls >> id >> task.seed >> bits >> task.start_pose.cell.row >> task.start_pose.cell.col >> heading))
        throw std::runtime_error(path + ": bad replay line '" + line + "'");
      for (int b = 0; b < world::kFieldTiles; ++b)
        if (bits >> b & 1u) task.colored.insert(world::field_cell(b));
      task.start_pose.heading = static_cast<world::Heading>(heading);
      std::vector<world::Action> actions;
      int a = 0;
      while (ls >> a) actions.push_back(world::action_from_index(a));
      auto ep = replay_episode(id, task, actions);
      buf.size_ += static_cast<std::size_t>(ep.length());
      buf.episodes_.push_back(std::make_shared<const Episode>(std::move(ep)));
    }
    buf.next_id_ = next_id;
    buf.offsets_dirty_ = true;
    return buf;
  }

 private:
  void refresh_offsets() const {
    if (!offsets_dirty_) return;
    offsets_.clear();
    std::size_t acc = 0;
    for (const auto& ep : episodes_) {
      offsets_.push_back(acc);
      acc += static_cast<std::size_t>(ep->length());
    }
    offsets_dirty_ = false;
  }

  std::size_t capacity_;
  std::size_t size_ = 0;
  std::uint64_t next_id_ = 0;
  std::deque<std::shared_ptr<const Episode>> episodes_;
  mutable std::vector<std::size_t> offsets_;
  mutable bool offsets_dirty_ = true;
};

}  // namespace blockplan
