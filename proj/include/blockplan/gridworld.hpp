#pragma once

// Deterministic first-person block-placing task.
//
// Room layout (grid rows/cols 0..8):
//   row/col 0 and 8    walls
//   row/col 1 and 7    walkway ring
//   rows/cols 2..6     5x5 playing field, field coordinate = grid - 2
//
// The agent may walk on the walkway and on any field tile without a block.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "blockplan/rng.hpp"

namespace blockplan::world {

inline constexpr int kFieldSize = 5;
inline constexpr int kFieldTiles = kFieldSize * kFieldSize;
inline constexpr int kFieldOffset = 2;
inline constexpr int kGridSize = kFieldSize + 4;
inline constexpr int kMaxActions = 30;
inline constexpr int kNumActions = 6;
inline constexpr double kColoredProbability = 0.1;

inline constexpr double kActionPenalty = -0.04;
inline constexpr double kCorrectBlockReward = 1.0;
inline constexpr double kWrongBlockReward = -1.0;

inline constexpr int kFrameSide = 64;
inline constexpr int kFramePixels = kFrameSide * kFrameSide;

// Luminance palette.
inline constexpr float kSkyLuma = 0.05f;
inline constexpr float kWallLuma = 0.45f;
inline constexpr double kWallDarkeningPerTile = 0.01;
inline constexpr float kBlockLuma = 0.70f;
inline constexpr float kWhiteTileLuma = 0.90f;
inline constexpr float kColoredTileLuma = 0.30f;
inline constexpr float kWalkwayLuma = 0.55f;
inline constexpr double kEyeHeight = 0.5;

enum class Heading : std::uint8_t { North = 0, East = 1, South = 2, West = 3 };

enum class Action : std::uint8_t {
  Forward = 0,
  TurnLeft = 1,
  TurnRight = 2,
  StrafeLeft = 3,
  StrafeRight = 4,
  PlaceBlock = 5,
  Noop = 6,  // model input only; the environment rejects it
};

inline constexpr std::array<Action, kNumActions> kAllActions = {
    Action::Forward,    Action::TurnLeft,    Action::TurnRight,
    Action::StrafeLeft, Action::StrafeRight, Action::PlaceBlock};

constexpr int index_of(Action a) { return static_cast<int>(a); }
constexpr Action action_from_index(int i) { return static_cast<Action>(i); }

inline std::string_view action_name(Action a) {
  switch (a) {
    case Action::Forward: return "Forward";
    case Action::TurnLeft: return "TurnLeft";
    case Action::TurnRight: return "TurnRight";
    case Action::StrafeLeft: return "StrafeLeft";
    case Action::StrafeRight: return "StrafeRight";
    case Action::PlaceBlock: return "PlaceBlock";
    case Action::Noop: return "Noop";
  }
  return "?";
}

inline Action parse_action(std::string_view name) {
  for (int i = 0; i <= kNumActions; ++i) {
    if (action_name(action_from_index(i)) == name) return action_from_index(i);
  }
  throw std::invalid_argument("unknown action '" + std::string(name) + "'");
}

struct Cell {
  int row = 0;
  int col = 0;
  friend constexpr auto operator<=>(const Cell&, const Cell&) = default;
};

constexpr Cell offset(Heading h) {
  switch (h) {
    case Heading::North: return {-1, 0};
    case Heading::East: return {0, 1};
    case Heading::South: return {1, 0};
    case Heading::West: return {0, -1};
  }
  return {0, 0};
}

constexpr Heading rotate(Heading h, int quarter_turns) {
  return static_cast<Heading>(((static_cast<int>(h) + quarter_turns) % 4 + 4) % 4);
}

constexpr Cell operator+(Cell a, Cell b) { return {a.row + b.row, a.col + b.col}; }

constexpr bool is_floor(Cell c) {
  return c.row >= 1 && c.row <= kGridSize - 2 && c.col >= 1 && c.col <= kGridSize - 2;
}
constexpr bool is_field(Cell c) {
  return c.row >= kFieldOffset && c.row < kFieldOffset + kFieldSize &&
         c.col >= kFieldOffset && c.col < kFieldOffset + kFieldSize;
}
/// Bit index of a field cell given in grid coordinates.
constexpr int field_bit(Cell c) {
  return (c.row - kFieldOffset) * kFieldSize + (c.col - kFieldOffset);
}
constexpr Cell field_cell(int bit) {
  return {bit / kFieldSize + kFieldOffset, bit % kFieldSize + kFieldOffset};
}

/// Set of field tiles as a 25-bit mask.
class FieldMask {
 public:
  constexpr FieldMask() = default;
  constexpr explicit FieldMask(std::uint32_t bits) : bits_(bits & kAll) {}

  constexpr bool contains(Cell c) const { return is_field(c) && (bits_ >> field_bit(c) & 1u); }
  constexpr void insert(Cell c) { bits_ |= 1u << field_bit(c); }
  constexpr int size() const { return std::popcount(bits_); }
  constexpr bool empty() const { return bits_ == 0; }
  constexpr std::uint32_t bits() const { return bits_; }
  constexpr bool is_subset_of(FieldMask other) const { return (bits_ & ~other.bits_) == 0; }

  std::vector<Cell> cells() const {
    std::vector<Cell> out;
    for (int b = 0; b < kFieldTiles; ++b)
      if (bits_ >> b & 1u) out.push_back(field_cell(b));
    return out;
  }

  friend constexpr bool operator==(FieldMask, FieldMask) = default;

 private:
  static constexpr std::uint32_t kAll = (1u << kFieldTiles) - 1;
  std::uint32_t bits_ = 0;
};

struct AgentPose {
  Cell cell;
  Heading heading = Heading::North;
  friend constexpr bool operator==(const AgentPose&, const AgentPose&) = default;
};

struct TaskSpec {
  std::uint64_t seed = 0;
  FieldMask colored;
  AgentPose start_pose;
  friend constexpr bool operator==(const TaskSpec&, const TaskSpec&) = default;
};

struct WorldState {
  TaskSpec task;
  FieldMask blocks;
  FieldMask covered;
  AgentPose pose;
  int actions_taken = 0;
  bool terminal = false;
  friend constexpr bool operator==(const WorldState&, const WorldState&) = default;
};

struct Frame {
  std::array<float, kFramePixels> pixels{};

  float& operator()(int row, int col) { return pixels[static_cast<std::size_t>(row * kFrameSide + col)]; }
  float operator()(int row, int col) const { return pixels[static_cast<std::size_t>(row * kFrameSide + col)]; }
  std::span<const float> view() const { return pixels; }

  friend bool operator==(const Frame&, const Frame&) = default;
};

struct StepOutcome {
  double reward = 0.0;
  Frame frame;
  bool terminal = false;
};

/// Stepping a finished episode.
class TerminalStateError : public std::logic_error {
 public:
  TerminalStateError() : std::logic_error("step() called on a terminal state") {}
};

/// Noop or an out-of-range action passed to the environment.
class InvalidActionError : public std::invalid_argument {
 public:
  explicit InvalidActionError(Action a)
      : std::invalid_argument("environment does not accept action " + std::string(action_name(a))) {}
};

// ---------------------------------------------------------------------------
// Task generation

/// Walkway cells adjacent to a wall and not in a corner, each facing the field.
inline const std::array<AgentPose, 20>& start_poses() {
  static const std::array<AgentPose, 20> poses = [] {
    std::array<AgentPose, 20> p{};
    int i = 0;
    for (int c = kFieldOffset; c < kFieldOffset + kFieldSize; ++c) p[i++] = {{1, c}, Heading::South};
    for (int c = kFieldOffset; c < kFieldOffset + kFieldSize; ++c) p[i++] = {{kGridSize - 2, c}, Heading::North};
    for (int r = kFieldOffset; r < kFieldOffset + kFieldSize; ++r) p[i++] = {{r, 1}, Heading::East};
    for (int r = kFieldOffset; r < kFieldOffset + kFieldSize; ++r) p[i++] = {{r, kGridSize - 2}, Heading::West};
    return p;
  }();
  return poses;
}

/// Draws the coloring and start pose from the stream keyed by `seed`.
/// Each attempt consumes 25 Bernoulli(0.1) draws in field bit order; an empty
/// board is discarded and the next 25 draws from the same stream are used.
inline TaskSpec generate_task(std::uint64_t seed) {
  SplitMix64 rng = SplitMix64::from_seed(seed);
  TaskSpec task;
  task.seed = seed;
  do {
    std::uint32_t bits = 0;
    for (int b = 0; b < kFieldTiles; ++b)
      if (rng.bernoulli(kColoredProbability)) bits |= 1u << b;
    task.colored = FieldMask(bits);
  } while (task.colored.empty());
  task.start_pose = start_poses()[rng.below(start_poses().size())];
  return task;
}

// ---------------------------------------------------------------------------
// Rendering

namespace detail {

enum class Surface : std::uint8_t { None, Wall, Block };

inline Surface surface_at(const WorldState& s, int row, int col) {
  const Cell c{row, col};
  if (!is_floor(c)) return Surface::Wall;
  if (s.blocks.contains(c)) return Surface::Block;
  return Surface::None;
}

inline float floor_luma(const WorldState& s, Cell c) {
  if (!is_field(c)) return kWalkwayLuma;
  return s.task.colored.contains(c) && !s.covered.contains(c) ? kColoredTileLuma : kWhiteTileLuma;
}

}  // namespace detail

/// Column raycaster: 64 rays over a 90 degree horizontal field of view,
/// square image so the vertical field of view is also 90 degrees.
///
/// Evaluation order (all double, single rounding to float at the end):
///   ray    = dir + right * ((2c + 1) / 64 - 1)
///   DDA from the eye cell until a wall or block cell; perp = distance along dir
///   t      = (r + 0.5 - 32) / 32           (screen slope, down positive)
///   |t| < 0.5 / perp  -> surface          (wall 0.45 - 0.01 perp, block 0.70)
///   t < 0             -> sky
///   otherwise         -> floor sample at eye + ray * (0.5 / t)
inline Frame render(const WorldState& s) {
  Frame frame;
  const double eye_x = s.pose.cell.col + 0.5;
  const double eye_y = s.pose.cell.row + 0.5;
  const Cell fwd = offset(s.pose.heading);
  const Cell right = offset(rotate(s.pose.heading, 1));
  constexpr double half = kFrameSide / 2.0;

  for (int c = 0; c < kFrameSide; ++c) {
    const double cam = (2.0 * c + 1.0) / kFrameSide - 1.0;
    const double ray_x = fwd.col + right.col * cam;
    const double ray_y = fwd.row + right.row * cam;

    int map_x = s.pose.cell.col;
    int map_y = s.pose.cell.row;
    const double delta_x = ray_x == 0.0 ? 1e30 : std::abs(1.0 / ray_x);
    const double delta_y = ray_y == 0.0 ? 1e30 : std::abs(1.0 / ray_y);
    const int step_x = ray_x < 0 ? -1 : 1;
    const int step_y = ray_y < 0 ? -1 : 1;
    double side_x = ray_x < 0 ? (eye_x - map_x) * delta_x : (map_x + 1.0 - eye_x) * delta_x;
    double side_y = ray_y < 0 ? (eye_y - map_y) * delta_y : (map_y + 1.0 - eye_y) * delta_y;

    detail::Surface hit = detail::Surface::None;
    bool x_side = false;
    while (hit == detail::Surface::None) {
      if (side_x < side_y) {
        side_x += delta_x;
        map_x += step_x;
        x_side = true;
      } else {
        side_y += delta_y;
        map_y += step_y;
        x_side = false;
      }
      hit = detail::surface_at(s, map_y, map_x);
    }
    const double perp = x_side ? side_x - delta_x : side_y - delta_y;
    const double extent = kEyeHeight / perp;
    const float surface_luma =
        hit == detail::Surface::Block
            ? kBlockLuma
            : static_cast<float>(kWallLuma - kWallDarkeningPerTile * perp);

    for (int r = 0; r < kFrameSide; ++r) {
      const double t = (r + 0.5 - half) / half;
      float luma;
      if (std::abs(t) < extent) {
        luma = surface_luma;
      } else if (t < 0.0) {
        luma = kSkyLuma;
      } else {
        const double dist = kEyeHeight / t;
        const Cell floor{static_cast<int>(std::floor(eye_y + ray_y * dist)),
                         static_cast<int>(std::floor(eye_x + ray_x * dist))};
        // Rounding at the hit boundary can land one cell too far.
        luma = detail::surface_at(s, floor.row, floor.col) == detail::Surface::None
                   ? detail::floor_luma(s, floor)
                   : surface_luma;
      }
      frame(r, c) = luma;
    }
  }
  return frame;
}

// ---------------------------------------------------------------------------
// Dynamics

inline WorldState initial_state(const TaskSpec& task) {
  WorldState s;
  s.task = task;
  s.pose = task.start_pose;
  return s;
}

struct ResetResult {
  WorldState state;
  Frame frame;
};

inline ResetResult reset(const TaskSpec& task) {
  WorldState s = initial_state(task);
  Frame f = render(s);
  return {s, f};
}

inline bool walkable(const WorldState& s, Cell c) { return is_floor(c) && !s.blocks.contains(c); }

/// Tile the agent is focused on.
inline Cell target_cell(const AgentPose& pose) { return pose.cell + offset(pose.heading); }

/// Applies `a` in place without rendering; returns the reward.
inline double apply_action(WorldState& s, Action a) {
  if (s.terminal) throw TerminalStateError();
  if (a == Action::Noop || index_of(a) < 0 || index_of(a) >= kNumActions) throw InvalidActionError(a);

  double reward = 0.0;
  auto try_move = [&](Heading dir) {
    const Cell dest = s.pose.cell + offset(dir);
    if (walkable(s, dest)) s.pose.cell = dest;
  };
  switch (a) {
    case Action::Forward: try_move(s.pose.heading); break;
    case Action::TurnLeft: s.pose.heading = rotate(s.pose.heading, -1); break;
    case Action::TurnRight: s.pose.heading = rotate(s.pose.heading, 1); break;
    case Action::StrafeLeft: try_move(rotate(s.pose.heading, -1)); break;
    case Action::StrafeRight: try_move(rotate(s.pose.heading, 1)); break;
    case Action::PlaceBlock: {
      const Cell target = target_cell(s.pose);
      if (is_field(target) && !s.blocks.contains(target)) {
        s.blocks.insert(target);
        if (s.task.colored.contains(target)) {
          s.covered.insert(target);
          reward = kCorrectBlockReward;
        } else {
          reward = kWrongBlockReward;
        }
      }
      break;
    }
    case Action::Noop: break;
  }
  reward += kActionPenalty;
  ++s.actions_taken;
  s.terminal = s.actions_taken >= kMaxActions || s.covered == s.task.colored;
  return reward;
}

inline StepOutcome step(WorldState& s, Action a) {
  const double reward = apply_action(s, a);
  return {reward, render(s), s.terminal};
}

inline bool is_success(const WorldState& s) { return s.covered == s.task.colored; }

inline double episode_return(std::span<const double> rewards) {
  double total = 0.0;
  for (double r : rewards) total += r;
  return total;
}

}  // namespace blockplan::world
