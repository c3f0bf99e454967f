#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <deque>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "blockplan/harness.hpp"
#include "blockplan/planner.hpp"

namespace bp = blockplan;
namespace w = blockplan::world;
namespace pl = blockplan::planner;
using pl::RewardVector;
using w::Action;

namespace {

using Path = std::vector<int>;

/// Rewards are a function of the action path; the state is the path itself.
struct ScriptModel {
  struct State {
    Path path;
  };
  std::function<RewardVector(const Path&)> rewards;
  std::optional<Path> fail_on;  // predicting into this path throws

  State initial(const w::WorldState&, const bp::FramePtr&) const { return {}; }
  RewardVector current_rewards(const State& s) const { return rewards(s.path); }
  pl::Transition<State> predict(const State& s, Action a) const {
    State next{s.path};
    next.path.push_back(w::index_of(a));
    if (fail_on && next.path == *fail_on) throw std::runtime_error("model failure");
    return {next, rewards(next.path)};
  }
  State correct(const State& predicted, const w::WorldState&, const bp::FramePtr&) const { return predicted; }
};
static_assert(pl::PlanningModel<ScriptModel>);

RewardVector all(float v) {
  RewardVector r;
  r.fill(v);
  return r;
}

/// Action `best` pays `r`, all others -1.
RewardVector favour(int best, float r) {
  auto v = all(-1.0f);
  v[static_cast<std::size_t>(best)] = r;
  return v;
}

/// Rewards from a hash of the path: arbitrary but fixed.
RewardVector hashed(const Path& p) {
  std::uint64_t h = 1469598103934665603ULL;
  for (int a : p) h = (h ^ static_cast<std::uint64_t>(a + 1)) * 1099511628211ULL;
  bp::SplitMix64 rng(h);
  RewardVector r;
  for (auto& x : r) x = static_cast<float>(std::round(4.0 * rng.uniform01() - 2.0) * 0.5);
  return r;
}

pl::PlannerConfig config(int depth, int trajectories, double k = 8.0) {
  pl::PlannerConfig c;
  c.depth = depth;
  c.trajectories = trajectories;
  c.k = k;
  return c;
}

const w::WorldState& truth() {
  static const w::WorldState s = w::initial_state(w::generate_task(1));
  return s;
}
bp::FramePtr frame() { return bp::share(w::render(truth())); }

struct LogRow {
  long long trajectory;
  int depth;
  std::string action;
  double edge, ret;
  bool new_max;
};

std::vector<LogRow> parse_log(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "trajectory,depth,action,edge_reward,return,new_max");
  std::vector<LogRow> rows;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    LogRow r{};
    std::string f;
    std::getline(ls, f, ',');
    r.trajectory = std::stoll(f);
    std::getline(ls, f, ',');
    r.depth = std::stoi(f);
    std::getline(ls, r.action, ',');
    std::getline(ls, f, ',');
    r.edge = std::stod(f);
    std::getline(ls, f, ',');
    r.ret = std::stod(f);
    std::getline(ls, f, ',');
    r.new_max = f == "1";
    rows.push_back(r);
  }
  return rows;
}

template <class Node>
void collect_nodes(const Node& n, Path& prefix, std::map<Path, std::pair<std::optional<double>, int>>& out) {
  out[prefix] = {n.v, n.n};
  for (int a = 0; a < 6; ++a)
    if (n.children[static_cast<std::size_t>(a)]) {
      prefix.push_back(a);
      collect_nodes(*n.children[static_cast<std::size_t>(a)], prefix, out);
      prefix.pop_back();
    }
}

template <class Node>
std::map<Path, std::pair<std::optional<double>, int>> snapshot(const Node& root) {
  std::map<Path, std::pair<std::optional<double>, int>> out;
  Path prefix;
  collect_nodes(root, prefix, out);
  return out;
}

}  // namespace

// --- uct -----------------------------------------------------------------------

TEST(Uct, ZeroExplorationWhenParentVisitedOnce) { EXPECT_EQ(pl::uct(2.0, 1, 1, 8.0), 2.0); }

TEST(Uct, HandEvaluatedValue) {
  // 0.5 + 8 * sqrt(ln 8 / 2) = 0.5 + 8 * sqrt(1.0397208) = 0.5 + 8 * 1.0196670
  EXPECT_NEAR(pl::uct(0.5, 2, 8, 8.0), 8.6574, 1e-3);
}

TEST(Uct, ExplorationTermIsLinearInK) {
  const double t8 = pl::uct(0.3, 3, 20, 8.0) - 0.3, t16 = pl::uct(0.3, 3, 20, 16.0) - 0.3;
  EXPECT_DOUBLE_EQ(t16, 2.0 * t8);
}

TEST(PlannerConfig, RejectsInvalidValues) {
  auto c = config(0, 1);
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = config(1, 0);
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = config(1, 1, -1.0);
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = config(1, 1);
  c.gamma = 0.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c.gamma = 1.0;
  EXPECT_NO_THROW(c.validate());
}

// --- selection -------------------------------------------------------------------

TEST(SelectChild, OneStepAheadPicksHighestPredictedReward) {
  ScriptModel m{[](const Path&) { return RewardVector{-0.04f, -0.04f, -0.04f, -0.04f, -0.04f, 0.96f}; }, {}};
  pl::Planner<ScriptModel> p(m, config(10, 100));
  p.reset(truth(), frame());
  EXPECT_EQ(p.select_child(p.root()), w::index_of(Action::PlaceBlock));
}

TEST(SelectChild, AblationIsUniformOverUnexpandedActions) {
  ScriptModel m{[](const Path&) { return RewardVector{-0.04f, -0.04f, -0.04f, -0.04f, -0.04f, 0.96f}; }, {}};
  auto c = config(10, 100);
  c.one_step_ahead = false;
  pl::Planner<ScriptModel> p(m, c);
  p.reset(truth(), frame());
  std::array<int, 6> counts{};
  for (int i = 0; i < 10000; ++i) ++counts[static_cast<std::size_t>(p.select_child(p.root()))];
  for (int n : counts) EXPECT_NEAR(n / 10000.0, 1.0 / 6.0, 0.02);
}

TEST(SelectChild, NearTiesAreDrawnFromTheSeededStream) {
  // Actions 1 and 4 lie within the 0.1 tolerance of the best; 0 does not.
  ScriptModel m{[](const Path&) { return RewardVector{0.7f, 0.95f, -1.0f, -1.0f, 1.0f, -1.0f}; }, {}};
  pl::Planner<ScriptModel> p(m, config(10, 100));
  p.reset(truth(), frame());
  std::map<int, int> counts;
  for (int i = 0; i < 2000; ++i) ++counts[p.select_child(p.root())];
  EXPECT_EQ(counts.size(), 2u);
  EXPECT_NEAR(counts[1] / 2000.0, 0.5, 0.05);
  EXPECT_NEAR(counts[4] / 2000.0, 0.5, 0.05);

  auto literal = config(10, 100);
  literal.lowest_index_reward_ties = true;
  pl::Planner<ScriptModel> q(m, literal);
  q.reset(truth(), frame());
  for (int i = 0; i < 100; ++i) EXPECT_EQ(q.select_child(q.root()), 1);
}

TEST(SelectChild, EqualUctGoesToLowestIndex) {
  ScriptModel m{[](const Path&) { return all(0.0f); }, {}};
  pl::Planner<ScriptModel> p(m, config(1, 6));
  p.reset(truth(), frame());
  p.plan();  // depth 1, six trajectories: every child visited once with v = 0
  for (int a = 0; a < 6; ++a) ASSERT_TRUE(p.root().visited(a));
  EXPECT_EQ(p.select_child(p.root()), 0);
}

TEST(SelectChild, ZeroKIsPureExploitation) {
  ScriptModel m{[](const Path& path) { return path.empty() ? RewardVector{0.1f, 0.2f, 0.9f, 0.3f, 0.0f, 0.5f} : all(0.0f); },
                {}};
  pl::Planner<ScriptModel> p(m, config(1, 6, 0.0));
  p.reset(truth(), frame());
  p.plan();
  for (int i = 0; i < 20; ++i) {
    EXPECT_EQ(p.select_child(p.root()), 2);
    p.rollout();
  }
}

TEST(SelectChild, HugeKEqualisesVisitCounts) {
  ScriptModel m{hashed, {}};
  pl::Planner<ScriptModel> p(m, config(1, 61, 1e9));
  p.reset(truth(), frame());
  p.plan();
  int lo = 1 << 30, hi = 0;
  for (const auto& c : p.root().children) {
    lo = std::min(lo, c->n);
    hi = std::max(hi, c->n);
  }
  EXPECT_LE(hi - lo, 1);
}

// --- rollouts --------------------------------------------------------------------

TEST(Rollout, DiscountedReturnOfAForcedPath) {
  // Action 0 is always preferred; its edge rewards are -0.04, -0.04, 0.96.
  ScriptModel m{[](const Path& path) { return favour(0, path.size() == 2 ? 0.96f : -0.04f); }, {}};
  pl::Planner<ScriptModel> p(m, config(3, 1));
  p.reset(truth(), frame());
  // -0.04 + 0.95 * -0.04 + 0.9025 * 0.96 = -0.04 - 0.038 + 0.8664
  EXPECT_NEAR(p.rollout(), 0.7884, 1e-6);
  const auto& c0 = *p.root().child(Action::Forward);
  EXPECT_NEAR(*c0.v, 0.7884, 1e-6);
  EXPECT_NEAR(*c0.child(Action::Forward)->v, -0.04 + 0.95 * 0.96, 1e-6);
  EXPECT_NEAR(*c0.child(Action::Forward)->child(Action::Forward)->v, 0.96, 1e-6);
}

TEST(Rollout, FullyExpandedPathCostsNoModelCalls) {
  ScriptModel m{hashed, {}};
  pl::Planner<ScriptModel> p(m, config(1, 6));
  p.reset(truth(), frame());
  p.plan();
  const auto before = p.stats().total_model_calls;
  p.rollout();
  EXPECT_EQ(p.stats().total_model_calls, before);
}

TEST(Rollout, EachStateIsEvaluatedOnce) {
  ScriptModel m{hashed, {}};
  pl::Planner<ScriptModel> p(m, config(10, 100));
  p.reset(truth(), frame());
  p.plan();
  // One Noop call for the root plus one call per created node.
  EXPECT_EQ(p.stats().total_model_calls, static_cast<long long>(p.tree_size()));
}

TEST(Rollout, MaxBackupOnlyRaisesValuesOnThePath) {
  ScriptModel m{hashed, {}};
  pl::Planner<ScriptModel> p(m, config(4, 1));
  p.reset(truth(), frame());
  std::ostringstream log;
  p.set_log(&log);
  for (int i = 0; i < 60; ++i) {
    const auto before = snapshot(p.root());
    log.str("");
    log.clear();
    p.rollout();
    const auto after = snapshot(p.root());
    std::set<Path> on_path{Path{}};
    Path prefix;
    for (const auto& row : parse_log("trajectory,depth,action,edge_reward,return,new_max\n" + log.str())) {
      prefix.push_back(w::index_of(w::parse_action(row.action)));
      on_path.insert(prefix);
    }
    for (const auto& [path, vn] : before) {
      const auto& [v, n] = after.at(path);
      if (vn.first) {
        EXPECT_GE(*v, *vn.first);
      }
      if (!on_path.count(path)) {
        EXPECT_EQ(v, vn.first);
        EXPECT_EQ(n, vn.second);
      } else {
        EXPECT_EQ(n, vn.second + 1);
      }
    }
  }
}

TEST(Rollout, ModelFailureLeavesTreeUnchanged) {
  ScriptModel m{[](const Path&) { return favour(2, 0.5f); }, Path{2, 2}};
  pl::Planner<ScriptModel> p(m, config(3, 1));
  p.reset(truth(), frame());
  EXPECT_THROW(p.rollout(), std::runtime_error);
  EXPECT_FALSE(p.root().v.has_value());
  EXPECT_EQ(p.root().n, 0);
  ASSERT_NE(p.root().child(Action::TurnRight), nullptr);
  EXPECT_EQ(p.root().child(Action::TurnRight)->n, 0);
  EXPECT_FALSE(p.root().visited(2));
  EXPECT_EQ(p.stats().trajectories, 0);
}

// --- decisions -------------------------------------------------------------------

TEST(Plan, SingleTrajectoryReturnsItsFirstAction) {
  ScriptModel m{[](const Path&) { return favour(3, 0.1f); }, {}};
  pl::Planner<ScriptModel> p(m, config(3, 1));
  p.reset(truth(), frame());
  EXPECT_EQ(p.plan(), Action::StrafeLeft);
}

TEST(Plan, BestActionIsMaximumV) {
  ScriptModel m{hashed, {}};
  pl::Planner<ScriptModel> p(m, config(3, 1));
  p.reset(truth(), frame());
  auto& root = p.mutable_root();
  for (int a : {2, 4}) {
    root.children[static_cast<std::size_t>(a)] = std::make_unique<pl::SearchNode<ScriptModel::State>>();
    root.children[static_cast<std::size_t>(a)]->n = 1;
  }
  root.children[2]->v = 1.0;
  root.children[4]->v = 0.2;
  EXPECT_EQ(p.best_action(), Action::TurnRight);
}

TEST(Plan, WithoutExpandedChildrenFallsBackToRootRewards) {
  ScriptModel m{[](const Path&) { return RewardVector{0.0f, 0.1f, 0.0f, 0.3f, 0.3f, 0.2f}; }, {}};
  pl::Planner<ScriptModel> p(m, config(3, 1));
  p.reset(truth(), frame());
  EXPECT_EQ(p.best_action(), Action::StrafeLeft);
}

TEST(Plan, CallBudgetIsTrajectoriesTimesDepthPlusOne) {
  ScriptModel m{hashed, {}};
  pl::Planner<ScriptModel> p(m, config(10, 100));
  p.reset(truth(), frame());
  const auto a = p.plan();
  const auto first = p.stats().total_model_calls;
  EXPECT_LE(first, 100 * 10 + 1);
  p.advance_root(a, truth(), frame());
  p.plan();
  const auto second = p.stats().total_model_calls - first;
  EXPECT_LE(second, 100 * 10 + 1);
  EXPECT_LT(second, 100 * 10 + 1);  // reuse along the retained subtree
  EXPECT_EQ(p.stats().model_calls, 0);
}

TEST(Plan, DeterministicGivenModelConfigAndSeed) {
  ScriptModel m{hashed, {}};
  for (bool ahead : {true, false}) {
    auto c = config(6, 40);
    c.one_step_ahead = ahead;
    c.tie_break_seed = 7;
    std::ostringstream l1, l2;
    pl::Planner<ScriptModel> p1(m, c), p2(m, c);
    p1.set_log(&l1);
    p2.set_log(&l2);
    p1.reset(truth(), frame());
    p2.reset(truth(), frame());
    for (int step = 0; step < 3; ++step) {
      const auto a1 = p1.plan(), a2 = p2.plan();
      ASSERT_EQ(a1, a2);
      p1.advance_root(a1, truth(), frame());
      p2.advance_root(a2, truth(), frame());
    }
    EXPECT_EQ(l1.str(), l2.str());
  }
}

TEST(Plan, LogReplayReproducesRootValue) {
  ScriptModel m{hashed, {}};
  pl::Planner<ScriptModel> p(m, config(8, 50));
  std::ostringstream log;
  p.set_log(&log);
  p.reset(truth(), frame());
  p.plan();
  double best = -1e300;
  long long last_max_trajectory = 0;
  for (const auto& row : parse_log(log.str())) {
    if (row.new_max) {
      EXPECT_GT(row.ret, best - 1e-9);
      last_max_trajectory = row.trajectory;
    }
    best = std::max(best, row.ret);
  }
  EXPECT_GT(last_max_trajectory, 0);
  EXPECT_NEAR(*p.root().v, best, 1e-6);
  EXPECT_NEAR(*p.stats().best_return, best, 1e-6);
}

// --- root advance ------------------------------------------------------------------

TEST(AdvanceRoot, RetainsValuesAndMarksDescendantsStale) {
  ScriptModel m{hashed, {}};
  pl::Planner<ScriptModel> p(m, config(5, 60));
  p.reset(truth(), frame());
  const auto a = p.plan();
  const auto& child = *p.root().child(a);
  const auto v = child.v;
  const int n = child.n;
  const auto calls = p.stats().total_model_calls;
  p.advance_root(a, truth(), frame());
  EXPECT_EQ(p.root().v, v);
  EXPECT_EQ(p.root().n, n);
  EXPECT_FALSE(p.root().stale);
  EXPECT_EQ(p.root().state.path, Path{w::index_of(a)});
  EXPECT_EQ(p.root().rewards, hashed(Path{w::index_of(a)}));
  EXPECT_EQ(p.stats().total_model_calls, calls + 1);  // the Noop refresh only
  EXPECT_FALSE(p.stats().best_return.has_value());
  std::function<void(const pl::SearchNode<ScriptModel::State>&)> all_stale = [&](const auto& node) {
    for (const auto& c : node.children)
      if (c) {
        EXPECT_TRUE(c->stale);
        all_stale(*c);
      }
  };
  all_stale(p.root());
}

TEST(AdvanceRoot, ExpandsAnUnexploredActionOnDemand) {
  ScriptModel m{[](const Path&) { return favour(0, 0.5f); }, {}};
  pl::Planner<ScriptModel> p(m, config(2, 1));
  p.reset(truth(), frame());
  p.plan();
  ASSERT_EQ(p.root().child(Action::PlaceBlock), nullptr);
  p.advance_root(Action::PlaceBlock, truth(), frame());
  EXPECT_EQ(p.root().state.path, Path{5});
  EXPECT_EQ(p.root().n, 0);
}

TEST(AdvanceRoot, PreviousBestLineIsExploredFirst) {
  ScriptModel m{hashed, {}};
  // k = 0: after the root's children are tried, descents follow the best v.
  pl::Planner<ScriptModel> p(m, config(2, 30, 0.0));
  std::ostringstream log;
  p.set_log(&log);
  p.reset(truth(), frame());
  const auto a = p.plan();
  const auto& child = *p.root().child(a);
  int best = -1;
  for (int b = 0; b < 6; ++b) {
    ASSERT_TRUE(child.visited(b));
    if (best < 0 || *child.children[static_cast<std::size_t>(b)]->v >
                        *child.children[static_cast<std::size_t>(best)]->v)
      best = b;
  }
  p.advance_root(a, truth(), frame());
  const auto before = parse_log(log.str()).size();
  p.rollout();
  const auto rows = parse_log(log.str());
  ASSERT_GT(rows.size(), before);
  EXPECT_EQ(rows[before].action, std::string(w::action_name(w::action_from_index(best))));
  EXPECT_EQ(p.root().child(w::action_from_index(best))->stale, false);
}

// --- perfect model -------------------------------------------------------------------

namespace {

/// Fewest actions to a +0.96 placement, by breadth-first search over the
/// simulator (placements that are not the goal are excluded).
int actions_to_first_reward(const w::WorldState& start, int limit) {
  std::deque<std::pair<w::WorldState, int>> frontier{{start, 0}};
  std::set<std::tuple<int, int, int>> seen{{start.pose.cell.row, start.pose.cell.col, static_cast<int>(start.pose.heading)}};
  while (!frontier.empty()) {
    auto [s, d] = frontier.front();
    frontier.pop_front();
    if (d + 1 > limit) continue;
    auto place = s;
    if (!place.terminal && w::apply_action(place, Action::PlaceBlock) > 0.0) return d + 1;
    for (int a = 0; a < 5; ++a) {
      auto next = s;
      if (next.terminal) continue;
      w::apply_action(next, w::action_from_index(a));
      if (seen.insert({next.pose.cell.row, next.pose.cell.col, static_cast<int>(next.pose.heading)}).second)
        frontier.push_back({next, d + 1});
    }
  }
  return -1;
}

}  // namespace

// With every movement tied at -0.04 the search has no signal until it stumbles
// on a placement, so 100 descents reliably see 4 actions ahead but not 9.
TEST(OraclePlanner, FirstDecisionSeesANearbyReward) {
  const pl::OracleModel oracle;
  int checked = 0;
  for (const auto& task : bp::harness::build_test_set(31, 60)) {
    const auto s = w::initial_state(task);
    const int d = actions_to_first_reward(s, 4);
    if (d < 0) continue;
    pl::Planner<pl::OracleModel> p(oracle, pl::PlannerConfig{});
    p.reset(s, bp::share(w::render(s)));
    const auto a = p.plan();
    EXPECT_GT(*p.root().child(a)->v, 0.0) << "task seed " << task.seed << " reward " << d << " actions away";
    ++checked;
  }
  EXPECT_GE(checked, 30);
}

TEST(OraclePlanner, CollectsARewardWithinNineActionsReach) {
  const pl::OracleModel oracle;
  int checked = 0;
  for (const auto& task : bp::harness::build_test_set(31, 60)) {
    const int d = actions_to_first_reward(w::initial_state(task), 9);
    if (d < 5) continue;
    pl::PlannerAgent<pl::OracleModel> agent(oracle, pl::PlannerConfig{});
    const auto ep = bp::run_episode(agent, task);
    EXPECT_TRUE(std::any_of(ep.rewards.begin(), ep.rewards.end(), [](double r) { return r > 0.0; }))
        << "task seed " << task.seed << " reward " << d << " actions away";
    ++checked;
  }
  EXPECT_GE(checked, 5);
}
