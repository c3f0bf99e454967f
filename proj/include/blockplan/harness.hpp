#pragma once

// Evaluation protocol: a fixed task set, per-task episode returns and
// successes, agents built by name, moving-average smoothing and the
// milestone table.

#include <chrono>
#include <cstdio>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "blockplan/agent.hpp"
#include "blockplan/config.hpp"
#include "blockplan/dqn.hpp"
#include "blockplan/gridworld.hpp"
#include "blockplan/planner.hpp"
#include "blockplan/rng.hpp"
#include "blockplan/transition_model.hpp"

namespace blockplan::harness {

/// `count` tasks whose seeds are the first outputs of the stream keyed by
/// `seed`.
inline std::vector<world::TaskSpec> build_test_set(std::uint64_t seed, int count = 100) {
  SplitMix64 rng = SplitMix64::from_seed(seed);
  std::vector<world::TaskSpec> tasks;
  tasks.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) tasks.push_back(world::generate_task(rng.next()));
  return tasks;
}

struct EvalReport {
  long long step = 0;
  double avg_reward = 0.0;
  double success_rate = 0.0;
  std::vector<double> returns;
  std::vector<bool> successes;
  int actions = 0;
  double seconds = 0.0;  // wall clock; never written to CSV

  int successful() const {
    int n = 0;
    for (bool s : successes) n += s ? 1 : 0;
    return n;
  }
};

/// Runs every task to termination, in task order.
inline EvalReport evaluate(Agent& agent, const std::vector<world::TaskSpec>& tasks, long long step = 0) {
  EvalReport r;
  r.step = step;
  const auto start = std::chrono::steady_clock::now();
  double sum = 0.0;
  for (const auto& task : tasks) {
    const auto ep = run_episode(agent, task);
    r.returns.push_back(ep.total_reward());
    r.successes.push_back(ep.success());
    r.actions += ep.length();
    sum += ep.total_reward();
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (!tasks.empty()) {
    r.avg_reward = sum / static_cast<double>(tasks.size());
    r.success_rate = static_cast<double>(r.successful()) / static_cast<double>(tasks.size());
  }
  return r;
}

inline constexpr std::uint64_t kEvalStream = 0xE7A1;

/// Owns an agent plus whatever model it plans or acts with.
struct AgentBundle {
  std::unique_ptr<planner::LearnedModel> learned;
  std::unique_ptr<planner::OracleModel> oracle;
  std::unique_ptr<Agent> agent;
};

inline bool needs_model(const std::string& name) { return name == "mcts" || name == "mcts-no1ahead"; }
inline bool needs_qnet(const std::string& name) { return name == "dqn"; }

/// Evaluation agents: mcts, mcts-no1ahead, dqn, random, oracle. Networks are
/// borrowed and must outlive the bundle.
inline AgentBundle make_agent(const std::string& name, const ExperimentConfig& c, const model::ModelNet* net,
                              const dqn::QNet* qnet) {
  AgentBundle b;
  auto planning = c.planner;
  planning.tie_break_seed = c.agent_seed;
  const SplitMix64 base = SplitMix64::from_seed(c.agent_seed).split(kEvalStream);
  if (needs_model(name)) {
    if (!net) throw std::invalid_argument(name + " needs transition-model weights");
    planning.one_step_ahead = name == "mcts";
    b.learned = std::make_unique<planner::LearnedModel>(*net);
    b.agent = std::make_unique<planner::PlannerAgent<planner::LearnedModel>>(*b.learned, planning);
  } else if (name == "oracle") {
    b.oracle = std::make_unique<planner::OracleModel>();
    b.agent = std::make_unique<planner::PlannerAgent<planner::OracleModel>>(*b.oracle, planning);
  } else if (needs_qnet(name)) {
    if (!qnet) throw std::invalid_argument("dqn needs Q-network weights");
    b.agent = std::make_unique<dqn::DQNAgent>(*qnet, c.dqn.eval_epsilon, base);
  } else if (name == "random") {
    b.agent = std::make_unique<RandomAgent>(base);
  } else {
    throw std::invalid_argument("unknown agent '" + name + "'");
  }
  return b;
}

// --- smoothing and tables ----------------------------------------------------

/// Symmetric moving average; the window is truncated at both ends.
inline std::vector<double> moving_average(const std::vector<double>& xs, int half_window) {
  std::vector<double> out(xs.size());
  const auto n = static_cast<long long>(xs.size());
  for (long long i = 0; i < n; ++i) {
    const long long lo = std::max(0LL, i - half_window), hi = std::min(n - 1, i + half_window);
    double s = 0.0;
    for (long long j = lo; j <= hi; ++j) s += xs[static_cast<std::size_t>(j)];
    out[static_cast<std::size_t>(i)] = s / static_cast<double>(hi - lo + 1);
  }
  return out;
}

inline std::string fixed6(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

/// One row of eval.csv.
struct EvalRow {
  long long step = 0;
  std::string agent;
  double avg_reward = 0.0;
  double success_rate = 0.0;
};

inline constexpr const char* kEvalHeader = "step,agent,avg_reward,success_rate";

inline std::string eval_line(const EvalRow& r) {
  return std::to_string(r.step) + "," + r.agent + "," + fixed6(r.avg_reward) + "," + fixed6(r.success_rate);
}

inline std::vector<EvalRow> read_eval_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::string line;
  if (!std::getline(in, line) || line != kEvalHeader) throw std::runtime_error(path + ": expected header " + kEvalHeader);
  std::vector<EvalRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string step, agent, reward, success;
    if (!std::getline(ss, step, ',') || !std::getline(ss, agent, ',') || !std::getline(ss, reward, ',') ||
        !std::getline(ss, success, ','))
      throw std::runtime_error(path + ": bad row '" + line + "'");
    rows.push_back({std::stoll(step), agent, std::stod(reward), std::stod(success)});
  }
  return rows;
}

/// Curves per agent, in first-appearance order.
struct AgentCurve {
  std::string agent;
  std::vector<long long> steps;
  std::vector<double> avg_reward, success_rate;
};

inline std::vector<AgentCurve> curves(const std::vector<EvalRow>& rows) {
  std::vector<AgentCurve> out;
  for (const auto& r : rows) {
    auto it = std::find_if(out.begin(), out.end(), [&](const AgentCurve& c) { return c.agent == r.agent; });
    if (it == out.end()) {
      out.push_back({r.agent, {}, {}, {}});
      it = out.end() - 1;
    }
    it->steps.push_back(r.step);
    it->avg_reward.push_back(r.avg_reward);
    it->success_rate.push_back(r.success_rate);
  }
  return out;
}

inline std::vector<AgentCurve> smoothed(const std::vector<AgentCurve>& cs, int half_window) {
  auto out = cs;
  for (auto& c : out) {
    c.avg_reward = moving_average(c.avg_reward, half_window);
    c.success_rate = moving_average(c.success_rate, half_window);
  }
  return out;
}

inline void write_curves_csv(std::ostream& out, const std::vector<AgentCurve>& cs) {
  out << kEvalHeader << "\n";
  for (const auto& c : cs)
    for (std::size_t i = 0; i < c.steps.size(); ++i)
      out << eval_line({c.steps[i], c.agent, c.avg_reward[i], c.success_rate[i]}) << "\n";
}

inline std::string display_name(const std::string& agent) {
  if (agent == "mcts") return "MCTS";
  if (agent == "mcts-no1ahead") return "MCTS, no 1-ahead reward";
  if (agent == "dqn") return "DQN";
  if (agent == "random") return "Random";
  if (agent == "oracle") return "MCTS, perfect model";
  return agent;
}

/// Average reward and success rate per agent at each milestone; missing
/// points print as "-".
inline void write_table(std::ostream& csv, std::ostream& md, const std::vector<EvalRow>& rows,
                        const std::vector<long long>& milestones) {
  const auto cs = curves(rows);
  auto at = [](const AgentCurve& c, long long step) -> std::optional<std::size_t> {
    for (std::size_t i = 0; i < c.steps.size(); ++i)
      if (c.steps[i] == step) return i;
    return std::nullopt;
  };
  csv << "agent";
  for (auto m : milestones) csv << ",avg_reward@" << m;
  for (auto m : milestones) csv << ",success_rate@" << m;
  csv << "\n";
  md << "| Algorithm |";
  for (auto m : milestones) md << " Avg. reward @" << m << " |";
  for (auto m : milestones) md << " Success rate @" << m << " |";
  md << "\n|---|";
  for (std::size_t i = 0; i < 2 * milestones.size(); ++i) md << "---:|";
  md << "\n";
  for (const auto& c : cs) {
    csv << c.agent;
    md << "| " << display_name(c.agent) << " |";
    for (int col = 0; col < 2; ++col)
      for (auto m : milestones) {
        const auto i = at(c, m);
        const double v = i ? (col == 0 ? c.avg_reward[*i] : c.success_rate[*i]) : 0.0;
        char two[32];
        std::snprintf(two, sizeof two, "%.2f", v);
        csv << "," << (i ? fixed6(v) : "-");
        md << " " << (i ? two : "-") << " |";
      }
    csv << "\n";
    md << "\n";
  }
}

}  // namespace blockplan::harness
