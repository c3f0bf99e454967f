#pragma once

// Experiment configuration: a flat `key = value` file. Every key has a
// default; unknown keys, duplicate keys and malformed values are errors.

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "blockplan/dqn.hpp"
#include "blockplan/planner.hpp"
#include "blockplan/transition_model.hpp"

namespace blockplan::harness {

struct ExperimentConfig {
  // seeds
  std::uint64_t task_seed = 1;   // the fixed evaluation set
  std::uint64_t agent_seed = 2;  // network init, tie-breaks, exploration
  std::uint64_t data_seed = 3;   // training tasks, minibatches

  // evaluation and reporting
  int eval_tasks = 100;
  long long eval_interval = 2000;
  std::vector<long long> milestones{20000, 50000, 100000};
  int smoothing_half_window = 8;
  std::vector<std::string> eval_agents{"mcts", "mcts-no1ahead", "dqn"};

  // transition model
  long long total_steps = 100000;
  model::ModelShape model_shape{{8, 16, 32, 64}, 256};
  nn::RMSPropConfig model_optim{};
  int batch = 32;
  std::size_t replay_capacity = 50000;
  std::size_t seed_transitions = 10000;
  int collect_every = 10;
  double collect_epsilon = 0.1;
  planner::PlannerConfig collect_planner = [] {
    planner::PlannerConfig c;
    c.depth = 5;
    c.trajectories = 4;
    return c;
  }();
  double noop_probability = model::kNoopProbability;
  int heldout_every = 10;
  std::size_t heldout_capacity = 2000;
  int log_interval = 100;
  planner::PlannerConfig planner{};

  // DQN
  long long dqn_total_updates = 100000;
  dqn::QNetShape dqn_shape{};
  dqn::DQNConfig dqn = [] {
    dqn::DQNConfig c;
    c.optim.learning_rate = 2.5e-4;
    c.optim.epsilon = 0.01;
    return c;
  }();

  void validate() const;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

template <class T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const auto* end = v.data() + v.size();
  const auto r = std::from_chars(v.data(), end, out);
  if (r.ec != std::errc() || r.ptr != end) throw ConfigError(key + ": cannot parse '" + v + "'");
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

inline std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <class T>
std::string join(const std::vector<T>& xs) {
  std::ostringstream os;
  for (std::size_t i = 0; i < xs.size(); ++i) os << (i ? "," : "") << xs[i];
  return os.str();
}

inline std::string real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct Key {
  std::string name;
  std::string doc;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

template <class T, class F>
Key number(std::string name, std::string doc, F field) {
  return {name, std::move(doc),
          [name, field](ExperimentConfig& c, const std::string& v) { field(c) = parse_number<T>(name, v); },
          [field](const ExperimentConfig& c) {
            if constexpr (std::is_floating_point_v<T>) return real(field(const_cast<ExperimentConfig&>(c)));
            else return std::to_string(field(const_cast<ExperimentConfig&>(c)));
          }};
}

template <class F>
Key boolean(std::string name, std::string doc, F field) {
  return {name, std::move(doc),
          [name, field](ExperimentConfig& c, const std::string& v) { field(c) = parse_bool(name, v); },
          [field](const ExperimentConfig& c) {
            return std::string(field(const_cast<ExperimentConfig&>(c)) ? "true" : "false");
          }};
}

template <class F>
Key int_list(std::string name, std::string doc, F field) {
  return {name, std::move(doc),
          [name, field](ExperimentConfig& c, const std::string& v) {
            auto& out = field(c);
            out.clear();
            for (const auto& s : split_list(v)) out.push_back(parse_number<std::remove_reference_t<decltype(out[0])>>(name, s));
          },
          [field](const ExperimentConfig& c) { return join(field(const_cast<ExperimentConfig&>(c))); }};
}

template <std::size_t N, class F>
Key int_array(std::string name, std::string doc, F field) {
  return {name, std::move(doc),
          [name, field](ExperimentConfig& c, const std::string& v) {
            const auto items = split_list(v);
            if (items.size() != N) throw ConfigError(name + ": expected " + std::to_string(N) + " comma-separated values");
            for (std::size_t i = 0; i < N; ++i) field(c)[i] = parse_number<int>(name, items[i]);
          },
          [field](const ExperimentConfig& c) {
            const auto& a = field(const_cast<ExperimentConfig&>(c));
            return join(std::vector<int>(a.begin(), a.end()));
          }};
}

}  // namespace detail

/// Every recognized key, its documentation, and accessors.
inline const std::vector<detail::Key>& config_keys() {
  using C = ExperimentConfig;
  using namespace detail;
  static const std::vector<Key> keys = {
      number<std::uint64_t>("task_seed", "seed of the fixed evaluation task set", [](C& c) -> auto& { return c.task_seed; }),
      number<std::uint64_t>("agent_seed", "network init, planner tie-breaks, exploration", [](C& c) -> auto& { return c.agent_seed; }),
      number<std::uint64_t>("data_seed", "training tasks and minibatch sampling", [](C& c) -> auto& { return c.data_seed; }),
      number<int>("eval_tasks", "size of the evaluation task set", [](C& c) -> auto& { return c.eval_tasks; }),
      number<long long>("eval_interval", "evaluate every this many training steps", [](C& c) -> auto& { return c.eval_interval; }),
      int_list("milestones", "training steps reported in the results table", [](C& c) -> auto& { return c.milestones; }),
      number<int>("smoothing_half_window", "moving-average half window, in evaluation points",
                  [](C& c) -> auto& { return c.smoothing_half_window; }),
      {"eval_agents", "agents evaluated at each point: mcts, mcts-no1ahead, dqn, random, oracle",
       [](C& c, const std::string& v) { c.eval_agents = split_list(v); },
       [](const C& c) { return join(c.eval_agents); }},

      number<long long>("total_steps", "transition-model training steps", [](C& c) -> auto& { return c.total_steps; }),
      int_array<4>("model_channels", "encoder channel widths (4 values)", [](C& c) -> auto& { return c.model_shape.channels; }),
      number<int>("model_reward_hidden", "reward-head hidden width", [](C& c) -> auto& { return c.model_shape.reward_hidden; }),
      number<double>("learning_rate", "model RMSProp learning rate", [](C& c) -> auto& { return c.model_optim.learning_rate; }),
      number<double>("rms_decay", "model RMSProp decay", [](C& c) -> auto& { return c.model_optim.decay; }),
      number<double>("rms_epsilon", "model RMSProp epsilon", [](C& c) -> auto& { return c.model_optim.epsilon; }),
      number<int>("batch", "model minibatch size", [](C& c) -> auto& { return c.batch; }),
      number<std::size_t>("replay_capacity", "model replay capacity in transitions", [](C& c) -> auto& { return c.replay_capacity; }),
      number<std::size_t>("seed_transitions", "random-policy transitions collected before training",
                          [](C& c) -> auto& { return c.seed_transitions; }),
      number<int>("collect_every", "training steps between collected planner episodes", [](C& c) -> auto& { return c.collect_every; }),
      number<double>("collect_epsilon", "random-action probability while collecting", [](C& c) -> auto& { return c.collect_epsilon; }),
      number<int>("collect_depth", "planner depth while collecting", [](C& c) -> auto& { return c.collect_planner.depth; }),
      number<int>("collect_trajectories", "planner trajectories while collecting",
                  [](C& c) -> auto& { return c.collect_planner.trajectories; }),
      number<double>("noop_probability", "fraction of training pairs using the noop encoding",
                     [](C& c) -> auto& { return c.noop_probability; }),
      number<int>("heldout_every", "every n-th collected episode is held out from training", [](C& c) -> auto& { return c.heldout_every; }),
      number<std::size_t>("heldout_capacity", "held-out transitions kept", [](C& c) -> auto& { return c.heldout_capacity; }),
      number<int>("log_interval", "training steps per curve row", [](C& c) -> auto& { return c.log_interval; }),

      number<int>("planner_depth", "rollout depth", [](C& c) -> auto& { return c.planner.depth; }),
      number<int>("planner_trajectories", "rollouts per decision", [](C& c) -> auto& { return c.planner.trajectories; }),
      number<double>("planner_k", "UCT exploration constant", [](C& c) -> auto& { return c.planner.k; }),
      number<double>("planner_gamma", "planner discount", [](C& c) -> auto& { return c.planner.gamma; }),
      number<double>("planner_reward_tie_tolerance", "predicted rewards this close count as tied",
                     [](C& c) -> auto& { return c.planner.reward_tie_tolerance; }),
      boolean("planner_lowest_index_reward_ties", "break reward ties by action index instead of the seeded stream",
              [](C& c) -> auto& { return c.planner.lowest_index_reward_ties; }),

      number<long long>("dqn_total_updates", "DQN gradient updates", [](C& c) -> auto& { return c.dqn_total_updates; }),
      int_array<3>("dqn_channels", "Q-network conv widths (3 values)", [](C& c) -> auto& { return c.dqn_shape.channels; }),
      number<int>("dqn_hidden", "Q-network hidden width", [](C& c) -> auto& { return c.dqn_shape.hidden; }),
      number<double>("dqn_gamma", "DQN discount", [](C& c) -> auto& { return c.dqn.gamma; }),
      number<double>("dqn_epsilon_start", "exploration at the first step", [](C& c) -> auto& { return c.dqn.epsilon_start; }),
      number<double>("dqn_epsilon_end", "exploration after annealing", [](C& c) -> auto& { return c.dqn.epsilon_end; }),
      number<double>("dqn_anneal_fraction", "share of environment steps spent annealing",
                     [](C& c) -> auto& { return c.dqn.anneal_fraction; }),
      number<double>("dqn_eval_epsilon", "exploration during evaluation", [](C& c) -> auto& { return c.dqn.eval_epsilon; }),
      number<int>("dqn_target_sync", "updates between target-network syncs", [](C& c) -> auto& { return c.dqn.target_sync; }),
      number<std::size_t>("dqn_replay_capacity", "DQN replay capacity in transitions",
                          [](C& c) -> auto& { return c.dqn.replay_capacity; }),
      number<int>("dqn_batch", "DQN minibatch size", [](C& c) -> auto& { return c.dqn.batch; }),
      number<int>("dqn_learning_starts", "transitions stored before the first update",
                  [](C& c) -> auto& { return c.dqn.learning_starts; }),
      number<double>("dqn_learning_rate", "DQN RMSProp learning rate", [](C& c) -> auto& { return c.dqn.optim.learning_rate; }),
      number<double>("dqn_rms_decay", "DQN RMSProp decay", [](C& c) -> auto& { return c.dqn.optim.decay; }),
      number<double>("dqn_rms_epsilon", "DQN RMSProp epsilon", [](C& c) -> auto& { return c.dqn.optim.epsilon; }),
  };
  return keys;
}

inline void ExperimentConfig::validate() const {
  if (eval_tasks < 1) throw ConfigError("eval_tasks must be >= 1");
  if (eval_interval < 1) throw ConfigError("eval_interval must be > 0");
  if (smoothing_half_window < 0) throw ConfigError("smoothing_half_window must be >= 0");
  if (total_steps < 0 || dqn_total_updates < 0) throw ConfigError("step totals must be >= 0");
  if (batch < 1 || collect_every < 1 || log_interval < 1 || heldout_every < 1)
    throw ConfigError("batch, collect_every, log_interval and heldout_every must be >= 1");
  if (!(collect_epsilon >= 0.0 && collect_epsilon <= 1.0)) throw ConfigError("collect_epsilon must lie in [0, 1]");
  if (!(noop_probability >= 0.0 && noop_probability <= 1.0)) throw ConfigError("noop_probability must lie in [0, 1]");
  const auto min_capacity = static_cast<std::size_t>(world::kMaxActions);
  if (replay_capacity < min_capacity || heldout_capacity < min_capacity || dqn.replay_capacity < min_capacity)
    throw ConfigError("replay capacities must hold one episode (" + std::to_string(min_capacity) + " transitions)");
  if (seed_transitions > replay_capacity) throw ConfigError("seed_transitions must not exceed replay_capacity");
  if (dqn.learning_starts < 0 || static_cast<std::size_t>(dqn.learning_starts) > dqn.replay_capacity)
    throw ConfigError("dqn_learning_starts must lie in [0, dqn_replay_capacity]");
  if (dqn_shape.hidden < 1) throw ConfigError("dqn_hidden must be >= 1");
  for (const auto& a : eval_agents)
    if (a != "mcts" && a != "mcts-no1ahead" && a != "dqn" && a != "random" && a != "oracle")
      throw ConfigError("eval_agents: unknown agent '" + a + "'");
  try {
    planner.validate();
    collect_planner.validate();
    dqn.validate();
    model::ModelNet::audit(model_shape);
    for (int ch : dqn_shape.channels)
      if (ch < 1) throw ConfigError("dqn_channels must be positive");
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
}

inline ExperimentConfig parse_config(std::istream& in, const std::string& origin = "config") {
  ExperimentConfig c;
  std::set<std::string> seen;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = origin + ":" + std::to_string(lineno) + ": ";
    if (eq == std::string::npos) throw ConfigError(where + "expected key = value");
    const auto key = detail::trim(line.substr(0, eq));
    const auto value = detail::trim(line.substr(eq + 1));
    const auto& keys = config_keys();
    const auto it = std::find_if(keys.begin(), keys.end(), [&](const detail::Key& k) { return k.name == key; });
    if (it == keys.end()) throw ConfigError(where + "unknown key '" + key + "'");
    if (!seen.insert(key).second) throw ConfigError(where + "duplicate key '" + key + "'");
    try {
      it->set(c, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
  c.validate();
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path);
  return parse_config(in, path);
}

/// Every key with its resolved value; parse_config(write_config(c)) == c.
inline void write_config(std::ostream& out, const ExperimentConfig& c) {
  for (const auto& k : config_keys()) out << "# " << k.doc << "\n" << k.name << " = " << k.get(c) << "\n";
}

}  // namespace blockplan::harness
