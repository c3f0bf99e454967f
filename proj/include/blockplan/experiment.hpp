#pragma once

// The full protocol: train the transition model while collecting experience
// with the planner, then train DQN, evaluating both on the fixed task set at
// regular intervals. Every output is a function of the config alone, and a
// run resumes from its last checkpoint with byte-identical results.
//
// Output directory:
//   config.txt            resolved configuration (all keys, all seeds)
//   tasks.txt             the evaluation task set
//   model_curve.csv       step,frame_mse,reward_mse      (training batches)
//   heldout.csv           step,frame_mse,reward_mse,initial_frame_mse,initial_reward_mse
//   dqn_curve.csv         step,td_loss,epsilon
//   eval.csv              step,agent,avg_reward,success_rate
//   eval_tasks.csv        step,agent,task,seed,return,success
//   eval_smoothed.csv     eval.csv after the moving average
//   table.csv, table.md   milestone table
//   reward.svg, success.svg
//   latency.log           wall-clock seconds per action (not reproducible)
//   model.bpw, dqn.bpw    final weights
//   checkpoint/           latest resumable state

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "blockplan/agent.hpp"
#include "blockplan/config.hpp"
#include "blockplan/dqn.hpp"
#include "blockplan/harness.hpp"
#include "blockplan/nn/serialize.hpp"
#include "blockplan/planner.hpp"
#include "blockplan/plot.hpp"
#include "blockplan/replay.hpp"
#include "blockplan/transition_model.hpp"
#include "blockplan/world_io.hpp"

namespace blockplan::harness {

namespace fs = std::filesystem;

// Stream tags: every consumer of randomness owns a split of a config seed.
inline constexpr std::uint64_t kModelInitStream = 0x30DE1;
inline constexpr std::uint64_t kModelTaskStream = 0x7A5C1;
inline constexpr std::uint64_t kModelSampleStream = 0x5A301;
inline constexpr std::uint64_t kCollectStream = 0xC0111;
inline constexpr std::uint64_t kCollectEpsilonStream = 0xC0112;
inline constexpr std::uint64_t kDqnInitStream = 0xD0E1;
inline constexpr std::uint64_t kDqnTaskStream = 0xD0E2;
inline constexpr std::uint64_t kDqnActStream = 0xD0E3;
inline constexpr std::uint64_t kDqnSampleStream = 0xD0E4;

/// Output `index` of the stream `split(tag)` of `seed`: random access into a
/// sequence of task or agent seeds.
inline std::uint64_t stream_value(std::uint64_t seed, std::uint64_t tag, std::uint64_t index) {
  return SplitMix64(SplitMix64::from_seed(seed).split(tag).key(), index).next();
}

inline std::uint64_t init_seed(std::uint64_t agent_seed, std::uint64_t tag) {
  return SplitMix64::from_seed(agent_seed).split(tag).key();
}

// --- small file helpers -------------------------------------------------------

inline void append_line(const fs::path& path, const std::string& line) {
  std::ofstream out(path, std::ios::app | std::ios::binary);
  if (!out) throw std::runtime_error("cannot append to " + path.string());
  out << line << "\n";
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

inline std::string real17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// Resumable counters as flat `key value...` lines.
class StateFile {
 public:
  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  void set(const std::string& key, long long v) { set(key, std::to_string(v)); }
  void set(const std::string& key, std::uint64_t v) { set(key, std::to_string(v)); }
  void set_real(const std::string& key, double v) { set(key, real17(v)); }

  bool has(const std::string& key) const { return values_.count(key) > 0; }
  const std::string& get(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) throw std::runtime_error("checkpoint state lacks '" + key + "'");
    return it->second;
  }
  long long integer(const std::string& key) const { return std::stoll(get(key)); }
  std::uint64_t u64(const std::string& key) const { return std::stoull(get(key)); }
  double real(const std::string& key) const { return std::stod(get(key)); }

  void save(const fs::path& path) const {
    std::ostringstream os;
    for (const auto& [k, v] : values_) os << k << " " << v << "\n";
    write_text(path, os.str());
  }
  static StateFile load(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    StateFile s;
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto sp = line.find(' ');
      s.values_[line.substr(0, sp)] = sp == std::string::npos ? "" : line.substr(sp + 1);
    }
    return s;
  }

 private:
  std::map<std::string, std::string> values_;
};

/// Mean of the losses since the last curve row.
struct Accumulator {
  double a = 0.0, b = 0.0;
  long long n = 0;

  void add(double x, double y = 0.0) {
    a += x;
    b += y;
    ++n;
  }
  void save(StateFile& s, const std::string& prefix) const {
    s.set_real(prefix + "_a", a);
    s.set_real(prefix + "_b", b);
    s.set(prefix + "_n", n);
  }
  void load(const StateFile& s, const std::string& prefix) {
    a = s.real(prefix + "_a");
    b = s.real(prefix + "_b");
    n = s.integer(prefix + "_n");
  }
};

// --- transition model ---------------------------------------------------------

/// Model training with planner-driven experience collection.
class ModelPipeline {
 public:
  explicit ModelPipeline(const ExperimentConfig& c)
      : c_(c),
        net_(c.model_shape, init_seed(c.agent_seed, kModelInitStream)),
        initial_(c.model_shape, init_seed(c.agent_seed, kModelInitStream)),
        opt_(net_.parameters(), c.model_optim),
        replay_(c.replay_capacity),
        heldout_(std::max<std::size_t>(c.heldout_capacity, world::kMaxActions)),
        rng_(SplitMix64::from_seed(c.data_seed).split(kModelSampleStream)) {}

  const model::ModelNet& net() const { return net_; }
  model::ModelNet& net() { return net_; }
  const model::ModelNet& initial_net() const { return initial_; }
  const ReplayBuffer& replay() const { return replay_; }
  const ReplayBuffer& heldout() const { return heldout_; }
  long long step() const { return step_; }
  std::uint64_t collected() const { return collected_; }

  world::TaskSpec training_task(std::uint64_t index) const {
    return world::generate_task(stream_value(c_.data_seed, kModelTaskStream, index));
  }

  /// Every `heldout_every`-th collected episode goes to the held-out buffer.
  void store(Episode ep) {
    if ((collected_ + 1) % static_cast<std::uint64_t>(c_.heldout_every) == 0) heldout_.add(std::move(ep));
    else replay_.add(std::move(ep));
    ++collected_;
  }

  /// Random-policy episodes until the training buffer holds seed_transitions.
  void seed_replay() {
    RandomAgent agent(SplitMix64::from_seed(c_.agent_seed).split(kCollectStream));
    while (replay_.size() < c_.seed_transitions) store(run_episode(agent, training_task(collected_)));
  }

  /// One episode with the planner over the current model, epsilon-greedy.
  void collect() {
    planner::LearnedModel model(net_);
    auto cfg = c_.collect_planner;
    cfg.tie_break_seed = c_.agent_seed;
    planner::PlannerAgent<planner::LearnedModel> agent(model, cfg, c_.collect_epsilon,
                                                        stream_value(c_.agent_seed, kCollectEpsilonStream, collected_));
    store(run_episode(agent, training_task(collected_)));
  }

  /// Collects when due, then one minibatch update.
  model::Losses train_one() {
    if (step_ > 0 && step_ % c_.collect_every == 0) collect();
    const auto records = replay_.sample(static_cast<std::size_t>(c_.batch), rng_);
    const auto pairs = model::noop_mix(records, rng_, c_.noop_probability);
    const auto l = model::train_step(net_, opt_, pairs);
    ++step_;
    return l;
  }

  /// Every held-out transition as both a real-action pair and a noop pair.
  std::vector<model::TrainingPair> heldout_pairs() const {
    std::vector<model::TrainingPair> pairs;
    pairs.reserve(2 * heldout_.size());
    for (std::size_t i = 0; i < heldout_.size(); ++i) {
      const auto rec = heldout_.record(i);
      pairs.push_back(model::make_training_pair(rec, false));
      pairs.push_back(model::make_training_pair(rec, true));
    }
    return pairs;
  }

  void save(const fs::path& dir, StateFile& s) const {
    net_.save(dir / "model.bpw");
    nn::save_optimizer(dir / "model.bpo", opt_);
    replay_.save((dir / "model_replay.txt").string());
    heldout_.save((dir / "model_heldout.txt").string());
    s.set("model_step", step_);
    s.set("model_collected", collected_);
    s.set("model_rng_counter", rng_.counter());
  }

  void load(const fs::path& dir, const StateFile& s) {
    net_.load(dir / "model.bpw");
    nn::load_optimizer(dir / "model.bpo", opt_);
    replay_ = ReplayBuffer::load((dir / "model_replay.txt").string());
    heldout_ = ReplayBuffer::load((dir / "model_heldout.txt").string());
    step_ = s.integer("model_step");
    collected_ = s.u64("model_collected");
    rng_ = SplitMix64(rng_.key(), s.u64("model_rng_counter"));
  }

 private:
  ExperimentConfig c_;
  model::ModelNet net_;
  model::ModelNet initial_;
  nn::RMSProp opt_;
  ReplayBuffer replay_;
  ReplayBuffer heldout_;
  SplitMix64 rng_;
  long long step_ = 0;
  std::uint64_t collected_ = 0;
};

// --- DQN ----------------------------------------------------------------------

/// One environment step per update once learning has started. Episodes enter
/// replay when they finish.
class DQNPipeline {
 public:
  explicit DQNPipeline(const ExperimentConfig& c)
      : c_(c),
        net_(c.dqn_shape, init_seed(c.agent_seed, kDqnInitStream)),
        target_(c.dqn_shape, init_seed(c.agent_seed, kDqnInitStream)),
        opt_(net_.parameters(), c.dqn.optim),
        replay_(c.dqn.replay_capacity),
        act_rng_(SplitMix64::from_seed(c.agent_seed).split(kDqnActStream)),
        sample_rng_(SplitMix64::from_seed(c.data_seed).split(kDqnSampleStream)) {}

  const dqn::QNet& net() const { return net_; }
  dqn::QNet& net() { return net_; }
  const ReplayBuffer& replay() const { return replay_; }
  long long updates() const { return updates_; }
  long long env_steps() const { return env_steps_; }

  double epsilon() const { return dqn::epsilon_at(c_.dqn, env_steps_, c_.dqn.learning_starts + c_.dqn_total_updates); }

  /// Acts once; returns the TD loss if an update ran.
  std::optional<double> step() {
    if (!current_) begin(episodes_, {});
    const auto stack = current_->stack(current_->length());
    const auto a = dqn::act(net_, stack, epsilon(), act_rng_);
    auto state = current_->states.back();
    const double r = world::apply_action(state, a);
    current_->actions.push_back(a);
    current_->rewards.push_back(r);
    current_->states.push_back(state);
    ++env_steps_;
    if (state.terminal) {
      replay_.add(std::move(*current_));
      current_.reset();
      ++episodes_;
    }
    if (replay_.size() < static_cast<std::size_t>(c_.dqn.learning_starts) || replay_.empty()) return std::nullopt;
    const auto batch = replay_.sample(static_cast<std::size_t>(c_.dqn.batch), sample_rng_);
    const double loss = dqn::train_step(net_, target_, opt_, batch, c_.dqn.gamma);
    ++updates_;
    if (updates_ % c_.dqn.target_sync == 0) target_.copy_from(net_);
    return loss;
  }

  void save(const fs::path& dir, StateFile& s) const {
    net_.save(dir / "dqn.bpw");
    target_.save(dir / "dqn_target.bpw");
    nn::save_optimizer(dir / "dqn.bpo", opt_);
    replay_.save((dir / "dqn_replay.txt").string());
    s.set("dqn_updates", updates_);
    s.set("dqn_env_steps", env_steps_);
    s.set("dqn_episodes", episodes_);
    s.set("dqn_act_counter", act_rng_.counter());
    s.set("dqn_sample_counter", sample_rng_.counter());
    std::string actions;
    if (current_)
      for (auto a : current_->actions) actions += (actions.empty() ? "" : " ") + std::to_string(world::index_of(a));
    s.set("dqn_in_progress", current_ ? "1" : "0");
    s.set("dqn_actions", actions);
  }

  void load(const fs::path& dir, const StateFile& s) {
    net_.load(dir / "dqn.bpw");
    target_.load(dir / "dqn_target.bpw");
    nn::load_optimizer(dir / "dqn.bpo", opt_);
    replay_ = ReplayBuffer::load((dir / "dqn_replay.txt").string());
    updates_ = s.integer("dqn_updates");
    env_steps_ = s.integer("dqn_env_steps");
    episodes_ = s.u64("dqn_episodes");
    act_rng_ = SplitMix64(act_rng_.key(), s.u64("dqn_act_counter"));
    sample_rng_ = SplitMix64(sample_rng_.key(), s.u64("dqn_sample_counter"));
    current_.reset();
    if (s.get("dqn_in_progress") == "1") {
      std::vector<world::Action> actions;
      std::istringstream is(s.get("dqn_actions"));
      int a = 0;
      while (is >> a) actions.push_back(world::action_from_index(a));
      begin(episodes_, actions);
    }
  }

 private:
  void begin(std::uint64_t index, const std::vector<world::Action>& actions) {
    current_ = replay_episode(0, world::generate_task(stream_value(c_.data_seed, kDqnTaskStream, index)), actions);
  }

  ExperimentConfig c_;
  dqn::QNet net_;
  dqn::QNet target_;
  nn::RMSProp opt_;
  ReplayBuffer replay_;
  SplitMix64 act_rng_;
  SplitMix64 sample_rng_;
  long long updates_ = 0;
  long long env_steps_ = 0;
  std::uint64_t episodes_ = 0;
  std::optional<Episode> current_;
};

// --- experiment ---------------------------------------------------------------

struct RunOptions {
  bool resume = false;
  bool model_phase = true;
  bool dqn_phase = true;
  int halt_after_checkpoints = -1;  // stop early, as if interrupted (tests)
  std::ostream* progress = nullptr;
};

struct RunResult {
  bool completed = false;
  int checkpoints = 0;
  std::vector<EvalReport> reports;  // evaluations made by this invocation
  std::vector<std::string> report_agents;
};

inline const std::vector<std::string>& tracked_csvs() {
  static const std::vector<std::string> files = {"model_curve.csv", "heldout.csv", "dqn_curve.csv", "eval.csv",
                                                 "eval_tasks.csv"};
  return files;
}

namespace detail {

inline const char* csv_header(const std::string& name) {
  if (name == "model_curve.csv") return "step,frame_mse,reward_mse";
  if (name == "heldout.csv") return "step,frame_mse,reward_mse,initial_frame_mse,initial_reward_mse";
  if (name == "dqn_curve.csv") return "step,td_loss,epsilon";
  if (name == "eval.csv") return kEvalHeader;
  return "step,agent,task,seed,return,success";
}

}  // namespace detail

/// Rewrites the files derived from eval.csv: smoothed curves, table, plots.
inline void write_reports(const fs::path& out, const ExperimentConfig& c) {
  const auto rows = read_eval_csv((out / "eval.csv").string());
  const auto raw = curves(rows);
  const auto smooth = smoothed(raw, c.smoothing_half_window);
  {
    std::ofstream f(out / "eval_smoothed.csv", std::ios::binary);
    write_curves_csv(f, smooth);
  }
  {
    std::ofstream csv(out / "table.csv", std::ios::binary), md(out / "table.md", std::ios::binary);
    write_table(csv, md, rows, c.milestones);
  }
  for (const bool reward : {true, false}) {
    std::vector<plot::Series> series;
    for (const auto& cv : smooth) {
      plot::Series s{display_name(cv.agent), {}, reward ? cv.avg_reward : cv.success_rate};
      for (auto st : cv.steps) s.x.push_back(static_cast<double>(st));
      series.push_back(std::move(s));
    }
    std::ofstream f(out / (reward ? "reward.svg" : "success.svg"), std::ios::binary);
    plot::write_svg(f, reward ? "Average reward" : "Success rate", "training steps",
                    reward ? "average reward" : "success rate", series);
  }
}

class Experiment {
 public:
  Experiment(ExperimentConfig c, fs::path out, RunOptions options)
      : c_(std::move(c)), out_(std::move(out)), opt_(options), tasks_(build_test_set(c_.task_seed, c_.eval_tasks)) {
    c_.validate();
  }

  RunResult run() {
    fs::create_directories(out_);
    std::optional<StateFile> state;
    if (opt_.resume) state = latest_checkpoint();
    if (state) {
      for (const auto& f : tracked_csvs()) fs::resize_file(out_ / f, static_cast<std::uintmax_t>(state->integer("bytes_" + f)));
      note("resuming from phase " + state->get("phase"));
    } else {
      fs::remove_all(out_ / "checkpoint");
      fs::remove_all(out_ / "checkpoint.new");
      fs::remove(out_ / "latency.log");
      std::ostringstream cfg;
      write_config(cfg, c_);
      write_text(out_ / "config.txt", cfg.str());
      world::write_task_file(out_ / "tasks.txt", tasks_);
      for (const auto& f : tracked_csvs()) write_text(out_ / f, std::string(detail::csv_header(f)) + "\n");
    }

    const std::string phase = state ? state->get("phase") : "model";
    if (phase == "model") {
      if (!run_model(state)) return std::move(result_);
      state.reset();
    }
    if (phase != "done") {
      if (!run_dqn(phase == "dqn" ? state : std::nullopt)) return std::move(result_);
    }
    write_reports(out_, c_);
    result_.completed = true;
    return std::move(result_);
  }

 private:
  std::vector<std::string> agents_for(bool model_phase) const {
    std::vector<std::string> out;
    for (const auto& a : c_.eval_agents)
      if (needs_qnet(a) != model_phase) out.push_back(a);
    return out;
  }

  bool due(long long step, long long total) const { return step % c_.eval_interval == 0 || step == total; }

  void note(const std::string& msg) const {
    if (opt_.progress) *opt_.progress << msg << std::endl;
  }

  void evaluate_agents(const std::vector<std::string>& names, long long step, const model::ModelNet* net,
                       const dqn::QNet* qnet) {
    for (const auto& name : names) {
      auto bundle = make_agent(name, c_, net, qnet);
      const auto r = evaluate(*bundle.agent, tasks_, step);
      append_line(out_ / "eval.csv", eval_line({step, name, r.avg_reward, r.success_rate}));
      std::string rows;
      for (std::size_t i = 0; i < tasks_.size(); ++i)
        rows += std::to_string(step) + "," + name + "," + std::to_string(i) + "," + std::to_string(tasks_[i].seed) + "," +
                fixed6(r.returns[i]) + "," + (r.successes[i] ? "1" : "0") + "\n";
      std::ofstream(out_ / "eval_tasks.csv", std::ios::app | std::ios::binary) << rows;
      char lat[160];
      std::snprintf(lat, sizeof lat, "step %lld agent %s actions %d seconds %.3f per_action %.6f", step, name.c_str(),
                    r.actions, r.seconds, r.actions ? r.seconds / r.actions : 0.0);
      append_line(out_ / "latency.log", lat);
      note(std::string(lat) + " avg_reward " + fixed6(r.avg_reward) + " success " + fixed6(r.success_rate));
      result_.reports.push_back(r);
      result_.report_agents.push_back(name);
    }
  }

  /// Writes checkpoint.new, then swaps it in; state.txt is written last.
  template <class SaveFn>
  bool checkpoint(const std::string& phase, SaveFn save) {
    const auto tmp = out_ / "checkpoint.new";
    fs::remove_all(tmp);
    fs::create_directories(tmp);
    StateFile s;
    s.set("phase", phase);
    save(tmp, s);
    for (const auto& f : tracked_csvs()) s.set("bytes_" + f, static_cast<long long>(fs::file_size(out_ / f)));
    s.save(tmp / "state.txt");
    fs::remove_all(out_ / "checkpoint");
    fs::rename(tmp, out_ / "checkpoint");
    ++result_.checkpoints;
    return opt_.halt_after_checkpoints < 0 || result_.checkpoints < opt_.halt_after_checkpoints;
  }

  std::optional<StateFile> latest_checkpoint() const {
    for (const char* dir : {"checkpoint", "checkpoint.new"})
      if (fs::exists(out_ / dir / "state.txt")) {
        auto s = StateFile::load(out_ / dir / "state.txt");
        s.set("dir", dir);
        return s;
      }
    return std::nullopt;
  }

  bool run_model(const std::optional<StateFile>& state) {
    if (!opt_.model_phase || c_.total_steps == 0) return checkpoint("dqn", [](const fs::path&, StateFile&) {});
    ModelPipeline p(c_);
    Accumulator acc;
    if (state) {
      p.load(out_ / state->get("dir"), *state);
      acc.load(*state, "model_acc");
    } else {
      p.seed_replay();
      note("seeded model replay with " + std::to_string(p.replay().size()) + " transitions");
    }
    const auto names = agents_for(true);
    while (p.step() < c_.total_steps) {
      const auto l = p.train_one();
      acc.add(l.frame_mse, l.reward_mse);
      const long long s = p.step();
      if (s % c_.log_interval == 0 || s == c_.total_steps) {
        append_line(out_ / "model_curve.csv",
                    std::to_string(s) + "," + fixed6(acc.a / acc.n) + "," + fixed6(acc.b / acc.n));
        acc = {};
      }
      if (!due(s, c_.total_steps)) continue;
      const auto pairs = p.heldout_pairs();
      const auto now = model::evaluate(p.net(), pairs);
      const auto init = model::evaluate(p.initial_net(), pairs);
      append_line(out_ / "heldout.csv", std::to_string(s) + "," + fixed6(now.frame_mse) + "," + fixed6(now.reward_mse) +
                                            "," + fixed6(init.frame_mse) + "," + fixed6(init.reward_mse));
      note("model step " + std::to_string(s) + " heldout frame " + fixed6(now.frame_mse) + " (init " +
           fixed6(init.frame_mse) + ") reward " + fixed6(now.reward_mse) + " replay " +
           std::to_string(p.replay().size()) + " heldout " + std::to_string(p.heldout().size()));
      evaluate_agents(names, s, &p.net(), nullptr);
      if (s == c_.total_steps) p.net().save(out_ / "model.bpw");
      const std::string next = s == c_.total_steps ? "dqn" : "model";
      if (!checkpoint(next, [&](const fs::path& dir, StateFile& st) {
            if (next == "model") {
              p.save(dir, st);
              acc.save(st, "model_acc");
            }
          }))
        return false;
    }
    return true;
  }

  bool run_dqn(const std::optional<StateFile>& state) {
    const long long total = c_.dqn_total_updates;
    if (!opt_.dqn_phase || total == 0) return checkpoint("done", [](const fs::path&, StateFile&) {});
    DQNPipeline p(c_);
    Accumulator acc;
    if (state && state->has("dqn_updates")) {
      p.load(out_ / state->get("dir"), *state);
      acc.load(*state, "dqn_acc");
    }
    const auto names = agents_for(false);
    while (p.updates() < total) {
      const auto loss = p.step();
      if (!loss) continue;
      acc.add(*loss);
      const long long u = p.updates();
      if (u % c_.log_interval == 0 || u == total) {
        append_line(out_ / "dqn_curve.csv", std::to_string(u) + "," + fixed6(acc.a / acc.n) + "," + fixed6(p.epsilon()));
        acc = {};
      }
      if (!due(u, total)) continue;
      note("dqn update " + std::to_string(u) + " env steps " + std::to_string(p.env_steps()) + " epsilon " +
           fixed6(p.epsilon()));
      evaluate_agents(names, u, nullptr, &p.net());
      if (u == total) p.net().save(out_ / "dqn.bpw");
      const std::string next = u == total ? "done" : "dqn";
      if (!checkpoint(next, [&](const fs::path& dir, StateFile& st) {
            if (next == "dqn") {
              p.save(dir, st);
              acc.save(st, "dqn_acc");
            }
          }))
        return false;
    }
    return true;
  }

  ExperimentConfig c_;
  fs::path out_;
  RunOptions opt_;
  std::vector<world::TaskSpec> tasks_;
  RunResult result_;
};

inline RunResult run_experiment(const ExperimentConfig& c, const fs::path& out, RunOptions options = {}) {
  return Experiment(c, out, options).run();
}

}  // namespace blockplan::harness
