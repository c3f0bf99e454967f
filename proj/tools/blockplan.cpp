// Command-line front end: task sets, training, evaluation, plots, tables.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "blockplan/config.hpp"
#include "blockplan/dqn.hpp"
#include "blockplan/experiment.hpp"
#include "blockplan/harness.hpp"
#include "blockplan/plot.hpp"
#include "blockplan/transition_model.hpp"
#include "blockplan/world_io.hpp"

namespace bp = blockplan;
namespace fs = std::filesystem;

namespace {

bp::harness::ExperimentConfig config_from(const std::string& path) {
  return path.empty() ? bp::harness::ExperimentConfig{} : bp::harness::load_config(path);
}

int run(const std::string& config, const std::string& out, bool resume, bool model_phase, bool dqn_phase) {
  bp::harness::RunOptions opt;
  opt.resume = resume;
  opt.model_phase = model_phase;
  opt.dqn_phase = dqn_phase;
  opt.progress = &std::cerr;
  const auto r = bp::harness::run_experiment(config_from(config), out, opt);
  std::cerr << (r.completed ? "done: " : "stopped: ") << out << "\n";
  return r.completed ? 0 : 1;
}

void write_eval(const std::string& path, const std::vector<bp::world::TaskSpec>& tasks, const bp::harness::EvalReport& r) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "task,seed,return,success\n";
  for (std::size_t i = 0; i < tasks.size(); ++i)
    out << i << "," << tasks[i].seed << "," << bp::harness::fixed6(r.returns[i]) << "," << (r.successes[i] ? 1 : 0)
        << "\n";
  out << "avg_reward,success_rate\n" << bp::harness::fixed6(r.avg_reward) << "," << bp::harness::fixed6(r.success_rate)
      << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"blockplan: model-based planning versus DQN on a block-placing task"};
  app.require_subcommand(1);

  std::uint64_t seed = 1;
  int count = 100;
  std::string out, config, agent, weights, tasks_path, in;
  bool resume = false;
  int half_window = -1;
  std::vector<long long> milestones;

  auto* gen = app.add_subcommand("gen-tasks", "write a task set, one seed=<u64> per line");
  gen->add_option("--seed", seed, "task-set seed")->default_val(1);
  gen->add_option("--count", count, "number of tasks")->default_val(100)->check(CLI::PositiveNumber);
  gen->add_option("--out", out, "output file")->required();

  auto* show = app.add_subcommand("config", "print every config key with its documented default");
  show->add_option("--config", config, "config file to resolve instead of the defaults");

  CLI::App* trainers[3] = {app.add_subcommand("train-model", "train the transition model, evaluating the planners"),
                           app.add_subcommand("train-dqn", "train the DQN baseline, evaluating it"),
                           app.add_subcommand("experiment", "both phases, then the smoothed curves and table")};
  for (auto* t : trainers) {
    t->add_option("--config", config, "key = value config file (defaults when absent)");
    t->add_option("--out", out, "output directory")->required();
    t->add_flag("--resume", resume, "continue from the latest checkpoint in --out");
  }

  auto* ev = app.add_subcommand("eval", "evaluate one agent on a task set");
  ev->add_option("--agent", agent, "agent")->required()->check(
      CLI::IsMember({"mcts", "mcts-no1ahead", "dqn", "random", "oracle"}));
  ev->add_option("--weights", weights, "model weights (mcts agents) or Q-network weights (dqn)");
  ev->add_option("--tasks", tasks_path, "task file")->required()->check(CLI::ExistingFile);
  ev->add_option("--out", out, "per-task CSV with a summary footer")->required();
  ev->add_option("--config", config, "config for network shapes, planner and seeds");

  auto* pl = app.add_subcommand("plot", "smooth an eval.csv and draw it as SVG");
  pl->add_option("--in", in, "eval.csv")->required()->check(CLI::ExistingFile);
  pl->add_option("--out", out, "output directory")->required();
  pl->add_option("--half-window", half_window, "moving-average half window, in evaluation points")
      ->default_val(8)
      ->check(CLI::NonNegativeNumber);

  auto* tb = app.add_subcommand("table", "milestone table from an eval.csv");
  tb->add_option("--in", in, "eval.csv")->required()->check(CLI::ExistingFile);
  tb->add_option("--out", out, "output directory")->required();
  tb->add_option("--milestones", milestones, "training steps to report")->delimiter(',')->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      bp::world::write_task_file(out, bp::harness::build_test_set(seed, count));
    } else if (*show) {
      bp::harness::write_config(std::cout, config_from(config));
    } else if (*trainers[0]) {
      return run(config, out, resume, true, false);
    } else if (*trainers[1]) {
      return run(config, out, resume, false, true);
    } else if (*trainers[2]) {
      return run(config, out, resume, true, true);
    } else if (*ev) {
      const auto c = config_from(config);
      const auto tasks = bp::world::read_task_file(tasks_path);
      std::optional<bp::model::ModelNet> net;
      std::optional<bp::dqn::QNet> qnet;
      if (bp::harness::needs_model(agent) || bp::harness::needs_qnet(agent)) {
        if (weights.empty()) throw std::invalid_argument("--weights is required for agent " + agent);
        if (bp::harness::needs_model(agent)) net.emplace(c.model_shape).load(weights);
        else qnet.emplace(c.dqn_shape).load(weights);
      }
      auto bundle = bp::harness::make_agent(agent, c, net ? &*net : nullptr, qnet ? &*qnet : nullptr);
      const auto r = bp::harness::evaluate(*bundle.agent, tasks);
      write_eval(out, tasks, r);
      std::cout << agent << " avg_reward " << bp::harness::fixed6(r.avg_reward) << " success_rate "
                << bp::harness::fixed6(r.success_rate) << " seconds_per_action "
                << (r.actions ? r.seconds / r.actions : 0.0) << "\n";
    } else if (*pl) {
      fs::create_directories(out);
      bp::harness::ExperimentConfig c;
      c.smoothing_half_window = half_window;
      fs::copy_file(in, fs::path(out) / "eval.csv", fs::copy_options::overwrite_existing);
      c.milestones.clear();
      bp::harness::write_reports(out, c);
    } else if (*tb) {
      fs::create_directories(out);
      std::ofstream csv(fs::path(out) / "table.csv", std::ios::binary), md(fs::path(out) / "table.md", std::ios::binary);
      bp::harness::write_table(csv, md, bp::harness::read_eval_csv(in), milestones);
      std::cout << std::ifstream(fs::path(out) / "table.md").rdbuf();
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
