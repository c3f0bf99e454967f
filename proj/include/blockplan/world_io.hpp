#pragma once

// Task files, episode logs and 8-bit golden frames.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "blockplan/gridworld.hpp"

namespace blockplan::world {

/// One `seed=<u64>` line per task.
inline void write_task_file(const std::filesystem::path& path, const std::vector<TaskSpec>& tasks) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write task file " + path.string());
  for (const auto& t : tasks) out << "seed=" << t.seed << '\n';
}

inline std::vector<TaskSpec> read_task_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read task file " + path.string());
  std::vector<TaskSpec> tasks;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (line.rfind("seed=", 0) != 0)
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": expected seed=<u64>");
    std::size_t used = 0;
    const std::string digits = line.substr(5);
    const auto seed = std::stoull(digits, &used);
    if (used != digits.size() || digits.empty() || digits[0] == '-')
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": bad seed");
    tasks.push_back(generate_task(seed));
  }
  return tasks;
}

struct EpisodeStep {
  Action action;
  double reward;
  bool terminal;
};

struct EpisodeLog {
  std::vector<EpisodeStep> steps;
  bool success = false;

  double total() const {
    std::vector<double> r;
    r.reserve(steps.size());
    for (const auto& s : steps) r.push_back(s.reward);
    return episode_return(r);
  }
};

inline std::string format_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

/// CSV `step,action,reward,terminal`, then a `return,success` footer header
/// and its value row.
inline void write_episode_csv(std::ostream& out, const EpisodeLog& log) {
  out << "step,action,reward,terminal\n";
  for (std::size_t i = 0; i < log.steps.size(); ++i) {
    const auto& s = log.steps[i];
    out << i + 1 << ',' << action_name(s.action) << ',' << format_real(s.reward) << ','
        << (s.terminal ? 1 : 0) << '\n';
  }
  out << "return,success\n" << format_real(log.total()) << ',' << (log.success ? 1 : 0) << '\n';
}

inline EpisodeLog read_episode_csv(std::istream& in) {
  EpisodeLog log;
  std::string line;
  if (!std::getline(in, line) || line != "step,action,reward,terminal")
    throw std::runtime_error("episode log: missing header");
  while (std::getline(in, line)) {
    if (line == "return,success") {
      if (!std::getline(in, line)) throw std::runtime_error("episode log: missing footer values");
      const auto comma = line.find(',');
      if (comma == std::string::npos) throw std::runtime_error("episode log: bad footer");
      log.success = line.substr(comma + 1) == "1";
      return log;
    }
    std::stringstream row(line);
    std::string step, action, reward, terminal;
    std::getline(row, step, ',');
    std::getline(row, action, ',');
    std::getline(row, reward, ',');
    std::getline(row, terminal, ',');
    log.steps.push_back({parse_action(action), std::stod(reward), terminal == "1"});
  }
  throw std::runtime_error("episode log: missing footer");
}

using GoldenFrame = std::array<std::uint8_t, kFramePixels>;

inline GoldenFrame quantize(const Frame& f) {
  GoldenFrame q{};
  for (std::size_t i = 0; i < q.size(); ++i) {
    const double v = std::clamp(static_cast<double>(f.pixels[i]), 0.0, 1.0);
    q[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
  }
  return q;
}

inline void write_golden_frame(const std::filesystem::path& path, const Frame& f) {
  const GoldenFrame q = quantize(f);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(q.data()), static_cast<std::streamsize>(q.size()));
}

inline GoldenFrame read_golden_frame(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  GoldenFrame q{};
  in.read(reinterpret_cast<char*>(q.data()), static_cast<std::streamsize>(q.size()));
  if (in.gcount() != static_cast<std::streamsize>(q.size()) || in.peek() != EOF)
    throw std::runtime_error(path.string() + ": golden frame must be exactly 4096 bytes");
  return q;
}

/// FNV-1a over the raw float bytes; used to compare frames across runs.
inline std::uint64_t frame_hash(const Frame& f) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  const auto* bytes = reinterpret_cast<const unsigned char*>(f.pixels.data());
  for (std::size_t i = 0; i < sizeof(float) * f.pixels.size(); ++i) {
    h ^= bytes[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace blockplan::world
