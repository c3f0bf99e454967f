#pragma once

// DQN baseline: the classic three-conv Q-network on a 4x64x64 frame stack,
// epsilon-greedy acting, replay, a periodically synced target network and
// one-step TD targets.

#include <array>
#include <cmath>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "blockplan/agent.hpp"
#include "blockplan/gridworld.hpp"
#include "blockplan/nn/init.hpp"
#include "blockplan/nn/ops.hpp"
#include "blockplan/nn/optim.hpp"
#include "blockplan/nn/serialize.hpp"
#include "blockplan/replay.hpp"
#include "blockplan/rng.hpp"

namespace blockplan::dqn {

using nn::Tensor;
using world::Action;
using world::kNumActions;

using QValues = std::array<float, kNumActions>;

/// Widths of the three convs and the hidden affine. The default is the
/// original architecture; tests use narrower clones.
struct QNetShape {
  std::array<int, 3> channels{32, 64, 64};
  int hidden = 512;
  friend bool operator==(const QNetShape&, const QNetShape&) = default;
};

class QNet {
 public:
  explicit QNet(QNetShape shape = {}, std::uint64_t seed = 0) : shape_(shape) {
    convs_ = {nn::ConvSpec{FrameStack::kDepth, shape.channels[0], 8, 4, 0, 0},
              nn::ConvSpec{shape.channels[0], shape.channels[1], 4, 2, 0, 0},
              nn::ConvSpec{shape.channels[1], shape.channels[2], 3, 1, 0, 0}};
    int side = world::kFrameSide;
    for (const auto& s : convs_) side = nn::conv_output_size(side, s);  // 64 -> 15 -> 6 -> 4
    flat_ = shape.channels[2] * side * side;

    SplitMix64 rng = SplitMix64::from_seed(seed);
    for (int i = 0; i < 3; ++i) {
      const auto& s = convs_[static_cast<std::size_t>(i)];
      params_.push_back({"conv" + std::to_string(i) + ".w",
                         nn::gaussian_parameter({s.out_channels, s.in_channels, s.kernel, s.kernel},
                                                s.in_channels * s.kernel * s.kernel, 2.0, rng)});
      params_.push_back({"conv" + std::to_string(i) + ".b", nn::zero_parameter({s.out_channels})});
    }
    params_.push_back({"fc.w", nn::gaussian_parameter({shape.hidden, flat_}, flat_, 2.0, rng)});
    params_.push_back({"fc.b", nn::zero_parameter({shape.hidden})});
    params_.push_back({"q.w", nn::gaussian_parameter({kNumActions, shape.hidden}, shape.hidden, 1.0, rng)});
    params_.push_back({"q.b", nn::zero_parameter({kNumActions})});
  }

  const QNetShape& shape() const { return shape_; }
  int flat_width() const { return flat_; }
  nn::ParameterList<float>& parameters() { return params_; }
  const nn::ParameterList<float>& parameters() const { return params_; }

  /// stacks [B, 4, 64, 64] -> Q [B, 6].
  Tensor forward(const Tensor& stacks) const {
    Tensor h = stacks;
    for (std::size_t i = 0; i < 3; ++i) h = nn::relu(nn::conv2d(h, convs_[i], p(2 * i), p(2 * i + 1)));
    h = nn::relu(nn::affine(nn::reshape(h, {stacks.dim(0), flat_}), p(6), p(7)));
    return nn::affine(h, p(8), p(9));
  }

  QValues q_values(const FrameStack& stack) const {
    nn::NoGradGuard guard;
    std::vector<float> in(FrameStack::kValues);
    stack.copy_to(in.data());
    const auto q = forward(Tensor::from({1, FrameStack::kDepth, world::kFrameSide, world::kFrameSide}, std::move(in)));
    QValues out{};
    std::copy(q.values().begin(), q.values().end(), out.begin());
    return out;
  }

  /// Copies all parameter values from `other` (target sync).
  void copy_from(const QNet& other) {
    if (!(other.shape_ == shape_)) throw std::invalid_argument("QNet::copy_from: shape mismatch");
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto dst = params_[i].tensor.values();
      const auto src = other.params_[i].tensor.values();
      std::copy(src.begin(), src.end(), dst.begin());
    }
  }

  void save(const std::filesystem::path& path) const { nn::save_weights(path, params_); }
  void load(const std::filesystem::path& path) { nn::load_weights(path, params_); }

 private:
  const Tensor& p(std::size_t i) const { return params_[i].tensor; }

  QNetShape shape_;
  std::array<nn::ConvSpec, 3> convs_{};
  int flat_ = 0;
  nn::ParameterList<float> params_;
};

inline int argmax(const QValues& q) {
  int best = 0;
  for (int a = 1; a < kNumActions; ++a)
    if (q[static_cast<std::size_t>(a)] > q[static_cast<std::size_t>(best)]) best = a;
  return best;
}

/// Uniform random action with probability epsilon, else greedy (ties to the
/// lowest index).
inline Action act(const QValues& q, double epsilon, SplitMix64& rng) {
  if (epsilon > 0.0 && rng.uniform01() < epsilon) return world::action_from_index(static_cast<int>(rng.below(kNumActions)));
  return world::action_from_index(argmax(q));
}

inline Action act(const QNet& net, const FrameStack& stack, double epsilon, SplitMix64& rng) {
  return act(net.q_values(stack), epsilon, rng);
}

struct DQNConfig {
  double gamma = 0.99;
  double epsilon_start = 1.0;
  double epsilon_end = 0.1;
  double anneal_fraction = 0.2;  // of total environment steps
  double eval_epsilon = 0.05;
  int target_sync = 2000;        // updates
  std::size_t replay_capacity = 50000;
  int batch = 32;
  int learning_starts = 1000;    // transitions stored before the first update
  nn::RMSPropConfig optim{};

  void validate() const {
    if (!(gamma > 0.0 && gamma <= 1.0)) throw std::invalid_argument("dqn gamma must lie in (0, 1]");
    for (double e : {epsilon_start, epsilon_end, eval_epsilon})
      if (!(e >= 0.0 && e <= 1.0)) throw std::invalid_argument("dqn epsilon values must lie in [0, 1]");
    if (target_sync < 1 || batch < 1) throw std::invalid_argument("dqn target_sync and batch must be >= 1");
  }
};

/// Linear anneal from start to end over the first `anneal_fraction` of
/// `total_steps`, then constant.
inline double epsilon_at(const DQNConfig& c, long long step, long long total_steps) {
  const double span = c.anneal_fraction * static_cast<double>(total_steps);
  if (span <= 0.0 || static_cast<double>(step) >= span) return c.epsilon_end;
  return c.epsilon_start + (c.epsilon_end - c.epsilon_start) * static_cast<double>(step) / span;
}

/// r + gamma max_a' Q_target(s'), or r alone when s' is terminal.
inline std::vector<float> td_targets(const QNet& target, std::span<const TransitionRecord> batch, double gamma) {
  nn::NoGradGuard guard;
  const int b = static_cast<int>(batch.size());
  std::vector<float> next(batch.size() * FrameStack::kValues);
  for (std::size_t i = 0; i < batch.size(); ++i)
    batch[i].history.pushed(batch[i].next).copy_to(next.data() + i * FrameStack::kValues);
  const auto q = target.forward(Tensor::from({b, FrameStack::kDepth, world::kFrameSide, world::kFrameSide}, std::move(next)));
  std::vector<float> y(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    double v = batch[i].reward;
    if (!batch[i].next_terminal) {
      float best = q.values()[i * kNumActions];
      for (int a = 1; a < kNumActions; ++a) best = std::max(best, q.values()[i * kNumActions + static_cast<std::size_t>(a)]);
      v += gamma * best;
    }
    y[i] = static_cast<float>(v);
  }
  return y;
}

class NonFiniteLossError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One RMSProp step on the squared TD error of the taken actions.
inline double train_step(const QNet& net, const QNet& target, nn::RMSProp& opt, std::span<const TransitionRecord> batch,
                         double gamma) {
  const auto y = td_targets(target, batch, gamma);
  const int b = static_cast<int>(batch.size());
  std::vector<float> stacks(batch.size() * FrameStack::kValues), tgt(batch.size() * kNumActions, 0.0f),
      mask(batch.size() * kNumActions, 0.0f);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    batch[i].history.copy_to(stacks.data() + i * FrameStack::kValues);
    const auto a = i * kNumActions + static_cast<std::size_t>(world::index_of(batch[i].action));
    tgt[a] = y[i];
    mask[a] = 1.0f;
  }
  opt.zero_grad();
  const auto q = net.forward(Tensor::from({b, FrameStack::kDepth, world::kFrameSide, world::kFrameSide}, std::move(stacks)));
  const auto loss = nn::mse(q, Tensor::from({b, kNumActions}, std::move(tgt)), Tensor::from({b, kNumActions}, std::move(mask)));
  const double l = loss.item();
  if (!std::isfinite(l)) {
    std::string where;
    for (const auto& r : batch) where += " ep" + std::to_string(r.episode) + ":t" + std::to_string(r.t);
    throw NonFiniteLossError("non-finite TD loss on batch" + where);
  }
  loss.backward();
  opt.step();
  return l;
}

/// Greedy (or epsilon-greedy) acting with a fixed network.
class DQNAgent final : public Agent {
 public:
  DQNAgent(const QNet& net, double epsilon, SplitMix64 base) : net_(&net), epsilon_(epsilon), base_(base) {}

  void begin_episode(const world::WorldState& state, const FramePtr& frame) override {
    stack_ = FrameStack::replicate(frame);
    rng_ = base_.split(state.task.seed);
  }
  Action act() override { return dqn::act(*net_, stack_, epsilon_, rng_); }
  void observe(Action, double, const world::WorldState&, const FramePtr& frame) override { stack_ = stack_.pushed(frame); }

  void set_epsilon(double e) { epsilon_ = e; }

 private:
  const QNet* net_;
  double epsilon_;
  SplitMix64 base_;
  SplitMix64 rng_;
  FrameStack stack_;
};

}  // namespace blockplan::dqn
