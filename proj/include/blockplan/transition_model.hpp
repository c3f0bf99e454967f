#pragma once

// Action-conditional frame predictor with a one-step-ahead reward head.
//
//   stack 4x64x64 -> conv 7/5/5/3, stride 2 -> flatten -> [., action one-hot]
//     -> affine + ReLU = embedding
//   embedding -> reshape -> deconv 3/5/5/7 mirrored -> sigmoid = next frame
//   stop_gradient(embedding) -> affine + ReLU -> affine = reward per action
//
// For a real action the reward head estimates r_{t+2} for each action taken
// from the predicted state; for Noop (all-zero encoding) it estimates r_{t+1}
// for each action from the current state and the frame head reproduces s_t.

#include <array>
#include <cmath>
#include <filesystem>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "blockplan/gridworld.hpp"
#include "blockplan/nn/init.hpp"
#include "blockplan/nn/ops.hpp"
#include "blockplan/nn/optim.hpp"
#include "blockplan/nn/serialize.hpp"
#include "blockplan/replay.hpp"
#include "blockplan/rng.hpp"

namespace blockplan::model {

using nn::Tensor;
using world::Action;
using world::kNumActions;

using RewardVector = std::array<float, kNumActions>;
using ActionEncoding = std::array<float, kNumActions>;

inline ActionEncoding encode(Action a) {
  ActionEncoding e{};
  if (a != Action::Noop) e[static_cast<std::size_t>(world::index_of(a))] = 1.0f;
  return e;
}

/// Channel widths and reward-hidden width. Kernels, strides and paddings are
/// fixed; the embedding width is whatever the encoder flattens to.
struct ModelShape {
  std::array<int, 4> channels{32, 64, 128, 256};
  int reward_hidden = 2048;

  int embedding() const { return channels[3] * 4 * 4; }
  friend bool operator==(const ModelShape&, const ModelShape&) = default;
};

inline constexpr std::array<int, 4> kKernels{7, 5, 5, 3};
inline constexpr std::array<int, 4> kPaddings{3, 2, 2, 1};
inline constexpr int kStride = 2;

struct Prediction {
  world::Frame frame;
  RewardVector rewards{};
};

class ModelNet {
 public:
  explicit ModelNet(ModelShape shape = {}, std::uint64_t seed = 0)
      : shape_(shape), encoder_(encoder_specs(shape)), decoder_(decoder_specs(shape)) {
    audit(shape_);

    SplitMix64 rng = SplitMix64::from_seed(seed);
    auto add = [&](std::string name, nn::Tensor t) { params_.push_back({std::move(name), std::move(t)}); };
    for (int i = 0; i < 4; ++i) {
      const auto& s = encoder_[i];
      const double fan_in = s.in_channels * s.kernel * s.kernel;
      add("enc" + std::to_string(i) + ".w",
          nn::gaussian_parameter({s.out_channels, s.in_channels, s.kernel, s.kernel}, fan_in, 2.0, rng));
      add("enc" + std::to_string(i) + ".b", nn::zero_parameter({s.out_channels}));
    }
    const int e = shape_.embedding();
    add("merge.w", nn::gaussian_parameter({e, e + kNumActions}, e + kNumActions, 2.0, rng));
    add("merge.b", nn::zero_parameter({e}));
    for (int i = 0; i < 4; ++i) {
      const auto& s = decoder_[i];
      const double fan_in = s.in_channels * s.kernel * s.kernel;
      const double gain = i == 3 ? 1.0 : 2.0;  // last layer feeds the sigmoid
      add("dec" + std::to_string(i) + ".w",
          nn::gaussian_parameter({s.in_channels, s.out_channels, s.kernel, s.kernel}, fan_in, gain, rng));
      add("dec" + std::to_string(i) + ".b", nn::zero_parameter({s.out_channels}));
    }
    add("reward0.w", nn::gaussian_parameter({shape_.reward_hidden, e}, e, 2.0, rng));
    add("reward0.b", nn::zero_parameter({shape_.reward_hidden}));
    add("reward1.w", nn::gaussian_parameter({kNumActions, shape_.reward_hidden}, shape_.reward_hidden, 1.0, rng));
    add("reward1.b", nn::zero_parameter({kNumActions}));
  }

  static std::array<nn::ConvSpec, 4> encoder_specs(const ModelShape& shape) {
    std::array<nn::ConvSpec, 4> specs{};
    int in = FrameStack::kDepth;
    for (std::size_t i = 0; i < 4; ++i) {
      specs[i] = {in, shape.channels[i], kKernels[i], kStride, kPaddings[i], 0};
      in = shape.channels[i];
    }
    return specs;
  }

  static std::array<nn::ConvSpec, 4> decoder_specs(const ModelShape& shape) {
    std::array<nn::ConvSpec, 4> specs{};
    for (std::size_t i = 0; i < 4; ++i) {
      const std::size_t j = 3 - i;
      specs[i] = {shape.channels[j], j == 0 ? 1 : shape.channels[j - 1], kKernels[j], kStride, kPaddings[j], 1};
    }
    return specs;
  }

  /// Composes the encoder on a 4x64x64 input and the decoder back; throws
  /// ShapeError unless that gives exactly 4x4 features and a 1x64x64 frame.
  static void audit(const ModelShape& shape) {
    for (int c : shape.channels)
      if (c < 1) throw nn::ShapeError("model channels must be positive");
    if (shape.reward_hidden < 1) throw nn::ShapeError("reward_hidden must be positive");
    const auto enc = encoder_specs(shape);
    const auto dec = decoder_specs(shape);
    int side = world::kFrameSide;
    for (const auto& s : enc) side = nn::conv_output_size(side, s);
    if (shape.channels[3] * side * side != shape.embedding())
      throw nn::ShapeError("encoder flattens to " + std::to_string(shape.channels[3] * side * side) + ", expected " +
                           std::to_string(shape.embedding()));
    for (const auto& s : dec) side = nn::deconv_output_size(side, s);
    if (side != world::kFrameSide || dec[3].out_channels != 1)
      throw nn::ShapeError("decoder restores " + std::to_string(side) + "x" + std::to_string(side) +
                           ", expected 1x64x64");
  }

  const ModelShape& shape() const { return shape_; }
  const std::array<nn::ConvSpec, 4>& encoder_specs() const { return encoder_; }
  const std::array<nn::ConvSpec, 4>& decoder_specs() const { return decoder_; }
  nn::ParameterList<float>& parameters() { return params_; }
  const nn::ParameterList<float>& parameters() const { return params_; }

  const Tensor& param(const std::string& name) const {
    for (const auto& p : params_)
      if (p.name == name) return p.tensor;
    throw std::out_of_range("no parameter " + name);
  }

  /// Parameters upstream of the embedding or in the frame decoder.
  bool is_frame_path(const std::string& name) const { return name.rfind("reward", 0) != 0; }

  struct Output {
    Tensor frame;      // [B, 1, 64, 64]
    Tensor rewards;    // [B, 6]
    Tensor embedding;  // [B, E]
  };

  /// stacks [B, 4, 64, 64] in [0,1]; actions [B, 6].
  Output forward(const Tensor& stacks, const Tensor& actions) const {
    const int batch = stacks.dim(0);
    Tensor h = stacks;
    for (int i = 0; i < 4; ++i) h = nn::relu(nn::conv2d(h, encoder_[i], p(2 * i), p(2 * i + 1)));
    const int e = shape_.embedding();
    Tensor flat = nn::reshape(h, {batch, e});
    Tensor embedding = nn::relu(nn::affine(nn::concat_columns(flat, actions), p(8), p(9)));

    Tensor d = nn::reshape(embedding, {batch, shape_.channels[3], 4, 4});
    for (int i = 0; i < 4; ++i) {
      d = nn::deconv2d(d, decoder_[i], p(10 + 2 * i), p(11 + 2 * i));
      d = i == 3 ? nn::sigmoid(d) : nn::relu(d);
    }
    Tensor r = nn::relu(nn::affine(nn::stop_gradient(embedding), p(18), p(19)));
    r = nn::affine(r, p(20), p(21));
    return {d, r, embedding};
  }

  Prediction predict(const FrameStack& stack, const ActionEncoding& action) const {
    nn::NoGradGuard guard;
    std::vector<float> in(FrameStack::kValues);
    stack.copy_to(in.data());
    const auto out = forward(Tensor::from({1, FrameStack::kDepth, world::kFrameSide, world::kFrameSide}, std::move(in)),
                             Tensor::from({1, kNumActions}, std::vector<float>(action.begin(), action.end())));
    Prediction pr;
    std::copy(out.frame.values().begin(), out.frame.values().end(), pr.frame.pixels.begin());
    std::copy(out.rewards.values().begin(), out.rewards.values().end(), pr.rewards.begin());
    return pr;
  }

  Prediction predict(const FrameStack& stack, Action a) const { return predict(stack, encode(a)); }

  void save(const std::filesystem::path& path) const { nn::save_weights(path, params_); }
  void load(const std::filesystem::path& path) { nn::load_weights(path, params_); }

 private:
  const Tensor& p(std::size_t i) const { return params_[i].tensor; }

  ModelShape shape_;
  std::array<nn::ConvSpec, 4> encoder_{};
  std::array<nn::ConvSpec, 4> decoder_{};
  nn::ParameterList<float> params_;
};

// --- training pairs ----------------------------------------------------------

struct TrainingPair {
  FrameStack input;
  ActionEncoding action{};
  FramePtr target;
  RewardVector reward_target{};
  RewardVector reward_mask{};
  bool noop = false;
  std::uint64_t episode = 0;
  int t = 0;
};

/// Real action: predict s_{t+1} and supervise r_{t+2} at a_{t+1} (nothing if
/// s_{t+1} is terminal). Noop: reproduce s_t and supervise r_{t+1} at a_t.
inline TrainingPair make_training_pair(const TransitionRecord& rec, bool noop) {
  TrainingPair p;
  p.input = rec.history;
  p.noop = noop;
  p.episode = rec.episode;
  p.t = rec.t;
  if (noop) {
    p.action = encode(Action::Noop);
    p.target = rec.history.newest_ptr();
    const auto i = static_cast<std::size_t>(world::index_of(rec.action));
    p.reward_target[i] = static_cast<float>(rec.reward);
    p.reward_mask[i] = 1.0f;
  } else {
    p.action = encode(rec.action);
    p.target = rec.next;
    if (!rec.next_terminal && rec.next_action) {
      const auto i = static_cast<std::size_t>(world::index_of(*rec.next_action));
      p.reward_target[i] = static_cast<float>(*rec.next_reward);
      p.reward_mask[i] = 1.0f;
    }
  }
  return p;
}

inline constexpr double kNoopProbability = 1.0 / 7.0;

/// Turns each record into a noop pair with probability `p`, else a
/// real-action pair.
inline std::vector<TrainingPair> noop_mix(const std::vector<TransitionRecord>& records, SplitMix64& rng,
                                          double p = kNoopProbability) {
  std::vector<TrainingPair> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(make_training_pair(r, rng.bernoulli(p)));
  return out;
}

struct BatchTensors {
  Tensor stacks, actions, frame_target, reward_target, reward_mask;
};

inline BatchTensors to_tensors(std::span<const TrainingPair> pairs) {
  const int b = static_cast<int>(pairs.size());
  constexpr int side = world::kFrameSide;
  std::vector<float> stacks(pairs.size() * FrameStack::kValues), actions(pairs.size() * kNumActions),
      frames(pairs.size() * world::kFramePixels), rt(pairs.size() * kNumActions), rm(pairs.size() * kNumActions);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& p = pairs[i];
    p.input.copy_to(stacks.data() + i * FrameStack::kValues);
    std::copy(p.action.begin(), p.action.end(), actions.begin() + static_cast<std::ptrdiff_t>(i * kNumActions));
    std::copy(p.target->pixels.begin(), p.target->pixels.end(),
              frames.begin() + static_cast<std::ptrdiff_t>(i * world::kFramePixels));
    std::copy(p.reward_target.begin(), p.reward_target.end(), rt.begin() + static_cast<std::ptrdiff_t>(i * kNumActions));
    std::copy(p.reward_mask.begin(), p.reward_mask.end(), rm.begin() + static_cast<std::ptrdiff_t>(i * kNumActions));
  }
  return {Tensor::from({b, FrameStack::kDepth, side, side}, std::move(stacks)),
          Tensor::from({b, kNumActions}, std::move(actions)), Tensor::from({b, 1, side, side}, std::move(frames)),
          Tensor::from({b, kNumActions}, std::move(rt)), Tensor::from({b, kNumActions}, std::move(rm))};
}

struct Losses {
  double frame_mse = 0.0;
  double reward_mse = 0.0;
};

/// A loss came out NaN or infinite; the message lists the batch contents.
class NonFiniteLossError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::string provenance(std::span<const TrainingPair> pairs) {
  std::ostringstream os;
  for (std::size_t i = 0; i < pairs.size(); ++i)
    os << (i ? " " : "") << "ep" << pairs[i].episode << ":t" << pairs[i].t << (pairs[i].noop ? "(noop)" : "");
  return os.str();
}

/// Builds both losses with the graph attached (for tests and train_step).
inline std::pair<Tensor, Tensor> losses(const ModelNet& net, const BatchTensors& b) {
  const auto out = net.forward(b.stacks, b.actions);
  return {nn::mse(out.frame, b.frame_target), nn::mse(out.rewards, b.reward_target, b.reward_mask)};
}

/// One RMSProp step on frame MSE + masked reward MSE. The reward loss only
/// reaches the reward head: the embedding passes through stop_gradient.
inline Losses train_step(const ModelNet& net, nn::RMSProp& opt, std::span<const TrainingPair> pairs) {
  opt.zero_grad();
  const auto [frame_loss, reward_loss] = losses(net, to_tensors(pairs));
  const Losses l{frame_loss.item(), reward_loss.item()};
  if (!std::isfinite(l.frame_mse) || !std::isfinite(l.reward_mse))
    throw NonFiniteLossError("non-finite model loss (frame " + std::to_string(l.frame_mse) + ", reward " +
                             std::to_string(l.reward_mse) + ") on batch " + provenance(pairs));
  nn::add(frame_loss, reward_loss).backward();
  opt.step();
  return l;
}

/// Losses without gradients, pooled over all pairs: frame MSE per pixel and
/// reward MSE per supervised entry.
inline Losses evaluate(const ModelNet& net, std::span<const TrainingPair> pairs, std::size_t chunk = 64) {
  nn::NoGradGuard guard;
  double frame_sum = 0.0, reward_sum = 0.0, reward_count = 0.0;
  for (std::size_t i = 0; i < pairs.size(); i += chunk) {
    const auto part = pairs.subspan(i, std::min(chunk, pairs.size() - i));
    const auto b = to_tensors(part);
    const auto out = net.forward(b.stacks, b.actions);
    for (std::size_t j = 0; j < out.frame.size(); ++j) {
      const double d = out.frame.values()[j] - b.frame_target.values()[j];
      frame_sum += d * d;
    }
    for (std::size_t j = 0; j < out.rewards.size(); ++j) {
      if (b.reward_mask.values()[j] == 0.0f) continue;
      const double d = out.rewards.values()[j] - b.reward_target.values()[j];
      reward_sum += d * d;
      reward_count += 1.0;
    }
  }
  Losses l;
  l.frame_mse = pairs.empty() ? 0.0 : frame_sum / (static_cast<double>(pairs.size()) * world::kFramePixels);
  l.reward_mse = reward_count > 0 ? reward_sum / reward_count : 0.0;
  return l;
}

}  // namespace blockplan::model
