#pragma once

// Optimisers, batch sampling, augmentation and the training loop.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "silcarve/dataset.hpp"
#include "silcarve/rng.hpp"
#include "silcarve/silnet.hpp"

namespace silcarve {

enum class OptimizerKind { sgd_momentum, adam };

struct OptimizerSpec {
  OptimizerKind kind = OptimizerKind::sgd_momentum;
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename Scalar>
struct OptimizerState {
  OptimizerSpec spec;
  std::map<std::string, std::vector<Scalar>> first;   // SGD velocity or Adam first moment
  std::map<std::string, std::vector<Scalar>> second;  // Adam second moment
  long step = 0;
};

template <typename Scalar>
using ParamMap = std::map<std::string, Tensor<Scalar>>;
template <typename Scalar>
using GradMap = std::map<std::string, std::vector<Scalar>>;

namespace detail {
template <typename Scalar>
Tensor<Scalar>& checked_param(ParamMap<Scalar>& params, const std::string& name, std::size_t n) {
  auto it = params.find(name);
  if (it == params.end()) throw Error("optimizer: gradient for unknown parameter " + name);
  if (it->second.size() != n)
    throw Error("optimizer: gradient for " + name + " has " + std::to_string(n) + " values, parameter has " +
                std::to_string(it->second.size()));
  return it->second;
}
}  // namespace detail

/// Heavy ball with decay folded into the gradient:
/// v <- mu v + (g + lambda w); w <- w - lr v. Only parameters with a gradient move.
template <typename Scalar>
void sgd_step(OptimizerState<Scalar>& state, ParamMap<Scalar>& params, const GradMap<Scalar>& grads) {
  const auto& s = state.spec;
  for (const auto& [name, g] : grads) {
    auto& w = detail::checked_param(params, name, g.size());
    auto& v = state.first[name];
    if (v.size() != g.size()) v.assign(g.size(), Scalar(0));
    for (std::size_t i = 0; i < g.size(); ++i) {
      v[i] = static_cast<Scalar>(s.momentum) * v[i] + (g[i] + static_cast<Scalar>(s.weight_decay) * w[i]);
      w[i] -= static_cast<Scalar>(s.lr) * v[i];
    }
  }
  ++state.step;
}

/// Bias-corrected Adam; weight decay, if any, is added to the gradient.
template <typename Scalar>
void adam_step(OptimizerState<Scalar>& state, ParamMap<Scalar>& params, const GradMap<Scalar>& grads) {
  const auto& s = state.spec;
  ++state.step;
  const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(state.step));
  for (const auto& [name, g] : grads) {
    auto& w = detail::checked_param(params, name, g.size());
    auto& m = state.first[name];
    auto& v = state.second[name];
    if (m.size() != g.size()) m.assign(g.size(), Scalar(0));
    if (v.size() != g.size()) v.assign(g.size(), Scalar(0));
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double gi = static_cast<double>(g[i]) + s.weight_decay * static_cast<double>(w[i]);
      m[i] = static_cast<Scalar>(s.beta1 * m[i] + (1.0 - s.beta1) * gi);
      v[i] = static_cast<Scalar>(s.beta2 * v[i] + (1.0 - s.beta2) * gi * gi);
      const double mhat = m[i] / c1, vhat = v[i] / c2;
      w[i] = static_cast<Scalar>(w[i] - s.lr * mhat / (std::sqrt(vhat) + s.eps));
    }
  }
}

template <typename Scalar>
void optimizer_step(OptimizerState<Scalar>& state, ParamMap<Scalar>& params, const GradMap<Scalar>& grads) {
  if (state.spec.kind == OptimizerKind::sgd_momentum) sgd_step(state, params, grads);
  else adam_step(state, params, grads);
}

/// One training example: input views and the held-out target view of an object.
struct BatchItem {
  std::size_t object = 0;  // index into the object list given to make_batch
  std::vector<std::size_t> inputs;
  std::size_t target = 0;
};

/// Per item: pick an object, then n_towers + 1 distinct views; the first
/// drawn is the target.
std::vector<BatchItem> make_batch(const std::vector<std::size_t>& view_counts, int n_towers, int batch_size, Rng& rng);

/// Shifts rows down by `offset` (up if negative), filling with 0.
GrayImage shift_rows(const GrayImage& image, int offset);

/// Largest vertical jitter: 2 px at h = 32, scaled with h.
inline int jitter_range(int h) { return static_cast<int>(std::lround(2.0 * h / 32.0)); }

/// Random vertical jitter in [-max_shift, max_shift], then mean subtraction.
Tensor<float> augment(const GrayImage& image, const Tensor<float>& mean_image, int max_shift, Rng& rng);

GrayImage mean_image(const std::vector<GrayImage>& images);

struct TrainConfig {
  ModelConfig model;
  Mode mode = Mode::d2;
  int n_towers = 2;
  int batch_size = 16;
  int epochs = 40;
  int steps_per_epoch = 0;  // 0: ceil(train objects * views / batch size)
  OptimizerSpec optimizer;
  std::uint64_t seed = 1;
  bool freeze_encoder = false;
  std::optional<std::filesystem::path> pretrained;
  std::filesystem::path checkpoint;  // best-validation checkpoint is written here
  int threads = 1;
};

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double val_iou = 0.0;
  double wall_ms = 0.0;
};

struct TrainResult {
  ModelParams<float> initial;
  ModelParams<float> best;
  ModelParams<float> last;
  std::vector<EpochLog> log;
  int best_epoch = 0;
  double best_val_iou = -1.0;
  double initial_loss = 0.0;  // mean loss over the first epoch's first step
};

/// Runs the protocol and saves the best-validation checkpoint. Each epoch
/// line is written to `log` as JSON when given.
TrainResult train(const TrainConfig& config, const DatasetManifest& manifest, std::ostream* log = nullptr);

}  // namespace silcarve
