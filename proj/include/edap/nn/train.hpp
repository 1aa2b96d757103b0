#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <vector>

#include "edap/error.hpp"
#include "edap/nn/model.hpp"
#include "edap/nn/optimizer.hpp"
#include "edap/rng.hpp"

namespace edap::nn {

/// Anything that hands out (input, target) float spans by index.
template <typename D>
concept TrainingSet = requires(const D& d, std::size_t i) {
  { d.size() } -> std::convertible_to<std::size_t>;
  { d.input(i) } -> std::convertible_to<std::span<const float>>;
  { d.target(i) } -> std::convertible_to<std::span<const float>>;
};

/// In-memory training set; handy for small models and tests.
struct ArrayDataset {
  std::vector<std::vector<float>> inputs;
  std::vector<std::vector<float>> targets;

  std::size_t size() const { return inputs.size(); }
  std::span<const float> input(std::size_t i) const { return inputs[i]; }
  std::span<const float> target(std::size_t i) const { return targets[i]; }
};

struct TrainOptions {
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  /// Called after every epoch with (epoch index, mean training loss).
  std::function<void(std::size_t, double)> on_epoch;
};

namespace detail {
template <typename T>
void to_scalar(std::span<const float> in, std::vector<T>& out) {
  out.assign(in.begin(), in.end());
}
}  // namespace detail

/// Mini-batch training on mean squared error. Returns a new checkpoint;
/// frozen layers are never touched. Batches are drawn from a per-epoch
/// seeded shuffle, so the result is a pure function of the inputs.
///
/// When the leading layers all lack trainable parameters (a frozen
/// feature extractor), their outputs are computed once and reused.
template <typename T, TrainingSet D>
BasicCheckpoint<T> train(const BasicCheckpoint<T>& ckpt, const D& data, BasicOptimizerState<T>& opt,
                         const TrainOptions& options) {
  validate(ckpt);
  if (data.size() == 0) throw EmptyDatasetError("cannot train on an empty dataset");
  if (options.batch_size == 0) throw ConfigError("batch size must be positive");

  BasicCheckpoint<T> out = ckpt;
  out.training_meta.seed = options.seed;
  out.training_meta.epochs = options.epochs;
  out.training_meta.optimizer = std::string(to_string(opt.kind));
  out.training_meta.learning_rate = opt.learning_rate;
  out.training_meta.batch_size = options.batch_size;
  out.training_meta.final_loss = 0.0;

  Executor<T> ex(out);
  const std::size_t n = data.size();
  const std::size_t out_dim = ex.output_size();
  for (std::size_t i = 0; i < n; ++i) {
    if (data.input(i).size() != ex.input_size())
      throw ShapeError("example input size " + std::to_string(data.input(i).size()) + " does not match model input " +
                       shape_string(ex.shapes().front()));
    if (data.target(i).size() != out_dim)
      throw ShapeError("example target size " + std::to_string(data.target(i).size()) +
                       " does not match model output " + std::to_string(out_dim));
  }

  const std::size_t prefix = first_trainable_layer(out);
  if (prefix >= out.spec.layers.size() || options.epochs == 0) return out;

  std::vector<T> buf;
  std::vector<std::vector<T>> cache;
  if (prefix > 0) {
    cache.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      detail::to_scalar(data.input(i), buf);
      ex.forward(buf, 0);
      auto a = ex.activation(prefix);
      cache[i].assign(a.begin(), a.end());
    }
  }

  std::vector<std::size_t> order(n);
  Gradients<T> grads;
  std::vector<T> dy(out_dim);
  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    CounterRng rng(derive_seed(options.seed, {0x7261696eULL, epoch}));
    shuffle(order, rng);
    double epoch_sse = 0.0;
    for (std::size_t b0 = 0; b0 < n; b0 += options.batch_size) {
      const std::size_t b1 = std::min(n, b0 + options.batch_size);
      const double scale = 2.0 / double((b1 - b0) * out_dim);
      for (auto& [_, g] : grads) {
        std::fill(g.kernel.data.begin(), g.kernel.data.end(), T{0});
        std::fill(g.bias.data.begin(), g.bias.data.end(), T{0});
      }
      double batch_sse = 0.0;
      for (std::size_t k = b0; k < b1; ++k) {
        const std::size_t i = order[k];
        std::span<const T> y;
        if (prefix > 0) {
          y = ex.forward(cache[i], prefix);
        } else {
          detail::to_scalar(data.input(i), buf);
          y = ex.forward(buf, 0);
        }
        const auto t = data.target(i);
        for (std::size_t q = 0; q < out_dim; ++q) {
          const double d = double(y[q]) - double(t[q]);
          batch_sse += d * d;
          dy[q] = static_cast<T>(scale * d);
        }
        ex.backward(dy, grads, prefix);
      }
      if (!std::isfinite(batch_sse)) throw DivergenceError(epoch);
      epoch_sse += batch_sse;
      opt.apply(out.weights, grads);
    }
    const double epoch_loss = epoch_sse / double(n * out_dim);
    if (!std::isfinite(epoch_loss)) throw DivergenceError(epoch);
    for (const auto& [name, p] : out.weights) {
      for (T v : p.kernel.data)
        if (!std::isfinite(v)) throw DivergenceError(epoch);
      for (T v : p.bias.data)
        if (!std::isfinite(v)) throw DivergenceError(epoch);
    }
    out.training_meta.final_loss = epoch_loss;
    if (options.on_epoch) options.on_epoch(epoch, epoch_loss);
  }
  return out;
}

/// Model outputs for every example: (N, outputs).
template <typename T, TrainingSet D>
Tensor<T> predict(const BasicCheckpoint<T>& ckpt, const D& data) {
  Executor<T> ex(ckpt);
  Tensor<T> out({data.size(), ex.output_size()});
  std::vector<T> buf;
  for (std::size_t i = 0; i < data.size(); ++i) {
    detail::to_scalar(data.input(i), buf);
    auto y = ex.forward(buf);
    std::copy(y.begin(), y.end(), out.row(i).begin());
  }
  return out;
}

/// Targets of every example as an (N, outputs) tensor.
template <typename T, TrainingSet D>
Tensor<T> collect_targets(const D& data) {
  if (data.size() == 0) return Tensor<T>({0, 0});
  const std::size_t d = data.target(0).size();
  Tensor<T> out({data.size(), d});
  for (std::size_t i = 0; i < data.size(); ++i) {
    auto t = data.target(i);
    if (t.size() != d) throw ShapeError("ragged targets");
    std::copy(t.begin(), t.end(), out.row(i).begin());
  }
  return out;
}

/// sqrt(mean((p - t)^2)), accumulated in double.
template <typename T>
double rmse(const Tensor<T>& predictions, const Tensor<T>& targets) {
  if (predictions.shape != targets.shape)
    throw ShapeError("rmse: shape " + shape_string(predictions.shape) + " vs " + shape_string(targets.shape));
  if (predictions.size() == 0) throw ShapeError("rmse of empty tensors");
  double s = 0.0;
  for (std::size_t k = 0; k < predictions.size(); ++k) {
    const double d = double(predictions.data[k]) - double(targets.data[k]);
    s += d * d;
  }
  return std::sqrt(s / double(predictions.size()));
}

template <typename T, TrainingSet D>
double evaluate_rmse(const BasicCheckpoint<T>& ckpt, const D& data) {
  return rmse(predict(ckpt, data), collect_targets<T>(data));
}

}  // namespace edap::nn
