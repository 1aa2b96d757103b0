#pragma once

// Layer/model descriptions, parameter storage and the forward/backward
// kernels for the small sequential 1D CNNs used by the toolkit.
//
// Per-example activations are row-major (length, channels) for the
// convolutional part and flat vectors after `flatten`. A batch tensor is
// (B, length, channels); outputs are (B, units).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "edap/error.hpp"
#include "edap/nn/tensor.hpp"
#include "edap/rng.hpp"
#include "edap/signal_store.hpp"
#include "edap/text.hpp"

namespace edap::nn {

enum class LayerKind { conv1d, dense, leaky_relu, flatten, output_linear };

inline std::string_view to_string(LayerKind k) {
  switch (k) {
    case LayerKind::conv1d: return "conv1d";
    case LayerKind::dense: return "dense";
    case LayerKind::leaky_relu: return "leaky_relu";
    case LayerKind::flatten: return "flatten";
    case LayerKind::output_linear: return "output_linear";
  }
  return "?";
}

inline LayerKind parse_layer_kind(std::string_view s) {
  for (auto k : {LayerKind::conv1d, LayerKind::dense, LayerKind::leaky_relu, LayerKind::flatten,
                 LayerKind::output_linear})
    if (to_string(k) == s) return k;
  throw FormatError("unknown layer kind '" + std::string(s) + "'");
}

constexpr bool has_params(LayerKind k) {
  return k == LayerKind::conv1d || k == LayerKind::dense || k == LayerKind::output_linear;
}

struct LayerSpec {
  LayerKind kind = LayerKind::dense;
  std::string name;
  std::size_t filters = 0;      // conv1d
  std::size_t kernel_size = 0;  // conv1d
  std::size_t stride = 1;       // conv1d
  std::size_t padding = 0;      // conv1d, zeros on both sides
  std::size_t units = 0;        // dense / output_linear
  double alpha = 0.01;          // leaky_relu slope

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

inline LayerSpec conv1d(std::string name, std::size_t filters, std::size_t kernel, std::size_t stride,
                        std::size_t padding = 0) {
  LayerSpec l;
  l.kind = LayerKind::conv1d;
  l.name = std::move(name);
  l.filters = filters;
  l.kernel_size = kernel;
  l.stride = stride;
  l.padding = padding;
  return l;
}
inline LayerSpec dense(std::string name, std::size_t units) {
  LayerSpec l;
  l.kind = LayerKind::dense;
  l.name = std::move(name);
  l.units = units;
  return l;
}
inline LayerSpec output_linear(std::string name, std::size_t units) {
  LayerSpec l = dense(std::move(name), units);
  l.kind = LayerKind::output_linear;
  return l;
}
inline LayerSpec leaky_relu(std::string name, double alpha = 0.01) {
  LayerSpec l;
  l.kind = LayerKind::leaky_relu;
  l.name = std::move(name);
  l.alpha = alpha;
  return l;
}
inline LayerSpec flatten(std::string name) {
  LayerSpec l;
  l.kind = LayerKind::flatten;
  l.name = std::move(name);
  return l;
}

using Shape = std::vector<std::size_t>;

struct ModelSpec {
  Shape input_shape{7000, 1};
  std::vector<LayerSpec> layers;

  std::optional<std::size_t> index_of(std::string_view name) const {
    for (std::size_t i = 0; i < layers.size(); ++i)
      if (layers[i].name == name) return i;
    return std::nullopt;
  }

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

/// Per-example shapes: element i is the input shape of layer i; the last
/// element is the model output shape. Throws ShapeError naming the layer.
inline std::vector<Shape> infer_shapes(const ModelSpec& spec) {
  if (spec.input_shape.empty() || spec.input_shape.size() > 2 || shape_size(spec.input_shape) == 0)
    throw ShapeError("model input shape must be (length, channels) or (features) with positive sizes");
  if (spec.layers.empty()) throw ShapeError("model has no layers");
  std::set<std::string> names;
  std::vector<Shape> shapes{spec.input_shape};
  for (const auto& l : spec.layers) {
    if (l.name.empty()) throw ShapeError("layer with empty name");
    if (!names.insert(l.name).second) throw ShapeError("duplicate layer name '" + l.name + "'");
    const Shape& in = shapes.back();
    const std::string where = "layer '" + l.name + "': ";
    switch (l.kind) {
      case LayerKind::conv1d: {
        if (in.size() != 2) throw ShapeError(where + "conv1d needs (length, channels) input, got " + shape_string(in));
        if (l.filters == 0) throw ShapeError(where + "conv1d needs filters > 0");
        if (l.kernel_size == 0 || l.stride == 0) throw ShapeError(where + "conv1d needs kernel_size, stride > 0");
        const std::size_t padded = in[0] + 2 * l.padding;
        if (padded < l.kernel_size)
          throw ShapeError(where + "kernel " + std::to_string(l.kernel_size) + " longer than input " + shape_string(in));
        shapes.push_back({(padded - l.kernel_size) / l.stride + 1, l.filters});
        break;
      }
      case LayerKind::dense:
      case LayerKind::output_linear:
        if (in.size() != 1) throw ShapeError(where + "dense needs flat input, got " + shape_string(in));
        if (l.units == 0) throw ShapeError(where + "dense needs units > 0");
        shapes.push_back({l.units});
        break;
      case LayerKind::leaky_relu:
        if (!(l.alpha >= 0.0) || !std::isfinite(l.alpha)) throw ShapeError(where + "leaky_relu slope must be >= 0");
        shapes.push_back(in);
        break;
      case LayerKind::flatten:
        shapes.push_back({shape_size(in)});
        break;
    }
  }
  if (spec.layers.back().kind != LayerKind::output_linear) throw ShapeError("final layer must be output_linear");
  return shapes;
}

/// Hyperparameters of the two standard architectures.
struct ArchConfig {
  std::size_t window = 7000;
  std::size_t horizon = 40;
  std::vector<std::size_t> conv_filters{40, 30, 18, 30};
  std::size_t kernel_size = 7;
  std::size_t stride = 3;
  std::size_t padding = 0;
  double alpha = 0.01;
  std::vector<std::size_t> pretext_dense{70, 30};
  std::vector<std::size_t> head_dense{50, 30, 10};
};

inline std::vector<std::string> conv_layer_names(const ArchConfig& a) {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < a.conv_filters.size(); ++i) names.push_back("conv" + std::to_string(i + 1));
  return names;
}

namespace detail {
inline void push_conv_stack(ModelSpec& spec, const ArchConfig& a) {
  for (std::size_t i = 0; i < a.conv_filters.size(); ++i) {
    const auto n = "conv" + std::to_string(i + 1);
    spec.layers.push_back(conv1d(n, a.conv_filters[i], a.kernel_size, a.stride, a.padding));
    spec.layers.push_back(leaky_relu(n + "_act", a.alpha));
  }
  spec.layers.push_back(flatten("flatten"));
}
inline void push_dense_stack(ModelSpec& spec, const ArchConfig& a, std::string_view prefix,
                             const std::vector<std::size_t>& widths) {
  for (std::size_t i = 0; i < widths.size(); ++i) {
    const auto n = std::string(prefix) + std::to_string(i + 1);
    spec.layers.push_back(dense(n, widths[i]));
    spec.layers.push_back(leaky_relu(n + "_act", a.alpha));
  }
}
}  // namespace detail

/// conv stack -> dense 70 -> dense 30 -> linear forecast of `horizon` samples.
inline ModelSpec pretext_spec(const ArchConfig& a = {}) {
  ModelSpec spec;
  spec.input_shape = {a.window, 1};
  detail::push_conv_stack(spec, a);
  detail::push_dense_stack(spec, a, "pretext_dense", a.pretext_dense);
  spec.layers.push_back(output_linear("forecast_out", a.horizon));
  infer_shapes(spec);
  return spec;
}

/// conv stack -> dense 50 -> dense 30 -> dense 10 -> scalar stress output.
inline ModelSpec downstream_spec(const ArchConfig& a = {}) {
  ModelSpec spec;
  spec.input_shape = {a.window, 1};
  detail::push_conv_stack(spec, a);
  detail::push_dense_stack(spec, a, "head_dense", a.head_dense);
  spec.layers.push_back(output_linear("stress_out", 1));
  infer_shapes(spec);
  return spec;
}

// ---------------------------------------------------------------------------
// Parameters

template <typename T>
struct ParamArray {
  Shape shape;
  std::vector<T> data;
  friend bool operator==(const ParamArray&, const ParamArray&) = default;
};

/// conv1d kernel: (kernel_size, in_channels, filters); dense kernel: (in, units).
template <typename T>
struct LayerParams {
  ParamArray<T> kernel;
  ParamArray<T> bias;
  friend bool operator==(const LayerParams&, const LayerParams&) = default;
};

template <typename T>
using ParamMap = std::map<std::string, LayerParams<T>>;

template <typename T>
using Gradients = ParamMap<T>;

struct TrainingMeta {
  std::uint64_t seed = 0;
  std::size_t epochs = 0;
  double final_loss = 0.0;
  std::string optimizer;
  double learning_rate = 0.0;
  std::size_t batch_size = 0;
  friend bool operator==(const TrainingMeta&, const TrainingMeta&) = default;
};

template <typename T>
struct BasicCheckpoint {
  ModelSpec spec;
  ParamMap<T> weights;
  std::set<std::string> frozen;
  TrainingMeta training_meta;
  std::optional<NormalizationParams> normalization;
  /// Free-form provenance (tool version, seed, config hash, subject...).
  std::map<std::string, std::string> provenance;

  friend bool operator==(const BasicCheckpoint&, const BasicCheckpoint&) = default;
};

using Checkpoint = BasicCheckpoint<float>;

/// Expected (kernel, bias) shapes of the parameterised layer at `index`.
inline std::pair<Shape, Shape> param_shapes(const ModelSpec& spec, const std::vector<Shape>& shapes,
                                            std::size_t index) {
  const auto& l = spec.layers[index];
  const auto& in = shapes[index];
  if (l.kind == LayerKind::conv1d) return {{l.kernel_size, in[1], l.filters}, {l.filters}};
  return {{in[0], l.units}, {l.units}};
}

template <typename T>
void validate(const BasicCheckpoint<T>& ckpt) {
  const auto shapes = infer_shapes(ckpt.spec);
  for (std::size_t i = 0; i < ckpt.spec.layers.size(); ++i) {
    const auto& l = ckpt.spec.layers[i];
    if (!has_params(l.kind)) continue;
    auto it = ckpt.weights.find(l.name);
    if (it == ckpt.weights.end()) throw ShapeError("missing weights for layer '" + l.name + "'");
    auto [ks, bs] = param_shapes(ckpt.spec, shapes, i);
    const auto& p = it->second;
    if (p.kernel.shape != ks || p.kernel.data.size() != shape_size(ks))
      throw ShapeError("layer '" + l.name + "': kernel shape " + shape_string(p.kernel.shape) + " expected " +
                       shape_string(ks));
    if (p.bias.shape != bs || p.bias.data.size() != shape_size(bs))
      throw ShapeError("layer '" + l.name + "': bias shape " + shape_string(p.bias.shape) + " expected " +
                       shape_string(bs));
  }
  for (const auto& [name, _] : ckpt.weights) {
    auto idx = ckpt.spec.index_of(name);
    if (!idx || !has_params(ckpt.spec.layers[*idx].kind))
      throw ShapeError("weights for unknown or parameter-free layer '" + name + "'");
  }
  for (const auto& name : ckpt.frozen)
    if (!ckpt.spec.index_of(name)) throw ValidationError("frozen set names unknown layer '" + name + "'");
}

/// Fan-in scaled uniform init for one layer, seeded by (seed, layer name)
/// so a layer's initial weights do not depend on its neighbours.
template <typename T>
LayerParams<T> init_layer(const ModelSpec& spec, const std::vector<Shape>& shapes, std::size_t index,
                          std::uint64_t seed) {
  const auto& l = spec.layers[index];
  auto [ks, bs] = param_shapes(spec, shapes, index);
  LayerParams<T> p;
  p.kernel.shape = ks;
  p.bias.shape = bs;
  p.kernel.data.resize(shape_size(ks));
  p.bias.data.assign(shape_size(bs), T{0});
  const std::size_t fan_in = l.kind == LayerKind::conv1d ? ks[0] * ks[1] : ks[0];
  const double gain = l.kind == LayerKind::output_linear ? 3.0 : 6.0;
  const double limit = std::sqrt(gain / double(fan_in));
  CounterRng rng(derive_seed(seed, {fnv1a(l.name)}));
  for (auto& w : p.kernel.data) w = static_cast<T>(rng.uniform(-limit, limit));
  return p;
}

template <typename T = float>
BasicCheckpoint<T> init_checkpoint(const ModelSpec& spec, std::uint64_t seed) {
  const auto shapes = infer_shapes(spec);
  BasicCheckpoint<T> ckpt;
  ckpt.spec = spec;
  ckpt.training_meta.seed = seed;
  for (std::size_t i = 0; i < spec.layers.size(); ++i)
    if (has_params(spec.layers[i].kind)) ckpt.weights[spec.layers[i].name] = init_layer<T>(spec, shapes, i, seed);
  return ckpt;
}

template <typename To, typename From>
BasicCheckpoint<To> checkpoint_cast(const BasicCheckpoint<From>& in) {
  BasicCheckpoint<To> out;
  out.spec = in.spec;
  out.frozen = in.frozen;
  out.training_meta = in.training_meta;
  out.normalization = in.normalization;
  out.provenance = in.provenance;
  auto conv = [](const ParamArray<From>& a) {
    ParamArray<To> b;
    b.shape = a.shape;
    b.data.assign(a.data.begin(), a.data.end());
    return b;
  };
  for (const auto& [name, p] : in.weights) out.weights[name] = {conv(p.kernel), conv(p.bias)};
  return out;
}

/// Index of the first layer that receives gradients, or layers.size() if
/// every parameterised layer is frozen. Layers before it need no backward pass.
template <typename T>
std::size_t first_trainable_layer(const BasicCheckpoint<T>& ckpt) {
  for (std::size_t i = 0; i < ckpt.spec.layers.size(); ++i) {
    const auto& l = ckpt.spec.layers[i];
    if (has_params(l.kind) && !ckpt.frozen.contains(l.name)) return i;
  }
  return ckpt.spec.layers.size();
}

// ---------------------------------------------------------------------------
// Execution

/// Runs one example at a time through a checkpoint, keeping every layer's
/// input for the backward pass. Not thread-safe; make one per thread.
template <typename T>
class Executor {
 public:
  explicit Executor(const BasicCheckpoint<T>& ckpt) : ckpt_(&ckpt), shapes_(infer_shapes(ckpt.spec)) {
    validate(ckpt);
    const auto& layers = ckpt.spec.layers;
    acts_.resize(layers.size() + 1);
    for (std::size_t i = 0; i <= layers.size(); ++i) acts_[i].resize(shape_size(shapes_[i]));
    params_.resize(layers.size(), nullptr);
    for (std::size_t i = 0; i < layers.size(); ++i)
      if (has_params(layers[i].kind)) params_[i] = &ckpt.weights.at(layers[i].name);
  }

  const std::vector<Shape>& shapes() const { return shapes_; }
  std::size_t input_size() const { return acts_.front().size(); }
  std::size_t output_size() const { return acts_.back().size(); }
  std::size_t activation_size(std::size_t layer) const { return acts_[layer].size(); }

  /// Feeds `input` as the input of layer `from` and runs to the output.
  std::span<const T> forward(std::span<const T> input, std::size_t from = 0) {
    auto& first = acts_.at(from);
    if (input.size() != first.size())
      throw ShapeError(from == 0 ? "input size " + std::to_string(input.size()) + " does not match model input " +
                                       shape_string(shapes_[0])
                                 : "cached activation size mismatch at layer '" + ckpt_->spec.layers[from].name + "'");
    std::copy(input.begin(), input.end(), first.begin());
    for (std::size_t i = from; i < ckpt_->spec.layers.size(); ++i) forward_layer(i);
    return acts_.back();
  }

  /// Input of `layer` from the most recent forward pass.
  std::span<const T> activation(std::size_t layer) const { return acts_.at(layer); }

  /// Backpropagates `dout` (gradient of the loss w.r.t. the output of the
  /// last forward pass), accumulating into `grads` for every unfrozen
  /// parameterised layer at index >= `stop`.
  void backward(std::span<const T> dout, Gradients<T>& grads, std::size_t stop) {
    const auto& layers = ckpt_->spec.layers;
    if (stop >= layers.size()) return;
    grad_.assign(dout.begin(), dout.end());
    for (std::size_t i = layers.size(); i-- > stop;) {
      const bool need_input_grad = i > stop;
      backward_layer(i, grads, need_input_grad);
      if (!need_input_grad) break;
      std::swap(grad_, grad_in_);
    }
  }

 private:
  void forward_layer(std::size_t i) {
    const auto& l = ckpt_->spec.layers[i];
    const auto& in = acts_[i];
    auto& out = acts_[i + 1];
    switch (l.kind) {
      case LayerKind::conv1d: conv_forward(i, in, out); break;
      case LayerKind::dense:
      case LayerKind::output_linear: dense_forward(i, in, out); break;
      case LayerKind::leaky_relu: {
        const T a = static_cast<T>(l.alpha);
        for (std::size_t k = 0; k < in.size(); ++k) out[k] = in[k] > T{0} ? in[k] : a * in[k];
        break;
      }
      case LayerKind::flatten: std::copy(in.begin(), in.end(), out.begin()); break;
    }
  }

  std::span<const T> padded_input(std::size_t i) {
    const auto& l = ckpt_->spec.layers[i];
    const auto& in = acts_[i];
    if (l.padding == 0) return in;
    const std::size_t c = shapes_[i][1];
    padded_.assign((shapes_[i][0] + 2 * l.padding) * c, T{0});
    std::copy(in.begin(), in.end(), padded_.begin() + static_cast<std::ptrdiff_t>(l.padding * c));
    return padded_;
  }

  void conv_forward(std::size_t i, const std::vector<T>&, std::vector<T>& out) {
    const auto& l = ckpt_->spec.layers[i];
    const auto& p = *params_[i];
    const std::size_t c = shapes_[i][1];
    const std::size_t f = l.filters;
    const std::size_t kc = l.kernel_size * c;
    const std::size_t lo = shapes_[i + 1][0];
    const std::size_t step = l.stride * c;
    const T* __restrict x = padded_input(i).data();
    const T* __restrict w = p.kernel.data.data();
    const T* __restrict b = p.bias.data.data();
    T* __restrict y = out.data();
    for (std::size_t o = 0; o < lo; ++o) {
      T* __restrict yr = y + o * f;
      for (std::size_t q = 0; q < f; ++q) yr[q] = b[q];
      const T* __restrict xr = x + o * step;
      for (std::size_t j = 0; j < kc; ++j) {
        const T xv = xr[j];
        const T* __restrict wr = w + j * f;
        for (std::size_t q = 0; q < f; ++q) yr[q] += xv * wr[q];
      }
    }
  }

  void dense_forward(std::size_t i, const std::vector<T>& in, std::vector<T>& out) {
    const auto& p = *params_[i];
    const std::size_t u = out.size();
    const T* __restrict w = p.kernel.data.data();
    T* __restrict y = out.data();
    for (std::size_t q = 0; q < u; ++q) y[q] = p.bias.data[q];
    for (std::size_t k = 0; k < in.size(); ++k) {
      const T xv = in[k];
      const T* __restrict wr = w + k * u;
      for (std::size_t q = 0; q < u; ++q) y[q] += xv * wr[q];
    }
  }

  LayerParams<T>* grad_slot(std::size_t i, Gradients<T>& grads) {
    const auto& l = ckpt_->spec.layers[i];
    if (!has_params(l.kind) || ckpt_->frozen.contains(l.name)) return nullptr;
    auto [it, inserted] = grads.try_emplace(l.name);
    if (inserted) {
      const auto& p = *params_[i];
      it->second.kernel.shape = p.kernel.shape;
      it->second.kernel.data.assign(p.kernel.data.size(), T{0});
      it->second.bias.shape = p.bias.shape;
      it->second.bias.data.assign(p.bias.data.size(), T{0});
    }
    return &it->second;
  }

  // Reads grad_ (d loss / d layer output), writes grad_in_ when requested.
  void backward_layer(std::size_t i, Gradients<T>& grads, bool need_input_grad) {
    const auto& l = ckpt_->spec.layers[i];
    const auto& in = acts_[i];
    switch (l.kind) {
      case LayerKind::conv1d: conv_backward(i, grads, need_input_grad); break;
      case LayerKind::dense:
      case LayerKind::output_linear: dense_backward(i, grads, need_input_grad); break;
      case LayerKind::leaky_relu:
        if (need_input_grad) {
          const T a = static_cast<T>(l.alpha);
          grad_in_.resize(in.size());
          for (std::size_t k = 0; k < in.size(); ++k) grad_in_[k] = in[k] > T{0} ? grad_[k] : a * grad_[k];
        }
        break;
      case LayerKind::flatten:
        if (need_input_grad) grad_in_ = grad_;
        break;
    }
  }

  void dense_backward(std::size_t i, Gradients<T>& grads, bool need_input_grad) {
    const auto& in = acts_[i];
    const auto& p = *params_[i];
    const std::size_t u = grad_.size();
    const T* __restrict dy = grad_.data();
    if (auto* g = grad_slot(i, grads)) {
      T* __restrict dw = g->kernel.data.data();
      for (std::size_t k = 0; k < in.size(); ++k) {
        const T xv = in[k];
        T* __restrict dwr = dw + k * u;
        for (std::size_t q = 0; q < u; ++q) dwr[q] += xv * dy[q];
      }
      for (std::size_t q = 0; q < u; ++q) g->bias.data[q] += dy[q];
    }
    if (need_input_grad) {
      grad_in_.assign(in.size(), T{0});
      const T* __restrict w = p.kernel.data.data();
      for (std::size_t k = 0; k < in.size(); ++k) {
        const T* __restrict wr = w + k * u;
        T s{0};
        for (std::size_t q = 0; q < u; ++q) s += wr[q] * dy[q];
        grad_in_[k] = s;
      }
    }
  }

  void conv_backward(std::size_t i, Gradients<T>& grads, bool need_input_grad) {
    const auto& l = ckpt_->spec.layers[i];
    const auto& p = *params_[i];
    const std::size_t c = shapes_[i][1];
    const std::size_t f = l.filters;
    const std::size_t kc = l.kernel_size * c;
    const std::size_t lo = shapes_[i + 1][0];
    const std::size_t step = l.stride * c;
    const T* __restrict dy = grad_.data();
    const auto xin = padded_input(i);
    const T* __restrict x = xin.data();
    if (auto* g = grad_slot(i, grads)) {
      T* __restrict dw = g->kernel.data.data();
      T* __restrict db = g->bias.data.data();
      for (std::size_t o = 0; o < lo; ++o) {
        const T* __restrict dyr = dy + o * f;
        const T* __restrict xr = x + o * step;
        for (std::size_t q = 0; q < f; ++q) db[q] += dyr[q];
        for (std::size_t j = 0; j < kc; ++j) {
          const T xv = xr[j];
          T* __restrict dwr = dw + j * f;
          for (std::size_t q = 0; q < f; ++q) dwr[q] += xv * dyr[q];
        }
      }
    }
    if (!need_input_grad) return;
    // Transposed kernel (filters, kernel*channels) keeps the inner loop contiguous.
    wt_.resize(kc * f);
    for (std::size_t j = 0; j < kc; ++j)
      for (std::size_t q = 0; q < f; ++q) wt_[q * kc + j] = p.kernel.data[j * f + q];
    padded_grad_.assign(xin.size(), T{0});
    T* __restrict dx = padded_grad_.data();
    const T* __restrict wt = wt_.data();
    for (std::size_t o = 0; o < lo; ++o) {
      const T* __restrict dyr = dy + o * f;
      T* __restrict dxr = dx + o * step;
      for (std::size_t q = 0; q < f; ++q) {
        const T gv = dyr[q];
        const T* __restrict wr = wt + q * kc;
        for (std::size_t j = 0; j < kc; ++j) dxr[j] += gv * wr[j];
      }
    }
    const std::size_t off = l.padding * c;
    grad_in_.assign(padded_grad_.begin() + static_cast<std::ptrdiff_t>(off),
                    padded_grad_.begin() + static_cast<std::ptrdiff_t>(off + acts_[i].size()));
  }

  const BasicCheckpoint<T>* ckpt_;
  std::vector<Shape> shapes_;
  std::vector<const LayerParams<T>*> params_;
  std::vector<std::vector<T>> acts_;
  std::vector<T> grad_, grad_in_, padded_, padded_grad_, wt_;
};

template <typename T>
void check_batch(const BasicCheckpoint<T>& ckpt, const Tensor<T>& batch) {
  const auto& in = ckpt.spec.input_shape;
  if (batch.shape.size() != in.size() + 1 || !std::equal(in.begin(), in.end(), batch.shape.begin() + 1))
    throw ShapeError("batch shape " + shape_string(batch.shape) + " does not match model input (B, " +
                     shape_string(in).substr(1));
}

/// Batched inference: (B, input...) -> (B, outputs).
template <typename T>
Tensor<T> forward(const BasicCheckpoint<T>& ckpt, const Tensor<T>& batch) {
  check_batch(ckpt, batch);
  Executor<T> ex(ckpt);
  const std::size_t b = batch.shape[0];
  Tensor<T> out({b, ex.output_size()});
  for (std::size_t n = 0; n < b; ++n) {
    auto y = ex.forward(batch.row(n));
    std::copy(y.begin(), y.end(), out.row(n).begin());
  }
  return out;
}

/// Gradient of mean((y - targets)^2) over every output element of the
/// batch, for every unfrozen parameter. Frozen layers get no entries.
template <typename T>
Gradients<T> backward(const BasicCheckpoint<T>& ckpt, const Tensor<T>& batch, const Tensor<T>& targets,
                      double* loss_out = nullptr) {
  check_batch(ckpt, batch);
  Executor<T> ex(ckpt);
  const std::size_t b = batch.shape[0];
  if (targets.shape != Shape{b, ex.output_size()})
    throw ShapeError("targets shape " + shape_string(targets.shape) + " does not match output (" +
                     std::to_string(b) + ", " + std::to_string(ex.output_size()) + ")");
  const std::size_t stop = first_trainable_layer(ckpt);
  const double scale = 2.0 / double(targets.size());
  Gradients<T> grads;
  std::vector<T> dy(ex.output_size());
  double loss = 0.0;
  for (std::size_t n = 0; n < b; ++n) {
    auto y = ex.forward(batch.row(n));
    auto t = targets.row(n);
    for (std::size_t k = 0; k < dy.size(); ++k) {
      const double d = double(y[k]) - double(t[k]);
      loss += d * d;
      dy[k] = static_cast<T>(scale * d);
    }
    ex.backward(dy, grads, stop);
  }
  if (loss_out) *loss_out = loss / double(targets.size());
  return grads;
}

/// Mean squared error over a batch, accumulated in double.
template <typename T>
double mse_loss(const BasicCheckpoint<T>& ckpt, const Tensor<T>& batch, const Tensor<T>& targets) {
  const auto y = forward(ckpt, batch);
  if (y.shape != targets.shape) throw ShapeError("targets shape mismatch");
  double s = 0.0;
  for (std::size_t k = 0; k < y.size(); ++k) {
    const double d = double(y.data[k]) - double(targets.data[k]);
    s += d * d;
  }
  return s / double(y.size());
}

}  // namespace edap::nn
