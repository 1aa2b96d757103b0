#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>

#include "edap/error.hpp"
#include "edap/nn/model.hpp"

namespace edap::nn {

enum class OptimizerKind { sgd, adam };

inline std::string_view to_string(OptimizerKind k) { return k == OptimizerKind::sgd ? "sgd" : "adam"; }

inline OptimizerKind parse_optimizer(std::string_view s) {
  if (s == "sgd") return OptimizerKind::sgd;
  if (s == "adam") return OptimizerKind::adam;
  throw ConfigError("unknown optimizer '" + std::string(s) + "'");
}

/// First-order optimizer with lazily allocated Adam moment buffers.
template <typename T>
struct BasicOptimizerState {
  OptimizerKind kind = OptimizerKind::adam;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t step = 0;
  ParamMap<T> first_moment;
  ParamMap<T> second_moment;

  static BasicOptimizerState adam(double lr = 1e-3) {
    BasicOptimizerState s;
    s.kind = OptimizerKind::adam;
    s.learning_rate = lr;
    return s;
  }
  static BasicOptimizerState sgd(double lr) {
    BasicOptimizerState s;
    s.kind = OptimizerKind::sgd;
    s.learning_rate = lr;
    return s;
  }

  /// Applies one update to `weights` for every entry of `grads`.
  void apply(ParamMap<T>& weights, const Gradients<T>& grads) {
    if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
    ++step;
    const double bc1 = 1.0 - std::pow(beta1, double(step));
    const double bc2 = 1.0 - std::pow(beta2, double(step));
    for (const auto& [name, g] : grads) {
      auto& w = weights.at(name);
      if (kind == OptimizerKind::sgd) {
        sgd_update(w.kernel, g.kernel);
        sgd_update(w.bias, g.bias);
        continue;
      }
      auto& m = moments_for(first_moment, name, g);
      auto& v = moments_for(second_moment, name, g);
      adam_update(w.kernel, g.kernel, m.kernel, v.kernel, bc1, bc2);
      adam_update(w.bias, g.bias, m.bias, v.bias, bc1, bc2);
    }
  }

 private:
  static LayerParams<T>& moments_for(ParamMap<T>& buf, const std::string& name, const LayerParams<T>& like) {
    auto [it, inserted] = buf.try_emplace(name);
    if (inserted) {
      it->second.kernel.shape = like.kernel.shape;
      it->second.kernel.data.assign(like.kernel.data.size(), T{0});
      it->second.bias.shape = like.bias.shape;
      it->second.bias.data.assign(like.bias.data.size(), T{0});
    }
    if (it->second.kernel.data.size() != like.kernel.data.size())
      throw ShapeError("optimizer moment buffer shape mismatch for '" + name + "'");
    return it->second;
  }

  void sgd_update(ParamArray<T>& w, const ParamArray<T>& g) const {
    const T lr = static_cast<T>(learning_rate);
    for (std::size_t k = 0; k < w.data.size(); ++k) w.data[k] -= lr * g.data[k];
  }

  void adam_update(ParamArray<T>& w, const ParamArray<T>& g, ParamArray<T>& m, ParamArray<T>& v, double bc1,
                   double bc2) const {
    const T b1 = static_cast<T>(beta1), b2 = static_cast<T>(beta2);
    const T step_size = static_cast<T>(learning_rate / bc1);
    const T inv_sqrt_bc2 = static_cast<T>(1.0 / std::sqrt(bc2));
    const T eps = static_cast<T>(epsilon);
    for (std::size_t k = 0; k < w.data.size(); ++k) {
      const T gk = g.data[k];
      m.data[k] = b1 * m.data[k] + (T{1} - b1) * gk;
      v.data[k] = b2 * v.data[k] + (T{1} - b2) * gk * gk;
      w.data[k] -= step_size * m.data[k] / (std::sqrt(v.data[k]) * inv_sqrt_bc2 + eps);
    }
  }
};

using OptimizerState = BasicOptimizerState<float>;

}  // namespace edap::nn
