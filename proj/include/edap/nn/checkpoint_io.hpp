#pragma once

// Checkpoint files are versioned JSON documents:
//
//   { "format": "edap-checkpoint", "version": 1, "weight_bits": 32,
//     "spec": { "input_shape": [7000, 1], "layers": [ {"name", "kind", ...} ] },
//     "weights": { "<layer>": { "kernel": {"shape": [...], "data": [...]},
//                               "bias":   {"shape": [...], "data": [...]} } },
//     "frozen": [ "<layer>", ... ],
//     "training_meta": { "seed", "epochs", "final_loss", "optimizer", "learning_rate", "batch_size" },
//     "normalization": { "method", "param_a", "param_b" } | null,
//     "provenance": { "<key>": "<value>" } }
//
// Weights are 32-bit floats written as decimals that parse back to the
// identical float.

#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "edap/error.hpp"
#include "edap/nn/model.hpp"
#include "edap/signal_store.hpp"

namespace edap::nn {

inline constexpr int kCheckpointVersion = 1;
inline constexpr const char* kCheckpointFormat = "edap-checkpoint";

namespace detail {

using nlohmann::json;

inline json layer_to_json(const LayerSpec& l) {
  json j{{"name", l.name}, {"kind", std::string(to_string(l.kind))}};
  switch (l.kind) {
    case LayerKind::conv1d:
      j["filters"] = l.filters;
      j["kernel_size"] = l.kernel_size;
      j["stride"] = l.stride;
      j["padding"] = l.padding;
      break;
    case LayerKind::dense:
    case LayerKind::output_linear: j["units"] = l.units; break;
    case LayerKind::leaky_relu: j["alpha"] = l.alpha; break;
    case LayerKind::flatten: break;
  }
  return j;
}

inline LayerSpec layer_from_json(const json& j) {
  LayerSpec l;
  l.name = j.at("name").get<std::string>();
  l.kind = parse_layer_kind(j.at("kind").get<std::string>());
  l.filters = j.value("filters", std::size_t{0});
  l.kernel_size = j.value("kernel_size", std::size_t{0});
  l.stride = j.value("stride", std::size_t{1});
  l.padding = j.value("padding", std::size_t{0});
  l.units = j.value("units", std::size_t{0});
  l.alpha = j.value("alpha", 0.01);
  return l;
}

inline json array_to_json(const ParamArray<float>& a) {
  json data = json::array();
  for (float v : a.data) data.push_back(v);
  return json{{"shape", a.shape}, {"data", std::move(data)}};
}

inline ParamArray<float> array_from_json(const json& j, const std::string& where) {
  ParamArray<float> a;
  a.shape = j.at("shape").get<Shape>();
  const auto& data = j.at("data");
  if (!data.is_array()) throw FormatError(where + ": data is not an array");
  a.data.reserve(data.size());
  for (const auto& v : data) a.data.push_back(static_cast<float>(v.get<double>()));
  if (a.data.size() != shape_size(a.shape))
    throw ShapeError(where + ": " + std::to_string(a.data.size()) + " values for shape " + shape_string(a.shape));
  return a;
}

}  // namespace detail

inline nlohmann::json checkpoint_to_json(const Checkpoint& c) {
  using detail::json;
  validate(c);
  json layers = json::array();
  for (const auto& l : c.spec.layers) layers.push_back(detail::layer_to_json(l));
  json weights = json::object();
  for (const auto& [name, p] : c.weights)
    weights[name] = json{{"kernel", detail::array_to_json(p.kernel)}, {"bias", detail::array_to_json(p.bias)}};
  json j{{"format", kCheckpointFormat},
         {"version", kCheckpointVersion},
         {"weight_bits", 32},
         {"spec", {{"input_shape", c.spec.input_shape}, {"layers", std::move(layers)}}},
         {"weights", std::move(weights)},
         {"frozen", c.frozen},
         {"training_meta",
          {{"seed", c.training_meta.seed},
           {"epochs", c.training_meta.epochs},
           {"final_loss", c.training_meta.final_loss},
           {"optimizer", c.training_meta.optimizer},
           {"learning_rate", c.training_meta.learning_rate},
           {"batch_size", c.training_meta.batch_size}}},
         {"provenance", c.provenance}};
  if (c.normalization)
    j["normalization"] = {{"method", std::string(to_string(c.normalization->method))},
                          {"param_a", c.normalization->param_a},
                          {"param_b", c.normalization->param_b}};
  else
    j["normalization"] = nullptr;
  return j;
}

inline Checkpoint checkpoint_from_json(const nlohmann::json& j) {
  try {
    if (j.value("format", std::string()) != kCheckpointFormat) throw FormatError("not an edap checkpoint document");
    const int version = j.at("version").get<int>();
    if (version != kCheckpointVersion)
      throw FormatError("unsupported checkpoint version " + std::to_string(version));
    if (j.value("weight_bits", 32) != 32) throw FormatError("only 32-bit checkpoints are supported");
    Checkpoint c;
    c.spec.input_shape = j.at("spec").at("input_shape").get<Shape>();
    for (const auto& l : j.at("spec").at("layers")) c.spec.layers.push_back(detail::layer_from_json(l));
    for (const auto& [name, w] : j.at("weights").items())
      c.weights[name] = {detail::array_from_json(w.at("kernel"), name + ".kernel"),
                         detail::array_from_json(w.at("bias"), name + ".bias")};
    c.frozen = j.at("frozen").get<std::set<std::string>>();
    const auto& m = j.at("training_meta");
    c.training_meta.seed = m.at("seed").get<std::uint64_t>();
    c.training_meta.epochs = m.at("epochs").get<std::size_t>();
    c.training_meta.final_loss = m.at("final_loss").get<double>();
    c.training_meta.optimizer = m.value("optimizer", std::string());
    c.training_meta.learning_rate = m.value("learning_rate", 0.0);
    c.training_meta.batch_size = m.value("batch_size", std::size_t{0});
    if (j.contains("normalization") && !j.at("normalization").is_null()) {
      const auto& n = j.at("normalization");
      c.normalization = NormalizationParams{parse_normalization(n.at("method").get<std::string>()),
                                            n.at("param_a").get<double>(), n.at("param_b").get<double>()};
    }
    if (j.contains("provenance")) c.provenance = j.at("provenance").get<std::map<std::string, std::string>>();
    validate(c);
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed checkpoint: ") + e.what());
  }
}

inline std::string encode_checkpoint(const Checkpoint& c) { return checkpoint_to_json(c).dump(1) + "\n"; }

inline Checkpoint decode_checkpoint(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint is not valid JSON: ") + e.what());
  }
  return checkpoint_from_json(j);
}

inline void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
  edap::detail::write_file_atomic(path, encode_checkpoint(c));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(edap::detail::read_file_bytes(path));
}

}  // namespace edap::nn
