#pragma once

// Downstream stress regression, trained two ways on the same windows:
// the pretext convolution stack transferred and frozen under a fresh dense
// head, or the identical architecture trained from scratch.

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <iterator>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "edap/error.hpp"
#include "edap/nn/model.hpp"
#include "edap/nn/optimizer.hpp"
#include "edap/nn/train.hpp"
#include "edap/rng.hpp"
#include "edap/text.hpp"
#include "edap/windowing.hpp"

namespace edap {

enum class ModelKind { ssl_finetuned, supervised_scratch };

inline std::string_view to_string(ModelKind k) {
  return k == ModelKind::ssl_finetuned ? "ssl_finetuned" : "supervised_scratch";
}

inline ModelKind parse_model_kind(std::string_view s) {
  if (s == "ssl_finetuned") return ModelKind::ssl_finetuned;
  if (s == "supervised_scratch") return ModelKind::supervised_scratch;
  throw FormatError("unknown method '" + std::string(s) + "'");
}

/// Layers of the pretext model kept at transfer: everything up to and
/// including `flatten`. Every parameterised layer in that prefix is frozen.
struct TransferPlan {
  std::vector<nn::LayerSpec> feature_layers;
  std::vector<std::string> frozen;
};

inline TransferPlan plan_transfer(const nn::ModelSpec& pretext) {
  auto flat = pretext.index_of("flatten");
  if (!flat) throw ShapeError("pretext model has no 'flatten' layer to split the feature extractor at");
  TransferPlan plan;
  plan.feature_layers.assign(pretext.layers.begin(), pretext.layers.begin() + static_cast<std::ptrdiff_t>(*flat + 1));
  for (const auto& l : plan.feature_layers) {
    if (l.kind == nn::LayerKind::dense || l.kind == nn::LayerKind::output_linear)
      throw ShapeError("feature extractor contains dense layer '" + l.name + "'");
    if (nn::has_params(l.kind)) plan.frozen.push_back(l.name);
  }
  if (plan.frozen.empty()) throw ShapeError("pretext model has no convolution layers to transfer");
  return plan;
}

/// Downstream spec sharing `pretext`'s feature extractor, with a dense head
/// of `head_widths` and a scalar linear output.
inline nn::ModelSpec downstream_spec_from(const nn::ModelSpec& pretext, const std::vector<std::size_t>& head_widths,
                                          double alpha) {
  nn::ModelSpec spec;
  spec.input_shape = pretext.input_shape;
  spec.layers = plan_transfer(pretext).feature_layers;
  for (std::size_t i = 0; i < head_widths.size(); ++i) {
    const auto n = "head_dense" + std::to_string(i + 1);
    spec.layers.push_back(nn::dense(n, head_widths[i]));
    spec.layers.push_back(nn::leaky_relu(n + "_act", alpha));
  }
  spec.layers.push_back(nn::output_linear("stress_out", 1));
  nn::infer_shapes(spec);
  return spec;
}

/// Copies the pretext feature extractor bit-exactly, freezes it, and
/// initializes a fresh head from `head_seed`. The pretext dense layers are
/// discarded.
inline nn::Checkpoint build_finetune_model(const nn::Checkpoint& pretext, std::uint64_t head_seed,
                                           const std::vector<std::size_t>& head_widths = {50, 30, 10},
                                           double alpha = 0.01) {
  nn::validate(pretext);
  const auto plan = plan_transfer(pretext.spec);
  auto model = nn::init_checkpoint<float>(downstream_spec_from(pretext.spec, head_widths, alpha), head_seed);
  for (const auto& name : plan.frozen) {
    model.weights.at(name) = pretext.weights.at(name);
    model.frozen.insert(name);
  }
  model.normalization = pretext.normalization;
  model.provenance = pretext.provenance;
  model.provenance["task"] = "downstream";
  model.provenance["method"] = std::string(to_string(ModelKind::ssl_finetuned));
  return model;
}

/// Same architecture as build_finetune_model, every layer freshly
/// initialized from `seed` and trainable. Head layers get the same initial
/// weights as a finetune model built with head_seed == seed.
inline nn::Checkpoint build_scratch_model(const nn::ModelSpec& pretext_like, std::uint64_t seed,
                                          const std::vector<std::size_t>& head_widths = {50, 30, 10},
                                          double alpha = 0.01) {
  auto model = nn::init_checkpoint<float>(downstream_spec_from(pretext_like, head_widths, alpha), seed);
  model.provenance["task"] = "downstream";
  model.provenance["method"] = std::string(to_string(ModelKind::supervised_scratch));
  return model;
}

struct FitConfig {
  std::size_t epochs = 200;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  nn::OptimizerKind optimizer = nn::OptimizerKind::adam;
  std::uint64_t seed = 0;
};

struct FitResult {
  nn::Checkpoint model;
  ModelKind method = ModelKind::supervised_scratch;
  int question_index = 0;
  std::string subject_id;
  double train_rmse = 0.0;
  double test_rmse = 0.0;
  std::size_t budget = 0;
  std::uint64_t replica_seed = 0;
  std::uint64_t subset_fingerprint = 0;
  std::vector<std::size_t> train_starts;
};

inline void check_disjoint(const WindowedDataset& a, const WindowedDataset& b) {
  const auto sa = a.start_indices();
  const auto sb = b.start_indices();
  std::vector<std::size_t> common;
  std::set_intersection(sa.begin(), sa.end(), sb.begin(), sb.end(), std::back_inserter(common));
  if (!common.empty())
    throw ValidationError("train and test sets share window start index " + std::to_string(common.front()));
}

/// Trains `model` (as built for `method`) on `train_set` and evaluates raw,
/// unclamped RMSE on both sets.
inline FitResult fit(const nn::Checkpoint& model, ModelKind method, const WindowedDataset& train_set,
                     const WindowedDataset& test_set, const FitConfig& config) {
  if (train_set.empty()) throw EmptyDatasetError("empty training set");
  if (test_set.empty()) throw EmptyDatasetError("empty test set");
  if (train_set.kind() != TaskKind::downstream || test_set.kind() != TaskKind::downstream)
    throw ValidationError("fit needs labeled downstream datasets");
  if (train_set.signal() == test_set.signal()) check_disjoint(train_set, test_set);
  if (method == ModelKind::ssl_finetuned && model.frozen.empty())
    throw ValidationError("ssl_finetuned model has no frozen feature extractor");

  nn::OptimizerState opt;
  opt.kind = config.optimizer;
  opt.learning_rate = config.learning_rate;
  nn::TrainOptions to;
  to.epochs = config.epochs;
  to.batch_size = config.batch_size;
  to.seed = config.seed;

  FitResult r;
  r.model = nn::train(model, train_set, opt, to);
  r.method = method;
  r.subject_id = train_set.provenance().subject_id;
  r.question_index = train_set[0].question_index;
  r.budget = train_set.size();
  r.replica_seed = config.seed;
  r.subset_fingerprint = train_set.fingerprint();
  r.train_starts = train_set.start_indices();
  r.train_rmse = nn::evaluate_rmse(r.model, train_set);
  r.test_rmse = nn::evaluate_rmse(r.model, test_set);
  return r;
}

struct StressPrediction {
  double raw = 0.0;
  double clamped = 0.0;  // raw limited to [0.25, 1.0]
};

inline StressPrediction predict_stress(const nn::Checkpoint& model, std::span<const float> window) {
  nn::Executor<float> ex(model);
  if (ex.output_size() != 1) throw ShapeError("predict_stress needs a scalar-output downstream model");
  const auto y = ex.forward(window);
  const double raw = y[0];
  return {raw, std::clamp(raw, 0.25, 1.0)};
}

/// Fixed evaluation split of a downstream dataset.
struct TestSplit {
  WindowedDataset test;
  WindowedDataset remainder;
};

/// Stratified (by condition) sample of `test_size` windows, capped at half
/// the dataset so budgets can always be drawn from the remainder. Quotas
/// follow the largest-remainder rule.
inline TestSplit make_test_split(const WindowedDataset& d, std::size_t test_size, std::uint64_t seed) {
  if (d.size() < 2) throw InsufficientDataError("need at least 2 labeled windows for a test split");
  const std::size_t total = std::min(test_size, d.size() / 2);
  if (total == 0) throw InsufficientDataError("test size must be positive");
  std::map<ConditionTag, std::vector<std::size_t>> strata;
  for (std::size_t i = 0; i < d.size(); ++i) strata[d[i].condition].push_back(i);

  std::vector<std::pair<ConditionTag, std::size_t>> quota;
  std::vector<std::pair<double, ConditionTag>> rema;
  std::size_t assigned = 0;
  for (const auto& [tag, pos] : strata) {
    const double exact = double(total) * double(pos.size()) / double(d.size());
    const auto q = static_cast<std::size_t>(exact);
    quota.emplace_back(tag, q);
    rema.emplace_back(exact - double(q), tag);
    assigned += q;
  }
  std::stable_sort(rema.begin(), rema.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t k = 0; assigned < total && k < rema.size(); ++k, ++assigned)
    for (auto& [tag, q] : quota)
      if (tag == rema[k].second) ++q;

  std::vector<std::size_t> test_pos;
  for (const auto& [tag, q] : quota) {
    CounterRng rng(derive_seed(seed, {static_cast<std::uint64_t>(tag)}));
    const auto& pos = strata.at(tag);
    for (auto k : sample_without_replacement(pos.size(), std::min(q, pos.size()), rng)) test_pos.push_back(pos[k]);
  }
  std::sort(test_pos.begin(), test_pos.end());
  std::vector<std::size_t> rest;
  for (std::size_t i = 0, t = 0; i < d.size(); ++i) {
    if (t < test_pos.size() && test_pos[t] == i) {
      ++t;
      continue;
    }
    rest.push_back(i);
  }
  return {d.select(test_pos), d.select(rest)};
}

// ---------------------------------------------------------------------------
// Results CSV

inline constexpr std::string_view kResultsHeader = "subject,question,method,budget,replica,train_rmse,test_rmse,seed";

struct ResultRow {
  std::string subject;
  int question = 0;
  ModelKind method = ModelKind::supervised_scratch;
  std::size_t budget = 0;
  std::size_t replica = 0;
  double train_rmse = 0.0;
  double test_rmse = 0.0;
  std::uint64_t seed = 0;
  std::uint64_t fingerprint = 0;  // not serialized; 0 when unknown
  friend bool operator==(const ResultRow&, const ResultRow&) = default;
};

inline ResultRow to_row(const FitResult& f, std::size_t replica) {
  return {f.subject_id, f.question_index, f.method, f.budget, replica, f.train_rmse, f.test_rmse, f.replica_seed,
          f.subset_fingerprint};
}

inline std::string encode_result_row(const ResultRow& r) {
  return r.subject + ',' + std::to_string(r.question) + ',' + std::string(to_string(r.method)) + ',' +
         std::to_string(r.budget) + ',' + std::to_string(r.replica) + ',' + format_double(r.train_rmse) + ',' +
         format_double(r.test_rmse) + ',' + std::to_string(r.seed) + '\n';
}

inline std::vector<ResultRow> decode_results_csv(std::string_view text) {
  std::vector<ResultRow> rows;
  bool header = false;
  for (auto line : split_lines(text)) {
    if (line.empty() || line.front() == '#') continue;
    if (!header) {
      if (line != kResultsHeader) throw FormatError("results CSV: unexpected header '" + std::string(line) + "'");
      header = true;
      continue;
    }
    auto c = split(line, ',');
    if (c.size() != 8) throw FormatError("results CSV: expected 8 columns in '" + std::string(line) + "'");
    ResultRow r;
    r.subject = std::string(c[0]);
    r.question = static_cast<int>(parse_int(c[1], "question"));
    r.method = parse_model_kind(c[2]);
    r.budget = static_cast<std::size_t>(parse_int(c[3], "budget"));
    r.replica = static_cast<std::size_t>(parse_int(c[4], "replica"));
    r.train_rmse = parse_double(c[5], "train_rmse");
    r.test_rmse = parse_double(c[6], "test_rmse");
    auto s = trim(c[7]);
    std::uint64_t seed = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), seed);
    if (ec != std::errc{} || p != s.data() + s.size()) throw FormatError("results CSV: bad seed");
    r.seed = seed;
    rows.push_back(std::move(r));
  }
  if (!header) throw FormatError("results CSV: missing header");
  return rows;
}

}  // namespace edap
