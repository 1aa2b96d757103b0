#pragma once

// Per-subject self-supervised pretraining on the forecasting pretext task.

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "edap/error.hpp"
#include "edap/nn/model.hpp"
#include "edap/nn/optimizer.hpp"
#include "edap/nn/train.hpp"
#include "edap/signal_store.hpp"
#include "edap/text.hpp"
#include "edap/windowing.hpp"

namespace edap {

struct PretrainConfig {
  nn::ArchConfig arch;
  NormalizationMethod normalization = NormalizationMethod::minmax;
  /// Restrict windows (and the normalization fit) to baseline spans.
  bool baseline_only = false;
  std::size_t stride = 100;
  double holdout_fraction = 0.1;
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  nn::OptimizerKind optimizer = nn::OptimizerKind::adam;
  std::uint64_t seed = 0;
  std::function<void(std::size_t, double)> on_epoch;
};

struct PretrainReport {
  std::string subject_id;
  double pretext_rmse = 0.0;
  /// Same holdout, predicting every target as the last input sample.
  double naive_rmse = 0.0;
  std::size_t examples_used = 0;
  std::size_t holdout_examples = 0;
  double holdout_fraction = 0.1;
  std::uint64_t seed = 0;
  std::map<std::string, std::string> hyperparameters;
  std::string status = "ok";
};

struct PretrainResult {
  nn::Checkpoint checkpoint;
  PretrainReport report;
};

/// Chronological split: the last `fraction` of windows (at least one) are
/// held out; the rest (at least one) are trained on.
inline std::size_t holdout_count(std::size_t n, double fraction) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw ConfigError("holdout fraction must be in (0, 1)");
  if (n < 2) throw EmptyDatasetError("pretraining needs at least 2 windows, got " + std::to_string(n));
  auto h = static_cast<std::size_t>(std::ceil(double(n) * fraction));
  return std::clamp<std::size_t>(h, 1, n - 1);
}

inline double last_value_rmse(const WindowedDataset& d) {
  double s = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    const double last = d.input(i).back();
    for (float t : d.target(i)) {
      s += (t - last) * (t - last);
      ++count;
    }
  }
  return count ? std::sqrt(s / double(count)) : 0.0;
}

inline std::map<std::string, std::string> describe(const PretrainConfig& c) {
  return {{"epochs", std::to_string(c.epochs)},
          {"batch_size", std::to_string(c.batch_size)},
          {"learning_rate", format_double(c.learning_rate)},
          {"optimizer", std::string(nn::to_string(c.optimizer))},
          {"normalization", std::string(to_string(c.normalization))},
          {"baseline_only", c.baseline_only ? "true" : "false"},
          {"stride", std::to_string(c.stride)},
          {"kernel_size", std::to_string(c.arch.kernel_size)},
          {"conv_stride", std::to_string(c.arch.stride)},
          {"padding", std::to_string(c.arch.padding)},
          {"alpha", format_double(c.arch.alpha)}};
}

/// Normalization fitted on the pretraining portion of `record`.
inline NormalizationParams fit_pretrain_normalization(const SignalRecord& record, const PretrainConfig& config) {
  if (!config.baseline_only) return fit_normalization(record, config.normalization);
  const auto base = baseline_samples(record);
  if (base.empty()) throw EmptyDatasetError("record has no baseline span");
  return fit_normalization(std::span<const float>(base), config.normalization);
}

inline PretrainResult pretrain(const SignalRecord& record, const PretrainConfig& config) {
  validate(record);
  const auto norm = fit_pretrain_normalization(record, config);
  const auto normalized = apply_normalization(record, norm);
  const auto& a = config.arch;
  const WindowedDataset all = config.baseline_only
                                  ? build_pretext_baseline(normalized, a.window, a.horizon, config.stride)
                                  : build_pretext(normalized, a.window, a.horizon, config.stride);
  const std::size_t h = holdout_count(all.size(), config.holdout_fraction);
  std::vector<std::size_t> train_pos, hold_pos;
  for (std::size_t i = 0; i < all.size(); ++i) (i + h < all.size() ? train_pos : hold_pos).push_back(i);
  const auto train_set = all.select(train_pos);
  const auto holdout = all.select(hold_pos);

  auto init = nn::init_checkpoint<float>(nn::pretext_spec(a), config.seed);
  nn::OptimizerState opt;
  opt.kind = config.optimizer;
  opt.learning_rate = config.learning_rate;
  nn::TrainOptions to;
  to.epochs = config.epochs;
  to.batch_size = config.batch_size;
  to.seed = config.seed;
  to.on_epoch = config.on_epoch;
  auto ckpt = nn::train(init, train_set, opt, to);
  ckpt.normalization = norm;
  ckpt.provenance["subject_id"] = record.subject_id;
  ckpt.provenance["task"] = "pretext";

  PretrainResult out{std::move(ckpt), {}};
  auto& r = out.report;
  r.subject_id = record.subject_id;
  r.pretext_rmse = nn::evaluate_rmse(out.checkpoint, holdout);
  r.naive_rmse = last_value_rmse(holdout);
  r.examples_used = train_set.size();
  r.holdout_examples = holdout.size();
  r.holdout_fraction = config.holdout_fraction;
  r.seed = config.seed;
  r.hyperparameters = describe(config);
  return out;
}

/// Seed used for `subject_id` when pretraining a cohort from one base seed.
inline std::uint64_t subject_seed(std::uint64_t base, const std::string& subject_id) {
  return derive_seed(base, {fnv1a(subject_id)});
}

struct PretrainAllResult {
  std::vector<PretrainReport> reports;
  std::vector<nn::Checkpoint> checkpoints;  // parallel to reports; empty model on failure
  bool all_ok() const {
    for (const auto& r : reports)
      if (r.status != "ok") return false;
    return true;
  }
};

/// One independent model per subject. Failures are recorded per subject.
inline PretrainAllResult pretrain_all(const std::vector<SignalRecord>& records, const PretrainConfig& config) {
  PretrainAllResult out;
  for (const auto& rec : records) {
    PretrainConfig c = config;
    c.seed = subject_seed(config.seed, rec.subject_id);
    try {
      auto r = pretrain(rec, c);
      out.reports.push_back(std::move(r.report));
      out.checkpoints.push_back(std::move(r.checkpoint));
    } catch (const Error& e) {
      PretrainReport fail;
      fail.subject_id = rec.subject_id;
      fail.seed = c.seed;
      fail.holdout_fraction = c.holdout_fraction;
      fail.status = std::string("failed: ") + e.what();
      out.reports.push_back(std::move(fail));
      out.checkpoints.emplace_back();
    }
  }
  return out;
}

inline constexpr std::string_view kPretrainReportHeader =
    "subject_id,pretext_rmse,naive_rmse,examples_used,holdout_examples,holdout_fraction,seed,epochs,learning_rate,"
    "batch_size,status";

inline std::string csv_escape(std::string_view s) {
  if (s.find_first_of(",\"\n") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch == '\n' ? ' ' : ch;
  }
  return out + "\"";
}

inline std::string encode_pretrain_reports(const std::vector<PretrainReport>& reports) {
  std::string out(kPretrainReportHeader);
  out += '\n';
  for (const auto& r : reports) {
    auto hp = [&](const char* k) {
      auto it = r.hyperparameters.find(k);
      return it == r.hyperparameters.end() ? std::string() : it->second;
    };
    out += csv_escape(r.subject_id) + ',' + format_double(r.pretext_rmse) + ',' + format_double(r.naive_rmse) + ',' +
           std::to_string(r.examples_used) + ',' + std::to_string(r.holdout_examples) + ',' +
           format_double(r.holdout_fraction) + ',' + std::to_string(r.seed) + ',' + hp("epochs") + ',' +
           hp("learning_rate") + ',' + hp("batch_size") + ',' + csv_escape(r.status) + '\n';
  }
  return out;
}

}  // namespace edap
