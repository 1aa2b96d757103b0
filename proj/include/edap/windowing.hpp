#pragma once

// Sliding-window datasets over one subject's signal.
//
// A dataset does not copy windows: it shares the (normalized) signal and
// stores start indices. Pretext example i is
//   input  = signal[start, start + window)
//   target = signal[start + window, start + window + horizon)
// Downstream examples carry a scalar label instead of a target.

#include <algorithm>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "edap/error.hpp"
#include "edap/rng.hpp"
#include "edap/signal_store.hpp"
#include "edap/text.hpp"

namespace edap {

enum class TaskKind { pretext, downstream };

struct WindowProvenance {
  std::string subject_id;
  std::size_t stride = 100;
  std::size_t window = 7000;
  std::size_t horizon = 40;  // 0 for downstream datasets
  friend bool operator==(const WindowProvenance&, const WindowProvenance&) = default;
};

struct WindowExample {
  std::size_t start_index = 0;
  float label = 0.0f;  // downstream only
  int question_index = 0;
  ConditionTag condition = ConditionTag::other;
  friend bool operator==(const WindowExample&, const WindowExample&) = default;
};

class WindowedDataset {
 public:
  WindowedDataset() = default;
  WindowedDataset(TaskKind kind, std::shared_ptr<const std::vector<float>> signal, WindowProvenance prov,
                  std::vector<WindowExample> examples)
      : kind_(kind), signal_(std::move(signal)), prov_(std::move(prov)), examples_(std::move(examples)) {
    check_invariants();
  }

  TaskKind kind() const { return kind_; }
  const WindowProvenance& provenance() const { return prov_; }
  const std::vector<WindowExample>& examples() const { return examples_; }
  const std::shared_ptr<const std::vector<float>>& signal() const { return signal_; }
  std::size_t size() const { return examples_.size(); }
  bool empty() const { return examples_.empty(); }
  const WindowExample& operator[](std::size_t i) const { return examples_[i]; }

  std::size_t input_size() const { return prov_.window; }
  std::size_t target_size() const { return kind_ == TaskKind::pretext ? prov_.horizon : 1; }

  std::span<const float> input(std::size_t i) const {
    return std::span<const float>(*signal_).subspan(examples_[i].start_index, prov_.window);
  }
  std::span<const float> target(std::size_t i) const {
    if (kind_ == TaskKind::pretext)
      return std::span<const float>(*signal_).subspan(examples_[i].start_index + prov_.window, prov_.horizon);
    return std::span<const float>(&examples_[i].label, 1);
  }

  std::vector<std::size_t> start_indices() const {
    std::vector<std::size_t> out;
    out.reserve(examples_.size());
    for (const auto& e : examples_) out.push_back(e.start_index);
    return out;
  }

  /// Dataset with the examples at `positions` (re-sorted by start index).
  WindowedDataset select(const std::vector<std::size_t>& positions) const {
    std::vector<WindowExample> ex;
    ex.reserve(positions.size());
    for (auto p : positions) ex.push_back(examples_.at(p));
    std::sort(ex.begin(), ex.end(), [](const auto& a, const auto& b) { return a.start_index < b.start_index; });
    return WindowedDataset(kind_, signal_, prov_, std::move(ex));
  }

  /// Fingerprint of the (sorted) example start indices.
  std::uint64_t fingerprint() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& e : examples_) {
      const auto s = std::to_string(e.start_index) + ";";
      h = fnv1a(s, h);
    }
    return h;
  }

 private:
  void check_invariants() const {
    if (!signal_) throw ValidationError("dataset without a signal");
    const std::size_t span = prov_.window + (kind_ == TaskKind::pretext ? prov_.horizon : 0);
    for (std::size_t i = 0; i < examples_.size(); ++i) {
      if (examples_[i].start_index + span > signal_->size()) throw ValidationError("window exceeds signal");
      if (i && examples_[i].start_index <= examples_[i - 1].start_index)
        throw ValidationError("window start indices must be strictly increasing");
    }
  }

  TaskKind kind_ = TaskKind::pretext;
  std::shared_ptr<const std::vector<float>> signal_ = std::make_shared<const std::vector<float>>();
  WindowProvenance prov_;
  std::vector<WindowExample> examples_;
};

/// Number of pretext windows for a signal of `length` samples.
constexpr std::size_t pretext_count(std::size_t length, std::size_t window, std::size_t horizon, std::size_t stride) {
  if (length < window + horizon || stride == 0) return 0;
  return (length - window - horizon) / stride + 1;
}

inline void check_window_params(std::size_t window, std::size_t stride) {
  if (window == 0) throw ConfigError("window must be positive");
  if (stride == 0) throw ConfigError("stride must be positive");
}

/// Forecasting windows at starts 0, stride, 2*stride, ... over the whole signal.
inline WindowedDataset build_pretext(std::shared_ptr<const std::vector<float>> signal, std::string subject_id,
                                     std::size_t window = 7000, std::size_t horizon = 40, std::size_t stride = 100) {
  check_window_params(window, stride);
  if (horizon == 0) throw ConfigError("horizon must be positive");
  const std::size_t n = pretext_count(signal->size(), window, horizon, stride);
  if (n == 0)
    throw EmptyDatasetError("signal of " + std::to_string(signal->size()) + " samples is shorter than window + horizon (" +
                            std::to_string(window + horizon) + ")");
  std::vector<WindowExample> ex(n);
  for (std::size_t i = 0; i < n; ++i) ex[i].start_index = i * stride;
  return WindowedDataset(TaskKind::pretext, std::move(signal), {std::move(subject_id), stride, window, horizon},
                         std::move(ex));
}

inline WindowedDataset build_pretext(const SignalRecord& record, std::size_t window = 7000, std::size_t horizon = 40,
                                     std::size_t stride = 100) {
  return build_pretext(std::make_shared<const std::vector<float>>(record.samples), record.subject_id, window, horizon,
                       stride);
}

/// Forecasting windows restricted to baseline spans; windows never cross a
/// span boundary.
inline WindowedDataset build_pretext_baseline(const SignalRecord& record, std::size_t window = 7000,
                                              std::size_t horizon = 40, std::size_t stride = 100) {
  check_window_params(window, stride);
  if (horizon == 0) throw ConfigError("horizon must be positive");
  std::vector<ConditionSpan> spans;
  for (const auto& s : record.condition_spans)
    if (s.tag == ConditionTag::baseline) spans.push_back(s);
  std::sort(spans.begin(), spans.end(), [](const auto& a, const auto& b) { return a.start < b.start; });
  std::vector<WindowExample> ex;
  for (const auto& s : spans)
    for (std::size_t k = 0; k < pretext_count(s.length(), window, horizon, stride); ++k)
      ex.push_back({static_cast<std::size_t>(s.start) + k * stride, 0.0f, 0, ConditionTag::baseline});
  if (ex.empty()) throw EmptyDatasetError("no baseline span is long enough for window + horizon");
  return WindowedDataset(TaskKind::pretext, std::make_shared<const std::vector<float>>(record.samples),
                         {record.subject_id, stride, window, horizon}, std::move(ex));
}

/// Labeled windows inside condition spans, one per stride step, labeled
/// with the subject's normalized answer to `question_index` for that
/// span's condition. Spans without an answer are skipped.
inline WindowedDataset build_downstream(const SignalRecord& record, const LabelSet& labels, int question_index,
                                        std::size_t window = 7000, std::size_t stride = 100) {
  check_window_params(window, stride);
  if (question_index < 1 || question_index > kQuestionCount)
    throw ValidationError("question index out of range 1..6: " + std::to_string(question_index));
  std::vector<ConditionSpan> spans = record.condition_spans;
  std::sort(spans.begin(), spans.end(), [](const auto& a, const auto& b) { return a.start < b.start; });
  std::vector<WindowExample> ex;
  for (const auto& s : spans) {
    auto entry = labels.find(s.tag, question_index);
    if (!entry || s.length() < window) continue;
    for (std::size_t k = 0; k < pretext_count(s.length(), window, 0, stride); ++k)
      ex.push_back({static_cast<std::size_t>(s.start) + k * stride, static_cast<float>(entry->normalized),
                    question_index, s.tag});
  }
  if (ex.empty())
    throw EmptyDatasetError("no labeled condition span of at least " + std::to_string(window) +
                            " samples for question " + std::to_string(question_index));
  return WindowedDataset(TaskKind::downstream, std::make_shared<const std::vector<float>>(record.samples),
                         {record.subject_id, stride, window, 0}, std::move(ex));
}

/// Uniform sample of `budget` examples without replacement, a pure function
/// of (dataset, budget, seed). The result keeps start-index order.
inline WindowedDataset sample_budget(const WindowedDataset& dataset, std::size_t budget, std::uint64_t seed) {
  if (budget > dataset.size())
    throw InsufficientDataError("budget " + std::to_string(budget) + " exceeds the " + std::to_string(dataset.size()) +
                                " available examples");
  CounterRng rng(seed);
  return dataset.select(sample_without_replacement(dataset.size(), budget, rng));
}

/// Index file: one row per example, `start_index,label,question,condition`.
inline std::string encode_index_csv(const WindowedDataset& d) {
  std::string out = "# subject=" + d.provenance().subject_id + " window=" + std::to_string(d.provenance().window) +
                    " horizon=" + std::to_string(d.provenance().horizon) +
                    " stride=" + std::to_string(d.provenance().stride) + "\n";
  out += "start_index,label,question,condition\n";
  for (const auto& e : d.examples()) {
    out += std::to_string(e.start_index) + ',';
    out += d.kind() == TaskKind::downstream ? format_float(e.label) : std::string();
    out += ',' + std::to_string(e.question_index) + ',';
    out += to_string(e.condition);
    out += '\n';
  }
  return out;
}

}  // namespace edap
