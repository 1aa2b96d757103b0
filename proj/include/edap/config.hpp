#pragma once

// Experiment configuration, read from a `key = value` text file.
//
//   # comments and blank lines are ignored
//   subjects = S2,S3          # or "all": every <data_dir>/*.eda1
//   questions = 1,2,3,4,5,6
//   budgets = 5,10,20,40,80   # positive, strictly ascending
//   replicas = 5
//   seed = 42
//   data_dir = converted      # <subject>.eda1 and <subject>_labels.csv
//   pretext_dir = pretext     # <subject>.ckpt.json
//   pretrain_missing = false  # pretrain subjects without a checkpoint
//   test_size = 200
//   jobs = 1
//
// Hyperparameter keys: window, horizon, stride, kernel_size, conv_stride,
// padding, alpha, normalization, baseline_only, holdout, pretrain_epochs,
// pretrain_lr, pretrain_batch, finetune_epochs, finetune_lr,
// finetune_batch, optimizer. Relative paths resolve against the config
// file's directory.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "edap/error.hpp"
#include "edap/finetune.hpp"
#include "edap/pretrain.hpp"
#include "edap/text.hpp"

namespace edap {

struct ExperimentConfig {
  std::vector<std::string> subjects;  // empty = all subjects in data_dir
  std::vector<int> questions{1, 2, 3, 4, 5, 6};
  std::vector<std::size_t> budgets{5, 10, 20, 40, 80};
  std::size_t replicas = 5;
  std::uint64_t seed = 0;
  std::size_t test_size = 200;
  std::size_t stride = 100;
  std::filesystem::path data_dir = ".";
  std::filesystem::path pretext_dir = ".";
  bool pretrain_missing = false;
  std::size_t jobs = 1;
  PretrainConfig pretrain;
  FitConfig fit;
};

inline void validate(const ExperimentConfig& c) {
  if (c.replicas < 1) throw ConfigError("replicas must be >= 1");
  if (c.budgets.empty()) throw ConfigError("budgets must not be empty");
  for (std::size_t i = 0; i < c.budgets.size(); ++i) {
    if (c.budgets[i] == 0) throw ConfigError("budgets must be positive");
    if (i && c.budgets[i] <= c.budgets[i - 1]) throw ConfigError("budgets must be strictly ascending");
  }
  if (c.questions.empty()) throw ConfigError("questions must not be empty");
  for (int q : c.questions)
    if (q < 1 || q > kQuestionCount) throw ConfigError("question index out of range 1..6: " + std::to_string(q));
  if (c.jobs < 1) throw ConfigError("jobs must be >= 1");
}

namespace detail {

inline std::vector<std::string_view> list_items(std::string_view v) {
  std::vector<std::string_view> out;
  for (auto item : split(v, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

inline bool parse_bool(std::string_view v, const std::string& key) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("key '" + key + "': expected true/false, got '" + std::string(v) + "'");
}

inline std::size_t parse_count(std::string_view v, const std::string& key) {
  const auto n = parse_int(v, key.c_str());
  if (n < 0) throw ConfigError("key '" + key + "' must be non-negative");
  return static_cast<std::size_t>(n);
}

}  // namespace detail

/// Applies one `key = value` setting. Throws ConfigError on unknown keys.
inline void apply_setting(ExperimentConfig& c, const std::string& key, std::string_view value,
                          const std::filesystem::path& base_dir) {
  auto path = [&](std::string_view v) {
    std::filesystem::path p{std::string(v)};
    return p.is_absolute() ? p : base_dir / p;
  };
  try {
    if (key == "subjects") {
      c.subjects.clear();
      if (value != "all")
        for (auto s : detail::list_items(value)) c.subjects.emplace_back(s);
    } else if (key == "questions") {
      c.questions.clear();
      for (auto s : detail::list_items(value)) c.questions.push_back(static_cast<int>(parse_int(s, "questions")));
    } else if (key == "budgets") {
      c.budgets.clear();
      for (auto s : detail::list_items(value)) c.budgets.push_back(detail::parse_count(s, key));
    } else if (key == "replicas") {
      c.replicas = detail::parse_count(value, key);
    } else if (key == "seed") {
      c.seed = static_cast<std::uint64_t>(detail::parse_count(value, key));
    } else if (key == "test_size") {
      c.test_size = detail::parse_count(value, key);
    } else if (key == "data_dir") {
      c.data_dir = path(value);
    } else if (key == "pretext_dir") {
      c.pretext_dir = path(value);
    } else if (key == "pretrain_missing") {
      c.pretrain_missing = detail::parse_bool(value, key);
    } else if (key == "jobs") {
      c.jobs = detail::parse_count(value, key);
    } else if (key == "window") {
      c.pretrain.arch.window = detail::parse_count(value, key);
    } else if (key == "horizon") {
      c.pretrain.arch.horizon = detail::parse_count(value, key);
    } else if (key == "stride") {
      c.stride = c.pretrain.stride = detail::parse_count(value, key);
    } else if (key == "kernel_size") {
      c.pretrain.arch.kernel_size = detail::parse_count(value, key);
    } else if (key == "conv_stride") {
      c.pretrain.arch.stride = detail::parse_count(value, key);
    } else if (key == "padding") {
      c.pretrain.arch.padding = detail::parse_count(value, key);
    } else if (key == "alpha") {
      c.pretrain.arch.alpha = parse_double(value, "alpha");
    } else if (key == "normalization") {
      c.pretrain.normalization = parse_normalization(value);
    } else if (key == "baseline_only") {
      c.pretrain.baseline_only = detail::parse_bool(value, key);
    } else if (key == "holdout") {
      c.pretrain.holdout_fraction = parse_double(value, "holdout");
    } else if (key == "pretrain_epochs") {
      c.pretrain.epochs = detail::parse_count(value, key);
    } else if (key == "pretrain_lr") {
      c.pretrain.learning_rate = parse_double(value, "pretrain_lr");
    } else if (key == "pretrain_batch") {
      c.pretrain.batch_size = detail::parse_count(value, key);
    } else if (key == "finetune_epochs") {
      c.fit.epochs = detail::parse_count(value, key);
    } else if (key == "finetune_lr") {
      c.fit.learning_rate = parse_double(value, "finetune_lr");
    } else if (key == "finetune_batch") {
      c.fit.batch_size = detail::parse_count(value, key);
    } else if (key == "optimizer") {
      c.pretrain.optimizer = c.fit.optimizer = nn::parse_optimizer(value);
    } else {
      throw ConfigError("unknown config key '" + key + "'");
    }
  } catch (const FormatError& e) {
    throw ConfigError("key '" + key + "': " + e.what());
  }
}

struct ParsedConfig {
  ExperimentConfig config;
  /// Sorted `key=value` lines; hashed into every artifact.
  std::string canonical;
  std::uint64_t hash = 0;
};

inline ParsedConfig parse_experiment_config(std::string_view text, const std::filesystem::path& base_dir = ".") {
  ParsedConfig out;
  std::map<std::string, std::string> seen;
  std::size_t line_no = 0;
  for (auto raw : split_lines(text)) {
    ++line_no;
    auto line = raw;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos)
      throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
    const std::string key(trim(line.substr(0, eq)));
    const auto value = trim(line.substr(eq + 1));
    if (seen.contains(key)) throw ConfigError("config key '" + key + "' given twice");
    apply_setting(out.config, key, value, base_dir);
    seen[key] = std::string(value);
  }
  validate(out.config);
  for (const auto& [k, v] : seen) out.canonical += k + "=" + v + "\n";
  out.hash = fnv1a(out.canonical);
  return out;
}

inline ParsedConfig load_experiment_config(const std::filesystem::path& path) {
  const auto text = edap::detail::read_file_bytes(path);
  return parse_experiment_config(text, path.has_parent_path() ? path.parent_path() : std::filesystem::path("."));
}

}  // namespace edap
