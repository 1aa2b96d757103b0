#pragma once

// Paired SSL-vs-scratch comparisons over label budgets and bootstrapped
// replicas, and the analyses on top of them (win rate, label efficiency,
// stability). Every random choice derives from the base seed, so a run is
// a pure function of (data, config, seed).

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "edap/config.hpp"
#include "edap/error.hpp"
#include "edap/finetune.hpp"
#include "edap/nn/checkpoint_io.hpp"
#include "edap/pretrain.hpp"
#include "edap/rng.hpp"
#include "edap/signal_store.hpp"
#include "edap/text.hpp"
#include "edap/windowing.hpp"

namespace edap {

struct CellFailure {
  std::string subject;
  int question = 0;
  std::string message;
};

struct ExperimentResult {
  std::vector<ResultRow> rows;
  std::vector<CellFailure> failures;
  bool ok() const { return failures.empty(); }
};

/// Settings shared by every cell of a comparison.
struct CellSettings {
  std::vector<std::size_t> budgets{10};
  std::size_t replicas = 5;
  std::uint64_t seed = 0;
  std::size_t test_size = 200;
  FitConfig fit;
  std::vector<std::size_t> head_widths{50, 30, 10};
  double alpha = 0.01;
};

/// One (subject, question) comparison: a pretext checkpoint and the
/// subject's labeled windows for that question.
struct CellTask {
  std::string subject;
  int question = 0;
  std::shared_ptr<const nn::Checkpoint> pretext;
  WindowedDataset downstream;
};

inline std::uint64_t cell_seed(std::uint64_t base, const std::string& subject, int question) {
  return derive_seed(base, {fnv1a(subject), static_cast<std::uint64_t>(question)});
}

inline std::uint64_t replica_seed(std::uint64_t cell, std::size_t budget, std::size_t replica) {
  return derive_seed(cell, {0x726570ULL, budget, replica});
}

/// Runs fn(i) for i in [0, n) on up to `jobs` threads. The first exception
/// (by index) is rethrown after all work finishes.
inline void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn) {
  if (jobs <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(n);
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < n;) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < std::min(jobs, n); ++t) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

namespace detail {

struct Job {
  std::size_t cell = 0;
  std::size_t budget = 0;
  std::size_t replica = 0;
};

struct JobOutcome {
  std::vector<ResultRow> rows;
  std::optional<std::string> error;
};

}  // namespace detail

/// Runs every cell: for each (budget, replica) one budget subset is drawn
/// from the cell's non-test windows and both methods are fit on it and
/// evaluated on the cell's fixed test split. Rows come back ordered by
/// (cell, budget, replica, method ssl-then-scratch) regardless of `jobs`.
inline ExperimentResult run_cells(const std::vector<CellTask>& cells, const CellSettings& s, std::size_t jobs = 1) {
  ExperimentResult result;
  std::vector<std::optional<TestSplit>> splits(cells.size());
  std::vector<detail::Job> jobs_list;
  for (std::size_t c = 0; c < cells.size(); ++c) {
    const auto& cell = cells[c];
    try {
      if (!cell.pretext) throw ValidationError("missing pretext checkpoint");
      splits[c] = make_test_split(cell.downstream, s.test_size,
                                  derive_seed(cell_seed(s.seed, cell.subject, cell.question), {0x74657374ULL}));
    } catch (const Error& e) {
      result.failures.push_back({cell.subject, cell.question, e.what()});
      continue;
    }
    for (auto b : s.budgets)
      for (std::size_t r = 0; r < s.replicas; ++r) jobs_list.push_back({c, b, r});
  }

  std::vector<detail::JobOutcome> outcomes(jobs_list.size());
  parallel_for(jobs_list.size(), jobs, [&](std::size_t j) {
    const auto& job = jobs_list[j];
    const auto& cell = cells[job.cell];
    const auto& split = *splits[job.cell];
    try {
      const auto rseed = replica_seed(cell_seed(s.seed, cell.subject, cell.question), job.budget, job.replica);
      const auto subset = sample_budget(split.remainder, job.budget, derive_seed(rseed, {1}));
      FitConfig fc = s.fit;
      fc.seed = rseed;
      const auto ssl_model = build_finetune_model(*cell.pretext, rseed, s.head_widths, s.alpha);
      const auto scratch_model = build_scratch_model(cell.pretext->spec, rseed, s.head_widths, s.alpha);
      auto ssl = fit(ssl_model, ModelKind::ssl_finetuned, subset, split.test, fc);
      auto scratch = fit(scratch_model, ModelKind::supervised_scratch, subset, split.test, fc);
      if (ssl.train_starts != scratch.train_starts) throw ConsistencyError("methods saw different training windows");
      for (const auto& f : {std::cref(ssl), std::cref(scratch)}) {
        auto row = to_row(f.get(), job.replica);
        row.subject = cell.subject;
        row.question = cell.question;
        outcomes[j].rows.push_back(row);
      }
    } catch (const Error& e) {
      outcomes[j].error = "budget " + std::to_string(job.budget) + " replica " + std::to_string(job.replica) + ": " +
                          e.what();
    }
  });
  for (std::size_t j = 0; j < outcomes.size(); ++j) {
    auto& o = outcomes[j];
    if (o.error) {
      const auto& cell = cells[jobs_list[j].cell];
      result.failures.push_back({cell.subject, cell.question, *o.error});
      continue;
    }
    for (auto& r : o.rows) result.rows.push_back(std::move(r));
  }
  return result;
}

inline std::filesystem::path signal_path(const ExperimentConfig& c, const std::string& subject) {
  return c.data_dir / (subject + ".eda1");
}
inline std::filesystem::path labels_path(const ExperimentConfig& c, const std::string& subject) {
  return c.data_dir / (subject + "_labels.csv");
}
inline std::filesystem::path pretext_path(const ExperimentConfig& c, const std::string& subject) {
  return c.pretext_dir / (subject + ".ckpt.json");
}

/// Subjects named in the config, or every `<data_dir>/*.eda1` (sorted).
inline std::vector<std::string> resolve_subjects(const ExperimentConfig& c) {
  if (!c.subjects.empty()) return c.subjects;
  std::vector<std::string> out;
  std::error_code ec;
  for (const auto& entry : std::filesystem::directory_iterator(c.data_dir, ec))
    if (entry.is_regular_file() && entry.path().extension() == ".eda1") out.push_back(entry.path().stem().string());
  if (ec) throw IoError("cannot list data directory '" + c.data_dir.string() + "'");
  std::sort(out.begin(), out.end());
  return out;
}

/// Full comparison over the configured subjects, questions, budgets and
/// replicas. Per-subject problems (missing files or checkpoints) become
/// failures for that subject's cells; the rest still runs.
inline ExperimentResult run_comparison(const ExperimentConfig& config,
                                       const std::function<void(const std::string&)>& log = {}) {
  validate(config);
  std::vector<CellTask> cells;
  std::vector<CellFailure> early;
  for (const auto& subject : resolve_subjects(config)) {
    try {
      auto record = load_signal(signal_path(config, subject));
      const auto labels = load_labels(labels_path(config, subject));
      std::shared_ptr<const nn::Checkpoint> pretext;
      const auto ckpt_path = pretext_path(config, subject);
      if (std::filesystem::exists(ckpt_path)) {
        pretext = std::make_shared<const nn::Checkpoint>(nn::load_checkpoint(ckpt_path));
      } else if (config.pretrain_missing) {
        if (log) log("pretraining " + subject);
        PretrainConfig pc = config.pretrain;
        pc.seed = subject_seed(config.seed, subject);
        auto r = pretrain(record, pc);
        std::filesystem::create_directories(config.pretext_dir);
        nn::save_checkpoint(r.checkpoint, ckpt_path);
        pretext = std::make_shared<const nn::Checkpoint>(std::move(r.checkpoint));
      } else {
        throw IoError("missing pretext checkpoint '" + ckpt_path.string() + "'");
      }
      const auto norm = pretext->normalization ? *pretext->normalization
                                               : fit_pretrain_normalization(record, config.pretrain);
      record = apply_normalization(record, norm);
      const std::size_t window = pretext->spec.input_shape.at(0);
      for (int q : config.questions) {
        try {
          cells.push_back({subject, q, pretext, build_downstream(record, labels, q, window, config.stride)});
        } catch (const Error& e) {
          early.push_back({subject, q, e.what()});
        }
      }
    } catch (const Error& e) {
      for (int q : config.questions) early.push_back({subject, q, e.what()});
    }
  }
  CellSettings s;
  s.budgets = config.budgets;
  s.replicas = config.replicas;
  s.seed = config.seed;
  s.test_size = config.test_size;
  s.fit = config.fit;
  s.head_widths = config.pretrain.arch.head_dense;
  s.alpha = config.pretrain.arch.alpha;
  auto result = run_cells(cells, s, config.jobs);
  result.failures.insert(result.failures.begin(), early.begin(), early.end());
  return result;
}

// ---------------------------------------------------------------------------
// Analyses

/// Sample (n - 1) standard deviation; 0 for fewer than two values.
inline double sample_std(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= double(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / double(v.size() - 1));
}

inline double mean_of(const std::vector<double>& v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  double s = 0.0;
  for (double x : v) s += x;
  return s / double(v.size());
}

using PairKey = std::tuple<std::string, int, std::size_t, std::size_t>;  // subject, question, budget, replica

struct Pair {
  const ResultRow* ssl = nullptr;
  const ResultRow* scratch = nullptr;
};

/// Groups rows into (ssl, scratch) pairs. Throws ConsistencyError on a
/// duplicate, a missing partner, or partners trained on different subsets.
inline std::map<PairKey, Pair> pair_rows(const std::vector<ResultRow>& rows) {
  std::map<PairKey, Pair> pairs;
  for (const auto& r : rows) {
    auto& p = pairs[{r.subject, r.question, r.budget, r.replica}];
    auto& slot = r.method == ModelKind::ssl_finetuned ? p.ssl : p.scratch;
    if (slot) throw ConsistencyError("duplicate " + std::string(to_string(r.method)) + " row for subject " + r.subject);
    slot = &r;
  }
  for (const auto& [k, p] : pairs) {
    if (!p.ssl || !p.scratch)
      throw ConsistencyError("unpaired row for subject " + std::get<0>(k) + " question " +
                             std::to_string(std::get<1>(k)) + " budget " + std::to_string(std::get<2>(k)) +
                             " replica " + std::to_string(std::get<3>(k)));
    if (p.ssl->fingerprint && p.scratch->fingerprint && p.ssl->fingerprint != p.scratch->fingerprint)
      throw ConsistencyError("paired rows were trained on different subsets");
  }
  return pairs;
}

/// Fraction of paired cells where SSL has strictly lower test RMSE (ties
/// are not wins). Restricted to one budget when given.
inline double win_rate(const std::vector<ResultRow>& rows, std::optional<std::size_t> budget = std::nullopt) {
  const auto pairs = pair_rows(rows);
  std::size_t wins = 0, total = 0;
  for (const auto& [k, p] : pairs) {
    if (budget && std::get<2>(k) != *budget) continue;
    ++total;
    if (p.ssl->test_rmse < p.scratch->test_rmse) ++wins;
  }
  if (total == 0) throw ConsistencyError("no paired rows to compute a win rate from");
  return double(wins) / double(total);
}

struct CellStats {
  std::string subject;
  int question = 0;
  std::size_t budget = 0;
  std::size_t replicas = 0;
  double ssl_mean = 0.0, ssl_std = 0.0;
  double scratch_mean = 0.0, scratch_std = 0.0;
  bool ssl_more_stable() const { return ssl_std <= scratch_std; }
};

/// Per (subject, question, budget): mean and sample std of test RMSE across
/// replicas, per method.
inline std::vector<CellStats> stability(const std::vector<ResultRow>& rows) {
  const auto pairs = pair_rows(rows);
  std::map<std::tuple<std::string, int, std::size_t>, std::pair<std::vector<double>, std::vector<double>>> groups;
  for (const auto& [k, p] : pairs) {
    auto& g = groups[{std::get<0>(k), std::get<1>(k), std::get<2>(k)}];
    g.first.push_back(p.ssl->test_rmse);
    g.second.push_back(p.scratch->test_rmse);
  }
  std::vector<CellStats> out;
  for (const auto& [k, g] : groups) {
    CellStats c;
    std::tie(c.subject, c.question, c.budget) = k;
    c.replicas = g.first.size();
    c.ssl_mean = mean_of(g.first);
    c.ssl_std = sample_std(g.first);
    c.scratch_mean = mean_of(g.second);
    c.scratch_std = sample_std(g.second);
    out.push_back(std::move(c));
  }
  return out;
}

struct Crossover {
  std::string subject;
  int question = 0;
  std::size_t max_budget = 0;
  double scratch_mean_at_max = 0.0;
  /// Smallest budget where SSL mean RMSE <= scratch mean at max_budget.
  std::optional<std::size_t> ssl_budget;
  /// ssl_budget / max_budget, or +inf when SSL never gets there.
  double ratio = std::numeric_limits<double>::infinity();
};

/// Label-efficiency crossover per (subject, question) over `budgets`, which
/// must be strictly ascending with at least two entries.
inline std::vector<Crossover> label_efficiency(const std::vector<ResultRow>& rows,
                                               const std::vector<std::size_t>& budgets) {
  if (budgets.size() < 2) throw ConfigError("label efficiency needs at least two budgets");
  for (std::size_t i = 1; i < budgets.size(); ++i)
    if (budgets[i] <= budgets[i - 1]) throw ConfigError("budgets must be strictly ascending");
  std::map<std::pair<std::string, int>, std::map<std::size_t, CellStats>> cells;
  for (auto& c : stability(rows)) cells[{c.subject, c.question}][c.budget] = c;
  std::vector<Crossover> out;
  for (const auto& [key, by_budget] : cells) {
    for (auto b : budgets)
      if (!by_budget.contains(b))
        throw ConsistencyError("subject " + key.first + " question " + std::to_string(key.second) +
                               " has no results at budget " + std::to_string(b));
    Crossover x;
    x.subject = key.first;
    x.question = key.second;
    x.max_budget = budgets.back();
    x.scratch_mean_at_max = by_budget.at(x.max_budget).scratch_mean;
    for (auto b : budgets) {
      if (by_budget.at(b).ssl_mean <= x.scratch_mean_at_max) {
        x.ssl_budget = b;
        x.ratio = double(b) / double(x.max_budget);
        break;
      }
    }
    out.push_back(std::move(x));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Report files

inline constexpr std::string_view kAggregateHeader =
    "subject,question,budget,replicas,ssl_mean_test_rmse,ssl_std_test_rmse,scratch_mean_test_rmse,"
    "scratch_std_test_rmse,ssl_more_stable";
inline constexpr std::string_view kPlotHeader = "question,budget,method,mean_test_rmse,std_test_rmse,count";

inline std::string encode_results_csv(const std::vector<ResultRow>& rows, const std::string& stamp = {}) {
  std::string out = stamp.empty() ? std::string() : "# " + stamp + "\n";
  out += kResultsHeader;
  out += '\n';
  for (const auto& r : rows) out += encode_result_row(r);
  return out;
}

inline std::string encode_aggregate_csv(const std::vector<ResultRow>& rows, const std::string& stamp = {}) {
  std::string out = stamp.empty() ? std::string() : "# " + stamp + "\n";
  out += kAggregateHeader;
  out += '\n';
  for (const auto& c : stability(rows))
    out += c.subject + ',' + std::to_string(c.question) + ',' + std::to_string(c.budget) + ',' +
           std::to_string(c.replicas) + ',' + format_double(c.ssl_mean) + ',' + format_double(c.ssl_std) + ',' +
           format_double(c.scratch_mean) + ',' + format_double(c.scratch_std) + ',' +
           (c.ssl_more_stable() ? "true" : "false") + '\n';
  return out;
}

/// Budget vs mean/std test RMSE per question and method, pooled over
/// subjects and replicas.
inline std::string encode_plot_csv(const std::vector<ResultRow>& rows, const std::string& stamp = {}) {
  pair_rows(rows);
  std::map<std::tuple<int, std::size_t, int>, std::vector<double>> groups;
  for (const auto& r : rows) groups[{r.question, r.budget, static_cast<int>(r.method)}].push_back(r.test_rmse);
  std::string out = stamp.empty() ? std::string() : "# " + stamp + "\n";
  out += kPlotHeader;
  out += '\n';
  for (const auto& [k, v] : groups) {
    const auto& [q, b, m] = k;
    out += std::to_string(q) + ',' + std::to_string(b) + ',' + std::string(to_string(static_cast<ModelKind>(m))) +
           ',' + format_double(mean_of(v)) + ',' + format_double(sample_std(v)) + ',' + std::to_string(v.size()) +
           '\n';
  }
  return out;
}

/// Writes results.csv, aggregate.csv and plot_data.csv into `out_dir`.
/// `stamp`, when non-empty, becomes a leading `# ...` metadata line.
inline std::vector<std::filesystem::path> emit_report(const std::vector<ResultRow>& rows,
                                                      const std::filesystem::path& out_dir,
                                                      const std::string& stamp = {}) {
  std::filesystem::create_directories(out_dir);
  const std::vector<std::pair<std::string, std::string>> files{
      {"results.csv", encode_results_csv(rows, stamp)},
      {"aggregate.csv", encode_aggregate_csv(rows, stamp)},
      {"plot_data.csv", encode_plot_csv(rows, stamp)}};
  std::vector<std::filesystem::path> written;
  for (const auto& [name, body] : files) {
    edap::detail::write_file_atomic(out_dir / name, body);
    written.push_back(out_dir / name);
  }
  return written;
}

}  // namespace edap
