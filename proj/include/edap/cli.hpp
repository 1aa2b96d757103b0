#pragma once

// `eda-personalize` command line. dispatch() returns the process exit
// code: 0 success, 1 operational failure, 2 usage error.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "edap/config.hpp"
#include "edap/error.hpp"
#include "edap/experiment.hpp"
#include "edap/finetune.hpp"
#include "edap/nn/checkpoint_io.hpp"
#include "edap/pretrain.hpp"
#include "edap/signal_store.hpp"
#include "edap/text.hpp"
#include "edap/version.hpp"
#include "edap/windowing.hpp"

namespace edap::cli {

struct GlobalConfig {
  std::optional<std::uint64_t> seed;
  int verbosity = 0;
  std::size_t jobs = 1;
  std::vector<std::string> overrides;  // key=value, same keys as the experiment config
};

inline std::string stamp(std::uint64_t seed, std::uint64_t config_hash) {
  return "tool=" + std::string(kToolName) + " version=" + std::string(kToolVersion) + " seed=" + std::to_string(seed) +
         " config_hash=" + hex64(config_hash);
}

inline void apply_overrides(ParsedConfig& pc, const std::vector<std::string>& overrides) {
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + o + "' is not key=value");
    const std::string key(trim(std::string_view(o).substr(0, eq)));
    const auto value = trim(std::string_view(o).substr(eq + 1));
    apply_setting(pc.config, key, value, ".");
    pc.canonical += "override:" + key + "=" + std::string(value) + "\n";
  }
  validate(pc.config);
  pc.hash = fnv1a(pc.canonical);
}

inline void append_file(const std::filesystem::path& path, const std::string& header_block, const std::string& body) {
  const bool fresh = !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
  std::ofstream out(path, std::ios::app | std::ios::binary);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  if (fresh) out << header_block;
  out << body;
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

inline void print_record_summary(std::ostream& out, const SignalRecord& r) {
  out << "subject " << r.subject_id << ": " << r.samples.size() << " samples at " << r.sample_rate_hz << " Hz, "
      << r.condition_spans.size() << " condition spans\n";
  for (const auto& s : r.condition_spans)
    out << "  " << to_string(s.tag) << " [" << s.start << ", " << s.end << ")\n";
}

inline int dispatch(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Personalized self-supervised stress modeling from wearable EDA signals", std::string(kToolName)};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kToolVersion));
  GlobalConfig g;
  app.add_option("--seed", g.seed, "Base seed (overrides the config file seed)");
  app.add_flag("-v,--verbose", g.verbosity, "Log per-epoch training loss (repeat for more)");
  app.add_option("--jobs", g.jobs, "Parallel experiment jobs")->check(CLI::PositiveNumber);
  app.add_option("--set", g.overrides, "Hyperparameter override key=value (repeatable)");

  int status = 0;
  auto logger = [&](const std::string& what) {
    return [&, what](std::size_t epoch, double loss) {
      if (g.verbosity >= 1) err << what << " epoch " << epoch << " loss " << format_double(loss) << "\n";
    };
  };
  auto hyper = [&](const std::string& config_path) {
    ParsedConfig pc = config_path.empty() ? ParsedConfig{} : load_experiment_config(config_path);
    if (config_path.empty()) pc.hash = fnv1a(pc.canonical);
    apply_overrides(pc, g.overrides);
    if (g.seed) pc.config.seed = *g.seed;
    return pc;
  };

  // validate ---------------------------------------------------------------
  auto* validate_cmd = app.add_subcommand("validate", "Check an EDA1 signal file or a labels CSV");
  std::string validate_path;
  validate_cmd->add_option("file", validate_path, "EDA1 or labels CSV file")->required();
  validate_cmd->callback([&] {
    if (std::filesystem::path(validate_path).extension() == ".csv") {
      const auto ls = load_labels(validate_path);
      out << "labels for " << ls.subject_id << ": " << ls.entries.size() << " entries OK\n";
    } else {
      print_record_summary(out, load_signal(validate_path));
      out << "OK\n";
    }
  });

  // normalize --------------------------------------------------------------
  auto* norm_cmd = app.add_subcommand("normalize", "Fit and apply signal normalization");
  std::string norm_method = "minmax", norm_in, norm_out;
  bool norm_baseline = false;
  norm_cmd->add_option("--method", norm_method, "none | minmax | zscore")->required();
  norm_cmd->add_option("--in", norm_in, "Input EDA1 file")->required();
  norm_cmd->add_option("--out", norm_out, "Output EDA1 file")->required();
  norm_cmd->add_flag("--baseline-only", norm_baseline, "Fit on baseline spans only");
  norm_cmd->callback([&] {
    const auto rec = load_signal(norm_in);
    PretrainConfig pc;
    pc.normalization = parse_normalization(norm_method);
    pc.baseline_only = norm_baseline;
    const auto p = fit_pretrain_normalization(rec, pc);
    save_signal(apply_normalization(rec, p), norm_out);
    out << "method=" << to_string(p.method) << " param_a=" << format_double(p.param_a)
        << " param_b=" << format_double(p.param_b) << "\n";
  });

  // windows ----------------------------------------------------------------
  auto* win_cmd = app.add_subcommand("windows", "Build pretext or downstream windows and report/dump them");
  std::string win_mode = "pretext", win_signal, win_labels, win_out;
  std::size_t win_window = 7000, win_horizon = 40, win_stride = 100;
  int win_question = 1;
  win_cmd->add_option("--signal", win_signal, "EDA1 file")->required();
  win_cmd->add_option("--mode", win_mode, "pretext | downstream")->check(CLI::IsMember({"pretext", "downstream"}));
  win_cmd->add_option("--window", win_window, "Window length in samples");
  win_cmd->add_option("--horizon", win_horizon, "Forecast horizon (pretext)");
  win_cmd->add_option("--stride", win_stride, "Step between window starts");
  win_cmd->add_option("--question", win_question, "STAI question 1..6 (downstream)");
  win_cmd->add_option("--labels", win_labels, "Labels CSV (downstream)");
  win_cmd->add_option("--out", win_out, "Write an index file (start_index,label,question,condition)");
  win_cmd->callback([&] {
    const auto rec = load_signal(win_signal);
    WindowedDataset d;
    if (win_mode == "pretext") {
      d = build_pretext(rec, win_window, win_horizon, win_stride);
    } else {
      if (win_labels.empty()) throw ConfigError("--labels is required for downstream windows");
      d = build_downstream(rec, load_labels(win_labels), win_question, win_window, win_stride);
    }
    out << d.size() << " " << win_mode << " windows\n";
    if (!win_out.empty()) {
      const std::string params = win_mode + " window=" + std::to_string(win_window) + " horizon=" +
                                 std::to_string(win_horizon) + " stride=" + std::to_string(win_stride) +
                                 " question=" + std::to_string(win_question);
      edap::detail::write_file_atomic(win_out,
                                      "# " + stamp(g.seed.value_or(0), fnv1a(params)) + "\n" + encode_index_csv(d));
    }
  });

  // pretrain ---------------------------------------------------------------
  auto* pre_cmd = app.add_subcommand("pretrain", "Self-supervised forecasting pretraining for one subject");
  std::string pre_signal, pre_out, pre_report, pre_config;
  std::optional<std::size_t> pre_epochs, pre_batch;
  std::optional<double> pre_lr, pre_holdout;
  pre_cmd->add_option("--signal", pre_signal, "EDA1 file")->required();
  pre_cmd->add_option("--out", pre_out, "Checkpoint output path")->required();
  pre_cmd->add_option("--report", pre_report, "Report CSV (appended)")->required();
  pre_cmd->add_option("--config", pre_config, "Hyperparameter file (experiment config keys)");
  pre_cmd->add_option("--epochs", pre_epochs);
  pre_cmd->add_option("--lr", pre_lr);
  pre_cmd->add_option("--batch-size", pre_batch);
  pre_cmd->add_option("--holdout", pre_holdout, "Chronological holdout fraction");
  pre_cmd->callback([&] {
    auto pc = hyper(pre_config);
    auto c = pc.config.pretrain;
    if (pre_epochs) c.epochs = *pre_epochs;
    if (pre_lr) c.learning_rate = *pre_lr;
    if (pre_batch) c.batch_size = *pre_batch;
    if (pre_holdout) c.holdout_fraction = *pre_holdout;
    c.seed = pc.config.seed;
    c.on_epoch = logger("pretrain");
    const auto hp = describe(c);
    std::string canon = pc.canonical;
    for (const auto& [k, v] : hp) canon += "pretrain:" + k + "=" + v + "\n";
    const auto hash = fnv1a(canon);
    const auto rec = load_signal(pre_signal);
    auto r = pretrain(rec, c);
    r.checkpoint.provenance["tool"] = std::string(kToolName);
    r.checkpoint.provenance["tool_version"] = std::string(kToolVersion);
    r.checkpoint.provenance["seed"] = std::to_string(c.seed);
    r.checkpoint.provenance["config_hash"] = hex64(hash);
    nn::save_checkpoint(r.checkpoint, pre_out);
    auto body = encode_pretrain_reports({r.report});
    const auto header_end = body.find('\n') + 1;
    append_file(pre_report, "# " + stamp(c.seed, hash) + "\n" + body.substr(0, header_end), body.substr(header_end));
    out << "subject " << r.report.subject_id << " pretext_rmse " << format_double(r.report.pretext_rmse)
        << " (last-value baseline " << format_double(r.report.naive_rmse) << ")\n";
  });

  // finetune / baseline ----------------------------------------------------
  struct FitArgs {
    std::string pretext, signal, labels, results, config, model_out;
    int question = 1;
    std::size_t budget = 10, replica = 0;
    std::optional<std::size_t> epochs, batch, test_size;
    std::optional<double> lr;
  };
  FitArgs ft, bl;
  auto add_fit_options = [](CLI::App* cmd, FitArgs& a, bool need_pretext) {
    auto* p = cmd->add_option("--pretext", a.pretext, "Pretext checkpoint");
    if (need_pretext) p->required();
    cmd->add_option("--signal", a.signal, "EDA1 file")->required();
    cmd->add_option("--labels", a.labels, "Labels CSV")->required();
    cmd->add_option("--question", a.question, "STAI question 1..6")->check(CLI::Range(1, 6));
    cmd->add_option("--budget", a.budget, "Number of labeled training windows");
    cmd->add_option("--replica", a.replica, "Bootstrapped replica index");
    cmd->add_option("--results", a.results, "Results CSV (appended)")->required();
    cmd->add_option("--config", a.config, "Hyperparameter file (experiment config keys)");
    cmd->add_option("--model-out", a.model_out, "Write the trained downstream checkpoint");
    cmd->add_option("--epochs", a.epochs);
    cmd->add_option("--lr", a.lr);
    cmd->add_option("--batch-size", a.batch);
    cmd->add_option("--test-size", a.test_size);
  };
  auto run_fit = [&](const FitArgs& a, ModelKind kind) {
    auto pc = hyper(a.config);
    auto& ec = pc.config;
    if (a.epochs) ec.fit.epochs = *a.epochs;
    if (a.lr) ec.fit.learning_rate = *a.lr;
    if (a.batch) ec.fit.batch_size = *a.batch;
    if (a.test_size) ec.test_size = *a.test_size;
    std::optional<nn::Checkpoint> pretext;
    if (!a.pretext.empty()) pretext = nn::load_checkpoint(a.pretext);
    auto rec = load_signal(a.signal);
    const auto labels = load_labels(a.labels);
    const auto norm = pretext && pretext->normalization ? *pretext->normalization
                                                        : fit_pretrain_normalization(rec, ec.pretrain);
    rec = apply_normalization(rec, norm);
    const auto arch_spec = pretext ? pretext->spec : nn::pretext_spec(ec.pretrain.arch);
    const auto ds = build_downstream(rec, labels, a.question, arch_spec.input_shape.at(0), ec.stride);
    const auto cseed = cell_seed(ec.seed, rec.subject_id, a.question);
    const auto split = make_test_split(ds, ec.test_size, derive_seed(cseed, {0x74657374ULL}));
    const auto rseed = replica_seed(cseed, a.budget, a.replica);
    const auto subset = sample_budget(split.remainder, a.budget, derive_seed(rseed, {1}));
    auto model = kind == ModelKind::ssl_finetuned
                     ? build_finetune_model(*pretext, rseed, ec.pretrain.arch.head_dense, ec.pretrain.arch.alpha)
                     : build_scratch_model(arch_spec, rseed, ec.pretrain.arch.head_dense, ec.pretrain.arch.alpha);
    FitConfig fc = ec.fit;
    fc.seed = rseed;
    const auto r = fit(model, kind, subset, split.test, fc);
    if (!a.model_out.empty()) {
      auto m = r.model;
      m.normalization = norm;
      m.provenance["tool_version"] = std::string(kToolVersion);
      m.provenance["seed"] = std::to_string(ec.seed);
      m.provenance["config_hash"] = hex64(pc.hash);
      nn::save_checkpoint(m, a.model_out);
    }
    append_file(a.results, "# " + stamp(ec.seed, pc.hash) + "\n" + std::string(kResultsHeader) + "\n",
                encode_result_row(to_row(r, a.replica)));
    out << to_string(kind) << " subject " << r.subject_id << " question " << a.question << " budget " << r.budget
        << " train_rmse " << format_double(r.train_rmse) << " test_rmse " << format_double(r.test_rmse) << "\n";
  };
  auto* ft_cmd = app.add_subcommand("finetune", "Fine-tune a frozen pretext feature extractor on labeled windows");
  add_fit_options(ft_cmd, ft, true);
  ft_cmd->callback([&] { run_fit(ft, ModelKind::ssl_finetuned); });
  auto* bl_cmd = app.add_subcommand("baseline", "Train the same downstream architecture from scratch");
  add_fit_options(bl_cmd, bl, false);
  bl_cmd->callback([&] { run_fit(bl, ModelKind::supervised_scratch); });

  // experiment -------------------------------------------------------------
  auto* exp_cmd = app.add_subcommand("experiment", "Run the paired SSL vs. scratch comparison");
  std::string exp_config, exp_out;
  exp_cmd->add_option("--config", exp_config, "Experiment config file")->required();
  exp_cmd->add_option("--out", exp_out, "Output directory")->required();
  exp_cmd->callback([&] {
    auto pc = hyper(exp_config);
    auto& ec = pc.config;
    if (app.count("--jobs")) ec.jobs = g.jobs;
    ec.pretrain.on_epoch = logger("pretrain");
    const auto result = run_comparison(ec, [&](const std::string& m) {
      if (g.verbosity >= 1) err << m << "\n";
    });
    emit_report(result.rows, exp_out, stamp(ec.seed, pc.hash));
    out << result.rows.size() << " result rows written to " << exp_out << "\n";
    if (!result.rows.empty()) {
      for (auto b : ec.budgets) {
        try {
          out << "win_rate budget " << b << ": " << format_double(win_rate(result.rows, b)) << "\n";
        } catch (const ConsistencyError&) {
        }
      }
      if (ec.budgets.size() >= 2) {
        try {
          for (const auto& x : label_efficiency(result.rows, ec.budgets))
            out << "crossover " << x.subject << " q" << x.question << ": ratio " << format_double(x.ratio) << "\n";
        } catch (const Error&) {
        }
      }
    }
    for (const auto& f : result.failures)
      err << "failed: subject " << f.subject << " question " << f.question << ": " << f.message << "\n";
    if (!result.ok()) status = 1;
  });

  // report -----------------------------------------------------------------
  auto* rep_cmd = app.add_subcommand("report", "Recompute aggregates and plot data from a results CSV");
  std::string rep_results, rep_out;
  std::vector<std::size_t> rep_budgets;
  rep_cmd->add_option("--results", rep_results, "Results CSV")->required();
  rep_cmd->add_option("--out", rep_out, "Output directory")->required();
  rep_cmd->add_option("--budgets", rep_budgets, "Budgets for the label-efficiency table")->delimiter(',');
  rep_cmd->callback([&] {
    const auto text = edap::detail::read_file_bytes(rep_results);
    const auto rows = decode_results_csv(text);
    const auto parent = std::filesystem::path(rep_out);
    std::filesystem::create_directories(parent);
    // Carry the producing run's stamp (seed, config hash) forward.
    std::string st = text.starts_with("# ") ? text.substr(2, text.find('\n') - 2)
                                            : stamp(g.seed.value_or(0), fnv1a(text));
    st += " source=" + std::filesystem::path(rep_results).filename().string();
    edap::detail::write_file_atomic(parent / "aggregate.csv", encode_aggregate_csv(rows, st));
    edap::detail::write_file_atomic(parent / "plot_data.csv", encode_plot_csv(rows, st));
    if (!rows.empty()) out << "win_rate (all budgets): " << format_double(win_rate(rows)) << "\n";
    if (rep_budgets.size() >= 2)
      for (const auto& x : label_efficiency(rows, rep_budgets))
        out << "crossover " << x.subject << " q" << x.question << ": ratio " << format_double(x.ratio) << "\n";
  });

  // predict ----------------------------------------------------------------
  auto* pred_cmd = app.add_subcommand("predict", "Predict the stress score of one window");
  std::string pred_model, pred_signal;
  std::size_t pred_start = 0;
  pred_cmd->add_option("--model", pred_model, "Downstream checkpoint")->required();
  pred_cmd->add_option("--signal", pred_signal, "EDA1 file")->required();
  pred_cmd->add_option("--start", pred_start, "Window start index");
  pred_cmd->callback([&] {
    const auto model = nn::load_checkpoint(pred_model);
    auto rec = load_signal(pred_signal);
    if (model.normalization) rec = apply_normalization(rec, *model.normalization);
    const std::size_t w = model.spec.input_shape.at(0);
    if (pred_start + w > rec.samples.size()) throw ShapeError("window exceeds the signal");
    const auto p = predict_stress(model, std::span<const float>(rec.samples).subspan(pred_start, w));
    out << "raw " << format_double(p.raw) << " clamped " << format_double(p.clamped) << "\n";
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return status;
}

}  // namespace edap::cli
