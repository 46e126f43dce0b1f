// Command-line surface: gen-data, train-sft, train-po, diagnose, sweep,
// report. One command per process; every run directory is reconstructible
// from its persisted config.json.
//
// Exit codes: 0 success, 2 usage/config, 3 I/O, 4 numeric or policy collapse.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "dposhift/core.hpp"
#include "dposhift/datagen.hpp"
#include "dposhift/diagnostics.hpp"
#include "dposhift/experiment.hpp"
#include "dposhift/histogram.hpp"
#include "dposhift/io.hpp"
#include "dposhift/objectives.hpp"
#include "dposhift/policy.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace dposhift;

namespace {

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> sets;
  std::string out_dir;
  std::optional<std::int64_t> seed;
  std::optional<double> f;
  std::string eta_grid;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool with_eta_grid = false) {
  cmd->add_option("--config", args.config_path, "run config JSON")->required();
  cmd->add_option("--set", args.sets, "dotted-path config override, key=value (repeatable)");
  cmd->add_option("--out", args.out_dir, "output directory (overrides out_dir)");
  cmd->add_option("--seed", args.seed, "top-level seed override");
  cmd->add_option("--f", args.f, "fixed-strategy shortcut for schedule.lambda_min");
  if (with_eta_grid)
    cmd->add_option("--eta-grid", args.eta_grid, "comma-separated eta values for diagnose");
}

json parse_override_value(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::exception&) {
    return json(text);  // plain string
  }
}

void apply_set(json& root, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos)
    throw std::domain_error("--set expects key=value, got: " + assignment);
  const std::string path = assignment.substr(0, eq);
  const json value = parse_override_value(assignment.substr(eq + 1));

  json* node = &root;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? dot : dot - start);
    if (key.empty()) throw std::domain_error("--set: empty key segment in " + path);
    if (dot == std::string::npos) {
      (*node)[key] = value;
      break;
    }
    node = &(*node)[key];
    start = dot + 1;
  }
}

std::vector<double> parse_grid(const std::string& text) {
  std::vector<double> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto comma = text.find(',', start);
    const std::string item =
        text.substr(start, comma == std::string::npos ? comma : comma - start);
    if (!item.empty()) out.push_back(std::stod(item));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  if (out.empty()) throw std::domain_error("--eta-grid: no values parsed");
  return out;
}

RunConfig resolve_config(const CommonArgs& args, bool diagnose_verb = false) {
  json j;
  try {
    j = json::parse(io::read_text_file(args.config_path));
  } catch (const json::exception& e) {
    throw std::domain_error("bad config JSON in " + args.config_path + ": " + e.what());
  }
  for (const auto& s : args.sets) apply_set(j, s);

  RunConfig cfg = io::config_from_json(j);
  if (args.seed) {
    cfg.seed = static_cast<std::uint64_t>(*args.seed);
    cfg.corpus.seed = cfg.seed;
  }
  if (!args.out_dir.empty()) cfg.out_dir = args.out_dir;
  if (args.f) {
    cfg.schedule.strategy = ScheduleStrategy::fixed;
    cfg.schedule.lambda_min = *args.f;
    cfg.schedule.lambda_max = std::max(1.0, *args.f);
    if (diagnose_verb) cfg.diagnose.f_grid = {*args.f};
  }
  if (!args.eta_grid.empty()) cfg.diagnose.eta_grid = parse_grid(args.eta_grid);
  return cfg;
}

std::vector<PreferenceTriple> load_validated(const std::string& path, std::size_t vocab) {
  auto records = io::read_dataset(path);
  const auto report = validate_dataset(records, vocab);
  if (!report.passed())
    throw std::domain_error(path + ": dataset fails validation (" +
                            std::to_string(report.oov_count) + " oov, " +
                            std::to_string(report.empty_response_count) +
                            " empty responses)");
  return records;
}

FrozenPolicy load_reference(const RunConfig& cfg) {
  if (cfg.ref_checkpoint.empty())
    throw std::domain_error("config is missing ref_checkpoint");
  const auto ref_policy = load_checkpoint(cfg.ref_checkpoint);
  return FrozenPolicy(*ref_policy);
}

// ----- verbs ----------------------------------------------------------

int cmd_gen_data(const CommonArgs& args) {
  RunConfig cfg = resolve_config(args);
  cfg.corpus.validate();
  const std::size_t need = cfg.train_records + cfg.test_records;
  if (cfg.corpus.total_records() < need)
    throw std::domain_error("corpus spec yields " +
                            std::to_string(cfg.corpus.total_records()) +
                            " records, need " + std::to_string(need));

  auto records = generate_corpus(cfg.corpus);
  const std::vector<PreferenceTriple> train(records.begin(),
                                            records.begin() + cfg.train_records);
  const std::vector<PreferenceTriple> test(records.end() - cfg.test_records, records.end());

  const std::string dir = cfg.out_dir.empty() ? "data" : cfg.out_dir;
  io::ensure_dir(dir);
  io::write_dataset(dir + "/train.jsonl", train);
  io::write_dataset(dir + "/test.jsonl", test);

  const auto report = validate_dataset(records, cfg.corpus.vocab_size);
  json spec_json = io::config_to_json(cfg)["corpus"];
  spec_json["measured_similarity"] = corpus_similarity(records);
  spec_json["validation_passed"] = report.passed();
  io::write_text_file(dir + "/corpus_spec.json", spec_json.dump(2) + "\n");

  std::printf("wrote %zu train / %zu test records to %s (similarity %.4f)\n",
              train.size(), test.size(), dir.c_str(), corpus_similarity(records));
  return 0;
}

int cmd_train_sft(const CommonArgs& args) {
  RunConfig cfg = resolve_config(args);
  const auto corpus = load_validated(cfg.train_path, cfg.policy.vocab_size);

  auto result = train_sft(cfg, corpus);

  const std::string dir = cfg.out_dir;
  io::ensure_dir(dir);
  io::ensure_dir(dir + "/checkpoints");
  io::write_text_file(dir + "/config.json", io::config_to_json(cfg).dump(2) + "\n");
  io::write_sft_metrics_csv(dir + "/sft_metrics.csv", result.loss_curve);
  save_checkpoint(*result.policy, dir + "/checkpoints/sft.ckpt");

  std::printf("SFT done: %zu steps, final loss %.6f; checkpoint %s/checkpoints/sft.ckpt\n",
              result.loss_curve.size(),
              result.loss_curve.empty() ? 0.0 : result.loss_curve.back().second,
              dir.c_str());
  return 0;
}

int cmd_train_po(const CommonArgs& args) {
  RunConfig cfg = resolve_config(args);
  const auto train = load_validated(cfg.train_path, cfg.policy.vocab_size);
  const auto test = load_validated(cfg.test_path, cfg.policy.vocab_size);
  const FrozenPolicy ref = load_reference(cfg);

  const RunArtifacts art = train_po(cfg, train, test, ref);
  io::write_run_dir(cfg.out_dir, cfg, art);

  const auto& s = art.final_eval.summary;
  std::printf("PO done: %zu steps; omega1 %.6f, reward_accuracy %.4f, "
              "mean_margin %.6f, perplexity %.4f\n",
              art.metrics.size(), s.omega1, s.reward_accuracy, s.mean_margin, s.perplexity);
  std::printf("run directory: %s\n", cfg.out_dir.c_str());
  return 0;
}

int cmd_diagnose(const CommonArgs& args) {
  RunConfig cfg = resolve_config(args, /*diagnose_verb=*/true);
  const FrozenPolicy ref = load_reference(cfg);
  const std::unique_ptr<Policy> policy = cfg.diagnose.checkpoint.empty()
                                             ? ref.get().clone()
                                             : load_checkpoint(cfg.diagnose.checkpoint);

  const std::string data_path =
      cfg.diagnose.split == "train" ? cfg.train_path : cfg.test_path;
  const auto records = load_validated(data_path, cfg.policy.vocab_size);

  const DiagnoseConfig& d = cfg.diagnose;
  if (d.f_grid.empty() || d.eta_grid.empty())
    throw std::domain_error("diagnose: f_grid and eta_grid must be non-empty");

  std::vector<DiagnosticsRecord> diag;
  diag.reserve(records.size());
  for (const auto& r : records)
    diag.push_back(sample_diagnostics(r, *policy, ref, d.f_grid.front(), d.gamma,
                                      d.eta_records));
  const SignStatistics stats = sign_statistics(diag);

  std::vector<GapReport> reports;
  for (double f : d.f_grid)
    for (double eta : d.eta_grid)
      reports.push_back(measure_gaps(*policy, ref, records, d.beta, f, d.gamma, eta));

  const std::string dir = cfg.out_dir;
  io::ensure_dir(dir);
  io::write_text_file(dir + "/config.json", io::config_to_json(cfg).dump(2) + "\n");
  io::write_diagnostics_jsonl(dir + "/diagnostics.jsonl", diag);
  io::write_gap_reports_jsonl(dir + "/gap_reports.jsonl", reports);

  json summary;
  summary["records"] = diag.size();
  summary["frac_u1_positive"] = stats.frac_u1_positive;
  summary["frac_u2_negative"] = stats.frac_u2_negative;
  summary["mean_u1"] = stats.mean_u1;
  summary["mean_u2"] = stats.mean_u2;

  std::printf("sign statistics over %zu records: frac(u1>0)=%.4f  frac(u2<0)=%.4f  "
              "mean u1=%.6g  mean u2=%.6g\n",
              diag.size(), stats.frac_u1_positive, stats.frac_u2_negative, stats.mean_u1,
              stats.mean_u2);
  std::printf("%8s %10s %14s %14s %14s %14s\n", "f", "eta", "g1_measured", "residual1",
              "g2_measured", "residual2");
  json slopes = json::array();
  for (double f : d.f_grid) {
    std::vector<double> etas, r1, r2;
    for (const auto& g : reports) {
      if (g.f != f) continue;
      std::printf("%8.4g %10.2e %14.6e %14.6e %14.6e %14.6e\n", g.f, g.eta, g.g1_measured,
                  g.residual1, g.g2_measured, g.residual2);
      etas.push_back(g.eta);
      r1.push_back(g.residual1);
      r2.push_back(g.residual2);
    }
    if (etas.size() >= 2) {
      const double s1 = loglog_slope(etas, r1);
      const double s2 = loglog_slope(etas, r2);
      std::printf("  f=%.4g residual slopes vs eta: g1 %.3f, g2 %.3f\n", f, s1, s2);
      slopes.push_back({{"f", f}, {"slope_residual1", s1}, {"slope_residual2", s2}});
    }
  }
  summary["residual_slopes"] = slopes;
  io::write_text_file(dir + "/diag_summary.json", summary.dump(2) + "\n");
  std::printf("diagnostics directory: %s\n", dir.c_str());
  return 0;
}

int cmd_sweep(const CommonArgs& args) {
  RunConfig cfg = resolve_config(args);
  const auto train = load_validated(cfg.train_path, cfg.policy.vocab_size);
  const auto test = load_validated(cfg.test_path, cfg.policy.vocab_size);
  const FrozenPolicy ref = load_reference(cfg);

  const SweepReport report = sweep(cfg, train, test, ref);

  io::ensure_dir(cfg.out_dir);
  io::write_text_file(cfg.out_dir + "/config.json", io::config_to_json(cfg).dump(2) + "\n");
  for (const auto& e : report.entries) {
    if (!e.ok) {
      std::fprintf(stderr, "run %s failed: %s\n", e.label.c_str(), e.error.c_str());
      continue;
    }
    RunConfig run_cfg = cfg;
    run_cfg.objective.kind = ObjectiveKind::dpo_shift;
    run_cfg.schedule = e.schedule;
    run_cfg.out_dir = cfg.out_dir + "/" + e.label;
    io::write_run_dir(run_cfg.out_dir, run_cfg, *e.artifacts);
  }
  io::write_sweep_summary_csv(cfg.out_dir + "/sweep_summary.csv", report);

  std::printf("%-22s %10s %12s %14s %12s\n", "setting", "omega1", "accuracy",
              "mean_margin", "perplexity");
  for (const auto& e : report.entries) {
    if (!e.ok) continue;
    std::printf("%-22s %10.4f %12.4f %14.6f %12.4f\n", e.label.c_str(), e.summary.omega1,
                e.summary.reward_accuracy, e.summary.mean_margin, e.summary.perplexity);
  }
  std::printf("sweep directory: %s\n", cfg.out_dir.c_str());
  return 0;
}

// ----- report ---------------------------------------------------------

std::vector<std::vector<double>> read_csv_columns(const std::string& path,
                                                  std::size_t n_cols) {
  const std::string text = io::read_text_file(path);
  std::vector<std::vector<double>> cols(n_cols);
  std::size_t pos = text.find('\n');  // skip header
  if (pos == std::string::npos) return cols;
  ++pos;
  while (pos < text.size()) {
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string::npos) eol = text.size();
    std::string line = text.substr(pos, eol - pos);
    pos = eol + 1;
    if (line.empty()) continue;
    std::size_t start = 0;
    for (std::size_t c = 0; c < n_cols; ++c) {
      std::size_t comma = line.find(',', start);
      if (comma == std::string::npos) comma = line.size();
      cols[c].push_back(std::stod(line.substr(start, comma - start)));
      start = comma + 1;
    }
  }
  return cols;
}

void report_histogram(const std::string& label, const std::vector<double>& values,
                      std::size_t bins) {
  if (values.empty()) {
    std::printf("# %s: no values\n", label.c_str());
    return;
  }
  double lo = values[0], hi = values[0];
  for (double v : values) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (lo == hi) {
    lo -= 0.5;
    hi += 0.5;
  }
  const Histogram h = emit_histogram(values, bins, lo, hi);
  std::fputs(render_histogram(h, label).c_str(), stdout);
}

void report_corpus_files(const std::vector<std::string>& paths) {
  std::vector<PreferenceTriple> all;
  for (const auto& p : paths) {
    auto records = io::read_dataset(p);
    std::printf("%s: %zu records\n", p.c_str(), records.size());
    all.insert(all.end(), records.begin(), records.end());
  }
  if (all.empty()) {
    std::printf("no records\n");
    return;
  }
  std::printf("total records: %zu\n", all.size());
  std::printf("corpus_similarity: %.17g\n", corpus_similarity(all));
}

int cmd_report(const std::string& target, std::size_t bins) {
  const fs::path p(target);
  if (!fs::exists(p)) throw IoError("no such path: " + target);

  if (fs::is_regular_file(p)) {
    report_corpus_files({target});
    return 0;
  }

  if (fs::exists(p / "sweep_summary.csv")) {
    std::printf("sweep summary (%s)\n", target.c_str());
    std::fputs(io::read_text_file((p / "sweep_summary.csv").string()).c_str(), stdout);
    return 0;
  }

  if (fs::exists(p / "summary.json")) {
    std::printf("run summary (%s)\n", target.c_str());
    std::fputs(io::read_text_file((p / "summary.json").string()).c_str(), stdout);
    const auto cols = read_csv_columns((p / "eval_records.csv").string(), 4);
    report_histogram("logp_w", cols[1], bins);
    report_histogram("logp_l", cols[2], bins);
    report_histogram("margin", cols[3], bins);
    return 0;
  }

  if (fs::exists(p / "corpus_spec.json")) {
    std::fputs(io::read_text_file((p / "corpus_spec.json").string()).c_str(), stdout);
    std::vector<std::string> files;
    if (fs::exists(p / "train.jsonl")) files.push_back((p / "train.jsonl").string());
    if (fs::exists(p / "test.jsonl")) files.push_back((p / "test.jsonl").string());
    report_corpus_files(files);
    return 0;
  }

  throw IoError("unrecognized report target (no summary.json, sweep_summary.csv, "
                "corpus_spec.json, or .jsonl file): " + target);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"desk-scale DPO / DPO-Shift preference-optimization laboratory"};
  app.require_subcommand(1);

  CommonArgs gen_args, sft_args, po_args, diag_args, sweep_args;
  std::string report_target;
  std::size_t report_bins = 20;

  add_common(app.add_subcommand("gen-data", "generate a synthetic preference corpus"),
             gen_args);
  add_common(app.add_subcommand("train-sft", "supervised fine-tuning on chosen responses"),
             sft_args);
  add_common(app.add_subcommand("train-po", "preference optimization from an SFT reference"),
             po_args);
  add_common(app.add_subcommand("diagnose",
                                "per-sample diagnostics and one-step gap reports"),
             diag_args, /*with_eta_grid=*/true);
  add_common(app.add_subcommand("sweep", "fixed-f and schedule ablation sweep"), sweep_args);

  CLI::App* report_cmd = app.add_subcommand("report", "summarize a run/sweep/corpus directory");
  report_cmd->add_option("--dir", report_target, "run, sweep, or corpus directory (or .jsonl)")
      ->required();
  report_cmd->add_option("--bins", report_bins, "histogram bin count");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (app.got_subcommand("gen-data")) return cmd_gen_data(gen_args);
    if (app.got_subcommand("train-sft")) return cmd_train_sft(sft_args);
    if (app.got_subcommand("train-po")) return cmd_train_po(po_args);
    if (app.got_subcommand("diagnose")) return cmd_diagnose(diag_args);
    if (app.got_subcommand("sweep")) return cmd_sweep(sweep_args);
    if (app.got_subcommand("report")) return cmd_report(report_target, report_bins);
  } catch (const IoError& e) {
    std::fprintf(stderr, "I/O error: %s\n", e.what());
    return 3;
  } catch (const CollapseError& e) {
    std::fprintf(stderr, "collapse: %s\n", e.what());
    return 4;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return 4;
  } catch (const std::domain_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 2;
}
