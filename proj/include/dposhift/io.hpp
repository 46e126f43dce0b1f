#pragma once

// File formats: JSON-lines datasets, the run config, and the run/sweep
// directory artifacts (metrics.csv, eval_records.csv, summary.json,
// diagnostics.jsonl, gap_reports.jsonl, sweep_summary.csv).
//
// Doubles in text artifacts are printed with %.17g so identical runs produce
// byte-identical files and values round-trip exactly.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dposhift/core.hpp"
#include "dposhift/diagnostics.hpp"
#include "dposhift/experiment.hpp"

namespace dposhift::io {

using nlohmann::json;

inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline void ensure_dir(const std::string& path) {
  std::error_code ec;
  std::filesystem::create_directories(path, ec);
  if (ec) throw IoError("cannot create directory " + path + ": " + ec.message());
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open file: " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

inline void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open file for writing: " + path);
  os << content;
  if (!os) throw IoError("short write: " + path);
}

// ----- dataset ------------------------------------------------------------

inline std::string dataset_line(const PreferenceTriple& r) {
  const auto seq = [](const TokenSeq& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.ids.size(); ++i) {
      if (i) out += ",";
      out += std::to_string(s.ids[i]);
    }
    out += "]";
    return out;
  };
  return "{\"id\": " + std::to_string(r.id) + ", \"prompt\": " + seq(r.prompt) +
         ", \"chosen\": " + seq(r.chosen) + ", \"rejected\": " + seq(r.rejected) + "}";
}

inline void write_dataset(const std::string& path, const std::vector<PreferenceTriple>& records) {
  std::string out;
  for (const auto& r : records) {
    out += dataset_line(r);
    out += "\n";
  }
  write_text_file(path, out);
}

inline std::vector<PreferenceTriple> read_dataset(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open dataset: " + path);
  std::vector<PreferenceTriple> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw IoError(path + ":" + std::to_string(line_no) + ": bad JSON: " + e.what());
    }
    PreferenceTriple r;
    r.id = j.at("id").get<std::int64_t>();
    r.prompt.ids = j.at("prompt").get<std::vector<Token>>();
    r.chosen.ids = j.at("chosen").get<std::vector<Token>>();
    r.rejected.ids = j.at("rejected").get<std::vector<Token>>();
    records.push_back(std::move(r));
  }
  return records;
}

// ----- config ------------------------------------------------------------

inline ObjectiveKind objective_kind_from_string(const std::string& s) {
  if (s == "dpo") return ObjectiveKind::dpo;
  if (s == "dpo_shift") return ObjectiveKind::dpo_shift;
  if (s == "alpha_dpo") return ObjectiveKind::alpha_dpo;
  throw std::domain_error("unknown objective_kind: " + s);
}

inline std::string to_string(ObjectiveKind k) {
  switch (k) {
    case ObjectiveKind::dpo: return "dpo";
    case ObjectiveKind::dpo_shift: return "dpo_shift";
    case ObjectiveKind::alpha_dpo: return "alpha_dpo";
  }
  return "dpo";
}

inline ScheduleStrategy strategy_from_string(const std::string& s) {
  if (s == "fixed") return ScheduleStrategy::fixed;
  if (s == "linear_increase") return ScheduleStrategy::linear_increase;
  if (s == "linear_decrease") return ScheduleStrategy::linear_decrease;
  throw std::domain_error("unknown schedule strategy: " + s);
}

inline std::string to_string(ScheduleStrategy s) {
  switch (s) {
    case ScheduleStrategy::fixed: return "fixed";
    case ScheduleStrategy::linear_increase: return "linear_increase";
    case ScheduleStrategy::linear_decrease: return "linear_decrease";
  }
  return "fixed";
}

inline ScheduleSpec schedule_from_json(const json& j) {
  ScheduleSpec s;
  s.strategy = strategy_from_string(j.value("strategy", "fixed"));
  s.lambda_min = j.value("lambda_min", 1.0);
  s.lambda_max = j.value("lambda_max", std::max(1.0, s.lambda_min));
  s.horizon = j.value("horizon", std::int64_t{1});
  return s;
}

inline json schedule_to_json(const ScheduleSpec& s) {
  return {{"strategy", to_string(s.strategy)},
          {"lambda_min", s.lambda_min},
          {"lambda_max", s.lambda_max}};
}

inline RunConfig config_from_json(const json& j) {
  RunConfig cfg;
  cfg.seed = j.value("seed", std::uint64_t{1});

  if (j.contains("data")) {
    const json& d = j.at("data");
    cfg.train_path = d.value("train", cfg.train_path);
    cfg.test_path = d.value("test", cfg.test_path);
  }

  if (j.contains("policy")) {
    const json& p = j.at("policy");
    cfg.policy.backend = p.value("backend", cfg.policy.backend);
    cfg.policy.vocab_size = p.value("vocab_size", cfg.policy.vocab_size);
    cfg.policy.context_order = p.value("context_order", cfg.policy.context_order);
    cfg.policy.feature_dim = p.value("feature_dim", cfg.policy.feature_dim);
    cfg.policy.prompt_buckets = p.value("prompt_buckets", cfg.policy.prompt_buckets);
  }

  if (j.contains("objective")) {
    const json& o = j.at("objective");
    cfg.objective.kind = objective_kind_from_string(o.value("objective_kind", "dpo_shift"));
    cfg.objective.beta = o.value("beta", cfg.objective.beta);
    cfg.objective.alpha = o.value("alpha", cfg.objective.alpha);
    if (o.contains("schedule")) cfg.schedule = schedule_from_json(o.at("schedule"));
  }
  if (j.contains("schedule")) cfg.schedule = schedule_from_json(j.at("schedule"));

  if (j.contains("optimizer")) {
    const json& o = j.at("optimizer");
    const std::string kind = o.value("kind", "adam");
    if (kind == "sgd") {
      cfg.optimizer_kind = OptimizerKind::sgd;
    } else if (kind == "adam") {
      cfg.optimizer_kind = OptimizerKind::adam;
    } else {
      throw std::domain_error("unknown optimizer kind: " + kind);
    }
    cfg.adam_beta1 = o.value("beta1", cfg.adam_beta1);
    cfg.adam_beta2 = o.value("beta2", cfg.adam_beta2);
    cfg.adam_eps = o.value("eps", cfg.adam_eps);
  }

  const auto stage_kind = [](const json& s) -> std::optional<OptimizerKind> {
    if (!s.contains("optimizer")) return std::nullopt;
    const std::string kind = s.at("optimizer").get<std::string>();
    if (kind == "sgd") return OptimizerKind::sgd;
    if (kind == "adam") return OptimizerKind::adam;
    throw std::domain_error("unknown stage optimizer: " + kind);
  };
  if (j.contains("sft")) {
    cfg.sft.epochs = j.at("sft").value("epochs", cfg.sft.epochs);
    cfg.sft.lr = j.at("sft").value("lr", cfg.sft.lr);
    cfg.sft.optimizer = stage_kind(j.at("sft"));
  }
  if (j.contains("po")) {
    cfg.po.epochs = j.at("po").value("epochs", cfg.po.epochs);
    cfg.po.lr = j.at("po").value("lr", cfg.po.lr);
    cfg.po.optimizer = stage_kind(j.at("po"));
  }

  cfg.batch_size = j.value("batch_size", cfg.batch_size);
  cfg.eval_interval = j.value("eval_interval", cfg.eval_interval);
  cfg.gamma = j.value("gamma", cfg.gamma);
  cfg.collapse_bound_factor = j.value("collapse_bound_factor", cfg.collapse_bound_factor);
  cfg.out_dir = j.value("out_dir", cfg.out_dir);
  cfg.ref_checkpoint = j.value("ref_checkpoint", cfg.ref_checkpoint);

  if (j.contains("diagnostics")) {
    const json& d = j.at("diagnostics");
    cfg.diagnose.f_grid = d.value("f_grid", cfg.diagnose.f_grid);
    cfg.diagnose.eta_grid = d.value("eta_grid", cfg.diagnose.eta_grid);
    cfg.diagnose.beta = d.value("beta", cfg.diagnose.beta);
    cfg.diagnose.gamma = d.value("gamma", cfg.diagnose.gamma);
    cfg.diagnose.eta_records = d.value("eta", cfg.diagnose.eta_records);
    cfg.diagnose.split = d.value("split", cfg.diagnose.split);
    cfg.diagnose.checkpoint = d.value("checkpoint", cfg.diagnose.checkpoint);
  }

  if (j.contains("corpus")) {
    const json& c = j.at("corpus");
    cfg.corpus.vocab_size = c.value("vocab_size", cfg.corpus.vocab_size);
    cfg.corpus.num_prompts = c.value("num_prompts", cfg.corpus.num_prompts);
    cfg.corpus.prompt_len = c.value("prompt_len", cfg.corpus.prompt_len);
    cfg.corpus.pairs_per_prompt = c.value("pairs_per_prompt", cfg.corpus.pairs_per_prompt);
    cfg.corpus.response_len = c.value("response_len", cfg.corpus.response_len);
    cfg.corpus.similarity = c.value("similarity", cfg.corpus.similarity);
    cfg.corpus.seed = c.value("seed", cfg.seed);  // default to the top-level seed
    cfg.train_records = c.value("train_records", cfg.train_records);
    cfg.test_records = c.value("test_records", cfg.test_records);
  } else {
    cfg.corpus.seed = cfg.seed;
  }

  if (j.contains("sweep")) {
    const json& s = j.at("sweep");
    cfg.sweep_cfg.f_values = s.value("f_values", cfg.sweep_cfg.f_values);
    if (s.contains("variants")) {
      cfg.sweep_cfg.variants.clear();
      for (const auto& v : s.at("variants"))
        cfg.sweep_cfg.variants.push_back(schedule_from_json(v));
    }
  }
  return cfg;
}

inline json config_to_json(const RunConfig& cfg) {
  json j;
  j["seed"] = cfg.seed;
  j["data"] = {{"train", cfg.train_path}, {"test", cfg.test_path}};
  j["policy"] = {{"backend", cfg.policy.backend},
                 {"vocab_size", cfg.policy.vocab_size},
                 {"context_order", cfg.policy.context_order},
                 {"feature_dim", cfg.policy.feature_dim},
                 {"prompt_buckets", cfg.policy.prompt_buckets}};
  j["objective"] = {{"objective_kind", to_string(cfg.objective.kind)},
                    {"beta", cfg.objective.beta},
                    {"alpha", cfg.objective.alpha}};
  j["schedule"] = schedule_to_json(cfg.schedule);
  j["optimizer"] = {{"kind", cfg.optimizer_kind == OptimizerKind::sgd ? "sgd" : "adam"},
                    {"beta1", cfg.adam_beta1},
                    {"beta2", cfg.adam_beta2},
                    {"eps", cfg.adam_eps}};
  const auto stage_json = [](const StageConfig& s) {
    json out = {{"epochs", s.epochs}, {"lr", s.lr}};
    if (s.optimizer)
      out["optimizer"] = *s.optimizer == OptimizerKind::sgd ? "sgd" : "adam";
    return out;
  };
  j["sft"] = stage_json(cfg.sft);
  j["po"] = stage_json(cfg.po);
  j["batch_size"] = cfg.batch_size;
  j["eval_interval"] = cfg.eval_interval;
  j["gamma"] = cfg.gamma;
  j["collapse_bound_factor"] = cfg.collapse_bound_factor;
  j["out_dir"] = cfg.out_dir;
  j["ref_checkpoint"] = cfg.ref_checkpoint;
  j["diagnostics"] = {{"f_grid", cfg.diagnose.f_grid},
                      {"eta_grid", cfg.diagnose.eta_grid},
                      {"beta", cfg.diagnose.beta},
                      {"gamma", cfg.diagnose.gamma},
                      {"eta", cfg.diagnose.eta_records},
                      {"split", cfg.diagnose.split},
                      {"checkpoint", cfg.diagnose.checkpoint}};
  j["corpus"] = {{"vocab_size", cfg.corpus.vocab_size},
                 {"num_prompts", cfg.corpus.num_prompts},
                 {"prompt_len", cfg.corpus.prompt_len},
                 {"pairs_per_prompt", cfg.corpus.pairs_per_prompt},
                 {"response_len", cfg.corpus.response_len},
                 {"similarity", cfg.corpus.similarity},
                 {"seed", cfg.corpus.seed},
                 {"train_records", cfg.train_records},
                 {"test_records", cfg.test_records}};
  json variants = json::array();
  for (const auto& v : cfg.sweep_cfg.variants) variants.push_back(schedule_to_json(v));
  j["sweep"] = {{"f_values", cfg.sweep_cfg.f_values}, {"variants", variants}};
  return j;
}

inline RunConfig load_config(const std::string& path) {
  json j;
  try {
    j = json::parse(read_text_file(path));
  } catch (const json::exception& e) {
    throw IoError("bad config JSON in " + path + ": " + e.what());
  }
  return config_from_json(j);
}

// ----- artifacts ------------------------------------------------------------

inline void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows) {
  std::string out = "step,loss,f_value,mean_margin\n";
  for (const auto& r : rows)
    out += std::to_string(r.step) + "," + fmt_double(r.loss) + "," + fmt_double(r.f_value) +
           "," + fmt_double(r.mean_margin) + "\n";
  write_text_file(path, out);
}

inline void write_sft_metrics_csv(const std::string& path,
                                  const std::vector<std::pair<std::int64_t, double>>& rows) {
  std::string out = "step,loss\n";
  for (const auto& [step, loss] : rows)
    out += std::to_string(step) + "," + fmt_double(loss) + "\n";
  write_text_file(path, out);
}

inline void write_eval_csv(const std::string& path, const std::vector<EvalRow>& rows) {
  std::string out = "id,logp_w,logp_l,margin\n";
  for (const auto& r : rows)
    out += std::to_string(r.id) + "," + fmt_double(r.logp_w) + "," + fmt_double(r.logp_l) +
           "," + fmt_double(r.margin) + "\n";
  write_text_file(path, out);
}

inline json summary_to_json(const EvalSummary& s) {
  return {{"omega1", s.omega1},
          {"omega2_hard", s.omega2_hard},
          {"omega2_smooth", s.omega2_smooth},
          {"reward_accuracy", s.reward_accuracy},
          {"mean_margin", s.mean_margin},
          {"perplexity", s.perplexity}};
}

inline void write_summary_json(const std::string& path, const EvalSummary& s) {
  write_text_file(path, summary_to_json(s).dump(2) + "\n");
}

inline void write_eval_history_csv(const std::string& path,
                                   const std::vector<EvalHistoryRow>& rows) {
  std::string out =
      "step,omega1,omega2_hard,omega2_smooth,reward_accuracy,mean_margin,perplexity\n";
  for (const auto& r : rows)
    out += std::to_string(r.step) + "," + fmt_double(r.summary.omega1) + "," +
           fmt_double(r.summary.omega2_hard) + "," + fmt_double(r.summary.omega2_smooth) +
           "," + fmt_double(r.summary.reward_accuracy) + "," +
           fmt_double(r.summary.mean_margin) + "," + fmt_double(r.summary.perplexity) + "\n";
  write_text_file(path, out);
}

inline std::string diagnostics_line(const DiagnosticsRecord& r) {
  return "{\"id\": " + std::to_string(r.id) + ", \"c_theta\": " + fmt_double(r.c_theta) +
         ", \"eta1\": " + fmt_double(r.eta1) + ", \"dot_wl\": " + fmt_double(r.dot_wl) +
         ", \"norm_l_sq\": " + fmt_double(r.norm_l_sq) +
         ", \"norm_w_sq\": " + fmt_double(r.norm_w_sq) + ", \"u1\": " + fmt_double(r.u1) +
         ", \"u2\": " + fmt_double(r.u2) + "}";
}

inline void write_diagnostics_jsonl(const std::string& path,
                                    const std::vector<DiagnosticsRecord>& records) {
  std::string out;
  for (const auto& r : records) {
    out += diagnostics_line(r);
    out += "\n";
  }
  write_text_file(path, out);
}

inline std::string gap_report_line(const GapReport& g) {
  return "{\"f\": " + fmt_double(g.f) + ", \"eta\": " + fmt_double(g.eta) +
         ", \"g1_measured\": " + fmt_double(g.g1_measured) +
         ", \"g1_predicted\": " + fmt_double(g.g1_predicted) +
         ", \"residual1\": " + fmt_double(g.residual1) +
         ", \"g2_measured\": " + fmt_double(g.g2_measured) +
         ", \"g2_predicted\": " + fmt_double(g.g2_predicted) +
         ", \"residual2\": " + fmt_double(g.residual2) +
         ", \"u1_mean\": " + fmt_double(g.u1_mean) +
         ", \"u2_mean\": " + fmt_double(g.u2_mean) + "}";
}

inline void write_gap_reports_jsonl(const std::string& path,
                                    const std::vector<GapReport>& reports) {
  std::string out;
  for (const auto& g : reports) {
    out += gap_report_line(g);
    out += "\n";
  }
  write_text_file(path, out);
}

inline void write_sweep_summary_csv(const std::string& path, const SweepReport& report) {
  std::string out = "f,omega1,reward_accuracy,mean_margin,perplexity\n";
  for (const auto& e : report.entries) {
    if (!e.ok) continue;
    out += fmt_double(e.f) + "," + fmt_double(e.summary.omega1) + "," +
           fmt_double(e.summary.reward_accuracy) + "," + fmt_double(e.summary.mean_margin) +
           "," + fmt_double(e.summary.perplexity) + "\n";
  }
  write_text_file(path, out);
}

// Everything train_po produced, in the documented run directory layout.
inline void write_run_dir(const std::string& dir, const RunConfig& cfg,
                          const RunArtifacts& art) {
  ensure_dir(dir);
  ensure_dir(dir + "/checkpoints");
  write_text_file(dir + "/config.json", config_to_json(cfg).dump(2) + "\n");
  write_metrics_csv(dir + "/metrics.csv", art.metrics);
  write_eval_csv(dir + "/eval_records.csv", art.final_eval.rows);
  write_summary_json(dir + "/summary.json", art.final_eval.summary);
  write_eval_history_csv(dir + "/eval_history.csv", art.eval_history);
  write_diagnostics_jsonl(dir + "/diagnostics.jsonl", art.diagnostics);
  if (art.final_policy) save_checkpoint(*art.final_policy, dir + "/checkpoints/final.ckpt");
}

}  // namespace dposhift::io
