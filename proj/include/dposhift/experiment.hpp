#pragma once

// Training loops and evaluation: SFT (maximum likelihood on chosen
// responses), preference optimization under the configured objective and
// f(lambda) schedule, per-record test metrics, and fixed-f ablation sweeps.
//
// Everything is sequential and accumulates in record order, so identical
// configs reproduce identical artifacts bit for bit.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdint>
#include <memory>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dposhift/core.hpp"
#include "dposhift/datagen.hpp"
#include "dposhift/diagnostics.hpp"
#include "dposhift/objectives.hpp"
#include "dposhift/policy.hpp"

namespace dposhift {

enum class OptimizerKind { sgd, adam };

struct OptimizerHyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct OptimizerState {
  OptimizerKind kind = OptimizerKind::sgd;
  OptimizerHyper hyper;
  std::vector<double> m;
  std::vector<double> v;
  std::int64_t step = 0;
};

inline OptimizerState make_optimizer(OptimizerKind kind, OptimizerHyper hyper,
                                     std::size_t dim) {
  if (!(hyper.lr > 0.0)) throw std::domain_error("optimizer: learning rate must be > 0");
  OptimizerState st;
  st.kind = kind;
  st.hyper = hyper;
  if (kind == OptimizerKind::adam) {
    st.m.assign(dim, 0.0);
    st.v.assign(dim, 0.0);
  }
  return st;
}

inline void optimizer_step(OptimizerState& st, std::span<const double> grad,
                           std::span<double> theta) {
  for (double g : grad)
    if (!std::isfinite(g)) throw NumericError("optimizer_step: non-finite gradient");

  if (st.kind == OptimizerKind::sgd) {
    for (std::size_t i = 0; i < theta.size(); ++i) theta[i] -= st.hyper.lr * grad[i];
    return;
  }

  ++st.step;
  const double b1 = st.hyper.beta1;
  const double b2 = st.hyper.beta2;
  const double corr1 = 1.0 - std::pow(b1, static_cast<double>(st.step));
  const double corr2 = 1.0 - std::pow(b2, static_cast<double>(st.step));
  for (std::size_t i = 0; i < theta.size(); ++i) {
    st.m[i] = b1 * st.m[i] + (1.0 - b1) * grad[i];
    st.v[i] = b2 * st.v[i] + (1.0 - b2) * grad[i] * grad[i];
    const double m_hat = st.m[i] / corr1;
    const double v_hat = st.v[i] / corr2;
    theta[i] -= st.hyper.lr * m_hat / (std::sqrt(v_hat) + st.hyper.eps);
  }
}

// ----- configuration ----------------------------------------------------

struct PolicyConfig {
  std::string backend = "loglinear";  // or "tabular"
  std::size_t vocab_size = 64;
  int context_order = 1;
  std::size_t feature_dim = 256;    // loglinear
  std::uint32_t prompt_buckets = 1; // tabular
};

inline std::unique_ptr<Policy> make_policy(const PolicyConfig& cfg) {
  if (cfg.backend == "tabular")
    return std::make_unique<TabularPolicy>(cfg.vocab_size, cfg.context_order,
                                           cfg.prompt_buckets);
  if (cfg.backend == "loglinear")
    return std::make_unique<LogLinearPolicy>(cfg.vocab_size, cfg.feature_dim,
                                             cfg.context_order);
  throw std::domain_error("unknown policy backend: " + cfg.backend);
}

struct StageConfig {
  std::size_t epochs = 1;
  double lr = 1e-4;
  std::optional<OptimizerKind> optimizer;  // defaults to the run-level kind
};

struct DiagnoseConfig {
  std::vector<double> f_grid{0.55, 0.75, 0.95};
  std::vector<double> eta_grid{1e-2, 1e-3, 1e-4};
  double beta = 1.0;   // one-step objective temperature; keep equal to gamma
  double gamma = 1.0;  // target smoothing
  double eta_records = 1.0;  // eta used inside emitted DiagnosticsRecords
  std::string split = "test";
  std::string checkpoint;  // policy to diagnose; empty means the reference
};

struct SweepConfig {
  std::vector<double> f_values{0.55, 0.75, 0.9, 0.95, 1.0};
  std::vector<ScheduleSpec> variants;
};

struct RunConfig {
  std::uint64_t seed = 1;
  std::string train_path = "data/train.jsonl";
  std::string test_path = "data/test.jsonl";
  PolicyConfig policy;
  ObjectiveConfig objective;
  ScheduleSpec schedule;
  OptimizerKind optimizer_kind = OptimizerKind::adam;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  StageConfig sft{3, 1e-3};
  StageConfig po{1, 1e-4};
  std::size_t batch_size = 32;
  std::int64_t eval_interval = 10;
  double gamma = 1.0;                   // evaluation smoothing
  double collapse_bound_factor = 2.0;   // abort when mean token logprob < -factor*ln(V)
  std::string out_dir = "runs/run";
  std::string ref_checkpoint;
  DiagnoseConfig diagnose;
  SweepConfig sweep_cfg;
  CorpusSpec corpus;
  std::size_t train_records = 2000;
  std::size_t test_records = 200;

  OptimizerHyper hyper_for(const StageConfig& stage) const {
    return {stage.lr, adam_beta1, adam_beta2, adam_eps};
  }
  OptimizerKind kind_for(const StageConfig& stage) const {
    return stage.optimizer.value_or(optimizer_kind);
  }
};

// ----- artifacts ----------------------------------------------------------

struct MetricsRow {
  std::int64_t step;
  double loss;
  double f_value;
  double mean_margin;
};

struct EvalRow {
  std::int64_t id;
  double logp_w;
  double logp_l;
  double margin;
};

struct EvalSummary {
  double omega1 = 0.0;
  double omega2_hard = 0.0;
  double omega2_smooth = 0.0;
  double reward_accuracy = 0.0;
  double mean_margin = 0.0;
  double perplexity = 0.0;
};

struct EvalResult {
  std::vector<EvalRow> rows;
  EvalSummary summary;
};

struct EvalHistoryRow {
  std::int64_t step;
  EvalSummary summary;
};

struct SftResult {
  std::unique_ptr<Policy> policy;
  std::vector<std::pair<std::int64_t, double>> loss_curve;  // (step, loss)
};

struct RunArtifacts {
  std::vector<MetricsRow> metrics;
  std::vector<EvalHistoryRow> eval_history;
  EvalResult final_eval;
  std::vector<DiagnosticsRecord> diagnostics;
  std::unique_ptr<Policy> final_policy;
};

// ----- metrics ------------------------------------------------------------

// exp(- sum of chosen log-probs / total chosen tokens)
inline double perplexity(const Policy& policy, const std::vector<PreferenceTriple>& testset) {
  if (testset.empty()) throw std::domain_error("perplexity: empty test set");
  double lp = 0.0;
  std::size_t tokens = 0;
  for (const auto& r : testset) {
    lp += policy.logprob(r.prompt, r.chosen);
    tokens += r.chosen.size();
  }
  if (tokens == 0) throw std::domain_error("perplexity: no chosen tokens");
  return std::exp(-lp / static_cast<double>(tokens));
}

inline EvalResult evaluate(const Policy& policy, const FrozenPolicy& ref,
                           const std::vector<PreferenceTriple>& testset, double beta,
                           double gamma) {
  if (testset.empty()) throw std::domain_error("evaluate: empty test set");
  EvalResult out;
  out.rows.reserve(testset.size());

  double sum_lw = 0.0, sum_margin = 0.0, sum_smooth = 0.0;
  std::size_t positive = 0;
  for (const auto& r : testset) {
    const double lw = policy.logprob(r.prompt, r.chosen);
    const double ll = policy.logprob(r.prompt, r.rejected);
    const double delta =
        (lw - ref.logprob(r.prompt, r.chosen)) - (ll - ref.logprob(r.prompt, r.rejected));
    const double margin = beta * delta;
    out.rows.push_back({r.id, lw, ll, margin});
    sum_lw += lw;
    sum_margin += margin;
    sum_smooth += stable_sigmoid(gamma * delta);
    if (margin > 0.0) ++positive;  // ties count as incorrect
  }
  const double n = static_cast<double>(testset.size());
  out.summary.omega1 = sum_lw / n;
  out.summary.omega2_hard = static_cast<double>(positive) / n;
  out.summary.omega2_smooth = sum_smooth / n;
  out.summary.reward_accuracy = out.summary.omega2_hard;
  out.summary.mean_margin = sum_margin / n;
  out.summary.perplexity = perplexity(policy, testset);
  return out;
}

// ----- SFT ------------------------------------------------------------

inline SftResult train_sft(const RunConfig& cfg, const std::vector<PreferenceTriple>& corpus) {
  if (corpus.empty()) throw std::domain_error("train_sft: empty corpus");
  if (cfg.batch_size < 1) throw std::domain_error("train_sft: batch_size must be >= 1");

  SftResult result;
  result.policy = make_policy(cfg.policy);
  Policy& policy = *result.policy;
  const std::size_t d = policy.param_count();

  OptimizerState opt = make_optimizer(cfg.kind_for(cfg.sft), cfg.hyper_for(cfg.sft), d);
  std::vector<double> grad(d);
  std::vector<double> theta(policy.params().begin(), policy.params().end());

  std::int64_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.sft.epochs; ++epoch) {
    for (std::size_t start = 0; start < corpus.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(corpus.size(), start + cfg.batch_size);
      const double bsz = static_cast<double>(stop - start);
      std::fill(grad.begin(), grad.end(), 0.0);
      double loss = 0.0;
      for (std::size_t i = start; i < stop; ++i) {
        loss -= policy.logprob(corpus[i].prompt, corpus[i].chosen);
        policy.grad_logprob(corpus[i].prompt, corpus[i].chosen).add_scaled_to(-1.0, grad);
      }
      loss /= bsz;
      for (double& g : grad) g /= bsz;
      if (!std::isfinite(loss))
        throw NumericError("train_sft: non-finite loss at step " + std::to_string(step));

      optimizer_step(opt, grad, theta);
      for (double v : theta)
        if (!std::isfinite(v))
          throw NumericError("train_sft: diverged at step " + std::to_string(step));
      policy.set_params(theta);
      result.loss_curve.emplace_back(step, loss);
      ++step;
    }
  }
  return result;
}

// ----- preference optimization -----------------------------------------

inline RunArtifacts train_po(const RunConfig& cfg,
                             const std::vector<PreferenceTriple>& train,
                             const std::vector<PreferenceTriple>& test,
                             const FrozenPolicy& ref) {
  if (train.empty()) throw std::domain_error("train_po: empty training corpus");
  if (cfg.batch_size < 1) throw std::domain_error("train_po: batch_size must be >= 1");
  cfg.objective.validate();

  RunArtifacts art;
  art.final_policy = ref.get().clone();
  Policy& policy = *art.final_policy;
  const std::size_t d = policy.param_count();
  const double beta = cfg.objective.beta;

  const std::size_t steps_per_epoch = (train.size() + cfg.batch_size - 1) / cfg.batch_size;
  ScheduleSpec sched = cfg.schedule;
  sched.horizon = static_cast<std::int64_t>(cfg.po.epochs * steps_per_epoch);
  if (sched.horizon < 1) sched.horizon = 1;

  // reference log-probs never change; evaluate them once
  std::vector<double> ref_w(train.size()), ref_l(train.size());
  for (std::size_t i = 0; i < train.size(); ++i) {
    ref_w[i] = ref.logprob(train[i].prompt, train[i].chosen);
    ref_l[i] = ref.logprob(train[i].prompt, train[i].rejected);
  }

  const double collapse_bound =
      -cfg.collapse_bound_factor * std::log(static_cast<double>(policy.vocab_size()));

  OptimizerState opt = make_optimizer(cfg.kind_for(cfg.po), cfg.hyper_for(cfg.po), d);
  std::vector<double> grad(d);
  std::vector<double> theta(policy.params().begin(), policy.params().end());

  if (!test.empty())
    art.eval_history.push_back({0, evaluate(policy, ref, test, beta, cfg.gamma).summary});

  std::int64_t t = 0;
  double last_f = 1.0;
  for (std::size_t epoch = 0; epoch < cfg.po.epochs; ++epoch) {
    for (std::size_t start = 0; start < train.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(train.size(), start + cfg.batch_size);
      const double bsz = static_cast<double>(stop - start);

      const double f = cfg.objective.kind == ObjectiveKind::dpo_shift
                           ? f_value(sched, t)
                           : 1.0;
      last_f = f;

      std::fill(grad.begin(), grad.end(), 0.0);
      double loss = 0.0, margin = 0.0, token_lp = 0.0;
      std::size_t token_count = 0;
      for (std::size_t i = start; i < stop; ++i) {
        const PreferenceTriple& r = train[i];
        const double lw = policy.logprob(r.prompt, r.chosen);
        const double ll = policy.logprob(r.prompt, r.rejected);
        const double rho_w = lw - ref_w[i];
        const double rho_l = ll - ref_l[i];

        LossBreakdown b =
            cfg.objective.kind == ObjectiveKind::alpha_dpo
                ? alpha_dpo_loss_from_parts(rho_w, rho_l, lw, r.chosen.size(), beta,
                                            cfg.objective.alpha)
                : dpo_shift_loss_from_ratios(rho_w, rho_l, beta, f);
        loss += b.loss;
        margin += beta * (rho_w - rho_l);

        const auto [c1, c2] = shift_coefficients(beta, f, rho_w, rho_l);
        const SparseVec grad_w = policy.grad_logprob(r.prompt, r.chosen);
        const SparseVec grad_l = policy.grad_logprob(r.prompt, r.rejected);
        grad_w.add_scaled_to(-c1, grad);
        grad_l.add_scaled_to(c2, grad);
        if (cfg.objective.kind == ObjectiveKind::alpha_dpo && cfg.objective.alpha > 0.0)
          grad_w.add_scaled_to(-cfg.objective.alpha / static_cast<double>(r.chosen.size()),
                               grad);

        token_lp += lw + ll;
        token_count += r.chosen.size() + r.rejected.size();
      }
      loss /= bsz;
      margin /= bsz;
      for (double& g : grad) g /= bsz;

      if (!std::isfinite(loss))
        throw NumericError("train_po: non-finite loss at step " + std::to_string(t));
      if (token_count > 0 &&
          token_lp / static_cast<double>(token_count) < collapse_bound)
        throw CollapseError("train_po: policy collapse at step " + std::to_string(t) +
                                " (mean token logprob below " +
                                std::to_string(collapse_bound) + ")",
                            t);

      art.metrics.push_back({t, loss, f, margin});
      optimizer_step(opt, grad, theta);
      for (double v : theta)
        if (!std::isfinite(v))
          throw NumericError("train_po: diverged at step " + std::to_string(t));
      policy.set_params(theta);
      ++t;

      if (!test.empty() && cfg.eval_interval > 0 && t % cfg.eval_interval == 0)
        art.eval_history.push_back({t, evaluate(policy, ref, test, beta, cfg.gamma).summary});
    }
  }

  if (!test.empty()) {
    art.final_eval = evaluate(policy, ref, test, beta, cfg.gamma);
    art.diagnostics.reserve(test.size());
    for (const auto& r : test)
      art.diagnostics.push_back(
          sample_diagnostics(r, policy, ref, last_f, cfg.gamma, 1.0));
  }
  return art;
}

// ----- sweep ----------------------------------------------------------

struct SweepEntry {
  std::string label;
  double f = 1.0;  // fixed value, or lambda_min for linear variants
  ScheduleSpec schedule;
  bool ok = false;
  std::string error;
  EvalSummary summary;
  std::shared_ptr<RunArtifacts> artifacts;
};

struct SweepReport {
  std::vector<SweepEntry> entries;
};

inline std::string schedule_label(const ScheduleSpec& s) {
  char buf[64];
  const char* name = s.strategy == ScheduleStrategy::fixed ? "fixed"
                     : s.strategy == ScheduleStrategy::linear_increase
                         ? "linear_increase"
                         : "linear_decrease";
  std::snprintf(buf, sizeof(buf), "%s_%g", name, s.lambda_min);
  return buf;
}

// All runs share corpus, seed, and the SFT reference; failures are recorded
// and the sweep continues.
inline SweepReport sweep(const RunConfig& base, const std::vector<PreferenceTriple>& train,
                         const std::vector<PreferenceTriple>& test, const FrozenPolicy& ref) {
  SweepReport report;

  std::vector<ScheduleSpec> settings;
  for (double f : base.sweep_cfg.f_values)
    settings.push_back({ScheduleStrategy::fixed, f, std::max(f, 1.0), 1});
  for (const auto& v : base.sweep_cfg.variants) settings.push_back(v);

  for (const auto& sched : settings) {
    SweepEntry entry;
    entry.schedule = sched;
    entry.f = sched.lambda_min;
    entry.label = schedule_label(sched);
    RunConfig cfg = base;
    cfg.objective.kind = ObjectiveKind::dpo_shift;
    cfg.schedule = sched;
    try {
      auto art = std::make_shared<RunArtifacts>(train_po(cfg, train, test, ref));
      entry.summary = art->final_eval.summary;
      entry.artifacts = std::move(art);
      entry.ok = true;
    } catch (const std::exception& e) {
      entry.error = e.what();
    }
    report.entries.push_back(std::move(entry));
  }
  return report;
}

// Spearman rank correlation with average ranks for ties.
inline double spearman_rho(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2)
    throw std::domain_error("spearman_rho: need two equally sized series");
  const auto ranks = [](const std::vector<double>& v) {
    std::vector<std::size_t> order(v.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t i, std::size_t j) { return v[i] < v[j]; });
    std::vector<double> rank(v.size());
    std::size_t i = 0;
    while (i < order.size()) {
      std::size_t j = i;
      while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
      const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
      for (std::size_t s = i; s <= j; ++s) rank[order[s]] = avg;
      i = j + 1;
    }
    return rank;
  };
  const std::vector<double> ra = ranks(a);
  const std::vector<double> rb = ranks(b);
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += ra[i];
    mb += rb[i];
  }
  ma /= n;
  mb /= n;
  double cov = 0, va = 0, vb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    cov += (ra[i] - ma) * (rb[i] - mb);
    va += (ra[i] - ma) * (ra[i] - ma);
    vb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (va == 0.0 || vb == 0.0) throw std::domain_error("spearman_rho: constant series");
  return cov / std::sqrt(va * vb);
}

}  // namespace dposhift
