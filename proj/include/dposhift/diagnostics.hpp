#pragma once

// One-step gap diagnostics for DPO-Shift vs DPO.
//
// Target functions over a dataset:
//   omega1        - mean chosen log-likelihood
//   omega2_hard   - fraction of strictly positive reward margins
//   omega2_smooth - mean sigmoid(gamma * margin), the differentiable surrogate
//
// Per-sample quantities at parameters theta:
//   c_theta = gamma * sigmoid(f*gamma*rho_l - gamma*rho_w)
//   eta1    = eta * sigmoid(rho_l - rho_w)
//   u1      = c_theta * <grad_l, grad_w>
//   u2      = eta1 * (<grad_l, grad_w> - ||grad_l||^2)
//
// measure_gaps takes, for every record, one gradient-ascent step of size eta
// from the same theta under the DPO-Shift objective and under DPO (the
// derivation behind the gap law is per-sample; a batched step would add
// cross-sample gradient terms that the u aggregates do not model), evaluates
// the per-record targets at both stepped parameter vectors, and averages.
// Predictions are first-order:
//   g1_predicted = (1-f) * eta * mean(u1_i)
//   g2_predicted = (1-f) * eta * mean(gamma * s'(gamma*delta_i) * c1_i
//                                     * (<grad_l,grad_w> - ||grad_l||^2))
// The g2 weight uses the exact derivative of the smoothed margin rather than
// the sigmoid shorthand that is good enough for sign analysis; with it both
// residuals are O(eta^2) whenever the step beta equals gamma and the policy
// sits at the reference point.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "dposhift/core.hpp"
#include "dposhift/objectives.hpp"
#include "dposhift/policy.hpp"

namespace dposhift {

struct DiagnosticsRecord {
  std::int64_t id = 0;
  double c_theta = 0.0;
  double eta1 = 0.0;
  double dot_wl = 0.0;     // <grad log pi(y_l), grad log pi(y_w)>
  double norm_l_sq = 0.0;  // ||grad log pi(y_l)||^2
  double norm_w_sq = 0.0;  // ||grad log pi(y_w)||^2
  double u1 = 0.0;
  double u2 = 0.0;
};

struct GapReport {
  double f = 1.0;
  double eta = 0.0;
  double g1_measured = 0.0;
  double g2_measured = 0.0;
  double g1_predicted = 0.0;
  double g2_predicted = 0.0;
  double residual1 = 0.0;
  double residual2 = 0.0;
  double u1_mean = 0.0;
  double u2_mean = 0.0;
};

inline double omega1(const Policy& policy, const std::vector<PreferenceTriple>& dataset) {
  if (dataset.empty()) throw std::domain_error("omega1: empty dataset");
  double acc = 0.0;
  for (const auto& r : dataset) acc += policy.logprob(r.prompt, r.chosen);
  return acc / static_cast<double>(dataset.size());
}

// Strict inequality: a zero margin counts as incorrect.
inline double omega2_hard(const Policy& policy, const FrozenPolicy& ref,
                          const std::vector<PreferenceTriple>& dataset) {
  if (dataset.empty()) throw std::domain_error("omega2_hard: empty dataset");
  std::size_t positive = 0;
  for (const auto& r : dataset) {
    const LogRatios lr = log_ratios(r, policy, ref);
    if (lr.chosen - lr.rejected > 0.0) ++positive;
  }
  return static_cast<double>(positive) / static_cast<double>(dataset.size());
}

inline double omega2_smooth(const Policy& policy, const FrozenPolicy& ref,
                            const std::vector<PreferenceTriple>& dataset, double gamma) {
  if (dataset.empty()) throw std::domain_error("omega2_smooth: empty dataset");
  if (!(gamma > 0.0)) throw std::domain_error("omega2_smooth: gamma must be > 0");
  double acc = 0.0;
  for (const auto& r : dataset) {
    const LogRatios lr = log_ratios(r, policy, ref);
    acc += stable_sigmoid(gamma * (lr.chosen - lr.rejected));
  }
  return acc / static_cast<double>(dataset.size());
}

inline DiagnosticsRecord sample_diagnostics(const PreferenceTriple& triple,
                                            const Policy& policy, const FrozenPolicy& ref,
                                            double f, double gamma, double eta) {
  if (!(gamma > 0.0)) throw std::domain_error("sample_diagnostics: gamma must be > 0");
  if (!(eta > 0.0)) throw std::domain_error("sample_diagnostics: eta must be > 0");
  if (!(f > 0.0)) throw std::domain_error("sample_diagnostics: f must be > 0");

  const LogRatios lr = log_ratios(triple, policy, ref);
  const SparseVec grad_w = policy.grad_logprob(triple.prompt, triple.chosen);
  const SparseVec grad_l = policy.grad_logprob(triple.prompt, triple.rejected);

  DiagnosticsRecord rec;
  rec.id = triple.id;
  rec.c_theta = gamma * stable_sigmoid(f * gamma * lr.rejected - gamma * lr.chosen);
  rec.eta1 = eta * stable_sigmoid(lr.rejected - lr.chosen);
  rec.dot_wl = grad_l.dot(grad_w);
  rec.norm_l_sq = grad_l.squared_norm();
  rec.norm_w_sq = grad_w.squared_norm();
  rec.u1 = rec.c_theta * rec.dot_wl;
  rec.u2 = rec.eta1 * (rec.dot_wl - rec.norm_l_sq);
  return rec;
}

struct SignStatistics {
  double frac_u1_positive = 0.0;
  double frac_u2_negative = 0.0;
  double mean_u1 = 0.0;
  double mean_u2 = 0.0;
};

inline SignStatistics sign_statistics(const std::vector<DiagnosticsRecord>& records) {
  if (records.empty()) throw std::domain_error("sign_statistics: empty record list");
  SignStatistics s;
  std::size_t pos1 = 0, neg2 = 0;
  for (const auto& r : records) {
    if (r.u1 > 0.0) ++pos1;
    if (r.u2 < 0.0) ++neg2;
    s.mean_u1 += r.u1;
    s.mean_u2 += r.u2;
  }
  const double n = static_cast<double>(records.size());
  s.frac_u1_positive = static_cast<double>(pos1) / n;
  s.frac_u2_negative = static_cast<double>(neg2) / n;
  s.mean_u1 /= n;
  s.mean_u2 /= n;
  return s;
}

namespace detail {

// Apply theta[i] += a*g[i] for both sparse vectors onto a working policy,
// remembering originals so the edit can be undone exactly.
struct ScratchStep {
  std::vector<std::size_t> touched;
  std::vector<double> saved;

  void apply(Policy& p, double aw, const SparseVec& gw, double al, const SparseVec& gl) {
    touched.clear();
    saved.clear();
    touched.insert(touched.end(), gw.idx.begin(), gw.idx.end());
    touched.insert(touched.end(), gl.idx.begin(), gl.idx.end());
    std::sort(touched.begin(), touched.end());
    touched.erase(std::unique(touched.begin(), touched.end()), touched.end());
    saved.reserve(touched.size());
    for (std::size_t i : touched) saved.push_back(p.param(i));
    for (std::size_t n = 0; n < gw.idx.size(); ++n) p.nudge_param(gw.idx[n], aw * gw.val[n]);
    for (std::size_t n = 0; n < gl.idx.size(); ++n) p.nudge_param(gl.idx[n], al * gl.val[n]);
  }

  bool finite(const Policy& p) const {
    for (std::size_t i : touched)
      if (!std::isfinite(p.param(i))) return false;
    return true;
  }

  void undo(Policy& p) {
    for (std::size_t n = 0; n < touched.size(); ++n) p.write_param(touched[n], saved[n]);
  }
};

}  // namespace detail

inline GapReport measure_gaps(const Policy& policy, const FrozenPolicy& ref,
                              const std::vector<PreferenceTriple>& dataset, double beta,
                              double f, double gamma, double eta) {
  if (dataset.empty()) throw std::domain_error("measure_gaps: empty dataset");
  if (!(beta > 0.0)) throw std::domain_error("measure_gaps: beta must be > 0");
  if (!(f > 0.0)) throw std::domain_error("measure_gaps: f must be > 0");
  if (!(gamma > 0.0)) throw std::domain_error("measure_gaps: gamma must be > 0");
  if (!(eta > 0.0)) throw std::domain_error("measure_gaps: eta must be > 0");

  auto work = policy.clone();
  detail::ScratchStep step;

  double sum_g1 = 0.0, sum_g2 = 0.0, sum_u1 = 0.0, sum_u2 = 0.0, sum_v2 = 0.0;

  for (const auto& r : dataset) {
    const double ref_w = ref.logprob(r.prompt, r.chosen);
    const double ref_l = ref.logprob(r.prompt, r.rejected);
    const double rho_w = work->logprob(r.prompt, r.chosen) - ref_w;
    const double rho_l = work->logprob(r.prompt, r.rejected) - ref_l;
    const SparseVec grad_w = work->grad_logprob(r.prompt, r.chosen);
    const SparseVec grad_l = work->grad_logprob(r.prompt, r.rejected);

    const double dot = grad_l.dot(grad_w);
    const double nl = grad_l.squared_norm();

    const double c_theta = gamma * stable_sigmoid(f * gamma * rho_l - gamma * rho_w);
    const double eta1 = eta * stable_sigmoid(rho_l - rho_w);
    sum_u1 += c_theta * dot;
    sum_u2 += eta1 * (dot - nl);

    // exact first-order weight for the smoothed margin target
    const double sg = stable_sigmoid(gamma * (rho_w - rho_l));
    const auto shift = shift_coefficients(beta, f, rho_w, rho_l);
    sum_v2 += gamma * sg * (1.0 - sg) * shift.c1 * (dot - nl);

    const auto dpo = shift_coefficients(beta, 1.0, rho_w, rho_l);

    const auto eval_targets = [&](double c1, double c2, double& w1, double& delta) {
      step.apply(*work, eta * c1, grad_w, -eta * c2, grad_l);
      if (!step.finite(*work)) {
        step.undo(*work);
        throw NumericError("measure_gaps: non-finite parameters after step with eta=" +
                           std::to_string(eta));
      }
      w1 = work->logprob(r.prompt, r.chosen);
      delta = (w1 - ref_w) - (work->logprob(r.prompt, r.rejected) - ref_l);
      step.undo(*work);
    };

    double w1_shift, delta_shift, w1_dpo, delta_dpo;
    eval_targets(shift.c1, shift.c2, w1_shift, delta_shift);
    eval_targets(dpo.c1, dpo.c2, w1_dpo, delta_dpo);

    sum_g1 += w1_shift - w1_dpo;
    sum_g2 += stable_sigmoid(gamma * delta_shift) - stable_sigmoid(gamma * delta_dpo);
  }

  const double n = static_cast<double>(dataset.size());
  GapReport report;
  report.f = f;
  report.eta = eta;
  report.u1_mean = sum_u1 / n;
  report.u2_mean = sum_u2 / n;
  report.g1_measured = sum_g1 / n;
  report.g2_measured = sum_g2 / n;
  report.g1_predicted = (1.0 - f) * eta * report.u1_mean;
  report.g2_predicted = (1.0 - f) * eta * (sum_v2 / n);
  report.residual1 = std::fabs(report.g1_measured - report.g1_predicted);
  report.residual2 = std::fabs(report.g2_measured - report.g2_predicted);
  return report;
}

// Least-squares slope of log(y) against log(x); order-of-accuracy checks.
inline double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2)
    throw std::domain_error("loglog_slope: need at least two points");
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const double n = static_cast<double>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double lx = std::log(x[i]);
    const double ly = std::log(y[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

}  // namespace dposhift
