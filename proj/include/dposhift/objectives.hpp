#pragma once

// DPO, DPO-Shift, and alpha-DPO losses with closed-form gradients, plus the
// f(lambda) schedules. Losses are per-sample; batch means are taken by the
// training loop so per-sample diagnostics stay available.
//
//   dpo:        -log sigmoid(beta*rho_w - beta*rho_l)
//   dpo_shift:  -log sigmoid(beta*rho_w - f*beta*rho_l)
//   alpha_dpo:  dpo - (alpha/|y_w|) * log pi(y_w|x)
//
// where rho_w/rho_l are the chosen/rejected log-ratios against the frozen
// reference. The gradient of dpo_shift is -(c1*grad_w - c2*grad_l) with
// c1 = beta*sigmoid(f*beta*rho_l - beta*rho_w) and c2 = f*c1; f = 1 recovers
// DPO through the same code path, bit for bit.

#include <cstdint>
#include <stdexcept>

#include "dposhift/core.hpp"
#include "dposhift/policy.hpp"

namespace dposhift {

enum class ScheduleStrategy { fixed, linear_increase, linear_decrease };

struct ScheduleSpec {
  ScheduleStrategy strategy = ScheduleStrategy::fixed;
  double lambda_min = 1.0;
  double lambda_max = 1.0;
  std::int64_t horizon = 1;  // T = total PO steps

  // lambda values above 1 are permitted but warned about at loss evaluation,
  // so crash-behavior experiments remain expressible.
  void validate() const {
    if (!(lambda_min > 0.0)) throw std::domain_error("ScheduleSpec: lambda_min must be > 0");
    if (!(lambda_min <= lambda_max))
      throw std::domain_error("ScheduleSpec: lambda_min must be <= lambda_max");
    if (horizon < 1) throw std::domain_error("ScheduleSpec: horizon must be >= 1");
  }
};

// fixed: lambda_min for all t.
// linear_increase: t/T*(lambda_max-lambda_min) + lambda_min.
// linear_decrease: t/T*(lambda_min-lambda_max) + lambda_max.
inline double f_value(const ScheduleSpec& spec, std::int64_t t) {
  spec.validate();
  if (t < 0 || t > spec.horizon)
    throw std::domain_error("f_value: step outside [0, T]");
  const double frac = static_cast<double>(t) / static_cast<double>(spec.horizon);
  switch (spec.strategy) {
    case ScheduleStrategy::fixed:
      return spec.lambda_min;
    case ScheduleStrategy::linear_increase:
      if (t == spec.horizon) return spec.lambda_max;  // endpoints exact
      return frac * (spec.lambda_max - spec.lambda_min) + spec.lambda_min;
    case ScheduleStrategy::linear_decrease:
      if (t == spec.horizon) return spec.lambda_min;
      return frac * (spec.lambda_min - spec.lambda_max) + spec.lambda_max;
  }
  throw std::domain_error("f_value: unknown strategy");
}

struct LossBreakdown {
  double loss = 0.0;
  double margin_argument = 0.0;  // the value inside sigma
  double chosen_logratio = 0.0;
  double rejected_logratio = 0.0;
  double f_value = 1.0;
  bool f_above_one = false;  // warning, not an error
};

struct ShiftCoefficients {
  double c1;
  double c2;  // = f * c1
};

inline ShiftCoefficients shift_coefficients(double beta, double f, double chosen_logratio,
                                            double rejected_logratio) {
  const double c1 =
      beta * stable_sigmoid(f * beta * rejected_logratio - beta * chosen_logratio);
  return {c1, f * c1};
}

struct LogRatios {
  double chosen;
  double rejected;
  double logp_chosen;  // raw policy log-probs, kept for the SFT term
  double logp_rejected;
};

inline LogRatios log_ratios(const PreferenceTriple& triple, const Policy& policy,
                            const FrozenPolicy& ref) {
  const double lw = policy.logprob(triple.prompt, triple.chosen);
  const double ll = policy.logprob(triple.prompt, triple.rejected);
  return {lw - ref.logprob(triple.prompt, triple.chosen),
          ll - ref.logprob(triple.prompt, triple.rejected), lw, ll};
}

// Scalar core shared by the triple-based entry points; also the natural
// surface for scalar oracles in tests.
inline LossBreakdown dpo_shift_loss_from_ratios(double chosen_logratio,
                                                double rejected_logratio, double beta,
                                                double f) {
  if (!(beta > 0.0)) throw std::domain_error("dpo_shift_loss: beta must be > 0");
  if (!(f > 0.0)) throw std::domain_error("dpo_shift_loss: f must be > 0");
  LossBreakdown out;
  out.chosen_logratio = chosen_logratio;
  out.rejected_logratio = rejected_logratio;
  out.f_value = f;
  out.f_above_one = f > 1.0;
  out.margin_argument = beta * chosen_logratio - f * beta * rejected_logratio;
  out.loss = neg_log_sigmoid(out.margin_argument);
  return out;
}

inline LossBreakdown dpo_shift_loss(const PreferenceTriple& triple, const Policy& policy,
                                    const FrozenPolicy& ref, double beta, double f) {
  const LogRatios r = log_ratios(triple, policy, ref);
  return dpo_shift_loss_from_ratios(r.chosen, r.rejected, beta, f);
}

inline LossBreakdown dpo_loss(const PreferenceTriple& triple, const Policy& policy,
                              const FrozenPolicy& ref, double beta) {
  return dpo_shift_loss(triple, policy, ref, beta, 1.0);
}

inline LossBreakdown alpha_dpo_loss_from_parts(double chosen_logratio,
                                               double rejected_logratio,
                                               double logp_chosen,
                                               std::size_t chosen_len, double beta,
                                               double alpha) {
  if (!(alpha >= 0.0)) throw std::domain_error("alpha_dpo_loss: alpha must be >= 0");
  LossBreakdown out = dpo_shift_loss_from_ratios(chosen_logratio, rejected_logratio, beta, 1.0);
  if (alpha > 0.0) {
    out.loss -= (alpha / static_cast<double>(chosen_len)) * logp_chosen;
  }
  return out;
}

inline LossBreakdown alpha_dpo_loss(const PreferenceTriple& triple, const Policy& policy,
                                    const FrozenPolicy& ref, double beta, double alpha) {
  const LogRatios r = log_ratios(triple, policy, ref);
  return alpha_dpo_loss_from_parts(r.chosen, r.rejected, r.logp_chosen,
                                   triple.chosen.size(), beta, alpha);
}

// Closed-form gradient of dpo_shift_loss w.r.t. theta; f = 1 is the DPO
// gradient.
inline SparseVec objective_gradient_sparse(const PreferenceTriple& triple,
                                           const Policy& policy, const FrozenPolicy& ref,
                                           double beta, double f) {
  if (!(beta > 0.0)) throw std::domain_error("objective_gradient: beta must be > 0");
  if (!(f > 0.0)) throw std::domain_error("objective_gradient: f must be > 0");
  const LogRatios r = log_ratios(triple, policy, ref);
  const auto [c1, c2] = shift_coefficients(beta, f, r.chosen, r.rejected);
  const SparseVec grad_w = policy.grad_logprob(triple.prompt, triple.chosen);
  const SparseVec grad_l = policy.grad_logprob(triple.prompt, triple.rejected);
  return sparse_combine(-c1, grad_w, c2, grad_l);
}

inline std::vector<double> objective_gradient(const PreferenceTriple& triple,
                                              const Policy& policy, const FrozenPolicy& ref,
                                              double beta, double f) {
  return objective_gradient_sparse(triple, policy, ref, beta, f)
      .to_dense(policy.param_count());
}

}  // namespace dposhift
