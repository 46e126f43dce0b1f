#pragma once

// Core value types and scalar math shared by every module: token sequences,
// preference triples, objective/diagnostics knobs, overflow-safe sigmoid
// helpers, and dataset validation.

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace dposhift {

using Token = std::int32_t;

struct TokenSeq {
  std::vector<Token> ids;

  TokenSeq() = default;
  TokenSeq(std::initializer_list<Token> list) : ids(list) {}
  explicit TokenSeq(std::vector<Token> list) : ids(std::move(list)) {}

  std::size_t size() const { return ids.size(); }
  bool empty() const { return ids.empty(); }
  bool operator==(const TokenSeq&) const = default;
};

// One preference record: prompt may be empty, responses may not.
struct PreferenceTriple {
  std::int64_t id = 0;
  TokenSeq prompt;
  TokenSeq chosen;
  TokenSeq rejected;
};

enum class ObjectiveKind { dpo, dpo_shift, alpha_dpo };

struct ObjectiveConfig {
  double beta = 0.1;   // reward temperature
  double alpha = 0.0;  // SFT mixing weight, 0 disables
  ObjectiveKind kind = ObjectiveKind::dpo_shift;

  void validate() const {
    if (!(beta > 0.0)) throw std::domain_error("ObjectiveConfig: beta must be > 0");
    if (!(alpha >= 0.0)) throw std::domain_error("ObjectiveConfig: alpha must be >= 0");
  }
};

struct DiagnosticsConfig {
  double gamma = 1.0;  // margin smoothing factor
  double eta = 1.0;    // learning rate used in one-step gap measurement

  void validate() const {
    if (!(gamma > 0.0)) throw std::domain_error("DiagnosticsConfig: gamma must be > 0");
    if (!(eta > 0.0)) throw std::domain_error("DiagnosticsConfig: eta must be > 0");
  }
};

struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

struct CollapseError : NumericError {
  std::int64_t step;
  CollapseError(const std::string& what, std::int64_t at_step)
      : NumericError(what), step(at_step) {}
};

struct IoError : std::runtime_error {
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

// 1/(1+e^-z) without overflow; safe over |z| well past 1e4.
inline double stable_sigmoid(double z) {
  if (!std::isfinite(z)) throw std::domain_error("stable_sigmoid: non-finite input");
  if (z >= 0.0) {
    return 1.0 / (1.0 + std::exp(-z));
  }
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// log(1+e^-z); the branch never exponentiates a large positive argument.
inline double neg_log_sigmoid(double z) {
  if (!std::isfinite(z)) throw std::domain_error("neg_log_sigmoid: non-finite input");
  if (z >= 0.0) {
    return std::log1p(std::exp(-z));
  }
  return -z + std::log1p(std::exp(z));
}

enum class ValidationIssueKind { out_of_vocab, empty_response };

struct ValidationIssue {
  std::int64_t record_id;
  ValidationIssueKind kind;
  std::string detail;
};

struct ValidationReport {
  std::size_t record_count = 0;
  std::size_t oov_count = 0;
  std::size_t empty_response_count = 0;
  std::vector<ValidationIssue> issues;

  bool passed() const { return oov_count == 0 && empty_response_count == 0; }
};

// Pure check of the PreferenceTriple invariants; failures go in the report,
// never into exceptions.
inline ValidationReport validate_dataset(const std::vector<PreferenceTriple>& records,
                                         std::size_t vocab_size) {
  ValidationReport report;
  report.record_count = records.size();

  const auto check_tokens = [&](const PreferenceTriple& r, const TokenSeq& seq,
                                const char* field) {
    for (Token t : seq.ids) {
      if (t < 0 || static_cast<std::size_t>(t) >= vocab_size) {
        ++report.oov_count;
        report.issues.push_back({r.id, ValidationIssueKind::out_of_vocab,
                                 std::string(field) + " token " + std::to_string(t)});
        return;  // one issue per field is enough
      }
    }
  };

  for (const auto& r : records) {
    check_tokens(r, r.prompt, "prompt");
    check_tokens(r, r.chosen, "chosen");
    check_tokens(r, r.rejected, "rejected");
    if (r.chosen.empty()) {
      ++report.empty_response_count;
      report.issues.push_back({r.id, ValidationIssueKind::empty_response, "chosen"});
    }
    if (r.rejected.empty()) {
      ++report.empty_response_count;
      report.issues.push_back({r.id, ValidationIssueKind::empty_response, "rejected"});
    }
  }
  return report;
}

}  // namespace dposhift
