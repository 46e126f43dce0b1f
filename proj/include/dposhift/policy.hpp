#pragma once

// Autoregressive categorical policies with exact log-probabilities and exact
// sparse parameter gradients.
//
// Both backends share one parameter layout: a (rows x V) table of logit
// contributions stored row-major in a flat vector, so parameter index =
// row * V + token. The logits for step `pos` of a response are the sum of the
// table rows active at that step:
//   TabularPolicy   - exactly one row per step, indexed by the (prompt bucket,
//                     last-k tokens) context; brute-force enumerable.
//   LogLinearPolicy - a handful of hashed feature rows per step (bias, prompt
//                     id, position bucket, last-k tokens), shared across
//                     samples so gradient interactions are non-trivial.

#include <algorithm>
#include <cstring>
#include <fstream>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dposhift/core.hpp"
#include "dposhift/rng.hpp"

namespace dposhift {

// Sparse gradient: strictly increasing indices into the flat parameter vector.
struct SparseVec {
  std::vector<std::size_t> idx;
  std::vector<double> val;

  std::size_t nnz() const { return idx.size(); }

  double dot(const SparseVec& o) const {
    double acc = 0.0;
    std::size_t a = 0, b = 0;
    while (a < idx.size() && b < o.idx.size()) {
      if (idx[a] < o.idx[b]) {
        ++a;
      } else if (idx[a] > o.idx[b]) {
        ++b;
      } else {
        acc += val[a] * o.val[b];
        ++a;
        ++b;
      }
    }
    return acc;
  }

  double squared_norm() const {
    double acc = 0.0;
    for (double v : val) acc += v * v;
    return acc;
  }

  // dense += a * this
  void add_scaled_to(double a, std::span<double> dense) const {
    for (std::size_t i = 0; i < idx.size(); ++i) dense[idx[i]] += a * val[i];
  }

  std::vector<double> to_dense(std::size_t dim) const {
    std::vector<double> out(dim, 0.0);
    for (std::size_t i = 0; i < idx.size(); ++i) out[idx[i]] = val[i];
    return out;
  }
};

// a*A + b*B, indices merged.
inline SparseVec sparse_combine(double a, const SparseVec& A, double b, const SparseVec& B) {
  SparseVec out;
  out.idx.reserve(A.nnz() + B.nnz());
  out.val.reserve(A.nnz() + B.nnz());
  std::size_t i = 0, j = 0;
  while (i < A.idx.size() || j < B.idx.size()) {
    if (j >= B.idx.size() || (i < A.idx.size() && A.idx[i] < B.idx[j])) {
      out.idx.push_back(A.idx[i]);
      out.val.push_back(a * A.val[i]);
      ++i;
    } else if (i >= A.idx.size() || B.idx[j] < A.idx[i]) {
      out.idx.push_back(B.idx[j]);
      out.val.push_back(b * B.val[j]);
      ++j;
    } else {
      out.idx.push_back(A.idx[i]);
      out.val.push_back(a * A.val[i] + b * B.val[j]);
      ++i;
      ++j;
    }
  }
  return out;
}

enum class PolicyBackend : std::uint32_t { tabular = 0, loglinear = 1 };

class Policy {
 public:
  virtual ~Policy() = default;

  std::size_t vocab_size() const { return vocab_; }
  int context_order() const { return k_; }
  std::size_t param_count() const { return theta_.size(); }
  std::size_t row_count() const { return theta_.size() / vocab_; }

  std::span<const double> params() const { return theta_; }

  void set_params(std::span<const double> p) {
    if (p.size() != theta_.size())
      throw std::domain_error("Policy::set_params: dimension mismatch");
    for (double v : p)
      if (!std::isfinite(v)) throw std::domain_error("Policy::set_params: non-finite entry");
    std::copy(p.begin(), p.end(), theta_.begin());
  }

  double param(std::size_t i) const { return theta_[i]; }
  void nudge_param(std::size_t i, double delta) { theta_[i] += delta; }
  void write_param(std::size_t i, double v) { theta_[i] = v; }

  // log pi(y|x) as a sum of per-step log-softmax terms; empty y gives 0.
  double logprob(const TokenSeq& x, const TokenSeq& y) const {
    check_in_vocab(x);
    check_in_vocab(y);
    const std::size_t V = vocab_;
    std::vector<std::uint32_t> rows;
    std::vector<double> logits(V);
    double lp = 0.0;
    for (std::size_t pos = 0; pos < y.size(); ++pos) {
      rows.clear();
      active_rows(x, y.ids, pos, rows);
      fill_logits(rows, logits);
      lp += logits[static_cast<std::size_t>(y.ids[pos])] - log_sum_exp(logits);
    }
    return lp;
  }

  // Exact gradient of logprob w.r.t. theta. Entries of never-visited rows are
  // absent from the result (exactly zero).
  SparseVec grad_logprob(const TokenSeq& x, const TokenSeq& y) const {
    check_in_vocab(x);
    check_in_vocab(y);
    const std::size_t V = vocab_;

    std::vector<std::vector<std::uint32_t>> per_pos(y.size());
    std::vector<std::uint32_t> distinct;
    for (std::size_t pos = 0; pos < y.size(); ++pos) {
      active_rows(x, y.ids, pos, per_pos[pos]);
      distinct.insert(distinct.end(), per_pos[pos].begin(), per_pos[pos].end());
    }
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());

    std::vector<double> accum(distinct.size() * V, 0.0);
    const auto slot = [&](std::uint32_t row) {
      return static_cast<std::size_t>(
          std::lower_bound(distinct.begin(), distinct.end(), row) - distinct.begin());
    };

    std::vector<double> logits(V);
    std::vector<double> probs(V);
    for (std::size_t pos = 0; pos < y.size(); ++pos) {
      fill_logits(per_pos[pos], logits);
      softmax(logits, probs);
      const std::size_t target = static_cast<std::size_t>(y.ids[pos]);
      for (std::uint32_t row : per_pos[pos]) {
        double* block = accum.data() + slot(row) * V;
        for (std::size_t j = 0; j < V; ++j) block[j] -= probs[j];
        block[target] += 1.0;
      }
    }

    SparseVec g;
    g.idx.reserve(distinct.size() * V);
    g.val.reserve(distinct.size() * V);
    for (std::size_t s = 0; s < distinct.size(); ++s) {
      const std::size_t base = static_cast<std::size_t>(distinct[s]) * V;
      for (std::size_t j = 0; j < V; ++j) {
        g.idx.push_back(base + j);
        g.val.push_back(accum[s * V + j]);
      }
    }
    return g;
  }

  // Next-token log-distribution given a (possibly partial) response prefix.
  void next_token_logprobs(const TokenSeq& x, std::span<const Token> prefix,
                           std::vector<double>& out) const {
    std::vector<std::uint32_t> rows;
    TokenSeq dummy;
    dummy.ids.assign(prefix.begin(), prefix.end());
    active_rows(x, dummy.ids, prefix.size(), rows);
    out.resize(vocab_);
    fill_logits(rows, out);
    const double lz = log_sum_exp(out);
    for (double& v : out) v -= lz;
  }

  // Ancestral sampling; stops at end_token (if given) or max_len.
  TokenSeq sample(const TokenSeq& x, std::size_t max_len, Rng& rng,
                  std::optional<Token> end_token = std::nullopt) const {
    if (max_len < 1) throw std::domain_error("sample: max_len must be >= 1");
    check_in_vocab(x);
    TokenSeq y;
    std::vector<double> logp;
    for (std::size_t pos = 0; pos < max_len; ++pos) {
      next_token_logprobs(x, y.ids, logp);
      const double u = rng.uniform01();
      double cdf = 0.0;
      Token pick = static_cast<Token>(vocab_ - 1);
      for (std::size_t j = 0; j < vocab_; ++j) {
        cdf += std::exp(logp[j]);
        if (u < cdf) {
          pick = static_cast<Token>(j);
          break;
        }
      }
      y.ids.push_back(pick);
      if (end_token && pick == *end_token) break;
    }
    return y;
  }

  virtual std::unique_ptr<Policy> clone() const = 0;
  virtual PolicyBackend backend() const = 0;
  virtual std::uint32_t aux_field() const = 0;  // prompt buckets or feature dim

 protected:
  Policy(std::size_t vocab, int k, std::size_t rows)
      : vocab_(vocab), k_(k), theta_(rows * vocab, 0.0) {
    if (vocab < 2) throw std::domain_error("Policy: vocab_size must be >= 2");
    if (k < 0 || k > 3) throw std::domain_error("Policy: context order must be in [0,3]");
  }

  // Rows of the parameter table active at step `pos` of y given prompt x.
  virtual void active_rows(const TokenSeq& x, const std::vector<Token>& y,
                           std::size_t pos, std::vector<std::uint32_t>& rows) const = 0;

  // Token at history offset `back` steps before position pos (1 = previous),
  // looking through the response into the prompt; BOS sentinel beyond that.
  Token history_token(const TokenSeq& x, const std::vector<Token>& y,
                      std::size_t pos, int back) const {
    const std::int64_t h = static_cast<std::int64_t>(pos) - back;
    if (h >= 0) return y[static_cast<std::size_t>(h)];
    const std::int64_t xi = static_cast<std::int64_t>(x.size()) + h;
    if (xi >= 0) return x.ids[static_cast<std::size_t>(xi)];
    return static_cast<Token>(vocab_);  // BOS
  }

  void check_in_vocab(const TokenSeq& seq) const {
    for (Token t : seq.ids) {
      if (t < 0 || static_cast<std::size_t>(t) >= vocab_)
        throw std::domain_error("Policy: token " + std::to_string(t) +
                                " out of vocabulary (V=" + std::to_string(vocab_) + ")");
    }
  }

  void fill_logits(const std::vector<std::uint32_t>& rows, std::vector<double>& logits) const {
    std::fill(logits.begin(), logits.end(), 0.0);
    for (std::uint32_t row : rows) {
      const double* block = theta_.data() + static_cast<std::size_t>(row) * vocab_;
      for (std::size_t j = 0; j < vocab_; ++j) logits[j] += block[j];
    }
  }

  static double log_sum_exp(const std::vector<double>& v) {
    double m = v[0];
    for (double x : v) m = std::max(m, x);
    double s = 0.0;
    for (double x : v) s += std::exp(x - m);
    return m + std::log(s);
  }

  static void softmax(const std::vector<double>& logits, std::vector<double>& probs) {
    double m = logits[0];
    for (double x : logits) m = std::max(m, x);
    double s = 0.0;
    probs.resize(logits.size());
    for (std::size_t j = 0; j < logits.size(); ++j) {
      probs[j] = std::exp(logits[j] - m);
      s += probs[j];
    }
    for (double& p : probs) p /= s;
  }

  std::size_t vocab_;
  int k_;
  std::vector<double> theta_;
};

// One row per enumerable (prompt bucket, last-k tokens) context.
class TabularPolicy : public Policy {
 public:
  TabularPolicy(std::size_t vocab, int k, std::uint32_t prompt_buckets = 1)
      : Policy(vocab, k, table_rows(vocab, k, prompt_buckets)),
        prompt_buckets_(prompt_buckets) {
    if (prompt_buckets < 1)
      throw std::domain_error("TabularPolicy: prompt_buckets must be >= 1");
  }

  std::uint32_t prompt_buckets() const { return prompt_buckets_; }
  std::size_t num_contexts() const { return row_count(); }

  // Context row for an explicit history; exposed for enumeration oracles.
  std::size_t context_row(std::uint32_t bucket, std::span<const Token> last_k) const {
    std::size_t row = bucket;
    for (Token t : last_k) row = row * (vocab_ + 1) + static_cast<std::size_t>(t);
    return row;
  }

  std::unique_ptr<Policy> clone() const override {
    return std::make_unique<TabularPolicy>(*this);
  }
  PolicyBackend backend() const override { return PolicyBackend::tabular; }
  std::uint32_t aux_field() const override { return prompt_buckets_; }

 protected:
  void active_rows(const TokenSeq& x, const std::vector<Token>& y, std::size_t pos,
                   std::vector<std::uint32_t>& rows) const override {
    std::size_t row = prompt_bucket(x);
    for (int s = 1; s <= k_; ++s)
      row = row * (vocab_ + 1) + static_cast<std::size_t>(history_token(x, y, pos, s));
    rows.push_back(static_cast<std::uint32_t>(row));
  }

 private:
  static std::size_t table_rows(std::size_t vocab, int k, std::uint32_t buckets) {
    std::size_t rows = buckets;
    for (int s = 0; s < k; ++s) rows *= (vocab + 1);
    return rows;
  }

  std::uint32_t prompt_bucket(const TokenSeq& x) const {
    if (prompt_buckets_ == 1) return 0;
    std::uint64_t h = 0x5B5AD4DD4EE54111ULL;
    for (Token t : x.ids) h = hash_combine(h, static_cast<std::uint64_t>(t));
    return static_cast<std::uint32_t>(h % prompt_buckets_);
  }

  std::uint32_t prompt_buckets_;
};

// Hashed log-linear features; collisions are accepted (they change the model,
// not the exactness of its gradients).
class LogLinearPolicy : public Policy {
 public:
  LogLinearPolicy(std::size_t vocab, std::size_t feature_dim, int k = 1)
      : Policy(vocab, k, feature_dim), feature_dim_(feature_dim) {
    if (feature_dim < 4)
      throw std::domain_error("LogLinearPolicy: feature_dim must be >= 4");
  }

  std::size_t feature_dim() const { return feature_dim_; }

  std::unique_ptr<Policy> clone() const override {
    return std::make_unique<LogLinearPolicy>(*this);
  }
  PolicyBackend backend() const override { return PolicyBackend::loglinear; }
  std::uint32_t aux_field() const override { return static_cast<std::uint32_t>(feature_dim_); }

 protected:
  void active_rows(const TokenSeq& x, const std::vector<Token>& y, std::size_t pos,
                   std::vector<std::uint32_t>& rows) const override {
    rows.push_back(feature_row(kBiasTag, 0));
    rows.push_back(feature_row(kPromptTag, prompt_hash(x)));
    rows.push_back(feature_row(kPosTag, std::min<std::uint64_t>(pos / 4, 7)));
    for (int s = 1; s <= k_; ++s) {
      const Token t = history_token(x, y, pos, s);
      rows.push_back(feature_row(kContextTag + static_cast<std::uint64_t>(s),
                                 static_cast<std::uint64_t>(t)));
    }
  }

 private:
  static constexpr std::uint64_t kBiasTag = 0xB1A5000000000001ULL;
  static constexpr std::uint64_t kPromptTag = 0x9A0917D000000002ULL;
  static constexpr std::uint64_t kPosTag = 0x90500B0000000003ULL;
  static constexpr std::uint64_t kContextTag = 0xC0A7E47000000010ULL;

  std::uint32_t feature_row(std::uint64_t tag, std::uint64_t value) const {
    return static_cast<std::uint32_t>(hash_combine(tag, value) % feature_dim_);
  }

  static std::uint64_t prompt_hash(const TokenSeq& x) {
    std::uint64_t h = 0x8C9A2B5E174D3F01ULL;
    for (Token t : x.ids) h = hash_combine(h, static_cast<std::uint64_t>(t));
    return h;
  }

  std::size_t feature_dim_;
};

// Immutable parameter snapshot of a policy; log-probabilities are
// bit-identical across calls.
class FrozenPolicy {
 public:
  explicit FrozenPolicy(const Policy& p) : policy_(p.clone()) {}

  double logprob(const TokenSeq& x, const TokenSeq& y) const {
    return policy_->logprob(x, y);
  }
  const Policy& get() const { return *policy_; }

 private:
  std::shared_ptr<const Policy> policy_;
};

// Central-difference gradient of logprob; verification oracle for
// grad_logprob and the closed-form objective gradients.
inline std::vector<double> finite_diff_grad(const Policy& policy, const TokenSeq& x,
                                            const TokenSeq& y, double h) {
  if (!(h > 0.0)) throw std::domain_error("finite_diff_grad: h must be > 0");
  auto work = policy.clone();
  const std::size_t d = policy.param_count();
  std::vector<double> out(d, 0.0);
  for (std::size_t j = 0; j < d; ++j) {
    const double orig = work->param(j);
    work->write_param(j, orig + h);
    const double lp_plus = work->logprob(x, y);
    work->write_param(j, orig - h);
    const double lp_minus = work->logprob(x, y);
    work->write_param(j, orig);
    out[j] = (lp_plus - lp_minus) / (2.0 * h);
  }
  return out;
}

// ----- checkpoint format -----------------------------------------------
// 8-byte magic, then u32 backend, u32 V, u32 k, u32 aux, u64 d,
// then d little-endian IEEE-754 doubles. Byte-exact round trip.

namespace detail {
constexpr char kCheckpointMagic[8] = {'P', 'O', 'L', 'C', 'K', 'P', 'T', '1'};

inline void put_u32(std::ofstream& os, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  os.write(b, 4);
}
inline void put_u64(std::ofstream& os, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  os.write(b, 8);
}
inline std::uint32_t get_u32(std::ifstream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}
inline std::uint64_t get_u64(std::ifstream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}
}  // namespace detail

inline void save_checkpoint(const Policy& policy, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open checkpoint for writing: " + path);
  os.write(detail::kCheckpointMagic, 8);
  detail::put_u32(os, static_cast<std::uint32_t>(policy.backend()));
  detail::put_u32(os, static_cast<std::uint32_t>(policy.vocab_size()));
  detail::put_u32(os, static_cast<std::uint32_t>(policy.context_order()));
  detail::put_u32(os, policy.aux_field());
  detail::put_u64(os, policy.param_count());
  for (double v : policy.params()) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    detail::put_u64(os, bits);
  }
  if (!os) throw IoError("short write on checkpoint: " + path);
}

inline std::unique_ptr<Policy> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint: " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, detail::kCheckpointMagic, 8) != 0)
    throw IoError("bad checkpoint magic: " + path);
  const auto backend = static_cast<PolicyBackend>(detail::get_u32(is));
  const std::uint32_t vocab = detail::get_u32(is);
  const std::uint32_t k = detail::get_u32(is);
  const std::uint32_t aux = detail::get_u32(is);
  const std::uint64_t d = detail::get_u64(is);

  std::unique_ptr<Policy> policy;
  switch (backend) {
    case PolicyBackend::tabular:
      policy = std::make_unique<TabularPolicy>(vocab, static_cast<int>(k), aux);
      break;
    case PolicyBackend::loglinear:
      policy = std::make_unique<LogLinearPolicy>(vocab, aux, static_cast<int>(k));
      break;
    default:
      throw IoError("unknown policy backend in checkpoint: " + path);
  }
  if (policy->param_count() != d)
    throw IoError("checkpoint dimension mismatch: " + path);

  std::vector<double> theta(d);
  for (std::uint64_t i = 0; i < d; ++i) {
    const std::uint64_t bits = detail::get_u64(is);
    std::memcpy(&theta[i], &bits, 8);
  }
  if (!is) throw IoError("truncated checkpoint: " + path);
  policy->set_params(theta);
  return policy;
}

}  // namespace dposhift
