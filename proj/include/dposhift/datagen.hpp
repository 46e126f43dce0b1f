#pragma once

// Synthetic preference corpora with a controllable chosen/rejected similarity
// knob. Chosen responses are drawn from a fixed random tabular policy (so SFT
// has a well-defined optimum); rejected responses copy each chosen token with
// probability s and resample uniformly otherwise. Token-level overlap is a
// deliberate desk-scale stand-in for semantic similarity: it is what makes
// the chosen/rejected gradient dot products positive on average.

#include <cstdint>
#include <vector>

#include "dposhift/core.hpp"
#include "dposhift/policy.hpp"
#include "dposhift/rng.hpp"

namespace dposhift {

struct CorpusSpec {
  std::size_t vocab_size = 64;
  std::size_t num_prompts = 1100;
  std::size_t prompt_len = 8;
  std::size_t pairs_per_prompt = 2;
  std::size_t response_len = 24;
  double similarity = 0.9;  // expected fraction of copied positions
  std::uint64_t seed = 0;

  std::size_t total_records() const { return num_prompts * pairs_per_prompt; }

  void validate() const {
    if (vocab_size < 2) throw std::domain_error("CorpusSpec: vocab_size must be >= 2");
    if (num_prompts < 1 || prompt_len < 1 || pairs_per_prompt < 1 || response_len < 1)
      throw std::domain_error("CorpusSpec: all counts and lengths must be >= 1");
    if (!(similarity >= 0.0 && similarity <= 1.0))
      throw std::domain_error("CorpusSpec: similarity must be in [0, 1]");
  }
};

// The fixed generating distribution behind the chosen responses: a random
// order-1 tabular policy whose logits combine a shared per-token bias with
// per-context noise, so the marginal over tokens is skewed the way natural
// token frequencies are.
inline TabularPolicy ground_truth_policy(const CorpusSpec& spec) {
  spec.validate();
  TabularPolicy truth(spec.vocab_size, /*k=*/1, /*prompt_buckets=*/1);
  Rng rng = derive_rng(spec.seed, "ground_truth", 0);
  std::vector<double> token_bias(spec.vocab_size);
  for (double& v : token_bias) v = 2.0 * rng.normal();
  std::vector<double> theta(truth.param_count());
  for (std::size_t i = 0; i < theta.size(); ++i)
    theta[i] = token_bias[i % spec.vocab_size] + rng.normal();
  truth.set_params(theta);
  return truth;
}

inline std::vector<PreferenceTriple> generate_corpus(const CorpusSpec& spec) {
  spec.validate();
  const TabularPolicy truth = ground_truth_policy(spec);
  const auto V = static_cast<std::uint32_t>(spec.vocab_size);

  std::vector<PreferenceTriple> records;
  records.reserve(spec.total_records());
  for (std::size_t r = 0; r < spec.total_records(); ++r) {
    const std::size_t prompt_index = r / spec.pairs_per_prompt;

    PreferenceTriple rec;
    rec.id = static_cast<std::int64_t>(r);

    Rng prompt_rng = derive_rng(spec.seed, "prompt", prompt_index);
    rec.prompt.ids.reserve(spec.prompt_len);
    for (std::size_t i = 0; i < spec.prompt_len; ++i)
      rec.prompt.ids.push_back(static_cast<Token>(prompt_rng.bounded(V)));

    Rng chosen_rng = derive_rng(spec.seed, "chosen", r);
    rec.chosen = truth.sample(rec.prompt, spec.response_len, chosen_rng);

    Rng rejected_rng = derive_rng(spec.seed, "rejected", r);
    rec.rejected.ids.reserve(spec.response_len);
    for (Token t : rec.chosen.ids) {
      if (rejected_rng.uniform01() < spec.similarity) {
        rec.rejected.ids.push_back(t);
      } else {
        rec.rejected.ids.push_back(static_cast<Token>(rejected_rng.bounded(V)));
      }
    }
    records.push_back(std::move(rec));
  }
  return records;
}

// Mean per-position token agreement between chosen and rejected; positions
// beyond the shorter response are ignored.
inline double corpus_similarity(const std::vector<PreferenceTriple>& records) {
  if (records.empty()) throw std::domain_error("corpus_similarity: empty corpus");
  std::size_t agree = 0, total = 0;
  for (const auto& r : records) {
    const std::size_t n = std::min(r.chosen.size(), r.rejected.size());
    for (std::size_t i = 0; i < n; ++i)
      if (r.chosen.ids[i] == r.rejected.ids[i]) ++agree;
    total += n;
  }
  if (total == 0) throw std::domain_error("corpus_similarity: no comparable positions");
  return static_cast<double>(agree) / static_cast<double>(total);
}

}  // namespace dposhift
