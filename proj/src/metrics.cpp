#include "gfslt/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <unordered_map>

#include "gfslt/errors.hpp"

namespace gfslt {

std::vector<int> strip_specials(const TokenSequence& tokens) {
  std::vector<int> out;
  out.reserve(tokens.size());
  for (int id : tokens)
    if (id >= Vocabulary::kNumSpecials) out.push_back(id);
  return out;
}

namespace {

// Token ids fit in 16 bits, so an n-gram (n <= 4) packs into one u64 key.
std::uint64_t pack_ngram(const std::vector<int>& tokens, std::size_t start, int n) {
  std::uint64_t key = 1;  // length marker keeps (a) and (a,0,0) distinct
  for (int k = 0; k < n; ++k)
    key = (key << 16) | static_cast<std::uint64_t>(static_cast<std::uint16_t>(tokens[start + static_cast<std::size_t>(k)]));
  return key;
}

std::unordered_map<std::uint64_t, int> ngram_counts(const std::vector<int>& tokens, int n) {
  std::unordered_map<std::uint64_t, int> counts;
  if (static_cast<int>(tokens.size()) >= n)
    for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= tokens.size(); ++i)
      ++counts[pack_ngram(tokens, i, n)];
  return counts;
}

}  // namespace

double bleu_n(const std::vector<EvalPair>& pairs, int n) {
  if (n < 1 || n > 4) throw ConfigError("bleu_n: n must be in 1..4");
  if (pairs.empty()) throw InputError("bleu_n: empty pair list");

  std::int64_t hyp_len = 0, ref_len = 0;
  std::vector<std::int64_t> clipped(static_cast<std::size_t>(n), 0);
  std::vector<std::int64_t> total(static_cast<std::size_t>(n), 0);
  for (const auto& pair : pairs) {
    hyp_len += static_cast<std::int64_t>(pair.hyp.size());
    ref_len += static_cast<std::int64_t>(pair.ref.size());
    for (int k = 1; k <= n; ++k) {
      const auto hyp_counts = ngram_counts(pair.hyp, k);
      const auto ref_counts = ngram_counts(pair.ref, k);
      for (const auto& [gram, count] : hyp_counts) {
        const auto it = ref_counts.find(gram);
        if (it != ref_counts.end()) clipped[static_cast<std::size_t>(k - 1)] += std::min(count, it->second);
      }
      const std::int64_t grams = static_cast<std::int64_t>(pair.hyp.size()) - k + 1;
      if (grams > 0) total[static_cast<std::size_t>(k - 1)] += grams;
    }
  }

  if (hyp_len == 0) return 0.0;
  double log_precision = 0.0;
  for (int k = 0; k < n; ++k) {
    if (total[static_cast<std::size_t>(k)] == 0 || clipped[static_cast<std::size_t>(k)] == 0) return 0.0;
    log_precision += std::log(static_cast<double>(clipped[static_cast<std::size_t>(k)]) /
                              static_cast<double>(total[static_cast<std::size_t>(k)]));
  }
  const double bp = hyp_len > ref_len
                        ? 1.0
                        : std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(hyp_len));
  return bp * std::exp(log_precision / n);
}

double rouge_l(const std::vector<EvalPair>& pairs, double beta) {
  if (pairs.empty()) throw InputError("rouge_l: empty pair list");
  const double b2 = beta * beta;
  double sum = 0.0;
  for (const auto& pair : pairs) {
    if (pair.hyp.empty() || pair.ref.empty()) continue;  // pair scores 0
    // LCS length via the two-row dynamic program.
    const std::size_t m = pair.ref.size();
    std::vector<int> prev(m + 1, 0), cur(m + 1, 0);
    for (std::size_t i = 0; i < pair.hyp.size(); ++i) {
      for (std::size_t j = 0; j < m; ++j) {
        cur[j + 1] = pair.hyp[i] == pair.ref[j] ? prev[j] + 1 : std::max(prev[j + 1], cur[j]);
      }
      std::swap(prev, cur);
    }
    const double lcs = prev[m];
    const double p = lcs / static_cast<double>(pair.hyp.size());
    const double r = lcs / static_cast<double>(pair.ref.size());
    if (p > 0.0 || r > 0.0) sum += ((1.0 + b2) * p * r) / (r + b2 * p);
  }
  return sum / static_cast<double>(pairs.size());
}

}  // namespace gfslt
