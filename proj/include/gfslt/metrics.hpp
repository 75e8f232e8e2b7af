#pragma once

#include <vector>

#include "gfslt/vocab.hpp"

namespace gfslt {

// Hypothesis/reference token lists with specials already stripped.
struct EvalPair {
  std::vector<int> hyp;
  std::vector<int> ref;
};

// Drop BOS/EOS/PAD/MASK/CLS; scoring runs over content tokens only.
std::vector<int> strip_specials(const TokenSequence& tokens);

// Corpus-level BLEU-n in [0,1]: clipped k-gram precisions for k <= n
// aggregated over all pairs, geometric mean, brevity penalty
// exp(1 - ref_len/hyp_len) when the hypothesis side is shorter. Any zero
// precision zeroes the score; no smoothing.
double bleu_n(const std::vector<EvalPair>& pairs, int n);

// Mean per-pair LCS F-measure with beta = 1.2.
double rouge_l(const std::vector<EvalPair>& pairs, double beta = 1.2);

}  // namespace gfslt
