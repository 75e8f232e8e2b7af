#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "gfslt/ops.hpp"
#include "gfslt/rng.hpp"
#include "gfslt/vocab.hpp"

namespace gfslt {

struct MaskedSentence {
  TokenSequence corrupted;
  TokenSequence original;
  std::vector<int> masked_positions;  // sentence indices, sorted ascending
};

// BERT-style corruption: select max(1, floor(rho * maskable)) non-special
// positions without replacement; 80% become MASK, 10% a random other
// non-special token, 10% stay intact but still count toward the loss.
inline MaskedSentence mask_sentence(const TokenSequence& tokens, double rho, Rng& rng,
                                    int vocab_size) {
  if (rho <= 0.0 || rho >= 1.0) throw ConfigError("mask_sentence: rho must be in (0,1)");
  std::vector<int> maskable;
  for (std::size_t i = 0; i < tokens.size(); ++i)
    if (tokens[i] >= Vocabulary::kNumSpecials) maskable.push_back(static_cast<int>(i));
  if (maskable.empty()) throw InputError("mask_sentence: no maskable (non-special) tokens");

  const int want = std::max(1, static_cast<int>(std::floor(rho * static_cast<double>(maskable.size()))));
  // Partial Fisher-Yates: the first `want` entries become the selection.
  for (int i = 0; i < want; ++i) {
    const int j = i + static_cast<int>(rng.uniform_u32(static_cast<std::uint32_t>(maskable.size() - static_cast<std::size_t>(i))));
    std::swap(maskable[static_cast<std::size_t>(i)], maskable[static_cast<std::size_t>(j)]);
  }
  MaskedSentence out;
  out.original = tokens;
  out.corrupted = tokens;
  out.masked_positions.assign(maskable.begin(), maskable.begin() + want);
  std::sort(out.masked_positions.begin(), out.masked_positions.end());

  const int n_regular = vocab_size - Vocabulary::kNumSpecials;
  for (int pos : out.masked_positions) {
    const double u = rng.uniform();
    if (u < 0.8) {
      out.corrupted[static_cast<std::size_t>(pos)] = Vocabulary::kMask;
    } else if (u < 0.9) {
      if (n_regular > 1) {
        // Uniform over non-special tokens excluding the original.
        int pick = static_cast<int>(rng.uniform_u32(static_cast<std::uint32_t>(n_regular - 1)));
        int token = Vocabulary::kNumSpecials + pick;
        if (token >= tokens[static_cast<std::size_t>(pos)]) ++token;
        out.corrupted[static_cast<std::size_t>(pos)] = token;
      }
    }
    // else: kept intact, still a masked position for the loss
  }
  return out;
}

// Symmetric InfoNCE over in-batch pairings: scaled cosine logits, cross
// entropy against the diagonal both video->text and text->video, averaged.
template <class T>
Tensor<T> contrastive_loss(Tape<T>& tape, const Tensor<T>& v, const Tensor<T>& t,
                           const Tensor<T>& scale) {
  if (v.rank() != 2 || t.rank() != 2 || v.shape != t.shape)
    throw DimError("contrastive_loss: v " + shape_str(v.shape) + " vs t " + shape_str(t.shape));
  const int n = v.dim(0);
  if (n < 1) throw InputError("contrastive_loss: empty batch");
  for (int r = 0; r < 2 * n; ++r) {
    const Tensor<T>& m = r < n ? v : t;
    const T* row = m.ptr() + static_cast<std::int64_t>(r % n) * m.dim(1);
    double sq = 0.0;
    for (int j = 0; j < m.dim(1); ++j) sq += static_cast<double>(row[j]) * row[j];
    if (std::fabs(std::sqrt(sq) - 1.0) > 1e-5)
      throw InputError("contrastive_loss: rows must be unit-norm");
  }

  std::vector<int> diag(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) diag[static_cast<std::size_t>(i)] = i;

  Tensor<T> logits = mul_scalar_t(tape, matmul_nt(tape, v, t), scale);
  Tensor<T> row_ce = mean_all(tape, pick(tape, log_softmax_rows(tape, logits), diag));
  Tensor<T> col_ce = mean_all(tape, pick(tape, log_softmax_rows(tape, transpose(tape, logits)), diag));
  return mul_scalar(tape, add(tape, row_ce, col_ce), -0.5);
}

// Mean cross entropy over masked positions only. Logits come from a
// teacher-forced decode of the original sentence, so the prediction for
// sentence position p sits at logits row p - 1.
template <class T>
Tensor<T> restoration_loss(Tape<T>& tape, const Tensor<T>& logits, const TokenSequence& original,
                           const std::vector<int>& masked_positions) {
  if (masked_positions.empty()) throw InputError("restoration_loss: empty mask set");
  const int rows = logits.dim(0);
  if (rows != static_cast<int>(original.size()) - 1)
    throw DimError("restoration_loss: logits " + shape_str(logits.shape) + " for sentence of " +
                   std::to_string(original.size()) + " tokens");
  std::vector<int> gold(static_cast<std::size_t>(rows));
  for (int r = 0; r < rows; ++r) gold[static_cast<std::size_t>(r)] = original[static_cast<std::size_t>(r) + 1];

  std::vector<T> weights(static_cast<std::size_t>(rows), T(0));
  const T w = T(1) / static_cast<T>(masked_positions.size());
  for (int pos : masked_positions) {
    if (pos < 1 || pos >= static_cast<int>(original.size()))
      throw IndexError("restoration_loss: masked position " + std::to_string(pos) + " out of range");
    weights[static_cast<std::size_t>(pos - 1)] = w;
  }
  Tensor<T> picked = pick(tape, log_softmax_rows(tape, logits), gold);
  return mul_scalar(tape, dot_const(tape, picked, std::move(weights)), -1.0);
}

// Label-smoothed cross entropy averaged over non-PAD target positions:
// (1 - eps) on the gold token, eps/(V-1) on every other token.
template <class T>
Tensor<T> translation_loss(Tape<T>& tape, const Tensor<T>& logits, const TokenSequence& target,
                           double eps_smooth) {
  if (eps_smooth < 0.0 || eps_smooth >= 1.0)
    throw ConfigError("translation_loss: label smoothing must be in [0,1)");
  if (target.size() < 2 || target.front() != Vocabulary::kBos)
    throw InputError("translation_loss: target must begin with BOS");
  const int rows = logits.dim(0);
  const int vocab = logits.dim(1);
  if (rows != static_cast<int>(target.size()) - 1)
    throw DimError("translation_loss: logits " + shape_str(logits.shape) + " for target of " +
                   std::to_string(target.size()) + " tokens");

  bool seen_eos = false;
  std::vector<int> gold(static_cast<std::size_t>(rows));
  std::vector<T> weights(static_cast<std::size_t>(rows), T(0));
  int live = 0;
  for (int r = 0; r < rows; ++r) {
    const int tok = target[static_cast<std::size_t>(r) + 1];
    gold[static_cast<std::size_t>(r)] = tok;
    if (tok != Vocabulary::kPad) {
      weights[static_cast<std::size_t>(r)] = T(1);
      ++live;
      if (tok == Vocabulary::kEos) seen_eos = true;
    }
  }
  if (!seen_eos) throw InputError("translation_loss: target must contain EOS");
  if (live == 0) throw InputError("translation_loss: no scored positions");
  for (auto& w : weights) w /= static_cast<T>(live);

  Tensor<T> lsm = log_softmax_rows(tape, logits);
  Tensor<T> picked = pick(tape, lsm, gold);
  const double off_mass = eps_smooth / static_cast<double>(vocab - 1);
  const double gold_coef = (1.0 - eps_smooth) - off_mass;
  Tensor<T> per_pos = add(tape, mul_scalar(tape, picked, gold_coef),
                          mul_scalar(tape, row_sum(tape, lsm), off_mass));
  return mul_scalar(tape, dot_const(tape, per_pos, std::move(weights)), -1.0);
}

// Stage-1 combination L_total = L_s + lambda * L_c.
template <class T>
Tensor<T> stage1_total(Tape<T>& tape, const Tensor<T>& contrastive, const Tensor<T>& restoration,
                       double lambda) {
  if (lambda < 0.0) throw ConfigError("stage1_total: lambda must be >= 0");
  return add(tape, contrastive, mul_scalar(tape, restoration, lambda));
}

}  // namespace gfslt
