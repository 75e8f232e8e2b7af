#include "gfslt/decode.hpp"

#include <algorithm>
#include <cmath>

#include "gfslt/errors.hpp"

namespace gfslt {

namespace {

// Log softmax in double; decode scores must not depend on logit offsets.
std::vector<double> to_log_probs(const std::vector<float>& logits) {
  if (logits.empty()) throw InputError("decode: step function returned no logits");
  double mx = logits[0];
  for (float v : logits) mx = std::max(mx, static_cast<double>(v));
  double sum = 0.0;
  for (float v : logits) sum += std::exp(static_cast<double>(v) - mx);
  const double lse = mx + std::log(sum);
  std::vector<double> lp(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) lp[i] = static_cast<double>(logits[i]) - lse;
  return lp;
}

struct Hypothesis {
  TokenSequence tokens;
  double log_prob = 0.0;
};

// Generated length: tokens excluding BOS, including EOS when present.
int generated_len(const TokenSequence& tokens) { return static_cast<int>(tokens.size()) - 1; }

}  // namespace

double length_penalty(int length, double alpha) {
  if (length < 1) throw ConfigError("length_penalty: length must be >= 1");
  if (alpha < 0) throw ConfigError("length_penalty: alpha must be >= 0");
  return std::pow((5.0 + length) / 6.0, alpha);
}

DecodeResult greedy_decode(const StepFn& step, int eos_id, int max_len) {
  if (max_len < 1) throw ConfigError("greedy_decode: max_len must be >= 1");
  DecodeResult res;
  res.tokens = {Vocabulary::kBos};
  for (int i = 0; i < max_len; ++i) {
    const std::vector<double> lp = to_log_probs(step(res.tokens));
    int best = 0;
    for (std::size_t j = 1; j < lp.size(); ++j)
      if (lp[j] > lp[static_cast<std::size_t>(best)]) best = static_cast<int>(j);
    res.tokens.push_back(best);
    res.log_prob += lp[static_cast<std::size_t>(best)];
    if (best == eos_id) {
      res.ended_eos = true;
      break;
    }
  }
  return res;
}

DecodeResult beam_decode(const StepFn& step, int eos_id, int beam_size, double alpha, int max_len) {
  if (beam_size < 1) throw ConfigError("beam_decode: beam_size must be >= 1");
  if (max_len < 1) throw ConfigError("beam_decode: max_len must be >= 1");

  std::vector<Hypothesis> live{{{Vocabulary::kBos}, 0.0}};
  std::vector<Hypothesis> finished;

  for (int depth = 0; depth < max_len; ++depth) {
    if (live.empty() || static_cast<int>(finished.size()) >= beam_size) break;

    std::vector<Hypothesis> candidates;
    candidates.reserve(live.size() * static_cast<std::size_t>(beam_size));
    for (const auto& hyp : live) {
      const std::vector<double> lp = to_log_probs(step(hyp.tokens));
      // Top beam_size tokens of this hypothesis; ties resolved to lower ids
      // by the stable index order.
      std::vector<int> order(lp.size());
      for (std::size_t j = 0; j < lp.size(); ++j) order[j] = static_cast<int>(j);
      const std::size_t keep = std::min<std::size_t>(static_cast<std::size_t>(beam_size), lp.size());
      std::stable_sort(order.begin(), order.end(),
                       [&](int a, int b) { return lp[static_cast<std::size_t>(a)] > lp[static_cast<std::size_t>(b)]; });
      for (std::size_t j = 0; j < keep; ++j) {
        Hypothesis h = hyp;
        h.tokens.push_back(order[j]);
        h.log_prob += lp[static_cast<std::size_t>(order[j])];
        candidates.push_back(std::move(h));
      }
    }

    // Global top beam_size by cumulative log probability; deterministic ties.
    std::stable_sort(candidates.begin(), candidates.end(), [](const Hypothesis& a, const Hypothesis& b) {
      if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
      return a.tokens < b.tokens;
    });
    if (candidates.size() > static_cast<std::size_t>(beam_size))
      candidates.resize(static_cast<std::size_t>(beam_size));

    live.clear();
    for (auto& h : candidates) {
      if (h.tokens.back() == eos_id)
        finished.push_back(std::move(h));
      else
        live.push_back(std::move(h));
    }
  }

  const bool use_finished = !finished.empty();
  const std::vector<Hypothesis>& pool = use_finished ? finished : live;
  if (pool.empty()) throw InputError("beam_decode: no hypotheses produced");

  const Hypothesis* best = nullptr;
  double best_score = 0.0;
  for (const auto& h : pool) {
    const double score = h.log_prob / length_penalty(generated_len(h.tokens), alpha);
    if (!best || score > best_score ||
        (score == best_score && (h.tokens.size() < best->tokens.size() ||
                                 (h.tokens.size() == best->tokens.size() && h.tokens < best->tokens)))) {
      best = &h;
      best_score = score;
    }
  }

  DecodeResult res;
  res.tokens = best->tokens;
  res.log_prob = best->log_prob;
  res.ended_eos = use_finished;
  return res;
}

}  // namespace gfslt
