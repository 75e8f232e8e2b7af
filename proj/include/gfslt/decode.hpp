#pragma once

#include <functional>
#include <vector>

#include "gfslt/vocab.hpp"

namespace gfslt {

// Next-token logits for a BOS-prefixed partial hypothesis.
using StepFn = std::function<std::vector<float>(const TokenSequence& prefix)>;

struct DecodeResult {
  TokenSequence tokens;   // BOS-prefixed; ends with EOS unless truncated at max_len
  double log_prob = 0.0;  // sum of per-step log softmax probabilities
  bool ended_eos = false;
};

// Wu-style length penalty ((5 + length) / 6)^alpha.
double length_penalty(int length, double alpha);

// Argmax decoding; ties pick the lowest token id; stops at EOS or max_len.
DecodeResult greedy_decode(const StepFn& step, int eos_id, int max_len);

// Beam search: every live hypothesis expands by its top beam_size tokens, the
// global top beam_size candidates survive, EOS moves a hypothesis into the
// finished pool. Terminates once beam_size hypotheses are finished or max_len
// is reached; returns the finished hypothesis maximizing
// log_prob / length_penalty(generated length). Score ties prefer the shorter
// sequence, then lexicographic token order.
DecodeResult beam_decode(const StepFn& step, int eos_id, int beam_size, double alpha, int max_len);

}  // namespace gfslt
