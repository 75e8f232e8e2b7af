#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "gfslt/augment.hpp"
#include "gfslt/checkpoint.hpp"
#include "gfslt/config.hpp"
#include "gfslt/corpus.hpp"
#include "gfslt/decode.hpp"
#include "gfslt/metrics.hpp"
#include "gfslt/model.hpp"
#include "gfslt/objectives.hpp"
#include "gfslt/optim.hpp"

namespace gfslt {

// ---------------------------------------------------------------------------
// batch samples and loss graphs
// ---------------------------------------------------------------------------

struct Stage1Sample {
  VideoClip clip;  // already augmented
  TokenSequence sentence;
  MaskedSentence masked;
};

struct Stage2Sample {
  VideoClip clip;  // already augmented
  TokenSequence sentence;
};

struct Stage1Options {
  double lambda = 0.1;
  bool lc_stopgrad_text_encoder = false;
};

struct Stage1Stats {
  double l_s = 0.0, l_c = 0.0, l_total = 0.0;
};

// Contrastive + restoration graph for one sample. Returns the projected unit
// vectors and the per-sample restoration loss; batch-level ops are assembled
// by the caller (on the same tape for checking, on a head tape in training).
template <class T>
struct Stage1Forward {
  Tensor<T> v, t;  // 1 x d_proj
  Tensor<T> lc;    // [1]
};

template <class T>
Stage1Forward<T> stage1_sample_forward(Tape<T>& tape, const ParamView<T>& pv, const Stage1Model& m,
                                       const Stage1Sample& sample, const Stage1Options& opt) {
  Stage1Forward<T> out;
  auto venc = visual_encode(tape, pv, m.ve, m.cfg, sample.clip);
  auto tenc = text_encode(tape, pv, m.te, m.cfg, sample.sentence);
  auto proj = project(tape, pv, m.heads, venc.cls, tenc.eos);
  out.v = proj.v;
  out.t = proj.t;

  auto cenc = text_encode(tape, pv, m.te, m.cfg, sample.masked.corrupted);
  Tensor<T> memory = opt.lc_stopgrad_text_encoder ? detach(cenc.seq) : cenc.seq;
  TokenSequence prefix(sample.masked.original.begin(), sample.masked.original.end() - 1);
  Tensor<T> logits = text_decode(tape, pv, m.td, m.cfg, prefix, memory, cenc.key_valid);
  out.lc = restoration_loss(tape, logits, sample.masked.original, sample.masked.masked_positions);
  return out;
}

// Whole stage-1 batch on a single tape: L_s + lambda * mean(L_c). This is the
// graph the finite-difference checker replays in double precision.
template <class T>
Tensor<T> stage1_batch_loss(Tape<T>& tape, const ParamView<T>& pv, const Stage1Model& m,
                            const std::vector<Stage1Sample>& batch, const Stage1Options& opt,
                            Stage1Stats* stats = nullptr) {
  if (batch.empty()) throw InputError("stage1_batch_loss: empty batch");
  std::vector<Tensor<T>> vs, ts, lcs;
  for (const auto& sample : batch) {
    auto fwd = stage1_sample_forward(tape, pv, m, sample, opt);
    vs.push_back(fwd.v);
    ts.push_back(fwd.t);
    lcs.push_back(fwd.lc);
  }
  Tensor<T> scale = exp_clamped(tape, pv[m.heads.logit_scale], 100.0);
  Tensor<T> ls = contrastive_loss(tape, stack_rows(tape, vs), stack_rows(tape, ts), scale);
  Tensor<T> lc = mean_all(tape, stack_rows(tape, lcs));
  Tensor<T> total = stage1_total(tape, ls, lc, opt.lambda);
  if (stats) {
    stats->l_s = static_cast<double>(ls.item());
    stats->l_c = static_cast<double>(lc.item());
    stats->l_total = static_cast<double>(total.item());
  }
  return total;
}

template <class T>
Tensor<T> stage2_sample_loss(Tape<T>& tape, const ParamView<T>& pv, const GfsltModel& m,
                             const Stage2Sample& sample, double label_smoothing) {
  auto venc = visual_encode(tape, pv, m.ve, m.cfg, sample.clip);
  TokenSequence prefix(sample.sentence.begin(), sample.sentence.end() - 1);
  Tensor<T> logits = text_decode(tape, pv, m.td, m.cfg, prefix, venc.seq, venc.key_valid);
  return translation_loss(tape, logits, sample.sentence, label_smoothing);
}

template <class T>
Tensor<T> stage2_batch_loss(Tape<T>& tape, const ParamView<T>& pv, const GfsltModel& m,
                            const std::vector<Stage2Sample>& batch, double label_smoothing,
                            double* mean_loss = nullptr) {
  if (batch.empty()) throw InputError("stage2_batch_loss: empty batch");
  std::vector<Tensor<T>> losses;
  for (const auto& sample : batch)
    losses.push_back(stage2_sample_loss(tape, pv, m, sample, label_smoothing));
  Tensor<T> mean = mean_all(tape, stack_rows(tape, losses));
  if (mean_loss) *mean_loss = static_cast<double>(mean.item());
  return mean;
}

// ---------------------------------------------------------------------------
// transfer
// ---------------------------------------------------------------------------

enum class TransferSource { kPretrained, kRandom };

// Parameter groups by name prefix: the visual embedding (frame CNN + temporal
// blocks + bridge), the transformer encoder (CLS token + layers + final LN)
// and the text decoder. Projection heads and the stage-1 text encoder are
// never carried into the translation model.
struct TransferPlan {
  TransferSource visual_embedding = TransferSource::kPretrained;
  TransferSource encoder = TransferSource::kPretrained;
  TransferSource decoder = TransferSource::kPretrained;
  bool train_visual_embedding = true;
  bool train_encoder = true;
  bool train_decoder = true;
};

TransferPlan plan_from_config(const TrainConfig& config);

// Copy pretrained-sourced tensors bitwise from the checkpoint into a freshly
// initialized target store; random-sourced groups keep their fresh values.
void apply_transfer(ParameterStore& target, const Checkpoint& source, const TransferPlan& plan);

std::vector<std::uint8_t> stage2_trainable_mask(const ParameterStore& store, const TransferPlan& plan);

// ---------------------------------------------------------------------------
// training loops
// ---------------------------------------------------------------------------

struct PretrainResult {
  Checkpoint checkpoint;
  std::vector<std::string> log_lines;            // one JSON object per epoch
  double final_retrieval_acc_dev = 0.0;
};

// Stage 1. The run schedule always spans config.pretrain_epochs; run_epoch_limit
// (when >= 0) stops early after that many epochs for checkpoint/resume tests.
PretrainResult pretrain(const Corpus& corpus, const TrainConfig& config,
                        const Checkpoint* resume = nullptr, int run_epoch_limit = -1);

struct GfsltInstance {
  ParameterStore store;
  GfsltModel model;
};

// Fresh stage-2 model; parameter initialization is a pure function of the seed.
GfsltInstance make_gfslt(const TrainConfig& config, std::uint64_t init_seed);

struct EvalScores {
  double bleu1 = 0, bleu2 = 0, bleu3 = 0, bleu4 = 0, rouge_l = 0;
};

struct FinetuneResult {
  Checkpoint best, final;
  std::vector<std::string> log_lines;  // one JSON object per eval
  double best_dev_bleu4 = 0.0;
  int best_epoch = -1;
  double final_train_loss = 0.0;
};

FinetuneResult finetune(const Corpus& corpus, const TrainConfig& config, GfsltInstance& instance,
                        int run_epoch_limit = -1);

// ---------------------------------------------------------------------------
// inference / evaluation
// ---------------------------------------------------------------------------

struct DecodeConfig {
  bool greedy = false;
  int beam_size = 5;
  double alpha = 1.0;
  int max_len = 18;
};

TokenSequence translate_clip(const ParameterStore& store, const GfsltModel& model,
                             const VideoClip& clip, const DecodeConfig& decode);

EvalScores evaluate_records(const ParameterStore& store, const GfsltModel& model,
                            const std::vector<CorpusRecord>& records, const DecodeConfig& decode,
                            std::vector<TokenSequence>* hypotheses = nullptr);

// Dev-set in-batch retrieval accuracy for a stage-1 model (mean over batches
// of `batch` records; the trailing partial batch is dropped).
double retrieval_accuracy(const ParameterStore& store, const Stage1Model& model,
                          const std::vector<CorpusRecord>& records, int batch);

// Deep copy helpers used when snapshotting checkpoints.
ParameterStore clone_store(const ParameterStore& store);

// Exact restore: every parameter of the target must exist, shape-compatible,
// in the checkpoint (used when loading a model for inference).
void restore_params(ParameterStore& target, const Checkpoint& source);

}  // namespace gfslt
