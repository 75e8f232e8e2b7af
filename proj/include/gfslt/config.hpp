#pragma once

#include <cstdint>
#include <string>

#include "gfslt/augment.hpp"
#include "gfslt/corpus.hpp"
#include "gfslt/model.hpp"

namespace gfslt {

// Every knob of the pipeline in one flat, typed config. One file drives both
// stages, so the pretraining/augmentation/transfer grids are one-flag sweeps.
struct TrainConfig {
  CorpusConfig corpus;
  ModelConfig model;  // vocab_size derived from corpus.gestures

  std::string aug_stage1 = "strong";  // strong | light | none
  std::string aug_stage2 = "strong";

  int pretrain_epochs = 40;
  int pretrain_batch = 16;
  double pretrain_lr_max = 0.01;
  double pretrain_lr_min = 1e-5;
  double pretrain_momentum = 0.9;
  double pretrain_clip_norm = 5.0;  // 0 disables clipping
  double mask_rate = 0.15;          // rho
  double lambda = 0.1;              // restoration weight in L_total
  bool freeze_text_encoder = false;
  bool freeze_text_decoder = false;
  std::string stage1_update = "joint";  // joint | alternating
  bool lc_stopgrad_text_encoder = false;
  std::uint64_t pretrain_seed = 1;

  int finetune_epochs = 200;
  int finetune_batch = 8;
  double finetune_lr_max = 0.01;
  double finetune_lr_min = 1e-5;
  double finetune_momentum = 0.9;
  double finetune_clip_norm = 5.0;
  double label_smoothing = 0.2;
  int eval_interval = 5;
  std::uint64_t finetune_seed = 2;

  std::string transfer_visual_embedding = "pretrained";  // pretrained | random
  std::string transfer_encoder = "pretrained";
  std::string transfer_decoder = "pretrained";
  bool train_visual_embedding = true;
  bool train_encoder = true;
  bool train_decoder = true;

  int beam_size = 5;
  double length_penalty_alpha = 1.0;
  int max_decode_len = 0;  // 0: 2 * longest training sentence + 2

  int ablate_seeds = 3;
  int ablate_pretrain_epochs = 0;  // 0: use pretrain_epochs
  int ablate_finetune_epochs = 0;  // 0: use finetune_epochs

  void validate() const;

  // Canonical key=value rendering of every field; basis of the fingerprints.
  std::string canonical() const;

  // Hash of the full config (identifies a run).
  std::uint64_t fingerprint() const;

  // Hash of the corpus+model sections only: everything that determines
  // checkpoint compatibility. Loading a checkpoint into a config with a
  // different compat fingerprint is refused unless explicitly allowed.
  std::uint64_t compat_fingerprint() const;

  int derived_max_decode_len() const {
    return max_decode_len > 0 ? max_decode_len : 2 * corpus.sentence_max + 2;
  }
};

TrainConfig load_config(const std::string& path);
TrainConfig parse_config_text(const std::string& text);

}  // namespace gfslt
