#pragma once

#include <string>
#include <vector>

#include "gfslt/config.hpp"
#include "gfslt/corpus.hpp"

namespace gfslt {

struct AblateRow {
  std::string name;
  std::vector<double> dev_bleu4;  // per seed, in [0,1]
  double mean = 0.0;
};

struct AblateReport {
  std::vector<AblateRow> vlp_aug_grid;   // pretraining / augmentation conditions
  std::vector<AblateRow> transfer_grid;  // which subnetworks start pretrained
  std::string rendered;                  // printable table (scores x100)
  std::string json;
};

// Runs the pretraining/augmentation grid and the parameter-transfer grid over
// config.ablate_seeds seeds under a matched stage-2 budget. Rows that share a
// condition reuse the same runs. Per-row score is the best-dev BLEU-4 of each
// seed's fine-tune, averaged.
AblateReport run_ablation(const Corpus& corpus, const TrainConfig& base, bool progress);

}  // namespace gfslt
