#include "gfslt/ablate.hpp"

#include <cstdio>

#include <json.hpp>

#include "gfslt/trainer.hpp"

namespace gfslt {

namespace {

struct Condition {
  std::string name;
  bool vlp;
  std::string aug_s1;  // stage-1 augmentation when vlp
  std::string aug_s2;
  std::string t_vembed = "pretrained";
  std::string t_enc = "pretrained";
  std::string t_dec = "pretrained";
};

TrainConfig condition_config(const TrainConfig& base, const Condition& c, int seed_index) {
  TrainConfig cfg = base;
  cfg.aug_stage1 = c.aug_s1;
  cfg.aug_stage2 = c.aug_s2;
  cfg.transfer_visual_embedding = c.t_vembed;
  cfg.transfer_encoder = c.t_enc;
  cfg.transfer_decoder = c.t_dec;
  if (base.ablate_pretrain_epochs > 0) cfg.pretrain_epochs = base.ablate_pretrain_epochs;
  if (base.ablate_finetune_epochs > 0) cfg.finetune_epochs = base.ablate_finetune_epochs;
  cfg.pretrain_seed = base.pretrain_seed + static_cast<std::uint64_t>(seed_index);
  cfg.finetune_seed = base.finetune_seed + static_cast<std::uint64_t>(seed_index);
  return cfg;
}

double run_condition(const Corpus& corpus, const TrainConfig& cfg, const Checkpoint* vlp) {
  GfsltInstance inst = make_gfslt(cfg, cfg.finetune_seed);
  if (vlp) apply_transfer(inst.store, *vlp, plan_from_config(cfg));
  FinetuneResult result = finetune(corpus, cfg, inst);
  return result.best_epoch >= 0 ? result.best_dev_bleu4 : 0.0;
}

}  // namespace

AblateReport run_ablation(const Corpus& corpus, const TrainConfig& base, bool progress) {
  // Grid rows. "Off" stage augmentation means the lightweight crop-only
  // preset, matching the untreated baseline conditions.
  const Condition kBaseline{"no VLP", false, "light", "light"};
  const Condition kVlpOnly{"VLP", true, "light", "light"};
  const Condition kVlpAug1{"VLP + Aug-S1", true, "strong", "light"};
  const Condition kAug2Only{"Aug-S2 only", false, "light", "strong"};
  const Condition kFull{"VLP + Aug-S1 + Aug-S2", true, "strong", "strong"};
  // Transfer grid, all under the full augmentation protocol.
  Condition kVEmbedOnly{"V-Embed only", true, "strong", "strong"};
  kVEmbedOnly.t_enc = kVEmbedOnly.t_dec = "random";
  Condition kVEmbedEnc{"V-Embed + T-Encoder", true, "strong", "strong"};
  kVEmbedEnc.t_dec = "random";
  Condition kDecoderOnly{"T-Decoder only", true, "strong", "strong"};
  kDecoderOnly.t_vembed = kDecoderOnly.t_enc = "random";
  Condition kAllRandom{"all random", true, "strong", "strong"};
  kAllRandom.t_vembed = kAllRandom.t_enc = kAllRandom.t_dec = "random";

  AblateRow baseline{kBaseline.name, {}, 0};
  AblateRow vlp_only{kVlpOnly.name, {}, 0};
  AblateRow vlp_aug1{kVlpAug1.name, {}, 0};
  AblateRow aug2_only{kAug2Only.name, {}, 0};
  AblateRow full{kFull.name, {}, 0};
  AblateRow vembed{kVEmbedOnly.name, {}, 0};
  AblateRow vembed_enc{kVEmbedEnc.name, {}, 0};
  AblateRow decoder_only{kDecoderOnly.name, {}, 0};

  for (int k = 0; k < base.ablate_seeds; ++k) {
    if (progress) std::fprintf(stderr, "[ablate] seed %d: pretraining (light augmentation)\n", k);
    const TrainConfig cfg_vlp_light = condition_config(base, kVlpOnly, k);
    const Checkpoint p_light = pretrain(corpus, cfg_vlp_light).checkpoint;
    if (progress) std::fprintf(stderr, "[ablate] seed %d: pretraining (strong augmentation)\n", k);
    const TrainConfig cfg_vlp_strong = condition_config(base, kFull, k);
    const Checkpoint p_strong = pretrain(corpus, cfg_vlp_strong).checkpoint;

    auto run = [&](const Condition& c, const Checkpoint* ckpt) {
      if (progress) std::fprintf(stderr, "[ablate] seed %d: fine-tune '%s'\n", k, c.name.c_str());
      return run_condition(corpus, condition_config(base, c, k), ckpt);
    };
    baseline.dev_bleu4.push_back(run(kBaseline, nullptr));
    vlp_only.dev_bleu4.push_back(run(kVlpOnly, &p_light));
    vlp_aug1.dev_bleu4.push_back(run(kVlpAug1, &p_strong));
    aug2_only.dev_bleu4.push_back(run(kAug2Only, nullptr));
    full.dev_bleu4.push_back(run(kFull, &p_strong));
    vembed.dev_bleu4.push_back(run(kVEmbedOnly, &p_strong));
    vembed_enc.dev_bleu4.push_back(run(kVEmbedEnc, &p_strong));
    decoder_only.dev_bleu4.push_back(run(kDecoderOnly, &p_strong));
  }

  auto finalize = [](AblateRow& row) {
    double sum = 0;
    for (double v : row.dev_bleu4) sum += v;
    row.mean = row.dev_bleu4.empty() ? 0.0 : sum / static_cast<double>(row.dev_bleu4.size());
  };

  AblateReport report;
  report.vlp_aug_grid = {baseline, vlp_only, vlp_aug1, aug2_only, full};
  report.transfer_grid = {aug2_only, vembed, vembed_enc, decoder_only, full};
  report.transfer_grid[0].name = kAllRandom.name + " (= Aug-S2 only)";
  report.transfer_grid[4].name = "all pretrained (= full)";
  for (auto& row : report.vlp_aug_grid) finalize(row);
  for (auto& row : report.transfer_grid) finalize(row);

  std::string out;
  auto render_rows = [&](const char* title, const std::vector<AblateRow>& rows) {
    out += title;
    out += "\n";
    for (const auto& row : rows) {
      char buf[160];
      std::string per_seed;
      for (double v : row.dev_bleu4) {
        char b2[32];
        std::snprintf(b2, sizeof(b2), " %6.2f", v * 100.0);
        per_seed += b2;
      }
      std::snprintf(buf, sizeof(buf), "  %-32s  mean %6.2f  |%s\n", row.name.c_str(),
                    row.mean * 100.0, per_seed.c_str());
      out += buf;
    }
  };
  render_rows("dev BLEU-4 (x100), pretraining / augmentation grid:", report.vlp_aug_grid);
  render_rows("dev BLEU-4 (x100), parameter transfer grid:", report.transfer_grid);
  report.rendered = out;

  nlohmann::json j;
  auto rows_json = [](const std::vector<AblateRow>& rows) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& row : rows)
      arr.push_back({{"name", row.name}, {"mean_dev_bleu4", row.mean}, {"per_seed", row.dev_bleu4}});
    return arr;
  };
  j["vlp_aug_grid"] = rows_json(report.vlp_aug_grid);
  j["transfer_grid"] = rows_json(report.transfer_grid);
  j["seeds"] = base.ablate_seeds;
  report.json = j.dump(2);
  return report;
}

}  // namespace gfslt
