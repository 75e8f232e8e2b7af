#include "gfslt/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numeric>

#include <json.hpp>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace gfslt {

namespace {

int hardware_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

enum class Group { kVisualEmbed, kEncoder, kDecoder, kTextEncoder, kHeads };

bool has_prefix(const std::string& name, const char* prefix) {
  return name.rfind(prefix, 0) == 0;
}

Group classify(const std::string& name) {
  if (has_prefix(name, "ve.embed.")) return Group::kVisualEmbed;
  if (has_prefix(name, "ve.enc.")) return Group::kEncoder;
  if (has_prefix(name, "td.")) return Group::kDecoder;
  if (has_prefix(name, "te.")) return Group::kTextEncoder;
  if (has_prefix(name, "heads.")) return Group::kHeads;
  throw TransferError("parameter '" + name + "' belongs to no known group");
}

// Per-step gradient workspace: one sink per batch sample plus one for the
// batch-level head ops. Reducing sample sinks in index order makes gradients
// independent of how samples were scheduled over threads.
struct StepWorkspace {
  std::vector<GradSink> sample_sinks;
  GradSink head_sink;
  GradSink total;
  bool parallel;

  StepWorkspace(const ParameterStore& store, int batch, bool parallel_mode)
      : head_sink(store), total(store), parallel(parallel_mode) {
    sample_sinks.reserve(static_cast<std::size_t>(batch));
    for (int i = 0; i < batch; ++i) sample_sinks.emplace_back(store);
  }

  void zero(int used) {
    for (int i = 0; i < used; ++i) sample_sinks[static_cast<std::size_t>(i)].zero();
    head_sink.zero();
    total.zero();
  }

  void reduce(int used, bool with_head) {
    if (with_head) total.accumulate(head_sink);
    for (int i = 0; i < used; ++i) total.accumulate(sample_sinks[static_cast<std::size_t>(i)]);
  }
};

template <class Fn>
void for_samples(bool parallel, int n, Fn&& fn) {
  std::exception_ptr err;
#ifdef _OPENMP
  if (parallel && n > 1) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < n; ++i) {
      try {
        fn(i);
      } catch (...) {
#pragma omp critical
        if (!err) err = std::current_exception();
      }
    }
    if (err) std::rethrow_exception(err);
    return;
  }
#endif
  for (int i = 0; i < n; ++i) fn(i);
}

Stage1Stats run_stage1_step_joint(ParameterStore& store, const Stage1Model& m,
                                  const std::vector<Stage1Sample>& batch,
                                  const Stage1Options& opt, StepWorkspace& ws) {
  const int b = static_cast<int>(batch.size());
  std::vector<std::unique_ptr<TapeF>> tapes(static_cast<std::size_t>(b));
  std::vector<Stage1Forward<float>> fwd(static_cast<std::size_t>(b));
  for_samples(ws.parallel, b, [&](int i) {
    tapes[static_cast<std::size_t>(i)] = std::make_unique<TapeF>();
    ParamView<float> pv = bind(store, &ws.sample_sinks[static_cast<std::size_t>(i)]);
    fwd[static_cast<std::size_t>(i)] =
        stage1_sample_forward(*tapes[static_cast<std::size_t>(i)], pv, m, batch[static_cast<std::size_t>(i)], opt);
  });

  TapeF head;
  ParamView<float> pvh = bind(store, &ws.head_sink);
  std::vector<TensorF> vs, ts, lcs;
  for (const auto& f : fwd) {
    vs.push_back(f.v);
    ts.push_back(f.t);
    lcs.push_back(f.lc);
  }
  TensorF scale = exp_clamped(head, pvh[m.heads.logit_scale], 100.0);
  TensorF ls = contrastive_loss(head, stack_rows(head, vs), stack_rows(head, ts), scale);
  TensorF lc = mean_all(head, stack_rows(head, lcs));
  TensorF total = stage1_total(head, ls, lc, opt.lambda);
  head.backward(total);

  for_samples(ws.parallel, b, [&](int i) { tapes[static_cast<std::size_t>(i)]->backward_seeded(); });
  ws.reduce(b, true);

  Stage1Stats stats;
  stats.l_s = static_cast<double>(ls.item());
  stats.l_c = static_cast<double>(lc.item());
  stats.l_total = static_cast<double>(total.item());
  return stats;
}

double run_stage2_step(ParameterStore& store, const GfsltModel& m,
                       const std::vector<Stage2Sample>& batch, double label_smoothing,
                       StepWorkspace& ws) {
  const int b = static_cast<int>(batch.size());
  std::vector<double> losses(static_cast<std::size_t>(b), 0.0);
  const float seed_grad = 1.0f / static_cast<float>(b);
  for_samples(ws.parallel, b, [&](int i) {
    TapeF tape;
    ParamView<float> pv = bind(store, &ws.sample_sinks[static_cast<std::size_t>(i)]);
    TensorF loss = stage2_sample_loss(tape, pv, m, batch[static_cast<std::size_t>(i)], label_smoothing);
    losses[static_cast<std::size_t>(i)] = static_cast<double>(loss.item());
    (*loss.grad)[0] = seed_grad;  // mean-over-batch gradient
    tape.backward_seeded();
  });
  ws.reduce(b, false);
  double sum = 0.0;
  for (double l : losses) sum += l;
  return sum / b;
}

std::vector<std::uint8_t> all_trainable(const ParameterStore& store) {
  return std::vector<std::uint8_t>(static_cast<std::size_t>(store.count()), 1);
}

void mask_group(const ParameterStore& store, std::vector<std::uint8_t>& mask, Group group,
                bool trainable) {
  for (int i = 0; i < store.count(); ++i)
    if (classify(store.info(i).name) == group)
      mask[static_cast<std::size_t>(i)] = trainable ? 1 : 0;
}

nlohmann::json round_json(double v) {
  // Logged metrics are rounded to a fixed number of decimals so log bytes are
  // stable and human-scannable.
  return v;
}

}  // namespace

ParameterStore clone_store(const ParameterStore& store) {
  ParameterStore out;
  for (int i = 0; i < store.count(); ++i)
    out.add(store.info(i).name, store.info(i).shape, *store.value(i));
  return out;
}

void restore_params(ParameterStore& target, const Checkpoint& source) {
  for (int i = 0; i < target.count(); ++i) {
    const std::string& name = target.info(i).name;
    const int src = source.params.index_of(name);
    if (src < 0) throw TransferError("tensor '" + name + "' not present in checkpoint");
    if (source.params.info(src).shape != target.info(i).shape)
      throw TransferError("tensor '" + name + "': checkpoint shape " +
                          shape_str(source.params.info(src).shape) + " vs model shape " +
                          shape_str(target.info(i).shape));
    *target.value(i) = *source.params.value(src);
  }
}

TransferPlan plan_from_config(const TrainConfig& config) {
  auto source = [](const std::string& s) {
    return s == "pretrained" ? TransferSource::kPretrained : TransferSource::kRandom;
  };
  TransferPlan plan;
  plan.visual_embedding = source(config.transfer_visual_embedding);
  plan.encoder = source(config.transfer_encoder);
  plan.decoder = source(config.transfer_decoder);
  plan.train_visual_embedding = config.train_visual_embedding;
  plan.train_encoder = config.train_encoder;
  plan.train_decoder = config.train_decoder;
  return plan;
}

void apply_transfer(ParameterStore& target, const Checkpoint& source, const TransferPlan& plan) {
  for (int i = 0; i < target.count(); ++i) {
    const std::string& name = target.info(i).name;
    TransferSource kind = TransferSource::kRandom;
    switch (classify(name)) {
      case Group::kVisualEmbed: kind = plan.visual_embedding; break;
      case Group::kEncoder: kind = plan.encoder; break;
      case Group::kDecoder: kind = plan.decoder; break;
      default:
        throw TransferError("parameter '" + name + "' is not part of the translation model");
    }
    if (kind != TransferSource::kPretrained) continue;
    const int src = source.params.index_of(name);
    if (src < 0) throw TransferError("tensor '" + name + "' not present in checkpoint");
    if (source.params.info(src).shape != target.info(i).shape)
      throw TransferError("tensor '" + name + "': checkpoint shape " +
                          shape_str(source.params.info(src).shape) + " vs model shape " +
                          shape_str(target.info(i).shape));
    *target.value(i) = *source.params.value(src);
  }
}

std::vector<std::uint8_t> stage2_trainable_mask(const ParameterStore& store,
                                                const TransferPlan& plan) {
  std::vector<std::uint8_t> mask = all_trainable(store);
  mask_group(store, mask, Group::kVisualEmbed, plan.train_visual_embedding);
  mask_group(store, mask, Group::kEncoder, plan.train_encoder);
  mask_group(store, mask, Group::kDecoder, plan.train_decoder);
  return mask;
}

GfsltInstance make_gfslt(const TrainConfig& config, std::uint64_t init_seed) {
  GfsltInstance inst;
  inst.model = register_gfslt(inst.store, config.model, init_seed);
  return inst;
}

// ---------------------------------------------------------------------------
// stage 1
// ---------------------------------------------------------------------------

PretrainResult pretrain(const Corpus& corpus, const TrainConfig& config, const Checkpoint* resume,
                        int run_epoch_limit) {
  config.validate();
  if (corpus.vocab.size() != config.model.vocab_size)
    throw ConfigError("pretrain: corpus vocabulary (" + std::to_string(corpus.vocab.size()) +
                      ") does not match the config (" + std::to_string(config.model.vocab_size) + ")");
  const int batch = config.pretrain_batch;
  if (static_cast<int>(corpus.train.size()) < batch)
    throw ConfigError("pretrain: train split smaller than one batch");

  ParameterStore store;
  Stage1Model model = register_stage1(store, config.model, config.pretrain_seed);
  SgdMomentum optimizer(store);

  int start_epoch = 0;
  if (resume) {
    if (resume->compat_fingerprint != config.compat_fingerprint())
      throw ConfigError("pretrain: resume checkpoint was produced under an incompatible config");
    for (int i = 0; i < store.count(); ++i) {
      const int src = resume->params.index_of(store.info(i).name);
      if (src < 0)
        throw TransferError("resume: tensor '" + store.info(i).name + "' missing from checkpoint");
      if (resume->params.info(src).shape != store.info(i).shape)
        throw TransferError("resume: tensor '" + store.info(i).name + "' shape mismatch");
      *store.value(i) = *resume->params.value(src);
      if (resume->has_optimizer)
        optimizer.buffers()[static_cast<std::size_t>(i)] = resume->momentum[static_cast<std::size_t>(src)];
    }
    start_epoch = static_cast<int>(resume->next_epoch);
  }

  std::vector<std::uint8_t> trainable = all_trainable(store);
  if (config.freeze_text_encoder) mask_group(store, trainable, Group::kTextEncoder, false);
  if (config.freeze_text_decoder) mask_group(store, trainable, Group::kDecoder, false);
  // Alternating update (two descent phases per batch) restricts each phase to
  // its own subnetworks on top of the freeze flags.
  std::vector<std::uint8_t> contrastive_mask = trainable;
  std::vector<std::uint8_t> restoration_mask = trainable;
  if (config.stage1_update == "alternating") {
    mask_group(store, contrastive_mask, Group::kDecoder, false);
    mask_group(store, restoration_mask, Group::kVisualEmbed, false);
    mask_group(store, restoration_mask, Group::kEncoder, false);
    mask_group(store, restoration_mask, Group::kTextEncoder, false);
    mask_group(store, restoration_mask, Group::kHeads, false);
    if (config.freeze_text_encoder) mask_group(store, restoration_mask, Group::kTextEncoder, false);
    if (config.freeze_text_decoder) mask_group(store, restoration_mask, Group::kDecoder, false);
  }

  const int steps_per_epoch = static_cast<int>(corpus.train.size()) / batch;  // drop last
  const int plan_epochs = config.pretrain_epochs;
  int end_epoch = plan_epochs;
  if (run_epoch_limit >= 0) end_epoch = std::min(plan_epochs, start_epoch + run_epoch_limit);
  const std::int64_t total_steps = std::max<std::int64_t>(1, static_cast<std::int64_t>(plan_epochs) * steps_per_epoch);

  const Stage1Options opt1{config.lambda, config.lc_stopgrad_text_encoder};
  const AugmentPolicy aug =
      AugmentPolicy::preset(config.aug_stage1, derive_seed(config.pretrain_seed, "aug1-policy"));
  StepWorkspace ws(store, batch, hardware_threads() > 1);

  PretrainResult result;
  const std::uint64_t seed = config.pretrain_seed;
  std::vector<int> order(corpus.train.size());

  for (int epoch = start_epoch; epoch < end_epoch; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(derive_seed(seed, "shuffle", static_cast<std::uint64_t>(epoch)));
    shuffle_rng.shuffle(order);

    double sum_ls = 0, sum_lc = 0, sum_total = 0;
    double last_lr = cosine_lr(static_cast<std::int64_t>(epoch) * steps_per_epoch, total_steps,
                               config.pretrain_lr_max, config.pretrain_lr_min);
    for (int step = 0; step < steps_per_epoch; ++step) {
      std::vector<Stage1Sample> samples;
      samples.reserve(static_cast<std::size_t>(batch));
      for (int i = 0; i < batch; ++i) {
        const CorpusRecord& rec = corpus.train[static_cast<std::size_t>(order[static_cast<std::size_t>(step * batch + i)])];
        Stage1Sample s;
        s.clip = augment_clip(rec.clip, aug,
                              derive_seed(seed, "aug1", static_cast<std::uint64_t>(epoch), rec.sample_id));
        s.sentence = rec.sentence;
        Rng mask_rng(derive_seed(seed, "mask", static_cast<std::uint64_t>(epoch), rec.sample_id));
        s.masked = mask_sentence(rec.sentence, config.mask_rate, mask_rng, config.model.vocab_size);
        samples.push_back(std::move(s));
      }
      const std::int64_t global_step = static_cast<std::int64_t>(epoch) * steps_per_epoch + step;
      const double lr = cosine_lr(global_step, total_steps, config.pretrain_lr_max, config.pretrain_lr_min);
      last_lr = lr;

      if (config.stage1_update == "joint") {
        ws.zero(batch);
        Stage1Stats stats = run_stage1_step_joint(store, model, samples, opt1, ws);
        clip_grad_norm(ws.total, config.pretrain_clip_norm);
        optimizer.step(store, ws.total, lr, config.pretrain_momentum, trainable);
        sum_ls += stats.l_s;
        sum_lc += stats.l_c;
        sum_total += stats.l_total;
      } else {
        // Contrastive phase: descend L_s over encoder-side parameters.
        const int b = static_cast<int>(samples.size());
        {
          ws.zero(b);
          std::vector<std::unique_ptr<TapeF>> tapes(static_cast<std::size_t>(b));
          std::vector<TensorF> vs(static_cast<std::size_t>(b)), ts(static_cast<std::size_t>(b));
          for_samples(ws.parallel, b, [&](int i) {
            tapes[static_cast<std::size_t>(i)] = std::make_unique<TapeF>();
            TapeF& tape = *tapes[static_cast<std::size_t>(i)];
            ParamView<float> pv = bind(store, &ws.sample_sinks[static_cast<std::size_t>(i)]);
            auto venc = visual_encode(tape, pv, model.ve, model.cfg, samples[static_cast<std::size_t>(i)].clip);
            auto tenc = text_encode(tape, pv, model.te, model.cfg, samples[static_cast<std::size_t>(i)].sentence);
            auto proj = project(tape, pv, model.heads, venc.cls, tenc.eos);
            vs[static_cast<std::size_t>(i)] = proj.v;
            ts[static_cast<std::size_t>(i)] = proj.t;
          });
          TapeF head;
          ParamView<float> pvh = bind(store, &ws.head_sink);
          TensorF scale = exp_clamped(head, pvh[model.heads.logit_scale], 100.0);
          TensorF ls = contrastive_loss(head, stack_rows(head, vs), stack_rows(head, ts), scale);
          head.backward(ls);
          for_samples(ws.parallel, b, [&](int i) { tapes[static_cast<std::size_t>(i)]->backward_seeded(); });
          ws.reduce(b, true);
          clip_grad_norm(ws.total, config.pretrain_clip_norm);
          optimizer.step(store, ws.total, lr, config.pretrain_momentum, contrastive_mask);
          sum_ls += static_cast<double>(ls.item());
        }
        // Restoration phase: descend L_c over the text decoder.
        {
          ws.zero(b);
          std::vector<double> lcs(static_cast<std::size_t>(b), 0.0);
          for_samples(ws.parallel, b, [&](int i) {
            TapeF tape;
            ParamView<float> pv = bind(store, &ws.sample_sinks[static_cast<std::size_t>(i)]);
            const Stage1Sample& s = samples[static_cast<std::size_t>(i)];
            auto cenc = text_encode(tape, pv, model.te, model.cfg, s.masked.corrupted);
            TokenSequence prefix(s.masked.original.begin(), s.masked.original.end() - 1);
            TensorF logits = text_decode(tape, pv, model.td, model.cfg, prefix, cenc.seq, cenc.key_valid);
            TensorF lc = restoration_loss(tape, logits, s.masked.original, s.masked.masked_positions);
            lcs[static_cast<std::size_t>(i)] = static_cast<double>(lc.item());
            (*lc.grad)[0] = 1.0f / static_cast<float>(b);
            tape.backward_seeded();
          });
          ws.reduce(b, false);
          clip_grad_norm(ws.total, config.pretrain_clip_norm);
          optimizer.step(store, ws.total, lr, config.pretrain_momentum, restoration_mask);
          double lc_mean = 0;
          for (double v : lcs) lc_mean += v;
          lc_mean /= b;
          sum_lc += lc_mean;
          sum_total += 0.0;  // recomputed below from the phase means
        }
      }
    }

    const double mean_ls = sum_ls / steps_per_epoch;
    const double mean_lc = sum_lc / steps_per_epoch;
    const double mean_total = config.stage1_update == "joint" ? sum_total / steps_per_epoch
                                                              : mean_ls + config.lambda * mean_lc;
    double retrieval = 0.0;
    if (static_cast<int>(corpus.dev.size()) >= batch)
      retrieval = retrieval_accuracy(store, model, corpus.dev, batch);
    result.final_retrieval_acc_dev = retrieval;

    nlohmann::json line = {{"epoch", epoch},
                           {"L_s", round_json(mean_ls)},
                           {"L_c", round_json(mean_lc)},
                           {"L_total", round_json(mean_total)},
                           {"lr", round_json(last_lr)},
                           {"retrieval_acc_dev", round_json(retrieval)}};
    result.log_lines.push_back(line.dump());
  }

  Checkpoint ckpt;
  ckpt.config_fingerprint = config.fingerprint();
  ckpt.compat_fingerprint = config.compat_fingerprint();
  ckpt.seed = config.pretrain_seed;
  ckpt.next_epoch = static_cast<std::uint32_t>(end_epoch);
  ckpt.params = clone_store(store);
  ckpt.has_optimizer = true;
  ckpt.momentum = optimizer.buffers();
  result.checkpoint = std::move(ckpt);
  return result;
}

// ---------------------------------------------------------------------------
// stage 2
// ---------------------------------------------------------------------------

FinetuneResult finetune(const Corpus& corpus, const TrainConfig& config, GfsltInstance& instance,
                        int run_epoch_limit) {
  config.validate();
  if (corpus.vocab.size() != config.model.vocab_size)
    throw ConfigError("finetune: corpus vocabulary does not match the config");
  const int batch = config.finetune_batch;
  if (corpus.train.empty()) throw ConfigError("finetune: empty train split");

  ParameterStore& store = instance.store;
  const GfsltModel& model = instance.model;
  const TransferPlan plan = plan_from_config(config);
  const std::vector<std::uint8_t> trainable = stage2_trainable_mask(store, plan);
  SgdMomentum optimizer(store);

  const int n = static_cast<int>(corpus.train.size());
  const int steps_per_epoch = (n + batch - 1) / batch;  // keep the last partial batch
  const int plan_epochs = config.finetune_epochs;
  const int end_epoch = run_epoch_limit >= 0 ? std::min(plan_epochs, run_epoch_limit) : plan_epochs;
  const std::int64_t total_steps = std::max<std::int64_t>(1, static_cast<std::int64_t>(plan_epochs) * steps_per_epoch);

  const AugmentPolicy aug =
      AugmentPolicy::preset(config.aug_stage2, derive_seed(config.finetune_seed, "aug2-policy"));
  StepWorkspace ws(store, batch, hardware_threads() > 1);

  DecodeConfig eval_decode;
  eval_decode.greedy = true;  // tracking metric; final scoring uses the config decode
  eval_decode.max_len = config.derived_max_decode_len();

  FinetuneResult result;
  ParameterStore best_params = clone_store(store);
  int best_epoch = -1;
  double best_bleu4 = -1.0;
  double last_train_loss = 0.0;

  const std::uint64_t seed = config.finetune_seed;
  std::vector<int> order(static_cast<std::size_t>(n));

  for (int epoch = 0; epoch < end_epoch; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(derive_seed(seed, "shuffle", static_cast<std::uint64_t>(epoch)));
    shuffle_rng.shuffle(order);

    double sum_loss = 0.0;
    double last_lr = 0.0;
    for (int step = 0; step < steps_per_epoch; ++step) {
      const int begin = step * batch;
      const int count = std::min(batch, n - begin);
      std::vector<Stage2Sample> samples;
      samples.reserve(static_cast<std::size_t>(count));
      for (int i = 0; i < count; ++i) {
        const CorpusRecord& rec = corpus.train[static_cast<std::size_t>(order[static_cast<std::size_t>(begin + i)])];
        Stage2Sample s;
        s.clip = augment_clip(rec.clip, aug,
                              derive_seed(seed, "aug2", static_cast<std::uint64_t>(epoch), rec.sample_id));
        s.sentence = rec.sentence;
        samples.push_back(std::move(s));
      }
      const std::int64_t global_step = static_cast<std::int64_t>(epoch) * steps_per_epoch + step;
      const double lr = cosine_lr(global_step, total_steps, config.finetune_lr_max, config.finetune_lr_min);
      last_lr = lr;

      ws.zero(count);
      sum_loss += run_stage2_step(store, model, samples, config.label_smoothing, ws);
      clip_grad_norm(ws.total, config.finetune_clip_norm);
      optimizer.step(store, ws.total, lr, config.finetune_momentum, trainable);
    }
    last_train_loss = sum_loss / steps_per_epoch;

    const bool eval_now = (epoch + 1) % config.eval_interval == 0 || epoch == end_epoch - 1;
    if (eval_now && !corpus.dev.empty()) {
      EvalScores scores = evaluate_records(store, model, corpus.dev, eval_decode);
      nlohmann::json line = {{"epoch", epoch},
                             {"train_Lg", round_json(last_train_loss)},
                             {"dev_bleu1", round_json(scores.bleu1)},
                             {"dev_bleu2", round_json(scores.bleu2)},
                             {"dev_bleu3", round_json(scores.bleu3)},
                             {"dev_bleu4", round_json(scores.bleu4)},
                             {"dev_rougeL", round_json(scores.rouge_l)},
                             {"lr", round_json(last_lr)}};
      result.log_lines.push_back(line.dump());
      if (scores.bleu4 > best_bleu4) {
        best_bleu4 = scores.bleu4;
        best_epoch = epoch;
        best_params = clone_store(store);
      }
    }
  }

  auto to_checkpoint = [&](const ParameterStore& params, int epoch_mark) {
    Checkpoint ckpt;
    ckpt.config_fingerprint = config.fingerprint();
    ckpt.compat_fingerprint = config.compat_fingerprint();
    ckpt.seed = config.finetune_seed;
    ckpt.next_epoch = static_cast<std::uint32_t>(epoch_mark);
    ckpt.params = clone_store(params);
    return ckpt;
  };

  result.final = to_checkpoint(store, end_epoch);
  result.final.has_optimizer = true;
  result.final.momentum = optimizer.buffers();
  if (best_epoch < 0) {
    result.best = to_checkpoint(store, end_epoch);
    result.best_dev_bleu4 = 0.0;
    result.best_epoch = -1;
  } else {
    result.best = to_checkpoint(best_params, best_epoch + 1);
    result.best_dev_bleu4 = best_bleu4;
    result.best_epoch = best_epoch;
  }
  result.final_train_loss = last_train_loss;
  return result;
}

// ---------------------------------------------------------------------------
// inference / evaluation
// ---------------------------------------------------------------------------

TokenSequence translate_clip(const ParameterStore& store, const GfsltModel& model,
                             const VideoClip& clip, const DecodeConfig& decode) {
  TapeF tape(false);
  ParamView<float> pv = bind(store, nullptr);
  auto venc = visual_encode(tape, pv, model.ve, model.cfg, clip);
  const TensorF memory = venc.seq;
  const std::vector<std::uint8_t> memory_valid = venc.key_valid;

  StepFn step = [&](const TokenSequence& prefix) {
    TapeF t(false);
    TensorF logits = text_decode(t, pv, model.td, model.cfg, prefix, memory, memory_valid);
    const int v = logits.dim(1);
    const int last = logits.dim(0) - 1;
    std::vector<float> out(static_cast<std::size_t>(v));
    const float* row = logits.ptr() + static_cast<std::int64_t>(last) * v;
    std::copy(row, row + v, out.begin());
    return out;
  };

  DecodeResult res = decode.greedy || decode.beam_size == 1
                         ? greedy_decode(step, Vocabulary::kEos, decode.max_len)
                         : beam_decode(step, Vocabulary::kEos, decode.beam_size, decode.alpha,
                                       decode.max_len);
  return res.tokens;
}

EvalScores evaluate_records(const ParameterStore& store, const GfsltModel& model,
                            const std::vector<CorpusRecord>& records, const DecodeConfig& decode,
                            std::vector<TokenSequence>* hypotheses) {
  if (records.empty()) throw InputError("evaluate: empty record set");
  std::vector<EvalPair> pairs;
  pairs.reserve(records.size());
  for (const auto& rec : records) {
    TokenSequence hyp = translate_clip(store, model, rec.clip, decode);
    if (hypotheses) hypotheses->push_back(hyp);
    pairs.push_back({strip_specials(hyp), strip_specials(rec.sentence)});
  }
  EvalScores scores;
  scores.bleu1 = bleu_n(pairs, 1);
  scores.bleu2 = bleu_n(pairs, 2);
  scores.bleu3 = bleu_n(pairs, 3);
  scores.bleu4 = bleu_n(pairs, 4);
  scores.rouge_l = rouge_l(pairs);
  return scores;
}

double retrieval_accuracy(const ParameterStore& store, const Stage1Model& model,
                          const std::vector<CorpusRecord>& records, int batch) {
  if (batch < 2) throw ConfigError("retrieval_accuracy: batch must be >= 2");
  const int n_batches = static_cast<int>(records.size()) / batch;
  if (n_batches < 1) throw InputError("retrieval_accuracy: fewer records than one batch");
  ParamView<float> pv = bind(store, nullptr);
  double sum = 0.0;
  for (int b = 0; b < n_batches; ++b) {
    std::vector<std::vector<float>> vs, ts;
    for (int i = 0; i < batch; ++i) {
      const CorpusRecord& rec = records[static_cast<std::size_t>(b * batch + i)];
      TapeF tape(false);
      auto venc = visual_encode(tape, pv, model.ve, model.cfg, rec.clip);
      auto tenc = text_encode(tape, pv, model.te, model.cfg, rec.sentence);
      auto proj = project(tape, pv, model.heads, venc.cls, tenc.eos);
      vs.emplace_back(proj.v.ptr(), proj.v.ptr() + proj.v.numel());
      ts.emplace_back(proj.t.ptr(), proj.t.ptr() + proj.t.numel());
    }
    sum += in_batch_retrieval_accuracy(vs, ts);
  }
  return sum / n_batches;
}

}  // namespace gfslt
