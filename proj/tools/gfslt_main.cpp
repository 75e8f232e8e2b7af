// Command line front end: generate-data, pretrain, finetune, translate,
// evaluate, ablate. Every command is a pure function of its file inputs and
// config; reruns produce byte-identical checkpoints and logs.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "gfslt/ablate.hpp"
#include "gfslt/trainer.hpp"

namespace {

using namespace gfslt;

int log_level() {
  const char* env = std::getenv("GFSLT_LOG");
  if (!env) return 1;
  const std::string v = env;
  if (v == "quiet") return 0;
  if (v == "debug") return 2;
  return 1;
}

void info(const std::string& msg) {
  if (log_level() >= 1) std::fprintf(stderr, "%s\n", msg.c_str());
}

void write_lines(const std::vector<std::string>& lines, const std::string& path) {
  if (path.empty()) return;
  std::ofstream os(path);
  if (!os) throw FormatError("cannot open log file '" + path + "' for writing");
  for (const auto& line : lines) os << line << "\n";
}

// The dataset directory must hold the corpus the config describes.
Corpus load_and_check_corpus(const std::string& dir, const TrainConfig& config, bool allow_mismatch) {
  Corpus corpus = load_corpus_dir(dir);
  TrainConfig from_data = config;
  from_data.corpus = corpus.config;
  if (from_data.compat_fingerprint() != config.compat_fingerprint() && !allow_mismatch)
    throw ConfigError("dataset in '" + dir + "' was generated under a different corpus config; "
                      "pass --allow-mismatch to override");
  return corpus;
}

void check_checkpoint_compat(const Checkpoint& ckpt, const TrainConfig& config, bool allow_mismatch) {
  if (ckpt.compat_fingerprint != config.compat_fingerprint() && !allow_mismatch)
    throw ConfigError("checkpoint was produced under an incompatible corpus/model config; "
                      "pass --allow-mismatch to override");
}

const std::vector<CorpusRecord>& pick_split(const Corpus& corpus, const std::string& split) {
  if (split == "train") return corpus.train;
  if (split == "dev") return corpus.dev;
  if (split == "test") return corpus.test;
  throw ConfigError("unknown split '" + split + "' (train|dev|test)");
}

DecodeConfig decode_from(const TrainConfig& config, int beam_override, bool greedy,
                         double alpha_override) {
  DecodeConfig d;
  d.beam_size = beam_override > 0 ? beam_override : config.beam_size;
  d.alpha = alpha_override >= 0 ? alpha_override : config.length_penalty_alpha;
  d.greedy = greedy;
  d.max_len = config.derived_max_decode_len();
  return d;
}

std::string render_sentence(const Vocabulary& vocab, const TokenSequence& tokens) {
  std::string out;
  for (int id : strip_specials(tokens)) {
    if (!out.empty()) out += " ";
    out += vocab.text(id);
  }
  return out;
}

int run(int argc, char** argv) {
  CLI::App app{"gloss-free sign language translation on a synthetic corpus"};
  app.require_subcommand(1);

  std::string config_path, data_dir, out_path, log_path, init_path, ckpt_path, split = "dev";
  std::string clip_path, final_out;
  bool allow_mismatch = false, greedy = false;
  int beam_override = 0, epoch_limit = -1;
  double alpha_override = -1.0;

  auto* gen = app.add_subcommand("generate-data", "generate the synthetic corpus");
  gen->add_option("--config", config_path, "config file")->required();
  gen->add_option("--out", out_path, "output directory")->required();

  auto* pre = app.add_subcommand("pretrain", "stage 1: visual-language pretraining");
  pre->add_option("--config", config_path)->required();
  pre->add_option("--data", data_dir)->required();
  pre->add_option("--out", out_path, "output checkpoint")->required();
  pre->add_option("--log", log_path, "JSON-lines training log");
  pre->add_option("--resume", init_path, "resume from a checkpoint");
  pre->add_option("--epochs", epoch_limit, "stop after this many epochs (schedule unchanged)");
  pre->add_flag("--allow-mismatch", allow_mismatch);

  auto* fin = app.add_subcommand("finetune", "stage 2: train the translator");
  fin->add_option("--config", config_path)->required();
  fin->add_option("--data", data_dir)->required();
  fin->add_option("--init", init_path, "stage-1 checkpoint or 'scratch'")->required();
  fin->add_option("--out", out_path, "best-dev checkpoint")->required();
  fin->add_option("--final-out", final_out, "final-epoch checkpoint (default: <out>.final)");
  fin->add_option("--log", log_path);
  fin->add_option("--epochs", epoch_limit, "stop after this many epochs (schedule unchanged)");
  fin->add_flag("--allow-mismatch", allow_mismatch);

  auto* tr = app.add_subcommand("translate", "decode clips to sentences");
  tr->add_option("--config", config_path)->required();
  tr->add_option("--checkpoint", ckpt_path)->required();
  tr->add_option("--data", data_dir)->required();
  tr->add_option("--split", split, "train|dev|test");
  tr->add_option("--clip", clip_path, "decode a single dataset file instead of a split");
  tr->add_option("--out", out_path, "write sentences here instead of stdout");
  tr->add_option("--beam", beam_override, "beam size override");
  tr->add_option("--alpha", alpha_override, "length penalty alpha override");
  tr->add_flag("--greedy", greedy, "greedy decoding");
  tr->add_flag("--allow-mismatch", allow_mismatch);

  auto* ev = app.add_subcommand("evaluate", "score a checkpoint on a split");
  ev->add_option("--config", config_path)->required();
  ev->add_option("--checkpoint", ckpt_path)->required();
  ev->add_option("--data", data_dir)->required();
  ev->add_option("--split", split, "dev|test|train");
  ev->add_option("--out", out_path, "write metrics JSON here as well");
  ev->add_option("--beam", beam_override);
  ev->add_option("--alpha", alpha_override);
  ev->add_flag("--greedy", greedy);
  ev->add_flag("--allow-mismatch", allow_mismatch);

  auto* ab = app.add_subcommand("ablate", "pretraining/augmentation and transfer grids");
  ab->add_option("--config", config_path)->required();
  ab->add_option("--data", data_dir)->required();
  ab->add_option("--out", out_path, "directory for ablate.json");
  ab->add_flag("--allow-mismatch", allow_mismatch);

  CLI11_PARSE(app, argc, argv);

  if (gen->parsed()) {
    TrainConfig config = load_config(config_path);
    info("[generate-data] rendering corpus");
    Corpus corpus = generate_corpus(config.corpus);
    save_corpus_dir(corpus, out_path);
    nlohmann::json j = {{"train", corpus.train.size()},
                        {"dev", corpus.dev.size()},
                        {"test", corpus.test.size()},
                        {"vocab", corpus.vocab.size()},
                        {"dir", out_path}};
    std::cout << j.dump() << "\n";
    return 0;
  }

  if (pre->parsed()) {
    TrainConfig config = load_config(config_path);
    Corpus corpus = load_and_check_corpus(data_dir, config, allow_mismatch);
    Checkpoint resume;
    const Checkpoint* resume_ptr = nullptr;
    if (!init_path.empty()) {
      resume = load_checkpoint(init_path);
      check_checkpoint_compat(resume, config, allow_mismatch);
      resume_ptr = &resume;
    }
    info("[pretrain] starting");
    PretrainResult result = pretrain(corpus, config, resume_ptr, epoch_limit);
    save_checkpoint(result.checkpoint, out_path);
    write_lines(result.log_lines, log_path);
    if (!result.log_lines.empty()) std::cout << result.log_lines.back() << "\n";
    return 0;
  }

  if (fin->parsed()) {
    TrainConfig config = load_config(config_path);
    Corpus corpus = load_and_check_corpus(data_dir, config, allow_mismatch);
    GfsltInstance inst = make_gfslt(config, config.finetune_seed);
    if (init_path != "scratch") {
      Checkpoint vlp = load_checkpoint(init_path);
      check_checkpoint_compat(vlp, config, allow_mismatch);
      apply_transfer(inst.store, vlp, plan_from_config(config));
    }
    info("[finetune] starting");
    FinetuneResult result = finetune(corpus, config, inst, epoch_limit);
    save_checkpoint(result.best, out_path);
    save_checkpoint(result.final, final_out.empty() ? out_path + ".final" : final_out);
    write_lines(result.log_lines, log_path);
    if (!result.log_lines.empty()) std::cout << result.log_lines.back() << "\n";
    return 0;
  }

  if (tr->parsed() || ev->parsed()) {
    TrainConfig config = load_config(config_path);
    Corpus corpus = load_and_check_corpus(data_dir, config, allow_mismatch);
    Checkpoint ckpt = load_checkpoint(ckpt_path);
    check_checkpoint_compat(ckpt, config, allow_mismatch);
    GfsltInstance inst = make_gfslt(config, 0);
    restore_params(inst.store, ckpt);
    const DecodeConfig decode = decode_from(config, beam_override, greedy, alpha_override);

    if (tr->parsed()) {
      std::vector<CorpusRecord> own;
      const std::vector<CorpusRecord>* records;
      if (!clip_path.empty()) {
        own = read_dataset(clip_path);
        records = &own;
      } else {
        records = &pick_split(corpus, split);
      }
      std::ofstream file;
      std::ostream* os = &std::cout;
      if (!out_path.empty()) {
        file.open(out_path);
        if (!file) throw FormatError("cannot open '" + out_path + "' for writing");
        os = &file;
      }
      for (const auto& rec : *records) {
        TokenSequence hyp = translate_clip(inst.store, inst.model, rec.clip, decode);
        (*os) << rec.sample_id << "\t" << render_sentence(corpus.vocab, hyp) << "\n";
      }
      return 0;
    }

    const auto& records = pick_split(corpus, split);
    info("[evaluate] decoding " + std::to_string(records.size()) + " clips");
    EvalScores scores = evaluate_records(inst.store, inst.model, records, decode);
    nlohmann::json j = {{"bleu1", scores.bleu1},
                        {"bleu2", scores.bleu2},
                        {"bleu3", scores.bleu3},
                        {"bleu4", scores.bleu4},
                        {"rougeL", scores.rouge_l}};
    std::cout << j.dump() << "\n";
    if (!out_path.empty()) {
      std::ofstream os(out_path);
      if (!os) throw FormatError("cannot open '" + out_path + "' for writing");
      os << j.dump() << "\n";
    }
    char buf[160];
    std::snprintf(buf, sizeof(buf), "[evaluate] %s B1 %.2f B2 %.2f B3 %.2f B4 %.2f ROUGE-L %.2f",
                  split.c_str(), scores.bleu1 * 100, scores.bleu2 * 100, scores.bleu3 * 100,
                  scores.bleu4 * 100, scores.rouge_l * 100);
    info(buf);
    return 0;
  }

  if (ab->parsed()) {
    TrainConfig config = load_config(config_path);
    Corpus corpus = load_and_check_corpus(data_dir, config, allow_mismatch);
    AblateReport report = run_ablation(corpus, config, log_level() >= 1);
    std::cout << report.rendered;
    if (!out_path.empty()) {
      std::filesystem::create_directories(out_path);
      std::ofstream os(out_path + "/ablate.json");
      if (!os) throw FormatError("cannot open '" + out_path + "/ablate.json' for writing");
      os << report.json << "\n";
    }
    return 0;
  }

  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const std::exception& e) {
    nlohmann::json err = {{"error", e.what()}};
    std::cerr << err.dump() << "\n";
    return 1;
  }
}
