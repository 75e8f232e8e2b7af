#include "gfslt/config.hpp"

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "gfslt/rng.hpp"

namespace gfslt {

namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string fmt_channels(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(v[i]);
  }
  return s;
}

std::vector<int> parse_channels(const std::string& s, const std::string& key) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(std::stoi(item));
    } catch (...) {
      throw ConfigError("key '" + key + "': cannot parse '" + s + "' as an int list");
    }
  }
  if (out.empty()) throw ConfigError("key '" + key + "': empty int list");
  return out;
}

// Consumed-key parsing: every recognized key is erased; leftovers are
// unknown keys and rejected as a whole.
struct KeyMap {
  std::map<std::string, std::string> kv;

  bool take(const std::string& key, std::string* out) {
    auto it = kv.find(key);
    if (it == kv.end()) return false;
    *out = it->second;
    kv.erase(it);
    return true;
  }

  void take_int(const std::string& key, int* dst) {
    std::string v;
    if (!take(key, &v)) return;
    try {
      *dst = std::stoi(v);
    } catch (...) {
      throw ConfigError("key '" + key + "': cannot parse '" + v + "' as int");
    }
  }

  void take_u64(const std::string& key, std::uint64_t* dst) {
    std::string v;
    if (!take(key, &v)) return;
    try {
      *dst = std::stoull(v);
    } catch (...) {
      throw ConfigError("key '" + key + "': cannot parse '" + v + "' as u64");
    }
  }

  void take_double(const std::string& key, double* dst) {
    std::string v;
    if (!take(key, &v)) return;
    try {
      *dst = std::stod(v);
    } catch (...) {
      throw ConfigError("key '" + key + "': cannot parse '" + v + "' as double");
    }
  }

  void take_bool(const std::string& key, bool* dst) {
    std::string v;
    if (!take(key, &v)) return;
    if (v == "true" || v == "1")
      *dst = true;
    else if (v == "false" || v == "0")
      *dst = false;
    else
      throw ConfigError("key '" + key + "': cannot parse '" + v + "' as bool");
  }

  void take_string(const std::string& key, std::string* dst) {
    std::string v;
    if (take(key, &v)) *dst = v;
  }
};

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  std::size_t b = s.find_last_not_of(" \t\r");
  if (a == std::string::npos) return "";
  return s.substr(a, b - a + 1);
}

}  // namespace

TrainConfig parse_config_text(const std::string& text) {
  KeyMap keys;
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
    if (keys.kv.count(key)) throw ConfigError("config: duplicate key '" + key + "'");
    keys.kv[key] = value;
  }

  TrainConfig c;
  keys.take_int("corpus.gestures", &c.corpus.gestures);
  keys.take_int("corpus.frames_per_gesture", &c.corpus.frames_per_gesture);
  keys.take_int("corpus.frame_h", &c.corpus.frame_h);
  keys.take_int("corpus.frame_w", &c.corpus.frame_w);
  keys.take_int("corpus.frame_c", &c.corpus.frame_c);
  keys.take_int("corpus.sentence_min", &c.corpus.sentence_min);
  keys.take_int("corpus.sentence_max", &c.corpus.sentence_max);
  std::string reorder;
  if (keys.take("corpus.reorder", &reorder)) c.corpus.reorder = reorder_rule_from_name(reorder);
  keys.take_double("corpus.noise_std", &c.corpus.noise_std);
  keys.take_double("corpus.motion_path_len", &c.corpus.motion_path_len);
  keys.take_int("corpus.train_count", &c.corpus.train_count);
  keys.take_int("corpus.dev_count", &c.corpus.dev_count);
  keys.take_int("corpus.test_count", &c.corpus.test_count);
  keys.take_u64("corpus.seed", &c.corpus.seed);

  std::string channels;
  if (keys.take("model.cnn_channels", &channels))
    c.model.cnn_channels = parse_channels(channels, "model.cnn_channels");
  keys.take_int("model.cnn_first_stride", &c.model.cnn_first_stride);
  keys.take_int("model.d_model", &c.model.d_model);
  keys.take_int("model.d_proj", &c.model.d_proj);
  keys.take_int("model.heads", &c.model.heads);
  keys.take_int("model.d_ff", &c.model.d_ff);
  keys.take_int("model.enc_layers", &c.model.enc_layers);
  keys.take_int("model.text_enc_layers", &c.model.text_enc_layers);
  keys.take_int("model.dec_layers", &c.model.dec_layers);
  keys.take_bool("model.tie_output", &c.model.tie_output);
  keys.take_double("model.ln_eps", &c.model.ln_eps);

  keys.take_string("augment.stage1", &c.aug_stage1);
  keys.take_string("augment.stage2", &c.aug_stage2);

  keys.take_int("pretrain.epochs", &c.pretrain_epochs);
  keys.take_int("pretrain.batch", &c.pretrain_batch);
  keys.take_double("pretrain.lr_max", &c.pretrain_lr_max);
  keys.take_double("pretrain.lr_min", &c.pretrain_lr_min);
  keys.take_double("pretrain.momentum", &c.pretrain_momentum);
  keys.take_double("pretrain.clip_norm", &c.pretrain_clip_norm);
  keys.take_double("pretrain.mask_rate", &c.mask_rate);
  keys.take_double("pretrain.lambda", &c.lambda);
  keys.take_bool("pretrain.freeze_text_encoder", &c.freeze_text_encoder);
  keys.take_bool("pretrain.freeze_text_decoder", &c.freeze_text_decoder);
  keys.take_string("pretrain.update", &c.stage1_update);
  keys.take_bool("pretrain.lc_stopgrad_text_encoder", &c.lc_stopgrad_text_encoder);
  keys.take_u64("pretrain.seed", &c.pretrain_seed);

  keys.take_int("finetune.epochs", &c.finetune_epochs);
  keys.take_int("finetune.batch", &c.finetune_batch);
  keys.take_double("finetune.lr_max", &c.finetune_lr_max);
  keys.take_double("finetune.lr_min", &c.finetune_lr_min);
  keys.take_double("finetune.momentum", &c.finetune_momentum);
  keys.take_double("finetune.clip_norm", &c.finetune_clip_norm);
  keys.take_double("finetune.label_smoothing", &c.label_smoothing);
  keys.take_int("finetune.eval_interval", &c.eval_interval);
  keys.take_u64("finetune.seed", &c.finetune_seed);

  keys.take_string("transfer.visual_embedding", &c.transfer_visual_embedding);
  keys.take_string("transfer.encoder", &c.transfer_encoder);
  keys.take_string("transfer.decoder", &c.transfer_decoder);
  keys.take_bool("train.visual_embedding", &c.train_visual_embedding);
  keys.take_bool("train.encoder", &c.train_encoder);
  keys.take_bool("train.decoder", &c.train_decoder);

  keys.take_int("decode.beam_size", &c.beam_size);
  keys.take_double("decode.length_penalty_alpha", &c.length_penalty_alpha);
  keys.take_int("decode.max_len", &c.max_decode_len);

  keys.take_int("ablate.seeds", &c.ablate_seeds);
  keys.take_int("ablate.pretrain_epochs", &c.ablate_pretrain_epochs);
  keys.take_int("ablate.finetune_epochs", &c.ablate_finetune_epochs);

  if (!keys.kv.empty()) {
    std::string unknown;
    for (const auto& kvp : keys.kv) {
      if (!unknown.empty()) unknown += ", ";
      unknown += kvp.first;
    }
    throw ConfigError("unknown config keys: " + unknown);
  }

  c.model.vocab_size = Vocabulary::kNumSpecials + c.corpus.gestures;
  c.model.frame_h = c.corpus.frame_h;
  c.model.frame_w = c.corpus.frame_w;
  c.model.frame_c = c.corpus.frame_c;
  c.validate();
  return c;
}

TrainConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file '" + path + "'");
  std::stringstream buffer;
  buffer << is.rdbuf();
  return parse_config_text(buffer.str());
}

void TrainConfig::validate() const {
  corpus.validate();
  model.validate();
  auto preset_name = [](const std::string& s, const char* key) {
    if (s != "strong" && s != "light" && s != "none")
      throw ConfigError(std::string(key) + " must be strong|light|none, got '" + s + "'");
  };
  preset_name(aug_stage1, "augment.stage1");
  preset_name(aug_stage2, "augment.stage2");

  if (pretrain_epochs < 0 || finetune_epochs < 0) throw ConfigError("epochs must be >= 0");
  if (pretrain_batch < 2)
    throw ConfigError("pretrain.batch must be >= 2: the contrastive loss needs in-batch negatives");
  if (finetune_batch < 1) throw ConfigError("finetune.batch must be >= 1");
  auto lr_pair = [](double mx, double mn, const char* which) {
    if (mx <= 0 || mn <= 0 || mn > mx)
      throw ConfigError(std::string(which) + ": need lr_max >= lr_min > 0");
  };
  lr_pair(pretrain_lr_max, pretrain_lr_min, "pretrain lr");
  lr_pair(finetune_lr_max, finetune_lr_min, "finetune lr");
  if (pretrain_momentum < 0 || pretrain_momentum >= 1 || finetune_momentum < 0 || finetune_momentum >= 1)
    throw ConfigError("momentum must be in [0,1)");
  if (mask_rate <= 0 || mask_rate >= 1) throw ConfigError("pretrain.mask_rate must be in (0,1)");
  if (lambda < 0) throw ConfigError("pretrain.lambda must be >= 0");
  if (stage1_update != "joint" && stage1_update != "alternating")
    throw ConfigError("pretrain.update must be joint|alternating");
  if (label_smoothing < 0 || label_smoothing >= 1)
    throw ConfigError("finetune.label_smoothing must be in [0,1)");
  if (eval_interval < 1) throw ConfigError("finetune.eval_interval must be >= 1");
  auto source_name = [](const std::string& s, const char* key) {
    if (s != "pretrained" && s != "random")
      throw ConfigError(std::string(key) + " must be pretrained|random, got '" + s + "'");
  };
  source_name(transfer_visual_embedding, "transfer.visual_embedding");
  source_name(transfer_encoder, "transfer.encoder");
  source_name(transfer_decoder, "transfer.decoder");
  if (beam_size < 1) throw ConfigError("decode.beam_size must be >= 1");
  if (length_penalty_alpha < 0) throw ConfigError("decode.length_penalty_alpha must be >= 0");
  if (max_decode_len < 0) throw ConfigError("decode.max_len must be >= 0");
  if (ablate_seeds < 1) throw ConfigError("ablate.seeds must be >= 1");
  if (ablate_pretrain_epochs < 0 || ablate_finetune_epochs < 0)
    throw ConfigError("ablate epoch overrides must be >= 0");
}

namespace {

void canonical_compat(const TrainConfig& c, std::string& out) {
  out += "corpus.gestures=" + std::to_string(c.corpus.gestures) + "\n";
  out += "corpus.frames_per_gesture=" + std::to_string(c.corpus.frames_per_gesture) + "\n";
  out += "corpus.frame_h=" + std::to_string(c.corpus.frame_h) + "\n";
  out += "corpus.frame_w=" + std::to_string(c.corpus.frame_w) + "\n";
  out += "corpus.frame_c=" + std::to_string(c.corpus.frame_c) + "\n";
  out += "corpus.sentence_min=" + std::to_string(c.corpus.sentence_min) + "\n";
  out += "corpus.sentence_max=" + std::to_string(c.corpus.sentence_max) + "\n";
  out += "corpus.reorder=" + reorder_rule_name(c.corpus.reorder) + "\n";
  out += "corpus.noise_std=" + fmt_double(c.corpus.noise_std) + "\n";
  out += "corpus.motion_path_len=" + fmt_double(c.corpus.motion_path_len) + "\n";
  out += "corpus.train_count=" + std::to_string(c.corpus.train_count) + "\n";
  out += "corpus.dev_count=" + std::to_string(c.corpus.dev_count) + "\n";
  out += "corpus.test_count=" + std::to_string(c.corpus.test_count) + "\n";
  out += "corpus.seed=" + std::to_string(c.corpus.seed) + "\n";
  out += "model.cnn_channels=" + fmt_channels(c.model.cnn_channels) + "\n";
  out += "model.cnn_first_stride=" + std::to_string(c.model.cnn_first_stride) + "\n";
  out += "model.d_model=" + std::to_string(c.model.d_model) + "\n";
  out += "model.d_proj=" + std::to_string(c.model.d_proj) + "\n";
  out += "model.heads=" + std::to_string(c.model.heads) + "\n";
  out += "model.d_ff=" + std::to_string(c.model.d_ff) + "\n";
  out += "model.enc_layers=" + std::to_string(c.model.enc_layers) + "\n";
  out += "model.text_enc_layers=" + std::to_string(c.model.text_enc_layers) + "\n";
  out += "model.dec_layers=" + std::to_string(c.model.dec_layers) + "\n";
  out += "model.tie_output=" + std::string(c.model.tie_output ? "true" : "false") + "\n";
  out += "model.ln_eps=" + fmt_double(c.model.ln_eps) + "\n";
}

}  // namespace

std::string TrainConfig::canonical() const {
  std::string out;
  canonical_compat(*this, out);
  out += "augment.stage1=" + aug_stage1 + "\n";
  out += "augment.stage2=" + aug_stage2 + "\n";
  out += "pretrain.epochs=" + std::to_string(pretrain_epochs) + "\n";
  out += "pretrain.batch=" + std::to_string(pretrain_batch) + "\n";
  out += "pretrain.lr_max=" + fmt_double(pretrain_lr_max) + "\n";
  out += "pretrain.lr_min=" + fmt_double(pretrain_lr_min) + "\n";
  out += "pretrain.momentum=" + fmt_double(pretrain_momentum) + "\n";
  out += "pretrain.clip_norm=" + fmt_double(pretrain_clip_norm) + "\n";
  out += "pretrain.mask_rate=" + fmt_double(mask_rate) + "\n";
  out += "pretrain.lambda=" + fmt_double(lambda) + "\n";
  out += "pretrain.freeze_text_encoder=" + std::string(freeze_text_encoder ? "true" : "false") + "\n";
  out += "pretrain.freeze_text_decoder=" + std::string(freeze_text_decoder ? "true" : "false") + "\n";
  out += "pretrain.update=" + stage1_update + "\n";
  out += "pretrain.lc_stopgrad_text_encoder=" + std::string(lc_stopgrad_text_encoder ? "true" : "false") + "\n";
  out += "pretrain.seed=" + std::to_string(pretrain_seed) + "\n";
  out += "finetune.epochs=" + std::to_string(finetune_epochs) + "\n";
  out += "finetune.batch=" + std::to_string(finetune_batch) + "\n";
  out += "finetune.lr_max=" + fmt_double(finetune_lr_max) + "\n";
  out += "finetune.lr_min=" + fmt_double(finetune_lr_min) + "\n";
  out += "finetune.momentum=" + fmt_double(finetune_momentum) + "\n";
  out += "finetune.clip_norm=" + fmt_double(finetune_clip_norm) + "\n";
  out += "finetune.label_smoothing=" + fmt_double(label_smoothing) + "\n";
  out += "finetune.eval_interval=" + std::to_string(eval_interval) + "\n";
  out += "finetune.seed=" + std::to_string(finetune_seed) + "\n";
  out += "transfer.visual_embedding=" + transfer_visual_embedding + "\n";
  out += "transfer.encoder=" + transfer_encoder + "\n";
  out += "transfer.decoder=" + transfer_decoder + "\n";
  out += "train.visual_embedding=" + std::string(train_visual_embedding ? "true" : "false") + "\n";
  out += "train.encoder=" + std::string(train_encoder ? "true" : "false") + "\n";
  out += "train.decoder=" + std::string(train_decoder ? "true" : "false") + "\n";
  out += "decode.beam_size=" + std::to_string(beam_size) + "\n";
  out += "decode.length_penalty_alpha=" + fmt_double(length_penalty_alpha) + "\n";
  out += "decode.max_len=" + std::to_string(max_decode_len) + "\n";
  out += "ablate.seeds=" + std::to_string(ablate_seeds) + "\n";
  out += "ablate.pretrain_epochs=" + std::to_string(ablate_pretrain_epochs) + "\n";
  out += "ablate.finetune_epochs=" + std::to_string(ablate_finetune_epochs) + "\n";
  return out;
}

std::uint64_t TrainConfig::fingerprint() const { return hash_str(canonical()); }

std::uint64_t TrainConfig::compat_fingerprint() const {
  std::string out;
  canonical_compat(*this, out);
  return hash_str(out);
}

}  // namespace gfslt
