#include "gfslt/corpus.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>

#include <json.hpp>

#include "gfslt/rng.hpp"

namespace gfslt {

static_assert(std::endian::native == std::endian::little,
              "dataset and checkpoint formats assume a little-endian host");

namespace {

constexpr std::uint32_t kDatasetVersion = 1;
constexpr char kDatasetMagic[4] = {'G', 'F', 'S', 'L'};

// Glyph geometry derived from the seed: 2-4 gaussian blobs around a moving
// origin. Offsets and widths are sized so the rendered mass stays clear of
// the frame border over the whole motion path.
struct Glyph {
  struct Blob {
    double dx, dy, sigma, amp;
  };
  std::vector<Blob> blobs;
  double angle = 0.0;
  std::vector<double> channel_gain;
};

// Blob offsets and widths scale with the frame so small eval frames stay
// renderable; 24x24 frames get the nominal geometry.
double glyph_scale(int frame_h, int frame_w) {
  return static_cast<double>(std::min(frame_h, frame_w)) / 24.0;
}

double blob_margin(double scale) { return (2.5 + 3.0 * 1.6) * scale; }  // max offset + 3 sigma

Glyph derive_glyph(std::uint64_t glyph_seed, int channels, double scale) {
  Rng rng(glyph_seed);
  Glyph g;
  const int n_blobs = 2 + static_cast<int>(rng.uniform_u32(3));
  for (int b = 0; b < n_blobs; ++b) {
    Glyph::Blob blob;
    blob.dx = rng.uniform_range(-2.5, 2.5) * scale;
    blob.dy = rng.uniform_range(-2.5, 2.5) * scale;
    blob.sigma = rng.uniform_range(1.0, 1.6) * scale;
    blob.amp = rng.uniform_range(0.55, 1.0);
    g.blobs.push_back(blob);
  }
  g.angle = rng.uniform_range(0.0, 2.0 * 3.14159265358979323846);
  g.channel_gain.resize(static_cast<std::size_t>(channels));
  g.channel_gain[0] = 1.0;
  for (int c = 1; c < channels; ++c) g.channel_gain[static_cast<std::size_t>(c)] = rng.uniform_range(0.6, 1.0);
  return g;
}

}  // namespace

std::string reorder_rule_name(ReorderRule r) {
  switch (r) {
    case ReorderRule::kIdentity: return "identity";
    case ReorderRule::kReverse: return "reverse";
    case ReorderRule::kSwapPairs: return "swap_pairs";
  }
  throw ConfigError("unknown reorder rule");
}

ReorderRule reorder_rule_from_name(const std::string& name) {
  if (name == "identity") return ReorderRule::kIdentity;
  if (name == "reverse") return ReorderRule::kReverse;
  if (name == "swap_pairs") return ReorderRule::kSwapPairs;
  throw ConfigError("unknown reorder rule '" + name + "'");
}

void CorpusConfig::validate() const {
  if (gestures < 2) throw ConfigError("corpus: need at least 2 gestures");
  if (frames_per_gesture < 1) throw ConfigError("corpus: frames_per_gesture must be >= 1");
  if (sentence_min < 1 || sentence_max < sentence_min)
    throw ConfigError("corpus: invalid sentence length range [" + std::to_string(sentence_min) +
                      "," + std::to_string(sentence_max) + "]");
  if (frame_h < 8 || frame_w < 8 || frame_c < 1)
    throw ConfigError("corpus: frame size too small");
  if (noise_std < 0) throw ConfigError("corpus: noise_std must be >= 0");
  if (train_count < 1 || dev_count < 0 || test_count < 0)
    throw ConfigError("corpus: invalid split counts");
  if (motion_path_len < 0) throw ConfigError("corpus: motion_path_len must be >= 0");
  const double margin = blob_margin(glyph_scale(frame_h, frame_w));
  const double usable_w = frame_w - 1 - 2 * margin;
  const double usable_h = frame_h - 1 - 2 * margin;
  if (usable_w < motion_path_len || usable_h < motion_path_len)
    throw ConfigError("corpus: frame too small for motion path length " +
                      std::to_string(motion_path_len));
}

std::vector<int> apply_reorder(const std::vector<int>& tokens, ReorderRule rule) {
  std::vector<int> out = tokens;
  switch (rule) {
    case ReorderRule::kIdentity:
      break;
    case ReorderRule::kReverse:
      std::reverse(out.begin(), out.end());
      break;
    case ReorderRule::kSwapPairs:
      for (std::size_t i = 0; i + 1 < out.size(); i += 2) std::swap(out[i], out[i + 1]);
      break;
  }
  return out;
}

std::vector<float> render_gesture(const GestureLexicon& lexicon, int gesture, int frame_index) {
  const GestureEntry& e = lexicon.entry(gesture);
  if (frame_index < 0 || frame_index >= e.frames)
    throw IndexError("render_gesture: frame " + std::to_string(frame_index) + " out of range [0," +
                     std::to_string(e.frames) + ")");
  const int h = lexicon.frame_h, w = lexicon.frame_w, c = lexicon.frame_c;
  const double scale = glyph_scale(h, w);
  const double margin = blob_margin(scale);
  const Glyph glyph = derive_glyph(e.glyph_seed, c, scale);

  // Start position: derived from the seed, constrained so start and end of
  // the path keep every blob at least 3 sigma from the border.
  Rng rng(mix_u64(e.glyph_seed, 0x706f736974696f6eULL));
  const double px = lexicon.motion_path_len * std::cos(glyph.angle);
  const double py = lexicon.motion_path_len * std::sin(glyph.angle);
  const double x_lo = margin + std::max(0.0, -px);
  const double x_hi = (w - 1 - margin) - std::max(0.0, px);
  const double y_lo = margin + std::max(0.0, -py);
  const double y_hi = (h - 1 - margin) - std::max(0.0, py);
  const double sx = rng.uniform_range(x_lo, std::max(x_lo, x_hi));
  const double sy = rng.uniform_range(y_lo, std::max(y_lo, y_hi));

  const double frac = e.frames > 1 ? static_cast<double>(frame_index) / (e.frames - 1) : 0.0;
  const double ox = sx + px * frac;
  const double oy = sy + py * frac;

  std::vector<float> out(static_cast<std::size_t>(h) * w * c, 0.0f);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double v = 0.0;
      for (const auto& b : glyph.blobs) {
        const double ddx = x - (ox + b.dx);
        const double ddy = y - (oy + b.dy);
        v += b.amp * std::exp(-(ddx * ddx + ddy * ddy) / (2.0 * b.sigma * b.sigma));
      }
      v = std::min(1.0, std::max(0.0, v));
      for (int ch = 0; ch < c; ++ch)
        out[(static_cast<std::size_t>(y) * w + x) * c + ch] =
            static_cast<float>(v * glyph.channel_gain[static_cast<std::size_t>(ch)]);
    }
  }
  return out;
}

namespace {

// Enforce the pairwise-distinctness property: any two gestures must differ by
// at least 0.1 in at least 5% of stack pixels. Violations resample the glyph.
bool stacks_distinct(const std::vector<float>& a, const std::vector<float>& b) {
  std::size_t differing = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (std::fabs(a[i] - b[i]) >= 0.1f) ++differing;
  return differing * 20 >= a.size();  // >= 5%
}

std::vector<float> render_stack(const GestureLexicon& lex, int gesture) {
  const int f = lex.entry(gesture).frames;
  std::vector<float> stack;
  for (int i = 0; i < f; ++i) {
    auto frame = render_gesture(lex, gesture, i);
    stack.insert(stack.end(), frame.begin(), frame.end());
  }
  return stack;
}

GestureLexicon build_lexicon(const CorpusConfig& cfg) {
  GestureLexicon lex;
  lex.frame_h = cfg.frame_h;
  lex.frame_w = cfg.frame_w;
  lex.frame_c = cfg.frame_c;
  lex.motion_path_len = cfg.motion_path_len;
  std::vector<std::vector<float>> stacks;
  for (int g = 0; g < cfg.gestures; ++g) {
    bool placed = false;
    for (std::uint64_t attempt = 0; attempt < 100 && !placed; ++attempt) {
      GestureEntry e;
      e.gesture = g;
      e.glyph_seed = derive_seed(cfg.seed, "glyph", static_cast<std::uint64_t>(g), attempt);
      e.frames = cfg.frames_per_gesture;
      e.token = Vocabulary::kNumSpecials + g;
      lex.entries.push_back(e);
      auto stack = render_stack(lex, g);
      placed = true;
      for (const auto& other : stacks) {
        if (!stacks_distinct(stack, other)) {
          placed = false;
          lex.entries.pop_back();
          break;
        }
      }
      if (placed) stacks.push_back(std::move(stack));
    }
    if (!placed) throw ConfigError("corpus: could not draw a distinct glyph for gesture " + std::to_string(g));
  }
  return lex;
}

// Records splice pre-rendered gesture stacks (rendering is pure, so the cache
// is exact) and then add per-record pixel noise.
CorpusRecord make_record(const CorpusConfig& cfg, const std::vector<std::vector<float>>& stacks,
                         std::uint32_t sample_id, std::uint64_t attempt,
                         std::vector<int>* gestures_out) {
  Rng rng(derive_seed(cfg.seed, "record", sample_id, attempt));
  const int len = rng.uniform_int(cfg.sentence_min, cfg.sentence_max);
  std::vector<int> gestures(static_cast<std::size_t>(len));
  for (auto& g : gestures) g = static_cast<int>(rng.uniform_u32(static_cast<std::uint32_t>(cfg.gestures)));

  CorpusRecord rec;
  rec.sample_id = sample_id;
  rec.clip.h = cfg.frame_h;
  rec.clip.w = cfg.frame_w;
  rec.clip.c = cfg.frame_c;
  rec.clip.t = len * cfg.frames_per_gesture;
  rec.clip.valid_len = rec.clip.t;
  rec.clip.frames.reserve(static_cast<std::size_t>(rec.clip.t) * rec.clip.frame_elems());
  for (int g : gestures) {
    const auto& stack = stacks[static_cast<std::size_t>(g)];
    rec.clip.frames.insert(rec.clip.frames.end(), stack.begin(), stack.end());
  }
  if (cfg.noise_std > 0) {
    for (auto& v : rec.clip.frames) {
      v = static_cast<float>(
          std::min(1.0, std::max(0.0, static_cast<double>(v) + cfg.noise_std * rng.normal())));
    }
  }

  std::vector<int> tokens(gestures.size());
  for (std::size_t i = 0; i < gestures.size(); ++i)
    tokens[i] = Vocabulary::kNumSpecials + gestures[i];
  tokens = apply_reorder(tokens, cfg.reorder);
  rec.sentence.clear();
  rec.sentence.push_back(Vocabulary::kBos);
  rec.sentence.insert(rec.sentence.end(), tokens.begin(), tokens.end());
  rec.sentence.push_back(Vocabulary::kEos);

  if (gestures_out) *gestures_out = std::move(gestures);
  return rec;
}

}  // namespace

Corpus generate_corpus(const CorpusConfig& config) {
  config.validate();
  Corpus corpus;
  corpus.config = config;
  corpus.vocab = Vocabulary::build(config.gestures);
  corpus.lexicon = build_lexicon(config);

  std::vector<std::vector<float>> stacks;
  stacks.reserve(static_cast<std::size_t>(config.gestures));
  for (int g = 0; g < config.gestures; ++g) stacks.push_back(render_stack(corpus.lexicon, g));

  std::set<std::vector<int>> train_sequences;
  std::uint32_t next_id = 0;

  corpus.train.reserve(static_cast<std::size_t>(config.train_count));
  for (int i = 0; i < config.train_count; ++i) {
    std::vector<int> gestures;
    corpus.train.push_back(make_record(config, stacks, next_id++, 0, &gestures));
    train_sequences.insert(std::move(gestures));
  }

  auto fill_eval = [&](std::vector<CorpusRecord>& out, int count) {
    out.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
      const std::uint32_t id = next_id++;
      for (std::uint64_t attempt = 0;; ++attempt) {
        if (attempt >= 1000)
          throw ConfigError("corpus: unable to draw an eval sequence disjoint from train; "
                            "increase gestures or sentence length range");
        std::vector<int> gestures;
        CorpusRecord rec = make_record(config, stacks, id, attempt, &gestures);
        if (train_sequences.count(gestures)) continue;
        out.push_back(std::move(rec));
        break;
      }
    }
  };
  fill_eval(corpus.dev, config.dev_count);
  fill_eval(corpus.test, config.test_count);

  // No exact-sequence leakage between train and dev/test. The reorder rules
  // are involutions, so applying the rule again recovers gesture order.
  auto assert_disjoint = [&](const std::vector<CorpusRecord>& split, const char* which) {
    for (const auto& rec : split) {
      std::vector<int> tokens(rec.sentence.begin() + 1, rec.sentence.end() - 1);
      tokens = apply_reorder(tokens, config.reorder);
      std::vector<int> gestures(tokens.size());
      for (std::size_t i = 0; i < tokens.size(); ++i)
        gestures[i] = tokens[i] - Vocabulary::kNumSpecials;
      if (train_sequences.count(gestures))
        throw ConfigError(std::string("corpus: train leakage into ") + which);
    }
  };
  assert_disjoint(corpus.dev, "dev");
  assert_disjoint(corpus.test, "test");
  return corpus;
}

// ---------------------------------------------------------------------------
// dataset file I/O
// ---------------------------------------------------------------------------

namespace {

template <class T>
void put(std::ofstream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

struct Reader {
  std::ifstream is;
  std::uint64_t offset = 0;
  std::string path;

  template <class T>
  T get() {
    T v;
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is)
      throw FormatError("dataset '" + path + "' truncated at byte offset " + std::to_string(offset));
    offset += sizeof(T);
    return v;
  }

  void get_floats(float* dst, std::size_t n) {
    is.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(n * sizeof(float)));
    if (!is)
      throw FormatError("dataset '" + path + "' truncated at byte offset " + std::to_string(offset));
    offset += n * sizeof(float);
  }
};

}  // namespace

void write_dataset(const std::vector<CorpusRecord>& records, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open '" + path + "' for writing");
  os.write(kDatasetMagic, 4);
  put<std::uint32_t>(os, kDatasetVersion);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(records.size()));
  for (const auto& rec : records) {
    put<std::uint32_t>(os, rec.sample_id);
    put<std::uint16_t>(os, static_cast<std::uint16_t>(rec.clip.t));
    put<std::uint16_t>(os, static_cast<std::uint16_t>(rec.clip.h));
    put<std::uint16_t>(os, static_cast<std::uint16_t>(rec.clip.w));
    put<std::uint16_t>(os, static_cast<std::uint16_t>(rec.clip.c));
    os.write(reinterpret_cast<const char*>(rec.clip.frames.data()),
             static_cast<std::streamsize>(rec.clip.frames.size() * sizeof(float)));
    put<std::uint16_t>(os, static_cast<std::uint16_t>(rec.sentence.size()));
    for (int id : rec.sentence) put<std::uint16_t>(os, static_cast<std::uint16_t>(id));
  }
  if (!os) throw FormatError("write to '" + path + "' failed");
}

std::vector<CorpusRecord> read_dataset(const std::string& path) {
  Reader r;
  r.path = path;
  r.is.open(path, std::ios::binary);
  if (!r.is) throw FormatError("cannot open '" + path + "' for reading");

  char magic[4];
  r.is.read(magic, 4);
  if (!r.is || std::memcmp(magic, kDatasetMagic, 4) != 0)
    throw FormatError("dataset '" + path + "': bad magic at byte offset 0");
  r.offset = 4;

  const auto version = r.get<std::uint32_t>();
  if (version != kDatasetVersion)
    throw VersionError("dataset '" + path + "' has version " + std::to_string(version) +
                       ", this build reads version " + std::to_string(kDatasetVersion));

  const auto count = r.get<std::uint32_t>();
  std::vector<CorpusRecord> records;
  records.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    CorpusRecord rec;
    rec.sample_id = r.get<std::uint32_t>();
    rec.clip.t = r.get<std::uint16_t>();
    rec.clip.h = r.get<std::uint16_t>();
    rec.clip.w = r.get<std::uint16_t>();
    rec.clip.c = r.get<std::uint16_t>();
    rec.clip.valid_len = rec.clip.t;
    rec.clip.frames.resize(static_cast<std::size_t>(rec.clip.t) * rec.clip.frame_elems());
    r.get_floats(rec.clip.frames.data(), rec.clip.frames.size());
    const auto slen = r.get<std::uint16_t>();
    rec.sentence.resize(slen);
    for (auto& id : rec.sentence) id = r.get<std::uint16_t>();
    records.push_back(std::move(rec));
  }
  return records;
}

// ---------------------------------------------------------------------------
// corpus directory (three splits + JSON sidecar)
// ---------------------------------------------------------------------------

void save_corpus_dir(const Corpus& corpus, const std::string& dir) {
  std::filesystem::create_directories(dir);
  write_dataset(corpus.train, dir + "/train.gfsl");
  write_dataset(corpus.dev, dir + "/dev.gfsl");
  write_dataset(corpus.test, dir + "/test.gfsl");

  nlohmann::json j;
  j["version"] = 1;
  j["vocab"] = corpus.vocab.tokens;
  nlohmann::json lex = nlohmann::json::array();
  for (const auto& e : corpus.lexicon.entries) {
    lex.push_back({{"gesture", e.gesture},
                   {"glyph_seed", e.glyph_seed},
                   {"frames", e.frames},
                   {"token", e.token}});
  }
  j["lexicon"] = {{"entries", lex},
                  {"frame_h", corpus.lexicon.frame_h},
                  {"frame_w", corpus.lexicon.frame_w},
                  {"frame_c", corpus.lexicon.frame_c},
                  {"motion_path_len", corpus.lexicon.motion_path_len}};
  j["config"] = {{"gestures", corpus.config.gestures},
                 {"frames_per_gesture", corpus.config.frames_per_gesture},
                 {"frame_h", corpus.config.frame_h},
                 {"frame_w", corpus.config.frame_w},
                 {"frame_c", corpus.config.frame_c},
                 {"sentence_min", corpus.config.sentence_min},
                 {"sentence_max", corpus.config.sentence_max},
                 {"reorder", reorder_rule_name(corpus.config.reorder)},
                 {"noise_std", corpus.config.noise_std},
                 {"motion_path_len", corpus.config.motion_path_len},
                 {"train_count", corpus.config.train_count},
                 {"dev_count", corpus.config.dev_count},
                 {"test_count", corpus.config.test_count},
                 {"seed", corpus.config.seed}};
  std::ofstream os(dir + "/corpus.json");
  if (!os) throw FormatError("cannot open '" + dir + "/corpus.json' for writing");
  os << j.dump(2) << "\n";
}

Corpus load_corpus_dir(const std::string& dir) {
  std::ifstream is(dir + "/corpus.json");
  if (!is) throw FormatError("cannot open '" + dir + "/corpus.json' for reading");
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("corpus sidecar '" + dir + "/corpus.json': " + e.what());
  }

  Corpus corpus;
  corpus.vocab.tokens = j.at("vocab").get<std::vector<std::string>>();
  const auto& lex = j.at("lexicon");
  corpus.lexicon.frame_h = lex.at("frame_h").get<int>();
  corpus.lexicon.frame_w = lex.at("frame_w").get<int>();
  corpus.lexicon.frame_c = lex.at("frame_c").get<int>();
  corpus.lexicon.motion_path_len = lex.at("motion_path_len").get<double>();
  for (const auto& e : lex.at("entries")) {
    GestureEntry entry;
    entry.gesture = e.at("gesture").get<int>();
    entry.glyph_seed = e.at("glyph_seed").get<std::uint64_t>();
    entry.frames = e.at("frames").get<int>();
    entry.token = e.at("token").get<int>();
    corpus.lexicon.entries.push_back(entry);
  }
  const auto& c = j.at("config");
  corpus.config.gestures = c.at("gestures").get<int>();
  corpus.config.frames_per_gesture = c.at("frames_per_gesture").get<int>();
  corpus.config.frame_h = c.at("frame_h").get<int>();
  corpus.config.frame_w = c.at("frame_w").get<int>();
  corpus.config.frame_c = c.at("frame_c").get<int>();
  corpus.config.sentence_min = c.at("sentence_min").get<int>();
  corpus.config.sentence_max = c.at("sentence_max").get<int>();
  corpus.config.reorder = reorder_rule_from_name(c.at("reorder").get<std::string>());
  corpus.config.noise_std = c.at("noise_std").get<double>();
  corpus.config.motion_path_len = c.at("motion_path_len").get<double>();
  corpus.config.train_count = c.at("train_count").get<int>();
  corpus.config.dev_count = c.at("dev_count").get<int>();
  corpus.config.test_count = c.at("test_count").get<int>();
  corpus.config.seed = c.at("seed").get<std::uint64_t>();

  corpus.train = read_dataset(dir + "/train.gfsl");
  corpus.dev = read_dataset(dir + "/dev.gfsl");
  corpus.test = read_dataset(dir + "/test.gfsl");
  return corpus;
}

}  // namespace gfslt
