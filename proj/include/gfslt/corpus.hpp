#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gfslt/errors.hpp"
#include "gfslt/vocab.hpp"

namespace gfslt {

enum class ReorderRule { kIdentity, kReverse, kSwapPairs };

std::string reorder_rule_name(ReorderRule r);
ReorderRule reorder_rule_from_name(const std::string& name);

// Frames in [0,1], row-major [t, h, w, c]. Frames at t >= valid_len are
// all-zero padding.
struct VideoClip {
  int t = 0, h = 0, w = 0, c = 0;
  int valid_len = 0;
  std::vector<float> frames;

  std::size_t frame_elems() const { return static_cast<std::size_t>(h) * w * c; }
  float* frame(int ti) { return frames.data() + static_cast<std::size_t>(ti) * frame_elems(); }
  const float* frame(int ti) const {
    return frames.data() + static_cast<std::size_t>(ti) * frame_elems();
  }
};

struct GestureEntry {
  int gesture = 0;
  std::uint64_t glyph_seed = 0;
  int frames = 0;  // F: frames rendered per gesture
  int token = 0;   // text token id, injective over gestures
};

// Synthetic stand-in for a sign vocabulary: each gesture renders as a seeded
// blob glyph translated along a linear motion path over its F frames.
struct GestureLexicon {
  std::vector<GestureEntry> entries;
  int frame_h = 24, frame_w = 24, frame_c = 1;
  double motion_path_len = 5.0;

  const GestureEntry& entry(int gesture) const {
    if (gesture < 0 || gesture >= static_cast<int>(entries.size()))
      throw IndexError("lexicon: gesture " + std::to_string(gesture) + " out of range [0," +
                       std::to_string(entries.size()) + ")");
    return entries[static_cast<std::size_t>(gesture)];
  }
};

struct CorpusRecord {
  std::uint32_t sample_id = 0;
  VideoClip clip;
  TokenSequence sentence;  // BOS ... EOS
};

struct CorpusConfig {
  int gestures = 32;
  int frames_per_gesture = 4;
  int frame_h = 24, frame_w = 24, frame_c = 1;
  int sentence_min = 3, sentence_max = 8;
  ReorderRule reorder = ReorderRule::kReverse;
  double noise_std = 0.05;
  double motion_path_len = 5.0;
  int train_count = 2000, dev_count = 200, test_count = 200;
  std::uint64_t seed = 20240601;

  void validate() const;
};

struct Corpus {
  CorpusConfig config;
  Vocabulary vocab;
  GestureLexicon lexicon;
  std::vector<CorpusRecord> train, dev, test;
};

// One H*W*C frame of a gesture; pure in (lexicon, gesture, frame_index).
std::vector<float> render_gesture(const GestureLexicon& lexicon, int gesture, int frame_index);

// Applies the corpus reorder rule to a gesture-order token list.
std::vector<int> apply_reorder(const std::vector<int>& tokens, ReorderRule rule);

// Deterministic in config.seed; dev/test gesture sequences are disjoint from
// train sequences by construction, asserted before returning.
Corpus generate_corpus(const CorpusConfig& config);

// Binary dataset file: magic "GFSL", u32 version, u32 record count, then per
// record u32 sample id, u16 T/H/W/C, f32 frames, u16 sentence length,
// u16 token ids. Little-endian throughout; round trip is bitwise lossless.
void write_dataset(const std::vector<CorpusRecord>& records, const std::string& path);
std::vector<CorpusRecord> read_dataset(const std::string& path);

// JSON sidecar holding the vocabulary, lexicon and generation config.
void save_corpus_dir(const Corpus& corpus, const std::string& dir);
Corpus load_corpus_dir(const std::string& dir);

}  // namespace gfslt
