#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "gfslt/corpus.hpp"
#include "gfslt/rng.hpp"

using namespace gfslt;

namespace {

CorpusConfig small_config() {
  CorpusConfig c;
  c.gestures = 8;
  c.train_count = 24;
  c.dev_count = 6;
  c.test_count = 6;
  c.sentence_min = 2;
  c.sentence_max = 4;
  c.noise_std = 0.0;
  c.seed = 404;
  return c;
}

std::string temp_path(const char* name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

// Intensity centroid of one frame (channel 0).
std::pair<double, double> centroid(const GestureLexicon& lex, const std::vector<float>& frame) {
  double sx = 0, sy = 0, mass = 0;
  for (int y = 0; y < lex.frame_h; ++y) {
    for (int x = 0; x < lex.frame_w; ++x) {
      const double v = frame[(static_cast<std::size_t>(y) * lex.frame_w + x) * lex.frame_c];
      sx += v * x;
      sy += v * y;
      mass += v;
    }
  }
  return {sx / mass, sy / mass};
}

// Independent oracle translator: match each F-frame window against every
// rendered gesture stack by squared distance, then apply the reorder rule.
// On a noise-free identity corpus this must reproduce every sentence.
TokenSequence oracle_translate(const Corpus& corpus, const VideoClip& clip) {
  const auto& lex = corpus.lexicon;
  const int f = corpus.config.frames_per_gesture;
  const int n_gestures = clip.valid_len / f;
  std::vector<int> gestures;
  for (int g = 0; g < n_gestures; ++g) {
    double best = 1e300;
    int best_id = -1;
    for (const auto& entry : lex.entries) {
      double dist = 0;
      for (int i = 0; i < f; ++i) {
        const auto frame = render_gesture(lex, entry.gesture, i);
        const float* clip_frame = clip.frame(g * f + i);
        for (std::size_t p = 0; p < frame.size(); ++p) {
          const double d = frame[p] - clip_frame[p];
          dist += d * d;
        }
      }
      if (dist < best) {
        best = dist;
        best_id = entry.gesture;
      }
    }
    gestures.push_back(best_id);
  }
  std::vector<int> tokens(gestures.size());
  for (std::size_t i = 0; i < gestures.size(); ++i)
    tokens[i] = lex.entry(gestures[i]).token;
  tokens = apply_reorder(tokens, corpus.config.reorder);
  TokenSequence out{Vocabulary::kBos};
  out.insert(out.end(), tokens.begin(), tokens.end());
  out.push_back(Vocabulary::kEos);
  return out;
}

}  // namespace

TEST_CASE("vocabulary layout") {
  const Vocabulary v = Vocabulary::build(8);
  CHECK(v.size() == 13);
  CHECK(Vocabulary::kPad == 0);
  CHECK(v.is_special(Vocabulary::kCls));
  CHECK(!v.is_special(5));
  CHECK(v.id_of("g03") == 8);
}

TEST_CASE("reorder rules") {
  const std::vector<int> toks{10, 11, 12, 13, 14};
  CHECK(apply_reorder(toks, ReorderRule::kIdentity) == toks);
  CHECK(apply_reorder(toks, ReorderRule::kReverse) == std::vector<int>{14, 13, 12, 11, 10});
  CHECK(apply_reorder(toks, ReorderRule::kSwapPairs) == std::vector<int>{11, 10, 13, 12, 14});
}

TEST_CASE("sentences wrap mapped tokens per the rule") {
  CorpusConfig cfg = small_config();
  cfg.reorder = ReorderRule::kIdentity;
  Corpus identity = generate_corpus(cfg);
  cfg.reorder = ReorderRule::kReverse;
  Corpus reversed = generate_corpus(cfg);

  for (std::size_t i = 0; i < identity.train.size(); ++i) {
    const auto& a = identity.train[i].sentence;
    const auto& b = reversed.train[i].sentence;
    CHECK(a.front() == Vocabulary::kBos);
    CHECK(a.back() == Vocabulary::kEos);
    // Same gesture draws (same record seeds), reversed token order.
    std::vector<int> mid_a(a.begin() + 1, a.end() - 1);
    std::vector<int> mid_b(b.begin() + 1, b.end() - 1);
    std::reverse(mid_b.begin(), mid_b.end());
    CHECK(mid_a == mid_b);
    for (int t : mid_a) CHECK(t >= Vocabulary::kNumSpecials);
  }
}

TEST_CASE("regeneration with the same seed is bitwise identical") {
  const Corpus a = generate_corpus(small_config());
  const Corpus b = generate_corpus(small_config());
  REQUIRE(a.train.size() == b.train.size());
  for (std::size_t i = 0; i < a.train.size(); ++i) {
    CHECK(a.train[i].sentence == b.train[i].sentence);
    CHECK(a.train[i].clip.frames == b.train[i].clip.frames);
  }
  CHECK(a.lexicon.entries.size() == b.lexicon.entries.size());
}

TEST_CASE("rendering is pure and frames carry per-gesture motion") {
  const Corpus corpus = generate_corpus(small_config());
  const auto& lex = corpus.lexicon;

  const auto once = render_gesture(lex, 3, 0);
  const auto twice = render_gesture(lex, 3, 0);
  CHECK(once == twice);

  for (const auto& entry : lex.entries) {
    const auto first = render_gesture(lex, entry.gesture, 0);
    const auto last = render_gesture(lex, entry.gesture, entry.frames - 1);
    const auto [x0, y0] = centroid(lex, first);
    const auto [x1, y1] = centroid(lex, last);
    const double moved = std::sqrt((x1 - x0) * (x1 - x0) + (y1 - y0) * (y1 - y0));
    CHECK(std::fabs(moved - lex.motion_path_len) <= 1.0);
  }

  CHECK_THROWS_AS(render_gesture(lex, 999, 0), IndexError);
  CHECK_THROWS_AS(render_gesture(lex, 0, 99), IndexError);
}

TEST_CASE("distinct gestures differ in at least 5% of pixels by 0.1") {
  const Corpus corpus = generate_corpus(small_config());
  const auto& lex = corpus.lexicon;
  const int f = corpus.config.frames_per_gesture;
  for (std::size_t a = 0; a < lex.entries.size(); ++a) {
    for (std::size_t b = a + 1; b < lex.entries.size(); ++b) {
      std::size_t differing = 0, total = 0;
      for (int i = 0; i < f; ++i) {
        const auto fa = render_gesture(lex, static_cast<int>(a), i);
        const auto fb = render_gesture(lex, static_cast<int>(b), i);
        for (std::size_t p = 0; p < fa.size(); ++p) {
          if (std::fabs(fa[p] - fb[p]) >= 0.1f) ++differing;
          ++total;
        }
      }
      CHECK(differing * 20 >= total);
    }
  }
}

TEST_CASE("dev and test sequences are disjoint from train") {
  const Corpus corpus = generate_corpus(small_config());
  std::set<std::vector<int>> train;
  for (const auto& rec : corpus.train)
    train.insert(std::vector<int>(rec.sentence.begin() + 1, rec.sentence.end() - 1));
  for (const auto& split : {corpus.dev, corpus.test})
    for (const auto& rec : split)
      CHECK(train.count(std::vector<int>(rec.sentence.begin() + 1, rec.sentence.end() - 1)) == 0);
}

TEST_CASE("oracle translator achieves 100% on a clean identity corpus") {
  CorpusConfig cfg = small_config();
  cfg.reorder = ReorderRule::kIdentity;
  cfg.noise_std = 0.0;
  cfg.train_count = 12;
  const Corpus corpus = generate_corpus(cfg);
  for (const auto& rec : corpus.train) CHECK(oracle_translate(corpus, rec.clip) == rec.sentence);
  for (const auto& rec : corpus.dev) CHECK(oracle_translate(corpus, rec.clip) == rec.sentence);
}

TEST_CASE("dataset file round trip is bitwise lossless") {
  const Corpus corpus = generate_corpus(small_config());
  const std::string path = temp_path("gfslt_corpus_roundtrip.gfsl");
  write_dataset(corpus.train, path);
  const auto back = read_dataset(path);
  REQUIRE(back.size() == corpus.train.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].sample_id == corpus.train[i].sample_id);
    CHECK(back[i].sentence == corpus.train[i].sentence);
    CHECK(back[i].clip.frames == corpus.train[i].clip.frames);
    CHECK(back[i].clip.t == corpus.train[i].clip.t);
  }
  std::filesystem::remove(path);
}

TEST_CASE("corrupt magic and future versions are rejected") {
  const Corpus corpus = generate_corpus(small_config());
  const std::string path = temp_path("gfslt_corpus_corrupt.gfsl");
  write_dataset(corpus.train, path);

  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(0);
    f.write("XXXX", 4);
  }
  CHECK_THROWS_WITH_AS(read_dataset(path), doctest::Contains("byte offset 0"), FormatError);

  write_dataset(corpus.train, path);
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(4);
    const std::uint32_t future = 99;
    f.write(reinterpret_cast<const char*>(&future), 4);
  }
  CHECK_THROWS_WITH_AS(read_dataset(path), doctest::Contains("version 99"), VersionError);

  // Truncation reports an offset and yields no partial result.
  write_dataset(corpus.train, path);
  std::filesystem::resize_file(path, 100);
  CHECK_THROWS_AS(read_dataset(path), FormatError);
  std::filesystem::remove(path);
}

TEST_CASE("corpus directory with sidecar reloads") {
  const Corpus corpus = generate_corpus(small_config());
  const std::string dir = temp_path("gfslt_corpus_dir");
  save_corpus_dir(corpus, dir);
  const Corpus back = load_corpus_dir(dir);
  CHECK(back.vocab.tokens == corpus.vocab.tokens);
  CHECK(back.config.gestures == corpus.config.gestures);
  CHECK(back.config.seed == corpus.config.seed);
  CHECK(back.lexicon.entries.size() == corpus.lexicon.entries.size());
  CHECK(back.lexicon.entries[2].glyph_seed == corpus.lexicon.entries[2].glyph_seed);
  CHECK(back.train.size() == corpus.train.size());
  CHECK(back.dev[0].clip.frames == corpus.dev[0].clip.frames);
  std::filesystem::remove_all(dir);
}

TEST_CASE("invalid corpus configs are rejected") {
  CorpusConfig c = small_config();
  c.gestures = 1;
  CHECK_THROWS_AS(generate_corpus(c), ConfigError);
  c = small_config();
  c.sentence_min = 5;
  c.sentence_max = 3;
  CHECK_THROWS_AS(generate_corpus(c), ConfigError);
  c = small_config();
  c.motion_path_len = 500.0;
  CHECK_THROWS_AS(generate_corpus(c), ConfigError);
}
