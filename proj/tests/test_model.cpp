#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "gfslt/gradcheck.hpp"
#include "gfslt/model.hpp"
#include "gfslt/objectives.hpp"
#include "gfslt/rng.hpp"
#include "gfslt/trainer.hpp"

using namespace gfslt;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.frame_h = 16;
  cfg.frame_w = 16;
  cfg.frame_c = 1;
  cfg.cnn_channels = {4, 8};
  cfg.d_model = 16;
  cfg.d_proj = 8;
  cfg.heads = 2;
  cfg.d_ff = 32;
  cfg.enc_layers = 1;
  cfg.text_enc_layers = 1;
  cfg.dec_layers = 1;
  cfg.vocab_size = 11;
  return cfg;
}

VideoClip random_clip(int t, int h, int w, std::uint64_t seed, int valid = -1) {
  VideoClip clip;
  clip.t = t;
  clip.h = h;
  clip.w = w;
  clip.c = 1;
  clip.valid_len = valid < 0 ? t : valid;
  clip.frames.resize(static_cast<std::size_t>(t) * h * w, 0.0f);
  Rng rng(seed);
  for (int ti = 0; ti < clip.valid_len; ++ti)
    for (std::size_t p = 0; p < clip.frame_elems(); ++p)
      clip.frame(ti)[p] = static_cast<float>(rng.uniform());
  return clip;
}

std::vector<float> tensor_values(const TensorF& t) {
  return std::vector<float>(t.ptr(), t.ptr() + t.numel());
}

}  // namespace

TEST_CASE("visual encoder shape contract: T=16 gives CLS + 4 positions") {
  ModelConfig cfg = tiny_config();
  ParameterStore ps;
  Stage1Model m = register_stage1(ps, cfg, 1);
  TapeF tape(false);
  auto pv = bind(ps, nullptr);
  auto out = visual_encode(tape, pv, m.ve, cfg, random_clip(16, 16, 16, 2));
  CHECK(out.seq.shape == std::vector<int>{5, cfg.d_model});
  CHECK(out.cls.shape == std::vector<int>{1, cfg.d_model});
  CHECK(out.key_valid == std::vector<std::uint8_t>{1, 1, 1, 1, 1});

  // Lengths not divisible by 4 are pre-padded; no valid frame is dropped.
  auto odd = visual_encode(tape, pv, m.ve, cfg, random_clip(10, 16, 16, 3));
  CHECK(odd.seq.dim(0) == 4);  // ceil(10/4) = 3 content positions + CLS
  CHECK(odd.key_valid == std::vector<std::uint8_t>{1, 1, 1, 1});

  CHECK_THROWS_AS(visual_encode(tape, pv, m.ve, cfg, random_clip(3, 16, 16, 4)), InputError);
}

TEST_CASE("zero-parameter visual encoder is constant across clips") {
  ModelConfig cfg = tiny_config();
  ParameterStore ps;
  Stage1Model m = register_stage1(ps, cfg, 1);
  for (int i = 0; i < ps.count(); ++i)
    std::fill(ps.value(i)->begin(), ps.value(i)->end(), 0.0f);
  TapeF tape(false);
  auto pv = bind(ps, nullptr);
  auto a = visual_encode(tape, pv, m.ve, cfg, random_clip(8, 16, 16, 5));
  auto b = visual_encode(tape, pv, m.ve, cfg, random_clip(8, 16, 16, 6));
  CHECK(tensor_values(a.cls) == tensor_values(b.cls));
}

TEST_CASE("visual padding invariance: appended masked frames leave CLS unchanged") {
  ModelConfig cfg = tiny_config();
  ParameterStore ps;
  Stage1Model m = register_stage1(ps, cfg, 7);
  TapeF tape(false);
  auto pv = bind(ps, nullptr);

  VideoClip clip = random_clip(16, 16, 16, 8);
  auto base = visual_encode(tape, pv, m.ve, cfg, clip);

  VideoClip padded = clip;
  padded.t = 20;  // 4 all-zero padding frames, mask updated via valid_len
  padded.frames.resize(static_cast<std::size_t>(20) * padded.frame_elems(), 0.0f);
  auto with_pad = visual_encode(tape, pv, m.ve, cfg, padded);

  CHECK(with_pad.seq.dim(0) == 6);
  const auto a = tensor_values(base.cls);
  const auto b = tensor_values(with_pad.cls);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::fabs(a[i] - b[i]) <= 1e-5f);
}

TEST_CASE("text encoder eos summary and input validation") {
  ModelConfig cfg = tiny_config();
  ParameterStore ps;
  Stage1Model m = register_stage1(ps, cfg, 9);
  TapeF tape(false);
  auto pv = bind(ps, nullptr);

  auto out = text_encode(tape, pv, m.te, cfg, {Vocabulary::kBos, Vocabulary::kEos});
  CHECK(out.seq.dim(0) == 2);
  // EOS summary is the output at the EOS position.
  const auto row1 = std::vector<float>(out.seq.ptr() + cfg.d_model, out.seq.ptr() + 2 * cfg.d_model);
  CHECK(tensor_values(out.eos) == row1);

  CHECK_THROWS_AS(text_encode(tape, pv, m.te, cfg, {Vocabulary::kBos, 5, 6}), InputError);
  CHECK_THROWS_AS(
      text_encode(tape, pv, m.te, cfg, {Vocabulary::kBos, Vocabulary::kEos, Vocabulary::kEos}),
      InputError);
}

TEST_CASE("text padding invariance and order sensitivity") {
  ModelConfig cfg = tiny_config();
  ParameterStore ps;
  Stage1Model m = register_stage1(ps, cfg, 10);
  TapeF tape(false);
  auto pv = bind(ps, nullptr);

  const TokenSequence sent{Vocabulary::kBos, 5, 7, 9, Vocabulary::kEos};
  auto base = text_encode(tape, pv, m.te, cfg, sent);

  TokenSequence padded = sent;
  padded.push_back(Vocabulary::kPad);
  padded.push_back(Vocabulary::kPad);
  auto with_pad = text_encode(tape, pv, m.te, cfg, padded);
  const auto a = tensor_values(base.eos);
  const auto b = tensor_values(with_pad.eos);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::fabs(a[i] - b[i]) <= 1e-5f);

  // Swapping two non-special tokens must change the summary.
  auto swapped = text_encode(tape, pv, m.te, cfg, {Vocabulary::kBos, 7, 5, 9, Vocabulary::kEos});
  double diff = 0;
  const auto c = tensor_values(swapped.eos);
  for (std::size_t i = 0; i < a.size(); ++i) diff = std::max(diff, static_cast<double>(std::fabs(a[i] - c[i])));
  CHECK(diff > 1e-6);
}

TEST_CASE("decoder causality is exact") {
  ModelConfig cfg = tiny_config();
  ParameterStore ps;
  Stage1Model m = register_stage1(ps, cfg, 11);
  TapeF tape(false);
  auto pv = bind(ps, nullptr);

  VideoClip clip = random_clip(8, 16, 16, 12);
  auto venc = visual_encode(tape, pv, m.ve, cfg, clip);

  const TokenSequence p1{Vocabulary::kBos, 5, 6, 7};
  const TokenSequence p2{Vocabulary::kBos, 5, 6, 8};  // differs at position 3
  auto l1 = text_decode(tape, pv, m.td, cfg, p1, venc.seq, venc.key_valid);
  auto l2 = text_decode(tape, pv, m.td, cfg, p2, venc.seq, venc.key_valid);
  CHECK(l1.shape == std::vector<int>{4, cfg.vocab_size});
  // Positions before the changed token are bitwise identical.
  for (int r = 0; r < 3; ++r)
    for (int v = 0; v < cfg.vocab_size; ++v)
      CHECK((*l1.data)[static_cast<std::size_t>(r) * cfg.vocab_size + v] ==
            (*l2.data)[static_cast<std::size_t>(r) * cfg.vocab_size + v]);
  // The changed position differs.
  double diff = 0;
  for (int v = 0; v < cfg.vocab_size; ++v)
    diff = std::max(diff, std::fabs(static_cast<double>((*l1.data)[3u * cfg.vocab_size + v]) -
                                    (*l2.data)[3u * cfg.vocab_size + v]));
  CHECK(diff > 0);

  CHECK_THROWS_AS(text_decode(tape, pv, m.td, cfg, {5, 6}, venc.seq, venc.key_valid), InputError);
  CHECK_THROWS_AS(text_decode(tape, pv, m.td, cfg, {}, venc.seq, venc.key_valid), InputError);
}

TEST_CASE("masked memory positions do not reach the decoder") {
  ModelConfig cfg = tiny_config();
  ParameterStore ps;
  Stage1Model m = register_stage1(ps, cfg, 13);
  TapeF tape(false);
  auto pv = bind(ps, nullptr);

  Rng rng(14);
  std::vector<float> row(static_cast<std::size_t>(cfg.d_model));
  for (auto& v : row) v = static_cast<float>(rng.normal());

  auto mem1 = TensorF::from_values({1, cfg.d_model}, row);
  std::vector<float> twice = row;
  for (float v : row) twice.push_back(v + 3.0f);  // junk in the masked slot
  auto mem2 = TensorF::from_values({2, cfg.d_model}, twice);

  const TokenSequence prefix{Vocabulary::kBos, 5, 6};
  auto l1 = text_decode(tape, pv, m.td, cfg, prefix, mem1, {1});
  auto l2 = text_decode(tape, pv, m.td, cfg, prefix, mem2, {1, 0});
  for (std::size_t i = 0; i < l1.data->size(); ++i)
    CHECK(std::fabs((*l1.data)[i] - (*l2.data)[i]) <= 1e-5f);
}

TEST_CASE("projection heads produce unit vectors and the documented scale init") {
  ModelConfig cfg = tiny_config();
  ParameterStore ps;
  Stage1Model m = register_stage1(ps, cfg, 15);
  TapeF tape(false);
  auto pv = bind(ps, nullptr);

  Rng rng(16);
  std::vector<float> cls(static_cast<std::size_t>(cfg.d_model)), eos(cls.size());
  for (auto& v : cls) v = static_cast<float>(rng.normal());
  for (auto& v : eos) v = static_cast<float>(rng.normal());
  auto out = project(tape, pv, m.heads, TensorF::from_values({1, cfg.d_model}, cls),
                     TensorF::from_values({1, cfg.d_model}, eos));

  auto norm = [](const TensorF& t) {
    double s = 0;
    for (std::int64_t i = 0; i < t.numel(); ++i) s += static_cast<double>(t.ptr()[i]) * t.ptr()[i];
    return std::sqrt(s);
  };
  CHECK(std::fabs(norm(out.v) - 1.0) <= 1e-6);
  CHECK(std::fabs(norm(out.t) - 1.0) <= 1e-6);
  CHECK(out.scale.item() == doctest::Approx(1.0 / 0.07).epsilon(1e-4));

  // Identical inputs give cosine similarity 1.
  auto same = project(tape, pv, m.heads, TensorF::from_values({1, cfg.d_model}, cls),
                      TensorF::from_values({1, cfg.d_model}, cls));
  // The two heads differ, so compare v against itself via a fresh projection.
  double cos = 0;
  for (std::int64_t i = 0; i < same.v.numel(); ++i)
    cos += static_cast<double>(same.v.ptr()[i]) * out.v.ptr()[i];
  CHECK(cos == doctest::Approx(1.0));
}

TEST_CASE("forward passes are bitwise deterministic") {
  ModelConfig cfg = tiny_config();
  ParameterStore ps;
  Stage1Model m = register_stage1(ps, cfg, 17);
  auto pv = bind(ps, nullptr);
  VideoClip clip = random_clip(12, 16, 16, 18);
  TapeF t1(false), t2(false);
  auto a = visual_encode(t1, pv, m.ve, cfg, clip);
  auto b = visual_encode(t2, pv, m.ve, cfg, clip);
  CHECK(tensor_values(a.seq) == tensor_values(b.seq));
}

TEST_CASE("registration is a pure function of the seed") {
  ModelConfig cfg = tiny_config();
  ParameterStore a, b, c;
  register_stage1(a, cfg, 21);
  register_stage1(b, cfg, 21);
  register_stage1(c, cfg, 22);
  REQUIRE(a.count() == b.count());
  bool all_equal = true, any_diff_seed = false;
  for (int i = 0; i < a.count(); ++i) {
    if (*a.value(i) != *b.value(i)) all_equal = false;
    if (*a.value(i) != *c.value(i)) any_diff_seed = true;
  }
  CHECK(all_equal);
  CHECK(any_diff_seed);
}

TEST_CASE("full stage-1 and stage-2 losses pass the gradient check") {
  // The acceptance suite runs the pinned d=16 configuration; this covers the
  // same path at unit-test scale with fewer sampled coordinates.
  ModelConfig cfg = tiny_config();
  CorpusConfig cc;
  cc.gestures = cfg.vocab_size - Vocabulary::kNumSpecials;
  cc.frame_h = cfg.frame_h;
  cc.frame_w = cfg.frame_w;
  cc.train_count = 2;
  cc.dev_count = 0;
  cc.test_count = 0;
  cc.sentence_min = 2;
  cc.sentence_max = 4;
  cc.noise_std = 0.01;
  cc.seed = 31;
  cc.motion_path_len = 1.0;
  Corpus corpus = generate_corpus(cc);

  ParameterStore ps;
  Stage1Model m = register_stage1(ps, cfg, 32);

  std::vector<Stage1Sample> batch;
  Rng mask_rng(33);
  for (int i = 0; i < 2; ++i) {
    Stage1Sample s;
    s.clip = corpus.train[static_cast<std::size_t>(i)].clip;
    s.sentence = corpus.train[static_cast<std::size_t>(i)].sentence;
    s.masked = mask_sentence(s.sentence, 0.15, mask_rng, cfg.vocab_size);
    batch.push_back(std::move(s));
  }
  const Stage1Options opt{0.1, false};
  auto stage1 = finite_diff_check_builder(
      ps,
      [&](auto& tape, const auto& view) { return stage1_batch_loss(tape, view, m, batch, opt); },
      1e-3, 24, 34);
  CHECK(stage1.max_rel_err <= 1e-3);

  ParameterStore ps2;
  GfsltModel g = register_gfslt(ps2, cfg, 35);
  std::vector<Stage2Sample> batch2;
  for (int i = 0; i < 2; ++i)
    batch2.push_back({corpus.train[static_cast<std::size_t>(i)].clip,
                      corpus.train[static_cast<std::size_t>(i)].sentence});
  auto stage2 = finite_diff_check_builder(
      ps2,
      [&](auto& tape, const auto& view) { return stage2_batch_loss(tape, view, g, batch2, 0.2); },
      1e-3, 24, 36);
  CHECK(stage2.max_rel_err <= 1e-3);
}
