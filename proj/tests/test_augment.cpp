#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "gfslt/augment.hpp"
#include "gfslt/corpus.hpp"
#include "gfslt/rng.hpp"

using namespace gfslt;

namespace {

VideoClip make_clip(int t, int h, int w, std::uint64_t seed) {
  VideoClip clip;
  clip.t = t;
  clip.h = h;
  clip.w = w;
  clip.c = 1;
  clip.valid_len = t;
  clip.frames.resize(static_cast<std::size_t>(t) * h * w);
  Rng rng(seed);
  for (auto& v : clip.frames) v = static_cast<float>(rng.uniform());
  return clip;
}

// A clip whose single glyph sits exactly at the frame center.
VideoClip centered_glyph_clip(int h, int w) {
  VideoClip clip;
  clip.t = 1;
  clip.h = h;
  clip.w = w;
  clip.c = 1;
  clip.valid_len = 1;
  clip.frames.resize(static_cast<std::size_t>(h) * w);
  const double cy = (h - 1) / 2.0, cx = (w - 1) / 2.0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      clip.frames[static_cast<std::size_t>(y) * w + x] =
          static_cast<float>(std::exp(-((x - cx) * (x - cx) + (y - cy) * (y - cy)) / (2 * 2.0 * 2.0)));
  return clip;
}

std::pair<double, double> centroid(const VideoClip& clip, int t) {
  double sx = 0, sy = 0, mass = 0;
  const float* f = clip.frame(t);
  for (int y = 0; y < clip.h; ++y)
    for (int x = 0; x < clip.w; ++x) {
      const double v = f[static_cast<std::size_t>(y) * clip.w + x];
      sx += v * x;
      sy += v * y;
      mass += v;
    }
  return {sx / mass, sy / mass};
}

}  // namespace

TEST_CASE("identity policy returns a bitwise-equal clip") {
  const VideoClip clip = make_clip(6, 16, 16, 9);
  const VideoClip out = augment_clip(clip, AugmentPolicy::identity(), 1234);
  CHECK(out.frames == clip.frames);
  CHECK(out.t == clip.t);
}

TEST_CASE("augmentation is deterministic in (policy, seed)") {
  const VideoClip clip = make_clip(8, 24, 24, 10);
  const AugmentPolicy policy = AugmentPolicy::strong(42);
  const VideoClip a = augment_clip(clip, policy, 77);
  const VideoClip b = augment_clip(clip, policy, 77);
  CHECK(a.frames == b.frames);
  CHECK(a.t == b.t);
  // A different sample seed produces a different result somewhere.
  bool any_diff = false;
  for (int s = 78; s < 90 && !any_diff; ++s) {
    const VideoClip c = augment_clip(clip, policy, static_cast<std::uint64_t>(s));
    any_diff = c.t != a.t || c.frames != a.frames;
  }
  CHECK(any_diff);
}

TEST_CASE("frame drop keeps order and drops exactly the dropped frames") {
  VideoClip clip = make_clip(8, 4, 4, 11);
  AugmentPolicy policy = AugmentPolicy::identity();
  policy.p_temporal = 1.0;
  policy.temporal.drop_prob = 0.08;
  policy.temporal.max_len_change = 0.13;  // cap = 1 drop at T=8
  policy.seed = 5;

  bool saw_drop = false;
  for (std::uint64_t seed = 0; seed < 64; ++seed) {
    const VideoClip out = augment_clip(clip, policy, seed);
    CHECK(out.t >= 7);
    if (out.t == 7) {
      saw_drop = true;
      // Surviving frames appear in original order: match them in sequence.
      std::size_t src = 0;
      const std::size_t fe = clip.frame_elems();
      for (int t = 0; t < out.t; ++t) {
        while (src < 8 && !std::equal(out.frame(t), out.frame(t) + fe, clip.frame(static_cast<int>(src)))) ++src;
        CHECK(src < 8);
        ++src;
      }
    }
  }
  CHECK(saw_drop);
}

TEST_CASE("temporal length change respects the cap") {
  VideoClip clip = make_clip(12, 6, 6, 12);
  AugmentPolicy policy = AugmentPolicy::identity();
  policy.p_temporal = 1.0;
  policy.temporal.drop_prob = 0.9;
  policy.temporal.dup_prob = 0.9;
  policy.temporal.max_len_change = 0.25;
  policy.seed = 6;
  for (std::uint64_t seed = 0; seed < 32; ++seed) {
    const VideoClip out = augment_clip(clip, policy, seed);
    CHECK(out.t >= 9);   // at most floor(12 * 0.25) = 3 drops
    CHECK(out.t <= 12);  // dups capped relative to the post-drop length
  }
}

TEST_CASE("augmented clips stay in range and in shape") {
  const VideoClip clip = make_clip(10, 24, 24, 13);
  const AugmentPolicy policy = AugmentPolicy::strong(43);
  for (std::uint64_t seed = 0; seed < 24; ++seed) {
    const VideoClip out = augment_clip(clip, policy, seed);
    CHECK(out.h == clip.h);
    CHECK(out.w == clip.w);
    for (float v : out.frames) {
      CHECK(v >= 0.0f);
      CHECK(v <= 1.0f);
    }
  }
}

TEST_CASE("crop_resize identity, centroid preservation and bounds errors") {
  const VideoClip clip = centered_glyph_clip(24, 24);
  const VideoClip same = crop_resize(clip, 0, 0, 24, 24, 24, 24);
  for (std::size_t i = 0; i < clip.frames.size(); ++i)
    CHECK(std::fabs(same.frames[i] - clip.frames[i]) <= 1e-6f);

  // Center crop of a centered glyph keeps the centroid within a pixel.
  const VideoClip cropped = center_crop(clip, 0.75);
  const auto [x0, y0] = centroid(clip, 0);
  const auto [x1, y1] = centroid(cropped, 0);
  CHECK(std::fabs(x1 - x0) <= 1.0);
  CHECK(std::fabs(y1 - y0) <= 1.0);

  CHECK_THROWS_AS(crop_resize(clip, 5, 5, 5, 9, 24, 24), DimError);
  CHECK_THROWS_AS(crop_resize(clip, -1, 0, 10, 10, 24, 24), DimError);
  CHECK_THROWS_AS(crop_resize(clip, 0, 0, 25, 10, 24, 24), DimError);
}

TEST_CASE("policies validate their ranges") {
  AugmentPolicy p = AugmentPolicy::identity();
  p.p_geometric = 1.5;
  CHECK_THROWS_AS(p.validate(), ConfigError);

  p = AugmentPolicy::identity();
  p.geometric.crop_min = 0.9;
  p.geometric.crop_max = 0.8;
  CHECK_THROWS_AS(p.validate(), ConfigError);

  // A drop probability that could empty the clip is rejected up front.
  p = AugmentPolicy::identity();
  p.p_temporal = 0.5;
  p.temporal.drop_prob = 0.9;
  p.temporal.max_len_change = 0.9;
  CHECK_THROWS_AS(p.validate(), ConfigError);

  CHECK_NOTHROW(AugmentPolicy::strong(1).validate());
  CHECK_NOTHROW(AugmentPolicy::light(1).validate());
}

TEST_CASE("eval path is deterministic and seed free") {
  const VideoClip clip = make_clip(5, 24, 24, 14);
  const VideoClip a = center_crop(clip, 1.0);
  const VideoClip b = center_crop(clip, 1.0);
  CHECK(a.frames == clip.frames);
  CHECK(a.frames == b.frames);
}
