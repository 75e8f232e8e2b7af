#include "gfslt/augment.hpp"

#include <algorithm>
#include <cmath>

#include "gfslt/rng.hpp"

namespace gfslt {

void AugmentPolicy::validate() const {
  auto prob = [](double p, const char* name) {
    if (p < 0.0 || p > 1.0) throw ConfigError(std::string("augment: ") + name + " must be in [0,1]");
  };
  prob(p_geometric, "p_geometric");
  prob(p_color, "p_color");
  prob(p_temporal, "p_temporal");
  prob(temporal.drop_prob, "drop_prob");
  prob(temporal.dup_prob, "dup_prob");
  if (geometric.crop_min <= 0.0 || geometric.crop_min > geometric.crop_max || geometric.crop_max > 1.0)
    throw ConfigError("augment: crop range must satisfy 0 < min <= max <= 1");
  if (geometric.shift_frac < 0.0 || geometric.shift_frac > 0.5)
    throw ConfigError("augment: shift_frac must be in [0,0.5]");
  if (geometric.rot_deg < 0.0) throw ConfigError("augment: rot_deg must be >= 0");
  if (color.contrast_min <= 0.0 || color.contrast_min > color.contrast_max)
    throw ConfigError("augment: contrast range must satisfy 0 < min <= max");
  if (color.brightness < 0.0 || color.noise_std < 0.0)
    throw ConfigError("augment: brightness/noise ranges must be >= 0");
  // The drop cap floor(T * max_len_change) keeps at least half the frames, so
  // no drop probability can empty a clip once this bound holds.
  if (temporal.max_len_change < 0.0 || temporal.max_len_change > 0.5)
    throw ConfigError("augment: max_len_change must be in [0,0.5] or frame drops could empty the clip");
  if (temporal.drop_prob > 0.0 && temporal.max_len_change == 0.0 && p_temporal > 0.0)
    throw ConfigError("augment: drop_prob > 0 requires max_len_change > 0");
}

AugmentPolicy AugmentPolicy::identity() { return AugmentPolicy{}; }

AugmentPolicy AugmentPolicy::strong(std::uint64_t seed) {
  AugmentPolicy p;
  p.geometric = {0.7, 1.0, 0.10, 10.0};
  p.color = {0.2, 0.8, 1.25, 0.05};
  p.temporal = {0.1, 0.1, 0.25};
  p.p_geometric = p.p_color = p.p_temporal = 0.5;
  p.seed = seed;
  return p;
}

AugmentPolicy AugmentPolicy::light(std::uint64_t seed) {
  AugmentPolicy p;
  p.geometric = {0.9, 1.0, 0.0, 0.0};
  p.p_geometric = 0.5;
  p.seed = seed;
  return p;
}

AugmentPolicy AugmentPolicy::preset(const std::string& name, std::uint64_t seed) {
  if (name == "strong") return strong(seed);
  if (name == "light") return light(seed);
  if (name == "none") {
    AugmentPolicy p = identity();
    p.seed = seed;
    return p;
  }
  throw ConfigError("augment: unknown preset '" + name + "' (strong|light|none)");
}

namespace {

// Bilinear sample with zero outside the frame.
float sample_bilinear(const float* frame, int h, int w, int c, double y, double x, int ch) {
  const int x0 = static_cast<int>(std::floor(x));
  const int y0 = static_cast<int>(std::floor(y));
  const double fx = x - x0;
  const double fy = y - y0;
  auto px = [&](int yy, int xx) -> double {
    if (yy < 0 || yy >= h || xx < 0 || xx >= w) return 0.0;
    return frame[(static_cast<std::size_t>(yy) * w + xx) * c + ch];
  };
  const double v = px(y0, x0) * (1 - fx) * (1 - fy) + px(y0, x0 + 1) * fx * (1 - fy) +
                   px(y0 + 1, x0) * (1 - fx) * fy + px(y0 + 1, x0 + 1) * fx * fy;
  return static_cast<float>(v);
}

// Warp every frame with the same affine map: output pixel centers map onto a
// crop box of side fraction `crop`, center-shifted and rotated.
VideoClip warp_clip(const VideoClip& clip, double crop, double dx, double dy, double rot_rad) {
  VideoClip out = clip;
  const int h = clip.h, w = clip.w, c = clip.c;
  const double cx = w / 2.0 + dx;
  const double cy = h / 2.0 + dy;
  const double cosr = std::cos(rot_rad);
  const double sinr = std::sin(rot_rad);
  for (int t = 0; t < clip.t; ++t) {
    const float* src = clip.frame(t);
    float* dst = out.frame(t);
    for (int v = 0; v < h; ++v) {
      for (int u = 0; u < w; ++u) {
        const double nu = (u + 0.5) / w - 0.5;
        const double nv = (v + 0.5) / h - 0.5;
        const double sxn = nu * cosr - nv * sinr;
        const double syn = nu * sinr + nv * cosr;
        const double sx = cx + crop * w * sxn - 0.5;
        const double sy = cy + crop * h * syn - 0.5;
        for (int ch = 0; ch < c; ++ch)
          dst[(static_cast<std::size_t>(v) * w + u) * c + ch] =
              sample_bilinear(src, h, w, c, sy, sx, ch);
      }
    }
  }
  return out;
}

}  // namespace

VideoClip crop_resize(const VideoClip& clip, double x0, double y0, double x1, double y1,
                      int out_h, int out_w) {
  if (!(x0 < x1) || !(y0 < y1)) throw DimError("crop_resize: empty crop box");
  if (x0 < 0 || y0 < 0 || x1 > clip.w || y1 > clip.h)
    throw DimError("crop_resize: box outside frame bounds");
  if (out_h < 1 || out_w < 1) throw DimError("crop_resize: invalid output size");

  VideoClip out;
  out.t = clip.t;
  out.h = out_h;
  out.w = out_w;
  out.c = clip.c;
  out.valid_len = clip.valid_len;
  out.frames.resize(static_cast<std::size_t>(out.t) * out.frame_elems());
  const double sx_scale = (x1 - x0) / out_w;
  const double sy_scale = (y1 - y0) / out_h;
  for (int t = 0; t < clip.t; ++t) {
    const float* src = clip.frame(t);
    float* dst = out.frame(t);
    for (int v = 0; v < out_h; ++v) {
      for (int u = 0; u < out_w; ++u) {
        const double sx = x0 + (u + 0.5) * sx_scale - 0.5;
        const double sy = y0 + (v + 0.5) * sy_scale - 0.5;
        for (int ch = 0; ch < clip.c; ++ch)
          dst[(static_cast<std::size_t>(v) * out_w + u) * clip.c + ch] =
              sample_bilinear(src, clip.h, clip.w, clip.c, sy, sx, ch);
      }
    }
  }
  return out;
}

VideoClip center_crop(const VideoClip& clip, double fraction) {
  if (fraction <= 0.0 || fraction > 1.0) throw ConfigError("center_crop: fraction must be in (0,1]");
  if (fraction == 1.0) return clip;
  const double cw = clip.w * fraction;
  const double ch = clip.h * fraction;
  const double x0 = (clip.w - cw) / 2.0;
  const double y0 = (clip.h - ch) / 2.0;
  return crop_resize(clip, x0, y0, x0 + cw, y0 + ch, clip.h, clip.w);
}

VideoClip augment_clip(const VideoClip& clip, const AugmentPolicy& policy,
                       std::uint64_t sample_seed) {
  if (clip.t < 1 || clip.valid_len < 1) throw InputError("augment_clip: empty clip");
  policy.validate();
  Rng rng(mix_u64(policy.seed, sample_seed));

  VideoClip out = clip;

  // Temporal family first: drop then duplicate, both order-stable and both
  // capped so the length change stays within max_len_change.
  if (rng.uniform() < policy.p_temporal) {
    const int cap = static_cast<int>(std::floor(out.t * policy.temporal.max_len_change));
    if (policy.temporal.drop_prob > 0.0 && cap > 0) {
      VideoClip kept;
      kept.h = out.h;
      kept.w = out.w;
      kept.c = out.c;
      int dropped = 0;
      for (int t = 0; t < out.t; ++t) {
        const bool drop = dropped < cap && rng.uniform() < policy.temporal.drop_prob;
        if (drop) {
          ++dropped;
          continue;
        }
        kept.frames.insert(kept.frames.end(), out.frame(t), out.frame(t) + out.frame_elems());
        ++kept.t;
      }
      kept.valid_len = kept.t;
      out = std::move(kept);
    }
    if (policy.temporal.dup_prob > 0.0 && cap > 0) {
      VideoClip dup;
      dup.h = out.h;
      dup.w = out.w;
      dup.c = out.c;
      int added = 0;
      for (int t = 0; t < out.t; ++t) {
        dup.frames.insert(dup.frames.end(), out.frame(t), out.frame(t) + out.frame_elems());
        ++dup.t;
        if (added < cap && rng.uniform() < policy.temporal.dup_prob) {
          dup.frames.insert(dup.frames.end(), out.frame(t), out.frame(t) + out.frame_elems());
          ++dup.t;
          ++added;
        }
      }
      dup.valid_len = dup.t;
      out = std::move(dup);
    }
  }

  if (rng.uniform() < policy.p_geometric) {
    const double crop = rng.uniform_range(policy.geometric.crop_min, policy.geometric.crop_max);
    const double dx = rng.uniform_range(-policy.geometric.shift_frac, policy.geometric.shift_frac) * out.w;
    const double dy = rng.uniform_range(-policy.geometric.shift_frac, policy.geometric.shift_frac) * out.h;
    const double rot = rng.uniform_range(-policy.geometric.rot_deg, policy.geometric.rot_deg) *
                       3.14159265358979323846 / 180.0;
    if (crop != 1.0 || dx != 0.0 || dy != 0.0 || rot != 0.0)
      out = warp_clip(out, crop, dx, dy, rot);
  }

  if (rng.uniform() < policy.p_color) {
    const double b = rng.uniform_range(-policy.color.brightness, policy.color.brightness);
    const double f = rng.uniform_range(policy.color.contrast_min, policy.color.contrast_max);
    for (auto& v : out.frames) {
      double x = (static_cast<double>(v) - 0.5) * f + 0.5 + b;
      if (policy.color.noise_std > 0.0) x += policy.color.noise_std * rng.normal();
      v = static_cast<float>(std::min(1.0, std::max(0.0, x)));
    }
  }

  return out;
}

}  // namespace gfslt
