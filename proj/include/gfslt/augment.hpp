#pragma once

#include <cstdint>

#include "gfslt/corpus.hpp"

namespace gfslt {

// Seeded strong augmentation for video clips: geometric (crop/shift/rotate),
// color (brightness/contrast/noise) and temporal (frame drop/duplicate)
// families, each applied with its own probability and randomly combined.
struct GeometricAug {
  double crop_min = 1.0, crop_max = 1.0;  // crop side as a fraction of the frame
  double shift_frac = 0.0;                // crop center shift, fraction of frame size
  double rot_deg = 0.0;                   // rotation, +/- degrees
};

struct ColorAug {
  double brightness = 0.0;                // additive delta range, +/-
  double contrast_min = 1.0, contrast_max = 1.0;
  double noise_std = 0.0;
};

struct TemporalAug {
  double drop_prob = 0.0;
  double dup_prob = 0.0;
  double max_len_change = 0.0;  // caps drops and duplicates at floor(T * frac)
};

struct AugmentPolicy {
  GeometricAug geometric;
  ColorAug color;
  TemporalAug temporal;
  double p_geometric = 0.0, p_color = 0.0, p_temporal = 0.0;
  std::uint64_t seed = 0;

  void validate() const;

  static AugmentPolicy identity();
  static AugmentPolicy strong(std::uint64_t seed);
  static AugmentPolicy light(std::uint64_t seed);
  static AugmentPolicy preset(const std::string& name, std::uint64_t seed);
};

// Deterministic in (policy, sample_seed). Spatial dims are restored to the
// clip's H x W; pixel values are clipped to [0,1]; frame order is preserved
// under all temporal transforms. The paired sentence is never touched.
VideoClip augment_clip(const VideoClip& clip, const AugmentPolicy& policy,
                       std::uint64_t sample_seed);

// Axis-aligned crop box in source pixel coordinates, bilinear-resized to
// out_h x out_w. A full-frame box with matching output size is the identity.
VideoClip crop_resize(const VideoClip& clip, double x0, double y0, double x1, double y1,
                      int out_h, int out_w);

// Deterministic eval-time path: centered crop of the given fraction, resized
// back to the original size. Fraction 1 is the identity.
VideoClip center_crop(const VideoClip& clip, double fraction);

}  // namespace gfslt
