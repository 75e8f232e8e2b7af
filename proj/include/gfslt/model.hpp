#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "gfslt/corpus.hpp"
#include "gfslt/ops.hpp"
#include "gfslt/params.hpp"
#include "gfslt/vocab.hpp"

namespace gfslt {

// Shared dimensions for the three networks. The temporal path downsamples by
// 4 (two stride-2 pools), so a clip of padded length T yields M = T/4
// positions plus the CLS summary token.
struct ModelConfig {
  int frame_h = 24, frame_w = 24, frame_c = 1;
  std::vector<int> cnn_channels{16, 32, 64};  // d_frame is the last entry
  int cnn_first_stride = 1;                   // 2 halves the frame at the stem
  int d_model = 128;
  int d_proj = 64;
  int heads = 4;
  int d_ff = 512;
  int enc_layers = 3;
  int text_enc_layers = 3;
  int dec_layers = 3;
  int vocab_size = 0;  // filled from the corpus vocabulary
  bool tie_output = false;
  double ln_eps = 1e-5;

  int d_frame() const { return cnn_channels.back(); }

  void validate() const {
    if (cnn_channels.empty()) throw ConfigError("model: cnn_channels must be non-empty");
    if (d_model < 1 || d_proj < 1 || d_ff < 1) throw ConfigError("model: widths must be >= 1");
    if (heads < 1 || d_model % heads != 0)
      throw ConfigError("model: d_model " + std::to_string(d_model) + " must be divisible by heads " +
                        std::to_string(heads));
    if (enc_layers < 1 || text_enc_layers < 1 || dec_layers < 1)
      throw ConfigError("model: layer counts must be >= 1");
    if (vocab_size < Vocabulary::kNumSpecials + 1)
      throw ConfigError("model: vocab_size not set");
    if (cnn_first_stride != 1 && cnn_first_stride != 2)
      throw ConfigError("model: cnn_first_stride must be 1 or 2");
    int side = std::min(frame_h, frame_w);
    for (std::size_t i = 0; i < cnn_channels.size(); ++i) {
      if (i == 0) side = (side - 1) / cnn_first_stride + 1;
      side /= 2;
    }
    if (side < 1) throw ConfigError("model: frame too small for the conv stack");
  }
};

struct AttnIdx {
  int wq, bq, wk, bk, wv, bv, wo, bo;
};

struct EncLayerIdx {
  int ln1_g, ln1_b;
  AttnIdx attn;
  int ln2_g, ln2_b;
  int ff1_w, ff1_b, ff2_w, ff2_b;
};

struct DecLayerIdx {
  int ln1_g, ln1_b;
  AttnIdx self_attn;
  int lnx_g, lnx_b;
  AttnIdx cross_attn;
  int ln2_g, ln2_b;
  int ff1_w, ff1_b, ff2_w, ff2_b;
};

struct VisualEncoder {
  std::vector<int> conv_w, conv_b;  // frame CNN blocks
  int t1_w, t1_b, t1_ln_g, t1_ln_b;
  int t2_w, t2_b, t2_ln_g, t2_ln_b;
  int bridge_w, bridge_b, bridge_ln_g, bridge_ln_b;
  int cls;
  std::vector<EncLayerIdx> layers;
  int final_ln_g, final_ln_b;
};

struct TextEncoder {
  int embed;
  std::vector<EncLayerIdx> layers;
  int final_ln_g, final_ln_b;
};

struct TextDecoder {
  int embed;
  std::vector<DecLayerIdx> layers;
  int final_ln_g, final_ln_b;
  int out_w, out_b;
  bool tie_output = false;
};

struct ProjectionHeads {
  int vis_w, vis_b, txt_w, txt_b;
  int logit_scale;
};

// ---------------------------------------------------------------------------
// registration (parameter creation order is fixed; init draws come from rng
// in that order, so a fresh model is a pure function of the seed)
// ---------------------------------------------------------------------------

namespace detail {

inline int add_weight(ParameterStore& ps, const std::string& name, std::vector<int> shape,
                      std::int64_t fan_in, Rng& rng) {
  const auto n = shape_numel(shape);
  return ps.add(name, std::move(shape), normal_init(n, 1.0 / std::sqrt(static_cast<double>(fan_in)), rng));
}

inline int add_zeros(ParameterStore& ps, const std::string& name, std::vector<int> shape) {
  return ps.add(name, std::move(shape));
}

inline int add_ones(ParameterStore& ps, const std::string& name, std::vector<int> shape) {
  const auto n = static_cast<std::size_t>(shape_numel(shape));
  return ps.add(name, std::move(shape), std::vector<float>(n, 1.0f));
}

inline AttnIdx add_attention(ParameterStore& ps, const std::string& prefix, int d, Rng& rng) {
  AttnIdx a;
  a.wq = add_weight(ps, prefix + ".wq", {d, d}, d, rng);
  a.bq = add_zeros(ps, prefix + ".bq", {d});
  a.wk = add_weight(ps, prefix + ".wk", {d, d}, d, rng);
  a.bk = add_zeros(ps, prefix + ".bk", {d});
  a.wv = add_weight(ps, prefix + ".wv", {d, d}, d, rng);
  a.bv = add_zeros(ps, prefix + ".bv", {d});
  a.wo = add_weight(ps, prefix + ".wo", {d, d}, d, rng);
  a.bo = add_zeros(ps, prefix + ".bo", {d});
  return a;
}

inline EncLayerIdx add_enc_layer(ParameterStore& ps, const std::string& prefix, int d, int d_ff,
                                 Rng& rng) {
  EncLayerIdx l;
  l.ln1_g = add_ones(ps, prefix + ".ln1.g", {d});
  l.ln1_b = add_zeros(ps, prefix + ".ln1.b", {d});
  l.attn = add_attention(ps, prefix + ".attn", d, rng);
  l.ln2_g = add_ones(ps, prefix + ".ln2.g", {d});
  l.ln2_b = add_zeros(ps, prefix + ".ln2.b", {d});
  l.ff1_w = add_weight(ps, prefix + ".ff1.w", {d, d_ff}, d, rng);
  l.ff1_b = add_zeros(ps, prefix + ".ff1.b", {d_ff});
  l.ff2_w = add_weight(ps, prefix + ".ff2.w", {d_ff, d}, d_ff, rng);
  l.ff2_b = add_zeros(ps, prefix + ".ff2.b", {d});
  return l;
}

inline DecLayerIdx add_dec_layer(ParameterStore& ps, const std::string& prefix, int d, int d_ff,
                                 Rng& rng) {
  DecLayerIdx l;
  l.ln1_g = add_ones(ps, prefix + ".ln1.g", {d});
  l.ln1_b = add_zeros(ps, prefix + ".ln1.b", {d});
  l.self_attn = add_attention(ps, prefix + ".self", d, rng);
  l.lnx_g = add_ones(ps, prefix + ".lnx.g", {d});
  l.lnx_b = add_zeros(ps, prefix + ".lnx.b", {d});
  l.cross_attn = add_attention(ps, prefix + ".cross", d, rng);
  l.ln2_g = add_ones(ps, prefix + ".ln2.g", {d});
  l.ln2_b = add_zeros(ps, prefix + ".ln2.b", {d});
  l.ff1_w = add_weight(ps, prefix + ".ff1.w", {d, d_ff}, d, rng);
  l.ff1_b = add_zeros(ps, prefix + ".ff1.b", {d_ff});
  l.ff2_w = add_weight(ps, prefix + ".ff2.w", {d_ff, d}, d_ff, rng);
  l.ff2_b = add_zeros(ps, prefix + ".ff2.b", {d});
  return l;
}

}  // namespace detail

inline VisualEncoder register_visual_encoder(ParameterStore& ps, const ModelConfig& cfg, Rng& rng) {
  VisualEncoder ve;
  int c_in = cfg.frame_c;
  for (std::size_t i = 0; i < cfg.cnn_channels.size(); ++i) {
    const int c_out = cfg.cnn_channels[i];
    ve.conv_w.push_back(detail::add_weight(ps, "ve.embed.conv" + std::to_string(i) + ".w",
                                           {3, 3, c_in, c_out}, 9LL * c_in, rng));
    ve.conv_b.push_back(detail::add_zeros(ps, "ve.embed.conv" + std::to_string(i) + ".b", {c_out}));
    c_in = c_out;
  }
  const int d = cfg.d_model, df = cfg.d_frame();
  ve.t1_w = detail::add_weight(ps, "ve.embed.t1.w", {5, df, d}, 5LL * df, rng);
  ve.t1_b = detail::add_zeros(ps, "ve.embed.t1.b", {d});
  ve.t1_ln_g = detail::add_ones(ps, "ve.embed.t1.ln.g", {d});
  ve.t1_ln_b = detail::add_zeros(ps, "ve.embed.t1.ln.b", {d});
  ve.t2_w = detail::add_weight(ps, "ve.embed.t2.w", {5, d, d}, 5LL * d, rng);
  ve.t2_b = detail::add_zeros(ps, "ve.embed.t2.b", {d});
  ve.t2_ln_g = detail::add_ones(ps, "ve.embed.t2.ln.g", {d});
  ve.t2_ln_b = detail::add_zeros(ps, "ve.embed.t2.ln.b", {d});
  ve.bridge_w = detail::add_weight(ps, "ve.embed.bridge.w", {d, d}, d, rng);
  ve.bridge_b = detail::add_zeros(ps, "ve.embed.bridge.b", {d});
  ve.bridge_ln_g = detail::add_ones(ps, "ve.embed.bridge.ln.g", {d});
  ve.bridge_ln_b = detail::add_zeros(ps, "ve.embed.bridge.ln.b", {d});

  ps.add("ve.enc.cls", {1, d}, normal_init(d, 1.0 / std::sqrt(static_cast<double>(d)), rng));
  ve.cls = ps.require("ve.enc.cls");
  for (int i = 0; i < cfg.enc_layers; ++i)
    ve.layers.push_back(detail::add_enc_layer(ps, "ve.enc.l" + std::to_string(i), d, cfg.d_ff, rng));
  ve.final_ln_g = detail::add_ones(ps, "ve.enc.final_ln.g", {d});
  ve.final_ln_b = detail::add_zeros(ps, "ve.enc.final_ln.b", {d});
  return ve;
}

inline TextEncoder register_text_encoder(ParameterStore& ps, const ModelConfig& cfg, Rng& rng) {
  TextEncoder te;
  const int d = cfg.d_model;
  te.embed = detail::add_weight(ps, "te.embed", {cfg.vocab_size, d}, d, rng);
  for (int i = 0; i < cfg.text_enc_layers; ++i)
    te.layers.push_back(detail::add_enc_layer(ps, "te.l" + std::to_string(i), d, cfg.d_ff, rng));
  te.final_ln_g = detail::add_ones(ps, "te.final_ln.g", {d});
  te.final_ln_b = detail::add_zeros(ps, "te.final_ln.b", {d});
  return te;
}

inline TextDecoder register_text_decoder(ParameterStore& ps, const ModelConfig& cfg, Rng& rng) {
  TextDecoder td;
  const int d = cfg.d_model;
  td.embed = detail::add_weight(ps, "td.embed", {cfg.vocab_size, d}, d, rng);
  for (int i = 0; i < cfg.dec_layers; ++i)
    td.layers.push_back(detail::add_dec_layer(ps, "td.l" + std::to_string(i), d, cfg.d_ff, rng));
  td.final_ln_g = detail::add_ones(ps, "td.final_ln.g", {d});
  td.final_ln_b = detail::add_zeros(ps, "td.final_ln.b", {d});
  td.tie_output = cfg.tie_output;
  if (!cfg.tie_output)
    td.out_w = detail::add_weight(ps, "td.out.w", {d, cfg.vocab_size}, d, rng);
  else
    td.out_w = -1;
  td.out_b = detail::add_zeros(ps, "td.out.b", {cfg.vocab_size});
  return td;
}

inline ProjectionHeads register_projection_heads(ParameterStore& ps, const ModelConfig& cfg,
                                                 Rng& rng) {
  ProjectionHeads h;
  const int d = cfg.d_model, dp = cfg.d_proj;
  h.vis_w = detail::add_weight(ps, "heads.visual.w", {d, dp}, d, rng);
  h.vis_b = detail::add_zeros(ps, "heads.visual.b", {dp});
  h.txt_w = detail::add_weight(ps, "heads.text.w", {d, dp}, d, rng);
  h.txt_b = detail::add_zeros(ps, "heads.text.b", {dp});
  // Learnable temperature in log domain, exp(scale) clamped to <= 100.
  h.logit_scale = ps.add("heads.logit_scale", {1},
                         {static_cast<float>(std::log(1.0 / 0.07))});
  return h;
}

struct Stage1Model {
  ModelConfig cfg;
  VisualEncoder ve;
  TextEncoder te;
  TextDecoder td;
  ProjectionHeads heads;
};

inline Stage1Model register_stage1(ParameterStore& ps, const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(derive_seed(seed, "init"));
  Stage1Model m;
  m.cfg = cfg;
  m.ve = register_visual_encoder(ps, cfg, rng);
  m.te = register_text_encoder(ps, cfg, rng);
  m.td = register_text_decoder(ps, cfg, rng);
  m.heads = register_projection_heads(ps, cfg, rng);
  return m;
}

struct GfsltModel {
  ModelConfig cfg;
  VisualEncoder ve;
  TextDecoder td;
};

inline GfsltModel register_gfslt(ParameterStore& ps, const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(derive_seed(seed, "init"));
  GfsltModel m;
  m.cfg = cfg;
  m.ve = register_visual_encoder(ps, cfg, rng);
  m.td = register_text_decoder(ps, cfg, rng);
  return m;
}

// ---------------------------------------------------------------------------
// forward passes
// ---------------------------------------------------------------------------

// Fixed sinusoidal positional encoding, computed in double and cast.
template <class T>
Tensor<T> sinusoidal_pe(int len, int d) {
  std::vector<T> v(static_cast<std::size_t>(len) * d);
  for (int pos = 0; pos < len; ++pos) {
    for (int i = 0; i < d; i += 2) {
      const double rate = std::pow(10000.0, -static_cast<double>(i) / d);
      v[static_cast<std::size_t>(pos) * d + i] = static_cast<T>(std::sin(pos * rate));
      if (i + 1 < d)
        v[static_cast<std::size_t>(pos) * d + i + 1] = static_cast<T>(std::cos(pos * rate));
    }
  }
  return constant<T>({len, d}, std::move(v));
}

namespace detail {

constexpr double kMaskValue = -1e30;

// Additive attention mask over [t_q, t_k]: invalid keys (and, when causal,
// positions ahead of the query) get a large negative bias that underflows to
// exactly zero weight after softmax.
template <class T>
Tensor<T> attention_mask(int t_q, int t_k, const std::vector<std::uint8_t>& key_valid, bool causal) {
  std::vector<T> m(static_cast<std::size_t>(t_q) * t_k, T(0));
  for (int i = 0; i < t_q; ++i) {
    for (int j = 0; j < t_k; ++j) {
      const bool masked = (!key_valid.empty() && !key_valid[static_cast<std::size_t>(j)]) ||
                          (causal && j > i);
      if (masked) m[static_cast<std::size_t>(i) * t_k + j] = static_cast<T>(kMaskValue);
    }
  }
  return constant<T>({t_q, t_k}, std::move(m));
}

template <class T>
Tensor<T> linear(Tape<T>& tape, const ParamView<T>& pv, const Tensor<T>& x, int w, int b) {
  return add_rowvec(tape, matmul(tape, x, pv[w]), pv[b]);
}

template <class T>
Tensor<T> multi_head_attention(Tape<T>& tape, const ParamView<T>& pv, const AttnIdx& idx,
                               const Tensor<T>& q_in, const Tensor<T>& kv_in,
                               const std::vector<std::uint8_t>& key_valid, bool causal, int heads) {
  const int d = q_in.dim(1);
  const int dh = d / heads;
  Tensor<T> q = linear(tape, pv, q_in, idx.wq, idx.bq);
  Tensor<T> k = linear(tape, pv, kv_in, idx.wk, idx.bk);
  Tensor<T> v = linear(tape, pv, kv_in, idx.wv, idx.bv);
  Tensor<T> mask = attention_mask<T>(q_in.dim(0), kv_in.dim(0), key_valid, causal);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Tensor<T>> ctx;
  ctx.reserve(static_cast<std::size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    Tensor<T> qh = slice_cols(tape, q, h * dh, (h + 1) * dh);
    Tensor<T> kh = slice_cols(tape, k, h * dh, (h + 1) * dh);
    Tensor<T> vh = slice_cols(tape, v, h * dh, (h + 1) * dh);
    Tensor<T> scores = mul_scalar(tape, matmul_nt(tape, qh, kh), scale);
    Tensor<T> weights = softmax(tape, add(tape, scores, mask), -1);
    ctx.push_back(matmul(tape, weights, vh));
  }
  Tensor<T> merged = concat_cols(tape, ctx);
  return linear(tape, pv, merged, idx.wo, idx.bo);
}

template <class T>
Tensor<T> feed_forward(Tape<T>& tape, const ParamView<T>& pv, const EncLayerIdx& l, const Tensor<T>& x) {
  return linear(tape, pv, relu(tape, linear(tape, pv, x, l.ff1_w, l.ff1_b)), l.ff2_w, l.ff2_b);
}

// Pre-norm encoder layer: x + attn(LN(x)), then x + ffn(LN(x)).
template <class T>
Tensor<T> encoder_layer(Tape<T>& tape, const ParamView<T>& pv, const EncLayerIdx& l,
                        const Tensor<T>& x, const std::vector<std::uint8_t>& key_valid, int heads,
                        double eps) {
  Tensor<T> n1 = layer_norm(tape, x, pv[l.ln1_g], pv[l.ln1_b], eps);
  Tensor<T> h = add(tape, x, multi_head_attention(tape, pv, l.attn, n1, n1, key_valid, false, heads));
  Tensor<T> n2 = layer_norm(tape, h, pv[l.ln2_g], pv[l.ln2_b], eps);
  return add(tape, h, feed_forward(tape, pv, l, n2));
}

}  // namespace detail

template <class T>
struct VisualEncodeOut {
  Tensor<T> seq;                         // (M+1) x d, CLS first
  Tensor<T> cls;                         // 1 x d
  std::vector<std::uint8_t> key_valid;   // M+1 flags, CLS always valid
};

// CNN per frame -> two (conv1d + LN + ReLU + maxpool) temporal blocks ->
// linear bridge -> prepend CLS -> positional encoding -> transformer encoder.
// Padded frames are zeroed before every temporal conv so attention masking is
// exact: appending padding frames leaves all valid outputs unchanged.
template <class T>
VisualEncodeOut<T> visual_encode(Tape<T>& tape, const ParamView<T>& pv, const VisualEncoder& ve,
                                 const ModelConfig& cfg, const VideoClip& clip) {
  if (clip.valid_len < 4)
    throw InputError("visual_encode: clip too short, valid length " +
                     std::to_string(clip.valid_len) + " < 4");
  if (clip.h != cfg.frame_h || clip.w != cfg.frame_w || clip.c != cfg.frame_c)
    throw InputError("visual_encode: clip is " + std::to_string(clip.h) + "x" +
                     std::to_string(clip.w) + "x" + std::to_string(clip.c) + ", model expects " +
                     std::to_string(cfg.frame_h) + "x" + std::to_string(cfg.frame_w) + "x" +
                     std::to_string(cfg.frame_c));

  // Pre-pad to a multiple of 4 with masked zero frames; floor(T/4) then drops
  // no valid frame.
  const int t_pad = ((clip.t + 3) / 4) * 4;
  std::vector<T> frames(static_cast<std::size_t>(t_pad) * clip.frame_elems(), T(0));
  for (std::size_t i = 0; i < clip.frames.size(); ++i) frames[i] = static_cast<T>(clip.frames[i]);
  Tensor<T> x = constant<T>({t_pad, clip.h, clip.w, clip.c}, std::move(frames));

  // Frame CNN: repeated conv3x3 + bias + ReLU + maxpool2, then global average
  // pooling down to d_frame channels. The stem conv may stride 2.
  for (std::size_t i = 0; i < ve.conv_w.size(); ++i) {
    x = conv2d(tape, x, pv[ve.conv_w[i]], i == 0 ? cfg.cnn_first_stride : 1, 1);
    const int ch = x.dim(3);
    Tensor<T> flat = reshape(x, {static_cast<int>(x.numel() / ch), ch});
    flat = relu(tape, add_rowvec(tape, flat, pv[ve.conv_b[i]]));
    x = reshape(flat, x.shape);
    x = maxpool2d(tape, x, 2, 2);
  }
  Tensor<T> feats = global_avgpool2d(tape, x);  // [t_pad, d_frame]

  const int valid = clip.valid_len;
  auto valid_flags = [](int len, int valid_count) {
    std::vector<std::uint8_t> f(static_cast<std::size_t>(len), 0);
    for (int i = 0; i < len && i < valid_count; ++i) f[static_cast<std::size_t>(i)] = 1;
    return f;
  };

  // Temporal block 1. Masking before the conv keeps padded positions exactly
  // zero at the conv input; masking after the LN+ReLU re-zeroes the bias path.
  feats = mask_rows(tape, feats, valid_flags(t_pad, valid));
  Tensor<T> t1 = conv1d(tape, feats, pv[ve.t1_w], 1, 2);
  t1 = add_rowvec(tape, t1, pv[ve.t1_b]);
  t1 = relu(tape, layer_norm(tape, t1, pv[ve.t1_ln_g], pv[ve.t1_ln_b], cfg.ln_eps));
  t1 = mask_rows(tape, t1, valid_flags(t_pad, valid));
  t1 = maxpool1d(tape, t1, 2, 2);  // [t_pad/2, d]
  const int valid1 = (valid + 1) / 2;

  Tensor<T> t2 = conv1d(tape, t1, pv[ve.t2_w], 1, 2);
  t2 = add_rowvec(tape, t2, pv[ve.t2_b]);
  t2 = relu(tape, layer_norm(tape, t2, pv[ve.t2_ln_g], pv[ve.t2_ln_b], cfg.ln_eps));
  t2 = mask_rows(tape, t2, valid_flags(t_pad / 2, valid1));
  t2 = maxpool1d(tape, t2, 2, 2);  // [M, d]
  const int m = t_pad / 4;
  const int valid_m = (valid + 3) / 4;

  Tensor<T> bridged = detail::linear(tape, pv, t2, ve.bridge_w, ve.bridge_b);
  bridged = relu(tape, layer_norm(tape, bridged, pv[ve.bridge_ln_g], pv[ve.bridge_ln_b], cfg.ln_eps));
  bridged = mask_rows(tape, bridged, valid_flags(m, valid_m));

  Tensor<T> seq = concat_rows(tape, pv[ve.cls], bridged);  // [M+1, d]
  seq = add(tape, seq, sinusoidal_pe<T>(m + 1, cfg.d_model));

  std::vector<std::uint8_t> key_valid(static_cast<std::size_t>(m + 1), 0);
  key_valid[0] = 1;
  for (int i = 0; i < valid_m; ++i) key_valid[static_cast<std::size_t>(i + 1)] = 1;

  for (const auto& layer : ve.layers)
    seq = detail::encoder_layer(tape, pv, layer, seq, key_valid, cfg.heads, cfg.ln_eps);
  seq = layer_norm(tape, seq, pv[ve.final_ln_g], pv[ve.final_ln_b], cfg.ln_eps);

  VisualEncodeOut<T> out;
  out.cls = slice_rows(tape, seq, 0, 1);
  out.seq = seq;
  out.key_valid = std::move(key_valid);
  return out;
}

template <class T>
struct TextEncodeOut {
  Tensor<T> seq;  // U x d
  Tensor<T> eos;  // 1 x d, the sentence summary
  std::vector<std::uint8_t> key_valid;
};

template <class T>
TextEncodeOut<T> text_encode(Tape<T>& tape, const ParamView<T>& pv, const TextEncoder& te,
                             const ModelConfig& cfg, const TokenSequence& tokens) {
  if (tokens.empty()) throw InputError("text_encode: empty token sequence");
  int eos_pos = -1;
  int eos_count = 0;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] == Vocabulary::kEos) {
      eos_pos = static_cast<int>(i);
      ++eos_count;
    }
  }
  if (eos_count != 1)
    throw InputError("text_encode: expected exactly one EOS, found " + std::to_string(eos_count));

  Tensor<T> seq = embedding_lookup(tape, pv[te.embed], tokens);
  seq = add(tape, seq, sinusoidal_pe<T>(static_cast<int>(tokens.size()), cfg.d_model));

  std::vector<std::uint8_t> key_valid(tokens.size());
  for (std::size_t i = 0; i < tokens.size(); ++i)
    key_valid[i] = tokens[i] != Vocabulary::kPad ? 1 : 0;

  for (const auto& layer : te.layers)
    seq = detail::encoder_layer(tape, pv, layer, seq, key_valid, cfg.heads, cfg.ln_eps);
  seq = layer_norm(tape, seq, pv[te.final_ln_g], pv[te.final_ln_b], cfg.ln_eps);

  TextEncodeOut<T> out;
  out.eos = slice_rows(tape, seq, eos_pos, eos_pos + 1);
  out.seq = seq;
  out.key_valid = std::move(key_valid);
  return out;
}

// Teacher-forced decode: causal self-attention over the prefix, cross
// attention over the memory, logits = W z + b at every prefix position.
template <class T>
Tensor<T> text_decode(Tape<T>& tape, const ParamView<T>& pv, const TextDecoder& td,
                      const ModelConfig& cfg, const TokenSequence& prefix, const Tensor<T>& memory,
                      const std::vector<std::uint8_t>& memory_key_valid) {
  if (prefix.empty()) throw InputError("text_decode: empty prefix");
  if (prefix.front() != Vocabulary::kBos) throw InputError("text_decode: prefix must start with BOS");
  if (memory.numel() == 0 || memory.dim(0) < 1) throw InputError("text_decode: empty memory");

  Tensor<T> x = embedding_lookup(tape, pv[td.embed], prefix);
  x = add(tape, x, sinusoidal_pe<T>(static_cast<int>(prefix.size()), cfg.d_model));

  std::vector<std::uint8_t> self_valid(prefix.size(), 1);
  for (const auto& l : td.layers) {
    Tensor<T> n1 = layer_norm(tape, x, pv[l.ln1_g], pv[l.ln1_b], cfg.ln_eps);
    x = add(tape, x, detail::multi_head_attention(tape, pv, l.self_attn, n1, n1, self_valid, true, cfg.heads));
    Tensor<T> nx = layer_norm(tape, x, pv[l.lnx_g], pv[l.lnx_b], cfg.ln_eps);
    x = add(tape, x,
            detail::multi_head_attention(tape, pv, l.cross_attn, nx, memory, memory_key_valid, false, cfg.heads));
    Tensor<T> n2 = layer_norm(tape, x, pv[l.ln2_g], pv[l.ln2_b], cfg.ln_eps);
    EncLayerIdx ff{};
    ff.ff1_w = l.ff1_w;
    ff.ff1_b = l.ff1_b;
    ff.ff2_w = l.ff2_w;
    ff.ff2_b = l.ff2_b;
    x = add(tape, x, detail::feed_forward(tape, pv, ff, n2));
  }
  x = layer_norm(tape, x, pv[td.final_ln_g], pv[td.final_ln_b], cfg.ln_eps);

  Tensor<T> logits = td.tie_output ? matmul_nt(tape, x, pv[td.embed])
                                   : matmul(tape, x, pv[td.out_w]);
  return add_rowvec(tape, logits, pv[td.out_b]);
}

template <class T>
struct ProjectOut {
  Tensor<T> v;      // 1 x d_proj, unit norm
  Tensor<T> t;      // 1 x d_proj, unit norm
  Tensor<T> scale;  // [1], exp(logit_scale) clamped to <= 100
};

template <class T>
ProjectOut<T> project(Tape<T>& tape, const ParamView<T>& pv, const ProjectionHeads& heads,
                      const Tensor<T>& visual_cls, const Tensor<T>& text_eos) {
  ProjectOut<T> out;
  out.v = l2_normalize(tape, detail::linear(tape, pv, visual_cls, heads.vis_w, heads.vis_b));
  out.t = l2_normalize(tape, detail::linear(tape, pv, text_eos, heads.txt_w, heads.txt_b));
  out.scale = exp_clamped(tape, pv[heads.logit_scale], 100.0);
  return out;
}

}  // namespace gfslt
