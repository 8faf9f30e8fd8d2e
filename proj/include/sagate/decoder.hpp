#pragma once

#include "sagate/encoder.hpp"

namespace sagate {

/// Simplified segmentation head: the deep fused map is upsampled to the low
/// skip's resolution, concatenated, refined by a 3x3 conv and projected to
/// class logits at input resolution. An optional auxiliary head projects the
/// deep map directly.
struct DecoderConfig {
  int64_t num_classes = 2;
  int64_t mid_channels = 32;
  bool aux_enabled = true;

  void validate() const {
    if (num_classes < 2) throw ConfigError("decoder needs at least 2 classes");
    if (mid_channels < 1) throw ConfigError("decoder mid_channels must be positive");
  }
};

template <typename S>
struct DecoderParams {
  ConvParams<S> refine;  // 3x3, (C_low + C_high) -> mid, pad 1
  Tensor<S> gamma, beta;
  ConvParams<S> head;      // 1x1, mid -> K, zero-init
  ConvParams<S> aux_head;  // 1x1, C_high -> K, zero-init

  static DecoderParams create(const DecoderConfig& cfg, int64_t c_low, int64_t c_high,
                              ParamMap<S>& pm, SplitMix64& rng) {
    cfg.validate();
    DecoderParams p;
    p.refine = make_conv(pm, "dec.refine", rng, cfg.mid_channels, c_low + c_high, 3, 1, 1, true,
                         "he");
    std::tie(p.gamma, p.beta) = make_norm_affine(pm, "dec.norm", cfg.mid_channels);
    p.head = make_conv(pm, "dec.head", rng, cfg.num_classes, cfg.mid_channels, 1, 1, 0, true,
                       "zero");
    if (cfg.aux_enabled)
      p.aux_head = make_conv(pm, "dec.aux_head", rng, cfg.num_classes, c_high, 1, 1, 0, true,
                             "zero");
    return p;
  }
};

template <typename S>
struct DecodeResult {
  Tensor<S> logits;      // [N x K x H x W]
  Tensor<S> aux_logits;  // defined only when the aux head is enabled
};

template <typename S>
DecodeResult<S> decode_features(const Tensor<S>& low, const Tensor<S>& high, int64_t out_h,
                                int64_t out_w, const DecoderConfig& cfg,
                                const DecoderParams<S>& p) {
  if (!low.defined() || !high.defined()) throw ShapeMismatch("decoder needs both skip maps");
  Tensor<S> up = bilinear_upsample(high, low.dim(2), low.dim(3));
  Tensor<S> cat = concat<S>({low, up}, 1);
  Tensor<S> mid = relu(channel_norm(conv2d(cat, p.refine), p.gamma, p.beta));
  DecodeResult<S> out;
  out.logits = bilinear_upsample(conv2d(mid, p.head), out_h, out_w);
  if (cfg.aux_enabled)
    out.aux_logits = bilinear_upsample(conv2d(high, p.aux_head), out_h, out_w);
  return out;
}

/// Decode from the encoder's fused skip maps.
template <typename S>
DecodeResult<S> decode(const EncoderOutput<S>& enc, int64_t out_h, int64_t out_w,
                       const DecoderConfig& cfg, const DecoderParams<S>& p) {
  return decode_features(enc.fused_low, enc.fused_high, out_h, out_w, cfg, p);
}

}  // namespace sagate
