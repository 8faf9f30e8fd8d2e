#pragma once

#include <optional>
#include <string>
#include <vector>

#include "sagate/fusion.hpp"

namespace sagate {

enum class Modality { Both, RgbOnly, HhaOnly };

inline Modality modality_from_string(const std::string& s) {
  if (s == "both") return Modality::Both;
  if (s == "rgb") return Modality::RgbOnly;
  if (s == "hha") return Modality::HhaOnly;
  throw UnknownVariant("unknown modality: " + s);
}

/// Dual-stream encoder configuration. Each stage is
/// [conv3x3 stride 2 -> channel_norm -> relu] -> [conv3x3 -> channel_norm -> relu],
/// with an optional fusion gate behind it. Spatial extent halves per stage.
struct EncoderConfig {
  std::vector<int64_t> stage_channels{16, 32, 64, 128};
  std::vector<bool> gate_mask{true, true, true, true};
  FusionKind fusion = FusionKind::Proposed;
  FusionOptions fusion_opts;
  bool bmp = true;  // propagate (stream + M)/2 instead of the raw stream
  Modality modality = Modality::Both;
  int64_t in_channels = 3;

  int stages() const { return static_cast<int>(stage_channels.size()); }
  void validate() const {
    if (stage_channels.empty()) throw ConfigError("encoder needs at least one stage");
    if (gate_mask.size() != stage_channels.size())
      throw ConfigError("gate_mask length must equal the number of stages");
  }
  int first_gate() const {
    for (size_t i = 0; i < gate_mask.size(); ++i)
      if (gate_mask[i]) return static_cast<int>(i);
    return -1;
  }
  int last_gate() const {
    for (size_t i = gate_mask.size(); i > 0; --i)
      if (gate_mask[i - 1]) return static_cast<int>(i - 1);
    return -1;
  }
  bool any_gate() const { return first_gate() >= 0; }
};

template <typename S>
struct StageParams {
  ConvParams<S> entry;  // 3x3, stride 2, pad 1
  Tensor<S> gamma1, beta1;
  ConvParams<S> conv2;  // 3x3, stride 1, pad 1
  Tensor<S> gamma2, beta2;
};

template <typename S>
StageParams<S> make_stage(ParamMap<S>& pm, const std::string& prefix, SplitMix64& rng,
                          int64_t c_in, int64_t c_out) {
  StageParams<S> st;
  st.entry = make_conv(pm, prefix + ".entry", rng, c_out, c_in, 3, 2, 1, true, "he");
  std::tie(st.gamma1, st.beta1) = make_norm_affine(pm, prefix + ".norm1", c_out);
  st.conv2 = make_conv(pm, prefix + ".conv2", rng, c_out, c_out, 3, 1, 1, true, "he");
  std::tie(st.gamma2, st.beta2) = make_norm_affine(pm, prefix + ".norm2", c_out);
  return st;
}

template <typename S>
Tensor<S> stage_forward(const Tensor<S>& x, const StageParams<S>& st) {
  Tensor<S> y = relu(channel_norm(conv2d(x, st.entry), st.gamma1, st.beta1));
  return relu(channel_norm(conv2d(y, st.conv2), st.gamma2, st.beta2));
}

template <typename S>
struct EncoderParams {
  std::vector<StageParams<S>> rgb_stages;
  std::vector<StageParams<S>> hha_stages;
  std::vector<SaGateParams<S>> gates;  // one per enabled gate_mask entry, in stage order

  static EncoderParams create(const EncoderConfig& cfg, ParamMap<S>& pm, SplitMix64& rng) {
    cfg.validate();
    EncoderParams p;
    int64_t c_in = cfg.in_channels;
    for (int l = 0; l < cfg.stages(); ++l) {
      const int64_t c = cfg.stage_channels[static_cast<size_t>(l)];
      const std::string tag = "stage" + std::to_string(l);
      if (cfg.modality != Modality::HhaOnly)
        p.rgb_stages.push_back(make_stage(pm, "enc.rgb." + tag, rng, c_in, c));
      if (cfg.modality != Modality::RgbOnly)
        p.hha_stages.push_back(make_stage(pm, "enc.hha." + tag, rng, c_in, c));
      if (cfg.modality == Modality::Both && cfg.gate_mask[static_cast<size_t>(l)])
        p.gates.push_back(SaGateParams<S>::create(cfg.fusion, c, cfg.fusion_opts, pm,
                                                  "enc.gate" + std::to_string(l), rng));
      c_in = c;
    }
    return p;
  }
};

template <typename S>
struct StageTrace {
  Tensor<S> rgb_raw, hha_raw;  // stage outputs before fusion
  Tensor<S> rgb_out, hha_out;  // what was propagated onward
  std::optional<FusionOutput<S>> fusion;
};

template <typename S>
struct EncoderOutput {
  Tensor<S> fused_low;   // M of the first enabled gate (or low stream feature)
  Tensor<S> fused_high;  // M of the last enabled gate (or high stream feature)
  std::vector<StageTrace<S>> stages;
  // Per-stream endpoints for score-head averaging when no fused path exists.
  Tensor<S> rgb_low, rgb_high, hha_low, hha_high;
};

/// Runs both modality streams, fusing behind every masked stage and, when BMP
/// is on, replacing each stream with the average of its raw output and the
/// fused map so fusion influences all subsequent stages.
template <typename S>
EncoderOutput<S> encode(const Tensor<S>& rgb, const Tensor<S>& hha, const EncoderConfig& cfg,
                        const EncoderParams<S>& params) {
  cfg.validate();
  EncoderOutput<S> out;
  const bool use_rgb = cfg.modality != Modality::HhaOnly;
  const bool use_hha = cfg.modality != Modality::RgbOnly;
  if (use_rgb && (rgb.rank() != 4 || rgb.dim(1) != cfg.in_channels))
    throw ShapeMismatch("encoder rgb input must be [Nx" + std::to_string(cfg.in_channels) +
                        "xHxW]");
  if (use_hha && (hha.rank() != 4 || hha.dim(1) != cfg.in_channels))
    throw ShapeMismatch("encoder hha input must be [Nx" + std::to_string(cfg.in_channels) +
                        "xHxW]");
  if (use_rgb && use_hha &&
      (rgb.dim(2) != hha.dim(2) || rgb.dim(3) != hha.dim(3) || rgb.dim(0) != hha.dim(0)))
    throw ShapeMismatch("modality inputs must share batch and spatial extents");

  Tensor<S> r = rgb, h = hha;
  const int fg = cfg.first_gate(), lg = cfg.last_gate();
  size_t gate_idx = 0;
  for (int l = 0; l < cfg.stages(); ++l) {
    StageTrace<S> tr;
    if (use_rgb) r = stage_forward(r, params.rgb_stages[static_cast<size_t>(l)]);
    if (use_hha) h = stage_forward(h, params.hha_stages[static_cast<size_t>(l)]);
    tr.rgb_raw = r;
    tr.hha_raw = h;
    if (cfg.modality == Modality::Both && cfg.gate_mask[static_cast<size_t>(l)]) {
      FusionOutput<S> fo = fusion_variant(cfg.fusion, FeaturePair<S>{r, h}, params.gates[gate_idx++]);
      if (cfg.bmp) {
        r = scale(add(r, fo.merged), S(0.5));
        h = scale(add(h, fo.merged), S(0.5));
      }
      if (l == fg) out.fused_low = fo.merged;
      if (l == lg) out.fused_high = fo.merged;
      tr.fusion = std::move(fo);
    }
    tr.rgb_out = r;
    tr.hha_out = h;
    if (l == 0) {
      out.rgb_low = r;
      out.hha_low = h;
    }
    out.stages.push_back(std::move(tr));
  }
  out.rgb_high = r;
  out.hha_high = h;
  // Single-modality encoders expose their own endpoints as the skip features.
  if (cfg.modality == Modality::RgbOnly) {
    out.fused_low = out.rgb_low;
    out.fused_high = out.rgb_high;
  } else if (cfg.modality == Modality::HhaOnly) {
    out.fused_low = out.hha_low;
    out.fused_high = out.hha_high;
  }
  return out;
}

}  // namespace sagate
