#pragma once

#include <string>
#include <utility>

#include "sagate/params.hpp"

namespace sagate {

/// The two same-shaped modality feature maps flowing through a stage.
template <typename S>
struct FeaturePair {
  Tensor<S> rgb;  // [N x C x H x W]
  Tensor<S> hha;  // [N x C x H x W]

  void validate() const {
    if (rgb.rank() != 4 || hha.rank() != 4 || rgb.shape() != hha.shape())
      throw ShapeMismatch("feature pair must be two equal [NxCxHxW] tensors, got " +
                          shape_str(rgb.shape()) + " and " + shape_str(hha.shape()));
  }
  int64_t channels() const { return rgb.dim(1); }
};

/// Per-channel attention weights in (0,1), one vector per modality.
template <typename S>
struct GateVector {
  Tensor<S> w_rgb;  // [N x C]
  Tensor<S> w_hha;  // [N x C]
};

template <typename S>
struct SeparationOutput {
  Tensor<S> rgb_filtered, hha_filtered;  // w (.) input, channel-wise
  Tensor<S> rgb_rec, hha_rec;            // cross-recalibrated maps
  Tensor<S> descriptor;                  // pooled cross-modality descriptor [N x 2C]
  GateVector<S> gates;
};

/// Per-pixel softmax weights; a_rgb + a_hha = 1 at every location.
template <typename S>
struct SpatialGate {
  Tensor<S> a_rgb, a_hha;  // [N x 1 x H x W]
  Tensor<S> g_rgb, g_hha;  // raw logits, same shape
};

template <typename S>
struct FusionOutput {
  Tensor<S> merged;  // [N x C x H x W]
  SpatialGate<S> gate;
  SeparationOutput<S> separation;
};

enum class FusionKind {
  Proposed,
  Concat,
  SelfGlobal,
  CrossGlobal,
  Product,
  Addition,
  Conv,
  Mean,  // parameter-free (rgb+hha)/2; used by the factor ablation, not a published variant
};

inline FusionKind fusion_kind_from_string(const std::string& s) {
  if (s == "proposed") return FusionKind::Proposed;
  if (s == "concat") return FusionKind::Concat;
  if (s == "self-global") return FusionKind::SelfGlobal;
  if (s == "cross-global") return FusionKind::CrossGlobal;
  if (s == "product") return FusionKind::Product;
  if (s == "addition") return FusionKind::Addition;
  if (s == "conv") return FusionKind::Conv;
  if (s == "mean") return FusionKind::Mean;
  throw UnknownVariant("unknown fusion kind: " + s);
}

inline const char* fusion_kind_name(FusionKind k) {
  switch (k) {
    case FusionKind::Proposed: return "proposed";
    case FusionKind::Concat: return "concat";
    case FusionKind::SelfGlobal: return "self-global";
    case FusionKind::CrossGlobal: return "cross-global";
    case FusionKind::Product: return "product";
    case FusionKind::Addition: return "addition";
    case FusionKind::Conv: return "conv";
    case FusionKind::Mean: return "mean";
  }
  throw UnknownVariant("bad fusion kind enum");
}

struct FusionOptions {
  bool shared_mlp = true;      // one MLP emitting [w_rgb ; w_hha] vs two heads
  double mlp_ratio = 2.0;      // hidden width = max(1, round(d_in / ratio))
  bool blend_recalibrated = false;  // blend rec maps instead of the original inputs
};

/// Parameters of one gate instance. Only the tensors a given kind actually
/// uses are allocated, so parameter counting stays honest across variants.
template <typename S>
struct SaGateParams {
  FusionKind kind = FusionKind::Proposed;
  FusionOptions opts;
  int64_t channels = 0;

  MlpParams<S> mlp;                        // shared: 2C -> 2C
  MlpParams<S> mlp_rgb, mlp_hha;           // split heads: 2C -> C each
  MlpParams<S> self_mlp_rgb, self_mlp_hha; // self-global: C -> C each
  ConvParams<S> gate_rgb, gate_hha;        // 1x1, 2C -> 1, no bias, zero-init
  ConvParams<S> fa_conv;                   // 1x1, 2C -> C for the conv variant

  static SaGateParams create(FusionKind kind, int64_t c, const FusionOptions& opts,
                             ParamMap<S>& pm, const std::string& prefix, SplitMix64& rng) {
    SaGateParams p;
    p.kind = kind;
    p.opts = opts;
    p.channels = c;
    const bool needs_cross_mlp = kind == FusionKind::Proposed || kind == FusionKind::CrossGlobal ||
                                 kind == FusionKind::Product || kind == FusionKind::Addition ||
                                 kind == FusionKind::Conv;
    if (needs_cross_mlp) {
      if (opts.shared_mlp) {
        p.mlp = make_mlp(pm, prefix + ".fs.mlp", rng, 2 * c, 2 * c, opts.mlp_ratio);
      } else {
        p.mlp_rgb = make_mlp(pm, prefix + ".fs.mlp_rgb", rng, 2 * c, c, opts.mlp_ratio);
        p.mlp_hha = make_mlp(pm, prefix + ".fs.mlp_hha", rng, 2 * c, c, opts.mlp_ratio);
      }
    }
    if (kind == FusionKind::SelfGlobal) {
      p.self_mlp_rgb = make_mlp(pm, prefix + ".fs.self_rgb", rng, c, c, opts.mlp_ratio);
      p.self_mlp_hha = make_mlp(pm, prefix + ".fs.self_hha", rng, c, c, opts.mlp_ratio);
    }
    const bool needs_gate = kind == FusionKind::Proposed || kind == FusionKind::Concat ||
                            kind == FusionKind::SelfGlobal || kind == FusionKind::CrossGlobal ||
                            kind == FusionKind::Product;
    if (needs_gate) {
      p.gate_rgb = make_conv(pm, prefix + ".fa.gate_rgb", rng, 1, 2 * c, 1, 1, 0, false, "zero");
      p.gate_hha = make_conv(pm, prefix + ".fa.gate_hha", rng, 1, 2 * c, 1, 1, 0, false, "zero");
    }
    if (kind == FusionKind::Conv)
      p.fa_conv = make_conv(pm, prefix + ".fa.conv", rng, c, 2 * c, 1, 1, 0, true, "he");
    return p;
  }
};

namespace detail {

/// Channel-wise broadcast multiply of [N x C] weights over a [N x C x H x W] map.
template <typename S>
Tensor<S> channel_scale(const Tensor<S>& map, const Tensor<S>& w) {
  return mul(map, reshape(w, {w.dim(0), w.dim(1), 1, 1}));
}

template <typename S>
SeparationOutput<S> passthrough_separation(const FeaturePair<S>& pair) {
  SeparationOutput<S> sep;
  sep.rgb_filtered = Tensor<S>::zeros(pair.rgb.shape());
  sep.hha_filtered = Tensor<S>::zeros(pair.hha.shape());
  sep.rgb_rec = pair.rgb;
  sep.hha_rec = pair.hha;
  return sep;
}

template <typename S>
SpatialGate<S> uniform_gate(const FeaturePair<S>& pair) {
  SpatialGate<S> g;
  Shape s{pair.rgb.dim(0), 1, pair.rgb.dim(2), pair.rgb.dim(3)};
  g.g_rgb = Tensor<S>::zeros(s);
  g.g_hha = Tensor<S>::zeros(s);
  g.a_rgb = Tensor<S>::full(s, S(0.5));
  g.a_hha = Tensor<S>::full(s, S(0.5));
  return g;
}

/// Pooled cross-modality descriptor and the filtered maps (the shared part
/// of the proposed / cross-global / product / addition / conv paths).
template <typename S>
SeparationOutput<S> cross_filter(const FeaturePair<S>& pair, const SaGateParams<S>& p) {
  const int64_t c = pair.channels();
  SeparationOutput<S> sep;
  sep.descriptor = global_avg_pool(concat<S>({pair.rgb, pair.hha}, 1));
  if (p.opts.shared_mlp) {
    Tensor<S> w = sigmoid(mlp_forward(sep.descriptor, p.mlp));  // [N x 2C]
    sep.gates.w_rgb = slice(w, 1, 0, c);
    sep.gates.w_hha = slice(w, 1, c, c);
  } else {
    sep.gates.w_rgb = sigmoid(mlp_forward(sep.descriptor, p.mlp_rgb));
    sep.gates.w_hha = sigmoid(mlp_forward(sep.descriptor, p.mlp_hha));
  }
  sep.rgb_filtered = channel_scale(pair.rgb, sep.gates.w_rgb);
  sep.hha_filtered = channel_scale(pair.hha, sep.gates.w_hha);
  return sep;
}

}  // namespace detail

/// Feature Separation: pool the concatenated pair into a cross-modality
/// descriptor, derive per-channel sigmoid attention for each modality, filter
/// each map by its own attention, then cross-add the filtered map to the
/// other modality as an additive recalibration offset.
template <typename S>
SeparationOutput<S> feature_separation(const FeaturePair<S>& pair, const SaGateParams<S>& p) {
  pair.validate();
  SeparationOutput<S> sep = detail::cross_filter(pair, p);
  sep.rgb_rec = add(sep.hha_filtered, pair.rgb);
  sep.hha_rec = add(sep.rgb_filtered, pair.hha);
  return sep;
}

/// Feature Aggregation: two 1x1 convolutions map the concatenated
/// recalibrated maps to per-pixel logits, a pairwise softmax turns them into
/// blending weights, and the ORIGINAL inputs are blended (the recalibrated
/// maps only steer the gate unless blend_recalibrated is set).
template <typename S>
FusionOutput<S> feature_aggregation(const FeaturePair<S>& pair, SeparationOutput<S> sep,
                                    const SaGateParams<S>& p) {
  FusionOutput<S> out;
  Tensor<S> f2 = concat<S>({sep.rgb_rec, sep.hha_rec}, 1);
  out.gate.g_rgb = conv2d(f2, p.gate_rgb);
  out.gate.g_hha = conv2d(f2, p.gate_hha);
  auto [a_rgb, a_hha] = softmax_pair(out.gate.g_rgb, out.gate.g_hha);
  out.gate.a_rgb = a_rgb;
  out.gate.a_hha = a_hha;
  const Tensor<S>& mr = p.opts.blend_recalibrated ? sep.rgb_rec : pair.rgb;
  const Tensor<S>& mh = p.opts.blend_recalibrated ? sep.hha_rec : pair.hha;
  out.merged = add(mul(mr, a_rgb), mul(mh, a_hha));
  out.separation = std::move(sep);
  return out;
}

/// The full Separation-and-Aggregation gate.
template <typename S>
FusionOutput<S> sa_gate(const FeaturePair<S>& pair, const SaGateParams<S>& p) {
  return feature_aggregation(pair, feature_separation(pair, p), p);
}

/// Dispatch over the published fusion ablations plus the proposed gate.
template <typename S>
FusionOutput<S> fusion_variant(FusionKind kind, const FeaturePair<S>& pair,
                               const SaGateParams<S>& p) {
  pair.validate();
  switch (kind) {
    case FusionKind::Proposed:
      return sa_gate(pair, p);
    case FusionKind::Concat:
      // No separation: the aggregation gate reads the raw concatenated inputs.
      return feature_aggregation(pair, detail::passthrough_separation(pair), p);
    case FusionKind::SelfGlobal: {
      // Each modality filtered by its OWN pooled descriptor, then the usual
      // cross summation.
      SeparationOutput<S> sep;
      Tensor<S> i_rgb = global_avg_pool(pair.rgb);
      Tensor<S> i_hha = global_avg_pool(pair.hha);
      sep.descriptor = concat<S>({i_rgb, i_hha}, 1);
      sep.gates.w_rgb = sigmoid(mlp_forward(i_rgb, p.self_mlp_rgb));
      sep.gates.w_hha = sigmoid(mlp_forward(i_hha, p.self_mlp_hha));
      sep.rgb_filtered = detail::channel_scale(pair.rgb, sep.gates.w_rgb);
      sep.hha_filtered = detail::channel_scale(pair.hha, sep.gates.w_hha);
      sep.rgb_rec = add(sep.hha_filtered, pair.rgb);
      sep.hha_rec = add(sep.rgb_filtered, pair.hha);
      return feature_aggregation(pair, std::move(sep), p);
    }
    case FusionKind::CrossGlobal: {
      // Cross-modality descriptor drives the filter, but each filtered map is
      // added back to its own modality.
      SeparationOutput<S> sep = detail::cross_filter(pair, p);
      sep.rgb_rec = add(sep.rgb_filtered, pair.rgb);
      sep.hha_rec = add(sep.hha_filtered, pair.hha);
      return feature_aggregation(pair, std::move(sep), p);
    }
    case FusionKind::Product: {
      // Multiplicative re-weighting in place of the additive offset.
      SeparationOutput<S> sep = detail::cross_filter(pair, p);
      sep.rgb_rec = mul(pair.rgb, sep.hha_filtered);
      sep.hha_rec = mul(pair.hha, sep.rgb_filtered);
      return feature_aggregation(pair, std::move(sep), p);
    }
    case FusionKind::Addition: {
      FusionOutput<S> out;
      out.separation = feature_separation(pair, p);
      out.merged = add(out.separation.rgb_rec, out.separation.hha_rec);
      out.gate = detail::uniform_gate(pair);
      return out;
    }
    case FusionKind::Conv: {
      FusionOutput<S> out;
      out.separation = feature_separation(pair, p);
      out.merged = conv2d(concat<S>({out.separation.rgb_rec, out.separation.hha_rec}, 1), p.fa_conv);
      out.gate = detail::uniform_gate(pair);
      return out;
    }
    case FusionKind::Mean: {
      FusionOutput<S> out;
      out.separation = detail::passthrough_separation(pair);
      out.merged = scale(add(pair.rgb, pair.hha), S(0.5));
      out.gate = detail::uniform_gate(pair);
      return out;
    }
  }
  throw UnknownVariant("bad fusion kind enum");
}

}  // namespace sagate
