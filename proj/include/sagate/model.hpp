#pragma once

#include "sagate/decoder.hpp"

namespace sagate {

enum class HeadMode {
  Auto,        // fused decode when any gate exists, stream averaging otherwise
  Fused,       // require the fused path; NoGateEnabled without a gate
  AvgStreams,  // decode each stream and average the logits
};

inline HeadMode head_mode_from_string(const std::string& s) {
  if (s == "auto") return HeadMode::Auto;
  if (s == "fused") return HeadMode::Fused;
  if (s == "avg") return HeadMode::AvgStreams;
  throw UnknownVariant("unknown head mode: " + s);
}

struct ModelConfig {
  EncoderConfig encoder;
  DecoderConfig decoder;
  HeadMode head = HeadMode::Auto;

  bool uses_fused_head() const {
    if (encoder.modality != Modality::Both) return false;
    if (head == HeadMode::AvgStreams) return false;
    if (head == HeadMode::Fused) {
      if (!encoder.any_gate()) throw NoGateEnabled("fused head requested but gate_mask is all-false");
      return true;
    }
    return encoder.any_gate();
  }

  /// Channel widths the decoder sees for its (low, high) skip inputs.
  std::pair<int64_t, int64_t> skip_channels() const {
    if (encoder.modality == Modality::Both && uses_fused_head_nothrow())
      return {encoder.stage_channels[static_cast<size_t>(encoder.first_gate())],
              encoder.stage_channels[static_cast<size_t>(encoder.last_gate())]};
    return {encoder.stage_channels.front(), encoder.stage_channels.back()};
  }

 private:
  bool uses_fused_head_nothrow() const {
    if (head == HeadMode::AvgStreams) return false;
    return encoder.any_gate();
  }
};

template <typename S>
struct ForwardResult {
  Tensor<S> logits;
  Tensor<S> aux_logits;  // undefined when aux disabled
  EncoderOutput<S> encoder;
};

/// Encoder + decoder bundle with one parameter registry, so checkpoints,
/// optimizer state and gradient checks traverse a single ordered map.
template <typename S>
class SegModel {
 public:
  static SegModel create(const ModelConfig& cfg, uint64_t seed) {
    SegModel m;
    m.cfg_ = cfg;
    cfg.encoder.validate();
    cfg.decoder.validate();
    cfg.uses_fused_head();  // rejects a fused head without any gate
    SplitMix64 rng(derive_seed(seed, 0x5eed));
    m.enc_ = EncoderParams<S>::create(cfg.encoder, m.params_, rng);
    auto [c_low, c_high] = cfg.skip_channels();
    m.dec_ = DecoderParams<S>::create(cfg.decoder, c_low, c_high, m.params_, rng);
    return m;
  }

  ForwardResult<S> forward(const Tensor<S>& rgb, const Tensor<S>& hha) const {
    const Tensor<S>& ref = cfg_.encoder.modality == Modality::HhaOnly ? hha : rgb;
    const int64_t out_h = ref.dim(2), out_w = ref.dim(3);
    ForwardResult<S> out;
    out.encoder = encode(rgb, hha, cfg_.encoder, enc_);
    if (cfg_.encoder.modality != Modality::Both) {
      DecodeResult<S> d = decode(out.encoder, out_h, out_w, cfg_.decoder, dec_);
      out.logits = d.logits;
      out.aux_logits = d.aux_logits;
      return out;
    }
    if (cfg_.uses_fused_head()) {
      DecodeResult<S> d = decode(out.encoder, out_h, out_w, cfg_.decoder, dec_);
      out.logits = d.logits;
      out.aux_logits = d.aux_logits;
      return out;
    }
    // Score-head averaging: decode both streams with the shared decoder and
    // average their predictions.
    DecodeResult<S> dr = decode_features(out.encoder.rgb_low, out.encoder.rgb_high, out_h, out_w,
                                         cfg_.decoder, dec_);
    DecodeResult<S> dh = decode_features(out.encoder.hha_low, out.encoder.hha_high, out_h, out_w,
                                         cfg_.decoder, dec_);
    out.logits = scale(add(dr.logits, dh.logits), S(0.5));
    if (cfg_.decoder.aux_enabled)
      out.aux_logits = scale(add(dr.aux_logits, dh.aux_logits), S(0.5));
    return out;
  }

  const ModelConfig& config() const { return cfg_; }
  ParamMap<S>& params() { return params_; }
  const ParamMap<S>& params() const { return params_; }
  const EncoderParams<S>& encoder_params() const { return enc_; }

  void save_checkpoint(const std::string& path) const { params_.save(path); }
  void load_checkpoint(const std::string& path) { params_.load_values(ParamMap<S>::load(path)); }

 private:
  ModelConfig cfg_;
  EncoderParams<S> enc_;
  DecoderParams<S> dec_;
  ParamMap<S> params_;
};

}  // namespace sagate
