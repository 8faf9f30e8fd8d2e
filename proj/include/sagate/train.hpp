#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "sagate/labels.hpp"
#include "sagate/model.hpp"

namespace sagate {

struct TrainConfig {
  double base_lr = 0.02;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double poly_power = 0.9;
  int64_t max_iter = 400;
  int64_t batch_size = 8;
  double aux_weight = 0.2;
  bool ohem_enabled = false;
  double ohem_keep = 0.25;
  uint64_t seed = 7;
  bool aug_flip = true;
  bool aug_scale = false;            // random scale from {0.5..1.75} then crop/pad
  double hha_noise_std = 0.0;        // train-time HHA Gaussian noise, 0-255 scale
  int64_t eval_every_epochs = 0;     // 0 = never evaluate during training

  void validate() const {
    if (base_lr <= 0) throw ConfigError("base_lr must be positive");
    if (ohem_keep <= 0 || ohem_keep > 1) throw ConfigError("ohem_keep must be in (0,1]");
    if (max_iter < 1 || batch_size < 1) throw ConfigError("max_iter and batch_size must be >= 1");
  }
};

/// Poly schedule: base_lr * (1 - iter/max_iter)^power.
inline double poly_lr(int64_t iter, const TrainConfig& cfg) {
  const double frac = 1.0 - static_cast<double>(iter) / static_cast<double>(cfg.max_iter);
  return cfg.base_lr * std::pow(frac, cfg.poly_power);
}

namespace detail {

template <typename S>
inline void ce_check_inputs(const Tensor<S>& logits, const LabelMap& labels) {
  if (logits.rank() != 4) throw ShapeMismatch("cross_entropy expects [NxKxHxW] logits");
  if (logits.dim(0) != labels.n || logits.dim(2) != labels.h || logits.dim(3) != labels.w)
    throw ShapeMismatch("cross_entropy logits/labels extent mismatch");
  const int32_t k = static_cast<int32_t>(logits.dim(1));
  for (int32_t l : labels.v)
    if (l != kIgnoreLabel && (l < 0 || l >= k))
      throw Error("label " + std::to_string(l) + " out of range for " + std::to_string(k) +
                  " classes");
}

/// Per-pixel -log softmax at the true class; returns losses for valid pixels
/// (paired with their flat pixel index) in fixed row-major order.
template <typename S>
inline std::vector<std::pair<S, int64_t>> per_pixel_ce(const TensorNode<S>& logits,
                                                       const LabelMap& labels) {
  const int64_t n = labels.n, k = logits.shape[1], hw = labels.h * labels.w;
  std::vector<std::pair<S, int64_t>> out;
  out.reserve(static_cast<size_t>(n * hw));
  for (int64_t ni = 0; ni < n; ++ni)
    for (int64_t px = 0; px < hw; ++px) {
      const int32_t lab = labels.v[static_cast<size_t>(ni * hw + px)];
      if (lab == kIgnoreLabel) continue;
      const S* z = logits.value.data() + (ni * k) * hw + px;
      S zmax = z[0];
      for (int64_t c = 1; c < k; ++c) zmax = std::max(zmax, z[c * hw]);
      S sum = 0;
      for (int64_t c = 0; c < k; ++c) sum += std::exp(z[c * hw] - zmax);
      const S lse = std::log(sum) + zmax;
      out.emplace_back(lse - z[static_cast<int64_t>(lab) * hw], ni * hw + px);
    }
  return out;
}

/// Accumulates d(mean CE over `kept`)/d(logits) scaled by g.
template <typename S>
inline void ce_backward_pixels(TensorNode<S>& logits, const LabelMap& labels,
                               const std::vector<int64_t>& kept, S g) {
  const int64_t k = logits.shape[1], hw = labels.h * labels.w;
  const S inv = g / static_cast<S>(kept.size());
  logits.ensure_grad();
  for (int64_t flat : kept) {
    const int64_t ni = flat / hw, px = flat % hw;
    const int32_t lab = labels.v[static_cast<size_t>(flat)];
    const S* z = logits.value.data() + (ni * k) * hw + px;
    S* dz = logits.grad.data() + (ni * k) * hw + px;
    S zmax = z[0];
    for (int64_t c = 1; c < k; ++c) zmax = std::max(zmax, z[c * hw]);
    S sum = 0;
    for (int64_t c = 0; c < k; ++c) sum += std::exp(z[c * hw] - zmax);
    for (int64_t c = 0; c < k; ++c) {
      const S p = std::exp(z[c * hw] - zmax) / sum;
      dz[c * hw] += inv * (p - (c == lab ? S(1) : S(0)));
    }
  }
}

}  // namespace detail

/// Mean cross-entropy over non-ignored pixels.
template <typename S>
Tensor<S> cross_entropy(const Tensor<S>& logits, const LabelMap& labels) {
  detail::ce_check_inputs(logits, labels);
  auto losses = detail::per_pixel_ce(*logits.node(), labels);
  if (losses.empty()) throw AllIgnored("cross_entropy: every pixel is ignored");
  S acc = 0;
  std::vector<int64_t> kept;
  kept.reserve(losses.size());
  for (const auto& [l, idx] : losses) {
    acc += l;
    kept.push_back(idx);
  }
  const S loss = acc / static_cast<S>(losses.size());
  bool req = logits.requires_grad();
  Tensor<S> y = detail::make_out({1}, std::vector<S>{loss}, req);
  throw_if_nonfinite(*y.node(), "cross_entropy");
  detail::record_if(req, y, [ln = logits.node(), labels, kept = std::move(kept), on = y.node()]() {
    detail::ce_backward_pixels(*ln, labels, kept, on->grad[0]);
  });
  return y;
}

/// Online hard example mining: mean CE over the ceil(keep_fraction * N_valid)
/// hardest pixels (at least one). Ties broken by flat pixel index, ascending,
/// so selection is deterministic.
template <typename S>
Tensor<S> ohem_loss(const Tensor<S>& logits, const LabelMap& labels, double keep_fraction) {
  if (keep_fraction <= 0 || keep_fraction > 1) throw ConfigError("keep_fraction must be in (0,1]");
  detail::ce_check_inputs(logits, labels);
  auto losses = detail::per_pixel_ce(*logits.node(), labels);
  if (losses.empty()) throw AllIgnored("ohem_loss: every pixel is ignored");
  const size_t n_keep = std::max<size_t>(
      1, static_cast<size_t>(std::ceil(keep_fraction * static_cast<double>(losses.size()))));
  std::sort(losses.begin(), losses.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  losses.resize(std::min(n_keep, losses.size()));
  S acc = 0;
  std::vector<int64_t> kept;
  kept.reserve(losses.size());
  for (const auto& [l, idx] : losses) {
    acc += l;
    kept.push_back(idx);
  }
  const S loss = acc / static_cast<S>(losses.size());
  bool req = logits.requires_grad();
  Tensor<S> y = detail::make_out({1}, std::vector<S>{loss}, req);
  throw_if_nonfinite(*y.node(), "ohem_loss");
  detail::record_if(req, y, [ln = logits.node(), labels, kept = std::move(kept), on = y.node()]() {
    detail::ce_backward_pixels(*ln, labels, kept, on->grad[0]);
  });
  return y;
}

/// Segmentation objective: main + aux_weight * aux (when an aux head exists).
template <typename S>
Tensor<S> total_loss(const ForwardResult<S>& fwd, const LabelMap& labels, const TrainConfig& cfg) {
  Tensor<S> main = cfg.ohem_enabled ? ohem_loss(fwd.logits, labels, cfg.ohem_keep)
                                    : cross_entropy(fwd.logits, labels);
  if (!fwd.aux_logits.defined()) return main;
  Tensor<S> aux = cross_entropy(fwd.aux_logits, labels);
  return add(main, scale(aux, static_cast<S>(cfg.aux_weight)));
}

// ---------------------------------------------------------------------------
// SGD with momentum; weight decay folded into the momentum buffer:
//   v <- momentum * v + grad + weight_decay * param
//   param <- param - lr(iter) * v
// ---------------------------------------------------------------------------

template <typename S>
struct SgdState {
  std::vector<std::vector<S>> velocity;  // parallel to ParamMap registration order

  static SgdState create(const ParamMap<S>& pm) {
    SgdState st;
    st.velocity.reserve(pm.size());
    for (const auto& [_, t] : pm.items())
      st.velocity.emplace_back(static_cast<size_t>(t.numel()), S(0));
    return st;
  }
};

template <typename S>
void sgd_step(ParamMap<S>& pm, SgdState<S>& state, const TrainConfig& cfg, int64_t iter) {
  const S lr = static_cast<S>(poly_lr(iter, cfg));
  const S mom = static_cast<S>(cfg.momentum), wd = static_cast<S>(cfg.weight_decay);
  size_t pi = 0;
  for (const auto& [_, t] : pm.items()) {
    auto& v = state.velocity[pi++];
    Tensor<S> h = t;  // shared handle onto the same storage
    auto& val = h.mutable_value();
    const bool has_g = t.has_grad();
    const auto& g = t.grad();
    for (size_t i = 0; i < v.size(); ++i) {
      v[i] = mom * v[i] + (has_g ? g[i] : S(0)) + wd * val[i];
      val[i] -= lr * v[i];
    }
  }
}

}  // namespace sagate
