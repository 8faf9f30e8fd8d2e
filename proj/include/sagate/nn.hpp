#pragma once

#include <cmath>
#include <optional>
#include <utility>

#include "sagate/ops.hpp"

namespace sagate {

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

/// 2-D cross-correlation parameters. Kernels are square, k in {1,3}.
template <typename S>
struct ConvParams {
  Tensor<S> weight;  // [C_out x C_in x k x k]
  Tensor<S> bias;    // [C_out], optional (default-constructed = absent)
  int stride = 1;
  int padding = 0;

  int64_t out_channels() const { return weight.dim(0); }
  int64_t in_channels() const { return weight.dim(1); }
  int64_t kernel() const { return weight.dim(2); }
};

namespace detail {

// cols layout: [C_in*k*k rows, Ho*Wo columns], one sample at a time.
template <typename S>
void im2col(const S* x, int64_t C, int64_t H, int64_t W, int64_t k, int64_t stride, int64_t pad,
            int64_t Ho, int64_t Wo, S* cols) {
  for (int64_t c = 0; c < C; ++c)
    for (int64_t ki = 0; ki < k; ++ki)
      for (int64_t kj = 0; kj < k; ++kj) {
        S* row = cols + ((c * k + ki) * k + kj) * Ho * Wo;
        for (int64_t oy = 0; oy < Ho; ++oy) {
          const int64_t iy = oy * stride + ki - pad;
          for (int64_t ox = 0; ox < Wo; ++ox) {
            const int64_t ix = ox * stride + kj - pad;
            row[oy * Wo + ox] = (iy >= 0 && iy < H && ix >= 0 && ix < W)
                                    ? x[(c * H + iy) * W + ix]
                                    : S(0);
          }
        }
      }
}

template <typename S>
void col2im_add(const S* cols, int64_t C, int64_t H, int64_t W, int64_t k, int64_t stride,
                int64_t pad, int64_t Ho, int64_t Wo, S* x) {
  for (int64_t c = 0; c < C; ++c)
    for (int64_t ki = 0; ki < k; ++ki)
      for (int64_t kj = 0; kj < k; ++kj) {
        const S* row = cols + ((c * k + ki) * k + kj) * Ho * Wo;
        for (int64_t oy = 0; oy < Ho; ++oy) {
          const int64_t iy = oy * stride + ki - pad;
          if (iy < 0 || iy >= H) continue;
          for (int64_t ox = 0; ox < Wo; ++ox) {
            const int64_t ix = ox * stride + kj - pad;
            if (ix >= 0 && ix < W) x[(c * H + iy) * W + ix] += row[oy * Wo + ox];
          }
        }
      }
}

}  // namespace detail

/// Cross-correlation of [N x C x H x W] with params; differentiable in input,
/// weight and bias. Output extent floor((H + 2p - k)/s) + 1 must be >= 1.
template <typename S>
Tensor<S> conv2d(const Tensor<S>& x, const ConvParams<S>& p) {
  if (x.rank() != 4) throw ShapeMismatch("conv2d expects [NxCxHxW], got " + shape_str(x.shape()));
  const int64_t k = p.kernel();
  if (k != 1 && k != 3) throw ShapeMismatch("conv2d kernel must be 1 or 3");
  if (p.weight.rank() != 4 || p.weight.dim(2) != p.weight.dim(3))
    throw ShapeMismatch("conv2d weight must be [C_out x C_in x k x k]");
  if (x.dim(1) != p.in_channels())
    throw ShapeMismatch("conv2d channel mismatch: input " + std::to_string(x.dim(1)) +
                        ", weight expects " + std::to_string(p.in_channels()));
  if (p.bias.defined() && (p.bias.rank() != 1 || p.bias.dim(0) != p.out_channels()))
    throw ShapeMismatch("conv2d bias must be [C_out]");
  const int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t Co = p.out_channels(), s = p.stride, pad = p.padding;
  const int64_t Ho = (H + 2 * pad - k) / s + 1;
  const int64_t Wo = (W + 2 * pad - k) / s + 1;
  if (Ho < 1 || Wo < 1)
    throw DegenerateOutput("conv2d output would be empty for input " + shape_str(x.shape()));

  const int64_t krows = C * k * k, opix = Ho * Wo;
  std::vector<S> cols(static_cast<size_t>(krows * opix));
  std::vector<S> out(static_cast<size_t>(N * Co * opix));
  detail::MapConstMat<S> wmat(p.weight.value().data(), Co, krows);
  for (int64_t n = 0; n < N; ++n) {
    detail::im2col(x.value().data() + n * C * H * W, C, H, W, k, s, pad, Ho, Wo, cols.data());
    detail::MapConstMat<S> mc(cols.data(), krows, opix);
    detail::MapMat<S> mo(out.data() + n * Co * opix, Co, opix);
    mo.noalias() = wmat * mc;
    if (p.bias.defined())
      for (int64_t co = 0; co < Co; ++co) mo.row(co).array() += p.bias.value()[static_cast<size_t>(co)];
  }
  bool req = x.requires_grad() || p.weight.requires_grad() ||
             (p.bias.defined() && p.bias.requires_grad());
  Tensor<S> y = detail::make_out({N, Co, Ho, Wo}, std::move(out), req);
  throw_if_nonfinite(*y.node(), "conv2d");

  auto bias_node = p.bias.defined() ? p.bias.node() : nullptr;
  detail::record_if(req, y,
                    [xn = x.node(), wn = p.weight.node(), bias_node, on = y.node(), N, C, H, W, k,
                     s, pad, Ho, Wo, Co, krows, opix]() {
    std::vector<S> cols(static_cast<size_t>(krows * opix));
    std::vector<S> dcols(static_cast<size_t>(krows * opix));
    const bool wx = xn->requires_grad, ww = wn->requires_grad;
    const bool wb = bias_node && bias_node->requires_grad;
    if (wx) xn->ensure_grad();
    if (ww) wn->ensure_grad();
    if (wb) bias_node->ensure_grad();
    detail::MapConstMat<S> wmat(wn->value.data(), Co, krows);
    for (int64_t n = 0; n < N; ++n) {
      detail::MapConstMat<S> g(on->grad.data() + n * Co * opix, Co, opix);
      if (ww) {
        detail::im2col(xn->value.data() + n * C * H * W, C, H, W, k, s, pad, Ho, Wo, cols.data());
        detail::MapConstMat<S> mc(cols.data(), krows, opix);
        detail::MapMat<S> gw(wn->grad.data(), Co, krows);
        gw.noalias() += g * mc.transpose();
      }
      if (wb) {
        for (int64_t co = 0; co < Co; ++co)
          bias_node->grad[static_cast<size_t>(co)] += g.row(co).sum();
      }
      if (wx) {
        detail::MapMat<S> mdc(dcols.data(), krows, opix);
        mdc.noalias() = wmat.transpose() * g;
        detail::col2im_add(dcols.data(), C, H, W, k, s, pad, Ho, Wo,
                           xn->grad.data() + n * C * H * W);
      }
    }
  });
  return y;
}

// ---------------------------------------------------------------------------
// Pooling and normalization
// ---------------------------------------------------------------------------

/// Mean over the spatial extent: [NxCxHxW] -> [NxC].
template <typename S>
Tensor<S> global_avg_pool(const Tensor<S>& x) {
  if (x.rank() != 4) throw ShapeMismatch("global_avg_pool expects [NxCxHxW]");
  const int64_t N = x.dim(0), C = x.dim(1), hw = x.dim(2) * x.dim(3);
  std::vector<S> out(static_cast<size_t>(N * C));
  const S inv = S(1) / static_cast<S>(hw);
  for (int64_t i = 0; i < N * C; ++i) {
    S acc = 0;
    const S* px = x.value().data() + i * hw;
    for (int64_t j = 0; j < hw; ++j) acc += px[j];
    out[static_cast<size_t>(i)] = acc * inv;
  }
  bool req = x.requires_grad();
  Tensor<S> y = detail::make_out({N, C}, std::move(out), req);
  throw_if_nonfinite(*y.node(), "global_avg_pool");
  detail::record_if(req, y, [xn = x.node(), on = y.node(), hw, inv]() {
    xn->ensure_grad();
    for (size_t i = 0; i < on->grad.size(); ++i) {
      const S g = on->grad[i] * inv;
      S* px = xn->grad.data() + i * static_cast<size_t>(hw);
      for (int64_t j = 0; j < hw; ++j) px[j] += g;
    }
  });
  return y;
}

/// Pairwise softmax over two same-shaped logit maps. Computed through the
/// sigmoid of the logit difference, so arbitrarily large logits stay stable
/// and the two outputs sum to 1 up to rounding.
template <typename S>
std::pair<Tensor<S>, Tensor<S>> softmax_pair(const Tensor<S>& g1, const Tensor<S>& g2) {
  if (g1.shape() != g2.shape()) throw ShapeMismatch("softmax_pair expects equal shapes");
  Tensor<S> d = sub(g1, g2);
  return {sigmoid(d), sigmoid(neg(d))};
}

/// Per-channel normalization over the spatial extent with learned affine:
/// for each (n, c), y = gamma_c * (x - mean) / sqrt(var + eps) + beta_c,
/// mean/var taken over HxW (biased variance).
template <typename S>
Tensor<S> channel_norm(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta,
                       S eps = S(1e-5)) {
  if (x.rank() != 4) throw ShapeMismatch("channel_norm expects [NxCxHxW]");
  const int64_t N = x.dim(0), C = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (gamma.rank() != 1 || gamma.dim(0) != C || beta.rank() != 1 || beta.dim(0) != C)
    throw ShapeMismatch("channel_norm affine must be [C]");
  std::vector<S> out(x.value().size());
  std::vector<S> means(static_cast<size_t>(N * C)), invstds(static_cast<size_t>(N * C));
  const S invhw = S(1) / static_cast<S>(hw);
  for (int64_t i = 0; i < N * C; ++i) {
    const S* px = x.value().data() + i * hw;
    S mu = 0;
    for (int64_t j = 0; j < hw; ++j) mu += px[j];
    mu *= invhw;
    S var = 0;
    for (int64_t j = 0; j < hw; ++j) {
      const S d = px[j] - mu;
      var += d * d;
    }
    var *= invhw;
    const S istd = S(1) / std::sqrt(var + eps);
    means[static_cast<size_t>(i)] = mu;
    invstds[static_cast<size_t>(i)] = istd;
    const S gam = gamma.value()[static_cast<size_t>(i % C)];
    const S bet = beta.value()[static_cast<size_t>(i % C)];
    S* po = out.data() + i * hw;
    for (int64_t j = 0; j < hw; ++j) po[j] = gam * (px[j] - mu) * istd + bet;
  }
  bool req = x.requires_grad() || gamma.requires_grad() || beta.requires_grad();
  Tensor<S> y = detail::make_out(x.shape(), std::move(out), req);
  throw_if_nonfinite(*y.node(), "channel_norm");
  detail::record_if(req, y, [xn = x.node(), gn = gamma.node(), bn = beta.node(), on = y.node(),
                             means = std::move(means), invstds = std::move(invstds), N, C, hw,
                             invhw]() {
    const bool wx = xn->requires_grad, wg = gn->requires_grad, wb = bn->requires_grad;
    if (wx) xn->ensure_grad();
    if (wg) gn->ensure_grad();
    if (wb) bn->ensure_grad();
    for (int64_t i = 0; i < N * C; ++i) {
      const int64_t c = i % C;
      const S mu = means[static_cast<size_t>(i)], istd = invstds[static_cast<size_t>(i)];
      const S gam = gn->value[static_cast<size_t>(c)];
      const S* px = xn->value.data() + i * hw;
      const S* pg = on->grad.data() + i * hw;
      S sum_g = 0, sum_gx = 0;
      for (int64_t j = 0; j < hw; ++j) {
        const S xh = (px[j] - mu) * istd;
        sum_g += pg[j];
        sum_gx += pg[j] * xh;
      }
      if (wb) bn->grad[static_cast<size_t>(c)] += sum_g;
      if (wg) gn->grad[static_cast<size_t>(c)] += sum_gx;
      if (wx) {
        const S mean_g = sum_g * invhw, mean_gx = sum_gx * invhw;
        S* pdx = xn->grad.data() + i * hw;
        for (int64_t j = 0; j < hw; ++j) {
          const S xh = (px[j] - mu) * istd;
          pdx[j] += gam * istd * (pg[j] - mean_g - xh * mean_gx);
        }
      }
    }
  });
  return y;
}

// ---------------------------------------------------------------------------
// Resampling
// ---------------------------------------------------------------------------

/// Bilinear upsampling with align-corners=false semantics: the source
/// coordinate of output pixel o is (o + 0.5) * (in/out) - 0.5; the four
/// neighbours are clamped to the valid range and blended by the fractional
/// offsets. This formula is part of the file-format contract for fixtures.
template <typename S>
Tensor<S> bilinear_upsample(const Tensor<S>& x, int64_t Ho, int64_t Wo) {
  if (x.rank() != 4) throw ShapeMismatch("bilinear_upsample expects [NxCxHxW]");
  if (Ho < 1 || Wo < 1) throw ShapeMismatch("bilinear_upsample target must be positive");
  const int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  struct Tap {
    int64_t lo, hi;
    S t;
  };
  auto taps = [](int64_t in, int64_t out) {
    std::vector<Tap> v(static_cast<size_t>(out));
    const double r = static_cast<double>(in) / static_cast<double>(out);
    for (int64_t o = 0; o < out; ++o) {
      double src = (static_cast<double>(o) + 0.5) * r - 0.5;
      double fl = std::floor(src);
      int64_t lo = static_cast<int64_t>(fl);
      S t = static_cast<S>(src - fl);
      int64_t hi = lo + 1;
      lo = std::clamp<int64_t>(lo, 0, in - 1);
      hi = std::clamp<int64_t>(hi, 0, in - 1);
      v[static_cast<size_t>(o)] = {lo, hi, t};
    }
    return v;
  };
  const auto ty = taps(H, Ho), tx = taps(W, Wo);
  std::vector<S> out(static_cast<size_t>(N * C * Ho * Wo));
  for (int64_t nc = 0; nc < N * C; ++nc) {
    const S* px = x.value().data() + nc * H * W;
    S* po = out.data() + nc * Ho * Wo;
    for (int64_t oy = 0; oy < Ho; ++oy) {
      const auto& a = ty[static_cast<size_t>(oy)];
      for (int64_t ox = 0; ox < Wo; ++ox) {
        const auto& b = tx[static_cast<size_t>(ox)];
        const S v00 = px[a.lo * W + b.lo], v01 = px[a.lo * W + b.hi];
        const S v10 = px[a.hi * W + b.lo], v11 = px[a.hi * W + b.hi];
        const S top = v00 + (v01 - v00) * b.t;
        const S bot = v10 + (v11 - v10) * b.t;
        po[oy * Wo + ox] = top + (bot - top) * a.t;
      }
    }
  }
  bool req = x.requires_grad();
  Tensor<S> y = detail::make_out({N, C, Ho, Wo}, std::move(out), req);
  detail::record_if(req, y, [xn = x.node(), on = y.node(), ty, tx, N, C, H, W, Ho, Wo]() {
    xn->ensure_grad();
    for (int64_t nc = 0; nc < N * C; ++nc) {
      S* pdx = xn->grad.data() + nc * H * W;
      const S* pg = on->grad.data() + nc * Ho * Wo;
      for (int64_t oy = 0; oy < Ho; ++oy) {
        const auto& a = ty[static_cast<size_t>(oy)];
        for (int64_t ox = 0; ox < Wo; ++ox) {
          const auto& b = tx[static_cast<size_t>(ox)];
          const S g = pg[oy * Wo + ox];
          pdx[a.lo * W + b.lo] += g * (S(1) - a.t) * (S(1) - b.t);
          pdx[a.lo * W + b.hi] += g * (S(1) - a.t) * b.t;
          pdx[a.hi * W + b.lo] += g * a.t * (S(1) - b.t);
          pdx[a.hi * W + b.hi] += g * a.t * b.t;
        }
      }
    }
  });
  return y;
}

// ---------------------------------------------------------------------------
// MLP
// ---------------------------------------------------------------------------

/// Single-hidden-layer MLP, hidden width max(1, round(d_in / ratio)).
template <typename S>
struct MlpParams {
  Tensor<S> w1;  // [h x d_in]
  Tensor<S> b1;  // [h]
  Tensor<S> w2;  // [d_out x h]
  Tensor<S> b2;  // [d_out]

  static int64_t hidden_width(int64_t d_in, double ratio) {
    return std::max<int64_t>(1, std::llround(static_cast<double>(d_in) / ratio));
  }
};

template <typename S>
Tensor<S> mlp_forward(const Tensor<S>& x, const MlpParams<S>& p) {
  Tensor<S> h = relu(add(matmul(x, transpose2d(p.w1)), p.b1));
  return add(matmul(h, transpose2d(p.w2)), p.b2);
}

}  // namespace sagate
