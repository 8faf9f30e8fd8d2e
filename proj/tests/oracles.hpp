#pragma once

// Straight-line reimplementations used as independent oracles. Everything in
// this header is plain loops over flat arrays; nothing routes through the
// tensor or autodiff machinery it is checking.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

namespace sagate::oracle {

// Direct cross-correlation, NCHW, square kernel.
inline std::vector<double> conv2d(const std::vector<double>& x, int64_t N, int64_t C, int64_t H,
                                  int64_t W, const std::vector<double>& wgt,
                                  const std::vector<double>& bias, int64_t Co, int64_t k,
                                  int64_t stride, int64_t pad, int64_t& Ho, int64_t& Wo) {
  Ho = (H + 2 * pad - k) / stride + 1;
  Wo = (W + 2 * pad - k) / stride + 1;
  std::vector<double> y(static_cast<size_t>(N * Co * Ho * Wo), 0.0);
  for (int64_t n = 0; n < N; ++n)
    for (int64_t co = 0; co < Co; ++co)
      for (int64_t oy = 0; oy < Ho; ++oy)
        for (int64_t ox = 0; ox < Wo; ++ox) {
          double acc = bias.empty() ? 0.0 : bias[static_cast<size_t>(co)];
          for (int64_t c = 0; c < C; ++c)
            for (int64_t ky = 0; ky < k; ++ky)
              for (int64_t kx = 0; kx < k; ++kx) {
                const int64_t iy = oy * stride + ky - pad, ix = ox * stride + kx - pad;
                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                acc += x[static_cast<size_t>(((n * C + c) * H + iy) * W + ix)] *
                       wgt[static_cast<size_t>(((co * C + c) * k + ky) * k + kx)];
              }
          y[static_cast<size_t>(((n * Co + co) * Ho + oy) * Wo + ox)] = acc;
        }
  return y;
}

inline std::vector<double> channel_norm(const std::vector<double>& x, int64_t N, int64_t C,
                                        int64_t HW, const std::vector<double>& gamma,
                                        const std::vector<double>& beta, double eps = 1e-5) {
  std::vector<double> y(x.size());
  for (int64_t i = 0; i < N * C; ++i) {
    double mu = 0;
    for (int64_t j = 0; j < HW; ++j) mu += x[static_cast<size_t>(i * HW + j)];
    mu /= static_cast<double>(HW);
    double var = 0;
    for (int64_t j = 0; j < HW; ++j) {
      const double d = x[static_cast<size_t>(i * HW + j)] - mu;
      var += d * d;
    }
    var /= static_cast<double>(HW);
    const double istd = 1.0 / std::sqrt(var + eps);
    for (int64_t j = 0; j < HW; ++j)
      y[static_cast<size_t>(i * HW + j)] =
          gamma[static_cast<size_t>(i % C)] * (x[static_cast<size_t>(i * HW + j)] - mu) * istd +
          beta[static_cast<size_t>(i % C)];
  }
  return y;
}

inline double sigmoid(double v) { return v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v)); }

// MLP with weights [h x din] / [dout x h], ReLU hidden.
inline std::vector<double> mlp(const std::vector<double>& x, int64_t n, int64_t din,
                               const std::vector<double>& w1, const std::vector<double>& b1,
                               int64_t h, const std::vector<double>& w2,
                               const std::vector<double>& b2, int64_t dout) {
  std::vector<double> y(static_cast<size_t>(n * dout));
  std::vector<double> hid(static_cast<size_t>(h));
  for (int64_t r = 0; r < n; ++r) {
    for (int64_t j = 0; j < h; ++j) {
      double acc = b1[static_cast<size_t>(j)];
      for (int64_t i = 0; i < din; ++i)
        acc += w1[static_cast<size_t>(j * din + i)] * x[static_cast<size_t>(r * din + i)];
      hid[static_cast<size_t>(j)] = std::max(0.0, acc);
    }
    for (int64_t o = 0; o < dout; ++o) {
      double acc = b2[static_cast<size_t>(o)];
      for (int64_t j = 0; j < h; ++j) acc += w2[static_cast<size_t>(o * h + j)] * hid[static_cast<size_t>(j)];
      y[static_cast<size_t>(r * dout + o)] = acc;
    }
  }
  return y;
}

struct FsOracleOut {
  std::vector<double> w_rgb, w_hha;              // [N x C]
  std::vector<double> rgb_filtered, hha_filtered;  // [N x C x HW]
  std::vector<double> rgb_rec, hha_rec;
};

/// Pool -> shared MLP -> sigmoid -> split -> scale -> cross add, hand-composed.
inline FsOracleOut feature_separation(const std::vector<double>& rgb,
                                      const std::vector<double>& hha, int64_t N, int64_t C,
                                      int64_t HW, const std::vector<double>& w1,
                                      const std::vector<double>& b1, int64_t hidden,
                                      const std::vector<double>& w2,
                                      const std::vector<double>& b2) {
  FsOracleOut out;
  std::vector<double> descriptor(static_cast<size_t>(N * 2 * C));
  for (int64_t n = 0; n < N; ++n) {
    for (int64_t c = 0; c < C; ++c) {
      double ar = 0, ah = 0;
      for (int64_t j = 0; j < HW; ++j) {
        ar += rgb[static_cast<size_t>((n * C + c) * HW + j)];
        ah += hha[static_cast<size_t>((n * C + c) * HW + j)];
      }
      descriptor[static_cast<size_t>(n * 2 * C + c)] = ar / static_cast<double>(HW);
      descriptor[static_cast<size_t>(n * 2 * C + C + c)] = ah / static_cast<double>(HW);
    }
  }
  std::vector<double> z = mlp(descriptor, N, 2 * C, w1, b1, hidden, w2, b2, 2 * C);
  out.w_rgb.resize(static_cast<size_t>(N * C));
  out.w_hha.resize(static_cast<size_t>(N * C));
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c) {
      out.w_rgb[static_cast<size_t>(n * C + c)] = sigmoid(z[static_cast<size_t>(n * 2 * C + c)]);
      out.w_hha[static_cast<size_t>(n * C + c)] =
          sigmoid(z[static_cast<size_t>(n * 2 * C + C + c)]);
    }
  const size_t total = static_cast<size_t>(N * C * HW);
  out.rgb_filtered.resize(total);
  out.hha_filtered.resize(total);
  out.rgb_rec.resize(total);
  out.hha_rec.resize(total);
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c)
      for (int64_t j = 0; j < HW; ++j) {
        const size_t i = static_cast<size_t>((n * C + c) * HW + j);
        out.rgb_filtered[i] = rgb[i] * out.w_rgb[static_cast<size_t>(n * C + c)];
        out.hha_filtered[i] = hha[i] * out.w_hha[static_cast<size_t>(n * C + c)];
        out.rgb_rec[i] = out.hha_filtered[i] + rgb[i];
        out.hha_rec[i] = out.rgb_filtered[i] + hha[i];
      }
  return out;
}

/// Gate logits from two bias-free 1x1 convs over [rec_rgb ; rec_hha], pairwise
/// softmax, blend of the original inputs.
inline std::vector<double> feature_aggregation(const std::vector<double>& rgb,
                                               const std::vector<double>& hha,
                                               const std::vector<double>& rgb_rec,
                                               const std::vector<double>& hha_rec, int64_t N,
                                               int64_t C, int64_t HW,
                                               const std::vector<double>& gw_rgb,
                                               const std::vector<double>& gw_hha) {
  std::vector<double> merged(static_cast<size_t>(N * C * HW));
  for (int64_t n = 0; n < N; ++n)
    for (int64_t j = 0; j < HW; ++j) {
      double g1 = 0, g2 = 0;
      for (int64_t c = 0; c < C; ++c) {
        const double fr = rgb_rec[static_cast<size_t>((n * C + c) * HW + j)];
        const double fh = hha_rec[static_cast<size_t>((n * C + c) * HW + j)];
        g1 += gw_rgb[static_cast<size_t>(c)] * fr + gw_rgb[static_cast<size_t>(C + c)] * fh;
        g2 += gw_hha[static_cast<size_t>(c)] * fr + gw_hha[static_cast<size_t>(C + c)] * fh;
      }
      const double a1 = sigmoid(g1 - g2), a2 = sigmoid(g2 - g1);
      for (int64_t c = 0; c < C; ++c) {
        const size_t i = static_cast<size_t>((n * C + c) * HW + j);
        merged[i] = rgb[i] * a1 + hha[i] * a2;
      }
    }
  return merged;
}

/// Per-pixel cross entropy, mean over valid pixels.
inline double cross_entropy(const std::vector<double>& logits, int64_t N, int64_t K, int64_t HW,
                            const std::vector<int32_t>& labels, int32_t ignore = 255) {
  double acc = 0;
  int64_t count = 0;
  for (int64_t n = 0; n < N; ++n)
    for (int64_t j = 0; j < HW; ++j) {
      const int32_t lab = labels[static_cast<size_t>(n * HW + j)];
      if (lab == ignore) continue;
      double zmax = -1e300;
      for (int64_t c = 0; c < K; ++c)
        zmax = std::max(zmax, logits[static_cast<size_t>((n * K + c) * HW + j)]);
      double sum = 0;
      for (int64_t c = 0; c < K; ++c)
        sum += std::exp(logits[static_cast<size_t>((n * K + c) * HW + j)] - zmax);
      acc += std::log(sum) + zmax - logits[static_cast<size_t>((n * K + lab) * HW + j)];
      ++count;
    }
  return acc / static_cast<double>(count);
}

struct MetricOracle {
  double miou = 0, pixel_acc = 0;
  std::vector<uint64_t> counts;  // K x K, gt-major
};

/// Brute-force per-pixel enumeration of the confusion counts and metrics.
inline MetricOracle metrics(const std::vector<int32_t>& pred, const std::vector<int32_t>& gt,
                            int64_t K, int32_t ignore = 255) {
  MetricOracle m;
  m.counts.assign(static_cast<size_t>(K * K), 0);
  uint64_t correct = 0, total = 0;
  for (size_t i = 0; i < gt.size(); ++i) {
    if (gt[i] == ignore) continue;
    ++m.counts[static_cast<size_t>(gt[i] * K + pred[i])];
    ++total;
    if (gt[i] == pred[i]) ++correct;
  }
  double acc = 0;
  int64_t present = 0;
  for (int64_t c = 0; c < K; ++c) {
    uint64_t inter = m.counts[static_cast<size_t>(c * K + c)], row = 0, col = 0;
    for (int64_t j = 0; j < K; ++j) {
      row += m.counts[static_cast<size_t>(c * K + j)];
      col += m.counts[static_cast<size_t>(j * K + c)];
    }
    const uint64_t uni = row + col - inter;
    if (uni == 0) continue;
    acc += static_cast<double>(inter) / static_cast<double>(uni);
    ++present;
  }
  m.miou = acc / static_cast<double>(present);
  m.pixel_acc = static_cast<double>(correct) / static_cast<double>(total);
  return m;
}

}  // namespace sagate::oracle
