#include "sagate/hha.hpp"

#include <algorithm>
#include <cmath>

#include "sagate/imageio.hpp"

namespace sagate {

namespace {

struct Vec3 {
  double x = 0, y = 0, z = 0;
};

Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }

void validate_frame(const DepthFrame& f) {
  const size_t n = static_cast<size_t>(f.numel());
  if (f.depth.size() != n || f.valid.size() != n)
    throw ShapeMismatch("depth frame buffers do not match height*width");
  bool any = false;
  for (size_t i = 0; i < n; ++i) {
    if (!f.valid[i]) continue;
    any = true;
    if (!(f.depth[i] > 0.f))
      throw NonPositiveDepth("valid pixel with non-positive depth at index " + std::to_string(i));
  }
  if (!any) throw AllInvalid("depth frame has no valid pixel");
  const double g = std::sqrt(static_cast<double>(f.gravity[0]) * f.gravity[0] +
                             static_cast<double>(f.gravity[1]) * f.gravity[1] +
                             static_cast<double>(f.gravity[2]) * f.gravity[2]);
  if (std::abs(g - 1.0) > 1e-3) throw ConfigError("gravity must be a unit vector");
}

/// Min-max over valid pixels; a constant channel maps to 0.5.
void minmax_normalize(std::vector<float>& ch, const std::vector<uint8_t>& valid) {
  float lo = std::numeric_limits<float>::max(), hi = std::numeric_limits<float>::lowest();
  for (size_t i = 0; i < ch.size(); ++i) {
    if (!valid[i]) continue;
    lo = std::min(lo, ch[i]);
    hi = std::max(hi, ch[i]);
  }
  if (hi > lo) {
    const float inv = 1.f / (hi - lo);
    for (size_t i = 0; i < ch.size(); ++i)
      if (valid[i]) ch[i] = (ch[i] - lo) * inv;
  } else {
    for (size_t i = 0; i < ch.size(); ++i)
      if (valid[i]) ch[i] = 0.5f;
  }
}

}  // namespace

HhaRaw hha_raw_channels(const DepthFrame& f) {
  validate_frame(f);
  const int64_t H = f.height, W = f.width;
  const size_t n = static_cast<size_t>(H * W);
  HhaRaw out;
  out.disparity.assign(n, 0.f);
  out.height.assign(n, 0.f);
  out.angle.assign(n, 0.f);

  const Vec3 g{f.gravity[0], f.gravity[1], f.gravity[2]};
  auto point = [&](int64_t y, int64_t x) -> Vec3 {
    const double d = f.depth[static_cast<size_t>(y * W + x)];
    return {d * (static_cast<double>(x) - f.cx) / f.fx, d * (static_cast<double>(y) - f.cy) / f.fy,
            d};
  };
  auto ok = [&](int64_t y, int64_t x) {
    return y >= 0 && y < H && x >= 0 && x < W && f.valid[static_cast<size_t>(y * W + x)];
  };
  // Derivative along one axis: central difference where both neighbours are
  // valid, one-sided at borders / next to invalid pixels.
  auto diff = [&](int64_t y, int64_t x, int64_t dy, int64_t dx, bool& defined) -> Vec3 {
    const bool m = ok(y - dy, x - dx), p = ok(y + dy, x + dx);
    defined = true;
    if (m && p) {
      Vec3 a = point(y + dy, x + dx), b = point(y - dy, x - dx);
      return {(a.x - b.x) * 0.5, (a.y - b.y) * 0.5, (a.z - b.z) * 0.5};
    }
    if (p) {
      Vec3 a = point(y + dy, x + dx), b = point(y, x);
      return {a.x - b.x, a.y - b.y, a.z - b.z};
    }
    if (m) {
      Vec3 a = point(y, x), b = point(y - dy, x - dx);
      return {a.x - b.x, a.y - b.y, a.z - b.z};
    }
    defined = false;
    return {};
  };

  for (int64_t y = 0; y < H; ++y)
    for (int64_t x = 0; x < W; ++x) {
      const size_t i = static_cast<size_t>(y * W + x);
      if (!f.valid[i]) continue;
      const double d = f.depth[i];
      out.disparity[i] = static_cast<float>(1.0 / d);
      out.height[i] = static_cast<float>(-dot(point(y, x), g));

      bool du_ok = false, dv_ok = false;
      Vec3 dpdu = diff(y, x, 0, 1, du_ok);
      Vec3 dpdv = diff(y, x, 1, 0, dv_ok);
      double c = 0.0;  // cos between oriented normal and gravity; 0 when undefined
      if (du_ok && dv_ok) {
        Vec3 nrm = cross(dpdu, dpdv);
        const double len = norm(nrm);
        if (len > 0) {
          nrm = {nrm.x / len, nrm.y / len, nrm.z / len};
          // Deterministic orientation: toward the camera, then upward.
          if (nrm.z > 0 || (nrm.z == 0 && (nrm.y < 0 || (nrm.y == 0 && nrm.x < 0))))
            nrm = {-nrm.x, -nrm.y, -nrm.z};
          c = dot(nrm, g);
        }
      }
      out.angle[i] = static_cast<float>((1.0 + c) * 0.5);
    }
  return out;
}

Tensor<float> encode_hha(const DepthFrame& f, const HhaOptions& opts) {
  HhaRaw raw = hha_raw_channels(f);
  const size_t n = static_cast<size_t>(f.numel());
  if (opts.fixed_scale) {
    for (size_t i = 0; i < n; ++i) {
      if (!f.valid[i]) continue;
      raw.disparity[i] = std::clamp(raw.disparity[i] / 2.f, 0.f, 1.f);
      raw.height[i] = std::clamp((raw.height[i] + 1.f) / 4.f, 0.f, 1.f);
    }
  } else {
    minmax_normalize(raw.disparity, f.valid);
    minmax_normalize(raw.height, f.valid);
  }
  std::vector<float> data;
  data.reserve(3 * n);
  data.insert(data.end(), raw.disparity.begin(), raw.disparity.end());
  data.insert(data.end(), raw.height.begin(), raw.height.end());
  data.insert(data.end(), raw.angle.begin(), raw.angle.end());
  return Tensor<float>::from_data({3, f.height, f.width}, std::move(data));
}

DepthFrame depth_from_pgm16(const std::string& path, float fx, float fy, float cx, float cy,
                            std::array<float, 3> gravity) {
  Pgm16 img = read_pgm16(path);
  DepthFrame f;
  f.height = img.height;
  f.width = img.width;
  f.fx = fx;
  f.fy = fy;
  f.cx = cx;
  f.cy = cy;
  f.gravity = gravity;
  f.depth.resize(img.pixels.size());
  f.valid.resize(img.pixels.size());
  for (size_t i = 0; i < img.pixels.size(); ++i) {
    f.valid[i] = img.pixels[i] > 0;  // 0 mm marks a missing measurement
    f.depth[i] = static_cast<float>(img.pixels[i]) / 1000.f;
  }
  return f;
}

void depth_to_pgm16(const std::string& path, const DepthFrame& f) {
  Pgm16 img;
  img.width = f.width;
  img.height = f.height;
  img.pixels.resize(static_cast<size_t>(f.numel()));
  for (size_t i = 0; i < img.pixels.size(); ++i) {
    if (!f.valid[i]) {
      img.pixels[i] = 0;
      continue;
    }
    const double mm = std::round(static_cast<double>(f.depth[i]) * 1000.0);
    img.pixels[i] = static_cast<uint16_t>(std::clamp(mm, 1.0, 65535.0));
  }
  write_pgm16(path, img);
}

void hha_to_ppm(const std::string& path, const Tensor<float>& hha) {
  if (hha.rank() != 3 || hha.dim(0) != 3) throw ShapeMismatch("hha map must be [3xHxW]");
  const int64_t H = hha.dim(1), W = hha.dim(2);
  Ppm8 img;
  img.width = W;
  img.height = H;
  img.pixels.resize(static_cast<size_t>(3 * H * W));
  for (int64_t p = 0; p < H * W; ++p)
    for (int64_t c = 0; c < 3; ++c) {
      const float v = std::clamp(hha.value()[static_cast<size_t>(c * H * W + p)], 0.f, 1.f);
      img.pixels[static_cast<size_t>(p * 3 + c)] =
          static_cast<uint8_t>(std::lround(v * 255.0));
    }
  write_ppm8(path, img);
}

}  // namespace sagate
