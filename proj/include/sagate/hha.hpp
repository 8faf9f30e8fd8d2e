#pragma once

#include <array>
#include <string>
#include <vector>

#include "sagate/tensor.hpp"

namespace sagate {

/// One depth observation: metric depth with pinhole intrinsics and the known
/// gravity direction of the (synthetic) scene in camera coordinates.
struct DepthFrame {
  int64_t height = 0, width = 0;
  std::vector<float> depth;      // meters, row-major
  std::vector<uint8_t> valid;    // 1 where the measurement is usable
  float fx = 1, fy = 1, cx = 0, cy = 0;
  std::array<float, 3> gravity{0.f, -1.f, 0.f};  // unit vector

  int64_t numel() const { return height * width; }
};

struct HhaOptions {
  /// Per-frame min-max scaling by default; fixed linear scalings otherwise
  /// (disparity/2 and (height+1)/4, both clamped to [0,1]).
  bool fixed_scale = false;
};

/// Pre-normalization channels, exposed for geometry tests.
struct HhaRaw {
  std::vector<float> disparity;  // 1/depth
  std::vector<float> height;     // -<P(u,v), gravity> in meters
  std::vector<float> angle;      // (1 + cos(normal, gravity))/2, already in [0,1]
};

HhaRaw hha_raw_channels(const DepthFrame& frame);

/// 3 x H x W map with all channels in [0,1]; invalid pixels are exactly 0.
Tensor<float> encode_hha(const DepthFrame& frame, const HhaOptions& opts = {});

DepthFrame depth_from_pgm16(const std::string& path, float fx, float fy, float cx, float cy,
                            std::array<float, 3> gravity);
void depth_to_pgm16(const std::string& path, const DepthFrame& frame);
void hha_to_ppm(const std::string& path, const Tensor<float>& hha);

}  // namespace sagate
