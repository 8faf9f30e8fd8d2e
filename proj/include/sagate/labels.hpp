#pragma once

#include <cstdint>
#include <vector>

#include "sagate/common.hpp"

namespace sagate {

constexpr int32_t kIgnoreLabel = 255;

/// Integer class map [N x H x W]; 255 marks ignored pixels.
struct LabelMap {
  int64_t n = 0, h = 0, w = 0;
  std::vector<int32_t> v;

  static LabelMap filled(int64_t n, int64_t h, int64_t w, int32_t value) {
    LabelMap m;
    m.n = n;
    m.h = h;
    m.w = w;
    m.v.assign(static_cast<size_t>(n * h * w), value);
    return m;
  }

  int64_t numel() const { return n * h * w; }
  int32_t& at(int64_t ni, int64_t y, int64_t x) { return v[static_cast<size_t>((ni * h + y) * w + x)]; }
  int32_t at(int64_t ni, int64_t y, int64_t x) const {
    return v[static_cast<size_t>((ni * h + y) * w + x)];
  }
};

}  // namespace sagate
