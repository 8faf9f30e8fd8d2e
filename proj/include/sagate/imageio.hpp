#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sagate/common.hpp"

namespace sagate {

struct Pgm8 {
  int64_t width = 0, height = 0;
  std::vector<uint8_t> pixels;  // row-major
};

struct Pgm16 {
  int64_t width = 0, height = 0;
  std::vector<uint16_t> pixels;  // row-major, stored big-endian on disk
};

struct Ppm8 {
  int64_t width = 0, height = 0;
  std::vector<uint8_t> pixels;  // row-major RGB triplets
};

void write_pgm8(const std::string& path, const Pgm8& img);
Pgm8 read_pgm8(const std::string& path);

void write_pgm16(const std::string& path, const Pgm16& img);
Pgm16 read_pgm16(const std::string& path);

void write_ppm8(const std::string& path, const Ppm8& img);
Ppm8 read_ppm8(const std::string& path);

}  // namespace sagate
