#include "sagate/imageio.hpp"

#include <cctype>
#include <fstream>

namespace sagate {

namespace {

// Netpbm header token reader: skips whitespace and '#' comment lines.
int64_t read_token(std::istream& is, const std::string& path) {
  int c = is.get();
  while (c != EOF) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = is.get();
    } else if (std::isspace(c)) {
      c = is.get();
    } else {
      break;
    }
  }
  if (c == EOF || !std::isdigit(c)) throw IoError("malformed netpbm header in " + path);
  int64_t v = 0;
  while (c != EOF && std::isdigit(c)) {
    v = v * 10 + (c - '0');
    c = is.get();
  }
  return v;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for write: " + path);
  return f;
}

std::ifstream open_in(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open: " + path);
  return f;
}

void expect_magic(std::istream& is, char digit, const std::string& path) {
  char m[2];
  is.read(m, 2);
  if (!is || m[0] != 'P' || m[1] != digit) throw IoError("bad netpbm magic in " + path);
}

}  // namespace

void write_pgm8(const std::string& path, const Pgm8& img) {
  auto f = open_out(path);
  f << "P5\n" << img.width << ' ' << img.height << "\n255\n";
  f.write(reinterpret_cast<const char*>(img.pixels.data()),
          static_cast<std::streamsize>(img.pixels.size()));
  if (!f) throw IoError("write failed: " + path);
}

Pgm8 read_pgm8(const std::string& path) {
  auto f = open_in(path);
  expect_magic(f, '5', path);
  Pgm8 img;
  img.width = read_token(f, path);
  img.height = read_token(f, path);
  const int64_t maxval = read_token(f, path);
  if (maxval != 255) throw IoError("expected 8-bit PGM in " + path);
  img.pixels.resize(static_cast<size_t>(img.width * img.height));
  f.read(reinterpret_cast<char*>(img.pixels.data()),
         static_cast<std::streamsize>(img.pixels.size()));
  if (!f) throw IoError("truncated PGM: " + path);
  return img;
}

void write_pgm16(const std::string& path, const Pgm16& img) {
  auto f = open_out(path);
  f << "P5\n" << img.width << ' ' << img.height << "\n65535\n";
  for (uint16_t v : img.pixels) {
    const unsigned char b[2] = {static_cast<unsigned char>(v >> 8),
                                static_cast<unsigned char>(v & 0xff)};  // MSB first
    f.write(reinterpret_cast<const char*>(b), 2);
  }
  if (!f) throw IoError("write failed: " + path);
}

Pgm16 read_pgm16(const std::string& path) {
  auto f = open_in(path);
  expect_magic(f, '5', path);
  Pgm16 img;
  img.width = read_token(f, path);
  img.height = read_token(f, path);
  const int64_t maxval = read_token(f, path);
  if (maxval != 65535) throw IoError("expected 16-bit PGM in " + path);
  img.pixels.resize(static_cast<size_t>(img.width * img.height));
  for (auto& v : img.pixels) {
    unsigned char b[2];
    f.read(reinterpret_cast<char*>(b), 2);
    v = static_cast<uint16_t>((b[0] << 8) | b[1]);
  }
  if (!f) throw IoError("truncated PGM: " + path);
  return img;
}

void write_ppm8(const std::string& path, const Ppm8& img) {
  auto f = open_out(path);
  f << "P6\n" << img.width << ' ' << img.height << "\n255\n";
  f.write(reinterpret_cast<const char*>(img.pixels.data()),
          static_cast<std::streamsize>(img.pixels.size()));
  if (!f) throw IoError("write failed: " + path);
}

Ppm8 read_ppm8(const std::string& path) {
  auto f = open_in(path);
  expect_magic(f, '6', path);
  Ppm8 img;
  img.width = read_token(f, path);
  img.height = read_token(f, path);
  const int64_t maxval = read_token(f, path);
  if (maxval != 255) throw IoError("expected 8-bit PPM in " + path);
  img.pixels.resize(static_cast<size_t>(img.width * img.height * 3));
  f.read(reinterpret_cast<char*>(img.pixels.data()),
         static_cast<std::streamsize>(img.pixels.size()));
  if (!f) throw IoError("truncated PPM: " + path);
  return img;
}

}  // namespace sagate
