#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "sagate/common.hpp"
#include "sagate/rng.hpp"

namespace sagate {

using Shape = std::vector<int64_t>;

inline int64_t numel_of(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

inline int64_t checked_numel(const Shape& s);

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) os << s[i] << (i + 1 < s.size() ? "x" : "");
  os << ']';
  return os.str();
}

inline int64_t checked_numel(const Shape& s) {
  for (int64_t d : s)
    if (d <= 0) throw ShapeMismatch("non-positive extent in shape " + shape_str(s));
  return numel_of(s);
}

inline Shape strides_of(const Shape& s) {
  Shape st(s.size(), 1);
  for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i) st[i] = st[i + 1] * s[i + 1];
  return st;
}

/// Trailing-singleton broadcast: shapes are aligned at the last dimension,
/// missing leading dims count as 1, and each pair must match or contain a 1.
inline Shape broadcast_shape(const Shape& a, const Shape& b) {
  size_t ra = a.size(), rb = b.size(), r = std::max(ra, rb);
  Shape out(r, 1);
  for (size_t i = 0; i < r; ++i) {
    int64_t da = i < ra ? a[ra - 1 - i] : 1;
    int64_t db = i < rb ? b[rb - 1 - i] : 1;
    if (da != db && da != 1 && db != 1)
      throw ShapeMismatch("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    out[r - 1 - i] = std::max(da, db);
  }
  return out;
}

template <typename S>
struct TensorNode {
  Shape shape;
  std::vector<S> value;
  std::vector<S> grad;  // empty means identically zero
  bool requires_grad = false;
  const void* origin = nullptr;  // tape that produced this node, null for leaves

  int64_t numel() const { return static_cast<int64_t>(value.size()); }
  void ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), S(0));
  }
};

/// Dense row-major tensor handle with value semantics over shared storage.
/// Construction fixes the contents; optimizers mutate leaf storage between
/// tapes through mutable_value().
template <typename S>
class Tensor {
 public:
  using Scalar = S;

  Tensor() = default;

  static Tensor from_data(Shape shape, std::vector<S> data, bool requires_grad = false) {
    if (checked_numel(shape) != static_cast<int64_t>(data.size()))
      throw ShapeMismatch("data length " + std::to_string(data.size()) + " does not match shape " +
                          shape_str(shape));
    auto n = std::make_shared<TensorNode<S>>();
    n->shape = std::move(shape);
    n->value = std::move(data);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  static Tensor scalar(S v, bool requires_grad = false) {
    return from_data({1}, std::vector<S>{v}, requires_grad);
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    std::vector<S> d(static_cast<size_t>(checked_numel(shape)), S(0));
    return from_data(std::move(shape), std::move(d), requires_grad);
  }

  static Tensor ones(Shape shape, bool requires_grad = false) {
    std::vector<S> d(static_cast<size_t>(checked_numel(shape)), S(1));
    return from_data(std::move(shape), std::move(d), requires_grad);
  }

  static Tensor full(Shape shape, S v, bool requires_grad = false) {
    std::vector<S> d(static_cast<size_t>(checked_numel(shape)), v);
    return from_data(std::move(shape), std::move(d), requires_grad);
  }

  static Tensor uniform(Shape shape, SplitMix64& rng, S lo, S hi, bool requires_grad = false) {
    std::vector<S> d(static_cast<size_t>(checked_numel(shape)));
    for (auto& x : d) x = static_cast<S>(rng.uniform(static_cast<double>(lo), static_cast<double>(hi)));
    return from_data(std::move(shape), std::move(d), requires_grad);
  }

  static Tensor normal(Shape shape, SplitMix64& rng, S mean, S stddev, bool requires_grad = false) {
    std::vector<S> d(static_cast<size_t>(checked_numel(shape)));
    for (auto& x : d)
      x = static_cast<S>(static_cast<double>(mean) + static_cast<double>(stddev) * rng.normal());
    return from_data(std::move(shape), std::move(d), requires_grad);
  }

  bool defined() const { return n_ != nullptr; }
  const Shape& shape() const { return n_->shape; }
  int rank() const { return static_cast<int>(n_->shape.size()); }
  int64_t numel() const { return n_->numel(); }
  int64_t dim(int i) const { return n_->shape[static_cast<size_t>(i)]; }

  const std::vector<S>& value() const { return n_->value; }
  std::vector<S>& mutable_value() { return n_->value; }
  const std::vector<S>& grad() const { return n_->grad; }
  bool has_grad() const { return !n_->grad.empty(); }
  void zero_grad() { n_->grad.clear(); }

  bool requires_grad() const { return n_->requires_grad; }
  void set_requires_grad(bool on) { n_->requires_grad = on; }

  S at(std::initializer_list<int64_t> idx) const {
    Shape st = strides_of(n_->shape);
    int64_t off = 0;
    size_t i = 0;
    for (int64_t v : idx) off += v * st[i++];
    return n_->value[static_cast<size_t>(off)];
  }

  /// Leaf copy of values with no graph history.
  Tensor detached() const { return from_data(n_->shape, n_->value, false); }

  std::shared_ptr<TensorNode<S>> node() const { return n_; }

  explicit Tensor(std::shared_ptr<TensorNode<S>> n) : n_(std::move(n)) {}

 private:
  std::shared_ptr<TensorNode<S>> n_;
};

template <typename S>
inline void throw_if_nonfinite(const TensorNode<S>& n, const char* op) {
  if (!nancheck_enabled()) return;
  for (S v : n.value)
    if (!std::isfinite(static_cast<double>(v)))
      throw NonFinite(std::string(op) + " produced a non-finite value");
}

// ---------------------------------------------------------------------------
// STNS binary tensor file: magic "STNS", u8 dtype (0=f32, 1=f64), u8 rank,
// rank x u32 little-endian dims, then raw little-endian scalars.
// ---------------------------------------------------------------------------

namespace detail {

inline void put_u32_le(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline uint32_t get_u32_le(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  return static_cast<uint32_t>(b[0]) | static_cast<uint32_t>(b[1]) << 8 |
         static_cast<uint32_t>(b[2]) << 16 | static_cast<uint32_t>(b[3]) << 24;
}

template <typename S>
inline void put_scalar_le(std::ostream& os, S v) {
  if constexpr (sizeof(S) == 4) {
    uint32_t u;
    std::memcpy(&u, &v, 4);
    put_u32_le(os, u);
  } else {
    uint64_t u;
    std::memcpy(&u, &v, 8);
    put_u32_le(os, static_cast<uint32_t>(u));
    put_u32_le(os, static_cast<uint32_t>(u >> 32));
  }
}

template <typename S>
inline S get_scalar_le(std::istream& is) {
  if constexpr (sizeof(S) == 4) {
    uint32_t u = get_u32_le(is);
    S v;
    std::memcpy(&v, &u, 4);
    return v;
  } else {
    uint64_t lo = get_u32_le(is);
    uint64_t hi = get_u32_le(is);
    uint64_t u = lo | (hi << 32);
    S v;
    std::memcpy(&v, &u, 8);
    return v;
  }
}

template <typename S>
constexpr uint8_t stns_dtype_code() {
  static_assert(std::is_same_v<S, float> || std::is_same_v<S, double>);
  return std::is_same_v<S, float> ? 0 : 1;
}

}  // namespace detail

template <typename S>
inline void save_stns(std::ostream& os, const Tensor<S>& t) {
  os.write("STNS", 4);
  uint8_t dtype = detail::stns_dtype_code<S>();
  uint8_t rank = static_cast<uint8_t>(t.rank());
  os.write(reinterpret_cast<const char*>(&dtype), 1);
  os.write(reinterpret_cast<const char*>(&rank), 1);
  for (int i = 0; i < t.rank(); ++i) detail::put_u32_le(os, static_cast<uint32_t>(t.dim(i)));
  for (S v : t.value()) detail::put_scalar_le(os, v);
}

template <typename S>
inline void save_stns(const std::string& path, const Tensor<S>& t) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for write: " + path);
  save_stns(f, t);
  if (!f) throw IoError("write failed: " + path);
}

template <typename S>
inline Tensor<S> load_stns(std::istream& is) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "STNS", 4) != 0) throw IoError("bad STNS magic");
  uint8_t dtype, rank;
  is.read(reinterpret_cast<char*>(&dtype), 1);
  is.read(reinterpret_cast<char*>(&rank), 1);
  if (dtype != detail::stns_dtype_code<S>()) throw IoError("STNS dtype mismatch");
  Shape shape(rank);
  for (auto& d : shape) d = static_cast<int64_t>(detail::get_u32_le(is));
  std::vector<S> data(static_cast<size_t>(numel_of(shape)));
  for (auto& v : data) v = detail::get_scalar_le<S>(is);
  if (!is) throw IoError("truncated STNS stream");
  return Tensor<S>::from_data(std::move(shape), std::move(data));
}

template <typename S>
inline Tensor<S> load_stns(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open: " + path);
  return load_stns<S>(f);
}

}  // namespace sagate
