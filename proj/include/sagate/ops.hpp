#pragma once

#include <Eigen/Core>

#include <cmath>
#include <span>
#include <utility>

#include "sagate/autodiff.hpp"
#include "sagate/tensor.hpp"

namespace sagate {

namespace detail {

template <typename S>
inline Tensor<S> make_out(Shape shape, std::vector<S> value, bool requires_grad) {
  auto n = std::make_shared<TensorNode<S>>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  return Tensor<S>(std::move(n));
}

template <typename S, typename F>
inline void record_if(bool any_requires, const Tensor<S>& out, F&& pull) {
  if (should_record<S>(any_requires)) Tape<S>::active()->record(out.node(), std::forward<F>(pull));
}

/// Strides of operand shape `s` aligned to broadcast result `os`; broadcast
/// and missing leading dimensions get stride 0.
inline Shape aligned_strides(const Shape& os, const Shape& s) {
  Shape st = strides_of(s);
  Shape out(os.size(), 0);
  size_t r = os.size(), rs = s.size();
  for (size_t i = 0; i < rs; ++i) {
    if (s[rs - 1 - i] == os[r - 1 - i]) out[r - 1 - i] = st[rs - 1 - i];
  }
  return out;
}

/// Row-major odometer over `os`, yielding (linear out index, a offset, b offset).
template <typename F>
inline void for_each_bcast(const Shape& os, const Shape& stra, const Shape& strb, F&& f) {
  const int64_t n = numel_of(os);
  const int r = static_cast<int>(os.size());
  std::vector<int64_t> idx(static_cast<size_t>(r), 0);
  int64_t offa = 0, offb = 0;
  for (int64_t lin = 0;;) {
    f(lin, offa, offb);
    if (++lin == n) break;
    int d = r - 1;
    for (;;) {
      ++idx[d];
      offa += stra[d];
      offb += strb[d];
      if (idx[d] < os[d]) break;
      offa -= stra[d] * os[d];
      offb -= strb[d] * os[d];
      idx[d] = 0;
      --d;
    }
  }
}

template <typename S, typename FV, typename DA, typename DB>
inline Tensor<S> binary_op(const char* name, const Tensor<S>& a, const Tensor<S>& b, FV fv, DA dfa,
                           DB dfb) {
  Shape os = broadcast_shape(a.shape(), b.shape());
  Shape stra = aligned_strides(os, a.shape());
  Shape strb = aligned_strides(os, b.shape());
  std::vector<S> out(static_cast<size_t>(numel_of(os)));
  const auto& av = a.value();
  const auto& bv = b.value();
  for_each_bcast(os, stra, strb,
                 [&](int64_t lin, int64_t ia, int64_t ib) { out[lin] = fv(av[ia], bv[ib]); });
  bool req = a.requires_grad() || b.requires_grad();
  Tensor<S> y = make_out(os, std::move(out), req);
  throw_if_nonfinite(*y.node(), name);
  record_if(req, y, [an = a.node(), bn = b.node(), on = y.node(), os, stra, strb, dfa, dfb]() {
    const auto& g = on->grad;
    const bool wa = an->requires_grad, wb = bn->requires_grad;
    if (wa) an->ensure_grad();
    if (wb) bn->ensure_grad();
    for_each_bcast(os, stra, strb, [&](int64_t lin, int64_t ia, int64_t ib) {
      S go = g[lin];
      if (wa) an->grad[ia] += go * dfa(an->value[ia], bn->value[ib], on->value[lin]);
      if (wb) bn->grad[ib] += go * dfb(an->value[ia], bn->value[ib], on->value[lin]);
    });
  });
  return y;
}

template <typename S, typename FV, typename DF>
inline Tensor<S> unary_op(const char* name, const Tensor<S>& a, FV fv, DF df) {
  std::vector<S> out(a.value().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = fv(a.value()[i]);
  bool req = a.requires_grad();
  Tensor<S> y = make_out(a.shape(), std::move(out), req);
  throw_if_nonfinite(*y.node(), name);
  record_if(req, y, [an = a.node(), on = y.node(), df]() {
    an->ensure_grad();
    for (size_t i = 0; i < an->grad.size(); ++i)
      an->grad[i] += on->grad[i] * df(an->value[i], on->value[i]);
  });
  return y;
}

}  // namespace detail

// -- elementwise arithmetic --------------------------------------------------

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  return detail::binary_op(
      "add", a, b, [](S x, S y) { return x + y; }, [](S, S, S) { return S(1); },
      [](S, S, S) { return S(1); });
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  return detail::binary_op(
      "sub", a, b, [](S x, S y) { return x - y; }, [](S, S, S) { return S(1); },
      [](S, S, S) { return S(-1); });
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  return detail::binary_op(
      "mul", a, b, [](S x, S y) { return x * y; }, [](S, S y, S) { return y; },
      [](S x, S, S) { return x; });
}

template <typename S>
Tensor<S> div(const Tensor<S>& a, const Tensor<S>& b) {
  return detail::binary_op(
      "div", a, b, [](S x, S y) { return x / y; }, [](S, S y, S) { return S(1) / y; },
      [](S x, S y, S) { return -x / (y * y); });
}

template <typename S>
Tensor<S> scale(const Tensor<S>& a, S k) {
  return detail::unary_op(
      "scale", a, [k](S x) { return k * x; }, [k](S, S) { return k; });
}

template <typename S>
Tensor<S> add_scalar(const Tensor<S>& a, S k) {
  return detail::unary_op(
      "add_scalar", a, [k](S x) { return x + k; }, [](S, S) { return S(1); });
}

template <typename S>
Tensor<S> neg(const Tensor<S>& a) {
  return scale(a, S(-1));
}

// -- activations --------------------------------------------------------------

template <typename S>
Tensor<S> relu(const Tensor<S>& a) {
  return detail::unary_op(
      "relu", a, [](S x) { return x > S(0) ? x : S(0); },
      [](S x, S) { return x > S(0) ? S(1) : S(0); });
}

template <typename S>
inline S sigmoid_scalar(S x) {
  // Evaluated through exp(-|x|) so large logits cannot overflow.
  if (x >= S(0)) return S(1) / (S(1) + std::exp(-x));
  S e = std::exp(x);
  return e / (S(1) + e);
}

template <typename S>
Tensor<S> sigmoid(const Tensor<S>& a) {
  return detail::unary_op(
      "sigmoid", a, [](S x) { return sigmoid_scalar(x); },
      [](S, S y) { return y * (S(1) - y); });
}

// -- linear algebra -----------------------------------------------------------

namespace detail {
template <typename S>
using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using MapMat = Eigen::Map<RowMat<S>>;
template <typename S>
using MapConstMat = Eigen::Map<const RowMat<S>>;
}  // namespace detail

/// Standard matrix product [MxK]x[KxN]; both operands rank 2.
template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw ShapeMismatch("matmul expects [MxK]x[KxN], got " + shape_str(a.shape()) + " x " +
                        shape_str(b.shape()));
  const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<S> out(static_cast<size_t>(m * n));
  {
    detail::MapConstMat<S> ma(a.value().data(), m, k);
    detail::MapConstMat<S> mb(b.value().data(), k, n);
    detail::MapMat<S> mo(out.data(), m, n);
    mo.noalias() = ma * mb;
  }
  bool req = a.requires_grad() || b.requires_grad();
  Tensor<S> y = detail::make_out({m, n}, std::move(out), req);
  throw_if_nonfinite(*y.node(), "matmul");
  detail::record_if(req, y, [an = a.node(), bn = b.node(), on = y.node(), m, k, n]() {
    detail::MapConstMat<S> g(on->grad.data(), m, n);
    detail::MapConstMat<S> ma(an->value.data(), m, k);
    detail::MapConstMat<S> mb(bn->value.data(), k, n);
    if (an->requires_grad) {
      an->ensure_grad();
      detail::MapMat<S> ga(an->grad.data(), m, k);
      ga.noalias() += g * mb.transpose();
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      detail::MapMat<S> gb(bn->grad.data(), k, n);
      gb.noalias() += ma.transpose() * g;
    }
  });
  return y;
}

template <typename S>
Tensor<S> transpose2d(const Tensor<S>& a) {
  if (a.rank() != 2) throw ShapeMismatch("transpose2d expects rank 2");
  const int64_t m = a.dim(0), n = a.dim(1);
  std::vector<S> out(static_cast<size_t>(m * n));
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) out[static_cast<size_t>(j * m + i)] = a.value()[static_cast<size_t>(i * n + j)];
  bool req = a.requires_grad();
  Tensor<S> y = detail::make_out({n, m}, std::move(out), req);
  detail::record_if(req, y, [an = a.node(), on = y.node(), m, n]() {
    an->ensure_grad();
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < n; ++j)
        an->grad[static_cast<size_t>(i * n + j)] += on->grad[static_cast<size_t>(j * m + i)];
  });
  return y;
}

// -- shape manipulation --------------------------------------------------------

template <typename S>
Tensor<S> reshape(const Tensor<S>& a, Shape shape) {
  if (numel_of(shape) != a.numel())
    throw ShapeMismatch("reshape " + shape_str(a.shape()) + " -> " + shape_str(shape));
  bool req = a.requires_grad();
  Tensor<S> y = detail::make_out(std::move(shape), a.value(), req);
  detail::record_if(req, y, [an = a.node(), on = y.node()]() {
    an->ensure_grad();
    for (size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += on->grad[i];
  });
  return y;
}

/// Concatenation along `dim`; all other extents must agree.
template <typename S>
Tensor<S> concat(std::span<const Tensor<S>> parts, int dim) {
  if (parts.empty()) throw ShapeMismatch("concat of zero tensors");
  Shape os = parts[0].shape();
  const int r = parts[0].rank();
  if (dim < 0 || dim >= r) throw ShapeMismatch("concat dim out of range");
  int64_t cat_extent = 0;
  for (const auto& p : parts) {
    if (p.rank() != r) throw ShapeMismatch("concat rank mismatch");
    for (int d = 0; d < r; ++d)
      if (d != dim && p.dim(d) != os[static_cast<size_t>(d)])
        throw ShapeMismatch("concat extent mismatch at dim " + std::to_string(d));
    cat_extent += p.dim(dim);
  }
  os[static_cast<size_t>(dim)] = cat_extent;

  int64_t outer = 1, inner = 1;
  for (int d = 0; d < dim; ++d) outer *= parts[0].dim(d);
  for (int d = dim + 1; d < r; ++d) inner *= parts[0].dim(d);

  std::vector<S> out(static_cast<size_t>(numel_of(os)));
  const int64_t out_row = cat_extent * inner;
  bool req = false;
  int64_t off = 0;
  for (const auto& p : parts) {
    req = req || p.requires_grad();
    const int64_t block = p.dim(dim) * inner;
    for (int64_t o = 0; o < outer; ++o)
      std::copy_n(p.value().data() + o * block, block, out.data() + o * out_row + off);
    off += block;
  }
  Tensor<S> y = detail::make_out(os, std::move(out), req);

  std::vector<std::shared_ptr<TensorNode<S>>> nodes;
  nodes.reserve(parts.size());
  for (const auto& p : parts) nodes.push_back(p.node());
  detail::record_if(req, y, [nodes, on = y.node(), outer, out_row]() {
    int64_t off = 0;
    for (const auto& nptr : nodes) {
      const int64_t blk = nptr->numel() / outer;
      if (nptr->requires_grad) {
        nptr->ensure_grad();
        for (int64_t o = 0; o < outer; ++o)
          for (int64_t i = 0; i < blk; ++i)
            nptr->grad[static_cast<size_t>(o * blk + i)] +=
                on->grad[static_cast<size_t>(o * out_row + off + i)];
      }
      off += blk;
    }
  });
  return y;
}

template <typename S>
Tensor<S> concat(std::initializer_list<Tensor<S>> parts, int dim) {
  std::vector<Tensor<S>> v(parts);
  return concat(std::span<const Tensor<S>>(v.data(), v.size()), dim);
}

/// Contiguous slice [start, start+len) along `dim`.
template <typename S>
Tensor<S> slice(const Tensor<S>& a, int dim, int64_t start, int64_t len) {
  const int r = a.rank();
  if (dim < 0 || dim >= r) throw ShapeMismatch("slice dim out of range");
  if (start < 0 || len <= 0 || start + len > a.dim(dim)) throw ShapeMismatch("slice bounds");
  Shape os = a.shape();
  os[static_cast<size_t>(dim)] = len;
  int64_t outer = 1, inner = 1;
  for (int d = 0; d < dim; ++d) outer *= a.dim(d);
  for (int d = dim + 1; d < r; ++d) inner *= a.dim(d);
  const int64_t in_row = a.dim(dim) * inner, out_row = len * inner, off = start * inner;
  std::vector<S> out(static_cast<size_t>(numel_of(os)));
  for (int64_t o = 0; o < outer; ++o)
    std::copy_n(a.value().data() + o * in_row + off, out_row, out.data() + o * out_row);
  bool req = a.requires_grad();
  Tensor<S> y = detail::make_out(os, std::move(out), req);
  detail::record_if(req, y, [an = a.node(), on = y.node(), outer, in_row, out_row, off]() {
    an->ensure_grad();
    for (int64_t o = 0; o < outer; ++o)
      for (int64_t i = 0; i < out_row; ++i)
        an->grad[static_cast<size_t>(o * in_row + off + i)] +=
            on->grad[static_cast<size_t>(o * out_row + i)];
  });
  return y;
}

// -- reductions ----------------------------------------------------------------

template <typename S>
Tensor<S> sum_all(const Tensor<S>& a) {
  S acc = 0;
  for (S v : a.value()) acc += v;  // fixed sequential order
  bool req = a.requires_grad();
  Tensor<S> y = detail::make_out({1}, std::vector<S>{acc}, req);
  throw_if_nonfinite(*y.node(), "sum_all");
  detail::record_if(req, y, [an = a.node(), on = y.node()]() {
    an->ensure_grad();
    const S g = on->grad[0];
    for (auto& v : an->grad) v += g;
  });
  return y;
}

template <typename S>
Tensor<S> mean_all(const Tensor<S>& a) {
  return scale(sum_all(a), S(1) / static_cast<S>(a.numel()));
}

}  // namespace sagate
