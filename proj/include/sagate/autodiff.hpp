#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "sagate/tensor.hpp"

namespace sagate {

/// Reverse-mode tape. Ops append one entry per recorded application; backward
/// replays the entries in reverse, which visits each node exactly once because
/// the tape is append-only and inputs always precede their consumers.
template <typename S>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape*& active() {
    thread_local Tape* current = nullptr;
    return current;
  }

  void record(std::shared_ptr<TensorNode<S>> out, std::function<void()> pull) {
    out->origin = this;
    entries_.push_back(Entry{std::move(out), std::move(pull)});
  }

  size_t size() const { return entries_.size(); }

  /// Propagates d(root)/d(leaf) into every reachable requires-grad leaf.
  /// Gradients of multiply-used nodes accumulate by summation; replay order
  /// is the fixed reverse of recording order, so results are deterministic.
  void backward(const Tensor<S>& root) {
    if (root.numel() != 1) throw NotScalar("backward root must be a scalar");
    if (entries_.empty()) return;  // nothing recorded: no-op
    if (root.node()->origin != this)
      throw DetachedRoot("backward root was not produced on the active tape");
    root.node()->ensure_grad();
    root.node()->grad[0] += S(1);
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
      if (it->out->grad.empty()) continue;  // no gradient flowed here
      it->pull();
    }
  }

  void clear() { entries_.clear(); }

 private:
  struct Entry {
    std::shared_ptr<TensorNode<S>> out;
    std::function<void()> pull;
  };
  std::vector<Entry> entries_;
};

/// RAII activation of a tape on the current thread. Ops record only while a
/// tape is active and some input requires grad; otherwise they evaluate pure.
template <typename S>
class TapeScope {
 public:
  explicit TapeScope(Tape<S>& t) : prev_(Tape<S>::active()) { Tape<S>::active() = &t; }
  ~TapeScope() { Tape<S>::active() = prev_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape<S>* prev_;
};

namespace detail {

template <typename S>
inline bool should_record(bool any_requires) {
  return any_requires && Tape<S>::active() != nullptr;
}

}  // namespace detail

}  // namespace sagate
