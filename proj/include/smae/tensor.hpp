#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <deque>
#include <functional>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "smae/rng.hpp"

namespace smae::tensor {

using Shape = std::vector<int64_t>;

inline int64_t numel_of(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out + "]";
}

// Dense row-major array. Rank 0 is a scalar. Deep-copy value semantics.
template <typename S>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape) : shape_(std::move(shape)), data_(numel_of(shape_), S{0}) {}
  Tensor(Shape shape, std::vector<S> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (static_cast<int64_t>(data_.size()) != numel_of(shape_))
      throw std::invalid_argument("tensor data length " + std::to_string(data_.size()) +
                                  " does not match shape " + shape_str(shape_));
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, S v) {
    Tensor t(std::move(shape));
    for (S& x : t.data_) x = v;
    return t;
  }
  static Tensor scalar(S v) { return Tensor({}, {v}); }

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }
  int64_t dim(int axis) const { return shape_[static_cast<size_t>(axis)]; }
  int64_t last_dim() const { return shape_.empty() ? 1 : shape_.back(); }

  S* data() { return data_.data(); }
  const S* data() const { return data_.data(); }
  std::span<S> span() { return data_; }
  std::span<const S> span() const { return data_; }

  S& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  S operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  S& at(int64_t i, int64_t j) { return data_[static_cast<size_t>(i * shape_.back() + j)]; }
  S at(int64_t i, int64_t j) const { return data_[static_cast<size_t>(i * shape_.back() + j)]; }

  bool same_bits(const Tensor& other) const {
    if (shape_ != other.shape_) return false;
    return std::memcmp(data_.data(), other.data_.data(), data_.size() * sizeof(S)) == 0;
  }

  bool all_finite() const {
    for (S x : data_)
      if (!std::isfinite(static_cast<double>(x))) return false;
    return true;
  }

 private:
  Shape shape_;
  std::vector<S> data_;
};

template <typename S>
Tensor<S> randn(Shape shape, Rng& rng, double stddev = 1.0) {
  Tensor<S> t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<S>(rng.normal() * stddev);
  return t;
}

// ---------------------------------------------------------------------------
// Raw kernels
// ---------------------------------------------------------------------------

namespace detail {

// c += a x b, row-major. The j-loop vectorizes without reassociating the
// k-accumulation, so results do not depend on SIMD width.
template <typename S>
void mm_acc(const S* a, const S* b, S* c, int64_t n, int64_t m, int64_t p) {
  for (int64_t i = 0; i < n; ++i) {
    const S* arow = a + i * m;
    S* crow = c + i * p;
    for (int64_t k = 0; k < m; ++k) {
      const S ak = arow[k];
      const S* brow = b + k * p;
      for (int64_t j = 0; j < p; ++j) crow[j] += ak * brow[j];
    }
  }
}

template <typename S>
void transpose2d(const S* a, S* out, int64_t n, int64_t m) {
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < m; ++j) out[j * n + i] = a[i * m + j];
}

inline Shape pad_to_rank(const Shape& s, size_t rank) {
  Shape out(rank, 1);
  std::copy(s.begin(), s.end(), out.begin() + (rank - s.size()));
  return out;
}

inline Shape broadcast_shape(const Shape& a, const Shape& b) {
  const size_t rank = std::max(a.size(), b.size());
  Shape pa = pad_to_rank(a, rank), pb = pad_to_rank(b, rank), out(rank);
  for (size_t i = 0; i < rank; ++i) {
    if (pa[i] == pb[i] || pa[i] == 1 || pb[i] == 1)
      out[i] = std::max(pa[i], pb[i]);
    else
      throw std::invalid_argument("shapes not broadcastable: " + shape_str(a) + " vs " + shape_str(b));
  }
  return out;
}

constexpr size_t kMaxRank = 4;

struct BcastIter {
  int64_t size[kMaxRank];
  int64_t stride_a[kMaxRank];
  int64_t stride_b[kMaxRank];

  BcastIter(const Shape& out, const Shape& a, const Shape& b) {
    if (out.size() > kMaxRank) throw std::invalid_argument("broadcast rank > 4 unsupported");
    Shape pa = pad_to_rank(a, out.size()), pb = pad_to_rank(b, out.size());
    // left-pad to kMaxRank with size-1 dims
    for (size_t i = 0; i < kMaxRank; ++i) {
      size_t j = i + out.size();
      size[i] = (j >= kMaxRank) ? out[j - kMaxRank] : 1;
    }
    int64_t sa = 1, sb = 1;
    int64_t strides_a[kMaxRank], strides_b[kMaxRank];
    for (int i = static_cast<int>(out.size()) - 1; i >= 0; --i) {
      strides_a[i] = (pa[i] == 1) ? 0 : sa;
      strides_b[i] = (pb[i] == 1) ? 0 : sb;
      sa *= pa[i];
      sb *= pb[i];
    }
    for (size_t i = 0; i < kMaxRank; ++i) {
      size_t j = i + out.size();
      stride_a[i] = (j >= kMaxRank) ? strides_a[j - kMaxRank] : 0;
      stride_b[i] = (j >= kMaxRank) ? strides_b[j - kMaxRank] : 0;
    }
  }
};

// out[i] = op(a[...], b[...]) with numpy broadcasting
template <typename S, typename Op>
void ewise_bcast(const Tensor<S>& a, const Tensor<S>& b, Tensor<S>& out, Op op) {
  if (a.shape() == b.shape()) {
    const S* pa = a.data();
    const S* pb = b.data();
    S* po = out.data();
    const int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) po[i] = op(pa[i], pb[i]);
    return;
  }
  BcastIter it(out.shape(), a.shape(), b.shape());
  S* po = out.data();
  const S* pa = a.data();
  const S* pb = b.data();
  int64_t idx = 0;
  for (int64_t i0 = 0; i0 < it.size[0]; ++i0)
    for (int64_t i1 = 0; i1 < it.size[1]; ++i1)
      for (int64_t i2 = 0; i2 < it.size[2]; ++i2) {
        const S* ra = pa + i0 * it.stride_a[0] + i1 * it.stride_a[1] + i2 * it.stride_a[2];
        const S* rb = pb + i0 * it.stride_b[0] + i1 * it.stride_b[1] + i2 * it.stride_b[2];
        for (int64_t i3 = 0; i3 < it.size[3]; ++i3)
          po[idx++] = op(ra[i3 * it.stride_a[3]], rb[i3 * it.stride_b[3]]);
      }
}

// target += g summed over the axes g was broadcast along (inverse of expand)
template <typename S>
void reduce_into(const Tensor<S>& g, Tensor<S>& target) {
  if (g.shape() == target.shape()) {
    S* pt = target.data();
    const S* pg = g.data();
    for (int64_t i = 0; i < g.numel(); ++i) pt[i] += pg[i];
    return;
  }
  BcastIter it(g.shape(), target.shape(), target.shape());
  const S* pg = g.data();
  S* pt = target.data();
  int64_t idx = 0;
  for (int64_t i0 = 0; i0 < it.size[0]; ++i0)
    for (int64_t i1 = 0; i1 < it.size[1]; ++i1)
      for (int64_t i2 = 0; i2 < it.size[2]; ++i2) {
        S* rt = pt + i0 * it.stride_a[0] + i1 * it.stride_a[1] + i2 * it.stride_a[2];
        for (int64_t i3 = 0; i3 < it.size[3]; ++i3) rt[i3 * it.stride_a[3]] += pg[idx++];
      }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Gradient tape
// ---------------------------------------------------------------------------

template <typename S>
class Tape;

template <typename S>
struct Var {
  Tape<S>* tape = nullptr;
  int32_t id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
  const Tensor<S>& value() const;
  const Shape& shape() const { return value().shape(); }
};

// Ordered record of executed ops. backward() walks it in reverse and
// accumulates each node's gradient exactly once.
template <typename S>
class Tape {
 public:
  using BackFn = std::function<void(Tape&, int32_t)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<S> leaf(Tensor<S> value, bool needs_grad = true) {
    return record(std::move(value), {}, nullptr, needs_grad);
  }
  Var<S> constant(Tensor<S> value) { return leaf(std::move(value), false); }

  Var<S> record(Tensor<S> value, std::vector<int32_t> inputs, BackFn fn,
                bool force_needs_grad = false) {
    bool needs = force_needs_grad;
    for (int32_t i : inputs) needs = needs || nodes_[static_cast<size_t>(i)].needs_grad;
    nodes_.push_back(Node{std::move(value), Tensor<S>{}, std::move(inputs), std::move(fn), needs, false});
    return Var<S>{this, static_cast<int32_t>(nodes_.size() - 1)};
  }

  const Tensor<S>& value(int32_t id) const { return nodes_[static_cast<size_t>(id)].value; }

  bool needs_grad(int32_t id) const { return nodes_[static_cast<size_t>(id)].needs_grad; }

  // Gradient sink for an input of the node being differentiated; nullptr if
  // that input does not require a gradient.
  Tensor<S>* grad_accum(int32_t id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (!n.needs_grad) return nullptr;
    if (!n.grad_alloc) {
      n.grad = Tensor<S>(n.value.shape());
      n.grad_alloc = true;
    }
    return &n.grad;
  }

  const Tensor<S>& grad_of(int32_t id) const {
    const Node& n = nodes_[static_cast<size_t>(id)];
    if (!n.grad_alloc) throw std::runtime_error("node has no gradient");
    return n.grad;
  }

  bool has_grad(Var<S> v) const { return nodes_[static_cast<size_t>(v.id)].grad_alloc; }

  const Tensor<S>& grad(Var<S> v) const { return grad_of(v.id); }

  void backward(Var<S> loss) {
    if (loss.tape != this) throw std::invalid_argument("loss var belongs to another tape");
    if (nodes_[static_cast<size_t>(loss.id)].value.numel() != 1)
      throw std::invalid_argument("backward requires a scalar loss, got shape " +
                                  shape_str(nodes_[static_cast<size_t>(loss.id)].value.shape()));
    if (ran_backward_) throw std::runtime_error("backward called twice without re-running forward");
    ran_backward_ = true;

    Tensor<S>* seed = grad_accum(loss.id);
    if (seed == nullptr) return;  // loss does not depend on any watched leaf
    for (int64_t i = 0; i < seed->numel(); ++i) (*seed)[i] = S{1};

    for (int32_t id = loss.id; id >= 0; --id) {
      Node& n = nodes_[static_cast<size_t>(id)];
      if (n.grad_alloc && n.backward) n.backward(*this, id);
    }
  }

  void reset() {
    nodes_.clear();
    ran_backward_ = false;
  }

  size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<S> value;
    Tensor<S> grad;
    std::vector<int32_t> inputs;
    BackFn backward;
    bool needs_grad = false;
    bool grad_alloc = false;
  };

  // deque: growth must not invalidate value()/grad references held by op code
  std::deque<Node> nodes_;
  bool ran_backward_ = false;
};

template <typename S>
const Tensor<S>& Var<S>::value() const {
  return tape->value(id);
}

namespace detail {

template <typename S>
Tape<S>& same_tape(Var<S> a, Var<S> b) {
  if (a.tape == nullptr || a.tape != b.tape)
    throw std::invalid_argument("operands must live on the same tape");
  return *a.tape;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Differentiable operations
// ---------------------------------------------------------------------------

enum class EwKind { Add, Sub, Mul };

template <typename S>
Var<S> ewise(Var<S> a, Var<S> b, EwKind kind) {
  Tape<S>& t = detail::same_tape(a, b);
  const Tensor<S>& va = a.value();
  const Tensor<S>& vb = b.value();
  Tensor<S> out(detail::broadcast_shape(va.shape(), vb.shape()));
  switch (kind) {
    case EwKind::Add:
      detail::ewise_bcast(va, vb, out, [](S x, S y) { return x + y; });
      break;
    case EwKind::Sub:
      detail::ewise_bcast(va, vb, out, [](S x, S y) { return x - y; });
      break;
    case EwKind::Mul:
      detail::ewise_bcast(va, vb, out, [](S x, S y) { return x * y; });
      break;
  }
  int32_t aid = a.id, bid = b.id;
  return t.record(std::move(out), {a.id, b.id}, [kind, aid, bid](Tape<S>& tp, int32_t self) {
    const Tensor<S>& g = tp.grad_of(self);
    const Tensor<S>& va2 = tp.value(aid);
    const Tensor<S>& vb2 = tp.value(bid);
    if (Tensor<S>* ga = tp.grad_accum(aid)) {
      if (kind == EwKind::Mul) {
        Tensor<S> gb_term(g.shape());
        detail::ewise_bcast(g, vb2, gb_term, [](S x, S y) { return x * y; });
        detail::reduce_into(gb_term, *ga);
      } else {
        detail::reduce_into(g, *ga);
      }
    }
    if (Tensor<S>* gb = tp.grad_accum(bid)) {
      if (kind == EwKind::Mul) {
        Tensor<S> ga_term(g.shape());
        detail::ewise_bcast(g, va2, ga_term, [](S x, S y) { return x * y; });
        detail::reduce_into(ga_term, *gb);
      } else if (kind == EwKind::Sub) {
        Tensor<S> neg(g.shape());
        for (int64_t i = 0; i < g.numel(); ++i) neg[i] = -g[i];
        detail::reduce_into(neg, *gb);
      } else {
        detail::reduce_into(g, *gb);
      }
    }
  });
}

template <typename S>
Var<S> add(Var<S> a, Var<S> b) {
  return ewise(a, b, EwKind::Add);
}
template <typename S>
Var<S> sub(Var<S> a, Var<S> b) {
  return ewise(a, b, EwKind::Sub);
}
template <typename S>
Var<S> mul(Var<S> a, Var<S> b) {
  return ewise(a, b, EwKind::Mul);
}

template <typename S>
Var<S> operator+(Var<S> a, Var<S> b) {
  return add(a, b);
}
template <typename S>
Var<S> operator-(Var<S> a, Var<S> b) {
  return sub(a, b);
}
template <typename S>
Var<S> operator*(Var<S> a, Var<S> b) {
  return mul(a, b);
}

template <typename S>
Var<S> scale(Var<S> a, double c) {
  Tensor<S> out(a.value().shape());
  const Tensor<S>& va = a.value();
  for (int64_t i = 0; i < va.numel(); ++i) out[i] = static_cast<S>(va[i] * c);
  int32_t aid = a.id;
  return a.tape->record(std::move(out), {a.id}, [c, aid](Tape<S>& tp, int32_t self) {
    const Tensor<S>& g = tp.grad_of(self);
    if (Tensor<S>* ga = tp.grad_accum(aid))
      for (int64_t i = 0; i < g.numel(); ++i) (*ga)[i] += static_cast<S>(g[i] * c);
  });
}

template <typename S>
Var<S> operator*(double c, Var<S> a) {
  return scale(a, c);
}

// Broadcast copy to a larger shape; gradient sums back over broadcast axes.
template <typename S>
Var<S> expand(Var<S> a, Shape shape) {
  Tensor<S> out(shape);
  Tensor<S> zero = Tensor<S>::zeros(shape);
  detail::ewise_bcast(a.value(), zero, out, [](S x, S) { return x; });
  int32_t aid = a.id;
  return a.tape->record(std::move(out), {a.id}, [aid](Tape<S>& tp, int32_t self) {
    const Tensor<S>& g = tp.grad_of(self);
    if (Tensor<S>* ga = tp.grad_accum(aid)) detail::reduce_into(g, *ga);
  });
}

// matmul over the last two axes; rank 2 or 3, with batch broadcast when one
// side is rank 2.
template <typename S>
Var<S> matmul(Var<S> a, Var<S> b) {
  Tape<S>& t = detail::same_tape(a, b);
  const Tensor<S>& va = a.value();
  const Tensor<S>& vb = b.value();
  const int ra = va.rank(), rb = vb.rank();
  if (ra < 2 || ra > 3 || rb < 2 || rb > 3)
    throw std::invalid_argument("matmul expects rank 2 or 3, got " + shape_str(va.shape()) +
                                " x " + shape_str(vb.shape()));
  const int64_t n = va.shape()[ra - 2], m = va.shape()[ra - 1];
  const int64_t m2 = vb.shape()[rb - 2], p = vb.shape()[rb - 1];
  if (m != m2)
    throw std::invalid_argument("matmul inner dims disagree: " + shape_str(va.shape()) + " x " +
                                shape_str(vb.shape()));
  const int64_t batch_a = (ra == 3) ? va.shape()[0] : 1;
  const int64_t batch_b = (rb == 3) ? vb.shape()[0] : 1;
  if (ra == 3 && rb == 3 && batch_a != batch_b)
    throw std::invalid_argument("matmul batch dims disagree: " + shape_str(va.shape()) + " x " +
                                shape_str(vb.shape()));
  const int64_t batch = std::max(batch_a, batch_b);

  Shape out_shape = (ra == 3 || rb == 3) ? Shape{batch, n, p} : Shape{n, p};
  Tensor<S> out(out_shape);
  for (int64_t bidx = 0; bidx < batch; ++bidx) {
    const S* pa = va.data() + (ra == 3 ? bidx * n * m : 0);
    const S* pb = vb.data() + (rb == 3 ? bidx * m * p : 0);
    detail::mm_acc(pa, pb, out.data() + bidx * n * p, n, m, p);
  }

  int32_t aid = a.id, bid = b.id;
  return t.record(std::move(out), {a.id, b.id},
                  [aid, bid, n, m, p, batch, ra, rb](Tape<S>& tp, int32_t self) {
                    const Tensor<S>& g = tp.grad_of(self);
                    const Tensor<S>& va2 = tp.value(aid);
                    const Tensor<S>& vb2 = tp.value(bid);
                    if (Tensor<S>* ga = tp.grad_accum(aid)) {
                      // dA = dC x B^T
                      std::vector<S> bt(static_cast<size_t>(m * p));
                      for (int64_t bidx = 0; bidx < batch; ++bidx) {
                        const S* pb = vb2.data() + (rb == 3 ? bidx * m * p : 0);
                        detail::transpose2d(pb, bt.data(), m, p);
                        S* sink = ga->data() + (ra == 3 ? bidx * n * m : 0);
                        detail::mm_acc(g.data() + bidx * n * p, bt.data(), sink, n, p, m);
                      }
                    }
                    if (Tensor<S>* gb = tp.grad_accum(bid)) {
                      // dB = A^T x dC
                      std::vector<S> at(static_cast<size_t>(n * m));
                      for (int64_t bidx = 0; bidx < batch; ++bidx) {
                        const S* pa = va2.data() + (ra == 3 ? bidx * n * m : 0);
                        detail::transpose2d(pa, at.data(), n, m);
                        S* sink = gb->data() + (rb == 3 ? bidx * m * p : 0);
                        detail::mm_acc(at.data(), g.data() + bidx * n * p, sink, m, n, p);
                      }
                    }
                  });
}

// Swap the last two axes.
template <typename S>
Var<S> transpose(Var<S> a) {
  const Tensor<S>& va = a.value();
  if (va.rank() < 2) throw std::invalid_argument("transpose expects rank >= 2");
  Shape shape = va.shape();
  std::swap(shape[shape.size() - 1], shape[shape.size() - 2]);
  const int64_t n = va.shape()[va.rank() - 2], m = va.shape()[va.rank() - 1];
  const int64_t batch = va.numel() / (n * m);
  Tensor<S> out(shape);
  for (int64_t b = 0; b < batch; ++b)
    detail::transpose2d(va.data() + b * n * m, out.data() + b * n * m, n, m);
  int32_t aid = a.id;
  return a.tape->record(std::move(out), {a.id}, [aid, n, m, batch](Tape<S>& tp, int32_t self) {
    const Tensor<S>& g = tp.grad_of(self);
    if (Tensor<S>* ga = tp.grad_accum(aid)) {
      std::vector<S> tmp(static_cast<size_t>(n * m));
      for (int64_t b = 0; b < batch; ++b) {
        detail::transpose2d(g.data() + b * n * m, tmp.data(), m, n);
        S* sink = ga->data() + b * n * m;
        for (int64_t i = 0; i < n * m; ++i) sink[i] += tmp[static_cast<size_t>(i)];
      }
    }
  });
}

template <typename S>
Var<S> reshape(Var<S> a, Shape shape) {
  const Tensor<S>& va = a.value();
  if (numel_of(shape) != va.numel())
    throw std::invalid_argument("reshape " + shape_str(va.shape()) + " -> " + shape_str(shape) +
                                " changes element count");
  Tensor<S> out(std::move(shape), std::vector<S>(va.data(), va.data() + va.numel()));
  int32_t aid = a.id;
  return a.tape->record(std::move(out), {a.id}, [aid](Tape<S>& tp, int32_t self) {
    const Tensor<S>& g = tp.grad_of(self);
    if (Tensor<S>* ga = tp.grad_accum(aid))
      for (int64_t i = 0; i < g.numel(); ++i) (*ga)[i] += g[i];
  });
}

template <typename S>
Var<S> concat(const std::vector<Var<S>>& parts, int axis) {
  if (parts.empty()) throw std::invalid_argument("concat of zero tensors");
  Tape<S>& t = *parts[0].tape;
  const int rank = parts[0].value().rank();
  if (axis < 0 || axis >= rank) throw std::invalid_argument("concat axis out of range");

  Shape shape = parts[0].value().shape();
  int64_t axis_total = 0;
  for (const auto& p : parts) {
    const Shape& s = p.value().shape();
    if (static_cast<int>(s.size()) != rank)
      throw std::invalid_argument("concat rank mismatch");
    for (int d = 0; d < rank; ++d)
      if (d != axis && s[d] != shape[d])
        throw std::invalid_argument("concat shape mismatch on non-concat axis");
    axis_total += s[axis];
  }
  shape[axis] = axis_total;

  int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= shape[d];
  for (int d = axis + 1; d < rank; ++d) inner *= shape[d];

  Tensor<S> out(shape);
  std::vector<int32_t> ids;
  std::vector<int64_t> axis_sizes;
  for (const auto& p : parts) {
    ids.push_back(p.id);
    axis_sizes.push_back(p.value().shape()[axis]);
  }
  int64_t offset = 0;
  for (size_t k = 0; k < parts.size(); ++k) {
    const Tensor<S>& v = parts[k].value();
    const int64_t ax = axis_sizes[k];
    for (int64_t o = 0; o < outer; ++o) {
      const S* src = v.data() + o * ax * inner;
      S* dst = out.data() + (o * axis_total + offset) * inner;
      std::copy(src, src + ax * inner, dst);
    }
    offset += ax;
  }

  return t.record(std::move(out), ids,
                  [ids, axis_sizes, outer, inner, axis_total](Tape<S>& tp, int32_t self) {
                    const Tensor<S>& g = tp.grad_of(self);
                    int64_t off = 0;
                    for (size_t k = 0; k < ids.size(); ++k) {
                      const int64_t ax = axis_sizes[k];
                      if (Tensor<S>* gk = tp.grad_accum(ids[k])) {
                        for (int64_t o = 0; o < outer; ++o) {
                          const S* src = g.data() + (o * axis_total + off) * inner;
                          S* dst = gk->data() + o * ax * inner;
                          for (int64_t i = 0; i < ax * inner; ++i) dst[i] += src[i];
                        }
                      }
                      off += ax;
                    }
                  });
}

template <typename S>
std::vector<Var<S>> split(Var<S> a, const std::vector<int64_t>& sizes, int axis) {
  const Tensor<S>& va = a.value();
  const int rank = va.rank();
  if (axis < 0 || axis >= rank) throw std::invalid_argument("split axis out of range");
  int64_t total = 0;
  for (int64_t s : sizes) {
    if (s <= 0) throw std::invalid_argument("split sizes must be positive");
    total += s;
  }
  if (total != va.shape()[axis])
    throw std::invalid_argument("split sizes sum " + std::to_string(total) + " != axis size " +
                                std::to_string(va.shape()[axis]));

  int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= va.shape()[d];
  for (int d = axis + 1; d < rank; ++d) inner *= va.shape()[d];
  const int64_t axis_total = va.shape()[axis];

  std::vector<Var<S>> out;
  int64_t offset = 0;
  int32_t aid = a.id;
  for (int64_t s : sizes) {
    Shape shape = va.shape();
    shape[axis] = s;
    Tensor<S> piece(shape);
    for (int64_t o = 0; o < outer; ++o) {
      const S* src = va.data() + (o * axis_total + offset) * inner;
      std::copy(src, src + s * inner, piece.data() + o * s * inner);
    }
    const int64_t off = offset;
    out.push_back(a.tape->record(
        std::move(piece), {a.id}, [aid, off, s, outer, inner, axis_total](Tape<S>& tp, int32_t self) {
          const Tensor<S>& g = tp.grad_of(self);
          if (Tensor<S>* ga = tp.grad_accum(aid)) {
            for (int64_t o = 0; o < outer; ++o) {
              const S* src = g.data() + o * s * inner;
              S* dst = ga->data() + (o * axis_total + off) * inner;
              for (int64_t i = 0; i < s * inner; ++i) dst[i] += src[i];
            }
          }
        }));
    offset += s;
  }
  return out;
}

// out[i] = a[indices[i]] over the first axis of a rank-2 input.
template <typename S>
Var<S> gather_rows(Var<S> a, std::vector<int64_t> indices) {
  const Tensor<S>& va = a.value();
  if (va.rank() != 2) throw std::invalid_argument("gather_rows expects a rank-2 input");
  const int64_t rows = va.shape()[0], cols = va.shape()[1];
  for (int64_t i : indices)
    if (i < 0 || i >= rows)
      throw std::out_of_range("gather_rows index " + std::to_string(i) + " out of range [0," +
                              std::to_string(rows) + ")");
  Tensor<S> out(Shape{static_cast<int64_t>(indices.size()), cols});
  for (size_t i = 0; i < indices.size(); ++i)
    std::copy(va.data() + indices[i] * cols, va.data() + (indices[i] + 1) * cols,
              out.data() + static_cast<int64_t>(i) * cols);
  int32_t aid = a.id;
  return a.tape->record(std::move(out), {a.id},
                        [aid, indices = std::move(indices), cols](Tape<S>& tp, int32_t self) {
                          const Tensor<S>& g = tp.grad_of(self);
                          if (Tensor<S>* ga = tp.grad_accum(aid)) {
                            for (size_t i = 0; i < indices.size(); ++i) {
                              const S* src = g.data() + static_cast<int64_t>(i) * cols;
                              S* dst = ga->data() + indices[i] * cols;
                              for (int64_t j = 0; j < cols; ++j) dst[j] += src[j];
                            }
                          }
                        });
}

// Softmax over the last axis.
template <typename S>
Var<S> softmax(Var<S> a) {
  const Tensor<S>& va = a.value();
  const int64_t cols = va.last_dim();
  if (va.rank() == 0 || cols == 0) throw std::invalid_argument("softmax over an empty axis");
  const int64_t rows = va.numel() / cols;
  Tensor<S> out(va.shape());
  for (int64_t r = 0; r < rows; ++r) {
    const S* x = va.data() + r * cols;
    S* y = out.data() + r * cols;
    S mx = x[0];
    for (int64_t j = 1; j < cols; ++j) mx = std::max(mx, x[j]);
    S sum{0};
    for (int64_t j = 0; j < cols; ++j) {
      y[j] = std::exp(x[j] - mx);
      sum += y[j];
    }
    for (int64_t j = 0; j < cols; ++j) y[j] /= sum;
  }
  int32_t aid = a.id;
  return a.tape->record(std::move(out), {a.id}, [aid, rows, cols](Tape<S>& tp, int32_t self) {
    const Tensor<S>& g = tp.grad_of(self);
    const Tensor<S>& y = tp.value(self);
    if (Tensor<S>* ga = tp.grad_accum(aid)) {
      for (int64_t r = 0; r < rows; ++r) {
        const S* gy = g.data() + r * cols;
        const S* yy = y.data() + r * cols;
        S* gx = ga->data() + r * cols;
        S dot{0};
        for (int64_t j = 0; j < cols; ++j) dot += gy[j] * yy[j];
        for (int64_t j = 0; j < cols; ++j) gx[j] += yy[j] * (gy[j] - dot);
      }
    }
  });
}

// Layer normalization over the last axis with learnable gain/bias.
template <typename S>
Var<S> layer_norm(Var<S> a, Var<S> gain, Var<S> bias, double eps = 1e-5) {
  Tape<S>& t = detail::same_tape(a, gain);
  const Tensor<S>& va = a.value();
  const int64_t cols = va.last_dim();
  if (va.rank() == 0 || cols == 0) throw std::invalid_argument("layer_norm over an empty axis");
  if (gain.value().numel() != cols || bias.value().numel() != cols)
    throw std::invalid_argument("layer_norm gain/bias must have the normalized-axis length");
  const int64_t rows = va.numel() / cols;

  Tensor<S> out(va.shape());
  std::vector<S> rstd(static_cast<size_t>(rows));
  std::vector<S> xhat(static_cast<size_t>(va.numel()));
  const S* g = gain.value().data();
  const S* b = bias.value().data();
  for (int64_t r = 0; r < rows; ++r) {
    const S* x = va.data() + r * cols;
    S mean{0};
    for (int64_t j = 0; j < cols; ++j) mean += x[j];
    mean /= static_cast<S>(cols);
    S var{0};
    for (int64_t j = 0; j < cols; ++j) var += (x[j] - mean) * (x[j] - mean);
    var /= static_cast<S>(cols);
    const S rs = S{1} / std::sqrt(var + static_cast<S>(eps));
    rstd[static_cast<size_t>(r)] = rs;
    S* h = xhat.data() + r * cols;
    S* y = out.data() + r * cols;
    for (int64_t j = 0; j < cols; ++j) {
      h[j] = (x[j] - mean) * rs;
      y[j] = h[j] * g[j] + b[j];
    }
  }

  int32_t aid = a.id, gid = gain.id, bid = bias.id;
  return t.record(
      std::move(out), {a.id, gain.id, bias.id},
      [aid, gid, bid, rows, cols, rstd = std::move(rstd), xhat = std::move(xhat)](Tape<S>& tp,
                                                                                  int32_t self) {
        const Tensor<S>& gy = tp.grad_of(self);
        const S* gvals = tp.value(gid).data();
        Tensor<S>* ga = tp.grad_accum(aid);
        Tensor<S>* gg = tp.grad_accum(gid);
        Tensor<S>* gb = tp.grad_accum(bid);
        for (int64_t r = 0; r < rows; ++r) {
          const S* gyr = gy.data() + r * cols;
          const S* h = xhat.data() + r * cols;
          const S rs = rstd[static_cast<size_t>(r)];
          if (gg != nullptr)
            for (int64_t j = 0; j < cols; ++j) (*gg)[j] += gyr[j] * h[j];
          if (gb != nullptr)
            for (int64_t j = 0; j < cols; ++j) (*gb)[j] += gyr[j];
          if (ga != nullptr) {
            // dx = rstd * (dxhat - mean(dxhat) - xhat * mean(dxhat*xhat))
            S m1{0}, m2{0};
            for (int64_t j = 0; j < cols; ++j) {
              const S dh = gyr[j] * gvals[j];
              m1 += dh;
              m2 += dh * h[j];
            }
            m1 /= static_cast<S>(cols);
            m2 /= static_cast<S>(cols);
            S* gx = ga->data() + r * cols;
            for (int64_t j = 0; j < cols; ++j) {
              const S dh = gyr[j] * gvals[j];
              gx[j] += rs * (dh - m1 - h[j] * m2);
            }
          }
        }
      });
}

// Exact (erf-based) GELU.
template <typename S>
Var<S> gelu(Var<S> a) {
  const Tensor<S>& va = a.value();
  Tensor<S> out(va.shape());
  constexpr double inv_sqrt2 = 0.7071067811865475244;
  for (int64_t i = 0; i < va.numel(); ++i) {
    const double x = static_cast<double>(va[i]);
    out[i] = static_cast<S>(0.5 * x * (1.0 + std::erf(x * inv_sqrt2)));
  }
  int32_t aid = a.id;
  return a.tape->record(std::move(out), {a.id}, [aid](Tape<S>& tp, int32_t self) {
    const Tensor<S>& g = tp.grad_of(self);
    const Tensor<S>& x = tp.value(aid);
    if (Tensor<S>* ga = tp.grad_accum(aid)) {
      constexpr double inv_sqrt2 = 0.7071067811865475244;
      const double inv_sqrt2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
      for (int64_t i = 0; i < g.numel(); ++i) {
        const double xv = static_cast<double>(x[i]);
        const double cdf = 0.5 * (1.0 + std::erf(xv * inv_sqrt2));
        const double pdf = std::exp(-0.5 * xv * xv) * inv_sqrt2pi;
        (*ga)[i] += static_cast<S>(static_cast<double>(g[i]) * (cdf + xv * pdf));
      }
    }
  });
}

// Mean squared error over the selected rows of a rank-2 pair (all columns);
// rows outside the set contribute nothing, in value or in gradient.
template <typename S>
Var<S> masked_mse(Var<S> pred, Var<S> target, std::vector<int64_t> rows) {
  Tape<S>& t = detail::same_tape(pred, target);
  const Tensor<S>& vp = pred.value();
  const Tensor<S>& vt = target.value();
  if (vp.rank() != 2 || vp.shape() != vt.shape())
    throw std::invalid_argument("masked_mse expects matching rank-2 tensors, got " +
                                shape_str(vp.shape()) + " vs " + shape_str(vt.shape()));
  if (rows.empty()) throw std::invalid_argument("masked_mse over an empty row set");
  const int64_t nrows = vp.shape()[0], cols = vp.shape()[1];
  for (int64_t r : rows)
    if (r < 0 || r >= nrows) throw std::out_of_range("masked_mse row index out of range");

  const double denom = static_cast<double>(rows.size()) * static_cast<double>(cols);
  double acc = 0.0;
  for (int64_t r : rows) {
    const S* p = vp.data() + r * cols;
    const S* q = vt.data() + r * cols;
    for (int64_t j = 0; j < cols; ++j) {
      const double d = static_cast<double>(p[j]) - static_cast<double>(q[j]);
      acc += d * d;
    }
  }
  Tensor<S> out = Tensor<S>::scalar(static_cast<S>(acc / denom));

  int32_t pid = pred.id, tid = target.id;
  return t.record(std::move(out), {pred.id, target.id},
                  [pid, tid, rows = std::move(rows), cols, denom](Tape<S>& tp, int32_t self) {
                    const S gout = tp.grad_of(self)[0];
                    const Tensor<S>& p = tp.value(pid);
                    const Tensor<S>& q = tp.value(tid);
                    const S c = static_cast<S>(2.0 / denom) * gout;
                    Tensor<S>* gp = tp.grad_accum(pid);
                    Tensor<S>* gt = tp.grad_accum(tid);
                    for (int64_t r : rows) {
                      const S* pr = p.data() + r * cols;
                      const S* qr = q.data() + r * cols;
                      for (int64_t j = 0; j < cols; ++j) {
                        const S d = c * (pr[j] - qr[j]);
                        if (gp != nullptr) (*gp)[r * cols + j] += d;
                        if (gt != nullptr) (*gt)[r * cols + j] -= d;
                      }
                    }
                  });
}

template <typename S>
Var<S> mse(Var<S> pred, Var<S> target) {
  std::vector<int64_t> rows(static_cast<size_t>(pred.value().shape()[0]));
  for (size_t i = 0; i < rows.size(); ++i) rows[i] = static_cast<int64_t>(i);
  return masked_mse(pred, target, std::move(rows));
}

// ---------------------------------------------------------------------------
// SGD with classical (heavy-ball) momentum
// ---------------------------------------------------------------------------

struct SgdConfig {
  double learning_rate = 1e-4;
  double momentum = 0.9;
};

// v <- mu*v + g; p <- p - lr*v. A non-finite gradient skips the whole step
// and is reported through skipped_steps()/last_report().
template <typename S>
class SgdState {
 public:
  explicit SgdState(SgdConfig config) : config_(config) {}

  const SgdConfig& config() const { return config_; }
  int64_t skipped_steps() const { return skipped_; }
  const std::string& last_report() const { return report_; }

  bool step(std::span<Tensor<S>* const> params, std::span<const Tensor<S>> grads) {
    if (params.size() != grads.size())
      throw std::invalid_argument("sgd_step: parameter/gradient count mismatch");
    if (velocity_.empty()) {
      velocity_.reserve(params.size());
      for (const Tensor<S>* p : params) velocity_.push_back(Tensor<S>(p->shape()));
    }
    if (velocity_.size() != params.size())
      throw std::invalid_argument("sgd_step: parameter count changed across steps");
    for (size_t i = 0; i < params.size(); ++i)
      if (params[i]->shape() != grads[i].shape() || params[i]->shape() != velocity_[i].shape())
        throw std::invalid_argument("sgd_step: shape mismatch for parameter " + std::to_string(i));

    for (const Tensor<S>& g : grads)
      if (!g.all_finite()) {
        ++skipped_;
        report_ = "non-finite gradient; step " + std::to_string(skipped_) + " skipped";
        return false;
      }

    const S mu = static_cast<S>(config_.momentum);
    const S lr = static_cast<S>(config_.learning_rate);
    for (size_t i = 0; i < params.size(); ++i) {
      Tensor<S>& v = velocity_[i];
      Tensor<S>& p = *params[i];
      const Tensor<S>& g = grads[i];
      for (int64_t j = 0; j < p.numel(); ++j) {
        v[j] = mu * v[j] + g[j];
        p[j] -= lr * v[j];
      }
    }
    return true;
  }

 private:
  SgdConfig config_;
  std::vector<Tensor<S>> velocity_;
  int64_t skipped_ = 0;
  std::string report_;
};

template <typename S>
bool sgd_step(std::span<Tensor<S>* const> params, std::span<const Tensor<S>> grads,
              SgdState<S>& state) {
  return state.step(params, grads);
}

// ---------------------------------------------------------------------------
// Finite-difference gradient checking (64-bit, central differences)
// ---------------------------------------------------------------------------

struct GradCheckResult {
  double max_rel_err = 0.0;
  int64_t elements = 0;
};

// f builds a scalar loss from the leaf vars it is handed. Analytic gradients
// are compared elementwise against (f(x+h)-f(x-h))/2h with relative error
// |a-n| / max(1, |a|, |n|).
inline GradCheckResult grad_check(
    const std::function<Var<double>(Tape<double>&, const std::vector<Var<double>>&)>& f,
    std::vector<Tensor<double>> inputs, double h = 1e-5) {
  auto eval = [&](const std::vector<Tensor<double>>& vals) {
    Tape<double> tape;
    std::vector<Var<double>> leaves;
    leaves.reserve(vals.size());
    for (const auto& v : vals) leaves.push_back(tape.leaf(v));
    Var<double> loss = f(tape, leaves);
    if (loss.value().numel() != 1)
      throw std::invalid_argument("grad_check requires a scalar-valued function");
    return loss.value()[0];
  };

  // analytic pass
  Tape<double> tape;
  std::vector<Var<double>> leaves;
  leaves.reserve(inputs.size());
  for (const auto& v : inputs) leaves.push_back(tape.leaf(v));
  Var<double> loss = f(tape, leaves);
  if (loss.value().numel() != 1)
    throw std::invalid_argument("grad_check requires a scalar-valued function");
  tape.backward(loss);

  GradCheckResult result;
  for (size_t k = 0; k < inputs.size(); ++k) {
    const bool have = tape.has_grad(leaves[k]);
    for (int64_t i = 0; i < inputs[k].numel(); ++i) {
      const double analytic = have ? tape.grad(leaves[k])[i] : 0.0;
      const double saved = inputs[k][i];
      inputs[k][i] = saved + h;
      const double fp = eval(inputs);
      inputs[k][i] = saved - h;
      const double fm = eval(inputs);
      inputs[k][i] = saved;
      const double numeric = (fp - fm) / (2.0 * h);
      const double rel = std::abs(analytic - numeric) /
                         std::max({1.0, std::abs(analytic), std::abs(numeric)});
      result.max_rel_err = std::max(result.max_rel_err, rel);
      ++result.elements;
    }
  }
  return result;
}

}  // namespace smae::tensor
