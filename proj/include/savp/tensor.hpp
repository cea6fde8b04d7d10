#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <initializer_list>
#include <memory>
#include <vector>

#include "savp/common.hpp"

namespace savp {

template <class T>
class Tape;

namespace detail {

// Tape binding of a tensor. Copies of a tensor share this state, so a
// parameter registered as a leaf keeps one gradient slot per tape.
struct GradState {
  bool requires_grad = false;
  uint64_t tape_id = 0;  // 0 = unbound
  int64_t node = -1;
};

}  // namespace detail

// Dense row-major N-d array. Value type with shared storage: copies alias
// the same buffer. Mutation is reserved for optimizer updates; everything
// else treats tensors as immutable after construction.
template <class T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0))
      : shape_(std::move(shape)),
        vals_(std::make_shared<std::vector<T>>(check_numel(shape_), fill)) {}

  static Tensor from_values(Shape shape, std::vector<T> values) {
    Tensor t;
    t.shape_ = std::move(shape);
    SAVP_CHECK(static_cast<int64_t>(values.size()) == numel(t.shape_),
               "from_values: shape ", detail::shape_str(t.shape_), " wants ",
               numel(t.shape_), " values, got ", values.size());
    t.vals_ = std::make_shared<std::vector<T>>(std::move(values));
    return t;
  }

  static Tensor scalar(T v) { return from_values({1}, {v}); }

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int64_t dim(int i) const { return shape_.at(i); }
  int64_t size() const { return vals_ ? static_cast<int64_t>(vals_->size()) : 0; }
  bool defined() const { return static_cast<bool>(vals_); }

  const T* data() const { return vals_->data(); }
  T* data() { return vals_->data(); }
  const std::vector<T>& values() const { return *vals_; }

  T value() const {
    SAVP_CHECK(size() == 1, "value(): tensor has ", size(), " elements, expected 1");
    return (*vals_)[0];
  }

  T at(std::initializer_list<int64_t> idx) const {
    SAVP_CHECK(static_cast<int>(idx.size()) == rank(), "at(): rank mismatch");
    int64_t flat = 0;
    int i = 0;
    for (int64_t ix : idx) {
      flat = flat * shape_[i] + ix;
      ++i;
    }
    return (*vals_)[flat];
  }

  Tensor& set_requires_grad(bool v = true) {
    if (!gs_) gs_ = std::make_shared<detail::GradState>();
    gs_->requires_grad = v;
    return *this;
  }
  bool requires_grad() const { return gs_ && gs_->requires_grad; }

  // Same storage, no gradient participation.
  Tensor detach() const {
    Tensor t;
    t.shape_ = shape_;
    t.vals_ = vals_;
    return t;
  }

  // Deep copy of the values; no gradient participation.
  Tensor clone() const {
    Tensor t;
    t.shape_ = shape_;
    t.vals_ = std::make_shared<std::vector<T>>(*vals_);
    return t;
  }

  bool same_values(const Tensor& o) const {
    return shape_ == o.shape_ && *vals_ == *o.vals_;
  }

  // -- internals shared with Tape / op recording --
  std::shared_ptr<detail::GradState> grad_state() const { return gs_; }
  std::shared_ptr<detail::GradState>& mutable_grad_state() {
    if (!gs_) gs_ = std::make_shared<detail::GradState>();
    return gs_;
  }

  // Reinterpret the same storage under a new shape (op layer adds the
  // backward node when needed).
  Tensor reshaped_view(Shape new_shape) const {
    SAVP_CHECK(numel(new_shape) == size(), "reshape: cannot view ",
               detail::shape_str(shape_), " as ", detail::shape_str(new_shape));
    Tensor t;
    t.shape_ = std::move(new_shape);
    t.vals_ = vals_;
    return t;
  }

 private:
  static int64_t check_numel(const Shape& s) {
    for (int64_t e : s) SAVP_CHECK(e > 0, "non-positive extent in shape ", detail::shape_str(s));
    return numel(s);
  }

  Shape shape_;
  std::shared_ptr<std::vector<T>> vals_;
  std::shared_ptr<detail::GradState> gs_;
};

// Reverse-mode gradient tape. Records one node per operation; node ids are
// a topological order, so backward() is a single reverse sweep that visits
// each node exactly once. Confined to one logical thread.
template <class T>
class Tape {
 public:
  using BackwardFn = std::function<void(const std::vector<T>& out_grad, Tape<T>&)>;

  Tape() : id_(next_id()) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  uint64_t id() const { return id_; }

  int64_t add_leaf(int64_t nvals) {
    nodes_.push_back(Node{nullptr, nvals});
    grads_.emplace_back();
    return static_cast<int64_t>(nodes_.size()) - 1;
  }

  int64_t add_node(int64_t nvals, BackwardFn fn) {
    nodes_.push_back(Node{std::move(fn), nvals});
    grads_.emplace_back();
    return static_cast<int64_t>(nodes_.size()) - 1;
  }

  // Lazily-allocated gradient buffer for a node (zeros on first touch).
  std::vector<T>& grad_buffer(int64_t node) {
    auto& g = grads_[node];
    if (!g) g = std::make_unique<std::vector<T>>(nodes_[node].nvals, T(0));
    return *g;
  }

  void backward(const Tensor<T>& loss) {
    SAVP_CHECK(loss.size() == 1, "backward: loss must be scalar, got ",
               detail::shape_str(loss.shape()));
    auto gs = loss.grad_state();
    SAVP_CHECK(gs && gs->tape_id == id_ && gs->node >= 0,
               "backward: loss is not recorded on the active tape");
    grad_buffer(gs->node)[0] = T(1);
    for (int64_t i = gs->node; i >= 0; --i) {
      if (!grads_[i]) continue;
      if (nodes_[i].backward) nodes_[i].backward(*grads_[i], *this);
    }
  }

  // Gradient of a tensor w.r.t. the last backward() call. A leaf that never
  // reached the loss gets zeros of its own shape.
  Tensor<T> grad(const Tensor<T>& t) const {
    auto gs = t.grad_state();
    SAVP_CHECK(gs && (gs->requires_grad || (gs->tape_id == id_ && gs->node >= 0)),
               "grad: tensor does not participate in differentiation");
    if (gs->tape_id != id_ || gs->node < 0 || !grads_[gs->node]) {
      return Tensor<T>(t.shape());
    }
    return Tensor<T>::from_values(t.shape(), *grads_[gs->node]);
  }

  size_t num_nodes() const { return nodes_.size(); }

 private:
  struct Node {
    BackwardFn backward;
    int64_t nvals;
  };

  static uint64_t next_id() {
    static uint64_t counter = 0;
    return ++counter;
  }

  uint64_t id_;
  std::vector<Node> nodes_;
  std::vector<std::unique_ptr<std::vector<T>>> grads_;
};

namespace detail {
template <class T>
inline Tape<T>*& active_tape_slot() {
  thread_local Tape<T>* slot = nullptr;
  return slot;
}
}  // namespace detail

template <class T>
Tape<T>* active_tape() {
  return detail::active_tape_slot<T>();
}

// RAII: makes a tape the active recording target for the current thread.
template <class T>
class TapeScope {
 public:
  explicit TapeScope(Tape<T>& tape) : prev_(detail::active_tape_slot<T>()) {
    detail::active_tape_slot<T>() = &tape;
  }
  ~TapeScope() { detail::active_tape_slot<T>() = prev_; }
  TapeScope(const TapeScope&) = delete;

 private:
  Tape<T>* prev_;
};

// RAII: suspends recording (ops behave as plain arithmetic) until destroyed.
template <class T>
class TapePause {
 public:
  TapePause() : prev_(detail::active_tape_slot<T>()) {
    detail::active_tape_slot<T>() = nullptr;
  }
  ~TapePause() { detail::active_tape_slot<T>() = prev_; }
  TapePause(const TapePause&) = delete;

 private:
  Tape<T>* prev_;
};

namespace detail {

// Per-op recording context. Resolves which inputs participate in
// differentiation on the active tape, lazily registering parameter leaves.
// parents[i] is the tape node of input i, or -1 when it is a constant;
// backward closures capture these resolved ids, never live grad state.
template <class T>
struct Recorder {
  Tape<T>* tape = nullptr;
  std::vector<int64_t> parents;

  bool active() const { return tape != nullptr; }

  int64_t parent(size_t i) const { return parents[i]; }

  void bind_output(Tensor<T>& out, typename Tape<T>::BackwardFn fn) const {
    int64_t node = tape->add_node(out.size(), std::move(fn));
    auto& gs = out.mutable_grad_state();
    gs->tape_id = tape->id();
    gs->node = node;
  }
};

template <class T>
Recorder<T> begin_record(std::vector<const Tensor<T>*> inputs) {
  Recorder<T> rec;
  Tape<T>* tape = active_tape<T>();
  if (!tape) return rec;
  bool any = false;
  std::vector<int64_t> parents;
  parents.reserve(inputs.size());
  for (const Tensor<T>* in : inputs) {
    auto gs = in->grad_state();
    bool bound = gs && gs->tape_id == tape->id() && gs->node >= 0;
    if (gs && gs->requires_grad && !bound) {
      gs->tape_id = tape->id();
      gs->node = tape->add_leaf(in->size());
      bound = true;
    }
    parents.push_back(bound ? gs->node : -1);
    any = any || bound;
  }
  if (!any) return rec;
  rec.tape = tape;
  rec.parents = std::move(parents);
  return rec;
}

template <class T>
Recorder<T> begin_record(std::initializer_list<const Tensor<T>*> inputs) {
  return begin_record(std::vector<const Tensor<T>*>(inputs));
}

// ---- broadcasting ----

inline Shape broadcast_shape(const Shape& a, const Shape& b) {
  size_t rank = std::max(a.size(), b.size());
  Shape out(rank);
  for (size_t i = 0; i < rank; ++i) {
    int64_t ea = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    int64_t eb = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    SAVP_CHECK(ea == eb || ea == 1 || eb == 1, "shapes not broadcast-compatible: ",
               shape_str(a), " vs ", shape_str(b));
    out[i] = std::max(ea, eb);
  }
  return out;
}

// Row-major strides, 0 on broadcast axes, aligned to `out` rank.
inline std::vector<int64_t> broadcast_strides(const Shape& in, const Shape& out) {
  std::vector<int64_t> strides(out.size(), 0);
  int64_t s = 1;
  for (int i = static_cast<int>(in.size()) - 1; i >= 0; --i) {
    size_t oi = out.size() - in.size() + i;
    strides[oi] = (in[i] == 1 && out[oi] != 1) ? 0 : s;
    s *= in[i];
  }
  return strides;
}

// Applies fn(out_flat, a_flat, b_flat) over the broadcasted iteration space.
template <class Fn>
void broadcast_walk(const Shape& out, const std::vector<int64_t>& sa,
                    const std::vector<int64_t>& sb, Fn&& fn) {
  int64_t n = numel(out);
  int rank = static_cast<int>(out.size());
  std::vector<int64_t> idx(rank, 0);
  int64_t ia = 0, ib = 0;
  for (int64_t o = 0; o < n; ++o) {
    fn(o, ia, ib);
    for (int d = rank - 1; d >= 0; --d) {
      ia += sa[d];
      ib += sb[d];
      if (++idx[d] < out[d]) break;
      ia -= sa[d] * out[d];
      ib -= sb[d] * out[d];
      idx[d] = 0;
    }
  }
}

// Decomposes a broadcast iteration into an outer odometer and a flat inner
// block over trailing dims, within which each operand either advances
// contiguously or stays constant. Turns per-element index arithmetic into
// vectorizable inner loops for the common bias/spatial-broadcast patterns.
struct BlockPlan {
  int64_t inner = 1;      // elements per flat block
  bool a_advances = true; // operand walks the block (else constant within it)
  bool b_advances = true;
  Shape outer;            // leading dims iterated by odometer
};

inline BlockPlan make_block_plan(const Shape& out, const std::vector<int64_t>& sa,
                                 const std::vector<int64_t>& sb) {
  int rank = static_cast<int>(out.size());
  auto trailing = [&](const std::vector<int64_t>& s, bool want_zero) {
    int cnt = 0;
    int64_t contig = 1;
    for (int d = rank - 1; d >= 0; --d) {
      if (out[d] == 1) {
        ++cnt;
        continue;
      }
      bool ok = want_zero ? s[d] == 0 : s[d] == contig;
      if (!ok) break;
      ++cnt;
      contig *= out[d];
    }
    return cnt;
  };
  int ca = trailing(sa, false), cb = trailing(sb, false);
  int za = trailing(sa, true), zb = trailing(sb, true);
  int both = std::min(ca, cb), a_only = std::min(ca, zb), b_only = std::min(za, cb);
  BlockPlan plan;
  int block;
  if (both >= a_only && both >= b_only) {
    block = both;
  } else if (a_only >= b_only) {
    block = a_only;
    plan.b_advances = false;
  } else {
    block = b_only;
    plan.a_advances = false;
  }
  for (int d = rank - block; d < rank; ++d) plan.inner *= out[d];
  plan.outer.assign(out.begin(), out.end() - block);
  return plan;
}

// Iterates block start offsets for the outer dims of a BlockPlan.
template <class Fn>
void outer_walk(const Shape& outer, int64_t inner, const std::vector<int64_t>& sa,
                const std::vector<int64_t>& sb, Fn&& fn) {
  int rank = static_cast<int>(outer.size());
  int64_t blocks = numel(outer);
  std::vector<int64_t> idx(rank, 0);
  int64_t ia = 0, ib = 0;
  for (int64_t blk = 0; blk < blocks; ++blk) {
    fn(blk * inner, ia, ib);
    for (int d = rank - 1; d >= 0; --d) {
      ia += sa[d];
      ib += sb[d];
      if (++idx[d] < outer[d]) break;
      ia -= sa[d] * outer[d];
      ib -= sb[d] * outer[d];
      idx[d] = 0;
    }
  }
}

// Sums a gradient over the broadcasted output shape back onto an input
// shape, accumulating into acc.
template <class T>
void reduce_grad_into(const std::vector<T>& gout, const Shape& out_shape,
                      const Shape& in_shape, std::vector<T>& acc) {
  if (in_shape == out_shape) {
    for (size_t i = 0; i < gout.size(); ++i) acc[i] += gout[i];
    return;
  }
  auto strides = broadcast_strides(in_shape, out_shape);
  std::vector<int64_t> zero(out_shape.size(), 0);
  auto plan = make_block_plan(out_shape, strides, zero);
  std::vector<int64_t> sa_outer(strides.begin(), strides.begin() + plan.outer.size());
  std::vector<int64_t> zero_outer(plan.outer.size(), 0);
  outer_walk(plan.outer, plan.inner, sa_outer, zero_outer,
             [&](int64_t o0, int64_t ia0, int64_t) {
               if (plan.a_advances) {
                 for (int64_t i = 0; i < plan.inner; ++i) acc[ia0 + i] += gout[o0 + i];
               } else {
                 T s = T(0);
                 for (int64_t i = 0; i < plan.inner; ++i) s += gout[o0 + i];
                 acc[ia0] += s;
               }
             });
}

// ---- elementwise op kernels ----

// bwd(a, b, y) -> pair(dy/da, dy/db)
template <class T, class FwdFn, class BwdFn>
Tensor<T> binary_op(const Tensor<T>& a, const Tensor<T>& b, FwdFn fwd, BwdFn bwd) {
  Shape out_shape = broadcast_shape(a.shape(), b.shape());
  Tensor<T> out(out_shape);
  T* od = out.data();
  const T* ad = a.data();
  const T* bd = b.data();
  bool same = a.shape() == b.shape();
  if (same) {
    int64_t n = out.size();
    for (int64_t i = 0; i < n; ++i) od[i] = fwd(ad[i], bd[i]);
  } else {
    auto sa = broadcast_strides(a.shape(), out_shape);
    auto sb = broadcast_strides(b.shape(), out_shape);
    auto plan = make_block_plan(out_shape, sa, sb);
    std::vector<int64_t> sa_o(sa.begin(), sa.begin() + plan.outer.size());
    std::vector<int64_t> sb_o(sb.begin(), sb.begin() + plan.outer.size());
    outer_walk(plan.outer, plan.inner, sa_o, sb_o,
               [&](int64_t o0, int64_t ia0, int64_t ib0) {
                 if (plan.a_advances && plan.b_advances) {
                   for (int64_t i = 0; i < plan.inner; ++i)
                     od[o0 + i] = fwd(ad[ia0 + i], bd[ib0 + i]);
                 } else if (plan.a_advances) {
                   T bv = bd[ib0];
                   for (int64_t i = 0; i < plan.inner; ++i) od[o0 + i] = fwd(ad[ia0 + i], bv);
                 } else {
                   T av = ad[ia0];
                   for (int64_t i = 0; i < plan.inner; ++i) od[o0 + i] = fwd(av, bd[ib0 + i]);
                 }
               });
  }
  auto rec = begin_record<T>({&a, &b});
  if (rec.active()) {
    int64_t pa = rec.parent(0), pb = rec.parent(1);
    rec.bind_output(out, [a, b, out, bwd, pa, pb](const std::vector<T>& g, Tape<T>& tp) {
      const Shape& osh = out.shape();
      const T* ad = a.data();
      const T* bd = b.data();
      const T* yd = out.data();
      if (a.shape() == osh && b.shape() == osh) {
        std::vector<T>* ga = pa >= 0 ? &tp.grad_buffer(pa) : nullptr;
        std::vector<T>* gb = pb >= 0 ? &tp.grad_buffer(pb) : nullptr;
        for (size_t i = 0; i < g.size(); ++i) {
          auto [da, db] = bwd(ad[i], bd[i], yd[i]);
          if (ga) (*ga)[i] += g[i] * da;
          if (gb) (*gb)[i] += g[i] * db;
        }
        return;
      }
      auto sa = broadcast_strides(a.shape(), osh);
      auto sb = broadcast_strides(b.shape(), osh);
      auto plan = make_block_plan(osh, sa, sb);
      std::vector<int64_t> sa_o(sa.begin(), sa.begin() + plan.outer.size());
      std::vector<int64_t> sb_o(sb.begin(), sb.begin() + plan.outer.size());
      T* ga = pa >= 0 ? tp.grad_buffer(pa).data() : nullptr;
      T* gb = pb >= 0 ? tp.grad_buffer(pb).data() : nullptr;
      outer_walk(plan.outer, plan.inner, sa_o, sb_o,
                 [&](int64_t o0, int64_t ia0, int64_t ib0) {
                   for (int64_t i = 0; i < plan.inner; ++i) {
                     int64_t ia = plan.a_advances ? ia0 + i : ia0;
                     int64_t ib = plan.b_advances ? ib0 + i : ib0;
                     auto [da, db] = bwd(ad[ia], bd[ib], yd[o0 + i]);
                     if (ga) ga[ia] += g[o0 + i] * da;
                     if (gb) gb[ib] += g[o0 + i] * db;
                   }
                 });
    });
  }
  return out;
}

// bwd(x, y) -> dy/dx
template <class T, class FwdFn, class BwdFn>
Tensor<T> unary_op(const Tensor<T>& x, FwdFn fwd, BwdFn bwd) {
  Tensor<T> out(x.shape());
  const T* xd = x.data();
  T* od = out.data();
  int64_t n = x.size();
  for (int64_t i = 0; i < n; ++i) od[i] = fwd(xd[i]);
  auto rec = begin_record<T>({&x});
  if (rec.active()) {
    int64_t px = rec.parent(0);
    rec.bind_output(out, [x, out, bwd, px](const std::vector<T>& g, Tape<T>& tp) {
      auto& acc = tp.grad_buffer(px);
      const T* xd = x.data();
      const T* yd = out.data();
      for (size_t i = 0; i < g.size(); ++i) acc[i] += g[i] * bwd(xd[i], yd[i]);
    });
  }
  return out;
}

}  // namespace detail

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_op<T>(a, b, [](T x, T y) { return x + y; },
                              [](T, T, T) { return std::pair<T, T>(T(1), T(1)); });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_op<T>(a, b, [](T x, T y) { return x - y; },
                              [](T, T, T) { return std::pair<T, T>(T(1), T(-1)); });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_op<T>(a, b, [](T x, T y) { return x * y; },
                              [](T x, T y, T) { return std::pair<T, T>(y, x); });
}

template <class T>
Tensor<T> divide(const Tensor<T>& a, const Tensor<T>& b) {
  const T* bd = b.data();
  for (int64_t i = 0; i < b.size(); ++i)
    SAVP_CHECK(bd[i] != T(0), "divide: zero divisor at flat index ", i);
  return detail::binary_op<T>(a, b, [](T x, T y) { return x / y; },
                              [](T x, T y, T) {
                                return std::pair<T, T>(T(1) / y, -x / (y * y));
                              });
}

template <class T>
Tensor<T> neg(const Tensor<T>& x) {
  return detail::unary_op<T>(x, [](T v) { return -v; }, [](T, T) { return T(-1); });
}

template <class T>
Tensor<T> abs(const Tensor<T>& x) {
  // Subgradient 0 at 0.
  return detail::unary_op<T>(x, [](T v) { return std::abs(v); },
                             [](T v, T) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); });
}

template <class T>
Tensor<T> exp(const Tensor<T>& x) {
  return detail::unary_op<T>(x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <class T>
Tensor<T> log(const Tensor<T>& x) {
  const T* xd = x.data();
  for (int64_t i = 0; i < x.size(); ++i)
    SAVP_CHECK(xd[i] > T(0), "log: non-positive operand ", xd[i], " at flat index ", i);
  return detail::unary_op<T>(x, [](T v) { return std::log(v); },
                             [](T v, T) { return T(1) / v; });
}

template <class T>
Tensor<T> square(const Tensor<T>& x) {
  return detail::unary_op<T>(x, [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

// x * c for a plain constant.
template <class T>
Tensor<T> scale(const Tensor<T>& x, T c) {
  return detail::unary_op<T>(x, [c](T v) { return v * c; }, [c](T, T) { return c; });
}

template <class T>
Tensor<T> add_scalar(const Tensor<T>& x, T c) {
  return detail::unary_op<T>(x, [c](T v) { return v + c; }, [](T, T) { return T(1); });
}

// Gradient passes through strictly inside (lo, hi), zero outside.
template <class T>
Tensor<T> clamp(const Tensor<T>& x, T lo, T hi) {
  return detail::unary_op<T>(
      x, [lo, hi](T v) { return std::min(std::max(v, lo), hi); },
      [lo, hi](T v, T) { return (v > lo && v < hi) ? T(1) : T(0); });
}

// ---- reductions ----

template <class T>
Tensor<T> sum_all(const Tensor<T>& x) {
  T acc = T(0);
  const T* xd = x.data();
  for (int64_t i = 0; i < x.size(); ++i) acc += xd[i];
  Tensor<T> out = Tensor<T>::scalar(acc);
  auto rec = detail::begin_record<T>({&x});
  if (rec.active()) {
    int64_t px = rec.parent(0);
    rec.bind_output(out, [px](const std::vector<T>& g, Tape<T>& tp) {
      auto& acc = tp.grad_buffer(px);
      for (auto& v : acc) v += g[0];
    });
  }
  return out;
}

template <class T>
Tensor<T> mean_all(const Tensor<T>& x) {
  return scale(sum_all(x), T(1) / static_cast<T>(x.size()));
}

// ---- shape ops ----

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape new_shape) {
  Tensor<T> out = x.detach().reshaped_view(std::move(new_shape));
  auto rec = detail::begin_record<T>({&x});
  if (rec.active()) {
    int64_t px = rec.parent(0);
    rec.bind_output(out, [px](const std::vector<T>& g, Tape<T>& tp) {
      auto& acc = tp.grad_buffer(px);
      for (size_t i = 0; i < g.size(); ++i) acc[i] += g[i];
    });
  }
  return out;
}

namespace detail {
inline std::pair<int64_t, int64_t> axis_blocks(const Shape& s, int axis) {
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= s[i];
  for (size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  return {outer, inner};
}
}  // namespace detail

template <class T>
Tensor<T> concat(const std::vector<Tensor<T>>& xs, int axis) {
  SAVP_CHECK(!xs.empty(), "concat: empty input list");
  Shape out_shape = xs[0].shape();
  SAVP_CHECK(axis >= 0 && axis < static_cast<int>(out_shape.size()),
             "concat: bad axis ", axis);
  int64_t total = 0;
  for (const auto& x : xs) {
    SAVP_CHECK(x.rank() == static_cast<int>(out_shape.size()), "concat: rank mismatch");
    for (int d = 0; d < x.rank(); ++d)
      SAVP_CHECK(d == axis || x.dim(d) == out_shape[d], "concat: shape mismatch ",
                 detail::shape_str(x.shape()), " vs ", detail::shape_str(xs[0].shape()));
    total += x.dim(axis);
  }
  out_shape[axis] = total;
  Tensor<T> out(out_shape);
  auto [outer, inner] = detail::axis_blocks(out_shape, axis);
  T* od = out.data();
  int64_t offset = 0;
  for (const auto& x : xs) {
    int64_t ext = x.dim(axis);
    const T* xd = x.data();
    for (int64_t o = 0; o < outer; ++o)
      std::memcpy(od + (o * total + offset) * inner, xd + o * ext * inner,
                  sizeof(T) * ext * inner);
    offset += ext;
  }

  std::vector<const Tensor<T>*> ptrs;
  ptrs.reserve(xs.size());
  for (const auto& x : xs) ptrs.push_back(&x);
  auto rec = detail::begin_record<T>(ptrs);
  if (rec.active()) {
    std::vector<int64_t> parents = rec.parents;
    std::vector<int64_t> exts;
    for (const auto& x : xs) exts.push_back(x.dim(axis));
    rec.bind_output(out, [parents, exts, outer, inner, total](const std::vector<T>& g,
                                                              Tape<T>& tp) {
      int64_t offset = 0;
      for (size_t k = 0; k < parents.size(); ++k) {
        int64_t ext = exts[k];
        if (parents[k] >= 0) {
          auto& acc = tp.grad_buffer(parents[k]);
          for (int64_t o = 0; o < outer; ++o) {
            const T* gsrc = g.data() + (o * total + offset) * inner;
            T* dst = acc.data() + o * ext * inner;
            for (int64_t i = 0; i < ext * inner; ++i) dst[i] += gsrc[i];
          }
        }
        offset += ext;
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> slice_axis(const Tensor<T>& x, int axis, int64_t start, int64_t len) {
  SAVP_CHECK(axis >= 0 && axis < x.rank(), "slice: bad axis ", axis);
  SAVP_CHECK(start >= 0 && len > 0 && start + len <= x.dim(axis),
             "slice: range [", start, ",", start + len, ") out of extent ", x.dim(axis));
  Shape out_shape = x.shape();
  out_shape[axis] = len;
  Tensor<T> out(out_shape);
  auto [outer, inner] = detail::axis_blocks(x.shape(), axis);
  int64_t ext = x.dim(axis);
  const T* xd = x.data();
  T* od = out.data();
  for (int64_t o = 0; o < outer; ++o)
    std::memcpy(od + o * len * inner, xd + (o * ext + start) * inner, sizeof(T) * len * inner);
  auto rec = detail::begin_record<T>({&x});
  if (rec.active()) {
    int64_t px = rec.parent(0);
    rec.bind_output(out, [px, axis, start, len, outer, inner, ext](const std::vector<T>& g,
                                                                   Tape<T>& tp) {
      auto& acc = tp.grad_buffer(px);
      for (int64_t o = 0; o < outer; ++o) {
        const T* gsrc = g.data() + o * len * inner;
        T* dst = acc.data() + (o * ext + start) * inner;
        for (int64_t i = 0; i < len * inner; ++i) dst[i] += gsrc[i];
      }
    });
  }
  return out;
}

// [b, n] -> [b, n, h, w], replicating each value spatially.
template <class T>
Tensor<T> expand_hw(const Tensor<T>& x, int64_t h, int64_t w) {
  SAVP_CHECK(x.rank() == 2, "expand_hw: expected rank-2 input, got ",
             detail::shape_str(x.shape()));
  int64_t b = x.dim(0), n = x.dim(1), hw = h * w;
  Tensor<T> out({b, n, h, w});
  const T* xd = x.data();
  T* od = out.data();
  for (int64_t i = 0; i < b * n; ++i)
    for (int64_t p = 0; p < hw; ++p) od[i * hw + p] = xd[i];
  auto rec = detail::begin_record<T>({&x});
  if (rec.active()) {
    int64_t px = rec.parent(0);
    rec.bind_output(out, [px, hw](const std::vector<T>& g, Tape<T>& tp) {
      auto& acc = tp.grad_buffer(px);
      for (size_t i = 0; i < acc.size(); ++i) {
        T s = T(0);
        for (int64_t p = 0; p < hw; ++p) s += g[i * hw + p];
        acc[i] += s;
      }
    });
  }
  return out;
}

// Convenience operators.
template <class T> Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <class T> Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }
template <class T> Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return mul(a, b); }
template <class T> Tensor<T> operator/(const Tensor<T>& a, const Tensor<T>& b) { return divide(a, b); }
template <class T> Tensor<T> operator-(const Tensor<T>& x) { return neg(x); }

}  // namespace savp
