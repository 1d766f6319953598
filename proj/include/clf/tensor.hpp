#pragma once

// Dense row-major tensors with reverse-mode differentiation on a per-pass
// tape. Matrix products are backed by Eigen; everything else is plain loops.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <limits>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "clf/error.hpp"
#include "clf/random.hpp"

namespace clf {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ", ";
    os << s[i];
  }
  os << "]";
  return os.str();
}

// ---------------------------------------------------------------------------
// Global switches and counters
// ---------------------------------------------------------------------------

namespace detail {
inline std::atomic<bool> g_finite_checks{true};
inline thread_local std::size_t g_max_alloc_numel = 0;
}  // namespace detail

// Eager NaN/Inf detection after every op. On for tests and training, off for
// benchmarking.
inline void set_finite_checks(bool on) { detail::g_finite_checks = on; }
inline bool finite_checks_enabled() { return detail::g_finite_checks; }

// Peak single-tensor allocation since the last reset, in elements. Lets tests
// assert that a code path never materializes an N x N intermediate.
namespace alloc_stats {
inline void reset() { detail::g_max_alloc_numel = 0; }
inline std::size_t max_numel() { return detail::g_max_alloc_numel; }
}  // namespace alloc_stats

// ---------------------------------------------------------------------------
// Tensor
// ---------------------------------------------------------------------------

template <typename T>
struct TensorData {
  Shape shape;
  std::vector<T> values;
  bool requires_grad = false;
  std::vector<T> grad;  // same length as values iff requires_grad
};

template <typename T>
class Tensor {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>,
                "Tensor supports f32 and f64 only");

 public:
  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0)) {
    std::size_t n = shape_numel(shape);
    detail::g_max_alloc_numel = std::max(detail::g_max_alloc_numel, n);
    d_ = std::make_shared<TensorData<T>>();
    d_->shape = std::move(shape);
    d_->values.assign(n, fill);
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), T(0)); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), T(1)); }
  static Tensor full(Shape shape, T v) { return Tensor(std::move(shape), v); }

  static Tensor scalar(T v) {
    Tensor t{Shape{}};
    t.d_->values[0] = v;
    return t;
  }

  static Tensor from_vector(Shape shape, std::vector<T> values) {
    if (shape_numel(shape) != values.size())
      throw dim_error("from_vector: shape " + shape_str(shape) + " needs " +
                      std::to_string(shape_numel(shape)) + " values, got " +
                      std::to_string(values.size()));
    Tensor t;
    t.d_ = std::make_shared<TensorData<T>>();
    t.d_->shape = std::move(shape);
    t.d_->values = std::move(values);
    detail::g_max_alloc_numel =
        std::max(detail::g_max_alloc_numel, t.d_->values.size());
    return t;
  }

  bool valid() const { return d_ != nullptr; }

  const Shape& shape() const { return check().shape; }
  std::size_t rank() const { return check().shape.size(); }
  std::size_t size(std::size_t dim) const { return check().shape.at(dim); }
  std::size_t numel() const { return check().values.size(); }

  const T* data() const { return check().values.data(); }
  T* data_mut() { return check().values.data(); }
  const std::vector<T>& values() const { return check().values; }
  std::vector<T>& values_mut() { return check().values; }

  bool requires_grad() const { return check().requires_grad; }

  void set_requires_grad(bool on) {
    auto& d = check();
    d.requires_grad = on;
    if (on)
      d.grad.assign(d.values.size(), T(0));
    else
      d.grad.clear();
  }

  const std::vector<T>& grad() const {
    const auto& d = check();
    if (!d.requires_grad)
      throw contract_error("tensor does not track gradients");
    return d.grad;
  }

  std::vector<T>& grad_mut() {
    auto& d = check();
    if (!d.requires_grad)
      throw contract_error("tensor does not track gradients");
    return d.grad;
  }

  void zero_grad() {
    auto& d = check();
    if (d.requires_grad) std::fill(d.grad.begin(), d.grad.end(), T(0));
  }

  // Element access for tests and small computations.
  T at(std::initializer_list<std::size_t> idx) const {
    const auto& d = check();
    if (idx.size() != d.shape.size())
      throw dim_error("at: rank mismatch for shape " + shape_str(d.shape));
    std::size_t flat = 0;
    std::size_t k = 0;
    for (std::size_t i : idx) {
      if (i >= d.shape[k]) throw dim_error("at: index out of range");
      flat = flat * d.shape[k] + i;
      ++k;
    }
    return d.values[flat];
  }

  T item() const {
    const auto& d = check();
    if (d.values.size() != 1)
      throw contract_error("item: tensor has " +
                           std::to_string(d.values.size()) + " elements");
    return d.values[0];
  }

  // Deep copy; gradient state is not carried over.
  Tensor clone() const {
    const auto& d = check();
    Tensor t;
    t.d_ = std::make_shared<TensorData<T>>();
    t.d_->shape = d.shape;
    t.d_->values = d.values;
    return t;
  }

  // Value copy detached from any gradient tracking.
  Tensor detach() const { return clone(); }

  std::shared_ptr<TensorData<T>> ptr() const { return d_; }

  void fill_uniform(Rng& rng, double lo, double hi) {
    for (auto& v : check().values) v = static_cast<T>(rng.uniform(lo, hi));
  }

  void fill_normal(Rng& rng, double mu, double sigma) {
    for (auto& v : check().values) v = static_cast<T>(rng.normal(mu, sigma));
  }

  // He-uniform initialization: U(-b, b) with b = sqrt(6 / fan_in).
  void fill_he_uniform(Rng& rng, std::size_t fan_in) {
    double b = std::sqrt(6.0 / static_cast<double>(fan_in));
    fill_uniform(rng, -b, b);
  }

 private:
  TensorData<T>& check() {
    if (!d_) throw contract_error("operation on uninitialized tensor");
    return *d_;
  }
  const TensorData<T>& check() const {
    if (!d_) throw contract_error("operation on uninitialized tensor");
    return *d_;
  }

  std::shared_ptr<TensorData<T>> d_;
};

template <typename T>
inline T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw dim_error("max_abs_diff: shapes " + shape_str(a.shape()) + " vs " +
                    shape_str(b.shape()));
  T m = 0;
  for (std::size_t i = 0; i < a.numel(); ++i)
    m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

// Records executed ops for one forward pass. Construction makes the tape the
// current recording target on this thread; destruction restores the previous
// one. backward() replays in exact reverse execution order, then the tape is
// spent.
template <typename T>
class Tape {
 public:
  Tape() : prev_(current_ptr()) { current_ptr() = this; }
  ~Tape() { current_ptr() = prev_; }

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* current() { return current_ptr(); }

  void record(std::function<void()> backward_fn) {
    ops_.push_back(std::move(backward_fn));
  }

  std::size_t size() const { return ops_.size(); }

  void backward(Tensor<T> loss) {
    if (consumed_) throw contract_error("tape already consumed by backward");
    if (ops_.empty()) throw contract_error("backward on an empty tape");
    if (loss.numel() != 1)
      throw contract_error("backward requires a scalar loss, got shape " +
                           shape_str(loss.shape()));
    if (!loss.requires_grad())
      throw contract_error("loss is not connected to the tape");
    loss.grad_mut()[0] = T(1);
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
    ops_.clear();
    consumed_ = true;
  }

 private:
  static Tape*& current_ptr() {
    static thread_local Tape* cur = nullptr;
    return cur;
  }

  std::vector<std::function<void()>> ops_;
  Tape* prev_ = nullptr;
  bool consumed_ = false;
};

namespace detail {
template <typename T>
inline thread_local int g_nograd_depth = 0;
}  // namespace detail

// Suppresses recording within a scope (frozen teacher forward, metrics).
template <typename T>
class NoGradScope {
 public:
  NoGradScope() { ++detail::g_nograd_depth<T>; }
  ~NoGradScope() { --detail::g_nograd_depth<T>; }
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;
};

// Recording target for new ops: the innermost tape, unless a NoGradScope is
// active.
template <typename T>
inline Tape<T>* recording_tape() {
  if (detail::g_nograd_depth<T> > 0) return nullptr;
  return Tape<T>::current();
}

namespace detail {

template <typename T>
inline void finite_check(const char* op, const Tensor<T>& out) {
  if (!g_finite_checks.load(std::memory_order_relaxed)) return;
  const T* p = out.data();
  for (std::size_t i = 0; i < out.numel(); ++i) {
    if (!std::isfinite(static_cast<double>(p[i])))
      throw numeric_error(std::string(op) +
                          ": produced a non-finite value at flat index " +
                          std::to_string(i));
  }
}

template <typename T>
inline bool wants_grad(const Tensor<T>& t) {
  return t.requires_grad() && recording_tape<T>() != nullptr;
}

template <typename T>
inline void mark_tracked(Tensor<T>& out) {
  out.set_requires_grad(true);
}

// Right-aligned numpy broadcasting. Returns the output shape.
inline Shape broadcast_shape(const Shape& a, const Shape& b,
                             const char* op) {
  std::size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (std::size_t i = 0; i < r; ++i) {
    std::size_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    std::size_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da != db && da != 1 && db != 1)
      throw dim_error(std::string(op) + ": cannot broadcast " + shape_str(a) +
                      " with " + shape_str(b));
    out[i] = std::max(da, db);
  }
  return out;
}

// Maps flat output indices to flat input indices under broadcasting.
struct BcastIndex {
  bool identity = true;
  std::vector<std::size_t> out_extent;
  std::vector<std::size_t> in_stride;  // 0 on broadcast dims

  BcastIndex() = default;
  BcastIndex(const Shape& in, const Shape& out) {
    identity = (in == out);
    if (identity) return;
    std::size_t r = out.size();
    out_extent = out;
    in_stride.assign(r, 0);
    std::size_t lead = r - in.size();
    std::size_t stride = 1;
    for (std::size_t i = r; i-- > lead;) {
      std::size_t ext = in[i - lead];
      in_stride[i] = (ext == 1) ? 0 : stride;
      stride *= ext;
    }
  }

  std::size_t map(std::size_t flat) const {
    if (identity) return flat;
    std::size_t src = 0;
    for (std::size_t i = out_extent.size(); i-- > 0;) {
      std::size_t coord = flat % out_extent[i];
      flat /= out_extent[i];
      src += coord * in_stride[i];
    }
    return src;
  }
};

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise machinery
// ---------------------------------------------------------------------------

namespace detail {

// fwd(a, b) -> out; dfa/dfb(a, b, out) -> local partials.
template <typename T, typename Fwd, typename Dfa, typename Dfb>
Tensor<T> binary_op(const char* name, const Tensor<T>& a, const Tensor<T>& b,
                    Fwd fwd, Dfa dfa, Dfb dfb) {
  Shape os = broadcast_shape(a.shape(), b.shape(), name);
  BcastIndex ia(a.shape(), os), ib(b.shape(), os);
  Tensor<T> out(os);
  std::size_t n = out.numel();
  const T* pa = a.data();
  const T* pb = b.data();
  T* po = out.data_mut();
  if (ia.identity && ib.identity) {
    for (std::size_t i = 0; i < n; ++i) po[i] = fwd(pa[i], pb[i]);
  } else {
    for (std::size_t i = 0; i < n; ++i)
      po[i] = fwd(pa[ia.map(i)], pb[ib.map(i)]);
  }
  finite_check(name, out);

  bool ga = wants_grad(a), gb = wants_grad(b);
  if (ga || gb) {
    mark_tracked(out);
    auto ad = a.ptr();
    auto bd = b.ptr();
    auto od = out.ptr();
    recording_tape<T>()->record([=]() {
      const auto& g = od->grad;
      for (std::size_t i = 0; i < g.size(); ++i) {
        std::size_t sa = ia.map(i), sb = ib.map(i);
        T av = ad->values[sa], bv = bd->values[sb], ov = od->values[i];
        if (ga) ad->grad[sa] += dfa(av, bv, ov) * g[i];
        if (gb) bd->grad[sb] += dfb(av, bv, ov) * g[i];
      }
    });
  }
  return out;
}

template <typename T, typename Fwd, typename Dfx>
Tensor<T> unary_op(const char* name, const Tensor<T>& x, Fwd fwd, Dfx dfx) {
  Tensor<T> out(x.shape());
  std::size_t n = out.numel();
  const T* px = x.data();
  T* po = out.data_mut();
  for (std::size_t i = 0; i < n; ++i) po[i] = fwd(px[i]);
  finite_check(name, out);

  if (wants_grad(x)) {
    mark_tracked(out);
    auto xd = x.ptr();
    auto od = out.ptr();
    recording_tape<T>()->record([=]() {
      const auto& g = od->grad;
      for (std::size_t i = 0; i < g.size(); ++i)
        xd->grad[i] += dfx(xd->values[i], od->values[i]) * g[i];
    });
  }
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_op<T>(
      "add", a, b, [](T x, T y) { return x + y; },
      [](T, T, T) { return T(1); }, [](T, T, T) { return T(1); });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_op<T>(
      "sub", a, b, [](T x, T y) { return x - y; },
      [](T, T, T) { return T(1); }, [](T, T, T) { return T(-1); });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_op<T>(
      "mul", a, b, [](T x, T y) { return x * y; },
      [](T, T y, T) { return y; }, [](T x, T, T) { return x; });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_op<T>(
      "div", a, b, [](T x, T y) { return x / y; },
      [](T, T y, T) { return T(1) / y; },
      [](T x, T y, T) { return -x / (y * y); });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T s) {
  return detail::unary_op<T>(
      "scale", x, [s](T v) { return v * s; }, [s](T, T) { return s; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T s) {
  return detail::unary_op<T>(
      "add_scalar", x, [s](T v) { return v + s; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> neg(const Tensor<T>& x) {
  return scale(x, T(-1));
}

template <typename T>
Tensor<T> exp(const Tensor<T>& x) {
  return detail::unary_op<T>(
      "exp", x, [](T v) { return std::exp(v); }, [](T, T o) { return o; });
}

template <typename T>
Tensor<T> log(const Tensor<T>& x) {
  return detail::unary_op<T>(
      "log", x, [](T v) { return std::log(v); },
      [](T v, T) { return T(1) / v; });
}

template <typename T>
Tensor<T> sqrt(const Tensor<T>& x) {
  return detail::unary_op<T>(
      "sqrt", x, [](T v) { return std::sqrt(v); },
      [](T, T o) { return T(1) / (T(2) * o); });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return detail::unary_op<T>(
      "relu", x, [](T v) { return v > T(0) ? v : T(0); },
      [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

// x if x > 0 else exp(x) - 1
template <typename T>
Tensor<T> elu(const Tensor<T>& x) {
  return detail::unary_op<T>(
      "elu", x, [](T v) { return v > T(0) ? v : std::exp(v) - T(1); },
      [](T v, T) { return v > T(0) ? T(1) : std::exp(v); });
}

// Gradient passes only where lo <= x <= hi.
template <typename T>
Tensor<T> clamp(const Tensor<T>& x, T lo, T hi) {
  return detail::unary_op<T>(
      "clamp", x,
      [lo, hi](T v) { return v < lo ? lo : (v > hi ? hi : v); },
      [lo, hi](T v, T) { return (v >= lo && v <= hi) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> clamp_min(const Tensor<T>& x, T lo) {
  return clamp(x, lo, std::numeric_limits<T>::max());
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel())
    throw dim_error("reshape: cannot view " + shape_str(x.shape()) + " as " +
                    shape_str(shape));
  Tensor<T> out = Tensor<T>::from_vector(std::move(shape), x.values());
  if (detail::wants_grad(x)) {
    detail::mark_tracked(out);
    auto xd = x.ptr();
    auto od = out.ptr();
    recording_tape<T>()->record([=]() {
      for (std::size_t i = 0; i < od->grad.size(); ++i)
        xd->grad[i] += od->grad[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> view(const Tensor<T>& x, Shape shape) {
  return reshape(x, std::move(shape));
}

// Swap two dimensions (materializing copy).
template <typename T>
Tensor<T> transpose(const Tensor<T>& x, std::size_t d0, std::size_t d1) {
  const Shape& s = x.shape();
  if (d0 >= s.size() || d1 >= s.size())
    throw dim_error("transpose: dims out of range for " + shape_str(s));
  Shape os = s;
  std::swap(os[d0], os[d1]);
  std::size_t r = s.size();
  std::vector<std::size_t> in_stride(r, 1);
  for (std::size_t i = r - 1; i-- > 0;) in_stride[i] = in_stride[i + 1] * s[i + 1];
  std::vector<std::size_t> perm_stride(r);
  for (std::size_t i = 0; i < r; ++i) perm_stride[i] = in_stride[i];
  std::swap(perm_stride[d0], perm_stride[d1]);

  Tensor<T> out(os);
  std::size_t n = out.numel();
  const T* px = x.data();
  T* po = out.data_mut();
  // Walk output in order, computing the permuted source index.
  std::vector<std::size_t> idx(r, 0);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t src = 0;
    for (std::size_t d = 0; d < r; ++d) src += idx[d] * perm_stride[d];
    po[i] = px[src];
    for (std::size_t d = r; d-- > 0;) {
      if (++idx[d] < os[d]) break;
      idx[d] = 0;
    }
  }

  if (detail::wants_grad(x)) {
    detail::mark_tracked(out);
    auto xd = x.ptr();
    auto od = out.ptr();
    recording_tape<T>()->record([=]() {
      std::vector<std::size_t> j(r, 0);
      for (std::size_t i = 0; i < n; ++i) {
        std::size_t src = 0;
        for (std::size_t d = 0; d < r; ++d) src += j[d] * perm_stride[d];
        xd->grad[src] += od->grad[i];
        for (std::size_t d = r; d-- > 0;) {
          if (++j[d] < os[d]) break;
          j[d] = 0;
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> concat(const Tensor<T>& a, const Tensor<T>& b, std::size_t dim) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() != sb.size() || dim >= sa.size())
    throw dim_error("concat: rank mismatch " + shape_str(sa) + " vs " +
                    shape_str(sb));
  for (std::size_t i = 0; i < sa.size(); ++i)
    if (i != dim && sa[i] != sb[i])
      throw dim_error("concat: incompatible shapes " + shape_str(sa) +
                      " vs " + shape_str(sb) + " along dim " +
                      std::to_string(dim));
  Shape os = sa;
  os[dim] += sb[dim];

  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < dim; ++i) outer *= sa[i];
  for (std::size_t i = dim + 1; i < sa.size(); ++i) inner *= sa[i];
  std::size_t na = sa[dim] * inner, nb = sb[dim] * inner;

  Tensor<T> out(os);
  T* po = out.data_mut();
  const T* pa = a.data();
  const T* pb = b.data();
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy(pa + o * na, pa + (o + 1) * na, po + o * (na + nb));
    std::copy(pb + o * nb, pb + (o + 1) * nb, po + o * (na + nb) + na);
  }

  bool ga = detail::wants_grad(a), gb = detail::wants_grad(b);
  if (ga || gb) {
    detail::mark_tracked(out);
    auto ad = a.ptr();
    auto bd = b.ptr();
    auto od = out.ptr();
    recording_tape<T>()->record([=]() {
      for (std::size_t o = 0; o < outer; ++o) {
        const T* g = od->grad.data() + o * (na + nb);
        if (ga)
          for (std::size_t i = 0; i < na; ++i) ad->grad[o * na + i] += g[i];
        if (gb)
          for (std::size_t i = 0; i < nb; ++i)
            bd->grad[o * nb + i] += g[na + i];
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

namespace detail {
inline void axis_split(const Shape& s, std::size_t dim, std::size_t& outer,
                       std::size_t& n, std::size_t& inner) {
  outer = 1;
  inner = 1;
  for (std::size_t i = 0; i < dim; ++i) outer *= s[i];
  n = s[dim];
  for (std::size_t i = dim + 1; i < s.size(); ++i) inner *= s[i];
}
}  // namespace detail

template <typename T>
Tensor<T> sum(const Tensor<T>& x, std::size_t dim, bool keepdim = false) {
  const Shape& s = x.shape();
  if (dim >= s.size())
    throw dim_error("sum: dim " + std::to_string(dim) + " out of range for " +
                    shape_str(s));
  std::size_t outer, n, inner;
  detail::axis_split(s, dim, outer, n, inner);
  Shape os;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i == dim) {
      if (keepdim) os.push_back(1);
    } else {
      os.push_back(s[i]);
    }
  }
  Tensor<T> out(os);
  const T* px = x.data();
  T* po = out.data_mut();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < inner; ++i) {
      T acc = 0;
      for (std::size_t j = 0; j < n; ++j) acc += px[(o * n + j) * inner + i];
      po[o * inner + i] = acc;
    }
  detail::finite_check("sum", out);

  if (detail::wants_grad(x)) {
    detail::mark_tracked(out);
    auto xd = x.ptr();
    auto od = out.ptr();
    recording_tape<T>()->record([=]() {
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < inner; ++i) {
          T g = od->grad[o * inner + i];
          for (std::size_t j = 0; j < n; ++j)
            xd->grad[(o * n + j) * inner + i] += g;
        }
    });
  }
  return out;
}

// Sum over every element; returns a rank-0 scalar tensor.
template <typename T>
Tensor<T> sum_all(const Tensor<T>& x) {
  Tensor<T> out = Tensor<T>::scalar(T(0));
  T acc = 0;
  const T* px = x.data();
  for (std::size_t i = 0; i < x.numel(); ++i) acc += px[i];
  out.data_mut()[0] = acc;
  detail::finite_check("sum_all", out);
  if (detail::wants_grad(x)) {
    detail::mark_tracked(out);
    auto xd = x.ptr();
    auto od = out.ptr();
    recording_tape<T>()->record([=]() {
      T g = od->grad[0];
      for (auto& gi : xd->grad) gi += g;
    });
  }
  return out;
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& x) {
  return scale(sum_all(x), T(1) / static_cast<T>(x.numel()));
}

// ---------------------------------------------------------------------------
// Softmax family
// ---------------------------------------------------------------------------

// exp(x - max) / sum along dim; numerically stable.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t dim) {
  const Shape& s = x.shape();
  if (dim >= s.size())
    throw dim_error("softmax: dim " + std::to_string(dim) +
                    " out of range for " + shape_str(s));
  std::size_t outer, n, inner;
  detail::axis_split(s, dim, outer, n, inner);
  Tensor<T> out(s);
  const T* px = x.data();
  T* po = out.data_mut();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < inner; ++i) {
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t j = 0; j < n; ++j)
        mx = std::max(mx, px[(o * n + j) * inner + i]);
      T z = 0;
      for (std::size_t j = 0; j < n; ++j) {
        T e = std::exp(px[(o * n + j) * inner + i] - mx);
        po[(o * n + j) * inner + i] = e;
        z += e;
      }
      for (std::size_t j = 0; j < n; ++j) po[(o * n + j) * inner + i] /= z;
    }
  detail::finite_check("softmax", out);

  if (detail::wants_grad(x)) {
    detail::mark_tracked(out);
    auto xd = x.ptr();
    auto od = out.ptr();
    recording_tape<T>()->record([=]() {
      // dx = y * (g - sum(g * y))
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < inner; ++i) {
          T dot = 0;
          for (std::size_t j = 0; j < n; ++j) {
            std::size_t k = (o * n + j) * inner + i;
            dot += od->grad[k] * od->values[k];
          }
          for (std::size_t j = 0; j < n; ++j) {
            std::size_t k = (o * n + j) * inner + i;
            xd->grad[k] += od->values[k] * (od->grad[k] - dot);
          }
        }
    });
  }
  return out;
}

template <typename T>
Tensor<T> log_softmax(const Tensor<T>& x, std::size_t dim) {
  const Shape& s = x.shape();
  if (dim >= s.size())
    throw dim_error("log_softmax: dim " + std::to_string(dim) +
                    " out of range for " + shape_str(s));
  std::size_t outer, n, inner;
  detail::axis_split(s, dim, outer, n, inner);
  Tensor<T> out(s);
  const T* px = x.data();
  T* po = out.data_mut();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < inner; ++i) {
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t j = 0; j < n; ++j)
        mx = std::max(mx, px[(o * n + j) * inner + i]);
      T z = 0;
      for (std::size_t j = 0; j < n; ++j)
        z += std::exp(px[(o * n + j) * inner + i] - mx);
      T lz = std::log(z) + mx;
      for (std::size_t j = 0; j < n; ++j) {
        std::size_t k = (o * n + j) * inner + i;
        po[k] = px[k] - lz;
      }
    }
  detail::finite_check("log_softmax", out);

  if (detail::wants_grad(x)) {
    detail::mark_tracked(out);
    auto xd = x.ptr();
    auto od = out.ptr();
    recording_tape<T>()->record([=]() {
      // dx = g - softmax(x) * sum(g)
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < inner; ++i) {
          T gs = 0;
          for (std::size_t j = 0; j < n; ++j)
            gs += od->grad[(o * n + j) * inner + i];
          for (std::size_t j = 0; j < n; ++j) {
            std::size_t k = (o * n + j) * inner + i;
            xd->grad[k] += od->grad[k] - std::exp(od->values[k]) * gs;
          }
        }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Matrix products (Eigen-backed kernels)
// ---------------------------------------------------------------------------

namespace detail {
template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapM = Eigen::Map<MatRM<T>>;
template <typename T>
using CMapM = Eigen::Map<const MatRM<T>>;
using EIdx = Eigen::Index;
}  // namespace detail

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0])
    throw dim_error("matmul: incompatible shapes " + shape_str(a.shape()) +
                    " x " + shape_str(b.shape()));
  auto m = static_cast<detail::EIdx>(a.shape()[0]);
  auto k = static_cast<detail::EIdx>(a.shape()[1]);
  auto n = static_cast<detail::EIdx>(b.shape()[1]);
  Tensor<T> out({a.shape()[0], b.shape()[1]});
  detail::CMapM<T> A(a.data(), m, k), B(b.data(), k, n);
  detail::MapM<T>(out.data_mut(), m, n).noalias() = A * B;
  detail::finite_check("matmul", out);

  bool ga = detail::wants_grad(a), gb = detail::wants_grad(b);
  if (ga || gb) {
    detail::mark_tracked(out);
    auto ad = a.ptr();
    auto bd = b.ptr();
    auto od = out.ptr();
    recording_tape<T>()->record([=]() {
      detail::CMapM<T> G(od->grad.data(), m, n);
      if (ga) {
        detail::CMapM<T> Bv(bd->values.data(), k, n);
        detail::MapM<T>(ad->grad.data(), m, k).noalias() += G * Bv.transpose();
      }
      if (gb) {
        detail::CMapM<T> Av(ad->values.data(), m, k);
        detail::MapM<T>(bd->grad.data(), k, n).noalias() += Av.transpose() * G;
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 3 || b.rank() != 3)
    throw dim_error("bmm: expects rank-3 operands, got " +
                    shape_str(a.shape()) + " x " + shape_str(b.shape()));
  if (a.shape()[0] != b.shape()[0])
    throw dim_error("bmm: batch mismatch " + shape_str(a.shape()) + " x " +
                    shape_str(b.shape()));
  if (a.shape()[2] != b.shape()[1])
    throw dim_error("bmm: incompatible shapes " + shape_str(a.shape()) +
                    " x " + shape_str(b.shape()));
  std::size_t batch = a.shape()[0];
  auto m = static_cast<detail::EIdx>(a.shape()[1]);
  auto k = static_cast<detail::EIdx>(a.shape()[2]);
  auto n = static_cast<detail::EIdx>(b.shape()[2]);
  Tensor<T> out({batch, a.shape()[1], b.shape()[2]});
  for (std::size_t i = 0; i < batch; ++i) {
    detail::CMapM<T> A(a.data() + i * m * k, m, k);
    detail::CMapM<T> B(b.data() + i * k * n, k, n);
    detail::MapM<T>(out.data_mut() + i * m * n, m, n).noalias() = A * B;
  }
  detail::finite_check("bmm", out);

  bool ga = detail::wants_grad(a), gb = detail::wants_grad(b);
  if (ga || gb) {
    detail::mark_tracked(out);
    auto ad = a.ptr();
    auto bd = b.ptr();
    auto od = out.ptr();
    recording_tape<T>()->record([=]() {
      for (std::size_t i = 0; i < batch; ++i) {
        detail::CMapM<T> G(od->grad.data() + i * m * n, m, n);
        if (ga) {
          detail::CMapM<T> Bv(bd->values.data() + i * k * n, k, n);
          detail::MapM<T>(ad->grad.data() + i * m * k, m, k).noalias() +=
              G * Bv.transpose();
        }
        if (gb) {
          detail::CMapM<T> Av(ad->values.data() + i * m * k, m, k);
          detail::MapM<T>(bd->grad.data() + i * k * n, k, n).noalias() +=
              Av.transpose() * G;
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Convolution (im2col + GEMM)
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
void im2col(const T* x, std::size_t cin, std::size_t h, std::size_t w,
            std::size_t kh, std::size_t kw, std::size_t stride,
            std::size_t pad, std::size_t ho, std::size_t wo, T* col) {
  // col layout: [cin*kh*kw, ho*wo]
  for (std::size_t c = 0; c < cin; ++c)
    for (std::size_t ki = 0; ki < kh; ++ki)
      for (std::size_t kj = 0; kj < kw; ++kj) {
        T* row = col + ((c * kh + ki) * kw + kj) * (ho * wo);
        for (std::size_t oy = 0; oy < ho; ++oy) {
          std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ki) -
                              static_cast<std::ptrdiff_t>(pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) {
            std::fill(row + oy * wo, row + (oy + 1) * wo, T(0));
            continue;
          }
          for (std::size_t ox = 0; ox < wo; ++ox) {
            std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kj) -
                                static_cast<std::ptrdiff_t>(pad);
            row[oy * wo + ox] =
                (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w))
                    ? T(0)
                    : x[(c * h + static_cast<std::size_t>(iy)) * w +
                        static_cast<std::size_t>(ix)];
          }
        }
      }
}

template <typename T>
void col2im_add(const T* col, std::size_t cin, std::size_t h, std::size_t w,
                std::size_t kh, std::size_t kw, std::size_t stride,
                std::size_t pad, std::size_t ho, std::size_t wo, T* x) {
  for (std::size_t c = 0; c < cin; ++c)
    for (std::size_t ki = 0; ki < kh; ++ki)
      for (std::size_t kj = 0; kj < kw; ++kj) {
        const T* row = col + ((c * kh + ki) * kw + kj) * (ho * wo);
        for (std::size_t oy = 0; oy < ho; ++oy) {
          std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ki) -
                              static_cast<std::ptrdiff_t>(pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t ox = 0; ox < wo; ++ox) {
            std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kj) -
                                static_cast<std::ptrdiff_t>(pad);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
            x[(c * h + static_cast<std::size_t>(iy)) * w +
              static_cast<std::size_t>(ix)] += row[oy * wo + ox];
          }
        }
      }
}

}  // namespace detail

// Cross-correlation convolution, NCHW input, OIHW weights, no bias.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, std::size_t stride,
                 std::size_t pad) {
  if (x.rank() != 4 || w.rank() != 4)
    throw dim_error("conv2d: expects input [b,c,h,w] and weights "
                    "[cout,cin,kh,kw], got " +
                    shape_str(x.shape()) + " and " + shape_str(w.shape()));
  std::size_t b = x.shape()[0], cin = x.shape()[1], h = x.shape()[2],
              wd = x.shape()[3];
  std::size_t cout = w.shape()[0], kh = w.shape()[2], kw = w.shape()[3];
  if (w.shape()[1] != cin)
    throw dim_error("conv2d: channel mismatch, input " + shape_str(x.shape()) +
                    " vs weights " + shape_str(w.shape()));
  if (kh % 2 == 0 || kw % 2 == 0)
    throw dim_error("conv2d: kernel extents must be odd, got " +
                    shape_str(w.shape()));
  if (stride != 1 && stride != 2)
    throw dim_error("conv2d: stride must be 1 or 2, got " +
                    std::to_string(stride));
  if (h + 2 * pad < kh || wd + 2 * pad < kw)
    throw dim_error("conv2d: output size is empty for input " +
                    shape_str(x.shape()) + ", kernel " + shape_str(w.shape()) +
                    ", stride " + std::to_string(stride) + ", pad " +
                    std::to_string(pad));
  // Floor-division output extents; trailing padded columns that do not fill a
  // whole stride are dropped.
  std::size_t ho = (h + 2 * pad - kh) / stride + 1;
  std::size_t wo = (wd + 2 * pad - kw) / stride + 1;
  std::size_t ck = cin * kh * kw;

  Tensor<T> out({b, cout, ho, wo});
  std::vector<T> col(ck * ho * wo);
  for (std::size_t i = 0; i < b; ++i) {
    detail::im2col(x.data() + i * cin * h * wd, cin, h, wd, kh, kw, stride,
                   pad, ho, wo, col.data());
    detail::CMapM<T> W(w.data(), static_cast<detail::EIdx>(cout),
                       static_cast<detail::EIdx>(ck));
    detail::CMapM<T> C(col.data(), static_cast<detail::EIdx>(ck),
                       static_cast<detail::EIdx>(ho * wo));
    detail::MapM<T>(out.data_mut() + i * cout * ho * wo,
                    static_cast<detail::EIdx>(cout),
                    static_cast<detail::EIdx>(ho * wo))
        .noalias() = W * C;
  }
  detail::finite_check("conv2d", out);

  bool gx = detail::wants_grad(x), gw = detail::wants_grad(w);
  if (gx || gw) {
    detail::mark_tracked(out);
    auto xd = x.ptr();
    auto wd_ = w.ptr();
    auto od = out.ptr();
    recording_tape<T>()->record([=]() {
      std::vector<T> colb(ck * ho * wo);
      std::vector<T> dcol(ck * ho * wo);
      for (std::size_t i = 0; i < b; ++i) {
        detail::CMapM<T> G(od->grad.data() + i * cout * ho * wo,
                           static_cast<detail::EIdx>(cout),
                           static_cast<detail::EIdx>(ho * wo));
        if (gw) {
          detail::im2col(xd->values.data() + i * cin * h * wd, cin, h, wd, kh,
                         kw, stride, pad, ho, wo, colb.data());
          detail::CMapM<T> C(colb.data(), static_cast<detail::EIdx>(ck),
                             static_cast<detail::EIdx>(ho * wo));
          detail::MapM<T>(wd_->grad.data(), static_cast<detail::EIdx>(cout),
                          static_cast<detail::EIdx>(ck))
              .noalias() += G * C.transpose();
        }
        if (gx) {
          detail::CMapM<T> W(wd_->values.data(),
                             static_cast<detail::EIdx>(cout),
                             static_cast<detail::EIdx>(ck));
          detail::MapM<T>(dcol.data(), static_cast<detail::EIdx>(ck),
                          static_cast<detail::EIdx>(ho * wo))
              .noalias() = W.transpose() * G;
          detail::col2im_add(dcol.data(), cin, h, wd, kh, kw, stride, pad, ho,
                             wo, xd->grad.data() + i * cin * h * wd);
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Normalization (composed from primitives; gradients come from the tape)
// ---------------------------------------------------------------------------

// Normalizes over the last dimension. gamma and beta have shape [D].
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma,
                     const Tensor<T>& beta, T eps = T(1e-5)) {
  if (x.rank() == 0) throw dim_error("layer_norm: rank-0 input");
  std::size_t d = x.shape().back();
  if (gamma.shape() != Shape{d} || beta.shape() != Shape{d})
    throw dim_error("layer_norm: gamma/beta must have shape [" +
                    std::to_string(d) + "], got " + shape_str(gamma.shape()) +
                    " and " + shape_str(beta.shape()));
  std::size_t last = x.rank() - 1;
  T inv_d = T(1) / static_cast<T>(d);
  auto mu = scale(sum(x, last, /*keepdim=*/true), inv_d);
  auto xc = sub(x, mu);
  auto var = scale(sum(mul(xc, xc), last, true), inv_d);
  auto sd = sqrt(add_scalar(var, eps));
  auto norm = div(xc, sd);
  return add(mul(norm, gamma), beta);
}

// Per-sample group normalization over [b, c, h, w].
template <typename T>
Tensor<T> group_norm(const Tensor<T>& x, const Tensor<T>& gamma,
                     const Tensor<T>& beta, std::size_t groups,
                     T eps = T(1e-5)) {
  if (x.rank() != 4)
    throw dim_error("group_norm: expects [b,c,h,w], got " +
                    shape_str(x.shape()));
  std::size_t b = x.shape()[0], c = x.shape()[1], h = x.shape()[2],
              w = x.shape()[3];
  if (groups == 0 || c % groups != 0)
    throw dim_error("group_norm: groups " + std::to_string(groups) +
                    " must divide channels " + std::to_string(c));
  if (gamma.shape() != Shape{c} || beta.shape() != Shape{c})
    throw dim_error("group_norm: gamma/beta must have shape [" +
                    std::to_string(c) + "]");
  std::size_t m = (c / groups) * h * w;
  T inv_m = T(1) / static_cast<T>(m);
  auto xr = reshape(x, {b, groups, m});
  auto mu = scale(sum(xr, 2, true), inv_m);
  auto xc = sub(xr, mu);
  auto var = scale(sum(mul(xc, xc), 2, true), inv_m);
  auto sd = sqrt(add_scalar(var, eps));
  auto norm = reshape(div(xc, sd), x.shape());
  auto g4 = reshape(gamma, {1, c, 1, 1});
  auto b4 = reshape(beta, {1, c, 1, 1});
  return add(mul(norm, g4), b4);
}

}  // namespace clf
