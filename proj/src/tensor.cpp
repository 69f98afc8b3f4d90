#include "probact/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>

namespace probact {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), real(0)); }

Tensor Tensor::full(Shape shape, real value) {
  auto buf = std::make_shared<std::vector<real>>(shape_numel(shape), value);
  return Tensor(std::move(shape), std::move(buf));
}

Tensor Tensor::from_values(Shape shape, std::vector<real> values) {
  if (values.size() != shape_numel(shape)) {
    throw ShapeError("from_values: " + std::to_string(values.size()) +
                     " values for shape " + shape_str(shape));
  }
  auto buf = std::make_shared<std::vector<real>>(std::move(values));
  return Tensor(std::move(shape), std::move(buf));
}

Tensor Tensor::scalar(real value) { return full(Shape{}, value); }

std::pair<std::size_t, std::size_t> Tensor::infer_fans(const Shape& shape) {
  if (shape.size() == 2) return {shape[0], shape[1]};
  if (shape.size() == 4) {
    const std::size_t receptive = shape[2] * shape[3];
    return {shape[1] * receptive, shape[0] * receptive};
  }
  const std::size_t n = shape_numel(shape);
  return {n, n};
}

Tensor Tensor::xavier(Shape shape, std::uint64_t seed, std::uint64_t stream) {
  auto [fan_in, fan_out] = infer_fans(shape);
  return xavier_fan(std::move(shape), fan_in, fan_out, seed, stream);
}

Tensor Tensor::xavier_fan(Shape shape, std::size_t fan_in, std::size_t fan_out,
                          std::uint64_t seed, std::uint64_t stream) {
  if (fan_in + fan_out == 0) {
    throw ArgumentError("xavier_fan: zero fans");
  }
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in + fan_out));
  Tensor t = zeros(std::move(shape));
  real* out = t.mutable_data();
  const auto n = static_cast<std::int64_t>(t.numel());
  const NoiseKey key{static_cast<std::uint32_t>(stream & 0xffffffffu),
                     0x5eedu ^ (stream >> 32), 0};
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i) {
    out[i] = static_cast<real>(
        stddev * rng::normal_at(key, seed, static_cast<std::uint64_t>(i)));
  }
  return t;
}

std::size_t Tensor::extent(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw ShapeError("extent: axis " + std::to_string(axis) + " for shape " +
                     shape_str(shape_));
  }
  return shape_[axis];
}

const real* Tensor::data() const {
  if (!buf_) throw UsageError("tensor is empty");
  return buf_->data();
}

real* Tensor::mutable_data() {
  if (!buf_) throw UsageError("tensor is empty");
  if (buf_.use_count() > 1) {
    buf_ = std::make_shared<std::vector<real>>(*buf_);
  }
  return buf_->data();
}

std::span<const real> Tensor::values() const {
  if (!buf_) return {};
  return {buf_->data(), buf_->size()};
}

real Tensor::at(std::size_t flat_index) const {
  if (flat_index >= numel()) {
    throw ShapeError("flat index out of range");
  }
  return (*buf_)[flat_index];
}

real Tensor::item() const {
  if (numel() != 1) {
    throw ShapeError("item() requires exactly one element, shape is " +
                     shape_str(shape_));
  }
  return (*buf_)[0];
}

Tensor Tensor::reshaped(Shape new_shape) const {
  if (shape_numel(new_shape) != numel()) {
    throw ShapeError("reshape " + shape_str(shape_) + " -> " +
                     shape_str(new_shape));
  }
  Tensor t = *this;
  t.shape_ = std::move(new_shape);
  return t;
}

Tensor Tensor::clone() const {
  if (!buf_) return {};
  return Tensor(shape_, std::make_shared<std::vector<real>>(*buf_));
}

bool Tensor::all_finite() const {
  for (real v : values()) {
    if (!std::isfinite(static_cast<double>(v))) return false;
  }
  return true;
}

bool Tensor::bitwise_equal(const Tensor& other) const {
  if (shape_ != other.shape_) return false;
  if (numel() == 0) return true;
  return std::memcmp(data(), other.data(), numel() * sizeof(real)) == 0;
}

namespace {

Shape broadcast_or_throw(const Shape& a, const Shape& b, const char* op) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t da = i < a.size() ? a[a.size() - 1 - i] : 1;
    const std::size_t db = i < b.size() ? b[b.size() - 1 - i] : 1;
    if (da != db && da != 1 && db != 1) {
      throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(a) +
                       " with " + shape_str(b));
    }
    out[rank - 1 - i] = std::max(da, db);
  }
  return out;
}

// strides of `shape` embedded in `out`, 0 where broadcast
std::vector<std::size_t> broadcast_strides(const Shape& shape, const Shape& out) {
  std::vector<std::size_t> strides(out.size(), 0);
  std::size_t run = 1;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    const std::size_t axis = shape.size() - 1 - i;
    const std::size_t out_axis = out.size() - 1 - i;
    strides[out_axis] = (shape[axis] == 1) ? 0 : run;
    run *= shape[axis];
  }
  return strides;
}

template <typename F>
Tensor binary_op(const Tensor& a, const Tensor& b, const char* name, F f) {
  if (!a.defined() || !b.defined()) throw UsageError("binary op on empty tensor");
  if (a.same_shape(b)) {
    Tensor out = Tensor::zeros(a.shape());
    real* o = out.mutable_data();
    const real* pa = a.data();
    const real* pb = b.data();
    const auto n = static_cast<std::int64_t>(a.numel());
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < n; ++i) o[i] = f(pa[i], pb[i]);
    return out;
  }
  if (b.numel() == 1 && b.rank() <= a.rank()) {
    Tensor out = Tensor::zeros(a.shape());
    real* o = out.mutable_data();
    const real* pa = a.data();
    const real s = b.at(0);
    const auto n = static_cast<std::int64_t>(a.numel());
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < n; ++i) o[i] = f(pa[i], s);
    return out;
  }
  if (a.numel() == 1 && a.rank() <= b.rank()) {
    Tensor out = Tensor::zeros(b.shape());
    real* o = out.mutable_data();
    const real s = a.at(0);
    const real* pb = b.data();
    const auto n = static_cast<std::int64_t>(b.numel());
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < n; ++i) o[i] = f(s, pb[i]);
    return out;
  }
  const Shape out_shape = broadcast_or_throw(a.shape(), b.shape(), name);
  Tensor out = Tensor::zeros(out_shape);
  real* o = out.mutable_data();
  const real* pa = a.data();
  const real* pb = b.data();
  const auto sa = broadcast_strides(a.shape(), out_shape);
  const auto sb = broadcast_strides(b.shape(), out_shape);
  const auto n = static_cast<std::int64_t>(out.numel());
  const std::size_t rank = out_shape.size();
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i) {
    std::size_t rem = static_cast<std::size_t>(i);
    std::size_t ia = 0, ib = 0;
    for (std::size_t axis = rank; axis-- > 0;) {
      const std::size_t coord = rem % out_shape[axis];
      rem /= out_shape[axis];
      ia += coord * sa[axis];
      ib += coord * sb[axis];
    }
    o[i] = f(pa[ia], pb[ib]);
  }
  return out;
}

template <typename F>
Tensor unary_op(const Tensor& a, F f) {
  Tensor out = Tensor::zeros(a.shape());
  real* o = out.mutable_data();
  const real* pa = a.data();
  const auto n = static_cast<std::int64_t>(a.numel());
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i) o[i] = f(pa[i]);
  return out;
}

}  // namespace

Shape broadcast_shape(const Shape& a, const Shape& b) {
  return broadcast_or_throw(a, b, "broadcast");
}

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(a, b, "add", [](real x, real y) { return x + y; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(a, b, "sub", [](real x, real y) { return x - y; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(a, b, "mul", [](real x, real y) { return x * y; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  Tensor out = binary_op(a, b, "div", [](real x, real y) { return x / y; });
  if (!out.all_finite()) {
    throw NumericError("div: non-finite result (division by zero?)");
  }
  return out;
}

Tensor maximum(const Tensor& a, const Tensor& b) {
  return binary_op(a, b, "max",
                   [](real x, real y) { return x > y ? x : y; });
}

Tensor neg(const Tensor& a) {
  return unary_op(a, [](real x) { return -x; });
}

Tensor exp(const Tensor& a) {
  Tensor out = unary_op(a, [](real x) { return std::exp(x); });
  if (!out.all_finite()) {
    throw NumericError("exp: overflow to non-finite value");
  }
  return out;
}

Tensor sigmoid(const Tensor& a) {
  return unary_op(a, [](real x) {
    if (x >= real(0)) {
      return real(1) / (real(1) + std::exp(-x));
    }
    const real e = std::exp(x);
    return e / (real(1) + e);
  });
}

Tensor scale(const Tensor& a, real s) {
  return unary_op(a, [s](real x) { return x * s; });
}

Tensor add_scalar(const Tensor& a, real s) {
  return unary_op(a, [s](real x) { return x + s; });
}

Tensor reduce_to_shape(const Tensor& g, const Shape& target) {
  if (g.shape() == target) return g;
  const Shape& gs = g.shape();
  if (broadcast_or_throw(target, gs, "reduce_to_shape") != gs) {
    throw ShapeError("reduce_to_shape: " + shape_str(target) +
                     " does not broadcast to " + shape_str(gs));
  }
  Tensor out = Tensor::zeros(target);
  real* o = out.mutable_data();
  const real* pg = g.data();
  const auto strides = broadcast_strides(target, gs);
  const std::size_t rank = gs.size();
  const std::size_t n = g.numel();
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t rem = i;
    std::size_t it = 0;
    for (std::size_t axis = rank; axis-- > 0;) {
      const std::size_t coord = rem % gs[axis];
      rem /= gs[axis];
      it += coord * strides[axis];
    }
    o[it] += pg[i];
  }
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw ShapeError("matmul: expected rank-2 operands, got " +
                     shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  const std::size_t m = a.extent(0), k = a.extent(1);
  const std::size_t k2 = b.extent(0), n = b.extent(1);
  if (k != k2) {
    throw ShapeError("matmul: inner dimensions " + shape_str(a.shape()) +
                     " x " + shape_str(b.shape()));
  }
  Tensor out = Tensor::zeros({m, n});
  real* o = out.mutable_data();
  const real* pa = a.data();
  const real* pb = b.data();
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(m); ++i) {
    real* orow = o + i * static_cast<std::int64_t>(n);
    const real* arow = pa + i * static_cast<std::int64_t>(k);
    for (std::size_t kk = 0; kk < k; ++kk) {
      const real av = arow[kk];
      const real* brow = pb + kk * n;
      for (std::size_t j = 0; j < n; ++j) {
        orow[j] += av * brow[j];
      }
    }
  }
  return out;
}

namespace {

void check_axis(const Tensor& t, std::size_t axis, const char* op) {
  if (axis >= t.rank()) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) +
                     " invalid for shape " + shape_str(t.shape()));
  }
}

// Collapses shape to (outer, axis_extent, inner) around `axis`.
struct AxisView {
  std::size_t outer = 1, extent = 1, inner = 1;
};

AxisView axis_view(const Shape& shape, std::size_t axis) {
  AxisView v;
  for (std::size_t i = 0; i < axis; ++i) v.outer *= shape[i];
  v.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) v.inner *= shape[i];
  return v;
}

Shape drop_axis(const Shape& shape, std::size_t axis) {
  Shape out;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i != axis) out.push_back(shape[i]);
  }
  return out;
}

}  // namespace

Tensor sum(const Tensor& t, std::size_t axis) {
  check_axis(t, axis, "sum");
  const AxisView v = axis_view(t.shape(), axis);
  Tensor out = Tensor::zeros(drop_axis(t.shape(), axis));
  real* o = out.mutable_data();
  const real* p = t.data();
  for (std::size_t a = 0; a < v.outer; ++a) {
    for (std::size_t e = 0; e < v.extent; ++e) {
      const real* src = p + (a * v.extent + e) * v.inner;
      real* dst = o + a * v.inner;
      for (std::size_t i = 0; i < v.inner; ++i) dst[i] += src[i];
    }
  }
  return out;
}

Tensor mean(const Tensor& t, std::size_t axis) {
  check_axis(t, axis, "mean");
  const std::size_t extent = t.extent(axis);
  if (extent == 0) throw ShapeError("mean over empty axis");
  return scale(sum(t, axis), real(1) / static_cast<real>(extent));
}

Tensor argmax(const Tensor& t, std::size_t axis) {
  check_axis(t, axis, "argmax");
  const AxisView v = axis_view(t.shape(), axis);
  Tensor out = Tensor::zeros(drop_axis(t.shape(), axis));
  real* o = out.mutable_data();
  const real* p = t.data();
  for (std::size_t a = 0; a < v.outer; ++a) {
    for (std::size_t i = 0; i < v.inner; ++i) {
      std::size_t best = 0;
      real best_v = p[(a * v.extent) * v.inner + i];
      for (std::size_t e = 1; e < v.extent; ++e) {
        const real cur = p[(a * v.extent + e) * v.inner + i];
        if (cur > best_v) {
          best_v = cur;
          best = e;
        }
      }
      o[a * v.inner + i] = static_cast<real>(best);
    }
  }
  return out;
}

real sum_all(const Tensor& t) {
  real acc = 0;
  for (real v : t.values()) acc += v;
  return acc;
}

real mean_all(const Tensor& t) {
  if (t.numel() == 0) throw ShapeError("mean of empty tensor");
  return sum_all(t) / static_cast<real>(t.numel());
}

Tensor sample_standard_normal(const Shape& shape, const NoiseKey& key,
                              std::uint64_t stream_seed) {
  Tensor t = Tensor::zeros(shape);
  real* out = t.mutable_data();
  const auto n = static_cast<std::int64_t>(t.numel());
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i) {
    out[i] = static_cast<real>(
        rng::normal_at(key, stream_seed, static_cast<std::uint64_t>(i)));
  }
  return t;
}

Tensor sample_uniform(const Shape& shape, const NoiseKey& key,
                      std::uint64_t stream_seed) {
  Tensor t = Tensor::zeros(shape);
  real* out = t.mutable_data();
  const auto n = static_cast<std::int64_t>(t.numel());
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i) {
    out[i] = static_cast<real>(
        rng::uniform_at(key, stream_seed, static_cast<std::uint64_t>(i)));
  }
  return t;
}

}  // namespace probact
