#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "probact/config.hpp"
#include "probact/error.hpp"
#include "probact/rng.hpp"

namespace probact {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major n-dimensional array. Copies are cheap (shared storage);
// mutation goes through mutable_data(), which unshares first, so tensors
// behave as immutable values once handed out.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, real value);
  static Tensor from_values(Shape shape, std::vector<real> values);
  static Tensor scalar(real value);
  // Zero-mean normal draws with variance 2/(fan_in+fan_out); fans inferred
  // from the shape (see infer_fans). Deterministic in (seed, stream).
  static Tensor xavier(Shape shape, std::uint64_t seed, std::uint64_t stream = 0);
  static Tensor xavier_fan(Shape shape, std::size_t fan_in, std::size_t fan_out,
                           std::uint64_t seed, std::uint64_t stream = 0);

  bool defined() const { return buf_ != nullptr; }
  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t numel() const { return buf_ ? buf_->size() : 0; }
  std::size_t extent(std::size_t axis) const;

  const real* data() const;
  real* mutable_data();
  std::span<const real> values() const;
  real at(std::size_t flat_index) const;
  real item() const;

  Tensor reshaped(Shape new_shape) const;  // shares storage
  Tensor clone() const;

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool all_finite() const;
  bool bitwise_equal(const Tensor& other) const;

  // fan_in/fan_out rule: rank-2 [in,out] -> (in,out); rank-4 [out,in,kh,kw]
  // conv kernels -> (in*kh*kw, out*kh*kw); anything else -> (numel, numel).
  static std::pair<std::size_t, std::size_t> infer_fans(const Shape& shape);

 private:
  Tensor(Shape shape, std::shared_ptr<std::vector<real>> buf)
      : shape_(std::move(shape)), buf_(std::move(buf)) {}

  Shape shape_;
  std::shared_ptr<std::vector<real>> buf_;
};

// Element-wise operations with trailing-dimension broadcasting.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);  // non-finite result -> NumericError
Tensor maximum(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);
Tensor exp(const Tensor& a);  // overflow -> NumericError
Tensor sigmoid(const Tensor& a);
Tensor scale(const Tensor& a, real s);
Tensor add_scalar(const Tensor& a, real s);

Shape broadcast_shape(const Shape& a, const Shape& b);
// Sums `g` over the axes that broadcasting expanded, back to `target`.
Tensor reduce_to_shape(const Tensor& g, const Shape& target);

Tensor matmul(const Tensor& a, const Tensor& b);  // rank-2 only

Tensor sum(const Tensor& t, std::size_t axis);
Tensor mean(const Tensor& t, std::size_t axis);
Tensor argmax(const Tensor& t, std::size_t axis);  // smallest index wins ties
real sum_all(const Tensor& t);
real mean_all(const Tensor& t);

// I.i.d. standard-normal / uniform(0,1) draws; a pure function of
// (shape, key, stream_seed) -- bit-identical at any thread count.
Tensor sample_standard_normal(const Shape& shape, const NoiseKey& key,
                              std::uint64_t stream_seed = 0);
Tensor sample_uniform(const Shape& shape, const NoiseKey& key,
                      std::uint64_t stream_seed = 0);

}  // namespace probact
