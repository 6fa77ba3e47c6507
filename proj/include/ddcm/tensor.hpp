#ifndef DDCM_TENSOR_HPP
#define DDCM_TENSOR_HPP

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "ddcm/errors.hpp"

namespace ddcm {

using Index = Eigen::Index;

template <typename Scalar>
using VecX = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

/// (batch, channels, rows, cols) of a rank-4 activation/weight tensor.
struct TensorShape {
  Index n = 0, c = 0, h = 0, w = 0;

  Index count() const { return n * c * h * w; }

  bool operator==(const TensorShape& o) const = default;

  std::string str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," +
           std::to_string(h) + "," + std::to_string(w) + ")";
  }
};

/// Dense rank-4 array in NCHW row-major order. Values are immutable by
/// convention once an op has produced them; ops return fresh tensors.
template <typename Scalar>
class Tensor {
 public:
  using Storage = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

  Tensor() = default;

  explicit Tensor(TensorShape s) : shape_(s) {
    if (s.n < 1 || s.c < 1 || s.h < 1 || s.w < 1)
      throw ShapeError("tensor dims must all be >= 1, got " + s.str());
    data_ = Storage::Zero(s.count());
  }

  Tensor(Index n, Index c, Index h, Index w) : Tensor(TensorShape{n, c, h, w}) {}

  const TensorShape& shape() const { return shape_; }
  Index count() const { return data_.size(); }

  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }

  /// Whole buffer as an Eigen array expression.
  Storage& array() { return data_; }
  const Storage& array() const { return data_; }

  Scalar& operator()(Index n, Index c, Index y, Index x) {
    return data_[offset(n, c, y, x)];
  }
  Scalar operator()(Index n, Index c, Index y, Index x) const {
    return data_[offset(n, c, y, x)];
  }

  Index offset(Index n, Index c, Index y, Index x) const {
    return ((n * shape_.c + c) * shape_.h + y) * shape_.w + x;
  }

  /// One (n, c) spatial plane as a flat h*w map.
  Eigen::Map<VecX<Scalar>> plane(Index n, Index c) {
    return {data_.data() + offset(n, c, 0, 0), shape_.h * shape_.w};
  }
  Eigen::Map<const VecX<Scalar>> plane(Index n, Index c) const {
    return {data_.data() + offset(n, c, 0, 0), shape_.h * shape_.w};
  }

  template <typename T>
  Tensor<T> cast() const {
    Tensor<T> out(shape_);
    out.array() = data_.template cast<T>();
    return out;
  }

  bool all_finite() const {
    return data_.isFinite().all();
  }

 private:
  TensorShape shape_;
  Storage data_;
};

/// Integer class-id map with shape (n, h, w); labels and predictions.
struct LabelMap {
  Index n = 0, h = 0, w = 0;
  std::vector<std::int32_t> v;

  LabelMap() = default;
  LabelMap(Index n_, Index h_, Index w_) : n(n_), h(h_), w(w_), v(static_cast<size_t>(n_ * h_ * w_), 0) {}

  Index count() const { return n * h * w; }
  std::int32_t& operator()(Index b, Index y, Index x) { return v[static_cast<size_t>((b * h + y) * w + x)]; }
  std::int32_t operator()(Index b, Index y, Index x) const { return v[static_cast<size_t>((b * h + y) * w + x)]; }

  bool operator==(const LabelMap& o) const = default;
};

template <typename Scalar>
Tensor<Scalar> concat_channels(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  if (sa.n != sb.n || sa.h != sb.h || sa.w != sb.w)
    throw ShapeError("concat_channels: mismatched shapes " + sa.str() + " vs " + sb.str());
  Tensor<Scalar> out(sa.n, sa.c + sb.c, sa.h, sa.w);
  const Index plane = sa.h * sa.w;
  for (Index n = 0; n < sa.n; ++n) {
    std::copy(a.data() + n * sa.c * plane, a.data() + (n + 1) * sa.c * plane,
              out.data() + n * (sa.c + sb.c) * plane);
    std::copy(b.data() + n * sb.c * plane, b.data() + (n + 1) * sb.c * plane,
              out.data() + (n * (sa.c + sb.c) + sa.c) * plane);
  }
  return out;
}

/// Channels [begin, begin+count) as a fresh tensor.
template <typename Scalar>
Tensor<Scalar> slice_channels(const Tensor<Scalar>& t, Index begin, Index count) {
  const auto& s = t.shape();
  if (begin < 0 || count < 1 || begin + count > s.c)
    throw ShapeError("slice_channels: range [" + std::to_string(begin) + "," +
                     std::to_string(begin + count) + ") out of " + std::to_string(s.c));
  Tensor<Scalar> out(s.n, count, s.h, s.w);
  const Index plane = s.h * s.w;
  for (Index n = 0; n < s.n; ++n)
    std::copy(t.data() + (n * s.c + begin) * plane, t.data() + (n * s.c + begin + count) * plane,
              out.data() + n * count * plane);
  return out;
}

/// Adjoint of concat: splits grad over the two original channel ranges.
template <typename Scalar>
std::pair<Tensor<Scalar>, Tensor<Scalar>> concat_channels_backward(
    const Tensor<Scalar>& grad_out, Index c_a, Index c_b) {
  const auto& s = grad_out.shape();
  if (c_a + c_b != s.c) throw ShapeError("concat_channels_backward: channel split mismatch");
  return {slice_channels(grad_out, 0, c_a), slice_channels(grad_out, c_a, c_b)};
}

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace ddcm

#endif  // DDCM_TENSOR_HPP
