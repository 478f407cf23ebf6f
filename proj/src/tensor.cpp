#include "partyvec/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "partyvec/error.hpp"

namespace partyvec {

std::size_t shape_numel(std::span<const std::size_t> shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

namespace {

std::string shape_str(std::span<const std::size_t> shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<float> data, std::string name)
    : shape_(std::move(shape)), data_(std::move(data)), name_(std::move(name)) {
  if (shape_numel(shape_) != data_.size()) {
    fail(ErrorCode::ShapeMismatch, "tensor '" + name_ + "' shape " + shape_str(shape_) + " holds " +
                                       std::to_string(shape_numel(shape_)) + " elements, got " +
                                       std::to_string(data_.size()));
  }
  for (float x : data_) {
    if (!std::isfinite(x)) fail(ErrorCode::NonFiniteValue, "tensor '" + name_ + "' contains NaN/Inf");
  }
}

Tensor Tensor::zeros(std::vector<std::size_t> shape, std::string name) {
  const std::size_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<float>(n, 0.0f), std::move(name));
}

Tensor Tensor::from_vector(std::vector<float> data, std::string name) {
  const std::size_t n = data.size();
  return Tensor({n}, std::move(data), std::move(name));
}

Tensor Tensor::from_doubles(std::span<const double> data, std::string name) {
  std::vector<float> f(data.begin(), data.end());
  return from_vector(std::move(f), std::move(name));
}

std::size_t Tensor::rows() const {
  if (rank() != 2) fail(ErrorCode::ShapeMismatch, "rows() on rank-" + std::to_string(rank()) + " tensor");
  return shape_[0];
}

std::size_t Tensor::cols() const {
  if (rank() != 2) fail(ErrorCode::ShapeMismatch, "cols() on rank-" + std::to_string(rank()) + " tensor");
  return shape_[1];
}

float Tensor::at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

std::span<const float> Tensor::row(std::size_t r) const {
  const std::size_t c = cols();
  if (r >= shape_[0]) fail(ErrorCode::ShapeMismatch, "row " + std::to_string(r) + " out of range");
  return std::span<const float>(data_).subspan(r * c, c);
}

Tensor Tensor::renamed(std::string name) const {
  Tensor t = *this;
  t.name_ = std::move(name);
  return t;
}

bool operator==(const Tensor& a, const Tensor& b) {
  return a.shape_ == b.shape_ && a.data_ == b.data_;
}

double dot(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) {
    fail(ErrorCode::ShapeMismatch, "dot of lengths " + std::to_string(a.size()) + " and " + std::to_string(b.size()));
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return acc;
}

double norm(std::span<const float> a) { return std::sqrt(dot(a, a)); }

std::vector<float> matvec(const Tensor& m, std::span<const float> v) {
  if (m.rank() != 2 || m.cols() != v.size()) {
    fail(ErrorCode::ShapeMismatch,
         "matvec " + shape_str(m.shape()) + " x [" + std::to_string(v.size()) + "]");
  }
  std::vector<float> out(m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i) out[i] = static_cast<float>(dot(m.row(i), v));
  return out;
}

Tensor matvec(const Tensor& m, const Tensor& v) {
  if (v.rank() != 1) fail(ErrorCode::ShapeMismatch, "matvec expects a rank-1 vector");
  return Tensor::from_vector(matvec(m, v.data()));
}

double cosine(std::span<const float> a, std::span<const float> b) {
  const double ab = dot(a, b);
  const double na = norm(a);
  const double nb = norm(b);
  if (na == 0.0 || nb == 0.0) fail(ErrorCode::ZeroNormVector, "cosine with a zero-norm vector");
  return std::clamp(ab / (na * nb), -1.0, 1.0);
}

double cosine(const Tensor& a, const Tensor& b) { return cosine(a.data(), b.data()); }

}  // namespace partyvec
