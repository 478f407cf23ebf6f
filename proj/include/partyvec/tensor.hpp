#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace partyvec {

/// Dense row-major f32 tensor. Immutable once constructed; every public
/// constructor rejects NaN/Inf and shape/data disagreement.
class Tensor {
 public:
  Tensor() = default;
  Tensor(std::vector<std::size_t> shape, std::vector<float> data, std::string name = {});

  static Tensor zeros(std::vector<std::size_t> shape, std::string name = {});
  static Tensor from_vector(std::vector<float> data, std::string name = {});
  static Tensor from_doubles(std::span<const double> data, std::string name = {});

  const std::vector<std::size_t>& shape() const noexcept { return shape_; }
  std::span<const float> data() const noexcept { return data_; }
  const std::string& name() const noexcept { return name_; }

  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t numel() const noexcept { return data_.size(); }
  std::size_t rows() const;
  std::size_t cols() const;

  float operator[](std::size_t i) const { return data_[i]; }
  float at(std::size_t r, std::size_t c) const;
  std::span<const float> row(std::size_t r) const;

  Tensor renamed(std::string name) const;

  friend bool operator==(const Tensor& a, const Tensor& b);

 private:
  std::vector<std::size_t> shape_;
  std::vector<float> data_;
  std::string name_;
};

std::size_t shape_numel(std::span<const std::size_t> shape);

// Linear algebra kernels. Dot products accumulate in double and round once.
double dot(std::span<const float> a, std::span<const float> b);
double norm(std::span<const float> a);
Tensor matvec(const Tensor& m, const Tensor& v);
std::vector<float> matvec(const Tensor& m, std::span<const float> v);

/// Cosine similarity clamped to [-1, 1]. Throws ZeroNormVector.
double cosine(std::span<const float> a, std::span<const float> b);
double cosine(const Tensor& a, const Tensor& b);

}  // namespace partyvec
