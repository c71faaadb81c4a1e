#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace langseg::nn {

// Dense row-major double tensor. Most of the model works on 2-D matrices
// (tokens x channels); spatial grids are carried as (H*W, C) with the grid
// dims tracked by the caller.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    v_.assign(count(shape_), 0.0);
  }
  Tensor(std::vector<int> shape, std::vector<double> data)
      : shape_(std::move(shape)), v_(std::move(data)) {
    if (static_cast<std::int64_t>(v_.size()) != count(shape_))
      throw std::invalid_argument("tensor data does not match shape");
  }

  static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }
  static Tensor full(std::vector<int> shape, double value) {
    Tensor t(std::move(shape));
    for (auto& x : t.v_) x = value;
    return t;
  }
  static Tensor scalar(double value) { return Tensor({1, 1}, {value}); }
  static Tensor randn(std::vector<int> shape, std::mt19937_64& rng, double stddev) {
    Tensor t(std::move(shape));
    std::normal_distribution<double> d(0.0, stddev);
    for (auto& x : t.v_) x = d(rng);
    return t;
  }

  const std::vector<int>& shape() const { return shape_; }
  int dim(std::size_t i) const { return shape_.at(i); }
  std::int64_t size() const { return static_cast<std::int64_t>(v_.size()); }
  bool empty() const { return v_.empty(); }

  int rows() const { check2d(); return shape_[0]; }
  int cols() const { check2d(); return shape_[1]; }

  double* data() { return v_.data(); }
  const double* data() const { return v_.data(); }
  double& operator[](std::int64_t i) { return v_[i]; }
  double operator[](std::int64_t i) const { return v_[i]; }
  double& at(int r, int c) { return v_[static_cast<std::int64_t>(r) * cols() + c]; }
  double at(int r, int c) const { return v_[static_cast<std::int64_t>(r) * cols() + c]; }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  static std::int64_t count(const std::vector<int>& shape) {
    std::int64_t n = 1;
    for (int d : shape) {
      if (d < 0) throw std::invalid_argument("negative tensor dim");
      n *= d;
    }
    return n;
  }

 private:
  void check2d() const {
    if (shape_.size() != 2) throw std::logic_error("tensor is not 2-D");
  }

  std::vector<int> shape_;
  std::vector<double> v_;
};

std::string shape_str(const Tensor& t);

}  // namespace langseg::nn
