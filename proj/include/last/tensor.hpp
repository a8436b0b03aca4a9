#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "last/errors.hpp"

namespace last {

// Global element type. Tests and the theory harness require the 64-bit build.
#ifdef LAST_REAL_FLOAT
using real = float;
#else
using real = double;
#endif

inline const char* dtype_tag() { return sizeof(real) == 8 ? "f64" : "f32"; }

std::size_t shape_numel(const std::vector<std::size_t>& shape);
std::string shape_str(const std::vector<std::size_t>& shape);

// Dense row-major array. Rank 0 is a scalar with one element.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<real> data;

  Tensor() = default;
  Tensor(std::vector<std::size_t> s, std::vector<real> d);

  static Tensor zeros(std::vector<std::size_t> shape);
  static Tensor full(std::vector<std::size_t> shape, real value);
  static Tensor scalar(real value);

  std::size_t numel() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  bool is_scalar() const { return shape.empty(); }

  std::size_t rows() const;
  std::size_t cols() const;

  real& operator[](std::size_t i) { return data[i]; }
  real operator[](std::size_t i) const { return data[i]; }
  real& at(std::size_t r, std::size_t c);
  real at(std::size_t r, std::size_t c) const;

  bool same_shape(const Tensor& other) const { return shape == other.shape; }
  bool all_finite() const;
};

// Row-wise softmax computed in log space with max subtraction.
Tensor softmax_rows(const Tensor& logits);

// Row-wise log-softmax, same stabilization.
Tensor log_softmax_rows(const Tensor& logits);

}  // namespace last
