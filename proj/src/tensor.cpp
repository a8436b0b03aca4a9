#include "last/tensor.hpp"

#include <algorithm>
#include <cmath>

namespace last {

std::size_t shape_numel(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

std::string shape_str(const std::vector<std::size_t>& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

Tensor::Tensor(std::vector<std::size_t> s, std::vector<real> d)
    : shape(std::move(s)), data(std::move(d)) {
  if (data.size() != shape_numel(shape)) {
    throw ShapeError("tensor: element count " + std::to_string(data.size()) +
                     " does not match shape " + shape_str(shape));
  }
}

Tensor Tensor::zeros(std::vector<std::size_t> shape) {
  std::size_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<real>(n, real(0)));
}

Tensor Tensor::full(std::vector<std::size_t> shape, real value) {
  std::size_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<real>(n, value));
}

Tensor Tensor::scalar(real value) { return Tensor({}, {value}); }

std::size_t Tensor::rows() const {
  if (rank() != 2) throw ShapeError("tensor: rows() needs rank 2, got " + shape_str(shape));
  return shape[0];
}

std::size_t Tensor::cols() const {
  if (rank() != 2) throw ShapeError("tensor: cols() needs rank 2, got " + shape_str(shape));
  return shape[1];
}

real& Tensor::at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
real Tensor::at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

bool Tensor::all_finite() const {
  return std::all_of(data.begin(), data.end(), [](real v) { return std::isfinite(v); });
}

Tensor log_softmax_rows(const Tensor& logits) {
  std::size_t b = logits.rows(), c = logits.cols();
  Tensor out = Tensor::zeros({b, c});
  for (std::size_t r = 0; r < b; ++r) {
    real m = logits.at(r, 0);
    for (std::size_t j = 1; j < c; ++j) m = std::max(m, logits.at(r, j));
    real z = 0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(logits.at(r, j) - m);
    real lse = m + std::log(z);
    for (std::size_t j = 0; j < c; ++j) out.at(r, j) = logits.at(r, j) - lse;
  }
  return out;
}

Tensor softmax_rows(const Tensor& logits) {
  Tensor out = log_softmax_rows(logits);
  for (real& v : out.data) v = std::exp(v);
  return out;
}

}  // namespace last
