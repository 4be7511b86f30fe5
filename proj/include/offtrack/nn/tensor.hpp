#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "offtrack/common.hpp"

namespace offtrack::nn {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;

/// Dense 2-D float64 array with a same-shape gradient. Higher-rank data is
/// carried as stacked rows (e.g. [t, P, F] as (t*P) x F) with the grouping
/// passed alongside.
struct Tensor {
  std::string name;
  Matrix value;
  Matrix grad;
  bool trainable = true;

  Tensor() = default;
  Tensor(std::string n, Eigen::Index rows, Eigen::Index cols, bool train = true)
      : name(std::move(n)),
        value(Matrix::Zero(rows, cols)),
        grad(Matrix::Zero(rows, cols)),
        trainable(train) {}

  Eigen::Index rows() const { return value.rows(); }
  Eigen::Index cols() const { return value.cols(); }
  Eigen::Index size() const { return value.size(); }
  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

using TensorRefs = std::vector<Tensor*>;

inline void zero_grads(const TensorRefs& ts) {
  for (Tensor* t : ts) t->zero_grad();
}

inline std::size_t parameter_count(const TensorRefs& ts) {
  std::size_t n = 0;
  for (const Tensor* t : ts)
    if (t->trainable) n += static_cast<std::size_t>(t->size());
  return n;
}

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)).
inline void init_uniform(Tensor& t, Eigen::Index fan_in, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> u(-bound, bound);
  for (Eigen::Index i = 0; i < t.value.size(); ++i) t.value.data()[i] = u(rng);
}

inline void check_cols(const Matrix& x, Eigen::Index expected, const std::string& where) {
  if (x.cols() != expected)
    throw ShapeError(where + ": expected width " + std::to_string(expected) + ", got " +
                     std::to_string(x.cols()));
}

}  // namespace offtrack::nn
