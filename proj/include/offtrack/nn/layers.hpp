#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "offtrack/nn/tensor.hpp"

namespace offtrack::nn {

// Layers cache what their backward pass needs from the most recent forward
// call, so one instance serves one forward/backward at a time.

class Linear {
 public:
  Linear() = default;
  Linear(const std::string& name, Eigen::Index in, Eigen::Index out)
      : weight(name + ".weight", in, out), bias(name + ".bias", 1, out) {}

  void init(std::mt19937_64& rng) {
    init_uniform(weight, weight.rows(), rng);
    init_uniform(bias, weight.rows(), rng);
  }

  Eigen::Index in_features() const { return weight.rows(); }
  Eigen::Index out_features() const { return weight.cols(); }

  Matrix forward(const Matrix& x) {
    check_cols(x, in_features(), weight.name);
    x_ = x;
    return apply(x);
  }

  /// Forward without caching, for inference-only callers.
  Matrix apply(const Matrix& x) const {
    Matrix y(x.rows(), out_features());
    y.noalias() = x * weight.value;
    y.rowwise() += bias.value.row(0);
    return y;
  }

  Matrix backward(const Matrix& dy) {
    weight.grad.noalias() += x_.transpose() * dy;
    bias.grad.row(0) += dy.colwise().sum();
    Matrix dx(dy.rows(), in_features());
    dx.noalias() = dy * weight.value.transpose();
    return dx;
  }

  TensorRefs params() { return {&weight, &bias}; }

  Tensor weight;  // in x out
  Tensor bias;    // 1 x out

 private:
  Matrix x_;
};

class ReLU {
 public:
  Matrix forward(const Matrix& x) {
    mask_ = (x.array() > 0.0).cast<double>().matrix();
    return x.cwiseMax(0.0);
  }
  Matrix backward(const Matrix& dy) const { return dy.cwiseProduct(mask_); }

 private:
  Matrix mask_;
};

/// Batch normalization over rows. Training mode uses batch statistics when
/// at least two rows are present and running statistics otherwise.
class BatchNorm {
 public:
  static constexpr double kEps = 1e-5;
  static constexpr double kMomentum = 0.1;

  BatchNorm() = default;
  BatchNorm(const std::string& name, Eigen::Index features)
      : gamma(name + ".gamma", 1, features),
        beta(name + ".beta", 1, features),
        running_mean(name + ".running_mean", 1, features, false),
        running_var(name + ".running_var", 1, features, false) {
    gamma.value.setOnes();
    running_var.value.setOnes();
  }

  bool training = true;

  Matrix forward(const Matrix& x) {
    check_cols(x, gamma.cols(), gamma.name);
    const Eigen::Index n = x.rows();
    batch_mode_ = training && n >= 2;
    RowVector mean, var;
    if (batch_mode_) {
      mean = x.colwise().mean();
      var = (x.rowwise() - mean).array().square().colwise().mean().matrix();
      running_mean.value.row(0) = (1 - kMomentum) * running_mean.value.row(0) + kMomentum * mean;
      const double unbias = static_cast<double>(n) / static_cast<double>(n - 1);
      running_var.value.row(0) =
          (1 - kMomentum) * running_var.value.row(0) + kMomentum * unbias * var;
    } else {
      mean = running_mean.value.row(0);
      var = running_var.value.row(0);
    }
    inv_std_ = (var.array() + kEps).rsqrt().matrix();
    xhat_ = (x.rowwise() - mean).array().rowwise() * inv_std_.array();
    Matrix y = xhat_.array().rowwise() * gamma.value.row(0).array();
    y.rowwise() += beta.value.row(0);
    return y;
  }

  Matrix backward(const Matrix& dy) {
    gamma.grad.row(0) += dy.cwiseProduct(xhat_).colwise().sum();
    beta.grad.row(0) += dy.colwise().sum();
    const Matrix dxhat = dy.array().rowwise() * gamma.value.row(0).array();
    if (!batch_mode_) return dxhat.array().rowwise() * inv_std_.array();
    const double n = static_cast<double>(dy.rows());
    const RowVector sum_d = dxhat.colwise().sum();
    const RowVector sum_dx = dxhat.cwiseProduct(xhat_).colwise().sum();
    Matrix dx = (n * dxhat).rowwise() - sum_d;
    dx -= (xhat_.array().rowwise() * sum_dx.array()).matrix();
    return (dx.array().rowwise() * (inv_std_.array() / n)).matrix();
  }

  TensorRefs params() { return {&gamma, &beta, &running_mean, &running_var}; }

  Tensor gamma, beta, running_mean, running_var;

 private:
  bool batch_mode_ = false;
  RowVector inv_std_;
  Matrix xhat_;
};

/// Linear -> ReLU -> BN, the repeated unit of the point encoders.
class LinearReluBn {
 public:
  LinearReluBn() = default;
  LinearReluBn(const std::string& name, Eigen::Index in, Eigen::Index out)
      : linear(name + ".fc", in, out), bn(name + ".bn", out) {}

  void init(std::mt19937_64& rng) { linear.init(rng); }
  void set_training(bool t) { bn.training = t; }

  Matrix forward(const Matrix& x) { return bn.forward(relu_.forward(linear.forward(x))); }
  Matrix backward(const Matrix& dy) {
    return linear.backward(relu_.backward(bn.backward(dy)));
  }

  TensorRefs params() {
    TensorRefs p = linear.params();
    for (Tensor* t : bn.params()) p.push_back(t);
    return p;
  }

  Linear linear;
  BatchNorm bn;

 private:
  ReLU relu_;
};

/// Max over consecutive groups of `group` rows: (S*group) x F -> S x F.
class SegmentMaxPool {
 public:
  Matrix forward(const Matrix& x, Eigen::Index group) {
    if (group <= 0 || x.rows() % group != 0)
      throw ShapeError("max pool: " + std::to_string(x.rows()) + " rows not divisible by " +
                       std::to_string(group));
    rows_ = x.rows();
    const Eigen::Index segments = x.rows() / group;
    Matrix y(segments, x.cols());
    argmax_.resize(segments, x.cols());
    for (Eigen::Index s = 0; s < segments; ++s) {
      const Eigen::Index base = s * group;
      y.row(s) = x.row(base);
      argmax_.row(s).setConstant(base);
      for (Eigen::Index r = base + 1; r < base + group; ++r) {
        for (Eigen::Index c = 0; c < x.cols(); ++c) {
          if (x(r, c) > y(s, c)) {
            y(s, c) = x(r, c);
            argmax_(s, c) = r;
          }
        }
      }
    }
    return y;
  }

  Matrix backward(const Matrix& dy) const {
    Matrix dx = Matrix::Zero(rows_, dy.cols());
    for (Eigen::Index s = 0; s < dy.rows(); ++s)
      for (Eigen::Index c = 0; c < dy.cols(); ++c) dx(argmax_(s, c), c) += dy(s, c);
    return dx;
  }

 private:
  Eigen::Index rows_ = 0;
  Eigen::Matrix<Eigen::Index, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> argmax_;
};

inline TensorRefs concat_params(std::initializer_list<TensorRefs> groups) {
  TensorRefs out;
  for (const auto& g : groups) out.insert(out.end(), g.begin(), g.end());
  return out;
}

}  // namespace offtrack::nn
