#pragma once

#include <cmath>
#include <numbers>
#include <vector>

#include "offtrack/nn/tensor.hpp"

namespace offtrack::nn {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

/// Adam with bias correction. Moments are stored per tensor in the order of
/// the parameter list handed to the first step; frozen tensors are skipped.
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  void step(const TensorRefs& params, double lr) {
    if (m_.empty()) {
      for (const Tensor* p : params) {
        m_.push_back(Matrix::Zero(p->rows(), p->cols()));
        v_.push_back(Matrix::Zero(p->rows(), p->cols()));
      }
    }
    if (m_.size() != params.size()) throw ShapeError("adam: parameter list changed");
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      Tensor& p = *params[i];
      if (!p.trainable) continue;
      Matrix g = p.grad;
      if (cfg_.weight_decay != 0.0) g += cfg_.weight_decay * p.value;
      m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
      v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g.cwiseAbs2();
      p.value.array() -=
          lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + cfg_.eps);
    }
  }

  long steps() const { return t_; }
  const Matrix& first_moment(std::size_t i) const { return m_[i]; }
  const Matrix& second_moment(std::size_t i) const { return v_[i]; }

 private:
  AdamConfig cfg_;
  long t_ = 0;
  std::vector<Matrix> m_, v_;
};

/// One-cycle schedule: linear warmup from peak/10 to peak over the first
/// `warmup` fraction of steps, then cosine decay to peak/100.
inline double one_cycle_lr(long step, long total, double peak, double warmup = 0.3) {
  if (total <= 1) return peak;
  const double x = static_cast<double>(step) / static_cast<double>(total - 1);
  const double start = peak / 10.0;
  const double end = peak / 100.0;
  if (x < warmup) return start + (peak - start) * (x / warmup);
  const double y = (x - warmup) / (1.0 - warmup);
  return end + (peak - end) * 0.5 * (1.0 + std::cos(std::numbers::pi * y));
}

/// Scales gradients so their global L2 norm is at most max_norm; returns the
/// norm before scaling.
inline double clip_grad_norm(const TensorRefs& params, double max_norm) {
  double sq = 0;
  for (const Tensor* p : params)
    if (p->trainable) sq += p->grad.squaredNorm();
  const double norm = std::sqrt(sq);
  if (max_norm > 0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (Tensor* p : params)
      if (p->trainable) p->grad *= s;
  }
  return norm;
}

inline bool grads_finite(const TensorRefs& params) {
  for (const Tensor* p : params)
    if (!p->grad.allFinite()) return false;
  return true;
}

}  // namespace offtrack::nn
