#pragma once

#include <atomic>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "offtrack/nn/layers.hpp"

namespace offtrack::nn {

inline constexpr Eigen::Index kModelWidth = 256;
inline constexpr int kHeadCount = 4;

/// Rows whose mask excluded every key; their attention output is zero.
inline std::atomic<std::uint64_t>& fully_masked_rows() {
  static std::atomic<std::uint64_t> counter{0};
  return counter;
}

/// Boolean key mask for one group: allowed(i, j) says query row i may attend
/// to key row j. Absent means all keys allowed.
using AttentionMask = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Multi-head attention without an output projection:
///   out_i = [softmax_j((Wq q_i)·(Wk k_j) / s) (Wv v_j)]_heads + q_i
/// with s = sqrt(D / heads) when `scaled` and 1 otherwise. Queries and keys
/// are split into independent groups (one per sample in a batch).
class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(const std::string& name, Eigen::Index width, int heads)
      : wq(name + ".wq", width, width),
        wk(name + ".wk", width, width),
        wv(name + ".wv", width, width),
        heads_(heads) {
    if (width % heads != 0) throw ShapeError(name + ": head count must divide width");
  }

  bool scaled = true;

  void init(std::mt19937_64& rng) {
    wq.init(rng);
    wk.init(rng);
    wv.init(rng);
  }

  /// q: sum(q_rows) x D, kv: sum(kv_rows) x D; q_rows/kv_rows give the group
  /// sizes. masks, when non-empty, hold one mask per group (empty matrix for
  /// "no mask").
  Matrix forward(const Matrix& q, const Matrix& kv, const std::vector<Eigen::Index>& q_rows,
                 const std::vector<Eigen::Index>& kv_rows,
                 const std::vector<AttentionMask>& masks = {}) {
    check_cols(q, wq.in_features(), wq.weight.name);
    check_cols(kv, wk.in_features(), wk.weight.name);
    q_rows_ = q_rows;
    kv_rows_ = kv_rows;
    const Matrix qp = wq.forward(q);
    const Matrix kp = wk.forward(kv);
    const Matrix vp = wv.forward(kv);
    qp_ = qp;
    kp_ = kp;
    vp_ = vp;

    const Eigen::Index d = q.cols();
    const Eigen::Index dh = d / heads_;
    const double inv_scale = scaled ? 1.0 / std::sqrt(static_cast<double>(dh)) : 1.0;
    Matrix out = q;  // residual
    weights_.assign(q_rows.size() * heads_, Matrix());

    Eigen::Index qoff = 0, koff = 0;
    for (std::size_t g = 0; g < q_rows.size(); ++g) {
      const Eigen::Index nq = q_rows[g], nk = kv_rows[g];
      const AttentionMask* mask = (g < masks.size() && masks[g].size() > 0) ? &masks[g] : nullptr;
      for (int h = 0; h < heads_; ++h) {
        const auto qh = qp.block(qoff, h * dh, nq, dh);
        const auto kh = kp.block(koff, h * dh, nk, dh);
        const auto vh = vp.block(koff, h * dh, nk, dh);
        Matrix logits = (qh * kh.transpose()) * inv_scale;
        Matrix w(nq, nk);
        for (Eigen::Index i = 0; i < nq; ++i) {
          double mx = -std::numeric_limits<double>::infinity();
          for (Eigen::Index j = 0; j < nk; ++j)
            if (!mask || (*mask)(i, j)) mx = std::max(mx, logits(i, j));
          if (!std::isfinite(mx)) {
            w.row(i).setZero();
            if (h == 0) fully_masked_rows().fetch_add(1, std::memory_order_relaxed);
            continue;
          }
          double sum = 0;
          for (Eigen::Index j = 0; j < nk; ++j) {
            const double e = (!mask || (*mask)(i, j)) ? std::exp(logits(i, j) - mx) : 0.0;
            w(i, j) = e;
            sum += e;
          }
          w.row(i) /= sum;
        }
        out.block(qoff, h * dh, nq, dh).noalias() += w * vh;
        weights_[g * heads_ + h] = std::move(w);
      }
      qoff += nq;
      koff += nk;
    }
    return out;
  }

  /// Returns (dq, dkv). dq includes the residual path.
  std::pair<Matrix, Matrix> backward(const Matrix& dout) {
    const Eigen::Index d = dout.cols();
    const Eigen::Index dh = d / heads_;
    const double inv_scale = scaled ? 1.0 / std::sqrt(static_cast<double>(dh)) : 1.0;
    Matrix dqp = Matrix::Zero(qp_.rows(), d);
    Matrix dkp = Matrix::Zero(kp_.rows(), d);
    Matrix dvp = Matrix::Zero(vp_.rows(), d);
    Eigen::Index qoff = 0, koff = 0;
    for (std::size_t g = 0; g < q_rows_.size(); ++g) {
      const Eigen::Index nq = q_rows_[g], nk = kv_rows_[g];
      for (int h = 0; h < heads_; ++h) {
        const Matrix& w = weights_[g * heads_ + h];
        const auto dy = dout.block(qoff, h * dh, nq, dh);
        const auto qh = qp_.block(qoff, h * dh, nq, dh);
        const auto kh = kp_.block(koff, h * dh, nk, dh);
        const auto vh = vp_.block(koff, h * dh, nk, dh);
        dvp.block(koff, h * dh, nk, dh).noalias() += w.transpose() * dy;
        const Matrix dw = dy * vh.transpose();
        // softmax backward; masked entries have w = 0 and so get zero.
        const Eigen::VectorXd rowdot = (dw.cwiseProduct(w)).rowwise().sum();
        Matrix dlogits = w.cwiseProduct(dw.colwise() - rowdot);
        dlogits *= inv_scale;
        dqp.block(qoff, h * dh, nq, dh).noalias() += dlogits * kh;
        dkp.block(koff, h * dh, nk, dh).noalias() += dlogits.transpose() * qh;
      }
      qoff += nq;
      koff += nk;
    }
    Matrix dq = dout + wq.backward(dqp);
    Matrix dkv = wk.backward(dkp) + wv.backward(dvp);
    return {std::move(dq), std::move(dkv)};
  }

  /// Attention weights of the last forward for group g, head h.
  const Matrix& weights(std::size_t g, int h) const { return weights_[g * heads_ + h]; }
  int heads() const { return heads_; }

  TensorRefs params() { return concat_params({wq.params(), wk.params(), wv.params()}); }

  Linear wq, wk, wv;

 private:
  int heads_ = kHeadCount;
  std::vector<Eigen::Index> q_rows_, kv_rows_;
  Matrix qp_, kp_, vp_;
  std::vector<Matrix> weights_;
};

/// Linear -> ReLU -> Linear with a residual connection.
class FeedForward {
 public:
  FeedForward() = default;
  FeedForward(const std::string& name, Eigen::Index width)
      : fc1(name + ".fc1", width, width), fc2(name + ".fc2", width, width) {}

  void init(std::mt19937_64& rng) {
    fc1.init(rng);
    fc2.init(rng);
  }

  Matrix forward(const Matrix& x) { return x + fc2.forward(relu_.forward(fc1.forward(x))); }
  Matrix backward(const Matrix& dy) {
    return dy + fc1.backward(relu_.backward(fc2.backward(dy)));
  }

  TensorRefs params() { return concat_params({fc1.params(), fc2.params()}); }

  Linear fc1, fc2;

 private:
  ReLU relu_;
};

/// One decoder layer: self-attention over the queries, cross-attention to
/// the point features, then the feed-forward block.
class DecoderLayer {
 public:
  DecoderLayer() = default;
  DecoderLayer(const std::string& name, Eigen::Index width, int heads)
      : self_attn(name + ".self", width, heads),
        cross_attn(name + ".cross", width, heads),
        ffn(name + ".ffn", width) {}

  void init(std::mt19937_64& rng) {
    self_attn.init(rng);
    cross_attn.init(rng);
    ffn.init(rng);
  }

  void set_scaled(bool s) {
    self_attn.scaled = s;
    cross_attn.scaled = s;
  }

  Matrix forward(const Matrix& q, const Matrix& memory, const std::vector<Eigen::Index>& q_rows,
                 const std::vector<Eigen::Index>& mem_rows,
                 const std::vector<AttentionMask>& self_masks = {}) {
    const Matrix sa = self_attn.forward(q, q, q_rows, q_rows, self_masks);
    const Matrix ca = cross_attn.forward(sa, memory, q_rows, mem_rows);
    return ffn.forward(ca);
  }

  /// Returns (dq, dmemory).
  std::pair<Matrix, Matrix> backward(const Matrix& dy) {
    const Matrix dca = ffn.backward(dy);
    auto [dsa, dmem] = cross_attn.backward(dca);
    auto [dq_res, dq_kv] = self_attn.backward(dsa);
    return {dq_res + dq_kv, std::move(dmem)};
  }

  TensorRefs params() {
    return concat_params({self_attn.params(), cross_attn.params(), ffn.params()});
  }

  MultiHeadAttention self_attn, cross_attn;
  FeedForward ffn;
};

}  // namespace offtrack::nn
