#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "offtrack/nn/attention.hpp"
#include "offtrack/nn/checkpoint.hpp"
#include "offtrack/nn/encoders.hpp"
#include "offtrack/nn/gradcheck.hpp"
#include "offtrack/nn/optim.hpp"
#include "offtrack/refine/models.hpp"
#include "model_gradcases.hpp"

using namespace offtrack;
using nn::Matrix;

namespace {

Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

// Straight-line references used as oracles.

Matrix ref_linear(const Matrix& x, const nn::Linear& l) {
  Matrix y(x.rows(), l.out_features());
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index j = 0; j < l.out_features(); ++j) {
      double s = l.bias.value(0, j);
      for (Eigen::Index k = 0; k < x.cols(); ++k) s += x(i, k) * l.weight.value(k, j);
      y(i, j) = s;
    }
  return y;
}

Matrix ref_relu_bn_eval(const Matrix& x, const nn::BatchNorm& bn) {
  Matrix y = x;
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      const double r = std::max(0.0, x(i, j));
      y(i, j) = (r - bn.running_mean.value(0, j)) / std::sqrt(bn.running_var.value(0, j) + 1e-5) *
                    bn.gamma.value(0, j) +
                bn.beta.value(0, j);
    }
  return y;
}

Matrix ref_unit(const Matrix& x, const nn::LinearReluBn& u) {
  return ref_relu_bn_eval(ref_linear(x, u.linear), u.bn);
}

Matrix ref_maxpool(const Matrix& x, Eigen::Index group) {
  Matrix y(x.rows() / group, x.cols());
  for (Eigen::Index s = 0; s < y.rows(); ++s)
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      double m = -1e300;
      for (Eigen::Index r = 0; r < group; ++r) m = std::max(m, x(s * group + r, c));
      y(s, c) = m;
    }
  return y;
}

Matrix ref_attention(const Matrix& q, const Matrix& kv, const nn::MultiHeadAttention& a,
                     const nn::AttentionMask* mask) {
  const Matrix qp = ref_linear(q, a.wq), kp = ref_linear(kv, a.wk), vp = ref_linear(kv, a.wv);
  const Eigen::Index d = q.cols(), dh = d / a.heads();
  Matrix out = q;
  for (int h = 0; h < a.heads(); ++h) {
    for (Eigen::Index i = 0; i < q.rows(); ++i) {
      std::vector<double> logit(kv.rows());
      double mx = -INFINITY;
      for (Eigen::Index j = 0; j < kv.rows(); ++j) {
        double s = 0;
        for (Eigen::Index k = 0; k < dh; ++k) s += qp(i, h * dh + k) * kp(j, h * dh + k);
        logit[j] = s / std::sqrt(static_cast<double>(dh));
        if (!mask || (*mask)(i, j)) mx = std::max(mx, logit[j]);
      }
      if (!std::isfinite(mx)) continue;
      double z = 0;
      for (Eigen::Index j = 0; j < kv.rows(); ++j)
        if (!mask || (*mask)(i, j)) z += std::exp(logit[j] - mx);
      for (Eigen::Index j = 0; j < kv.rows(); ++j) {
        if (mask && !(*mask)(i, j)) continue;
        const double w = std::exp(logit[j] - mx) / z;
        for (Eigen::Index k = 0; k < dh; ++k) out(i, h * dh + k) += w * vp(j, h * dh + k);
      }
    }
  }
  return out;
}

template <typename Model>
void set_eval(Model& m) {
  m.set_training(false);
}

}  // namespace

TEST(Linear, SquaredLossGradCheckIsExact) {
  std::mt19937_64 rng(1);
  nn::Linear l("fc", 5, 4);
  l.init(rng);
  Matrix x = random_matrix(7, 5, rng);
  const Matrix target = random_matrix(7, 4, rng);
  auto loss = [&] { return 0.5 * (l.apply(x) - target).squaredNorm(); };
  l.weight.zero_grad();
  l.bias.zero_grad();
  const Matrix dx = l.backward((l.forward(x) - target));
  std::vector<Matrix> grads;
  auto targets = nn::param_targets(l.params(), grads);
  targets.push_back({"x", &x, &dx});
  const auto r = nn::grad_check(loss, targets);
  EXPECT_LT(r.max_rel_error, 1e-7) << r.worst;
}

TEST(BatchNorm, BatchModeGradCheck) {
  std::mt19937_64 rng(2);
  nn::BatchNorm bn("bn", 3);
  bn.gamma.value << 1.5, 0.7, -0.3;
  bn.beta.value << 0.1, -0.2, 0.3;
  Matrix x = random_matrix(6, 3, rng);
  const Matrix w = random_matrix(6, 3, rng);
  const Matrix saved_mean = bn.running_mean.value, saved_var = bn.running_var.value;
  auto loss = [&] {
    const double l = bn.forward(x).cwiseProduct(w).sum();
    bn.running_mean.value = saved_mean;
    bn.running_var.value = saved_var;
    return l;
  };
  bn.forward(x);
  bn.gamma.zero_grad();
  bn.beta.zero_grad();
  const Matrix dx = bn.backward(w);
  std::vector<Matrix> grads;
  auto targets = nn::param_targets({&bn.gamma, &bn.beta}, grads);
  targets.push_back({"x", &x, &dx});
  const auto r = nn::grad_check(loss, targets);
  EXPECT_LT(r.max_rel_error, 1e-6) << r.worst;
}

TEST(BatchNorm, SingleRowFallsBackToRunningStats) {
  nn::BatchNorm bn("bn", 2);
  bn.running_mean.value << 1.0, 2.0;
  bn.running_var.value << 4.0, 9.0;
  Matrix x(1, 2);
  x << 3.0, 5.0;
  const Matrix y = bn.forward(x);
  EXPECT_NEAR(y(0, 0), 2.0 / std::sqrt(4.0 + 1e-5), 1e-12);
  EXPECT_NEAR(y(0, 1), 3.0 / std::sqrt(9.0 + 1e-5), 1e-12);
  EXPECT_EQ(bn.running_mean.value(0, 0), 1.0);  // untouched
}

TEST(QueryEncoder, MatchesStraightLineReference) {
  std::mt19937_64 rng(3);
  nn::QueryEncoder enc("q", 11);
  enc.init(rng);
  enc.set_training(false);
  for (auto* bn : {&enc.l1.bn, &enc.l2.bn, &enc.l4.bn}) {
    bn->running_mean.value = random_matrix(1, bn->gamma.cols(), rng, 0.1);
    bn->running_var.value = random_matrix(1, bn->gamma.cols(), rng, 0.1).cwiseAbs().array() + 0.5;
    bn->gamma.value = random_matrix(1, bn->gamma.cols(), rng);
  }
  const Matrix x = random_matrix(3 * 16, 11, rng);
  const Matrix got = enc.forward(x, 16);
  const Matrix h = ref_linear(ref_unit(ref_unit(x, enc.l1), enc.l2), enc.fc3);
  const Matrix want = ref_unit(ref_maxpool(h, 16), enc.l4);
  ASSERT_EQ(got.rows(), 3);
  ASSERT_EQ(got.cols(), 256);
  EXPECT_LT((got - want).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(QueryEncoder, WidthMismatchNamesTheEncoder) {
  nn::QueryEncoder enc("q", 11);
  try {
    enc.forward(Matrix::Zero(4, 10), 4);
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("query encoder"), std::string::npos);
  }
}

TEST(QueryEncoder, ZeroInputWithZeroBiasGivesZeroOutput) {
  std::mt19937_64 rng(4);
  nn::QueryEncoder enc("q", 32);
  enc.init(rng);
  enc.set_training(false);
  for (auto* b : {&enc.l1.linear.bias, &enc.l2.linear.bias, &enc.fc3.bias, &enc.l4.linear.bias})
    b->value.setZero();
  const Matrix y = enc.forward(Matrix::Zero(2 * 8, 32), 8);
  EXPECT_EQ(y.cwiseAbs().maxCoeff(), 0.0);
}

TEST(QueryEncoder, SinglePointPoolIsIdentity) {
  nn::SegmentMaxPool pool;
  std::mt19937_64 rng(5);
  const Matrix x = random_matrix(4, 6, rng);
  EXPECT_EQ(pool.forward(x, 1), x);
}

TEST(ValueEncoder, MatchesStraightLineReference) {
  std::mt19937_64 rng(6);
  nn::ValueEncoder enc("v", 10);
  enc.init(rng);
  enc.set_training(false);
  const Matrix x = random_matrix(2 * 20, 10, rng);
  const Matrix got = enc.forward(x, 20);
  const Matrix h = ref_unit(ref_unit(x, enc.l1), enc.l2);
  const Matrix per_point = ref_linear(h, enc.fc3);
  const Matrix pooled = ref_maxpool(h, 20);
  Matrix cat(40, 640);
  for (Eigen::Index r = 0; r < 40; ++r) {
    for (Eigen::Index c = 0; c < 512; ++c) cat(r, c) = per_point(r, c);
    for (Eigen::Index c = 0; c < 128; ++c) cat(r, 512 + c) = pooled(r / 20, c);
  }
  const Matrix want = ref_unit(cat, enc.l4);
  ASSERT_EQ(got.rows(), 40);
  ASSERT_EQ(got.cols(), 256);
  EXPECT_LT((got - want).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Attention, SingleKeyWeightIsOne) {
  std::mt19937_64 rng(7);
  nn::MultiHeadAttention a("sa", 256, 4);
  a.init(rng);
  const Matrix q = random_matrix(1, 256, rng);
  const Matrix out = a.forward(q, q, {1}, {1});
  for (int h = 0; h < 4; ++h) EXPECT_EQ(a.weights(0, h)(0, 0), 1.0);
  const Matrix want = q + a.wv.apply(q);
  EXPECT_LT((out - want).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Attention, IdenticalRowsGiveIdenticalWeights) {
  std::mt19937_64 rng(8);
  nn::MultiHeadAttention a("sa", 16, 4);
  a.init(rng);
  Matrix q(2, 16);
  q.row(0) = random_matrix(1, 16, rng);
  q.row(1) = q.row(0);
  a.forward(q, q, {2}, {2});
  for (int h = 0; h < 4; ++h) EXPECT_EQ(a.weights(0, h).row(0), a.weights(0, h).row(1));
}

TEST(Attention, SelfAttentionMatchesLoopReference) {
  std::mt19937_64 rng(9);
  nn::MultiHeadAttention a("sa", 256, 4);
  a.init(rng);
  const Matrix q = random_matrix(3, 256, rng);
  const Matrix got = a.forward(q, q, {3}, {3});
  EXPECT_LT((got - ref_attention(q, q, a, nullptr)).cwiseAbs().maxCoeff(), 1e-9);
  for (int h = 0; h < 4; ++h)
    for (int i = 0; i < 3; ++i) EXPECT_NEAR(a.weights(0, h).row(i).sum(), 1.0, 1e-12);
}

TEST(Attention, CrossAttentionMatchesLoopReference) {
  std::mt19937_64 rng(10);
  nn::MultiHeadAttention a("ca", 256, 4);
  a.init(rng);
  const Matrix q = random_matrix(3, 256, rng);
  const Matrix kv = random_matrix(50, 256, rng);
  const Matrix got = a.forward(q, kv, {3}, {50});
  EXPECT_LT((got - ref_attention(q, kv, a, nullptr)).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Attention, SingleMemoryRowPassesProjectedValue) {
  std::mt19937_64 rng(11);
  nn::MultiHeadAttention a("ca", 8, 2);
  a.init(rng);
  const Matrix q = random_matrix(3, 8, rng);
  const Matrix kv = random_matrix(1, 8, rng);
  const Matrix out = a.forward(q, kv, {3}, {1});
  const Matrix v = a.wv.apply(kv);
  for (int i = 0; i < 3; ++i) EXPECT_LT((out.row(i) - q.row(i) - v.row(0)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Attention, ZeroValuesLeaveOnlyResidual) {
  std::mt19937_64 rng(12);
  nn::MultiHeadAttention a("ca", 8, 2);
  a.init(rng);
  a.wv.bias.value.setZero();
  const Matrix q = random_matrix(3, 8, rng);
  const Matrix out = a.forward(q, Matrix::Zero(5, 8), {3}, {5});
  EXPECT_EQ(out, q);
}

TEST(Attention, MaskedLoopReferenceAndFullyMaskedRow) {
  std::mt19937_64 rng(13);
  nn::MultiHeadAttention a("sa", 8, 2);
  a.init(rng);
  const Matrix q = random_matrix(4, 8, rng);
  nn::AttentionMask m(4, 4);
  m.setConstant(true);
  m(0, 3) = false;
  m(2, 0) = false;
  m.row(1).setConstant(false);
  const auto before = nn::fully_masked_rows().load();
  const Matrix got = a.forward(q, q, {4}, {4}, {m});
  EXPECT_EQ(nn::fully_masked_rows().load(), before + 1);
  EXPECT_LT((got - ref_attention(q, q, a, &m)).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_EQ(got.row(1), q.row(1));
  EXPECT_EQ(a.weights(0, 0)(0, 3), 0.0);
}

TEST(Attention, UnscaledVariantDiffersAndMatchesPlainSoftmax) {
  std::mt19937_64 rng(14);
  nn::MultiHeadAttention a("sa", 4, 1);
  a.init(rng);
  const Matrix q = random_matrix(2, 4, rng);
  a.scaled = false;
  a.forward(q, q, {2}, {2});
  const Matrix qp = a.wq.apply(q), kp = a.wk.apply(q);
  const double l0 = qp.row(0).dot(kp.row(0)), l1 = qp.row(0).dot(kp.row(1));
  EXPECT_NEAR(a.weights(0, 0)(0, 0), 1.0 / (1.0 + std::exp(l1 - l0)), 1e-12);
}

TEST(Adam, ZeroGradientKeepsParameters) {
  nn::Tensor p("p", 2, 2);
  p.value << 1, 2, 3, 4;
  const Matrix before = p.value;
  nn::Adam adam;
  adam.step({&p}, 0.1);
  EXPECT_EQ(p.value, before);
}

TEST(Adam, FirstStepIsLrTimesSign) {
  nn::Tensor p("p", 1, 3);
  p.value << 0.0, 0.0, 0.0;
  p.grad << 2.0, -0.5, 1e-3;
  nn::Adam adam;
  adam.step({&p}, 0.01);
  // m_hat / sqrt(v_hat) = g / |g| up to eps.
  EXPECT_NEAR(p.value(0, 0), -0.01, 1e-9);
  EXPECT_NEAR(p.value(0, 1), 0.01, 1e-9);
  EXPECT_NEAR(p.value(0, 2), -0.01, 1e-7);
}

TEST(Adam, ParametersUpdateIndependently) {
  nn::Tensor a("a", 1, 1), b("b", 1, 1);
  a.grad(0, 0) = 1.0;
  nn::Adam adam;
  adam.step({&a, &b}, 0.1);
  EXPECT_NE(a.value(0, 0), 0.0);
  EXPECT_EQ(b.value(0, 0), 0.0);
}

TEST(OneCycle, WarmupPeakAndFloor) {
  const long total = 101;
  EXPECT_NEAR(nn::one_cycle_lr(0, total, 1e-3), 1e-4, 1e-15);
  EXPECT_NEAR(nn::one_cycle_lr(30, total, 1e-3), 1e-3, 1e-15);
  EXPECT_NEAR(nn::one_cycle_lr(100, total, 1e-3), 1e-5, 1e-15);
  for (long s = 31; s < total; ++s)
    EXPECT_LE(nn::one_cycle_lr(s, total, 1e-3), nn::one_cycle_lr(s - 1, total, 1e-3));
}

TEST(Checkpoint, RoundTripIsBitExact) {
  std::mt19937_64 rng(15);
  nn::Linear a("fc", 3, 4), b("fc", 3, 4);
  a.init(rng);
  std::stringstream ss;
  nn::write_checkpoint(ss, "toy", a.params(), "extra");
  const std::string bytes = ss.str();
  EXPECT_EQ(bytes.substr(0, 5), "OFTK1");
  EXPECT_EQ(nn::read_checkpoint(ss, "toy", b.params()), "extra");
  EXPECT_EQ(std::memcmp(a.weight.value.data(), b.weight.value.data(), 12 * sizeof(double)), 0);
  std::stringstream again;
  nn::write_checkpoint(again, "toy", b.params(), "extra");
  EXPECT_EQ(again.str(), bytes);
}

TEST(Checkpoint, ArchMismatchIsRejected) {
  nn::Linear a("fc", 3, 4);
  std::stringstream ss;
  nn::write_checkpoint(ss, "toy", a.params());
  EXPECT_THROW(nn::read_checkpoint(ss, "other", a.params()), ShapeError);
}

TEST(GradCheck, ToyGrm) {
  const auto o = gradcases::grm();
  EXPECT_TRUE(o.check.finite);
  EXPECT_GE(o.check.checked, 200u);
  EXPECT_LT(o.check.max_rel_error, 1e-4) << o.check.worst;
}

TEST(GradCheck, ToyPrmWithMasksAndPadding) {
  const auto o = gradcases::prm();
  EXPECT_LT(o.check.max_rel_error, 1e-4) << o.check.worst;
  EXPECT_EQ(o.padded_grad, 0.0);
  EXPECT_EQ(o.window_leak, 0.0);
  EXPECT_GT(o.window_reach, 0.0);
}

TEST(GradCheck, ToyCrm) {
  const auto o = gradcases::crm();
  EXPECT_LT(o.check.max_rel_error, 1e-4) << o.check.worst;
}

TEST(GradCheck, NonFiniteGradientNamesTheArray) {
  Matrix v = Matrix::Zero(1, 1), g = Matrix::Constant(1, 1, NAN);
  const auto r = nn::grad_check([] { return 0.0; }, {{"layer.x", &v, &g}});
  EXPECT_FALSE(r.finite);
  EXPECT_EQ(r.nonfinite, "layer.x");
}
