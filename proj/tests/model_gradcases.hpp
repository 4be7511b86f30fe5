#pragma once

// Finite-difference checks of the three refinement models at toy widths,
// shared by the unit tests and the acceptance run.

#include <random>
#include <vector>

#include "offtrack/nn/gradcheck.hpp"
#include "offtrack/refine/models.hpp"

namespace gradcases {

using offtrack::nn::Matrix;

inline Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

struct Outcome {
  offtrack::nn::GradCheckResult check;
  double padded_grad = 0;   // max |grad| over padded input rows
  double window_leak = 0;   // grad reaching slots outside the locality window
  double window_reach = 0;  // grad reaching a neighbouring slot
};

inline Outcome grm() {
  using namespace offtrack;
  std::mt19937_64 rng(16);
  SizeAnchorTable anchors{{{4.0, 1.8, 1.5}, {4.8, 2.0, 1.7}}};
  GrmModel m(ClassId::kVehicle, anchors, toy_widths());
  m.init(17);
  m.set_training(false);
  GeometryBatch b;
  b.samples = 2;
  b.queries = 3;
  b.points_per_query = 4;
  b.value_points = 6;
  b.query_rows = random_matrix(2 * 3 * 4, 11, rng);
  b.value_rows = random_matrix(2 * 6, 10, rng);
  b.proposal_sizes = random_matrix(6, 3, rng);
  std::vector<Size3> gt(6, Size3{4.3, 1.9, 1.55});
  for (int i = 3; i < 6; ++i) gt[i] = {4.9, 2.1, 1.6};
  auto loss = [&] { return grm_loss_batch(m.forward(b), m.anchors, gt).loss; };
  nn::zero_grads(m.params());
  const auto lg = grm_loss_batch(m.forward(b), m.anchors, gt);
  const auto in = m.backward(lg.grad);
  std::vector<Matrix> grads;
  auto targets = nn::param_targets(m.params(), grads);
  targets.push_back({"query_rows", &b.query_rows, &in.query_rows});
  targets.push_back({"value_rows", &b.value_rows, &in.value_rows});
  targets.push_back({"proposal_sizes", &b.proposal_sizes, &in.proposal_sizes});
  return {nn::grad_check(loss, targets, 1e-5, 40, 1)};
}

inline Outcome prm() {
  using namespace offtrack;
  std::mt19937_64 rng(18);
  PrmModel m(ClassId::kVehicle, toy_widths(), 1);
  m.init(19);
  m.set_training(false);
  PositionPointSet ps;
  ps.length_pad = 6;
  ps.points_per_frame = 3;
  ps.valid = {1, 1, 0, 1, 1, 0};
  ps.rows = Matrix::Zero(6 * 3, 32);
  for (int s = 0; s < 6; ++s)
    if (ps.valid[s]) ps.rows.middleRows(s * 3, 3) = random_matrix(3, 32, rng);
  ps.value_rows = random_matrix(5, 31, rng);
  const PositionPointSet* sets[] = {&ps};
  PositionBatch b = stack_position(sets);
  std::vector<PositionTarget> targets(4);
  for (int i = 0; i < 4; ++i) {
    targets[i].supervised = i != 2;
    targets[i].center_offset = Vec3(0.1 * i, -0.2, 0.05);
    targets[i].bin = (3 * i) % 12;
    targets[i].residual = 0.3 - 0.2 * i;
  }
  auto loss = [&] { return prm_loss_batch(m.forward(b), targets).loss; };
  nn::zero_grads(m.params());
  const auto lg = prm_loss_batch(m.forward(b), targets);
  const auto in = m.backward(lg.grad);
  std::vector<Matrix> grads;
  auto gts = nn::param_targets(m.params(), grads);
  gts.push_back({"query_rows", &b.query_rows, &in.query_rows});
  gts.push_back({"value_rows", &b.value_rows, &in.value_rows});
  Outcome o{nn::grad_check(loss, gts, 1e-5, 40, 2)};

  // Padded slots 2 and 5 in the full [length_pad * P] layout.
  const Matrix full = scatter_position_grad(b, 0, in.query_rows, ps.length_pad);
  o.padded_grad = std::max(full.middleRows(2 * 3, 3).cwiseAbs().maxCoeff(),
                           full.middleRows(5 * 3, 3).cwiseAbs().maxCoeff());

  // Window 1: the output at slot 0 sees slot 1 but not slots 3 and 4
  // (stacked valid rows 2 and 3).
  nn::zero_grads(m.params());
  Matrix probe = Matrix::Zero(4, kPrmOutputWidth);
  probe.row(0).setOnes();
  m.forward(b);
  const auto pin = m.backward(probe);
  o.window_leak = pin.query_rows.middleRows(2 * 3, 6).cwiseAbs().maxCoeff();
  o.window_reach = pin.query_rows.middleRows(1 * 3, 3).cwiseAbs().maxCoeff();
  return o;
}

inline Outcome crm() {
  using namespace offtrack;
  std::mt19937_64 rng(20);
  CrmModel m(ClassId::kVehicle, toy_widths());
  m.init(21);
  m.set_training(false);
  Matrix q = random_matrix(3 * 2 * 4, 11, rng);
  const std::vector<CrmTarget> targets = {{1, 0.8}, {-1, 0.4}, {0, 0.1}};
  auto loss = [&] { return crm_loss_batch(m.forward(q, 3, 2, 4), targets).loss; };
  nn::zero_grads(m.params());
  const auto lg = crm_loss_batch(m.forward(q, 3, 2, 4), targets);
  const Matrix dq = m.backward(lg.grad);
  std::vector<Matrix> grads;
  auto gts = nn::param_targets(m.params(), grads);
  gts.push_back({"query_rows", &q, &dq});
  return {nn::grad_check(loss, gts, 1e-5, 60, 3)};
}

}  // namespace gradcases
