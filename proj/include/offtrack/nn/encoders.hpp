#pragma once

#include <string>

#include "offtrack/nn/layers.hpp"

namespace offtrack::nn {

inline constexpr Eigen::Index kHiddenWidth = 128;
inline constexpr Eigen::Index kQueryFeatureWidth = 256;
inline constexpr Eigen::Index kValuePointWidth = 512;

/// Per-group point encoder: two Linear-ReLU-BN units, Linear 128->256,
/// max-pool over each group, then Linear-ReLU-BN 256->256.
/// (S*P) x F -> S x out.
class QueryEncoder {
 public:
  QueryEncoder() = default;
  QueryEncoder(const std::string& name, Eigen::Index in_width, Eigen::Index hidden = kHiddenWidth,
               Eigen::Index out = kQueryFeatureWidth)
      : l1(name + ".l1", in_width, hidden),
        l2(name + ".l2", hidden, hidden),
        fc3(name + ".fc3", hidden, out),
        l4(name + ".l4", out, out) {}

  Eigen::Index in_width() const { return l1.linear.in_features(); }

  void init(std::mt19937_64& rng) {
    l1.init(rng);
    l2.init(rng);
    fc3.init(rng);
    l4.init(rng);
  }

  void set_training(bool t) {
    l1.set_training(t);
    l2.set_training(t);
    l4.set_training(t);
  }

  Matrix forward(const Matrix& x, Eigen::Index group) {
    check_cols(x, in_width(), "query encoder (input width)");
    return l4.forward(pool_.forward(fc3.forward(l2.forward(l1.forward(x))), group));
  }

  Matrix backward(const Matrix& dy) {
    return l1.backward(l2.backward(fc3.backward(pool_.backward(l4.backward(dy)))));
  }

  TensorRefs params() {
    return concat_params({l1.params(), l2.params(), fc3.params(), l4.params()});
  }

  LinearReluBn l1, l2;
  Linear fc3;
  LinearReluBn l4;

 private:
  SegmentMaxPool pool_;
};

/// Per-point encoder with a pooled global context: two Linear-ReLU-BN
/// units to 128, Linear 128->512 per point, the group max of the 128-wide
/// features repeated onto every point and concatenated (640), then
/// Linear-ReLU-BN 640->256. (S*n) x F -> (S*n) x out.
class ValueEncoder {
 public:
  ValueEncoder() = default;
  ValueEncoder(const std::string& name, Eigen::Index in_width, Eigen::Index hidden = kHiddenWidth,
               Eigen::Index point = kValuePointWidth, Eigen::Index out = kQueryFeatureWidth)
      : l1(name + ".l1", in_width, hidden),
        l2(name + ".l2", hidden, hidden),
        fc3(name + ".fc3", hidden, point),
        l4(name + ".l4", point + hidden, out) {}

  Eigen::Index in_width() const { return l1.linear.in_features(); }

  void init(std::mt19937_64& rng) {
    l1.init(rng);
    l2.init(rng);
    fc3.init(rng);
    l4.init(rng);
  }

  void set_training(bool t) {
    l1.set_training(t);
    l2.set_training(t);
    l4.set_training(t);
  }

  Matrix forward(const Matrix& x, Eigen::Index group) {
    check_cols(x, in_width(), "value encoder (input width)");
    group_ = group;
    const Matrix h = l2.forward(l1.forward(x));
    const Matrix per_point = fc3.forward(h);
    const Matrix pooled = pool_.forward(h, group);
    const Eigen::Index pw = per_point.cols(), hw = h.cols();
    Matrix cat(x.rows(), pw + hw);
    cat.leftCols(pw) = per_point;
    for (Eigen::Index r = 0; r < x.rows(); ++r) cat.row(r).rightCols(hw) = pooled.row(r / group);
    return l4.forward(cat);
  }

  Matrix backward(const Matrix& dy) {
    const Matrix dcat = l4.backward(dy);
    const Eigen::Index pw = fc3.out_features(), hw = fc3.in_features();
    Matrix dh = fc3.backward(dcat.leftCols(pw));
    Matrix dpooled = Matrix::Zero(dcat.rows() / group_, hw);
    for (Eigen::Index r = 0; r < dcat.rows(); ++r)
      dpooled.row(r / group_) += dcat.row(r).rightCols(hw);
    dh += pool_.backward(dpooled);
    return l1.backward(l2.backward(dh));
  }

  TensorRefs params() {
    return concat_params({l1.params(), l2.params(), fc3.params(), l4.params()});
  }

  LinearReluBn l1, l2;
  Linear fc3;
  LinearReluBn l4;

 private:
  Eigen::Index group_ = 1;
  SegmentMaxPool pool_;
};

}  // namespace offtrack::nn
