#pragma once

// The three refiners. Each consumes a stacked batch of prepared point sets,
// produces raw head outputs, and backpropagates a gradient on those outputs
// down to its input rows.

#include <cmath>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "offtrack/nn/attention.hpp"
#include "offtrack/nn/checkpoint.hpp"
#include "offtrack/nn/encoders.hpp"
#include "offtrack/objprep.hpp"
#include "offtrack/refine/anchors.hpp"
#include "offtrack/refine/heading.hpp"

namespace offtrack {

using nn::Matrix;

struct ModelWidths {
  Eigen::Index hidden = nn::kHiddenWidth;
  Eigen::Index feature = nn::kQueryFeatureWidth;  // decoder width D
  Eigen::Index value_point = nn::kValuePointWidth;
  int heads = nn::kHeadCount;
  bool scaled = true;

  std::string tag() const {
    std::ostringstream os;
    os << "-h" << hidden << "-d" << feature << "-p" << value_point << "-m" << heads
       << (scaled ? "" : "-unscaled");
    return os.str();
  }
};

inline ModelWidths toy_widths() { return {6, 8, 10, 2, true}; }

// ---------------------------------------------------------------------------
// Stacked batches
// ---------------------------------------------------------------------------

struct GeometryBatch {
  Matrix query_rows;      // (S*t*P) x 11
  Matrix value_rows;      // (S*n) x 10
  Matrix proposal_sizes;  // (S*t) x 3
  Eigen::Index samples = 0, queries = 0, points_per_query = 0, value_points = 0;
};

inline GeometryBatch stack_geometry(std::span<const GeometryPointSet* const> sets) {
  GeometryBatch b;
  if (sets.empty()) throw EmptySampleError("empty geometry batch");
  const auto& f = *sets.front();
  b.samples = static_cast<Eigen::Index>(sets.size());
  b.queries = f.queries;
  b.points_per_query = f.points_per_query;
  b.value_points = f.value_points;
  const Eigen::Index qr = f.query_rows.rows(), vr = f.value_rows.rows();
  b.query_rows.resize(b.samples * qr, kGeometryQueryWidth);
  b.value_rows.resize(b.samples * vr, kGeometryValueWidth);
  b.proposal_sizes.resize(b.samples * b.queries, 3);
  for (Eigen::Index s = 0; s < b.samples; ++s) {
    const auto& g = *sets[s];
    if (g.query_rows.rows() != qr || g.value_rows.rows() != vr || g.queries != b.queries)
      throw ShapeError("geometry batch: inconsistent set shapes");
    b.query_rows.middleRows(s * qr, qr) = g.query_rows;
    b.value_rows.middleRows(s * vr, vr) = g.value_rows;
    b.proposal_sizes.middleRows(s * b.queries, b.queries) = g.proposal_sizes;
  }
  return b;
}

struct PositionBatch {
  Matrix query_rows;  // (sum valid * P) x 32
  Matrix value_rows;  // (S*n) x 31
  std::vector<Eigen::Index> valid_counts;  // per sample
  std::vector<std::vector<int>> slots;     // per sample, slot index of each valid row
  Eigen::Index points_per_frame = 0, value_points = 0;

  Eigen::Index total_valid() const {
    Eigen::Index n = 0;
    for (auto c : valid_counts) n += c;
    return n;
  }
};

inline PositionBatch stack_position(std::span<const PositionPointSet* const> sets) {
  PositionBatch b;
  if (sets.empty()) throw EmptySampleError("empty position batch");
  const Eigen::Index p = sets.front()->points_per_frame;
  const Eigen::Index n = sets.front()->value_rows.rows();
  b.points_per_frame = p;
  b.value_points = n;
  Eigen::Index total = 0;
  for (const auto* s : sets) total += static_cast<Eigen::Index>(s->valid_count());
  b.query_rows.resize(total * p, kPositionQueryWidth);
  b.value_rows.resize(static_cast<Eigen::Index>(sets.size()) * n, kPositionValueWidth);
  Eigen::Index row = 0;
  for (std::size_t i = 0; i < sets.size(); ++i) {
    const auto& s = *sets[i];
    if (s.points_per_frame != p || s.value_rows.rows() != n)
      throw ShapeError("position batch: inconsistent set shapes");
    std::vector<int> slots;
    for (int slot = 0; slot < s.length_pad; ++slot) {
      if (!s.valid[slot]) continue;
      b.query_rows.middleRows(row * p, p) = s.rows.middleRows(static_cast<Eigen::Index>(slot) * p, p);
      slots.push_back(slot);
      ++row;
    }
    b.valid_counts.push_back(static_cast<Eigen::Index>(slots.size()));
    b.slots.push_back(std::move(slots));
    b.value_rows.middleRows(static_cast<Eigen::Index>(i) * n, n) = s.value_rows;
  }
  return b;
}

/// Scatters a gradient on stacked valid rows back onto one set's full
/// (length_pad * P) x 32 layout; padded slots stay zero.
inline Matrix scatter_position_grad(const PositionBatch& b, std::size_t sample,
                                    const Matrix& d_query_rows, int length_pad) {
  const Eigen::Index p = b.points_per_frame;
  Matrix full = Matrix::Zero(static_cast<Eigen::Index>(length_pad) * p, kPositionQueryWidth);
  Eigen::Index row = 0;
  for (std::size_t s = 0; s < sample; ++s) row += b.valid_counts[s];
  for (std::size_t k = 0; k < b.slots[sample].size(); ++k)
    full.middleRows(static_cast<Eigen::Index>(b.slots[sample][k]) * p, p) =
        d_query_rows.middleRows((row + static_cast<Eigen::Index>(k)) * p, p);
  return full;
}

// ---------------------------------------------------------------------------
// GRM
// ---------------------------------------------------------------------------

struct GeometryInputGrad {
  Matrix query_rows, value_rows, proposal_sizes;
};

class GrmModel {
 public:
  GrmModel(ClassId cls, SizeAnchorTable anchor_table, ModelWidths w = {})
      : cls(cls),
        anchors(std::move(anchor_table)),
        widths(w),
        enc_q("grm.enc_q", kGeometryQueryWidth, w.hidden, w.feature),
        size_proj("grm.size_proj", 3, w.feature),
        enc_v("grm.enc_v", kGeometryValueWidth, w.hidden, w.value_point, w.feature),
        decoder("grm.dec", w.feature, w.heads),
        head("grm.head", w.feature, 4 * static_cast<Eigen::Index>(anchors.count())) {
    decoder.set_scaled(w.scaled);
  }

  ClassId cls;
  SizeAnchorTable anchors;
  ModelWidths widths;
  nn::QueryEncoder enc_q;
  nn::Linear size_proj;
  nn::ValueEncoder enc_v;
  nn::DecoderLayer decoder;
  nn::Linear head;

  Eigen::Index anchor_count() const { return static_cast<Eigen::Index>(anchors.count()); }

  void init(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    enc_q.init(rng);
    size_proj.init(rng);
    enc_v.init(rng);
    decoder.init(rng);
    head.init(rng);
  }

  void set_training(bool t) {
    enc_q.set_training(t);
    enc_v.set_training(t);
  }

  /// (S*t) x (A + 3A): class logits then per-anchor residuals (l, w, h).
  Matrix forward(const GeometryBatch& b) {
    Matrix q = enc_q.forward(b.query_rows, b.points_per_query);
    q += size_proj.forward(b.proposal_sizes);
    const Matrix v = enc_v.forward(b.value_rows, b.value_points);
    const std::vector<Eigen::Index> q_rows(b.samples, b.queries), v_rows(b.samples, b.value_points);
    return head.forward(decoder.forward(q, v, q_rows, v_rows));
  }

  GeometryInputGrad backward(const Matrix& dout) {
    auto [dq, dmem] = decoder.backward(head.backward(dout));
    GeometryInputGrad g;
    g.proposal_sizes = size_proj.backward(dq);
    g.query_rows = enc_q.backward(dq);
    g.value_rows = enc_v.backward(dmem);
    return g;
  }

  nn::TensorRefs params() {
    return nn::concat_params(
        {enc_q.params(), size_proj.params(), enc_v.params(), decoder.params(), head.params()});
  }

  std::string arch() const {
    return "grm." + std::string(class_name(cls)) + ".a" + std::to_string(anchors.count()) + widths.tag();
  }
};

struct LossAndGrad {
  double loss = 0.0;
  Matrix grad;
  std::size_t supervised = 0;
};

namespace detail {

// Cross-entropy of logits row against class `target`; adds d/dlogits*scale.
inline double cross_entropy(const Eigen::Ref<const Eigen::RowVectorXd>& logits, Eigen::Index target,
                            Eigen::Ref<Eigen::RowVectorXd> grad, double scale) {
  const double mx = logits.maxCoeff();
  const Eigen::RowVectorXd e = (logits.array() - mx).exp();
  const double sum = e.sum();
  const double loss = std::log(sum) + mx - logits(target);
  grad += scale * (e / sum);
  grad(target) -= scale;
  return loss;
}

inline double sign(double x) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); }

}  // namespace detail

/// Geometry loss for one query row: 0.1 * CE(nearest anchor) + 2 * mean L1
/// of that anchor's residual against (gt - anchor).
inline double grm_loss(const Eigen::RowVectorXd& logits, const Eigen::RowVectorXd& residuals,
                       const Size3& gt, const SizeAnchorTable& anchors) {
  const auto a = static_cast<Eigen::Index>(anchors.nearest(gt));
  Eigen::RowVectorXd scratch = Eigen::RowVectorXd::Zero(logits.size());
  const double ce = detail::cross_entropy(logits, a, scratch, 0.0);
  double l1 = 0;
  for (int k = 0; k < 3; ++k)
    l1 += std::abs(residuals(3 * a + k) - (gt[k] - anchors.anchors[a][k]));
  return 0.1 * ce + 2.0 * l1 / 3.0;
}

/// Mean over rows of grm_loss with the gradient on the head output.
inline LossAndGrad grm_loss_batch(const Matrix& out, const SizeAnchorTable& anchors,
                                  std::span<const Size3> gt_per_row) {
  const Eigen::Index a_count = static_cast<Eigen::Index>(anchors.count());
  LossAndGrad r;
  r.grad = Matrix::Zero(out.rows(), out.cols());
  const double inv = 1.0 / static_cast<double>(out.rows());
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const Size3& gt = gt_per_row[i];
    const auto a = static_cast<Eigen::Index>(anchors.nearest(gt));
    Eigen::RowVectorXd g = Eigen::RowVectorXd::Zero(out.cols());
    const double ce = detail::cross_entropy(out.row(i).head(a_count), a, g.head(a_count), 0.1 * inv);
    double l1 = 0;
    for (int k = 0; k < 3; ++k) {
      const double diff = out(i, a_count + 3 * a + k) - (gt[k] - anchors.anchors[a][k]);
      l1 += std::abs(diff);
      g(a_count + 3 * a + k) += 2.0 / 3.0 * inv * detail::sign(diff);
    }
    r.loss += inv * (0.1 * ce + 2.0 * l1 / 3.0);
    r.grad.row(i) = g;
  }
  r.supervised = static_cast<std::size_t>(out.rows());
  return r;
}

/// Size from one query row: anchor(argmax) + residual(argmax).
inline Size3 grm_decode_row(const Eigen::Ref<const Eigen::RowVectorXd>& row,
                            const SizeAnchorTable& anchors) {
  const Eigen::Index a_count = static_cast<Eigen::Index>(anchors.count());
  Eigen::Index a = 0;
  row.head(a_count).maxCoeff(&a);
  Size3 s;
  for (int k = 0; k < 3; ++k)
    s[k] = std::max(0.05, anchors.anchors[a][k] + row(a_count + 3 * a + k));
  return s;
}

/// Mean of the per-query sizes of sample `s`.
inline Size3 grm_decode(const Matrix& out, Eigen::Index sample, Eigen::Index queries,
                        const SizeAnchorTable& anchors) {
  Size3 mean{0, 0, 0};
  for (Eigen::Index q = 0; q < queries; ++q) {
    const Size3 s = grm_decode_row(out.row(sample * queries + q), anchors);
    for (int k = 0; k < 3; ++k) mean[k] += s[k] / static_cast<double>(queries);
  }
  return mean;
}

// ---------------------------------------------------------------------------
// PRM
// ---------------------------------------------------------------------------

inline constexpr int kDefaultLocalityWindow = 10;
inline constexpr Eigen::Index kPrmOutputWidth = 3 + 2 * HeadingBinCodec::kBins;

struct PositionInputGrad {
  Matrix query_rows, value_rows;
};

class PrmModel {
 public:
  explicit PrmModel(ClassId cls, ModelWidths w = {}, int window = kDefaultLocalityWindow)
      : cls(cls),
        widths(w),
        window(window),
        enc_q("prm.enc_q", kPositionQueryWidth, w.hidden, w.feature),
        enc_v("prm.enc_v", kPositionValueWidth, w.hidden, w.value_point, w.feature),
        decoder("prm.dec", w.feature, w.heads),
        head("prm.head", w.feature, kPrmOutputWidth) {
    decoder.set_scaled(w.scaled);
  }

  ClassId cls;
  ModelWidths widths;
  int window;
  nn::QueryEncoder enc_q;
  nn::ValueEncoder enc_v;
  nn::DecoderLayer decoder;
  nn::Linear head;

  void init(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    enc_q.init(rng);
    enc_v.init(rng);
    decoder.init(rng);
    head.init(rng);
  }

  void set_training(bool t) {
    enc_q.set_training(t);
    enc_v.set_training(t);
  }

  /// Allowed(i, j) iff both slots are valid and |slot_i - slot_j| <= window.
  nn::AttentionMask locality_mask(const std::vector<int>& slots) const {
    const auto n = static_cast<Eigen::Index>(slots.size());
    nn::AttentionMask m(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j) m(i, j) = std::abs(slots[i] - slots[j]) <= window;
    return m;
  }

  /// (total valid) x 27: center offsets, 12 bin logits, 12 residuals
  /// (normalized by the bin half-width).
  Matrix forward(const PositionBatch& b) {
    const Matrix q = enc_q.forward(b.query_rows, b.points_per_frame);
    const Matrix v = enc_v.forward(b.value_rows, b.value_points);
    std::vector<nn::AttentionMask> masks;
    for (const auto& s : b.slots) masks.push_back(locality_mask(s));
    const std::vector<Eigen::Index> v_rows(b.valid_counts.size(), b.value_points);
    return head.forward(decoder.forward(q, v, b.valid_counts, v_rows, masks));
  }

  PositionInputGrad backward(const Matrix& dout) {
    auto [dq, dmem] = decoder.backward(head.backward(dout));
    return {enc_q.backward(dq), enc_v.backward(dmem)};
  }

  nn::TensorRefs params() {
    return nn::concat_params({enc_q.params(), enc_v.params(), decoder.params(), head.params()});
  }

  std::string arch() const {
    return "prm." + std::string(class_name(cls)) + ".w" + std::to_string(window) + widths.tag();
  }
};

/// Supervision for one valid frame, in the set's reference frame.
struct PositionTarget {
  bool supervised = false;
  Vec3 center_offset = Vec3::Zero();  // gt center - proposal center
  int bin = 0;
  double residual = 0.0;  // normalized by the bin half-width, in [-1, 1)
};

inline PositionTarget position_target(const Box3D& proposal_local, const Box3D& gt_local) {
  PositionTarget t;
  t.supervised = true;
  t.center_offset = gt_local.center() - proposal_local.center();
  const auto code = HeadingBinCodec::encode(gt_local.yaw);
  t.bin = code.bin;
  t.residual = code.residual / HeadingBinCodec::kHalfWidth;
  return t;
}

/// L1 center (mean over axes) + 0.1 CE(bin) + 2 L1(residual of the gt bin),
/// averaged over supervised rows.
inline LossAndGrad prm_loss_batch(const Matrix& out, std::span<const PositionTarget> targets) {
  constexpr int kBins = HeadingBinCodec::kBins;
  LossAndGrad r;
  r.grad = Matrix::Zero(out.rows(), out.cols());
  for (const auto& t : targets) r.supervised += t.supervised ? 1 : 0;
  if (r.supervised == 0) return r;
  const double inv = 1.0 / static_cast<double>(r.supervised);
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const auto& t = targets[i];
    if (!t.supervised) continue;
    Eigen::RowVectorXd g = Eigen::RowVectorXd::Zero(out.cols());
    double lc = 0;
    for (int k = 0; k < 3; ++k) {
      const double d = out(i, k) - t.center_offset(k);
      lc += std::abs(d) / 3.0;
      g(k) += inv / 3.0 * detail::sign(d);
    }
    const double ce = detail::cross_entropy(out.row(i).segment(3, kBins), t.bin,
                                            g.segment(3, kBins), 0.1 * inv);
    const double dr = out(i, 3 + kBins + t.bin) - t.residual;
    g(3 + kBins + t.bin) += 2.0 * inv * detail::sign(dr);
    r.loss += inv * (lc + 0.1 * ce + 2.0 * std::abs(dr));
    r.grad.row(i) = g;
  }
  return r;
}

struct PositionPrediction {
  Vec3 center_offset = Vec3::Zero();
  double yaw = 0.0;  // in the reference frame
};

inline PositionPrediction prm_decode_row(const Eigen::Ref<const Eigen::RowVectorXd>& row) {
  constexpr int kBins = HeadingBinCodec::kBins;
  PositionPrediction p;
  p.center_offset = Vec3(row(0), row(1), row(2));
  Eigen::Index bin = 0;
  row.segment(3, kBins).maxCoeff(&bin);
  const double res = std::clamp(row(3 + kBins + bin), -1.0, 1.0);
  p.yaw = HeadingBinCodec::decode(static_cast<int>(bin), res * HeadingBinCodec::kHalfWidth);
  return p;
}

// ---------------------------------------------------------------------------
// CRM
// ---------------------------------------------------------------------------

struct ScorePair {
  double s_cls = 0.0;
  double s_iou = 0.0;
};

/// sqrt(s_cls^2 + s_iou^2), in [0, sqrt(2)].
inline double fuse_score(const ScorePair& p) { return std::hypot(p.s_cls, p.s_iou); }

inline double sigmoid(double z) {
  return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

class CrmModel {
 public:
  explicit CrmModel(ClassId cls, ModelWidths w = {})
      : cls(cls),
        widths(w),
        enc("crm.enc", kGeometryQueryWidth, w.hidden, w.feature),
        fc("crm.fc", w.feature, w.feature),
        head("crm.head", w.feature, 2) {}

  ClassId cls;
  ModelWidths widths;
  nn::QueryEncoder enc;
  nn::Linear fc;
  nn::Linear head;

  void init(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    enc.init(rng);
    fc.init(rng);
    head.init(rng);
  }

  void set_training(bool t) { enc.set_training(t); }

  /// S x 2 logits (classification, IoU); sigmoid gives the score pair.
  Matrix forward(const Matrix& query_rows, Eigen::Index samples, Eigen::Index queries,
                 Eigen::Index points_per_query) {
    samples_ = samples;
    queries_ = queries;
    const Matrix f = enc.forward(query_rows, points_per_query);
    Matrix pooled = Matrix::Zero(samples, f.cols());
    for (Eigen::Index s = 0; s < samples; ++s)
      pooled.row(s) = f.middleRows(s * queries, queries).colwise().mean();
    return head.forward(relu_.forward(fc.forward(pooled)));
  }

  Matrix forward(const GeometryBatch& b) {
    return forward(b.query_rows, b.samples, b.queries, b.points_per_query);
  }

  /// Gradient on the query rows.
  Matrix backward(const Matrix& dout) {
    const Matrix dpooled = fc.backward(relu_.backward(head.backward(dout)));
    Matrix df(samples_ * queries_, dpooled.cols());
    for (Eigen::Index s = 0; s < samples_; ++s)
      for (Eigen::Index q = 0; q < queries_; ++q)
        df.row(s * queries_ + q) = dpooled.row(s) / static_cast<double>(queries_);
    return enc.backward(df);
  }

  nn::TensorRefs params() { return nn::concat_params({enc.params(), fc.params(), head.params()}); }

  std::string arch() const { return "crm." + std::string(class_name(cls)) + widths.tag(); }

 private:
  nn::ReLU relu_;
  Eigen::Index samples_ = 0, queries_ = 0;
};

inline ScorePair crm_decode_row(const Eigen::Ref<const Eigen::RowVectorXd>& row) {
  return {sigmoid(row(0)), sigmoid(row(1))};
}

/// Label for the classification branch: 1 positive, 0 negative, -1 ignore.
struct CrmTarget {
  int label = -1;
  double iou_target = 0.0;
};

/// BCE on s_cls (non-ignored rows) + BCE on s_iou, each averaged over rows.
inline LossAndGrad crm_loss_batch(const Matrix& out, std::span<const CrmTarget> targets) {
  LossAndGrad r;
  r.grad = Matrix::Zero(out.rows(), out.cols());
  std::size_t labeled = 0;
  for (const auto& t : targets) labeled += t.label >= 0 ? 1 : 0;
  const double inv_all = 1.0 / static_cast<double>(out.rows());
  const double inv_lab = labeled > 0 ? 1.0 / static_cast<double>(labeled) : 0.0;
  auto bce = [](double z, double y) {
    // softplus(z) - y*z, stable.
    return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))) - y * z;
  };
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const auto& t = targets[i];
    if (t.label >= 0) {
      r.loss += inv_lab * bce(out(i, 0), t.label);
      r.grad(i, 0) = inv_lab * (sigmoid(out(i, 0)) - t.label);
    }
    r.loss += inv_all * bce(out(i, 1), t.iou_target);
    r.grad(i, 1) = inv_all * (sigmoid(out(i, 1)) - t.iou_target);
  }
  r.supervised = static_cast<std::size_t>(out.rows());
  return r;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

inline std::string peek_checkpoint_arch(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  char magic[5];
  if (!is || !is.read(magic, 5) || std::memcmp(magic, nn::kCheckpointMagic, 5) != 0)
    throw Error("not a checkpoint: " + path.string());
  return nn::detail::get_string(is);
}

inline ModelWidths parse_width_tag(const std::string& arch) {
  ModelWidths w;
  w.scaled = arch.find("-unscaled") == std::string::npos;
  auto field = [&](const std::string& key) -> long {
    const auto pos = arch.find("-" + key);
    if (pos == std::string::npos) throw Error("checkpoint arch lacks '" + key + "': " + arch);
    return std::stol(arch.substr(pos + 1 + key.size()));
  };
  w.hidden = field("h");
  w.feature = field("d");
  w.value_point = field("p");
  w.heads = static_cast<int>(field("m"));
  return w;
}

inline void save_model(GrmModel& m, const std::filesystem::path& path) {
  nn::save_checkpoint(path, m.arch(), m.params(), m.anchors.serialize());
}
inline void save_model(PrmModel& m, const std::filesystem::path& path) {
  nn::save_checkpoint(path, m.arch(), m.params());
}
inline void save_model(CrmModel& m, const std::filesystem::path& path) {
  nn::save_checkpoint(path, m.arch(), m.params());
}

inline GrmModel load_grm(const std::filesystem::path& path) {
  const std::string arch = peek_checkpoint_arch(path);
  // grm.<class>.a<A>-h..-d..-p..-m..
  const auto c0 = arch.find('.') + 1;
  const auto c1 = arch.find('.', c0);
  const ClassId cls = parse_class(arch.substr(c0, c1 - c0));
  const std::size_t a = std::stoul(arch.substr(c1 + 2));
  SizeAnchorTable placeholder;
  placeholder.anchors.assign(a, Size3{1, 1, 1});
  GrmModel m(cls, placeholder, parse_width_tag(arch));
  m.anchors = SizeAnchorTable::parse(nn::load_checkpoint(path, arch, m.params()));
  m.set_training(false);
  return m;
}

inline PrmModel load_prm(const std::filesystem::path& path) {
  const std::string arch = peek_checkpoint_arch(path);
  const auto c0 = arch.find('.') + 1;
  const auto c1 = arch.find('.', c0);
  const ClassId cls = parse_class(arch.substr(c0, c1 - c0));
  const int window = std::stoi(arch.substr(c1 + 2));
  PrmModel m(cls, parse_width_tag(arch), window);
  nn::load_checkpoint(path, arch, m.params());
  m.set_training(false);
  return m;
}

inline CrmModel load_crm(const std::filesystem::path& path) {
  const std::string arch = peek_checkpoint_arch(path);
  const auto c0 = arch.find('.') + 1;
  const auto c1 = arch.find('-', c0);
  CrmModel m(parse_class(arch.substr(c0, c1 - c0)), parse_width_tag(arch));
  nn::load_checkpoint(path, arch, m.params());
  m.set_training(false);
  return m;
}

}  // namespace offtrack
