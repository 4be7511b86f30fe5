#pragma once

// Independent reference computations shared by unit and acceptance tests.

#include <algorithm>
#include <cstddef>
#include <random>
#include <utility>
#include <vector>

#include "offtrack/geom.hpp"

namespace oracle {

using offtrack::Box3D;

struct SampledOverlap {
  double iou_bev = 0;
  double iou_3d = 0;
  double ratio = 0;  // |A ∩ B| / |B| in BEV
};

/// Uniform samples inside `b` (its own frame mapped to world), classified
/// with point-in-box tests against `a` only; no polygon clipping involved.
/// The intersection is |B| times the hit fraction; areas and volumes of the
/// boxes themselves are exact.
inline SampledOverlap sample_overlap(const Box3D& a, const Box3D& b, std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  const offtrack::BoxMembership in_a(a);
  const double c = std::cos(b.yaw), s = std::sin(b.yaw);
  std::size_t hit2 = 0, hit3 = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double lx = u(rng) * b.l, ly = u(rng) * b.w, lz = u(rng) * b.h;
    const double x = b.cx + c * lx - s * ly, y = b.cy + s * lx + c * ly;
    hit2 += in_a.contains(x, y, a.cz);
    hit3 += in_a.contains(x, y, b.cz + lz);
  }
  const double area_a = a.l * a.w, area_b = b.l * b.w;
  const double vol_a = area_a * a.h, vol_b = area_b * b.h;
  const double i2 = area_b * double(hit2) / double(n);
  const double i3 = vol_b * double(hit3) / double(n);
  SampledOverlap o;
  o.iou_bev = i2 / (area_a + area_b - i2);
  o.iou_3d = i3 / (vol_a + vol_b - i3);
  o.ratio = double(hit2) / double(n);
  return o;
}

/// Pairs that overlap often enough to exercise partial intersections.
inline std::pair<Box3D, Box3D> random_pair(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0, 1);
  const Box3D a = offtrack::make_box(u(rng) * 4 - 2, u(rng) * 4 - 2, u(rng), 1 + 4 * u(rng), 0.5 + 2 * u(rng),
                                     0.5 + 2 * u(rng), (u(rng) * 2 - 1) * offtrack::kPi);
  const Box3D b = offtrack::make_box(a.cx + u(rng) * 3 - 1.5, a.cy + u(rng) * 3 - 1.5, a.cz + u(rng) - 0.5,
                                     1 + 4 * u(rng), 0.5 + 2 * u(rng), 0.5 + 2 * u(rng),
                                     (u(rng) * 2 - 1) * offtrack::kPi);
  return {a, b};
}

}  // namespace oracle
