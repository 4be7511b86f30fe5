#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "offtrack/common.hpp"

namespace offtrack {

using Size3 = std::array<double, 3>;

inline double size_l1(const Size3& a, const Size3& b) {
  return std::abs(a[0] - b[0]) + std::abs(a[1] - b[1]) + std::abs(a[2] - b[2]);
}

/// Template sizes (l, w, h) for one class.
struct SizeAnchorTable {
  std::vector<Size3> anchors;

  std::size_t count() const { return anchors.size(); }

  /// Nearest anchor by L1 distance; ties go to the lower index.
  std::size_t nearest(const Size3& s) const {
    std::size_t best = 0;
    double best_d = size_l1(s, anchors[0]);
    for (std::size_t a = 1; a < anchors.size(); ++a) {
      const double d = size_l1(s, anchors[a]);
      if (d < best_d) {
        best_d = d;
        best = a;
      }
    }
    return best;
  }

  std::string serialize() const {
    std::ostringstream os;
    os.precision(17);
    os << anchors.size();
    for (const auto& a : anchors) os << ' ' << a[0] << ' ' << a[1] << ' ' << a[2];
    return os.str();
  }

  static SizeAnchorTable parse(const std::string& text) {
    std::istringstream is(text);
    std::size_t n = 0;
    SizeAnchorTable t;
    if (!(is >> n) || n == 0) throw Error("anchor table: bad count");
    t.anchors.resize(n);
    for (auto& a : t.anchors)
      if (!(is >> a[0] >> a[1] >> a[2])) throw Error("anchor table: truncated");
    return t;
  }
};

/// Lloyd k-means on sizes with a deterministic start: sizes sorted by
/// volume and seeded at evenly spaced quantiles. Fewer distinct sizes than
/// k yields fewer anchors. Output is sorted by volume.
inline SizeAnchorTable kmeans_anchors(std::vector<Size3> sizes, std::size_t k,
                                      int iterations = 50) {
  if (sizes.empty()) throw Error("k-means over an empty size set");
  auto volume = [](const Size3& s) { return s[0] * s[1] * s[2]; };
  std::sort(sizes.begin(), sizes.end(), [&](const Size3& a, const Size3& b) {
    return volume(a) < volume(b) || (volume(a) == volume(b) && a < b);
  });
  std::vector<Size3> distinct = sizes;
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  k = std::min(k, distinct.size());

  std::vector<Size3> centers;
  for (std::size_t c = 0; c < k; ++c) {
    const std::size_t idx = (2 * c + 1) * distinct.size() / (2 * k);
    centers.push_back(distinct[idx]);
  }
  std::vector<std::size_t> assign(sizes.size(), 0);
  for (int it = 0; it < iterations; ++it) {
    bool changed = false;
    for (std::size_t i = 0; i < sizes.size(); ++i) {
      std::size_t best = 0;
      double best_d = 1e300;
      for (std::size_t c = 0; c < k; ++c) {
        double d = 0;
        for (int j = 0; j < 3; ++j) d += (sizes[i][j] - centers[c][j]) * (sizes[i][j] - centers[c][j]);
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      if (assign[i] != best) changed = true;
      assign[i] = best;
    }
    std::vector<Size3> sum(k, Size3{0, 0, 0});
    std::vector<std::size_t> cnt(k, 0);
    for (std::size_t i = 0; i < sizes.size(); ++i) {
      for (int j = 0; j < 3; ++j) sum[assign[i]][j] += sizes[i][j];
      ++cnt[assign[i]];
    }
    for (std::size_t c = 0; c < k; ++c)
      if (cnt[c] > 0)
        for (int j = 0; j < 3; ++j) centers[c][j] = sum[c][j] / static_cast<double>(cnt[c]);
    if (!changed && it > 0) break;
  }
  std::sort(centers.begin(), centers.end(),
            [&](const Size3& a, const Size3& b) { return volume(a) < volume(b); });
  return {centers};
}

}  // namespace offtrack
