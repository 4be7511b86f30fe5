#pragma once

#include <cmath>
#include <numbers>

#include "offtrack/geom.hpp"

namespace offtrack {

/// 12 bins of 30 degrees covering [0, 2pi); bin b is centered at
/// b*30 + 15 degrees and the residual lies in [-15, +15) degrees.
struct HeadingBinCodec {
  static constexpr int kBins = 12;
  static constexpr double kBinWidth = 2.0 * std::numbers::pi / kBins;
  static constexpr double kHalfWidth = kBinWidth / 2.0;

  struct Code {
    int bin = 0;
    double residual = 0.0;  // radians
  };

  static double wrap_0_2pi(double theta) {
    double w = std::fmod(theta, 2.0 * std::numbers::pi);
    if (w < 0) w += 2.0 * std::numbers::pi;
    if (w >= 2.0 * std::numbers::pi) w = 0.0;
    return w;
  }

  static Code encode(double theta) {
    const double w = wrap_0_2pi(theta);
    int bin = static_cast<int>(std::floor(w / kBinWidth));
    bin = std::clamp(bin, 0, kBins - 1);
    return {bin, w - (bin * kBinWidth + kHalfWidth)};
  }

  /// Returns the heading in (-pi, pi].
  static double decode(int bin, double residual) {
    return normalize_yaw(bin * kBinWidth + kHalfWidth + residual);
  }
};

}  // namespace offtrack
