#pragma once

#include <algorithm>
#include <cmath>

namespace milnet {

inline constexpr double kScoreEps = 1e-7;

inline double clamp_score(double s) { return std::clamp(s, kScoreEps, 1.0 - kScoreEps); }

/// Binary cross-entropy of a bag score against a {0,1} label. The score is
/// clamped to [1e-7, 1 - 1e-7] first, so the result is always finite.
inline double bce_loss(double s, int y) {
  const double c = clamp_score(s);
  return y == 1 ? -std::log(c) : -std::log1p(-c);
}

/// Same loss given the complement 1 - s computed separately, which keeps
/// full precision for confident scores on either side.
inline double bce_loss(double s, double s_complement, int y) {
  return y == 1 ? -std::log(clamp_score(s)) : -std::log(clamp_score(s_complement));
}

/// d bce / d s at the clamped score.
inline double bce_grad(double s, int y) {
  const double c = clamp_score(s);
  return (c - static_cast<double>(y)) / (c * (1.0 - c));
}

/// d bce / d s from the score and its complement.
inline double bce_grad(double s, double s_complement, int y) {
  return y == 1 ? -1.0 / clamp_score(s) : 1.0 / clamp_score(s_complement);
}

}  // namespace milnet
