#pragma once

#include <cstddef>
#include <vector>

#include "dmp3dad/projection.hpp"

namespace dmp3dad {

/// Default validity threshold.
inline constexpr double kDefaultGamma = 0.2;

/// bit = intensity < gamma.
struct ValidityMask {
  int height = 0;
  int width = 0;
  std::vector<bool> bits;

  std::size_t count() const;
};

/// Per-view reliability weights, each in [0, 1]. Not renormalised.
struct ViewWeights {
  std::vector<double> weights;
  double gamma = kDefaultGamma;

  std::size_t size() const { return weights.size(); }
};

/// Throws InvalidArgument unless 0 < gamma <= 1.
void check_gamma(double gamma);

ValidityMask compute_mask(const DepthImage& image, double gamma);

/// Fraction of pixels with intensity strictly below gamma.
double compute_reliability(const DepthImage& image, double gamma);

/// Mean reliability per view over the references. Every reference must have
/// the same number of views.
ViewWeights compute_view_weights(const std::vector<std::vector<DepthImage>>& references,
                                 double gamma);

/// Same as compute_view_weights but from precomputed reliabilities
/// (references x views).
ViewWeights view_weights_from_reliabilities(const std::vector<std::vector<double>>& reliabilities,
                                            double gamma);

/// All-equal weights 1/V.
ViewWeights uniform_weights(std::size_t views, double gamma = kDefaultGamma);

}  // namespace dmp3dad
