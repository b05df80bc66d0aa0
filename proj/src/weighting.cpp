#include "dmp3dad/weighting.hpp"

#include <algorithm>

#include "dmp3dad/error.hpp"

namespace dmp3dad {

std::size_t ValidityMask::count() const {
  return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), true));
}

void check_gamma(double gamma) {
  if (!(gamma > 0.0 && gamma <= 1.0)) {
    throw InvalidArgument("gamma must lie in (0, 1], got " + std::to_string(gamma));
  }
}

ValidityMask compute_mask(const DepthImage& image, double gamma) {
  check_gamma(gamma);
  ValidityMask mask;
  mask.height = image.height;
  mask.width = image.width;
  mask.bits.resize(image.intensities.size());
  for (std::size_t i = 0; i < image.intensities.size(); ++i) {
    mask.bits[i] = image.intensities[i] < gamma;
  }
  return mask;
}

double compute_reliability(const DepthImage& image, double gamma) {
  check_gamma(gamma);
  if (image.intensities.empty()) return 0.0;
  std::size_t valid = 0;
  for (float v : image.intensities) valid += v < gamma;
  return static_cast<double>(valid) / static_cast<double>(image.intensities.size());
}

ViewWeights view_weights_from_reliabilities(const std::vector<std::vector<double>>& reliabilities,
                                            double gamma) {
  check_gamma(gamma);
  if (reliabilities.empty()) throw InvalidArgument("view weights need at least one reference");
  const std::size_t views = reliabilities.front().size();
  ViewWeights w;
  w.gamma = gamma;
  w.weights.assign(views, 0.0);
  for (const auto& r : reliabilities) {
    if (r.size() != views) throw InvalidArgument("references were rendered with different view counts");
    for (std::size_t v = 0; v < views; ++v) w.weights[v] += r[v];
  }
  for (auto& x : w.weights) x /= static_cast<double>(reliabilities.size());
  return w;
}

ViewWeights compute_view_weights(const std::vector<std::vector<DepthImage>>& references,
                                 double gamma) {
  check_gamma(gamma);
  std::vector<std::vector<double>> rel;
  rel.reserve(references.size());
  for (const auto& ref : references) {
    std::vector<double> r;
    r.reserve(ref.size());
    for (const auto& img : ref) r.push_back(compute_reliability(img, gamma));
    rel.push_back(std::move(r));
  }
  return view_weights_from_reliabilities(rel, gamma);
}

ViewWeights uniform_weights(std::size_t views, double gamma) {
  ViewWeights w;
  w.gamma = gamma;
  w.weights.assign(views, views ? 1.0 / static_cast<double>(views) : 0.0);
  return w;
}

}  // namespace dmp3dad
