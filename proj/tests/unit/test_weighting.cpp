#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "dmp3dad/error.hpp"
#include "dmp3dad/synthetic.hpp"
#include "dmp3dad/weighting.hpp"
#include "support.hpp"

using namespace dmp3dad;

namespace {

DepthImage filled(int size, float value) {
  DepthImage img;
  img.height = img.width = size;
  img.intensities.assign(static_cast<std::size_t>(size) * size, value);
  return img;
}

std::size_t recount(const DepthImage& img, double gamma) {
  std::size_t n = 0;
  for (int r = 0; r < img.height; ++r)
    for (int c = 0; c < img.width; ++c) n += static_cast<double>(img.at(r, c)) < gamma ? 1 : 0;
  return n;
}

}  // namespace

TEST(ComputeMask, Examples) {
  EXPECT_EQ(compute_mask(filled(224, 1.0f), 0.2).count(), 0u);
  for (double g : {0.01, 0.2, 0.5, 0.99}) EXPECT_EQ(compute_mask(filled(224, 0.0f), g).count(), 224u * 224u);
  auto img = filled(224, 1.0f);
  for (int k = 0; k < 100; ++k) img.intensities[k * 401] = 0.1f;
  const auto mask = compute_mask(img, 0.2);
  EXPECT_EQ(mask.count(), 100u);
  EXPECT_EQ(mask.height, 224);
  EXPECT_EQ(mask.width, 224);
}

TEST(ComputeMask, ComparisonIsStrict) {
  auto img = filled(4, 0.2f);
  EXPECT_EQ(compute_mask(img, 0.2f).count(), 0u);
  EXPECT_EQ(compute_mask(img, std::nextafter(0.2f, 1.0f)).count(), 16u);
}

TEST(ComputeMask, GammaDomain) {
  const auto img = filled(4, 0.5f);
  EXPECT_THROW(compute_mask(img, 0.0), InvalidArgument);
  EXPECT_THROW(compute_mask(img, -0.1), InvalidArgument);
  EXPECT_THROW(compute_mask(img, 1.5), InvalidArgument);
  // gamma = 1 selects exactly the foreground, since background is exactly 1.
  auto mixed = filled(4, 1.0f);
  mixed.intensities[3] = 0.9f;
  EXPECT_EQ(compute_mask(mixed, 1.0).count(), 1u);
}

TEST(ComputeReliability, Examples) {
  EXPECT_EQ(compute_reliability(filled(224, 0.0f), 0.2), 1.0);
  auto img = filled(224, 1.0f);
  for (int k = 0; k < 100; ++k) img.intensities[k] = 0.1f;
  EXPECT_EQ(compute_reliability(img, 0.2), 100.0 / 50176.0);
}

TEST(ComputeReliability, SphereRenderMatchesRecount) {
  const auto cloud = normalize_to_unit_cube(make_shape(Shape::sphere, 1)).cloud;
  const auto img = render_view(cloud, {0, 30, 2.2}, {});
  EXPECT_EQ(compute_reliability(img, 0.5), static_cast<double>(recount(img, 0.5)) / 50176.0);
}

TEST(ComputeViewWeights, OneReferenceEqualsItsReliabilities) {
  std::vector<DepthImage> views;
  for (std::uint32_t s = 0; s < 5; ++s) views.push_back(testing_support::random_image(s, 32));
  const auto w = compute_view_weights({views}, 0.3);
  ASSERT_EQ(w.size(), 5u);
  EXPECT_EQ(w.gamma, 0.3);
  for (int v = 0; v < 5; ++v) EXPECT_EQ(w.weights[v], compute_reliability(views[v], 0.3));
}

TEST(ComputeViewWeights, MeanOverReferences) {
  const auto w = view_weights_from_reliabilities({{0.2, 1.0}, {0.4, 0.0}}, 0.2);
  EXPECT_DOUBLE_EQ(w.weights[0], 0.3);
  EXPECT_DOUBLE_EQ(w.weights[1], 0.5);
}

TEST(ComputeViewWeights, Errors) {
  EXPECT_THROW(compute_view_weights({}, 0.2), InvalidArgument);
  std::vector<DepthImage> two(2, filled(4, 0.0f));
  std::vector<DepthImage> three(3, filled(4, 0.0f));
  EXPECT_THROW(compute_view_weights({two, three}, 0.2), InvalidArgument);
}

TEST(ComputeViewWeights, DefaultGamma) { EXPECT_EQ(kDefaultGamma, 0.2); }

TEST(ComputeViewWeights, Properties) {
  std::mt19937 gen(3);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<std::vector<DepthImage>> refs;
    for (int r = 0; r < 3; ++r) {
      std::vector<DepthImage> views;
      for (int v = 0; v < 4; ++v) views.push_back(testing_support::random_image(gen(), 24));
      refs.push_back(views);
    }
    // an all-background view in every reference gets weight exactly 0
    for (auto& r : refs) r[2] = filled(24, 1.0f);
    std::vector<double> prev(4, 0.0);
    for (int g10 = 1; g10 <= 10; ++g10) {
      const auto w = compute_view_weights(refs, g10 / 10.0);
      for (int v = 0; v < 4; ++v) {
        EXPECT_GE(w.weights[v], 0.0);
        EXPECT_LE(w.weights[v], 1.0);
        EXPECT_GE(w.weights[v], prev[v]);
        prev[v] = w.weights[v];
      }
      EXPECT_EQ(w.weights[2], 0.0);
      EXPECT_GT(w.weights[0], 0.0);
    }
    auto shuffled = refs;
    std::shuffle(shuffled.begin(), shuffled.end(), gen);
    const auto a = compute_view_weights(refs, 0.4);
    const auto b = compute_view_weights(shuffled, 0.4);
    for (int v = 0; v < 4; ++v) EXPECT_NEAR(a.weights[v], b.weights[v], 1e-15);
  }
}

TEST(UniformWeights, OneOverV) {
  const auto w = uniform_weights(10);
  ASSERT_EQ(w.size(), 10u);
  for (double x : w.weights) EXPECT_EQ(x, 0.1);
}
