#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <utility>

#include "dmp3dad/error.hpp"
#include "dmp3dad/viewgrid.hpp"

using namespace dmp3dad;

namespace {

using Angles = std::vector<std::pair<double, double>>;  // (azimuth, elevation)

Angles angles_of(const ViewGrid& g) {
  Angles out;
  for (const auto& p : g.views) out.emplace_back(p.azimuth_deg, p.elevation_deg);
  return out;
}

}  // namespace

TEST(ViewGrid, FiveViews) {
  const Angles expected = {{0, 30}, {90, 30}, {180, 30}, {270, 30}, {0, 90}};
  EXPECT_EQ(angles_of(generate_view_grid(5)), expected);
}

TEST(ViewGrid, TenViews) {
  const Angles expected = {{0, 30},   {45, 30},  {90, 30},  {135, 30}, {180, 30},
                           {225, 30}, {270, 30}, {315, 30}, {0, 90},   {0, -90}};
  EXPECT_EQ(angles_of(generate_view_grid(10)), expected);
}

TEST(ViewGrid, TwentyViews) {
  Angles expected;
  for (int a = 0; a < 360; a += 45) expected.emplace_back(a, 0);
  for (int a = 0; a < 360; a += 45) expected.emplace_back(a, 45);
  expected.emplace_back(0, -45);
  expected.emplace_back(180, -45);
  expected.emplace_back(0, 90);
  expected.emplace_back(0, -90);
  EXPECT_EQ(angles_of(generate_view_grid(20)), expected);
}

TEST(ViewGrid, ThirtyViews) {
  Angles expected;
  for (int a = 0; a < 360; a += 30) expected.emplace_back(a, 0);
  for (int a = 0; a < 360; a += 45) expected.emplace_back(a, 45);
  for (int a = 0; a < 360; a += 45) expected.emplace_back(a, -45);
  expected.emplace_back(0, 90);
  expected.emplace_back(0, -90);
  EXPECT_EQ(angles_of(generate_view_grid(30)), expected);
}

TEST(ViewGrid, UnsupportedCountThrows) {
  for (int v : {0, 1, 7, 11, 40, -5}) EXPECT_THROW(generate_view_grid(v), InvalidArgument);
}

TEST(ViewGrid, PosesAreDistinctAndAtRadius) {
  for (int v : kSupportedViewCounts) {
    const auto g = generate_view_grid(v);
    ASSERT_EQ(g.size(), static_cast<std::size_t>(v));
    std::set<std::pair<double, double>> seen;
    for (const auto& p : g.views) {
      EXPECT_TRUE(seen.emplace(p.azimuth_deg, p.elevation_deg).second);
      EXPECT_EQ(p.radius, 2.2);
      EXPECT_GE(p.azimuth_deg, 0.0);
      EXPECT_LT(p.azimuth_deg, 360.0);
    }
  }
}

TEST(ViewGrid, Deterministic) {
  for (int v : kSupportedViewCounts) {
    EXPECT_EQ(generate_view_grid(v).views, generate_view_grid(v).views);
  }
}

TEST(ViewGrid, FiveViewAnglesAreCoveredByTenViews) {
  const auto ten = angles_of(generate_view_grid(10));
  const std::set<std::pair<double, double>> ten_set(ten.begin(), ten.end());
  for (const auto& a : angles_of(generate_view_grid(5))) EXPECT_TRUE(ten_set.contains(a));
}

TEST(CameraBasis, OrthonormalAndLookingAtOrigin) {
  for (int v : kSupportedViewCounts) {
    for (const auto& pose : generate_view_grid(v).views) {
      const auto b = camera_basis(pose);
      const auto dot = [](const auto& a, const auto& c) { return a[0] * c[0] + a[1] * c[1] + a[2] * c[2]; };
      EXPECT_NEAR(dot(b.forward, b.forward), 1.0, 1e-9);
      EXPECT_NEAR(dot(b.right, b.right), 1.0, 1e-9);
      EXPECT_NEAR(dot(b.up, b.up), 1.0, 1e-9);
      EXPECT_NEAR(dot(b.forward, b.right), 0.0, 1e-9);
      EXPECT_NEAR(dot(b.forward, b.up), 0.0, 1e-9);
      EXPECT_NEAR(dot(b.right, b.up), 0.0, 1e-9);
      // forward is the unit vector from the camera to the origin
      const double r = std::sqrt(dot(b.position, b.position));
      EXPECT_NEAR(r, pose.radius, 1e-12);
      for (int i = 0; i < 3; ++i) EXPECT_NEAR(b.forward[i], -b.position[i] / r, 1e-12);
    }
  }
}

TEST(CameraBasis, FrontViewLooksAlongNegativeX) {
  const auto b = camera_basis({0.0, 0.0, 2.2});
  EXPECT_NEAR(b.position[0], 2.2, 1e-15);
  EXPECT_NEAR(b.forward[0], -1.0, 1e-15);
  EXPECT_NEAR(b.up[2], 1.0, 1e-15);
}

TEST(ViewGridId, RoundTrips) {
  for (int v : kSupportedViewCounts) {
    EXPECT_EQ(view_grid_id(v), "grid-v" + std::to_string(v));
    EXPECT_EQ(view_grid_from_id(view_grid_id(v)).views, generate_view_grid(v).views);
  }
  const auto front = view_grid_from_id("grid-front");
  ASSERT_EQ(front.size(), 1u);
  EXPECT_EQ(front.views[0], (CameraPose{0.0, 0.0, 2.2}));
  EXPECT_THROW(view_grid_from_id("grid-v7"), InvalidArgument);
  EXPECT_THROW(view_grid_from_id("ten"), InvalidArgument);
}
