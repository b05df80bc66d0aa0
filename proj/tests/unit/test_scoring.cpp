#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "dmp3dad/error.hpp"
#include "dmp3dad/scoring.hpp"

using namespace dmp3dad;

namespace {

std::vector<float> unit_vector(std::mt19937& gen, int dim) {
  std::normal_distribution<float> d;
  std::vector<float> v(dim);
  for (auto& x : v) x = d(gen);
  l2_normalize(v);
  return v;
}

FeatureMatrix random_features(std::mt19937& gen, int views, int dim) {
  FeatureMatrix fm{views, dim, {}};
  for (int v = 0; v < views; ++v) {
    const auto row = unit_vector(gen, dim);
    fm.values.insert(fm.values.end(), row.begin(), row.end());
  }
  return fm;
}

FeatureMatrix one_hot_rows(std::vector<int> hot, int dim) {
  FeatureMatrix fm{static_cast<int>(hot.size()), dim, std::vector<float>(hot.size() * dim, 0.0f)};
  for (std::size_t v = 0; v < hot.size(); ++v) fm.values[v * dim + hot[v]] = 1.0f;
  return fm;
}

}  // namespace

TEST(ViewDistance, IdenticalVectorsGiveZero) {
  std::mt19937 gen(1);
  for (int i = 0; i < 50; ++i) {
    const auto a = unit_vector(gen, 32);
    for (auto m : {DistanceMetric::euclidean, DistanceMetric::cosine, DistanceMetric::manhattan}) {
      EXPECT_EQ(view_distance(a, a, m), 0.0);
    }
  }
}

TEST(ViewDistance, OrthogonalUnitVectors) {
  const std::vector<float> a = {1, 0, 0}, b = {0, 1, 0};
  EXPECT_DOUBLE_EQ(view_distance(a, b, DistanceMetric::euclidean), std::sqrt(2.0));
  EXPECT_DOUBLE_EQ(view_distance(a, b, DistanceMetric::cosine), 1.0);
  EXPECT_DOUBLE_EQ(view_distance(a, b, DistanceMetric::manhattan), 2.0);
}

TEST(ViewDistance, SquaredEuclideanIsTwiceCosine) {
  std::mt19937 gen(2);
  for (int i = 0; i < 200; ++i) {
    const auto a = unit_vector(gen, 64), b = unit_vector(gen, 64);
    const double e = view_distance(a, b, DistanceMetric::euclidean);
    EXPECT_NEAR(e * e, 2.0 * view_distance(a, b, DistanceMetric::cosine), 1e-6);
  }
}

TEST(ViewDistance, DimensionMismatchThrows) {
  const std::vector<float> a = {1, 0}, b = {1, 0, 0};
  EXPECT_THROW(view_distance(a, b, DistanceMetric::euclidean), InvalidArgument);
}

TEST(ViewDistance, MetricNames) {
  EXPECT_EQ(parse_metric("cosine"), DistanceMetric::cosine);
  EXPECT_EQ(to_string(DistanceMetric::manhattan), "manhattan");
  EXPECT_THROW(parse_metric("l3"), InvalidArgument);
  EXPECT_EQ(parse_aggregation("min"), Aggregation::min);
  EXPECT_THROW(parse_aggregation("max"), InvalidArgument);
}

TEST(SampleDistance, MaskedWeights) {
  const auto t = one_hot_rows({0, 1}, 4);
  const auto r = one_hot_rows({0, 2}, 4);
  const ViewWeights w{{1.0, 0.0}, 0.2};
  EXPECT_EQ(sample_distance(t, r, w, DistanceMetric::euclidean), 0.0);
  const ViewWeights w2{{0.0, 1.0}, 0.2};
  EXPECT_DOUBLE_EQ(sample_distance(t, r, w2, DistanceMetric::euclidean), std::sqrt(2.0));
}

TEST(SampleDistance, UniformWeightsGiveTheMeanViewDistance) {
  std::mt19937 gen(3);
  for (int i = 0; i < 100; ++i) {
    const auto t = random_features(gen, 10, 16), r = random_features(gen, 10, 16);
    long double mean = 0;
    for (int v = 0; v < 10; ++v) {
      long double ss = 0;
      for (int k = 0; k < 16; ++k) {
        const long double d = static_cast<long double>(t.row(v)[k]) - r.row(v)[k];
        ss += d * d;
      }
      mean += std::sqrt(ss) / 10.0L;
    }
    EXPECT_NEAR(sample_distance(t, r, uniform_weights(10), DistanceMetric::euclidean),
                static_cast<double>(mean), 1e-9);
  }
}

TEST(SampleDistance, Errors) {
  std::mt19937 gen(4);
  const auto a = random_features(gen, 3, 8), b = random_features(gen, 2, 8), c = random_features(gen, 3, 9);
  EXPECT_THROW(sample_distance(a, b, uniform_weights(3), DistanceMetric::euclidean), InvalidArgument);
  EXPECT_THROW(sample_distance(a, c, uniform_weights(3), DistanceMetric::euclidean), InvalidArgument);
  EXPECT_THROW(sample_distance(a, a, uniform_weights(2), DistanceMetric::euclidean), InvalidArgument);
}

TEST(AnomalyScore, Aggregations) {
  // Manhattan distance between distinct one-hot rows is 2.
  const auto t = one_hot_rows({0}, 2);
  ReferenceSet refs;
  refs.members.push_back({"r", one_hot_rows({1}, 2)});
  const ViewWeights w{{0.5}, 0.2};
  EXPECT_DOUBLE_EQ(anomaly_score(t, refs, w, DistanceMetric::manhattan), 1.0);

  // Three references at euclidean distances 1, 2, 3 along one view.
  FeatureMatrix test{1, 1, {0.0f}};
  ReferenceSet three;
  for (float d : {1.0f, 2.0f, 3.0f}) three.members.push_back({"r", FeatureMatrix{1, 1, {d}}});
  const ViewWeights one{{1.0}, 0.2};
  EXPECT_DOUBLE_EQ(anomaly_score(test, three, one, DistanceMetric::euclidean, Aggregation::sum), 6.0);
  EXPECT_DOUBLE_EQ(anomaly_score(test, three, one, DistanceMetric::euclidean, Aggregation::min), 1.0);
  EXPECT_DOUBLE_EQ(anomaly_score(test, three, one, DistanceMetric::euclidean, Aggregation::mean), 2.0);
}

TEST(AnomalyScore, EqualToAReferenceGivesZeroUnderMin) {
  std::mt19937 gen(5);
  ReferenceSet refs;
  for (int i = 0; i < 4; ++i) refs.members.push_back({std::to_string(i), random_features(gen, 5, 8)});
  EXPECT_EQ(anomaly_score(refs.members[2].features, refs, uniform_weights(5), DistanceMetric::euclidean,
                          Aggregation::min),
            0.0);
}

TEST(AnomalyScore, SumIsMonotoneInReferences) {
  std::mt19937 gen(6);
  const auto t = random_features(gen, 5, 8);
  ReferenceSet refs;
  double prev = 0.0;
  for (int i = 0; i < 8; ++i) {
    refs.members.push_back({std::to_string(i), random_features(gen, 5, 8)});
    const double s = anomaly_score(t, refs, uniform_weights(5), DistanceMetric::euclidean);
    EXPECT_GE(s, prev);
    prev = s;
  }
}

TEST(AnomalyScore, AggregationRelations) {
  std::mt19937 gen(7);
  for (int i = 0; i < 50; ++i) {
    const auto t = random_features(gen, 4, 8);
    ReferenceSet refs;
    for (int r = 0; r < 5; ++r) refs.members.push_back({"r", random_features(gen, 4, 8)});
    const auto w = uniform_weights(4);
    const double sum = anomaly_score(t, refs, w, DistanceMetric::cosine, Aggregation::sum);
    const double mn = anomaly_score(t, refs, w, DistanceMetric::cosine, Aggregation::min);
    const double mean = anomaly_score(t, refs, w, DistanceMetric::cosine, Aggregation::mean);
    EXPECT_GE(sum, mn * 5 - 1e-12);
    EXPECT_NEAR(mean, sum / 5, 1e-12);
  }
}

TEST(AnomalyScore, EmptyOrInconsistentReferencesThrow) {
  std::mt19937 gen(8);
  const auto t = random_features(gen, 3, 8);
  EXPECT_THROW(anomaly_score(t, ReferenceSet{}, uniform_weights(3), DistanceMetric::euclidean), InvalidArgument);
  ReferenceSet bad;
  bad.members.push_back({"a", random_features(gen, 3, 8)});
  bad.members.push_back({"b", random_features(gen, 2, 8)});
  EXPECT_THROW(bad.validate(), InvalidArgument);
}

TEST(Decide, StrictThreshold) {
  EXPECT_EQ(decide(0.5, 0.5), Decision::normal);
  EXPECT_EQ(decide(0.6, 0.5), Decision::anomalous);
  EXPECT_EQ(decide(0.4, 0.5), Decision::normal);
}

TEST(DeriveThreshold, IdenticalReferencesGiveZero) {
  std::mt19937 gen(9);
  const auto f = random_features(gen, 3, 8);
  ReferenceSet refs;
  refs.members = {{"a", f}, {"b", f}};
  const ThresholdPolicy loo{ThresholdPolicy::Kind::loo_mean_plus_k_std, 2.0};
  EXPECT_EQ(derive_threshold(refs, uniform_weights(3), DistanceMetric::euclidean, Aggregation::sum, loo), 0.0);
}

TEST(DeriveThreshold, PopulationStd) {
  // Scalar features 0, 2, 6: leave-one-out sums are 2+6, 2+4, 6+4 = 8, 6, 10.
  ReferenceSet refs;
  for (float x : {0.0f, 2.0f, 6.0f}) refs.members.push_back({"r", FeatureMatrix{1, 1, {x}}});
  const ViewWeights w{{1.0}, 0.2};
  const double mean = 8.0, std = std::sqrt((0.0 + 4.0 + 4.0) / 3.0);
  ThresholdPolicy p{ThresholdPolicy::Kind::loo_mean_plus_k_std, 1.0};
  EXPECT_DOUBLE_EQ(derive_threshold(refs, w, DistanceMetric::euclidean, Aggregation::sum, p), mean + std);
  p.k = 0.0;
  EXPECT_DOUBLE_EQ(derive_threshold(refs, w, DistanceMetric::euclidean, Aggregation::sum, p), mean);
  // A pair has equal leave-one-out scores, so the spread term vanishes.
  ReferenceSet pair;
  for (float x : {0.0f, 3.0f}) pair.members.push_back({"r", FeatureMatrix{1, 1, {x}}});
  p.k = 1.0;
  EXPECT_DOUBLE_EQ(derive_threshold(pair, w, DistanceMetric::euclidean, Aggregation::sum, p), 3.0);
}

TEST(DeriveThreshold, Errors) {
  ReferenceSet one;
  one.members.push_back({"a", FeatureMatrix{1, 1, {0.0f}}});
  const ViewWeights w{{1.0}, 0.2};
  EXPECT_THROW(derive_threshold(one, w, DistanceMetric::euclidean, Aggregation::sum,
                                {ThresholdPolicy::Kind::loo_mean_plus_k_std, 2.0}),
               InvalidArgument);
  one.members.push_back(one.members[0]);
  EXPECT_THROW(derive_threshold(one, w, DistanceMetric::euclidean, Aggregation::sum, {}), InvalidArgument);
}

TEST(EffectiveWeights, AllZeroFallsBackToUniform) {
  const auto w = effective_weights({{0.0, 0.0, 0.0, 0.0}, 0.2});
  for (double x : w.weights) EXPECT_EQ(x, 0.25);
  const ViewWeights some{{0.0, 0.5}, 0.2};
  EXPECT_EQ(effective_weights(some).weights, some.weights);
}

TEST(MeanPool, NormalisedMeanRow) {
  const auto fm = one_hot_rows({0, 1}, 3);
  const auto p = mean_pool_views(fm);
  EXPECT_EQ(p.views, 1);
  EXPECT_NEAR(p.values[0], std::sqrt(0.5), 1e-7);
  EXPECT_NEAR(p.values[1], std::sqrt(0.5), 1e-7);
  EXPECT_EQ(p.values[2], 0.0f);
}

TEST(ScoringProperties, SymmetryNonnegativityZeroAndScaling) {
  std::mt19937 gen(10);
  std::uniform_real_distribution<double> uw(0.05, 1.0);
  for (int i = 0; i < 1000; ++i) {
    const auto a = random_features(gen, 5, 12), b = random_features(gen, 5, 12);
    ViewWeights w{{}, 0.2};
    for (int v = 0; v < 5; ++v) w.weights.push_back(uw(gen));
    for (auto m : {DistanceMetric::euclidean, DistanceMetric::cosine, DistanceMetric::manhattan}) {
      const double ab = sample_distance(a, b, w, m);
      EXPECT_GE(ab, 0.0);
      EXPECT_EQ(ab, sample_distance(b, a, w, m));
      EXPECT_EQ(sample_distance(a, a, w, m), 0.0);
      EXPECT_GT(ab, 0.0);  // all weights positive and rows differ
    }
  }
}
