#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dmp3dad/encoder.hpp"
#include "dmp3dad/weighting.hpp"

namespace dmp3dad {

enum class DistanceMetric { euclidean, cosine, manhattan };
enum class Aggregation { sum, min, mean };
enum class Decision { normal, anomalous };

DistanceMetric parse_metric(std::string_view name);
Aggregation parse_aggregation(std::string_view name);
std::string_view to_string(DistanceMetric metric);
std::string_view to_string(Aggregation agg);

struct ReferenceMember {
  std::string source_id;
  FeatureMatrix features;
};

/// The few normal examples of the target category. All members share V, C.
struct ReferenceSet {
  std::vector<ReferenceMember> members;

  std::size_t size() const { return members.size(); }
  /// Throws InvalidArgument if empty or members disagree on V or C.
  void validate() const;
};

struct ThresholdPolicy {
  enum class Kind { none, loo_mean_plus_k_std };
  Kind kind = Kind::none;
  double k = 2.0;
};

/// euclidean ||a-b||, cosine 1 - a.b, manhattan sum |a_i - b_i|.
double view_distance(std::span<const float> a, std::span<const float> b, DistanceMetric metric);

/// Sum over views (ascending) of weight * view distance.
double sample_distance(const FeatureMatrix& test, const FeatureMatrix& ref,
                       const ViewWeights& weights, DistanceMetric metric);

/// Aggregates sample distances to every reference, in reference order.
double anomaly_score(const FeatureMatrix& test, const ReferenceSet& refs,
                     const ViewWeights& weights, DistanceMetric metric,
                     Aggregation agg = Aggregation::sum);

/// Anomalous iff score > tau.
Decision decide(double score, double tau);

/// Leave-one-out threshold: mean + k * population std of each reference's
/// score against the others. Requires at least two references.
double derive_threshold(const ReferenceSet& refs, const ViewWeights& weights,
                        DistanceMetric metric, Aggregation agg, const ThresholdPolicy& policy);

/// Weights with every entry zero are replaced by uniform 1/V (with a warning)
/// so scores stay informative.
ViewWeights effective_weights(const ViewWeights& weights);

/// Mean of the view rows, l2-normalised, as a single-view matrix.
FeatureMatrix mean_pool_views(const FeatureMatrix& features);

}  // namespace dmp3dad
