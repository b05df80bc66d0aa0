#include "dmp3dad/scoring.hpp"

#include "dmp3dad/log.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "dmp3dad/error.hpp"

namespace dmp3dad {

DistanceMetric parse_metric(std::string_view name) {
  if (name == "euclidean") return DistanceMetric::euclidean;
  if (name == "cosine") return DistanceMetric::cosine;
  if (name == "manhattan") return DistanceMetric::manhattan;
  throw InvalidArgument("unknown metric: " + std::string(name));
}

Aggregation parse_aggregation(std::string_view name) {
  if (name == "sum") return Aggregation::sum;
  if (name == "min") return Aggregation::min;
  if (name == "mean") return Aggregation::mean;
  throw InvalidArgument("unknown aggregation: " + std::string(name));
}

std::string_view to_string(DistanceMetric metric) {
  switch (metric) {
    case DistanceMetric::euclidean: return "euclidean";
    case DistanceMetric::cosine: return "cosine";
    case DistanceMetric::manhattan: return "manhattan";
  }
  return "?";
}

std::string_view to_string(Aggregation agg) {
  switch (agg) {
    case Aggregation::sum: return "sum";
    case Aggregation::min: return "min";
    case Aggregation::mean: return "mean";
  }
  return "?";
}

void ReferenceSet::validate() const {
  if (members.empty()) throw InvalidArgument("reference set is empty");
  const auto& first = members.front().features;
  for (const auto& m : members) {
    if (m.features.views != first.views || m.features.dim != first.dim) {
      throw InvalidArgument("reference " + m.source_id + " has a different feature shape");
    }
  }
}

double view_distance(std::span<const float> a, std::span<const float> b, DistanceMetric metric) {
  if (a.size() != b.size()) {
    throw InvalidArgument("feature dimension mismatch: " + std::to_string(a.size()) + " vs " +
                          std::to_string(b.size()));
  }
  double acc = 0.0;
  switch (metric) {
    case DistanceMetric::euclidean:
      for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = static_cast<double>(a[i]) - b[i];
        acc += d * d;
      }
      return std::sqrt(acc);
    case DistanceMetric::cosine:
      if (std::equal(a.begin(), a.end(), b.begin())) return 0.0;
      for (std::size_t i = 0; i < a.size(); ++i) acc += static_cast<double>(a[i]) * b[i];
      // Unit inputs keep 1 - a.b >= 0 up to rounding; clamp the residue.
      return std::max(0.0, 1.0 - acc);
    case DistanceMetric::manhattan:
      for (std::size_t i = 0; i < a.size(); ++i) acc += std::abs(static_cast<double>(a[i]) - b[i]);
      return acc;
  }
  return acc;
}

double sample_distance(const FeatureMatrix& test, const FeatureMatrix& ref,
                       const ViewWeights& weights, DistanceMetric metric) {
  if (test.views != ref.views || test.dim != ref.dim) {
    throw InvalidArgument("feature matrices differ in shape");
  }
  if (weights.size() != static_cast<std::size_t>(test.views)) {
    throw InvalidArgument("view weights have " + std::to_string(weights.size()) +
                          " entries for " + std::to_string(test.views) + " views");
  }
  double d = 0.0;
  for (int v = 0; v < test.views; ++v) {
    d += weights.weights[v] * view_distance(test.row(v), ref.row(v), metric);
  }
  return d;
}

double anomaly_score(const FeatureMatrix& test, const ReferenceSet& refs,
                     const ViewWeights& weights, DistanceMetric metric, Aggregation agg) {
  if (refs.members.empty()) throw InvalidArgument("reference set is empty");
  double sum = 0.0;
  double lowest = std::numeric_limits<double>::infinity();
  for (const auto& m : refs.members) {
    const double d = sample_distance(test, m.features, weights, metric);
    sum += d;
    lowest = std::min(lowest, d);
  }
  switch (agg) {
    case Aggregation::sum: return sum;
    case Aggregation::min: return lowest;
    case Aggregation::mean: return sum / static_cast<double>(refs.members.size());
  }
  return sum;
}

Decision decide(double score, double tau) {
  return score > tau ? Decision::anomalous : Decision::normal;
}

double derive_threshold(const ReferenceSet& refs, const ViewWeights& weights,
                        DistanceMetric metric, Aggregation agg, const ThresholdPolicy& policy) {
  if (policy.kind == ThresholdPolicy::Kind::none) {
    throw InvalidArgument("threshold policy 'none' does not define a threshold");
  }
  if (refs.size() < 2) throw InvalidArgument("leave-one-out threshold needs at least 2 references");
  std::vector<double> scores;
  scores.reserve(refs.size());
  for (std::size_t i = 0; i < refs.size(); ++i) {
    ReferenceSet rest;
    for (std::size_t j = 0; j < refs.size(); ++j) {
      if (j != i) rest.members.push_back(refs.members[j]);
    }
    scores.push_back(anomaly_score(refs.members[i].features, rest, weights, metric, agg));
  }
  double mean = 0.0;
  for (double s : scores) mean += s;
  mean /= static_cast<double>(scores.size());
  double var = 0.0;
  for (double s : scores) var += (s - mean) * (s - mean);
  var /= static_cast<double>(scores.size());
  return mean + policy.k * std::sqrt(var);
}

ViewWeights effective_weights(const ViewWeights& weights) {
  const bool all_zero = std::all_of(weights.weights.begin(), weights.weights.end(),
                                    [](double w) { return w == 0.0; });
  if (!all_zero || weights.weights.empty()) return weights;
  logger().warn("all view weights are zero (gamma={}); falling back to uniform weights", weights.gamma);
  return uniform_weights(weights.size(), weights.gamma);
}

FeatureMatrix mean_pool_views(const FeatureMatrix& features) {
  FeatureMatrix out;
  out.views = 1;
  out.dim = features.dim;
  std::vector<double> acc(features.dim, 0.0);
  for (int v = 0; v < features.views; ++v) {
    const auto row = features.row(v);
    for (int c = 0; c < features.dim; ++c) acc[c] += row[c];
  }
  out.values.resize(features.dim);
  for (int c = 0; c < features.dim; ++c) out.values[c] = static_cast<float>(acc[c] / features.views);
  l2_normalize(out.values);
  return out;
}

}  // namespace dmp3dad
