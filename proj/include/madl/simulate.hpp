#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "madl/data.hpp"

namespace madl {

enum class AnnotatorType { Adversarial, Random, ClusterSpecialized, Common, ClassSpecialized };
inline constexpr std::size_t kAnnotatorTypeCount = 5;

std::string to_string(AnnotatorType t);
AnnotatorType parse_annotator_type(const std::string& s);

struct AnnotatorSpec {
  AnnotatorType type = AnnotatorType::Common;
  // Members of one copy group share identical annotation draws.
  std::optional<std::size_t> copy_group;
  // Per-cluster (cluster-specialized, common) or per-class (class-specialized)
  // correctness probabilities; empty for the other types.
  std::vector<double> correctness;
};

struct AnnotatorSetSpec {
  std::string name;
  double annotation_ratio = 0.2;
  std::vector<AnnotatorSpec> annotators;
  // Annotators that provide training annotations (all unless inductive).
  std::vector<bool> training;
};

struct ClusterModel {
  Matrix centroids;  // k x D
  std::vector<std::size_t> assignment;

  std::size_t k() const { return centroids.rows; }
  std::size_t assign(std::span<const double> x) const;
};

// Two-class, two-feature Gaussian mixture with two components per class laid
// out in the four quadrants. Labels 0/1 in memory.
Dataset gen_toy(std::size_t n, std::uint64_t seed);

// Tabular stand-in for letter recognition: `classes` classes, `dim` features,
// two Gaussian components per class, centers in the unit box.
Dataset gen_letter_style(std::size_t n, std::uint64_t seed, std::size_t classes = 26,
                         std::size_t dim = 16);

// k-means++ seeding followed by Lloyd iterations until the assignment stops
// changing or 100 iterations. Throws ConfigError when k is 0 or exceeds the
// number of distinct rows.
ClusterModel kmeans(const Matrix& x, std::size_t k, std::uint64_t seed);

// Table-style annotator sets: independent, correlated, random-correlated,
// inductive. Per-annotator performance tables are drawn here (weak/expert
// clusters and classes, common-annotator correctness per cluster).
AnnotatorSetSpec make_set(const std::string& name, std::size_t num_classes, std::size_t num_clusters,
                          std::uint64_t seed);

// Full (unmasked) annotation matrix N x M. Copy-group members reuse the first
// member's draws. Throws ConfigError when a cluster-dependent annotator has no
// clusters available.
std::vector<int> simulate_annotations(const std::vector<AnnotatorSpec>& specs, const Dataset& data,
                                      const ClusterModel* clusters, std::uint64_t seed);

// Keeps round(ratio * N) random annotations per annotator, independently per
// annotator; the rest become kMissing.
std::vector<int> apply_ratio(const std::vector<int>& z, std::size_t num_instances,
                             std::size_t num_annotators, double ratio, std::uint64_t seed);

enum class FeatureMode { OneHot, PriorInfo };
FeatureMode parse_feature_mode(const std::string& s);
std::string to_string(FeatureMode m);

// One-hot identities, or [type one-hot | per-class correctness | per-cluster
// correctness] with uniform(+-0.05) noise clamped to [0, 1]. The empirical
// correctness values are measured on the full annotation matrix.
Matrix annotator_features(const std::vector<AnnotatorSpec>& specs, const Dataset& data,
                          const std::vector<int>& z_full, const ClusterModel* clusters,
                          FeatureMode mode, std::uint64_t seed);

}  // namespace madl
