#include "madl/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "madl/error.hpp"

namespace madl {

namespace {

constexpr double kExpert = 0.95;
constexpr double kWeak = 0.05;
constexpr double kFeatureNoise = 0.05;
constexpr std::size_t kMaxLloydIterations = 100;

// Independent substream per (seed, stream id).
std::mt19937_64 substream(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return std::mt19937_64(seq);
}

// Shuffles rows of a generated dataset so components are interleaved.
void shuffle_rows(Dataset& d, std::mt19937_64& rng) {
  std::vector<std::size_t> perm(d.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::shuffle(perm.begin(), perm.end(), rng);
  Matrix x = d.x.select_rows(perm);
  std::vector<int> y(d.size());
  for (std::size_t i = 0; i < perm.size(); ++i) y[i] = d.y[perm[i]];
  d.x = std::move(x);
  d.y = std::move(y);
}

// Marks `count` of `n` slots as true, uniformly at random.
std::vector<bool> random_subset(std::size_t n, std::size_t count, std::mt19937_64& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::shuffle(idx.begin(), idx.end(), rng);
  std::vector<bool> mark(n, false);
  for (std::size_t i = 0; i < count; ++i) mark[idx[i]] = true;
  return mark;
}

std::vector<double> weak_expert_table(std::size_t size, std::size_t weak, std::mt19937_64& rng) {
  auto is_weak = random_subset(size, weak, rng);
  std::vector<double> q(size);
  for (std::size_t i = 0; i < size; ++i) q[i] = is_weak[i] ? kWeak : kExpert;
  return q;
}

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d += (a[i] - b[i]) * (a[i] - b[i]);
  return d;
}

std::size_t distinct_rows(const Matrix& x) {
  std::vector<std::size_t> idx(x.rows);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  auto less = [&](std::size_t a, std::size_t b) {
    auto ra = x.row(a);
    auto rb = x.row(b);
    return std::lexicographical_compare(ra.begin(), ra.end(), rb.begin(), rb.end());
  };
  std::sort(idx.begin(), idx.end(), less);
  std::size_t count = x.rows ? 1 : 0;
  for (std::size_t i = 1; i < idx.size(); ++i) count += less(idx[i - 1], idx[i]) ? 1 : 0;
  return count;
}

}  // namespace

std::string to_string(AnnotatorType t) {
  switch (t) {
    case AnnotatorType::Adversarial: return "adversarial";
    case AnnotatorType::Random: return "random";
    case AnnotatorType::ClusterSpecialized: return "cluster-specialized";
    case AnnotatorType::Common: return "common";
    case AnnotatorType::ClassSpecialized: return "class-specialized";
  }
  return "?";
}

AnnotatorType parse_annotator_type(const std::string& s) {
  for (auto t : {AnnotatorType::Adversarial, AnnotatorType::Random, AnnotatorType::ClusterSpecialized,
                 AnnotatorType::Common, AnnotatorType::ClassSpecialized})
    if (to_string(t) == s) return t;
  throw ConfigError("unknown annotator type '" + s + "'");
}

std::size_t ClusterModel::assign(std::span<const double> x) const {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < centroids.rows; ++c) {
    const double d = squared_distance(x, centroids.row(c));
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  return best;
}

// --- datasets --------------------------------------------------------------

Dataset gen_toy(std::size_t n, std::uint64_t seed) {
  if (n < 2) throw ConfigError("gen_toy: need at least two instances");
  // Class 0 owns the two left quadrants, class 1 the two right ones.
  static constexpr double kCenters[4][2] = {{-2.0, 2.0}, {-2.0, -2.0}, {2.0, 2.0}, {2.0, -2.0}};
  static constexpr int kClass[4] = {0, 0, 1, 1};
  constexpr double kStd = 0.8;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, kStd);
  Dataset d;
  d.num_classes = 2;
  d.x = Matrix(n, 2);
  d.y.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    // Components in round-robin order: class 0, class 1, class 0, class 1.
    static constexpr std::size_t kOrder[4] = {0, 2, 1, 3};
    const std::size_t comp = kOrder[i % 4];
    d.x(i, 0) = kCenters[comp][0] + noise(rng);
    d.x(i, 1) = kCenters[comp][1] + noise(rng);
    d.y[i] = kClass[comp];
  }
  shuffle_rows(d, rng);
  return d;
}

Dataset gen_letter_style(std::size_t n, std::uint64_t seed, std::size_t classes, std::size_t dim) {
  if (n < classes || classes < 2 || dim < 1) throw ConfigError("gen_letter_style: bad size");
  constexpr std::size_t kComponents = 2;
  constexpr double kStd = 2.6 / 15.0;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> box(0.0, 1.0);
  Matrix centers(classes * kComponents, dim);
  for (double& v : centers.data) v = box(rng);
  std::normal_distribution<double> noise(0.0, kStd);
  Dataset d;
  d.num_classes = classes;
  d.x = Matrix(n, dim);
  d.y.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t comp = i % (classes * kComponents);
    for (std::size_t j = 0; j < dim; ++j) d.x(i, j) = centers(comp, j) + noise(rng);
    d.y[i] = static_cast<int>(comp % classes);
  }
  shuffle_rows(d, rng);
  return d;
}

// --- clustering ------------------------------------------------------------

ClusterModel kmeans(const Matrix& x, std::size_t k, std::uint64_t seed) {
  if (k == 0) throw ConfigError("kmeans: k must be positive");
  if (k > distinct_rows(x)) throw ConfigError("kmeans: k exceeds the number of distinct rows");
  std::mt19937_64 rng(seed);
  ClusterModel model;
  model.centroids = Matrix(k, x.cols);

  // k-means++ seeding.
  std::uniform_int_distribution<std::size_t> first(0, x.rows - 1);
  std::copy_n(x.row(first(rng)).data(), x.cols, model.centroids.row(0).data());
  std::vector<double> d2(x.rows, std::numeric_limits<double>::infinity());
  for (std::size_t c = 1; c < k; ++c) {
    for (std::size_t i = 0; i < x.rows; ++i)
      d2[i] = std::min(d2[i], squared_distance(x.row(i), model.centroids.row(c - 1)));
    std::discrete_distribution<std::size_t> pick(d2.begin(), d2.end());
    std::copy_n(x.row(pick(rng)).data(), x.cols, model.centroids.row(c).data());
  }

  model.assignment.assign(x.rows, k);
  for (std::size_t iter = 0; iter < kMaxLloydIterations; ++iter) {
    bool changed = false;
    for (std::size_t i = 0; i < x.rows; ++i) {
      const std::size_t a = model.assign(x.row(i));
      changed = changed || a != model.assignment[i];
      model.assignment[i] = a;
    }
    if (!changed) break;
    Matrix sums(k, x.cols);
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < x.rows; ++i) {
      const std::size_t a = model.assignment[i];
      ++counts[a];
      for (std::size_t j = 0; j < x.cols; ++j) sums(a, j) += x(i, j);
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) continue;  // empty cluster keeps its centroid
      for (std::size_t j = 0; j < x.cols; ++j) model.centroids(c, j) = sums(c, j) / static_cast<double>(counts[c]);
    }
  }
  return model;
}

// --- annotator sets --------------------------------------------------------

AnnotatorSetSpec make_set(const std::string& name, std::size_t num_classes, std::size_t num_clusters,
                          std::uint64_t seed) {
  struct Group {
    AnnotatorType type;
    std::size_t count;
    bool copies;
  };
  std::vector<Group> groups;
  AnnotatorSetSpec set;
  set.name = name;
  set.annotation_ratio = 0.2;
  using T = AnnotatorType;
  if (name == "independent") {
    groups = {{T::Adversarial, 1, false}, {T::Common, 6, false}, {T::ClusterSpecialized, 2, false},
              {T::ClassSpecialized, 1, false}};
  } else if (name == "correlated") {
    groups = {{T::Adversarial, 11, true}, {T::Common, 6, false}, {T::ClusterSpecialized, 1, false},
              {T::ClusterSpecialized, 11, true}, {T::ClassSpecialized, 11, true}};
  } else if (name == "random-correlated") {
    groups = {{T::Adversarial, 1, false}, {T::Common, 6, false}, {T::ClusterSpecialized, 2, false},
              {T::ClassSpecialized, 1, false}, {T::Random, 90, true}};
  } else if (name == "inductive") {
    groups = {{T::Adversarial, 10, false}, {T::Common, 60, false}, {T::ClusterSpecialized, 20, false},
              {T::ClassSpecialized, 10, false}};
    set.annotation_ratio = 0.02;
  } else {
    throw ConfigError("unknown annotator set '" + name + "'");
  }

  std::mt19937_64 rng = substream(seed, 0xA11);
  std::size_t next_group = 0;
  for (const Group& g : groups) {
    std::optional<std::size_t> group_id;
    if (g.copies) group_id = next_group++;
    AnnotatorSpec shared;
    for (std::size_t i = 0; i < g.count; ++i) {
      AnnotatorSpec spec;
      spec.type = g.type;
      spec.copy_group = group_id;
      if (g.copies && i > 0) {
        spec.correctness = shared.correctness;
      } else {
        switch (g.type) {
          case T::ClusterSpecialized:
            if (num_clusters == 0) throw ConfigError("cluster-specialized annotators need clusters");
            spec.correctness = weak_expert_table(num_clusters, num_clusters / 2, rng);
            break;
          case T::Common: {
            if (num_clusters == 0) throw ConfigError("common annotators need clusters");
            std::uniform_real_distribution<double> q(1.0 / static_cast<double>(num_classes), 1.0);
            spec.correctness.resize(num_clusters);
            for (double& v : spec.correctness) v = q(rng);
            break;
          }
          case T::ClassSpecialized:
            spec.correctness = weak_expert_table(num_classes, num_classes / 2, rng);
            break;
          default: break;
        }
        shared = spec;
      }
      set.annotators.push_back(std::move(spec));
    }
  }
  set.training.assign(set.annotators.size(), true);
  if (name == "inductive") {
    const std::size_t train_count = set.annotators.size() * 3 / 4;
    set.training = random_subset(set.annotators.size(), train_count, rng);
  }
  return set;
}

std::vector<int> simulate_annotations(const std::vector<AnnotatorSpec>& specs, const Dataset& data,
                                      const ClusterModel* clusters, std::uint64_t seed) {
  if (!data.has_labels()) throw ContractError("simulate_annotations: ground truth labels required");
  const std::size_t n = data.size();
  const std::size_t m_count = specs.size();
  const int c = static_cast<int>(data.num_classes);
  std::vector<std::size_t> cluster_of;
  for (const auto& s : specs) {
    const bool needs = s.type == AnnotatorType::ClusterSpecialized || s.type == AnnotatorType::Common;
    if (needs && clusters == nullptr) {
      throw ConfigError("simulate_annotations: " + to_string(s.type) + " annotators need clusters");
    }
  }
  if (clusters != nullptr) {
    cluster_of.resize(n);
    for (std::size_t i = 0; i < n; ++i) cluster_of[i] = clusters->assign(data.x.row(i));
  }

  std::vector<int> z(n * m_count, kMissing);
  std::vector<std::optional<std::size_t>> group_leader;
  for (std::size_t m = 0; m < m_count; ++m) {
    const auto& spec = specs[m];
    if (spec.copy_group) {
      if (*spec.copy_group >= group_leader.size()) group_leader.resize(*spec.copy_group + 1);
      auto& leader = group_leader[*spec.copy_group];
      if (leader) {
        for (std::size_t i = 0; i < n; ++i) z[i * m_count + m] = z[i * m_count + *leader];
        continue;
      }
      leader = m;
    }
    std::mt19937_64 rng = substream(seed, m);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_int_distribution<int> wrong(0, c - 2);
    for (std::size_t i = 0; i < n; ++i) {
      const int y = data.y[i];
      double q = 0.0;
      switch (spec.type) {
        case AnnotatorType::Adversarial: q = kWeak; break;
        case AnnotatorType::Random: q = 1.0 / static_cast<double>(c); break;
        case AnnotatorType::ClusterSpecialized:
        case AnnotatorType::Common: q = spec.correctness.at(cluster_of[i]); break;
        case AnnotatorType::ClassSpecialized: q = spec.correctness.at(static_cast<std::size_t>(y)); break;
      }
      int label = y;
      if (unit(rng) >= q) {
        // Uniform over the C-1 wrong classes.
        label = wrong(rng);
        if (label >= y) ++label;
      }
      z[i * m_count + m] = label;
    }
  }
  return z;
}

std::vector<int> apply_ratio(const std::vector<int>& z, std::size_t num_instances,
                             std::size_t num_annotators, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio <= 1.0)) throw ConfigError("annotation ratio must lie in (0, 1]");
  if (z.size() != num_instances * num_annotators) throw ShapeError("apply_ratio: matrix is not N x M");
  const auto keep = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(num_instances)));
  std::vector<int> out(z.size(), kMissing);
  for (std::size_t m = 0; m < num_annotators; ++m) {
    std::mt19937_64 rng = substream(seed ^ 0x5A5A5A5AULL, m);
    auto mark = random_subset(num_instances, keep, rng);
    for (std::size_t i = 0; i < num_instances; ++i)
      if (mark[i]) out[i * num_annotators + m] = z[i * num_annotators + m];
  }
  return out;
}

// --- annotator features ----------------------------------------------------

FeatureMode parse_feature_mode(const std::string& s) {
  if (s == "onehot") return FeatureMode::OneHot;
  if (s == "prior") return FeatureMode::PriorInfo;
  throw ConfigError("unknown feature mode '" + s + "' (expected onehot or prior)");
}

std::string to_string(FeatureMode m) { return m == FeatureMode::OneHot ? "onehot" : "prior"; }

Matrix annotator_features(const std::vector<AnnotatorSpec>& specs, const Dataset& data,
                          const std::vector<int>& z_full, const ClusterModel* clusters,
                          FeatureMode mode, std::uint64_t seed) {
  const std::size_t m_count = specs.size();
  if (mode == FeatureMode::OneHot) {
    Matrix a(m_count, m_count);
    for (std::size_t m = 0; m < m_count; ++m) a(m, m) = 1.0;
    return a;
  }
  if (!data.has_labels()) throw ContractError("prior-information features need ground truth labels");
  const std::size_t n = data.size();
  const std::size_t c = data.num_classes;
  const std::size_t k = clusters ? clusters->k() : 0;
  if (z_full.size() != n * m_count) throw ShapeError("annotator_features: annotation matrix is not N x M");
  std::vector<std::size_t> cluster_of(n, 0);
  if (clusters)
    for (std::size_t i = 0; i < n; ++i) cluster_of[i] = clusters->assign(data.x.row(i));

  Matrix a(m_count, kAnnotatorTypeCount + c + k);
  std::mt19937_64 rng(seed ^ 0xFEA7ULL);
  std::uniform_real_distribution<double> noise(-kFeatureNoise, kFeatureNoise);
  for (std::size_t m = 0; m < m_count; ++m) {
    a(m, static_cast<std::size_t>(specs[m].type)) = 1.0;
    std::vector<double> hit_class(c, 0.0), seen_class(c, 0.0), hit_cluster(k, 0.0), seen_cluster(k, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const int z = z_full[i * m_count + m];
      if (z == kMissing) continue;
      const double ok = z == data.y[i] ? 1.0 : 0.0;
      const auto y = static_cast<std::size_t>(data.y[i]);
      hit_class[y] += ok;
      seen_class[y] += 1.0;
      if (k) {
        hit_cluster[cluster_of[i]] += ok;
        seen_cluster[cluster_of[i]] += 1.0;
      }
    }
    auto noisy = [&](double hits, double seen) {
      const double p = seen > 0.0 ? hits / seen : 0.5;
      return std::clamp(p + noise(rng), 0.0, 1.0);
    };
    for (std::size_t j = 0; j < c; ++j) a(m, kAnnotatorTypeCount + j) = noisy(hit_class[j], seen_class[j]);
    for (std::size_t j = 0; j < k; ++j) a(m, kAnnotatorTypeCount + c + j) = noisy(hit_cluster[j], seen_cluster[j]);
  }
  return a;
}

}  // namespace madl
