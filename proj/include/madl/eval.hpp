#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "madl/data.hpp"
#include "madl/models.hpp"
#include "madl/training.hpp"

namespace madl {

// NaN marks a score that could not be computed (no labels, no annotations).
struct MetricsReport {
  double gt_acc;
  double gt_nll;
  double gt_bs;
  double ap_acc;
  double ap_nll;
  double ap_bs;
  double ap_bal_acc;
  std::size_t instances = 0;
  std::size_t annotations = 0;

  MetricsReport();
  bool has_gt() const;
  bool has_ap() const;
  // Metric names and values in fixed order: gt_acc, gt_nll, gt_bs, ap_acc,
  // ap_nll, ap_bs, ap_bal_acc.
  std::vector<std::pair<std::string, double>> fields() const;
};

double gt_acc(std::span<const int> y, std::span<const std::size_t> predictions);
double gt_nll(std::span<const int> y, const Matrix& probs);
double gt_bs(std::span<const int> y, const Matrix& probs);

struct ApScores {
  double acc = 0.0;
  double nll = 0.0;
  double bs = 0.0;
  std::size_t annotations = 0;
};

// Scores over observed entries of z (N x M row-major) against the predicted
// correctness probabilities (N x M). Throws ContractError without observed
// annotations.
ApScores ap_metrics(std::span<const int> y, std::span<const int> z, const Matrix& correctness);
// Mean accuracy over non-empty (annotator, correct/false) pairs.
double bal_acc(std::span<const int> y, std::span<const int> z, const Matrix& correctness);

struct BaselineLabels {
  std::vector<int> labels;  // kMissing for excluded instances
  std::vector<bool> tie;
  std::vector<std::size_t> excluded;  // instances without annotations
};

// Most frequent observed label per instance over `columns` of the N x M matrix.
// Ties draw uniformly among the tied classes from a stream keyed by (seed, n),
// so the result does not depend on annotator order.
BaselineLabels majority_vote(std::span<const int> z, std::size_t num_annotators,
                             std::span<const std::size_t> columns, std::size_t num_classes,
                             std::uint64_t seed);

// Fraction of observed annotations that match the ground truth.
double annotation_accuracy(const Dataset& data, std::span<const std::size_t> columns);
// Accuracy of majority-vote labels over instances with at least one annotation.
double majority_vote_accuracy(const Dataset& data, std::span<const std::size_t> columns,
                              std::uint64_t seed);

// Argmax of the true posterior, ties to the lowest class.
std::size_t bayes_gt(std::span<const double> posterior);
// 1 when the expected correctness sum_y p(y) P(y, y) is below 0.5.
int bayes_ap(std::span<const double> posterior, const ConfusionMatrix& confusion);

enum class Baseline { None, Lower, Upper };
std::string to_string(Baseline b);
Baseline parse_baseline(const std::string& s);

// Training targets for a baseline: majority vote over `columns` (lower) or
// the ground truth (upper). Instances without annotations get kMissing.
std::vector<int> baseline_targets(Baseline kind, const Dataset& data,
                                  std::span<const std::size_t> columns, std::uint64_t seed);

TrainResult train_baseline(Baseline kind, const Dataset& data, const TrainAnnotators& annotators,
                           const Split& split, const TrainConfig& config);

// Full metric suite on `rows`. AP scores use the potential annotations
// (z_full) when present, else the observed ones, restricted to `columns`
// whose features are the rows of `features`.
MetricsReport evaluate(const MadlModel& model, const Dataset& data, const Matrix& features,
                       std::span<const std::size_t> columns, std::span<const std::size_t> rows);

}  // namespace madl
