#include "madl/eval.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <random>

#include "madl/error.hpp"

namespace madl {

namespace {

constexpr double kProbFloor = 1e-12;
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void check_rows(std::span<const int> y, const Matrix& probs, const char* what) {
  if (y.empty()) throw ContractError(std::string(what) + ": empty input");
  if (probs.rows != y.size()) throw ShapeError(std::string(what) + ": label and probability rows differ");
}

void check_ap(std::span<const int> y, std::span<const int> z, const Matrix& correctness) {
  if (correctness.rows != y.size() || z.size() != correctness.rows * correctness.cols) {
    throw ShapeError("AP scores: labels, annotations and predictions are not aligned");
  }
}

}  // namespace

MetricsReport::MetricsReport()
    : gt_acc(kNaN), gt_nll(kNaN), gt_bs(kNaN), ap_acc(kNaN), ap_nll(kNaN), ap_bs(kNaN), ap_bal_acc(kNaN) {}

bool MetricsReport::has_gt() const { return !std::isnan(gt_acc); }
bool MetricsReport::has_ap() const { return !std::isnan(ap_acc); }

std::vector<std::pair<std::string, double>> MetricsReport::fields() const {
  return {{"gt_acc", gt_acc}, {"gt_nll", gt_nll}, {"gt_bs", gt_bs},          {"ap_acc", ap_acc},
          {"ap_nll", ap_nll}, {"ap_bs", ap_bs},   {"ap_bal_acc", ap_bal_acc}};
}

double gt_acc(std::span<const int> y, std::span<const std::size_t> predictions) {
  if (y.empty()) throw ContractError("gt_acc: empty input");
  if (y.size() != predictions.size()) throw ShapeError("gt_acc: label and prediction counts differ");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < y.size(); ++i) hits += static_cast<std::size_t>(y[i]) == predictions[i];
  return static_cast<double>(hits) / static_cast<double>(y.size());
}

double gt_nll(std::span<const int> y, const Matrix& probs) {
  check_rows(y, probs, "gt_nll");
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i)
    s -= std::log(std::max(probs(i, static_cast<std::size_t>(y[i])), kProbFloor));
  return s / static_cast<double>(y.size());
}

double gt_bs(std::span<const int> y, const Matrix& probs) {
  check_rows(y, probs, "gt_bs");
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i)
    for (std::size_t c = 0; c < probs.cols; ++c) {
      const double target = static_cast<std::size_t>(y[i]) == c ? 1.0 : 0.0;
      s += (target - probs(i, c)) * (target - probs(i, c));
    }
  return s / static_cast<double>(y.size());
}

ApScores ap_metrics(std::span<const int> y, std::span<const int> z, const Matrix& correctness) {
  check_ap(y, z, correctness);
  ApScores out;
  std::size_t hits = 0;
  for (std::size_t n = 0; n < correctness.rows; ++n)
    for (std::size_t m = 0; m < correctness.cols; ++m) {
      const int label = z[n * correctness.cols + m];
      if (label == kMissing) continue;
      const bool correct = label == y[n];
      const double p = correctness(n, m);
      hits += (ap_predict(p) == 1) == !correct;
      out.nll -= std::log(std::max(correct ? p : 1.0 - p, kProbFloor));
      const double target = correct ? 1.0 : 0.0;
      out.bs += (target - p) * (target - p);
      ++out.annotations;
    }
  if (out.annotations == 0) throw ContractError("ap_metrics: no observed annotations");
  const auto count = static_cast<double>(out.annotations);
  out.acc = static_cast<double>(hits) / count;
  out.nll /= count;
  out.bs /= count;
  return out;
}

double bal_acc(std::span<const int> y, std::span<const int> z, const Matrix& correctness) {
  check_ap(y, z, correctness);
  const std::size_t m_count = correctness.cols;
  // [annotator][outcome] -> (hits, total); outcome 0 = correct, 1 = false.
  std::vector<std::array<std::size_t, 4>> tally(m_count, {0, 0, 0, 0});
  for (std::size_t n = 0; n < correctness.rows; ++n)
    for (std::size_t m = 0; m < m_count; ++m) {
      const int label = z[n * m_count + m];
      if (label == kMissing) continue;
      const int outcome = label == y[n] ? 0 : 1;
      tally[m][2 * outcome] += ap_predict(correctness(n, m)) == outcome;
      tally[m][2 * outcome + 1] += 1;
    }
  double sum = 0.0;
  std::size_t pairs = 0;
  for (const auto& t : tally)
    for (int o = 0; o < 2; ++o)
      if (t[2 * o + 1] > 0) {
        sum += static_cast<double>(t[2 * o]) / static_cast<double>(t[2 * o + 1]);
        ++pairs;
      }
  if (pairs == 0) throw ContractError("bal_acc: no observed annotations");
  return sum / static_cast<double>(pairs);
}

BaselineLabels majority_vote(std::span<const int> z, std::size_t num_annotators,
                             std::span<const std::size_t> columns, std::size_t num_classes,
                             std::uint64_t seed) {
  if (num_annotators == 0 || z.size() % num_annotators != 0) throw ShapeError("majority_vote: bad matrix");
  const std::size_t n_count = z.size() / num_annotators;
  BaselineLabels out;
  out.labels.assign(n_count, kMissing);
  out.tie.assign(n_count, false);
  std::vector<std::size_t> votes(num_classes);
  for (std::size_t n = 0; n < n_count; ++n) {
    std::fill(votes.begin(), votes.end(), 0);
    std::size_t total = 0;
    for (std::size_t m : columns) {
      const int label = z[n * num_annotators + m];
      if (label == kMissing) continue;
      ++votes.at(static_cast<std::size_t>(label));
      ++total;
    }
    if (total == 0) {
      out.excluded.push_back(n);
      continue;
    }
    const std::size_t top = *std::max_element(votes.begin(), votes.end());
    std::vector<int> tied;
    for (std::size_t c = 0; c < num_classes; ++c)
      if (votes[c] == top) tied.push_back(static_cast<int>(c));
    if (tied.size() == 1) {
      out.labels[n] = tied.front();
      continue;
    }
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(n), static_cast<std::uint32_t>(n >> 32)};
    std::mt19937_64 rng(seq);
    std::uniform_int_distribution<std::size_t> pick(0, tied.size() - 1);
    out.labels[n] = tied[pick(rng)];
    out.tie[n] = true;
  }
  return out;
}

double annotation_accuracy(const Dataset& data, std::span<const std::size_t> columns) {
  if (!data.has_labels()) throw ContractError("annotation_accuracy: dataset has no labels");
  std::size_t hits = 0, total = 0;
  for (std::size_t n = 0; n < data.size(); ++n)
    for (std::size_t m : columns) {
      const int z = data.annotation(n, m);
      if (z == kMissing) continue;
      hits += z == data.y[n];
      ++total;
    }
  if (total == 0) throw ContractError("annotation_accuracy: no observed annotations");
  return static_cast<double>(hits) / static_cast<double>(total);
}

double majority_vote_accuracy(const Dataset& data, std::span<const std::size_t> columns,
                              std::uint64_t seed) {
  if (!data.has_labels()) throw ContractError("majority_vote_accuracy: dataset has no labels");
  auto mv = majority_vote(data.z, data.num_annotators, columns, data.num_classes, seed);
  std::size_t hits = 0, total = 0;
  for (std::size_t n = 0; n < data.size(); ++n) {
    if (mv.labels[n] == kMissing) continue;
    hits += mv.labels[n] == data.y[n];
    ++total;
  }
  if (total == 0) throw ContractError("majority_vote_accuracy: no annotated instance");
  return static_cast<double>(hits) / static_cast<double>(total);
}

std::size_t bayes_gt(std::span<const double> posterior) { return gt_predict(posterior); }

int bayes_ap(std::span<const double> posterior, const ConfusionMatrix& confusion) {
  return ap_correctness(posterior, confusion) < 0.5 ? 1 : 0;
}

std::string to_string(Baseline b) {
  switch (b) {
    case Baseline::None: return "none";
    case Baseline::Lower: return "lb";
    case Baseline::Upper: return "ub";
  }
  return "?";
}

Baseline parse_baseline(const std::string& s) {
  if (s == "none") return Baseline::None;
  if (s == "lb") return Baseline::Lower;
  if (s == "ub") return Baseline::Upper;
  throw ConfigError("unknown baseline '" + s + "' (expected none, lb or ub)");
}

std::vector<int> baseline_targets(Baseline kind, const Dataset& data,
                                  std::span<const std::size_t> columns, std::uint64_t seed) {
  switch (kind) {
    case Baseline::Lower:
      return majority_vote(data.z, data.num_annotators, columns, data.num_classes, seed).labels;
    case Baseline::Upper:
      if (!data.has_labels()) throw ConfigError("upper baseline requires ground truth labels");
      return data.y;
    case Baseline::None: break;
  }
  throw ContractError("baseline_targets: no baseline selected");
}

TrainResult train_baseline(Baseline kind, const Dataset& data, const TrainAnnotators& annotators,
                           const Split& split, const TrainConfig& config) {
  auto targets = baseline_targets(kind, data, annotators.columns, config.seed);
  return train_supervised(data, annotators, split, targets, config);
}

MetricsReport evaluate(const MadlModel& model, const Dataset& data, const Matrix& features,
                       std::span<const std::size_t> columns, std::span<const std::size_t> rows) {
  if (features.rows != columns.size()) throw ShapeError("evaluate: one feature row per annotator column");
  if (model.spec().input_dim != data.x.cols || model.spec().num_classes != data.num_classes) {
    throw ShapeError("evaluate: model expects " + std::to_string(model.spec().input_dim) + " features and " +
                     std::to_string(model.spec().num_classes) + " classes, data has " +
                     std::to_string(data.x.cols) + " and " + std::to_string(data.num_classes));
  }
  if (!columns.empty() && model.spec().annotator_dim != features.cols) {
    throw ShapeError("evaluate: annotator feature width differs from the model's");
  }
  MetricsReport report;
  report.instances = rows.size();
  if (!data.has_labels() || rows.empty()) return report;

  Matrix x = data.x.select_rows(rows);
  std::vector<int> y(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) y[i] = data.y[rows[i]];
  Matrix probs = model.predict_proba(x);
  std::vector<std::size_t> pred(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) pred[i] = gt_predict(probs.row(i));
  report.gt_acc = gt_acc(y, pred);
  report.gt_nll = gt_nll(y, probs);
  report.gt_bs = gt_bs(y, probs);

  if (columns.empty()) return report;
  const auto& source = data.z_full.empty() ? data.z : data.z_full;
  std::vector<int> z(rows.size() * columns.size());
  bool any = false;
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t a = 0; a < columns.size(); ++a) {
      z[i * columns.size() + a] = source[rows[i] * data.num_annotators + columns[a]];
      any = any || z[i * columns.size() + a] != kMissing;
    }
  if (!any) return report;
  Matrix correctness = model.correctness(x, features);
  ApScores ap = ap_metrics(y, z, correctness);
  report.ap_acc = ap.acc;
  report.ap_nll = ap.nll;
  report.ap_bs = ap.bs;
  report.ap_bal_acc = bal_acc(y, z, correctness);
  report.annotations = ap.annotations;
  return report;
}

}  // namespace madl
