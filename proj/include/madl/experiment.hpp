#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "madl/eval.hpp"
#include "madl/io.hpp"
#include "madl/simulate.hpp"
#include "madl/training.hpp"

namespace madl {

struct ExperimentConfig {
  // toy | letter-style | letter:<path to UCI file> | <dataset directory>
  std::string source = "toy";
  std::size_t size = 0;  // generated sources; 0 picks 500 (toy) or 20000 (letter-style)
  std::string annotator_set = "independent";
  std::optional<double> annotation_ratio;  // overrides the set's ratio
  std::size_t clusters = 0;                // 0 picks 4 for two classes, else 10
  FeatureMode features = FeatureMode::OneHot;
  Baseline baseline = Baseline::None;
  bool grid = false;
  TrainConfig train;
  double split_train = 0.75;
  double split_valid = 0.05;
  double split_test = 0.20;
  std::size_t repetitions = 1;
  std::uint64_t seed = 0;

  void validate() const;
  bool generated() const;
  // Applies one dotted key; throws ConfigError on unknown keys or bad values.
  void set(const std::string& key, const std::string& value);
  static ExperimentConfig from_kv(const io::KeyValues& kv);
  io::KeyValues to_kv() const;
};

// --variant value: {i,p,f} followed by optional separator and {inst,noinst}.
void apply_variant(APConfig& ap, const std::string& variant);

struct PreparedData {
  Dataset data;
  std::optional<AnnotatorSetSpec> set;  // absent for loaded datasets
  Matrix features;                      // all annotators
  std::vector<std::size_t> train_columns;
  std::vector<std::size_t> heldout_columns;
  Split split;
};

// Dataset, annotators and split for one repetition seed. Generated sources
// are simulated from scratch; loaded datasets only get a fresh split.
PreparedData prepare_data(const ExperimentConfig& config, std::uint64_t seed);

Matrix feature_rows(const Matrix& features, const std::vector<std::size_t>& columns);

struct RepetitionResult {
  std::uint64_t seed = 0;
  TrainResult run;
  TrainConfig chosen;
  MetricsReport test;
  std::optional<MetricsReport> heldout;  // held-out annotators (inductive)
  std::vector<double> weights;           // annotator weights of the selected model
  double annot_acc = 0.0;
  double mr_acc = 0.0;
  double seconds = 0.0;
};

RepetitionResult run_repetition(const ExperimentConfig& config, const PreparedData& prepared,
                                std::uint64_t seed);

struct RunReport {
  ExperimentConfig config;
  std::vector<RepetitionResult> repetitions;
  double seconds = 0.0;

  double mean(const std::string& metric) const;
  double stddev(const std::string& metric) const;
  nlohmann::json to_json() const;
};

// Repetition r uses seed + r. MADL_THREADS bounds the number of repetitions
// running at once (default 1).
RunReport run_experiment(const ExperimentConfig& config);

struct SweepEntry {
  double ratio = 0.0;
  RunReport report;
};
std::vector<SweepEntry> sweep_ratio(const ExperimentConfig& config, const std::vector<double>& ratios);
nlohmann::json sweep_json(const std::vector<SweepEntry>& sweep);

nlohmann::json metrics_json(const MetricsReport& m);

}  // namespace madl
