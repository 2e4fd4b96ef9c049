#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "madl/data.hpp"
#include "madl/diffnet.hpp"
#include "madl/models.hpp"
#include "madl/weighting.hpp"

namespace madl {

struct TrainConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 64;
  double lr = 0.01;
  double weight_decay = 0.0;
  KernelScale kernel;
  std::uint64_t seed = 0;
  APConfig ap;
  std::size_t gt_hidden = 128;
  bool use_weights = true;
  std::vector<double> lr_grid{0.01, 0.005, 0.001};
  std::vector<double> wd_grid{0.0, 0.001, 0.0001};

  void validate() const;
};

// Architecture description sufficient to rebuild a model (checkpoint header).
struct ModelSpec {
  std::size_t input_dim = 0;
  std::size_t num_classes = 0;
  std::size_t annotator_dim = 0;
  std::size_t gt_hidden = 128;
  APConfig ap;
  KernelScale kernel;
};

// GT model, AP model and ln(gamma), sharing one parameter set.
class MadlModel {
 public:
  static MadlModel create(const ModelSpec& spec, std::uint64_t seed);

  MadlModel(MadlModel&&) = default;
  MadlModel& operator=(MadlModel&&) = default;
  MadlModel(const MadlModel&) = delete;
  MadlModel& operator=(const MadlModel&) = delete;

  const ModelSpec& spec() const { return spec_; }
  diffnet::ParameterSet& params() { return *params_; }
  const diffnet::ParameterSet& params() const { return *params_; }
  const GTModel& gt() const { return *gt_; }
  const APModel& ap() const { return *ap_; }
  GTModel& gt() { return *gt_; }
  APModel& ap() { return *ap_; }
  const Tensor& log_gamma() const { return log_gamma_; }
  double gamma() const;

  // Flattened confusion matrices [P x C*C] for (instance, annotator) pairs.
  // gt_out must come from gt().forward on `x` and annotator_emb from
  // ap().annotator_embed; pair indices are rows of those.
  Tensor pair_confusions(const Tensor& x, const GTModel::Output& gt_out, const Tensor& annotator_emb,
                         std::span<const std::size_t> pair_instance,
                         std::span<const std::size_t> pair_annotator) const;

  // Inference helpers (no gradient recording).
  Matrix predict_proba(const Matrix& x) const;
  // N x M matrix of predicted correctness probabilities.
  Matrix correctness(const Matrix& x, const Matrix& annotators) const;
  std::vector<ConfusionMatrix> confusions(std::span<const double> x, const Matrix& annotators) const;
  std::vector<double> annotator_embeddings(const Matrix& annotators) const;
  std::vector<double> current_weights(const Matrix& annotators) const;

 private:
  MadlModel() = default;
  ModelSpec spec_;
  std::unique_ptr<diffnet::ParameterSet> params_;
  std::unique_ptr<GTModel> gt_;
  std::unique_ptr<APModel> ap_;
  Tensor log_gamma_;
};

// Mini-batch of instances with their observed (instance, annotator) pairs.
struct Batch {
  std::vector<std::size_t> instances;       // dataset rows
  std::vector<std::size_t> pair_instance;   // position within `instances`
  std::vector<std::size_t> pair_annotator;  // position within the annotator list
  std::vector<std::size_t> pair_label;      // observed class, 0-based

  std::size_t annotation_count() const { return pair_label.size(); }
};

// Collects observed annotations of `annotators` (dataset columns) for `rows`.
// Pair annotator indices refer to positions in `annotators`.
Batch make_batch(const Dataset& data, std::span<const std::size_t> rows,
                 std::span<const std::size_t> annotators);

// e_z^T P^T p = sum_c p(c) P(c, z)
double annotation_probability(std::span<const double> probs, const ConfusionMatrix& confusion,
                              std::size_t label);

// ln of annotation probabilities [P] from row-aligned p [P x C] and flattened
// confusion matrices [P x C*C], clamped below at 1e-12.
Tensor annotation_log_probs(const Tensor& probs, const Tensor& confusions,
                            std::span<const std::size_t> labels, std::size_t num_classes);

// -(1/|Z|) sum_p w_p ln(prob_p) - ln Gam(gamma | alpha, beta). The prior term is
// omitted when log_gamma is not given.
Tensor weighted_loss(const Tensor& log_probs, const Tensor& pair_weights,
                     const std::optional<Tensor>& log_gamma, const KernelScale& kernel);

struct LossTerms {
  Tensor loss;
  Tensor weights;  // [M] annotator weights used for this evaluation
};

// Full objective on a batch; `annotators` holds the features of the annotator
// list that the batch's pair indices refer to.
LossTerms madl_loss(const MadlModel& model, const Dataset& data, const Matrix& annotators,
                    const Batch& batch, bool use_weights);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double valid_gt_acc = 0.0;
  double gamma = 0.0;
  std::vector<double> weights;
};

struct TrainResult {
  MadlModel model;
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;  // 1-based
};

// Index of the record with maximal validation GT-ACC; ties go to the earliest.
std::size_t select_best(std::span<const EpochRecord> history);

// Annotator columns that provide training annotations and their features.
struct TrainAnnotators {
  std::vector<std::size_t> columns;
  Matrix features;
};

// End-to-end training. Uses annotations of `annotators.columns` on split.train
// and validation GT-ACC on split.valid for model selection. Throws ConfigError
// when the training split holds no annotation.
TrainResult train(const Dataset& data, const TrainAnnotators& annotators, const Split& split,
                  const TrainConfig& config);

// Baseline training: GT model on `targets` (per dataset row, kMissing = drop)
// with cross-entropy; AP model on the observed annotations conditioned on the
// target class. No annotator weights, no gamma prior.
TrainResult train_supervised(const Dataset& data, const TrainAnnotators& annotators,
                             const Split& split, std::span<const int> targets,
                             const TrainConfig& config);

struct GridResult {
  TrainConfig config;
  TrainResult result;
  std::vector<double> cell_scores;  // best validation GT-ACC per (lr, wd) cell
};

// Trains every (lr, wd) cell of the config's grid and keeps the best by
// validation GT-ACC (ties: first cell in lr-major order).
// With non-empty `targets` each cell runs train_supervised instead.
GridResult grid_search(const Dataset& data, const TrainAnnotators& annotators, const Split& split,
                       const TrainConfig& config, std::span<const int> targets = {});

// GT accuracy of the model on dataset rows (requires labels).
double gt_accuracy_on(const MadlModel& model, const Dataset& data, std::span<const std::size_t> rows);

}  // namespace madl
