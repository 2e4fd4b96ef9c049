#include "madl/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "madl/error.hpp"

namespace madl {

namespace dn = diffnet;

namespace {

constexpr double kProbFloor = 1e-12;
constexpr std::size_t kInferenceChunk = 256;
constexpr std::uint64_t kShuffleStream = 0x9E3779B97F4A7C15ULL;

Tensor rows_tensor(const Matrix& m, std::span<const std::size_t> rows) {
  std::vector<double> v(rows.size() * m.cols);
  for (std::size_t i = 0; i < rows.size(); ++i) std::copy_n(m.row(rows[i]).data(), m.cols, v.data() + i * m.cols);
  return Tensor::constant({rows.size(), m.cols}, std::move(v));
}

Tensor matrix_tensor(const Matrix& m) { return Tensor::constant({m.rows, m.cols}, m.data); }

bool has_annotation(const Dataset& data, std::size_t row, std::span<const std::size_t> columns) {
  return std::any_of(columns.begin(), columns.end(),
                     [&](std::size_t m) { return data.annotation(row, m) != kMissing; });
}

ModelSpec spec_for(const Dataset& data, const TrainAnnotators& annotators, const TrainConfig& config) {
  ModelSpec spec;
  spec.input_dim = data.x.cols;
  spec.num_classes = data.num_classes;
  spec.annotator_dim = annotators.features.cols;
  spec.gt_hidden = config.gt_hidden;
  spec.ap = config.ap;
  spec.kernel = config.kernel;
  return spec;
}

// Shared epoch loop: `step_loss` builds the loss of one batch of dataset rows.
template <typename StepLoss>
TrainResult run_epochs(MadlModel model, const Dataset& data, const TrainAnnotators& annotators,
                       const Split& split, std::vector<std::size_t> rows, const TrainConfig& config,
                       StepLoss step_loss) {
  const std::size_t batches = (rows.size() + config.batch_size - 1) / config.batch_size;
  const std::uint64_t total = std::max<std::uint64_t>(1, config.epochs * batches);
  auto opt = dn::OptimizerState::for_params(model.params(), config.lr, config.weight_decay, total);
  std::mt19937_64 rng(config.seed ^ kShuffleStream);

  const bool have_valid = data.has_labels() && !split.valid.empty();
  std::vector<EpochRecord> history;
  std::vector<std::vector<double>> best;
  double best_acc = -std::numeric_limits<double>::infinity();
  std::size_t best_epoch = 0;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(rows.begin(), rows.end(), rng);
    double loss_sum = 0.0;
    for (std::size_t b = 0; b < batches; ++b) {
      const std::size_t lo = b * config.batch_size;
      const std::size_t hi = std::min(rows.size(), lo + config.batch_size);
      const double lr = dn::cosine_lr(opt.step, opt.total_steps, config.lr);
      model.params().zero_grad();
      Tensor loss = step_loss(model, std::span<const std::size_t>(rows).subspan(lo, hi - lo));
      dn::backward(loss);
      dn::adamw_step(model.params(), opt, lr);
      loss_sum += loss.item();
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(batches);
    rec.valid_gt_acc = have_valid ? gt_accuracy_on(model, data, split.valid)
                                  : std::numeric_limits<double>::quiet_NaN();
    rec.gamma = model.gamma();
    rec.weights = model.current_weights(annotators.features);
    // Strict improvement keeps the earliest of tied epochs; without a
    // validation set the last epoch is kept.
    if (!have_valid || rec.valid_gt_acc > best_acc) {
      best_acc = rec.valid_gt_acc;
      best_epoch = epoch;
      best = model.params().snapshot();
    }
    history.push_back(std::move(rec));
  }
  if (!best.empty()) model.params().restore(best);
  return TrainResult{std::move(model), std::move(history), best_epoch};
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (lr < 0.0) throw ConfigError("learning rate must be non-negative");
  if (weight_decay < 0.0) throw ConfigError("weight decay must be non-negative");
  if (gt_hidden < 1) throw ConfigError("GT hidden width must be >= 1");
  kernel.validate();
  ap.validate();
}

// --- MadlModel -------------------------------------------------------------

MadlModel MadlModel::create(const ModelSpec& spec, std::uint64_t seed) {
  spec.ap.validate();
  spec.kernel.validate();
  MadlModel m;
  m.spec_ = spec;
  m.params_ = std::make_unique<dn::ParameterSet>();
  std::mt19937_64 rng(seed);
  m.gt_ = std::make_unique<GTModel>(*m.params_, spec.input_dim, spec.num_classes, spec.gt_hidden, rng);
  const std::size_t inst_in =
      spec.ap.instance_source == InstanceSource::GtHidden ? spec.gt_hidden : spec.input_dim;
  m.ap_ = std::make_unique<APModel>(*m.params_, spec.ap, spec.annotator_dim, inst_in,
                                    spec.num_classes, rng);
  m.log_gamma_ = m.params_->add("kernel.log_gamma", {1}, {std::log(spec.kernel.initial_gamma())});
  return m;
}

double MadlModel::gamma() const { return std::exp(log_gamma_.item()); }

Tensor MadlModel::pair_confusions(const Tensor& x, const GTModel::Output& gt_out,
                                  const Tensor& annotator_emb,
                                  std::span<const std::size_t> pair_instance,
                                  std::span<const std::size_t> pair_annotator) const {
  if (!spec_.ap.instance_dependent) {
    return dn::gather_rows(ap_->combine(annotator_emb, std::nullopt), pair_annotator);
  }
  const Tensor& source =
      spec_.ap.instance_source == InstanceSource::GtHidden ? gt_out.hidden : x;
  Tensor inst = ap_->instance_embed(source);
  return ap_->combine(dn::gather_rows(annotator_emb, pair_annotator),
                      dn::gather_rows(inst, pair_instance));
}

Matrix MadlModel::predict_proba(const Matrix& x) const {
  dn::NoGradGuard guard;
  Matrix out(x.rows, spec_.num_classes);
  for (std::size_t lo = 0; lo < x.rows; lo += kInferenceChunk) {
    const std::size_t hi = std::min(x.rows, lo + kInferenceChunk);
    std::vector<std::size_t> rows(hi - lo);
    std::iota(rows.begin(), rows.end(), lo);
    auto gt_out = gt_->forward(rows_tensor(x, rows));
    auto probs = gt_out.probs.values();
    std::copy(probs.begin(), probs.end(), out.row(lo).data());
  }
  return out;
}

Matrix MadlModel::correctness(const Matrix& x, const Matrix& annotators) const {
  dn::NoGradGuard guard;
  const std::size_t c = spec_.num_classes;
  const std::size_t m = annotators.rows;
  Matrix out(x.rows, m);
  Tensor emb = ap_->annotator_embed(matrix_tensor(annotators));
  const std::size_t chunk = std::max<std::size_t>(1, kInferenceChunk * 16 / std::max<std::size_t>(1, m));
  for (std::size_t lo = 0; lo < x.rows; lo += chunk) {
    const std::size_t hi = std::min(x.rows, lo + chunk);
    std::vector<std::size_t> rows(hi - lo);
    std::iota(rows.begin(), rows.end(), lo);
    Tensor xb = rows_tensor(x, rows);
    auto gt_out = gt_->forward(xb);
    std::vector<std::size_t> pi, pa;
    pi.reserve(rows.size() * m);
    pa.reserve(rows.size() * m);
    for (std::size_t b = 0; b < rows.size(); ++b)
      for (std::size_t a = 0; a < m; ++a) {
        pi.push_back(b);
        pa.push_back(a);
      }
    Tensor conf = pair_confusions(xb, gt_out, emb, pi, pa);
    auto cv = conf.values();
    auto pv = gt_out.probs.values();
    for (std::size_t p = 0; p < pi.size(); ++p) {
      double s = 0.0;
      for (std::size_t k = 0; k < c; ++k) s += pv[pi[p] * c + k] * cv[p * c * c + k * c + k];
      out(lo + pi[p], pa[p]) = s;
    }
  }
  return out;
}

std::vector<ConfusionMatrix> MadlModel::confusions(std::span<const double> x,
                                                   const Matrix& annotators) const {
  dn::NoGradGuard guard;
  if (x.size() != spec_.input_dim) throw ShapeError("confusions: instance dimension mismatch");
  const std::size_t c = spec_.num_classes;
  Tensor xb = Tensor::constant({1, x.size()}, {x.begin(), x.end()});
  auto gt_out = gt_->forward(xb);
  Tensor emb = ap_->annotator_embed(matrix_tensor(annotators));
  std::vector<std::size_t> pi(annotators.rows, 0), pa(annotators.rows);
  std::iota(pa.begin(), pa.end(), std::size_t{0});
  Tensor conf = pair_confusions(xb, gt_out, emb, pi, pa);
  auto cv = conf.values();
  std::vector<ConfusionMatrix> out;
  for (std::size_t a = 0; a < annotators.rows; ++a) {
    out.push_back({c, {cv.begin() + static_cast<std::ptrdiff_t>(a * c * c),
                       cv.begin() + static_cast<std::ptrdiff_t>((a + 1) * c * c)}});
  }
  return out;
}

std::vector<double> MadlModel::annotator_embeddings(const Matrix& annotators) const {
  dn::NoGradGuard guard;
  Tensor emb = ap_->annotator_embed(matrix_tensor(annotators));
  auto v = emb.values();
  return {v.begin(), v.end()};
}

std::vector<double> MadlModel::current_weights(const Matrix& annotators) const {
  return madl::annotator_weights(annotator_embeddings(annotators), spec_.ap.annotator_embed_size,
                                 gamma());
}

// --- loss ------------------------------------------------------------------

Batch make_batch(const Dataset& data, std::span<const std::size_t> rows,
                 std::span<const std::size_t> annotators) {
  Batch b;
  b.instances.assign(rows.begin(), rows.end());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    // Ascending annotator order within an instance.
    for (std::size_t a = 0; a < annotators.size(); ++a) {
      const int z = data.annotation(rows[i], annotators[a]);
      if (z == kMissing) continue;
      b.pair_instance.push_back(i);
      b.pair_annotator.push_back(a);
      b.pair_label.push_back(static_cast<std::size_t>(z));
    }
  }
  return b;
}

double annotation_probability(std::span<const double> probs, const ConfusionMatrix& confusion,
                              std::size_t label) {
  if (probs.size() != confusion.classes || label >= confusion.classes) {
    throw ShapeError("annotation_probability: class mismatch");
  }
  double s = 0.0;
  for (std::size_t c = 0; c < probs.size(); ++c) s += probs[c] * confusion(c, label);
  return s;
}

Tensor annotation_log_probs(const Tensor& probs, const Tensor& confusions,
                            std::span<const std::size_t> labels, std::size_t num_classes) {
  const std::size_t c = num_classes;
  const std::size_t p = labels.size();
  if (probs.rows() != p || confusions.rows() != p || probs.cols() != c || confusions.cols() != c * c) {
    throw ShapeError("annotation_log_probs: probs " + dn::shape_str(probs.shape()) + ", confusions " +
                     dn::shape_str(confusions.shape()) + " for " + std::to_string(p) + " labels");
  }
  // Column z of each confusion matrix: entries (k, z) for k = 0..C-1.
  std::vector<std::size_t> idx(p * c);
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t k = 0; k < c; ++k) idx[i * c + k] = k * c + labels[i];
  Tensor column = dn::take_along_rows(confusions, idx, c);
  return dn::log_clamped(dn::sum_rows(dn::mul(probs, column)), kProbFloor);
}

Tensor weighted_loss(const Tensor& log_probs, const Tensor& pair_weights,
                     const std::optional<Tensor>& log_gamma, const KernelScale& kernel) {
  const std::size_t count = log_probs.size();
  if (count == 0) throw ContractError("weighted_loss: batch has no annotations");
  Tensor data = dn::scale(dn::sum(dn::mul(pair_weights, log_probs)), -1.0 / static_cast<double>(count));
  if (!log_gamma) return data;
  return dn::sub(data, gamma_log_prior(*log_gamma, kernel.alpha, kernel.beta));
}

LossTerms madl_loss(const MadlModel& model, const Dataset& data, const Matrix& annotators,
                    const Batch& batch, bool use_weights) {
  if (batch.annotation_count() == 0) throw ContractError("madl_loss: batch has no annotations");
  Tensor x = rows_tensor(data.x, batch.instances);
  auto gt_out = model.gt().forward(x);
  Tensor emb = model.ap().annotator_embed(matrix_tensor(annotators));
  Tensor conf = model.pair_confusions(x, gt_out, emb, batch.pair_instance, batch.pair_annotator);
  Tensor probs = dn::gather_rows(gt_out.probs, batch.pair_instance);
  Tensor logp = annotation_log_probs(probs, conf, batch.pair_label, model.spec().num_classes);

  if (!use_weights) {
    Tensor ones = Tensor::constant({annotators.rows}, std::vector<double>(annotators.rows, 1.0));
    Tensor pw = dn::gather_rows(ones, batch.pair_annotator);
    return {weighted_loss(logp, pw, std::nullopt, model.spec().kernel), ones};
  }
  Tensor w = annotator_weights(emb, dn::exp(model.log_gamma()));
  Tensor pw = dn::gather_rows(w, batch.pair_annotator);
  return {weighted_loss(logp, pw, model.log_gamma(), model.spec().kernel), w};
}

// --- training --------------------------------------------------------------

std::size_t select_best(std::span<const EpochRecord> history) {
  if (history.empty()) throw ContractError("select_best: empty history");
  std::size_t best = 0;
  for (std::size_t i = 1; i < history.size(); ++i)
    if (history[i].valid_gt_acc > history[best].valid_gt_acc) best = i;
  return best;
}

double gt_accuracy_on(const MadlModel& model, const Dataset& data, std::span<const std::size_t> rows) {
  if (!data.has_labels()) throw ContractError("gt_accuracy_on: dataset has no labels");
  if (rows.empty()) throw ContractError("gt_accuracy_on: no rows");
  Matrix probs = model.predict_proba(data.x.select_rows(rows));
  std::size_t hits = 0;
  for (std::size_t i = 0; i < rows.size(); ++i)
    hits += gt_predict(probs.row(i)) == static_cast<std::size_t>(data.y[rows[i]]);
  return static_cast<double>(hits) / static_cast<double>(rows.size());
}

TrainResult train(const Dataset& data, const TrainAnnotators& annotators, const Split& split,
                  const TrainConfig& config) {
  config.validate();
  data.validate();
  if (annotators.features.rows != annotators.columns.size()) {
    throw ShapeError("train: annotator features do not match annotator columns");
  }
  // Instances without any training annotation contribute nothing.
  std::vector<std::size_t> rows;
  for (std::size_t n : split.train)
    if (has_annotation(data, n, annotators.columns)) rows.push_back(n);
  if (rows.empty()) throw ConfigError("training split contains no annotations");

  MadlModel model = MadlModel::create(spec_for(data, annotators, config), config.seed);
  const auto& cols = annotators.columns;
  return run_epochs(std::move(model), data, annotators, split, std::move(rows), config,
                    [&](const MadlModel& m, std::span<const std::size_t> batch_rows) {
                      Batch batch = make_batch(data, batch_rows, cols);
                      return madl_loss(m, data, annotators.features, batch, config.use_weights).loss;
                    });
}

TrainResult train_supervised(const Dataset& data, const TrainAnnotators& annotators,
                             const Split& split, std::span<const int> targets,
                             const TrainConfig& config) {
  config.validate();
  data.validate();
  if (targets.size() != data.size()) throw ShapeError("train_supervised: one target per row required");
  std::vector<std::size_t> rows;
  for (std::size_t n : split.train)
    if (targets[n] != kMissing) rows.push_back(n);
  if (rows.empty()) throw ConfigError("training split contains no usable targets");

  const std::size_t c = data.num_classes;
  MadlModel model = MadlModel::create(spec_for(data, annotators, config), config.seed);
  const auto& cols = annotators.columns;
  return run_epochs(
      std::move(model), data, annotators, split, std::move(rows), config,
      [&](const MadlModel& m, std::span<const std::size_t> batch_rows) {
        Tensor x = rows_tensor(data.x, batch_rows);
        auto gt_out = m.gt().forward(x);
        std::vector<std::size_t> target_idx(batch_rows.size());
        for (std::size_t i = 0; i < batch_rows.size(); ++i)
          target_idx[i] = static_cast<std::size_t>(targets[batch_rows[i]]);
        Tensor ce = dn::scale(
            dn::sum(dn::log_clamped(dn::take_along_rows(gt_out.probs, target_idx, 1), kProbFloor)),
            -1.0 / static_cast<double>(batch_rows.size()));
        Batch batch = make_batch(data, batch_rows, cols);
        if (batch.annotation_count() == 0) return ce;
        Tensor emb = m.ap().annotator_embed(matrix_tensor(annotators.features));
        Tensor conf = m.pair_confusions(x, gt_out, emb, batch.pair_instance, batch.pair_annotator);
        std::vector<std::size_t> entry(batch.annotation_count());
        for (std::size_t p = 0; p < entry.size(); ++p)
          entry[p] = target_idx[batch.pair_instance[p]] * c + batch.pair_label[p];
        Tensor ap_term = dn::scale(
            dn::sum(dn::log_clamped(dn::take_along_rows(conf, entry, 1), kProbFloor)),
            -1.0 / static_cast<double>(entry.size()));
        return dn::add(ce, ap_term);
      });
}

GridResult grid_search(const Dataset& data, const TrainAnnotators& annotators, const Split& split,
                       const TrainConfig& config, std::span<const int> targets) {
  if (config.lr_grid.empty() || config.wd_grid.empty()) throw ConfigError("grid_search: empty grid");
  std::optional<GridResult> best;
  std::vector<double> scores;
  double best_score = -std::numeric_limits<double>::infinity();
  for (double lr : config.lr_grid)
    for (double wd : config.wd_grid) {
      TrainConfig cell = config;
      cell.lr = lr;
      cell.weight_decay = wd;
      TrainResult r = targets.empty() ? train(data, annotators, split, cell)
                                      : train_supervised(data, annotators, split, targets, cell);
      const double score = r.history[r.best_epoch - 1].valid_gt_acc;
      scores.push_back(score);
      if (!best || score > best_score) {
        best_score = score;
        best.emplace(GridResult{cell, std::move(r), {}});
      }
    }
  best->cell_scores = std::move(scores);
  return std::move(*best);
}

}  // namespace madl
