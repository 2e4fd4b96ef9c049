#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "madl/diffnet.hpp"

namespace madl {

using diffnet::Tensor;

// Degrees of freedom of an estimated confusion matrix: one shared diagonal
// value (I), one diagonal value per class (P), or every entry (F).
enum class ClassDependency { Independent, Partial, Full };

enum class InstanceSource { RawFeatures, GtHidden };

std::string to_string(ClassDependency d);
ClassDependency parse_class_dependency(const std::string& s);
std::string to_string(InstanceSource s);
InstanceSource parse_instance_source(const std::string& s);

struct APConfig {
  ClassDependency class_dependency = ClassDependency::Full;
  bool instance_dependent = true;
  std::size_t annotator_embed_size = 16;  // R
  std::size_t instance_embed_size = 16;   // Q
  std::size_t outer_size = 16;            // F_out
  std::size_t residual_hidden = 64;       // H
  double eta = 0.8;
  bool outer_product = true;
  bool residual = true;
  InstanceSource instance_source = InstanceSource::GtHidden;

  // Throws ConfigError when eta is outside (0, 1) or a size is zero.
  void validate() const;
  // Number of raw head outputs per confusion matrix.
  std::size_t head_outputs(std::size_t num_classes) const;
};

// Row-major C x C matrix.
struct ConfusionMatrix {
  std::size_t classes = 0;
  std::vector<double> entries;

  double operator()(std::size_t row, std::size_t col) const { return entries[row * classes + col]; }
  bool row_stochastic(double tol) const;
};

// A dense layer registered in a ParameterSet as "<name>.weight" / "<name>.bias".
struct Dense {
  Tensor weight;  // [in x out]
  Tensor bias;    // [out]

  static Dense create(diffnet::ParameterSet& params, const std::string& name, std::size_t in,
                      std::size_t out, std::mt19937_64& rng);
  Tensor operator()(const Tensor& x) const { return diffnet::dense_forward(x, weight, bias); }
  std::size_t in() const { return weight.shape()[0]; }
  std::size_t out() const { return weight.shape()[1]; }
};

// MLP with one ReLU hidden layer and a softmax head.
class GTModel {
 public:
  struct Output {
    Tensor hidden;  // [B x H]
    Tensor probs;   // [B x C]
  };

  GTModel(diffnet::ParameterSet& params, std::size_t input_dim, std::size_t num_classes,
          std::size_t hidden, std::mt19937_64& rng);

  Output forward(const Tensor& x) const;
  // Single-instance convenience; throws ShapeError on dimension mismatch.
  std::vector<double> gt_forward(std::span<const double> x) const;

  std::size_t input_dim() const { return hidden_.in(); }
  std::size_t hidden_dim() const { return hidden_.out(); }
  std::size_t num_classes() const { return head_.out(); }

  Dense& hidden_layer() { return hidden_; }
  Dense& head_layer() { return head_; }

 private:
  Dense hidden_;
  Dense head_;
};

// Index of the largest probability; ties resolve to the lowest index.
std::size_t gt_predict(std::span<const double> probs);

// Annotator/instance embeddings, outer-product combiner, residual block and
// confusion-matrix head.
class APModel {
 public:
  APModel(diffnet::ParameterSet& params, const APConfig& config, std::size_t annotator_dim,
          std::size_t instance_input_dim, std::size_t num_classes, std::mt19937_64& rng);

  const APConfig& config() const { return config_; }
  std::size_t num_classes() const { return classes_; }
  std::size_t annotator_dim() const { return annotator_net_.in(); }
  // Width expected by instance_embed (raw D or GT hidden width).
  std::size_t instance_input_dim() const;

  // [M x O] -> [M x R]
  Tensor annotator_embed(const Tensor& annotators) const;
  // [B x input] -> [B x Q]; throws ContractError for instance-independent configs.
  Tensor instance_embed(const Tensor& input) const;
  // Row-aligned embeddings -> flattened confusion matrices [P x C*C].
  // instance_emb must be given iff the config is instance-dependent.
  Tensor combine(const Tensor& annotator_emb, const std::optional<Tensor>& instance_emb) const;
  // Raw head outputs before expansion [P x head_outputs].
  Tensor head_raw(const Tensor& annotator_emb, const std::optional<Tensor>& instance_emb) const;

  Dense& head_layer() { return head_; }

 private:
  APConfig config_;
  std::size_t classes_;
  Dense annotator_net_;
  std::optional<Dense> instance_net_;
  std::optional<Dense> outer_proj_;
  Dense residual_in_;
  Dense residual_out_;
  Dense head_;
};

// Converts raw head outputs [P x k] into flattened row-stochastic matrices.
// k must be 1 (I), C (P) or C*C (F); throws ShapeError otherwise.
Tensor expand_confusion(ClassDependency variant, const Tensor& raw, std::size_t num_classes);
ConfusionMatrix expand_confusion(ClassDependency variant, std::span<const double> raw,
                                 std::size_t num_classes);

// Head bias for the prior correctness eta. Full: ln(eta (C-1) / (1-eta)) on
// the diagonal of a C x C matrix (flattened). Independent/Partial: logit(eta)
// for each of the 1 or C raw outputs. Throws ConfigError for eta outside (0,1).
std::vector<double> init_output_bias(ClassDependency variant, double eta, std::size_t num_classes);

// sum_c p(c) * P(c, c)
double ap_correctness(std::span<const double> probs, const ConfusionMatrix& confusion);
// 1 when an annotation is predicted false (correctness strictly below 0.5).
int ap_predict(double correctness);

}  // namespace madl
