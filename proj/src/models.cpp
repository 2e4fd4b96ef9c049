#include "madl/models.hpp"

#include <algorithm>
#include <cmath>

#include "madl/error.hpp"

namespace madl {

namespace dn = diffnet;

namespace {

constexpr double kHeadInitScale = 1e-3;

std::vector<double> uniform_values(std::size_t n, double limit, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-limit, limit);
  std::vector<double> v(n);
  for (double& x : v) x = dist(rng);
  return v;
}

}  // namespace

std::string to_string(ClassDependency d) {
  switch (d) {
    case ClassDependency::Independent: return "i";
    case ClassDependency::Partial: return "p";
    case ClassDependency::Full: return "f";
  }
  return "?";
}

ClassDependency parse_class_dependency(const std::string& s) {
  if (s == "i" || s == "I") return ClassDependency::Independent;
  if (s == "p" || s == "P") return ClassDependency::Partial;
  if (s == "f" || s == "F") return ClassDependency::Full;
  throw ConfigError("unknown class dependency '" + s + "' (expected i, p or f)");
}

std::string to_string(InstanceSource s) {
  return s == InstanceSource::RawFeatures ? "raw" : "hidden";
}

InstanceSource parse_instance_source(const std::string& s) {
  if (s == "raw") return InstanceSource::RawFeatures;
  if (s == "hidden") return InstanceSource::GtHidden;
  throw ConfigError("unknown instance source '" + s + "' (expected raw or hidden)");
}

void APConfig::validate() const {
  if (!(eta > 0.0 && eta < 1.0)) {
    throw ConfigError("AP prior eta must lie strictly inside (0, 1), got " + std::to_string(eta));
  }
  if (annotator_embed_size == 0 || instance_embed_size == 0 || outer_size == 0 ||
      residual_hidden == 0) {
    throw ConfigError("embedding and hidden sizes must be positive");
  }
}

std::size_t APConfig::head_outputs(std::size_t num_classes) const {
  switch (class_dependency) {
    case ClassDependency::Independent: return 1;
    case ClassDependency::Partial: return num_classes;
    case ClassDependency::Full: return num_classes * num_classes;
  }
  return 0;
}

bool ConfusionMatrix::row_stochastic(double tol) const {
  for (std::size_t r = 0; r < classes; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < classes; ++c) {
      const double v = (*this)(r, c);
      if (v < -tol || v > 1.0 + tol) return false;
      s += v;
    }
    if (std::abs(s - 1.0) > tol) return false;
  }
  return true;
}

Dense Dense::create(dn::ParameterSet& params, const std::string& name, std::size_t in,
                    std::size_t out, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  Dense d;
  d.weight = params.add(name + ".weight", {in, out}, uniform_values(in * out, limit, rng));
  d.bias = params.add(name + ".bias", {out}, std::vector<double>(out, 0.0));
  return d;
}

// --- GT model --------------------------------------------------------------

GTModel::GTModel(dn::ParameterSet& params, std::size_t input_dim, std::size_t num_classes,
                 std::size_t hidden, std::mt19937_64& rng)
    : hidden_(Dense::create(params, "gt.hidden", input_dim, hidden, rng)),
      head_(Dense::create(params, "gt.head", hidden, num_classes, rng)) {
  if (num_classes < 2) throw ConfigError("need at least two classes");
}

GTModel::Output GTModel::forward(const Tensor& x) const {
  Tensor h = dn::relu(hidden_(x));
  return {h, dn::softmax_rows(head_(h))};
}

std::vector<double> GTModel::gt_forward(std::span<const double> x) const {
  if (x.size() != input_dim()) {
    throw ShapeError("gt_forward: expected " + std::to_string(input_dim()) + " features, got " +
                     std::to_string(x.size()));
  }
  dn::NoGradGuard guard;
  auto out = forward(Tensor::constant({1, x.size()}, {x.begin(), x.end()}));
  return {out.probs.values().begin(), out.probs.values().end()};
}

std::size_t gt_predict(std::span<const double> probs) {
  if (probs.empty()) throw ContractError("gt_predict: empty probability vector");
  // max_element returns the first maximum.
  return static_cast<std::size_t>(std::max_element(probs.begin(), probs.end()) - probs.begin());
}

// --- AP model --------------------------------------------------------------

APModel::APModel(dn::ParameterSet& params, const APConfig& config, std::size_t annotator_dim,
                 std::size_t instance_input_dim, std::size_t num_classes, std::mt19937_64& rng)
    : config_(config), classes_(num_classes) {
  config_.validate();
  if (num_classes < 2) throw ConfigError("need at least two classes");
  const std::size_t r = config_.annotator_embed_size;
  const std::size_t q = config_.instance_embed_size;
  annotator_net_ = Dense::create(params, "ap.annotator", annotator_dim, r, rng);
  std::size_t combined = r;
  if (config_.instance_dependent) {
    instance_net_ = Dense::create(params, "ap.instance", instance_input_dim, q, rng);
    combined += q;
    if (config_.outer_product) {
      outer_proj_ = Dense::create(params, "ap.outer", r * q, config_.outer_size, rng);
      combined += config_.outer_size;
    }
  }
  residual_in_ = Dense::create(params, "ap.residual.in", combined, config_.residual_hidden, rng);
  residual_out_ = Dense::create(params, "ap.residual.out", config_.residual_hidden, r, rng);

  const std::size_t k = config_.head_outputs(num_classes);
  head_.weight = params.add("ap.head.weight", {r, k}, uniform_values(r * k, kHeadInitScale, rng));
  head_.bias = params.add("ap.head.bias", {k},
                          init_output_bias(config_.class_dependency, config_.eta, num_classes));
}

std::size_t APModel::instance_input_dim() const {
  return instance_net_ ? instance_net_->in() : 0;
}

Tensor APModel::annotator_embed(const Tensor& annotators) const {
  if (annotators.rank() != 2 || annotators.cols() != annotator_net_.in()) {
    throw ShapeError("annotator_embed: expected [M x " + std::to_string(annotator_net_.in()) +
                     "] features, got " + dn::shape_str(annotators.shape()));
  }
  return dn::relu(annotator_net_(annotators));
}

Tensor APModel::instance_embed(const Tensor& input) const {
  if (!instance_net_) {
    throw ContractError("instance_embed called on an instance-independent AP model");
  }
  if (input.rank() != 2 || input.cols() != instance_net_->in()) {
    throw ShapeError("instance_embed: expected [B x " + std::to_string(instance_net_->in()) +
                     "] input, got " + dn::shape_str(input.shape()));
  }
  return dn::relu((*instance_net_)(input));
}

Tensor APModel::head_raw(const Tensor& annotator_emb,
                         const std::optional<Tensor>& instance_emb) const {
  if (config_.instance_dependent != instance_emb.has_value()) {
    throw ContractError(config_.instance_dependent
                            ? "combine: instance embedding required"
                            : "combine: instance-independent model got an instance embedding");
  }
  Tensor joint = annotator_emb;
  if (instance_emb) {
    std::vector<Tensor> parts{annotator_emb, *instance_emb};
    if (outer_proj_) parts.push_back((*outer_proj_)(dn::outer_rows(annotator_emb, *instance_emb)));
    joint = dn::concat_cols(parts);
  }
  Tensor h = residual_out_(dn::relu(residual_in_(joint)));
  Tensor v = config_.residual ? dn::add(annotator_emb, h) : h;
  return head_(v);
}

Tensor APModel::combine(const Tensor& annotator_emb,
                        const std::optional<Tensor>& instance_emb) const {
  return expand_confusion(config_.class_dependency, head_raw(annotator_emb, instance_emb), classes_);
}

// --- confusion helpers -----------------------------------------------------

Tensor expand_confusion(ClassDependency variant, const Tensor& raw, std::size_t num_classes) {
  const std::size_t c = num_classes;
  const std::size_t expected = variant == ClassDependency::Independent ? 1
                               : variant == ClassDependency::Partial   ? c
                                                                       : c * c;
  if (raw.rank() != 2 || raw.cols() != expected) {
    throw ShapeError("expand_confusion(" + to_string(variant) + "): expected [P x " +
                     std::to_string(expected) + "] raw outputs, got " + dn::shape_str(raw.shape()));
  }
  if (variant == ClassDependency::Full) {
    const std::size_t p = raw.rows();
    return dn::reshape(dn::softmax_rows(dn::reshape(raw, {p * c, c})), {p, c * c});
  }
  return dn::diag_expand(dn::sigmoid(raw), c);
}

ConfusionMatrix expand_confusion(ClassDependency variant, std::span<const double> raw,
                                 std::size_t num_classes) {
  dn::NoGradGuard guard;
  Tensor t = expand_confusion(variant, Tensor::constant({1, raw.size()}, {raw.begin(), raw.end()}),
                              num_classes);
  return {num_classes, {t.values().begin(), t.values().end()}};
}

std::vector<double> init_output_bias(ClassDependency variant, double eta, std::size_t num_classes) {
  if (!(eta > 0.0 && eta < 1.0)) {
    throw ConfigError("init_output_bias: eta must lie strictly inside (0, 1)");
  }
  if (num_classes < 2) throw ConfigError("init_output_bias: need at least two classes");
  const std::size_t c = num_classes;
  switch (variant) {
    case ClassDependency::Independent: return {std::log(eta / (1.0 - eta))};
    case ClassDependency::Partial: return std::vector<double>(c, std::log(eta / (1.0 - eta)));
    case ClassDependency::Full: {
      const double d = std::log(eta * static_cast<double>(c - 1) / (1.0 - eta));
      std::vector<double> b(c * c, 0.0);
      for (std::size_t i = 0; i < c; ++i) b[i * c + i] = d;
      return b;
    }
  }
  return {};
}

double ap_correctness(std::span<const double> probs, const ConfusionMatrix& confusion) {
  if (probs.size() != confusion.classes) {
    throw ShapeError("ap_correctness: class counts differ");
  }
  double s = 0.0;
  for (std::size_t c = 0; c < probs.size(); ++c) s += probs[c] * confusion(c, c);
  return s;
}

int ap_predict(double correctness) { return correctness < 0.5 ? 1 : 0; }

}  // namespace madl
