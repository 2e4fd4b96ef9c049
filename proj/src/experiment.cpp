#include "madl/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include "madl/error.hpp"

namespace madl {

namespace {

using Clock = std::chrono::steady_clock;

constexpr std::size_t kToySize = 500;
constexpr std::size_t kLetterSize = 20000;

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "on" || v == "1") return true;
  if (v == "false" || v == "off" || v == "0") return false;
  throw ConfigError(key + ": expected on/off, got '" + v + "'");
}

double parse_real(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    double d = std::stod(v, &used);
    if (used == v.size()) return d;
  } catch (const std::exception&) {
  }
  throw ConfigError(key + ": expected a number, got '" + v + "'");
}

std::uint64_t parse_count(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    auto n = std::stoull(v, &used);
    if (used == v.size() && v.find('-') == std::string::npos) return n;
  } catch (const std::exception&) {
  }
  throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
}

std::vector<double> parse_list(const std::string& key, const std::string& v) {
  std::vector<double> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_real(key, item));
  return out;
}

std::string real_str(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

std::string list_str(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + real_str(v[i]);
  return out;
}

std::size_t thread_budget() {
  const char* env = std::getenv("MADL_THREADS");
  if (env == nullptr) return 1;
  const long n = std::strtol(env, nullptr, 10);
  return n > 0 ? static_cast<std::size_t>(n) : 1;
}

double metric_of(const RepetitionResult& r, const std::string& metric) {
  if (metric == "annot_acc") return r.annot_acc;
  if (metric == "mr_acc") return r.mr_acc;
  const std::string held = "heldout_";
  if (metric.rfind(held, 0) == 0) {
    if (!r.heldout) return std::nan("");
    for (const auto& [k, v] : r.heldout->fields())
      if (k == metric.substr(held.size())) return v;
  }
  for (const auto& [k, v] : r.test.fields())
    if (k == metric) return v;
  throw ConfigError("unknown metric '" + metric + "'");
}

}  // namespace

// --- configuration ---------------------------------------------------------

void ExperimentConfig::validate() const {
  train.validate();
  if (repetitions < 1) throw ConfigError("run.repetitions must be >= 1");
  if (split_train < 0 || split_valid < 0 || split_test < 0 ||
      std::abs(split_train + split_valid + split_test - 1.0) > 1e-9) {
    throw ConfigError("split fractions must be non-negative and sum to 1");
  }
  if (annotation_ratio && !(*annotation_ratio > 0.0 && *annotation_ratio <= 1.0)) {
    throw ConfigError("annotators.ratio must lie in (0, 1]");
  }
}

bool ExperimentConfig::generated() const {
  return source == "toy" || source == "letter-style" || source.rfind("letter:", 0) == 0;
}

void ExperimentConfig::set(const std::string& key, const std::string& v) {
  auto& ap = train.ap;
  if (key == "dataset.source") source = v;
  else if (key == "dataset.size") size = parse_count(key, v);
  else if (key == "annotators.set") annotator_set = v;
  else if (key == "annotators.ratio") annotation_ratio = parse_real(key, v);
  else if (key == "annotators.clusters") clusters = parse_count(key, v);
  else if (key == "annotators.features") features = parse_feature_mode(v);
  else if (key == "run.baseline") baseline = parse_baseline(v);
  else if (key == "run.grid") grid = parse_bool(key, v);
  else if (key == "run.repetitions") repetitions = parse_count(key, v);
  else if (key == "run.seed") seed = parse_count(key, v);
  else if (key == "split.train") split_train = parse_real(key, v);
  else if (key == "split.valid") split_valid = parse_real(key, v);
  else if (key == "split.test") split_test = parse_real(key, v);
  else if (key == "train.epochs") train.epochs = parse_count(key, v);
  else if (key == "train.batch_size") train.batch_size = parse_count(key, v);
  else if (key == "train.lr") train.lr = parse_real(key, v);
  else if (key == "train.weight_decay") train.weight_decay = parse_real(key, v);
  else if (key == "train.weights") train.use_weights = parse_bool(key, v);
  else if (key == "train.gt_hidden") train.gt_hidden = parse_count(key, v);
  else if (key == "train.lr_grid") train.lr_grid = parse_list(key, v);
  else if (key == "train.wd_grid") train.wd_grid = parse_list(key, v);
  else if (key == "kernel.alpha") train.kernel.alpha = parse_real(key, v);
  else if (key == "kernel.beta") train.kernel.beta = parse_real(key, v);
  else if (key == "ap.class_dependency") ap.class_dependency = parse_class_dependency(v);
  else if (key == "ap.instance_dependent") ap.instance_dependent = parse_bool(key, v);
  else if (key == "ap.annotator_embed_size") ap.annotator_embed_size = parse_count(key, v);
  else if (key == "ap.instance_embed_size") ap.instance_embed_size = parse_count(key, v);
  else if (key == "ap.outer_size") ap.outer_size = parse_count(key, v);
  else if (key == "ap.residual_hidden") ap.residual_hidden = parse_count(key, v);
  else if (key == "ap.eta") ap.eta = parse_real(key, v);
  else if (key == "ap.outer_product") ap.outer_product = parse_bool(key, v);
  else if (key == "ap.residual") ap.residual = parse_bool(key, v);
  else if (key == "ap.instance_source") ap.instance_source = parse_instance_source(v);
  else throw ConfigError("unknown config key '" + key + "'");
}

ExperimentConfig ExperimentConfig::from_kv(const io::KeyValues& kv) {
  ExperimentConfig c;
  for (const auto& [k, v] : kv) c.set(k, v);
  return c;
}

io::KeyValues ExperimentConfig::to_kv() const {
  const auto& ap = train.ap;
  auto b = [](bool x) { return std::string(x ? "true" : "false"); };
  io::KeyValues kv{
      {"dataset.source", source},
      {"dataset.size", std::to_string(size)},
      {"annotators.set", annotator_set},
      {"annotators.clusters", std::to_string(clusters)},
      {"annotators.features", to_string(features)},
      {"run.baseline", to_string(baseline)},
      {"run.grid", b(grid)},
      {"run.repetitions", std::to_string(repetitions)},
      {"run.seed", std::to_string(seed)},
      {"split.train", real_str(split_train)},
      {"split.valid", real_str(split_valid)},
      {"split.test", real_str(split_test)},
      {"train.epochs", std::to_string(train.epochs)},
      {"train.batch_size", std::to_string(train.batch_size)},
      {"train.lr", real_str(train.lr)},
      {"train.weight_decay", real_str(train.weight_decay)},
      {"train.weights", b(train.use_weights)},
      {"train.gt_hidden", std::to_string(train.gt_hidden)},
      {"train.lr_grid", list_str(train.lr_grid)},
      {"train.wd_grid", list_str(train.wd_grid)},
      {"kernel.alpha", real_str(train.kernel.alpha)},
      {"kernel.beta", real_str(train.kernel.beta)},
      {"ap.class_dependency", to_string(ap.class_dependency)},
      {"ap.instance_dependent", b(ap.instance_dependent)},
      {"ap.annotator_embed_size", std::to_string(ap.annotator_embed_size)},
      {"ap.instance_embed_size", std::to_string(ap.instance_embed_size)},
      {"ap.outer_size", std::to_string(ap.outer_size)},
      {"ap.residual_hidden", std::to_string(ap.residual_hidden)},
      {"ap.eta", real_str(ap.eta)},
      {"ap.outer_product", b(ap.outer_product)},
      {"ap.residual", b(ap.residual)},
      {"ap.instance_source", to_string(ap.instance_source)},
  };
  if (annotation_ratio) kv["annotators.ratio"] = real_str(*annotation_ratio);
  return kv;
}

void apply_variant(APConfig& ap, const std::string& variant) {
  if (variant.empty()) throw ConfigError("empty variant");
  ap.class_dependency = parse_class_dependency(variant.substr(0, 1));
  std::string rest = variant.substr(1);
  if (!rest.empty() && (rest[0] == 'x' || rest[0] == '-' || rest[0] == ',' || rest[0] == ':')) rest.erase(0, 1);
  if (rest == "inst") ap.instance_dependent = true;
  else if (rest == "noinst") ap.instance_dependent = false;
  else throw ConfigError("variant '" + variant + "': expected {i,p,f}x{inst,noinst}");
}

// --- data ------------------------------------------------------------------

Matrix feature_rows(const Matrix& features, const std::vector<std::size_t>& columns) {
  return features.select_rows(columns);
}

PreparedData prepare_data(const ExperimentConfig& config, std::uint64_t seed) {
  PreparedData p;
  if (!config.generated()) {
    const io::fs::path dir = config.source;
    p.data = io::read_dataset(dir);
    const std::size_t m = p.data.num_annotators;
    if (io::fs::exists(dir / "annotators.csv")) {
      p.features = io::read_annotators(dir / "annotators.csv");
      if (p.features.rows != m) {
        throw ShapeError("annotators.csv has " + std::to_string(p.features.rows) + " rows for " +
                         std::to_string(m) + " annotator columns");
      }
    } else {
      p.features = Matrix(m, m);
      for (std::size_t i = 0; i < m; ++i) p.features(i, i) = 1.0;
    }
    std::vector<bool> training(m, true);
    if (io::fs::exists(dir / "annotators.json")) {
      std::ifstream in(dir / "annotators.json");
      auto meta = nlohmann::json::parse(in);
      if (meta.contains("training")) training = meta.at("training").get<std::vector<bool>>();
      if (training.size() != m) throw ShapeError("annotators.json: training flags do not match annotator count");
    }
    for (std::size_t a = 0; a < m; ++a) (training[a] ? p.train_columns : p.heldout_columns).push_back(a);
    p.split = make_split(p.data.size(), config.split_train, config.split_valid, config.split_test, seed);
    return p;
  }

  Dataset base;
  if (config.source == "toy") {
    base = gen_toy(config.size ? config.size : kToySize, seed);
  } else if (config.source == "letter-style") {
    base = gen_letter_style(config.size ? config.size : kLetterSize, seed);
  } else {
    base = io::read_letter(config.source.substr(std::string("letter:").size()));
  }
  const std::size_t k = config.clusters ? config.clusters : (base.num_classes == 2 ? 4 : 10);
  ClusterModel clusters = kmeans(base.x, k, seed);
  AnnotatorSetSpec set = make_set(config.annotator_set, base.num_classes, k, seed);
  const std::size_t m = set.annotators.size();
  const double ratio = config.annotation_ratio.value_or(set.annotation_ratio);

  base.z_full = simulate_annotations(set.annotators, base, &clusters, seed);
  base.z = apply_ratio(base.z_full, base.size(), m, ratio, seed);
  base.num_annotators = m;
  for (std::size_t a = 0; a < m; ++a) {
    if (set.training[a]) {
      p.train_columns.push_back(a);
    } else {
      // Held-out annotators provide no training annotations.
      p.heldout_columns.push_back(a);
      for (std::size_t n = 0; n < base.size(); ++n) base.z[n * m + a] = kMissing;
    }
  }
  p.features = annotator_features(set.annotators, base, base.z_full, &clusters, config.features, seed);
  p.split = make_split(base.size(), config.split_train, config.split_valid, config.split_test, seed);
  p.data = std::move(base);
  p.set = std::move(set);
  return p;
}

// --- runs ------------------------------------------------------------------

RepetitionResult run_repetition(const ExperimentConfig& config, const PreparedData& prepared,
                                std::uint64_t seed) {
  const auto start = Clock::now();
  TrainConfig tc = config.train;
  tc.seed = seed;
  TrainAnnotators annotators{prepared.train_columns, feature_rows(prepared.features, prepared.train_columns)};

  std::vector<int> targets;
  if (config.baseline != Baseline::None) {
    targets = baseline_targets(config.baseline, prepared.data, annotators.columns, seed);
  }
  TrainConfig chosen = tc;
  auto trained = [&]() -> TrainResult {
    if (config.grid) {
      GridResult g = grid_search(prepared.data, annotators, prepared.split, tc, targets);
      chosen = g.config;
      return std::move(g.result);
    }
    return targets.empty() ? train(prepared.data, annotators, prepared.split, tc)
                           : train_supervised(prepared.data, annotators, prepared.split, targets, tc);
  };
  TrainResult run = trained();
  RepetitionResult r{seed, std::move(run), chosen, {}, std::nullopt, {}, 0.0, 0.0, 0.0};
  const MadlModel& model = r.run.model;
  r.test = evaluate(model, prepared.data, annotators.features, annotators.columns, prepared.split.test);
  if (!prepared.heldout_columns.empty()) {
    r.heldout = evaluate(model, prepared.data, feature_rows(prepared.features, prepared.heldout_columns),
                         prepared.heldout_columns, prepared.split.test);
  }
  r.weights = model.current_weights(annotators.features);
  if (prepared.data.has_labels() && prepared.data.annotation_count() > 0) {
    r.annot_acc = annotation_accuracy(prepared.data, annotators.columns);
    r.mr_acc = majority_vote_accuracy(prepared.data, annotators.columns, seed);
  } else {
    r.annot_acc = r.mr_acc = std::nan("");
  }
  r.seconds = std::chrono::duration<double>(Clock::now() - start).count();
  return r;
}

RunReport run_experiment(const ExperimentConfig& config) {
  config.validate();
  const auto start = Clock::now();
  RunReport report;
  report.config = config;
  std::vector<std::optional<RepetitionResult>> slots(config.repetitions);
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (std::size_t r = next++; r < config.repetitions; r = next++) {
      try {
        const std::uint64_t s = config.seed + r;
        slots[r] = run_repetition(config, prepare_data(config, s), s);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const std::size_t threads = std::min(thread_budget(), config.repetitions);
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);
  for (auto& s : slots) report.repetitions.push_back(std::move(*s));
  report.seconds = std::chrono::duration<double>(Clock::now() - start).count();
  return report;
}

double RunReport::mean(const std::string& metric) const {
  double s = 0.0;
  for (const auto& r : repetitions) s += metric_of(r, metric);
  return s / static_cast<double>(repetitions.size());
}

double RunReport::stddev(const std::string& metric) const {
  if (repetitions.size() < 2) return 0.0;
  const double mu = mean(metric);
  double s = 0.0;
  for (const auto& r : repetitions) s += (metric_of(r, metric) - mu) * (metric_of(r, metric) - mu);
  return std::sqrt(s / static_cast<double>(repetitions.size() - 1));
}

nlohmann::json metrics_json(const MetricsReport& m) {
  nlohmann::json j;
  for (const auto& [k, v] : m.fields()) j[k] = std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v);
  j["instances"] = m.instances;
  j["annotations"] = m.annotations;
  if (!m.has_gt()) j["notice"] = "no ground truth labels; scores omitted";
  return j;
}

nlohmann::json RunReport::to_json() const {
  using nlohmann::json;
  json reps = json::array();
  for (const auto& r : repetitions) {
    json history = json::array();
    for (const auto& h : r.run.history) {
      history.push_back({{"epoch", h.epoch},
                         {"train_loss", h.train_loss},
                         {"valid_gt_acc", std::isnan(h.valid_gt_acc) ? json(nullptr) : json(h.valid_gt_acc)},
                         {"gamma", h.gamma},
                         {"weights", h.weights}});
    }
    json rep{{"seed", r.seed},
             {"test", metrics_json(r.test)},
             {"best_epoch", r.run.best_epoch},
             {"lr", r.chosen.lr},
             {"weight_decay", r.chosen.weight_decay},
             {"gamma", r.run.model.gamma()},
             {"weights", r.weights},
             {"annot_acc", std::isnan(r.annot_acc) ? json(nullptr) : json(r.annot_acc)},
             {"mr_acc", std::isnan(r.mr_acc) ? json(nullptr) : json(r.mr_acc)},
             {"seconds", r.seconds},
             {"history", std::move(history)}};
    if (r.heldout) rep["test_heldout_annotators"] = metrics_json(*r.heldout);
    reps.push_back(std::move(rep));
  }
  json aggregate;
  std::vector<std::string> names;
  for (const auto& [k, v] : MetricsReport().fields()) names.push_back(k);
  names.push_back("annot_acc");
  names.push_back("mr_acc");
  if (!repetitions.empty() && repetitions.front().heldout)
    for (const auto& [k, v] : MetricsReport().fields())
      if (k.rfind("ap_", 0) == 0) names.push_back("heldout_" + k);
  for (const auto& n : names) {
    const double mu = mean(n);
    if (std::isnan(mu)) continue;
    aggregate[n] = {{"mean", mu}, {"std", stddev(n)}};
  }
  return json{{"config", config.to_kv()},
              {"repetitions", std::move(reps)},
              {"aggregate", std::move(aggregate)},
              {"seconds", seconds}};
}

std::vector<SweepEntry> sweep_ratio(const ExperimentConfig& config, const std::vector<double>& ratios) {
  if (ratios.empty()) throw ConfigError("sweep-ratio: no ratios given");
  std::vector<SweepEntry> out;
  for (double ratio : ratios) {
    ExperimentConfig c = config;
    c.annotation_ratio = ratio;
    out.push_back({ratio, run_experiment(c)});
  }
  return out;
}

nlohmann::json sweep_json(const std::vector<SweepEntry>& sweep) {
  nlohmann::json table = nlohmann::json::array();
  for (const auto& e : sweep) {
    nlohmann::json row{{"ratio", e.ratio}};
    for (const char* n : {"annot_acc", "mr_acc", "gt_acc", "gt_nll", "gt_bs", "ap_acc", "ap_nll", "ap_bs", "ap_bal_acc"}) {
      const double mu = e.report.mean(n);
      if (std::isnan(mu)) continue;
      row[n] = {{"mean", mu}, {"std", e.report.stddev(n)}};
    }
    table.push_back(std::move(row));
  }
  nlohmann::json runs = nlohmann::json::array();
  for (const auto& e : sweep) runs.push_back(e.report.to_json());
  return {{"table", std::move(table)}, {"runs", std::move(runs)}};
}

}  // namespace madl
