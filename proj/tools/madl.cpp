#include <cstdint>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <string>
#include <vector>

#ifdef __GLIBC__
#include <malloc.h>
#endif

#include "CLI11.hpp"
#include "json.hpp"
#include "madl/error.hpp"
#include "madl/eval.hpp"
#include "madl/experiment.hpp"
#include "madl/io.hpp"

using namespace madl;
namespace fs = std::filesystem;

namespace {

struct CommonOptions {
  std::string config;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::string out = "madl_out";
  std::string variant;
  std::string weights;
  std::string baseline;
  std::string features;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config, "key=value config file");
  cmd->add_option("--set", o.overrides, "config override key=value (repeatable)");
  cmd->add_option("--seed", o.seed, "base seed");
  cmd->add_option("--out", o.out, "output directory");
  cmd->add_option("--variant", o.variant, "AP variant {i,p,f}x{inst,noinst}");
  cmd->add_option("--weights", o.weights, "annotator weights")->check(CLI::IsMember({"on", "off"}));
  cmd->add_option("--baseline", o.baseline, "baseline")->check(CLI::IsMember({"none", "lb", "ub"}));
  cmd->add_option("--features", o.features, "annotator features")->check(CLI::IsMember({"onehot", "prior"}));
}

ExperimentConfig build_config(const CommonOptions& o) {
  ExperimentConfig c;
  if (!o.config.empty()) c = ExperimentConfig::from_kv(io::read_key_values(o.config));
  for (const auto& kv : o.overrides) {
    auto parsed = io::parse_key_values(kv, "--set");
    for (const auto& [k, v] : parsed) c.set(k, v);
  }
  if (o.seed) c.seed = *o.seed;
  if (!o.variant.empty()) apply_variant(c.train.ap, o.variant);
  if (!o.weights.empty()) c.train.use_weights = o.weights == "on";
  if (!o.baseline.empty()) c.baseline = parse_baseline(o.baseline);
  if (!o.features.empty()) c.features = parse_feature_mode(o.features);
  c.validate();
  return c;
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

void print_aggregate(const RunReport& report) {
  std::cout << std::fixed << std::setprecision(4);
  for (const auto& [k, v] : MetricsReport().fields()) {
    const double mu = report.mean(k);
    if (std::isnan(mu)) continue;
    std::cout << k << " " << mu << " +- " << report.stddev(k) << '\n';
  }
}

nlohmann::json annotator_json(const PreparedData& p) {
  nlohmann::json list = nlohmann::json::array();
  for (const auto& a : p.set->annotators) {
    nlohmann::json j{{"type", to_string(a.type)}, {"correctness", a.correctness}};
    j["copy_group"] = a.copy_group ? nlohmann::json(*a.copy_group) : nlohmann::json(nullptr);
    list.push_back(std::move(j));
  }
  return {{"set", p.set->name}, {"annotation_ratio", p.set->annotation_ratio}, {"annotators", list},
          {"training", p.set->training}};
}

int cmd_simulate(const CommonOptions& o) {
  ExperimentConfig c = build_config(o);
  if (!c.generated()) throw ConfigError("simulate needs a generated source (toy, letter-style, letter:<path>)");
  PreparedData p = prepare_data(c, c.seed);
  const fs::path out = o.out;
  io::write_dataset(out, p.data);
  io::write_annotators(out / "annotators.csv", p.features);
  nlohmann::json spec = annotator_json(p);
  if (c.annotation_ratio) spec["annotation_ratio"] = *c.annotation_ratio;
  write_json(out / "annotators.json", spec);
  std::ofstream(out / "config.txt") << io::format_key_values(c.to_kv());
  std::cout << "wrote " << p.data.size() << " instances, " << p.data.num_annotators << " annotators, "
            << p.data.annotation_count() << " annotations to " << out.string() << '\n';
  return 0;
}

int cmd_train(const CommonOptions& o, bool grid, std::optional<std::size_t> reps) {
  ExperimentConfig c = build_config(o);
  if (grid) c.grid = true;
  if (reps) c.repetitions = *reps;
  c.validate();
  RunReport report = run_experiment(c);
  const fs::path out = o.out;
  write_json(out / "report.json", report.to_json());
  for (std::size_t r = 0; r < report.repetitions.size(); ++r) {
    const auto& rep = report.repetitions[r];
    io::KeyValues meta = c.to_kv();
    meta["run.seed"] = std::to_string(rep.seed);
    meta["run.repetitions"] = "1";
    io::save_checkpoint(out / ("checkpoint_" + std::to_string(r) + ".bin"), rep.run.model, meta);
  }
  print_aggregate(report);
  std::cout << "report: " << (out / "report.json").string() << '\n';
  return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& data_dir, const std::string& split_name,
             const std::string& out) {
  io::Checkpoint ck = io::load_checkpoint(checkpoint);
  ExperimentConfig c = ExperimentConfig::from_kv([&] {
    io::KeyValues kv;
    for (const auto& [k, v] : ck.meta)
      if (k.rfind("model.", 0) != 0) kv[k] = v;
    return kv;
  }());
  if (!data_dir.empty()) c.source = data_dir;
  PreparedData p = prepare_data(c, c.seed);
  const ModelSpec& spec = ck.model.spec();
  if (spec.input_dim != p.data.x.cols || spec.num_classes != p.data.num_classes ||
      spec.annotator_dim != p.features.cols) {
    throw ShapeError("checkpoint expects D=" + std::to_string(spec.input_dim) + ", C=" +
                     std::to_string(spec.num_classes) + ", annotator width " + std::to_string(spec.annotator_dim) +
                     "; data has D=" + std::to_string(p.data.x.cols) + ", C=" + std::to_string(p.data.num_classes) +
                     ", annotator width " + std::to_string(p.features.cols));
  }
  std::vector<std::size_t> rows;
  if (split_name == "train") rows = p.split.train;
  else if (split_name == "valid") rows = p.split.valid;
  else if (split_name == "test") rows = p.split.test;
  else {
    rows.resize(p.data.size());
    std::iota(rows.begin(), rows.end(), std::size_t{0});
  }
  nlohmann::json report{{"split", split_name}};
  report["annotators"] = metrics_json(
      evaluate(ck.model, p.data, feature_rows(p.features, p.train_columns), p.train_columns, rows));
  if (!p.heldout_columns.empty()) {
    report["heldout_annotators"] = metrics_json(
        evaluate(ck.model, p.data, feature_rows(p.features, p.heldout_columns), p.heldout_columns, rows));
  }
  if (!p.data.has_labels()) {
    std::cout << "notice: dataset has no ground truth labels; GT and AP metrics omitted\n";
  }
  if (!out.empty()) write_json(fs::path(out) / "eval.json", report);
  std::cout << report.dump(2) << '\n';
  return 0;
}

int cmd_sweep(const CommonOptions& o, const std::vector<double>& ratios, std::optional<std::size_t> reps) {
  ExperimentConfig c = build_config(o);
  if (reps) c.repetitions = *reps;
  auto sweep = sweep_ratio(c, ratios);
  nlohmann::json j = sweep_json(sweep);
  write_json(fs::path(o.out) / "sweep.json", j);
  std::cout << std::fixed << std::setprecision(4) << "ratio annot_acc mr_acc gt_acc ap_acc\n";
  for (const auto& e : sweep) {
    std::cout << e.ratio << " " << e.report.mean("annot_acc") << " " << e.report.mean("mr_acc") << " "
              << e.report.mean("gt_acc") << " " << e.report.mean("ap_acc") << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
#ifdef __GLIBC__
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
  CLI::App app{"Multi-annotator deep learning: simulation, training and evaluation"};
  app.require_subcommand(1);

  CommonOptions sim_opts, train_opts, sweep_opts;
  auto* sim = app.add_subcommand("simulate", "generate a dataset with simulated annotators");
  add_common(sim, sim_opts);

  auto* tr = app.add_subcommand("train", "train with repetitions and write a report and checkpoints");
  add_common(tr, train_opts);
  bool grid = false;
  std::optional<std::size_t> train_reps;
  tr->add_flag("--grid", grid, "search the learning-rate / weight-decay grid");
  tr->add_option("--repetitions", train_reps, "number of repetitions");

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string checkpoint, data_dir, split = "test", eval_out;
  ev->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  ev->add_option("--data", data_dir, "dataset directory (default: the checkpoint's source)");
  ev->add_option("--split", split, "rows to score")->check(CLI::IsMember({"train", "valid", "test", "all"}));
  ev->add_option("--out", eval_out, "output directory for eval.json");

  auto* sw = app.add_subcommand("sweep-ratio", "repeat training over annotation ratios");
  add_common(sw, sweep_opts);
  std::vector<double> ratios{0.2, 0.4, 0.6, 0.8};
  std::optional<std::size_t> sweep_reps;
  sw->add_option("--ratios", ratios, "annotation ratios")->delimiter(',');
  sw->add_option("--repetitions", sweep_reps, "repetitions per ratio");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*sim) return cmd_simulate(sim_opts);
    if (*tr) return cmd_train(train_opts, grid, train_reps);
    if (*ev) return cmd_eval(checkpoint, data_dir, split, eval_out);
    if (*sw) return cmd_sweep(sweep_opts, ratios, sweep_reps);
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
