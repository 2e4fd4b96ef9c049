#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"
#include "madl/error.hpp"
#include "madl/experiment.hpp"
#include "madl/training.hpp"

using namespace madl;
namespace dn = madl::diffnet;

namespace {

const ConfusionMatrix kIdentity{2, {1, 0, 0, 1}};
const ConfusionMatrix kUniform{2, {0.5, 0.5, 0.5, 0.5}};

Tensor flat_confusions(const std::vector<ConfusionMatrix>& cms) {
  std::vector<double> v;
  for (const auto& cm : cms) v.insert(v.end(), cm.entries.begin(), cm.entries.end());
  return Tensor::constant({cms.size(), cms[0].classes * cms[0].classes}, v);
}

struct Toy {
  PreparedData prepared;
  TrainAnnotators annotators;
};

Toy toy(std::uint64_t seed) {
  ExperimentConfig c;
  Toy t{prepare_data(c, seed), {}};
  t.annotators.columns = t.prepared.train_columns;
  t.annotators.features = feature_rows(t.prepared.features, t.prepared.train_columns);
  return t;
}

double unweighted_loss_oracle(const MadlModel& model, const Dataset& data, const Matrix& features,
                              const Batch& batch) {
  Matrix x = data.x.select_rows(batch.instances);
  Matrix probs = model.predict_proba(x);
  double s = 0.0;
  for (std::size_t p = 0; p < batch.annotation_count(); ++p) {
    const std::size_t i = batch.pair_instance[p];
    auto conf = model.confusions(x.row(i), features);
    s += std::log(annotation_probability(probs.row(i), conf[batch.pair_annotator[p]], batch.pair_label[p]));
  }
  return -s / static_cast<double>(batch.annotation_count());
}

}  // namespace

TEST_CASE("annotation_probability examples") {
  std::vector<double> p{0.8, 0.2};
  CHECK(annotation_probability(p, kIdentity, 1) == doctest::Approx(0.2).epsilon(1e-15));
  CHECK(annotation_probability(p, kUniform, 1) == doctest::Approx(0.5).epsilon(1e-15));
  ConfusionMatrix route{3, {0, 0, 1, 1, 0, 0, 0, 1, 0}};
  CHECK(annotation_probability(std::vector<double>{0, 1, 0}, route, 0) == 1.0);
}

TEST_CASE("weighted loss on the worked two-annotator example") {
  auto probs = Tensor::constant({2, 2}, {0.8, 0.2, 0.8, 0.2});
  std::vector<std::size_t> z{1, 1};
  auto logp = annotation_log_probs(probs, flat_confusions({kIdentity, kUniform}), z, 2);
  auto w = Tensor::constant({2}, {1.0, 1.0});
  auto loss = weighted_loss(logp, w, Tensor::constant({1}, {0.0}), KernelScale{2.0, 1.0});
  CHECK(loss.item() == doctest::Approx(2.1512925464970225).epsilon(1e-12));
}

TEST_CASE("perfect fit without prior has zero loss") {
  auto probs = Tensor::constant({3, 2}, {1, 0, 0, 1, 1, 0});
  std::vector<std::size_t> z{0, 1, 0};
  auto logp = annotation_log_probs(probs, flat_confusions({kIdentity, kIdentity, kIdentity}), z, 2);
  auto loss = weighted_loss(logp, Tensor::constant({3}, {1, 1, 1}), std::nullopt, KernelScale{});
  CHECK(loss.item() == 0.0);
}

TEST_CASE("probability clamp keeps the loss finite") {
  auto probs = Tensor::constant({1, 2}, {1, 0});
  std::vector<std::size_t> z{1};
  auto logp = annotation_log_probs(probs, flat_confusions({kIdentity}), z, 2);
  CHECK(logp.item() == doctest::Approx(std::log(1e-12)));
}

TEST_CASE("duplicating annotations leaves the data term unchanged") {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> ud(0.05, 1.0);
  for (int t = 0; t < 50; ++t) {
    const std::size_t n = 1 + rng() % 8;
    std::vector<double> lp(n), w(n);
    for (std::size_t i = 0; i < n; ++i) lp[i] = std::log(ud(rng)), w[i] = 3.0 * ud(rng);
    auto twice = [](std::vector<double> v) {
      v.insert(v.end(), v.begin(), v.end());
      return v;
    };
    auto once = weighted_loss(Tensor::constant({n}, lp), Tensor::constant({n}, w), std::nullopt, {});
    auto dup = weighted_loss(Tensor::constant({2 * n}, twice(lp)), Tensor::constant({2 * n}, twice(w)),
                             std::nullopt, {});
    CHECK(dup.item() == doctest::Approx(once.item()).epsilon(1e-12));
  }
}

TEST_CASE("splitting a batch and re-weighting by annotation count reproduces the full batch") {
  std::mt19937_64 rng(32);
  std::uniform_real_distribution<double> ud(0.05, 1.0);
  for (int t = 0; t < 50; ++t) {
    const std::size_t a = 1 + rng() % 6, b = 1 + rng() % 6;
    std::vector<double> lp(a + b), w(a + b);
    for (std::size_t i = 0; i < a + b; ++i) lp[i] = std::log(ud(rng)), w[i] = ud(rng);
    auto part = [&](std::size_t lo, std::size_t hi) {
      return weighted_loss(Tensor::constant({hi - lo}, {lp.begin() + lo, lp.begin() + hi}),
                           Tensor::constant({hi - lo}, {w.begin() + lo, w.begin() + hi}), std::nullopt, {})
          .item();
    };
    const double full = part(0, a + b);
    const double merged = (part(0, a) * a + part(a, a + b) * b) / static_cast<double>(a + b);
    CHECK(merged == doctest::Approx(full).epsilon(1e-12));
  }
}

TEST_CASE("unit weights without prior equal the plain log-likelihood over |Z|") {
  std::mt19937_64 rng(33);
  std::uniform_real_distribution<double> ud(0.01, 1.0);
  std::vector<double> lp(17);
  for (auto& v : lp) v = std::log(ud(rng));
  const double expected = -std::accumulate(lp.begin(), lp.end(), 0.0) / 17.0;
  auto loss = weighted_loss(Tensor::constant({17}, lp), Tensor::constant({17}, std::vector<double>(17, 1.0)),
                            std::nullopt, {});
  CHECK(std::abs(loss.item() - expected) < 1e-12);
}

TEST_CASE("one small optimizer step decreases the worked-example loss") {
  dn::ParameterSet ps;
  auto logits = ps.add("logits", {1, 2}, {std::log(0.8), std::log(0.2)});
  auto raw = ps.add("raw", {2, 4}, {5, -5, -5, 5, 0, 0, 0, 0});
  auto log_gamma = ps.add("log_gamma", {1}, {0.0});
  std::vector<std::size_t> both{0, 0};
  std::vector<std::size_t> z{1, 1};
  auto loss_fn = [&] {
    auto p = dn::gather_rows(dn::softmax_rows(logits), both);
    auto conf = dn::reshape(dn::softmax_rows(dn::reshape(raw, {4, 2})), {2, 4});
    auto logp = annotation_log_probs(p, conf, z, 2);
    return weighted_loss(logp, Tensor::constant({2}, {1, 1}), log_gamma, KernelScale{2.0, 1.0});
  };
  auto before = loss_fn();
  dn::backward(before);
  auto st = dn::OptimizerState::for_params(ps, 1e-4, 0.0, 1);
  dn::adamw_step(ps, st, 1e-4);
  CHECK(loss_fn().item() < before.item());
}

TEST_CASE("make_batch collects observed pairs") {
  Dataset d;
  d.x = Matrix(3, 1);
  d.num_annotators = 3;
  d.num_classes = 2;
  d.z = {0, kMissing, 1, kMissing, kMissing, kMissing, 1, 1, 0};
  std::vector<std::size_t> rows{2, 0};
  std::vector<std::size_t> cols{2, 0};
  Batch b = make_batch(d, rows, cols);
  CHECK(b.instances == rows);
  CHECK(b.annotation_count() == 4);
  CHECK(b.pair_instance == std::vector<std::size_t>{0, 0, 1, 1});
  CHECK(b.pair_annotator == std::vector<std::size_t>{0, 1, 0, 1});
  CHECK(b.pair_label == std::vector<std::size_t>{0, 1, 1, 0});
}

TEST_CASE("select_best examples") {
  auto hist = [](std::vector<double> accs) {
    std::vector<EpochRecord> h;
    for (std::size_t i = 0; i < accs.size(); ++i) h.push_back({i + 1, 0.0, accs[i], 1.0, {}});
    return h;
  };
  CHECK(select_best(hist({0.1, 0.2, 0.3, 0.4})) == 3);
  CHECK(select_best(hist({0.5})) == 0);
  CHECK(select_best(hist({0.2, 0.6, 0.4, 0.6, 0.6})) == 1);
  CHECK_THROWS_AS(select_best(hist({})), ContractError);
}

TEST_CASE("madl loss without weights matches an inference-path oracle") {
  auto t = toy(3);
  const auto& data = t.prepared.data;
  ModelSpec spec;
  spec.input_dim = 2;
  spec.num_classes = 2;
  spec.annotator_dim = t.annotators.features.cols;
  auto model = MadlModel::create(spec, 5);
  std::vector<std::size_t> rows(t.prepared.split.train.begin(), t.prepared.split.train.begin() + 64);
  Batch batch = make_batch(data, rows, t.annotators.columns);
  REQUIRE(batch.annotation_count() > 0);
  auto terms = madl_loss(model, data, t.annotators.features, batch, false);
  CHECK(terms.loss.item() ==
        doctest::Approx(unweighted_loss_oracle(model, data, t.annotators.features, batch)).epsilon(1e-10));
  for (double w : terms.weights.values()) CHECK(w == 1.0);
}

TEST_CASE("weights-off training follows a hand-rolled full-batch loop") {
  auto t = toy(4);
  const auto& data = t.prepared.data;
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 100000;
  cfg.use_weights = false;
  cfg.seed = 9;
  Split split = t.prepared.split;
  split.valid.clear();
  auto trained = train(data, t.annotators, split, cfg);

  ModelSpec spec;
  spec.input_dim = 2;
  spec.num_classes = 2;
  spec.annotator_dim = t.annotators.features.cols;
  auto model = MadlModel::create(spec, 9);
  std::vector<std::size_t> rows;
  for (std::size_t n : split.train) {
    bool any = false;
    for (std::size_t m : t.annotators.columns) any = any || data.annotation(n, m) != kMissing;
    if (any) rows.push_back(n);
  }
  Batch batch = make_batch(data, rows, t.annotators.columns);
  auto opt = dn::OptimizerState::for_params(model.params(), cfg.lr, 0.0, 2);
  for (int step = 0; step < 2; ++step) {
    const double lr = dn::cosine_lr(opt.step, 2, cfg.lr);
    model.params().zero_grad();
    Tensor x = Tensor::constant({rows.size(), 2}, data.x.select_rows(rows).data);
    auto out = model.gt().forward(x);
    auto emb = model.ap().annotator_embed(Tensor::constant(
        {t.annotators.features.rows, t.annotators.features.cols}, t.annotators.features.data));
    auto conf = model.pair_confusions(x, out, emb, batch.pair_instance, batch.pair_annotator);
    auto logp = annotation_log_probs(dn::gather_rows(out.probs, batch.pair_instance), conf, batch.pair_label, 2);
    auto loss = dn::scale(dn::sum(logp), -1.0 / static_cast<double>(batch.annotation_count()));
    dn::backward(loss);
    dn::adamw_step(model.params(), opt, lr);
  }
  const auto& a = trained.model.params().items();
  const auto& b = model.params().items();
  REQUIRE(a.size() == b.size());
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[i].tensor.size(); ++j)
      worst = std::max(worst, std::abs(a[i].tensor.values()[j] - b[i].tensor.values()[j]));
  CHECK(worst < 1e-10);
}

TEST_CASE("training is deterministic and the loss trends down") {
  auto t = toy(1);
  TrainConfig cfg;
  cfg.seed = 2;
  cfg.epochs = 60;
  auto a = train(t.prepared.data, t.annotators, t.prepared.split, cfg);
  auto b = train(t.prepared.data, t.annotators, t.prepared.split, cfg);
  CHECK(a.model.params().snapshot() == b.model.params().snapshot());
  CHECK(a.history.size() == 60);
  std::vector<double> windows;
  for (std::size_t w = 0; w < 6; ++w) {
    double s = 0.0;
    for (std::size_t e = 0; e < 10; ++e) s += a.history[w * 10 + e].train_loss;
    windows.push_back(s / 10.0);
  }
  for (std::size_t w = 1; w < windows.size(); ++w) CHECK(windows[w] < windows[w - 1]);
  CHECK(a.history[a.best_epoch - 1].valid_gt_acc == a.history[select_best(a.history)].valid_gt_acc);
  CHECK(a.best_epoch == select_best(a.history) + 1);
}

TEST_CASE("training without annotations is a configuration error") {
  auto t = toy(2);
  Dataset d = t.prepared.data;
  std::fill(d.z.begin(), d.z.end(), kMissing);
  CHECK_THROWS_AS(train(d, t.annotators, t.prepared.split, TrainConfig{}), ConfigError);
}

TEST_CASE("grid search selection") {
  auto t = toy(5);
  TrainConfig cfg;
  cfg.epochs = 30;
  SUBCASE("singleton grid") {
    cfg.lr_grid = {0.005};
    cfg.wd_grid = {0.001};
    auto g = grid_search(t.prepared.data, t.annotators, t.prepared.split, cfg);
    CHECK(g.config.lr == 0.005);
    CHECK(g.config.weight_decay == 0.001);
    CHECK(g.cell_scores.size() == 1);
  }
  SUBCASE("a frozen cell never wins") {
    cfg.lr_grid = {0.01, 0.0};
    cfg.wd_grid = {0.0};
    auto g = grid_search(t.prepared.data, t.annotators, t.prepared.split, cfg);
    REQUIRE(g.cell_scores.size() == 2);
    CHECK(g.cell_scores[1] <= g.cell_scores[0]);
    CHECK(g.config.lr == 0.01);
  }
  SUBCASE("nine cells return the argmax") {
    cfg.epochs = 5;
    auto g = grid_search(t.prepared.data, t.annotators, t.prepared.split, cfg);
    REQUIRE(g.cell_scores.size() == 9);
    const auto best = std::max_element(g.cell_scores.begin(), g.cell_scores.end()) - g.cell_scores.begin();
    CHECK(g.config.lr == cfg.lr_grid[static_cast<std::size_t>(best) / 3]);
    CHECK(g.config.weight_decay == cfg.wd_grid[static_cast<std::size_t>(best) % 3]);
  }
}

TEST_CASE("train config validation") {
  TrainConfig cfg;
  cfg.epochs = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.epochs = 1;
  cfg.batch_size = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}
