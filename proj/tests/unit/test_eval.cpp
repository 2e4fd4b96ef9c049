#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "doctest.h"
#include "madl/error.hpp"
#include "madl/eval.hpp"
#include "madl/experiment.hpp"
#include "oracles.hpp"

using namespace madl;

namespace {

Matrix rows_of(std::vector<std::vector<double>> rows) {
  Matrix m(rows.size(), rows[0].size());
  for (std::size_t r = 0; r < rows.size(); ++r) std::copy(rows[r].begin(), rows[r].end(), m.row(r).begin());
  return m;
}

}  // namespace

TEST_CASE("gt_acc examples") {
  std::vector<int> y{0, 1, 1, 0};
  CHECK(gt_acc(y, std::vector<std::size_t>{0, 1, 1, 0}) == 1.0);
  CHECK(gt_acc(y, std::vector<std::size_t>{1, 0, 0, 1}) == 0.0);
  CHECK(gt_acc(y, std::vector<std::size_t>{0, 1, 0, 0}) == 0.75);
  CHECK_THROWS_AS(gt_acc(std::vector<int>{}, std::vector<std::size_t>{}), ContractError);
}

TEST_CASE("gt_nll examples") {
  std::vector<int> y{0, 1};
  CHECK(gt_nll(y, rows_of({{1, 0}, {0, 1}})) == 0.0);
  CHECK(gt_nll(y, rows_of({{0.5, 0.5}, {0.5, 0.5}})) == doctest::Approx(0.6931471805599453).epsilon(1e-15));
  CHECK(gt_nll(y, rows_of({{0.8, 0.2}, {0.2, 0.8}})) == doctest::Approx(0.2231435513142097).epsilon(1e-15));
  CHECK(gt_nll(y, rows_of({{0.0, 1.0}, {0, 1}})) == doctest::Approx(-std::log(1e-12) / 2.0));
}

TEST_CASE("gt_bs examples") {
  CHECK(gt_bs(std::vector<int>{0, 1}, rows_of({{1, 0}, {0, 1}})) == 0.0);
  CHECK(gt_bs(std::vector<int>{0, 1}, rows_of({{0.5, 0.5}, {0.5, 0.5}})) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(gt_bs(std::vector<int>{0}, rows_of({{0.8, 0.2}})) == doctest::Approx(0.08).epsilon(1e-14));
  CHECK(gt_bs(std::vector<int>{0}, rows_of({{0, 1}})) == 2.0);
}

TEST_CASE("ap_metrics examples") {
  std::vector<int> y{0, 1, 1};
  std::vector<int> z{0, 1, kMissing, 0, 1, 1};  // 3 x 2
  SUBCASE("oracle predictions") {
    Matrix c = rows_of({{1, 0}, {0, 0}, {1, 1}});
    auto s = ap_metrics(y, z, c);
    CHECK(s.annotations == 5);
    CHECK(s.acc == 1.0);
    CHECK(s.nll == 0.0);
    CHECK(s.bs == 0.0);
    CHECK(bal_acc(y, z, c) == 1.0);
  }
  SUBCASE("constant one half") {
    Matrix c(3, 2, 0.5);
    auto s = ap_metrics(y, z, c);
    CHECK(s.nll == doctest::Approx(std::log(2.0)).epsilon(1e-15));
    CHECK(s.bs == doctest::Approx(0.25).epsilon(1e-15));
  }
  SUBCASE("two annotations by hand") {
    std::vector<int> y1{0};
    std::vector<int> z1{0, 1};
    Matrix c = rows_of({{0.8, 0.3}});
    auto s = ap_metrics(y1, z1, c);
    CHECK(s.acc == 1.0);
    CHECK(s.nll == doctest::Approx(-(std::log(0.8) + std::log(0.7)) / 2.0).epsilon(1e-15));
    CHECK(s.bs == doctest::Approx((0.04 + 0.09) / 2.0).epsilon(1e-14));
  }
  SUBCASE("nothing observed") {
    std::vector<int> none(6, kMissing);
    CHECK_THROWS_AS(ap_metrics(y, none, Matrix(3, 2, 0.5)), ContractError);
  }
}

TEST_CASE("bal_acc examples") {
  SUBCASE("constant correct predictor on mixed outcomes") {
    std::vector<int> y{0, 0, 0, 0};
    std::vector<int> z{0, 1, 0, 1};
    CHECK(bal_acc(y, z, Matrix(4, 1, 0.9)) == 0.5);
  }
  SUBCASE("two annotators against brute-force pair averaging") {
    std::vector<int> y{0, 1, 0, 1, 1};
    std::vector<int> z{0, 0, 1, 1, 1, kMissing, 0, 1, 0, 0};
    Matrix c = rows_of({{0.9, 0.2}, {0.4, 0.6}, {0.7, 0.3}, {0.2, 0.9}, {0.6, 0.1}});
    double sum = 0.0;
    int pairs = 0;
    for (std::size_t m = 0; m < 2; ++m)
      for (int outcome = 0; outcome < 2; ++outcome) {
        int hit = 0, tot = 0;
        for (std::size_t n = 0; n < 5; ++n) {
          const int label = z[n * 2 + m];
          if (label == kMissing || (label != y[n]) != (outcome == 1)) continue;
          ++tot;
          hit += (c(n, m) < 0.5) == (outcome == 1);
        }
        if (tot) sum += static_cast<double>(hit) / tot, ++pairs;
      }
    CHECK(pairs == 4);
    CHECK(bal_acc(y, z, c) == doctest::Approx(sum / pairs).epsilon(1e-15));
  }
}

TEST_CASE("majority_vote examples") {
  std::vector<std::size_t> cols{0, 1, 2};
  SUBCASE("clear majority") {
    auto mv = majority_vote(std::vector<int>{0, 0, 1}, 3, cols, 2, 1);
    CHECK(mv.labels[0] == 0);
    CHECK_FALSE(mv.tie[0]);
  }
  SUBCASE("tie") {
    auto mv = majority_vote(std::vector<int>{0, 1, kMissing}, 3, cols, 2, 1);
    CHECK((mv.labels[0] == 0 || mv.labels[0] == 1));
    CHECK(mv.tie[0]);
    std::set<int> seen;
    for (std::uint64_t s = 0; s < 40; ++s)
      seen.insert(majority_vote(std::vector<int>{0, 1, kMissing}, 3, cols, 2, s).labels[0]);
    CHECK(seen.size() == 2);
  }
  SUBCASE("single annotation") {
    auto mv = majority_vote(std::vector<int>{kMissing, 1, kMissing}, 3, cols, 2, 1);
    CHECK(mv.labels[0] == 1);
  }
  SUBCASE("no annotation is excluded") {
    auto mv = majority_vote(std::vector<int>{0, 0, 1, kMissing, kMissing, kMissing}, 3, cols, 2, 1);
    CHECK(mv.labels[1] == kMissing);
    CHECK(mv.excluded == std::vector<std::size_t>{1});
  }
}

TEST_CASE("majority_vote ignores annotator order") {
  std::mt19937_64 rng(51);
  std::uniform_int_distribution<int> lab(-1, 2);
  const std::size_t n = 300, m = 6;
  std::vector<int> z(n * m);
  for (auto& v : z) v = lab(rng);
  std::vector<std::size_t> cols(m);
  std::iota(cols.begin(), cols.end(), 0);
  auto base = majority_vote(z, m, cols, 3, 17);
  for (int t = 0; t < 10; ++t) {
    std::shuffle(cols.begin(), cols.end(), rng);
    auto other = majority_vote(z, m, cols, 3, 17);
    CHECK(other.labels == base.labels);
    CHECK(other.tie == base.tie);
  }
}

TEST_CASE("bayes oracles") {
  CHECK(bayes_gt(std::vector<double>{0.7, 0.3}) == 0);
  CHECK(bayes_gt(std::vector<double>{0.25, 0.25, 0.25, 0.25}) == 0);
  std::vector<double> p{0.1, 0.6, 0.3};
  CHECK(bayes_ap(p, ConfusionMatrix{3, {1, 0, 0, 0, 1, 0, 0, 0, 1}}) == 0);
  CHECK(bayes_ap(p, ConfusionMatrix{3, {0, 0.5, 0.5, 0.5, 0, 0.5, 0.5, 0.5, 0}}) == 1);
  std::mt19937_64 rng(52);
  for (int t = 0; t < 500; ++t) {
    const std::size_t c = 2 + rng() % 4;
    const bool coarse = t % 2 == 0;
    auto post = testing::random_simplex(c, rng, coarse);
    auto conf = testing::random_confusion(c, rng, coarse);
    CHECK(bayes_gt(post) == testing::brute_force_gt(post));
    CHECK(bayes_ap(post, conf) == testing::brute_force_ap(post, conf));
  }
}

TEST_CASE("NLL and Brier score are minimized at the empirical distribution") {
  // Population with label frequencies 0.2 / 0.3 / 0.5.
  std::vector<int> y;
  for (int i = 0; i < 20; ++i) y.push_back(0);
  for (int i = 0; i < 30; ++i) y.push_back(1);
  for (int i = 0; i < 50; ++i) y.push_back(2);
  double best_nll = 1e300, best_bs = 1e300;
  std::array<int, 3> arg_nll{}, arg_bs{};
  for (int a = 0; a <= 100; ++a)
    for (int b = 0; a + b <= 100; ++b) {
      const int c = 100 - a - b;
      Matrix probs(y.size(), 3);
      for (std::size_t i = 0; i < y.size(); ++i) {
        probs(i, 0) = a / 100.0;
        probs(i, 1) = b / 100.0;
        probs(i, 2) = c / 100.0;
      }
      const double nll = gt_nll(y, probs), bs = gt_bs(y, probs);
      if (nll < best_nll) best_nll = nll, arg_nll = {a, b, c};
      if (bs < best_bs) best_bs = bs, arg_bs = {a, b, c};
    }
  CHECK(arg_nll == std::array<int, 3>{20, 30, 50});
  CHECK(arg_bs == std::array<int, 3>{20, 30, 50});
}

TEST_CASE("bayes AP predictions beat constant predictors") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    std::mt19937_64 rng(seed);
    const std::size_t n = 3000, c = 3;
    std::vector<int> y(n), z(n);
    Matrix bayes(n, 1), always_true(n, 1, 1.0), always_false(n, 1, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      auto post = testing::random_simplex(c, rng, false);
      auto conf = testing::random_confusion(c, rng, false);
      std::discrete_distribution<int> dy(post.begin(), post.end());
      y[i] = dy(rng);
      auto row = conf.entries.begin() + y[i] * static_cast<long>(c);
      std::discrete_distribution<int> dz(row, row + static_cast<long>(c));
      z[i] = dz(rng);
      bayes(i, 0) = bayes_ap(post, conf) == 1 ? 0.0 : 1.0;
    }
    const double acc = ap_metrics(y, z, bayes).acc;
    CHECK(acc >= ap_metrics(y, z, always_true).acc);
    CHECK(acc >= ap_metrics(y, z, always_false).acc);
  }
}

TEST_CASE("baseline targets and training") {
  ExperimentConfig cfg;
  auto prep = prepare_data(cfg, 6);
  TrainAnnotators ann{prep.train_columns, feature_rows(prep.features, prep.train_columns)};
  auto lb_targets = baseline_targets(Baseline::Lower, prep.data, ann.columns, 6);
  auto mv = majority_vote(prep.data.z, prep.data.num_annotators, ann.columns, 2, 6);
  CHECK(lb_targets == mv.labels);
  CHECK(baseline_targets(Baseline::Upper, prep.data, ann.columns, 6) == prep.data.y);
  CHECK_THROWS_AS(baseline_targets(Baseline::None, prep.data, ann.columns, 6), ContractError);

  TrainConfig tc;
  tc.epochs = 40;
  tc.seed = 6;
  auto ub = train_baseline(Baseline::Upper, prep.data, ann, prep.split, tc);
  auto lb = train_baseline(Baseline::Lower, prep.data, ann, prep.split, tc);
  const double ub_acc = gt_accuracy_on(ub.model, prep.data, prep.split.test);
  const double lb_acc = gt_accuracy_on(lb.model, prep.data, prep.split.test);
  CHECK(ub_acc >= lb_acc);
  auto lb2 = train_baseline(Baseline::Lower, prep.data, ann, prep.split, tc);
  CHECK(lb2.model.params().snapshot() == lb.model.params().snapshot());

  Dataset unlabeled = prep.data;
  unlabeled.y.clear();
  CHECK_THROWS_AS(baseline_targets(Baseline::Upper, unlabeled, ann.columns, 6), ConfigError);
  CHECK(parse_baseline("lb") == Baseline::Lower);
  CHECK_THROWS_AS(parse_baseline("mid"), ConfigError);
}

TEST_CASE("lower baseline collapses under many random guessers") {
  ExperimentConfig cfg;
  cfg.source = "letter-style";
  cfg.size = 3000;
  cfg.annotator_set = "random-correlated";
  auto prep = prepare_data(cfg, 2);
  TrainAnnotators ann{prep.train_columns, feature_rows(prep.features, prep.train_columns)};
  TrainConfig tc;
  tc.epochs = 5;
  auto lb = train_baseline(Baseline::Lower, prep.data, ann, prep.split, tc);
  CHECK(gt_accuracy_on(lb.model, prep.data, prep.split.test) < 0.15);
}

TEST_CASE("evaluate") {
  ExperimentConfig cfg;
  auto prep = prepare_data(cfg, 7);
  TrainAnnotators ann{prep.train_columns, feature_rows(prep.features, prep.train_columns)};
  TrainConfig tc;
  tc.epochs = 10;
  auto run = train(prep.data, ann, prep.split, tc);
  auto report = evaluate(run.model, prep.data, ann.features, ann.columns, prep.split.test);
  CHECK(report.has_gt());
  CHECK(report.has_ap());
  CHECK(report.instances == prep.split.test.size());
  // Potential annotations: every test pair is scored.
  CHECK(report.annotations == prep.split.test.size() * ann.columns.size());
  for (const auto& [name, v] : report.fields()) {
    if (name == "gt_nll" || name == "ap_nll") continue;
    CHECK(v >= 0.0);
    CHECK(v <= (name == "gt_bs" ? 2.0 : 1.0));
  }
  auto gt_only = evaluate(run.model, prep.data, Matrix(0, ann.features.cols), {}, prep.split.test);
  CHECK(gt_only.has_gt());
  CHECK_FALSE(gt_only.has_ap());
  CHECK(gt_only.gt_acc == report.gt_acc);

  Dataset unlabeled = prep.data;
  unlabeled.y.clear();
  auto none = evaluate(run.model, unlabeled, ann.features, ann.columns, prep.split.test);
  CHECK_FALSE(none.has_gt());
  CHECK_FALSE(none.has_ap());

  Matrix wrong(ann.features.rows, ann.features.cols + 1);
  CHECK_THROWS_AS(evaluate(run.model, prep.data, wrong, ann.columns, prep.split.test), ShapeError);
}

TEST_CASE("descriptive annotation statistics") {
  Dataset d;
  d.x = Matrix(3, 1);
  d.y = {0, 1, 1};
  d.num_annotators = 2;
  d.num_classes = 2;
  d.z = {0, 1, 1, kMissing, 0, 0};
  std::vector<std::size_t> cols{0, 1};
  CHECK(annotation_accuracy(d, cols) == doctest::Approx(2.0 / 5.0));
  // Row 1 has a single vote (correct), row 2 a wrong unanimous vote; row 0 ties.
  const double mr = majority_vote_accuracy(d, cols, 3);
  CHECK((mr == doctest::Approx(1.0 / 3.0) || mr == doctest::Approx(2.0 / 3.0)));
}
