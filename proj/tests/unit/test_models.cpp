#include <cmath>
#include <random>

#include "doctest.h"
#include "madl/error.hpp"
#include "madl/models.hpp"

using namespace madl;
namespace dn = madl::diffnet;

namespace {

std::vector<double> vals(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

void zero_out(Tensor t) {
  for (double& v : t.mutable_values()) v = 0.0;
}

Tensor random_rows(std::size_t rows, std::size_t cols, std::mt19937_64& rng, double sd = 1.0) {
  std::normal_distribution<double> nd(0.0, sd);
  std::vector<double> v(rows * cols);
  for (auto& x : v) x = nd(rng);
  return Tensor::constant({rows, cols}, v);
}

}  // namespace

TEST_CASE("gt_forward gives probability vectors") {
  std::mt19937_64 rng(1);
  dn::ParameterSet ps;
  GTModel gt(ps, 4, 3, 128, rng);
  CHECK(gt.hidden_dim() == 128);
  std::vector<double> x{0.3, -1.2, 5.0, 2.0};
  auto p = gt.gt_forward(x);
  REQUIRE(p.size() == 3);
  CHECK(std::abs(p[0] + p[1] + p[2] - 1.0) < 1e-9);
  CHECK_THROWS_AS(gt.gt_forward(std::vector<double>{1.0, 2.0}), ShapeError);
}

TEST_CASE("zero-weight GT model is uniform") {
  std::mt19937_64 rng(2);
  dn::ParameterSet ps;
  GTModel gt(ps, 2, 4, 8, rng);
  for (const auto& p : ps.items()) zero_out(p.tensor);
  auto p = gt.gt_forward(std::vector<double>{3.0, -7.0});
  for (double v : p) CHECK(v == doctest::Approx(0.25));
}

TEST_CASE("gt_predict examples") {
  CHECK(gt_predict(std::vector<double>{0.8, 0.2}) == 0);
  CHECK(gt_predict(std::vector<double>{0.5, 0.5}) == 0);
  CHECK(gt_predict(std::vector<double>{0.1, 0.7, 0.2}) == 1);
}

TEST_CASE("gt_predict is invariant under monotone transforms") {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> ud(0.0, 1.0);
  for (int t = 0; t < 200; ++t) {
    std::vector<double> p(5), q(5), r(5);
    for (std::size_t i = 0; i < 5; ++i) {
      p[i] = ud(rng);
      q[i] = std::log(p[i]);
      r[i] = 3.0 * p[i] * p[i] * p[i] + 2.0;
    }
    CHECK(gt_predict(p) == gt_predict(q));
    CHECK(gt_predict(p) == gt_predict(r));
  }
}

TEST_CASE("annotator embeddings") {
  std::mt19937_64 rng(5);
  dn::ParameterSet ps;
  APConfig cfg;
  APModel ap(ps, cfg, 3, 128, 2, rng);
  auto a = Tensor::constant({2, 3}, {0.2, 0.4, 0.6, 0.2, 0.4, 0.6});
  auto e = ap.annotator_embed(a);
  CHECK(e.cols() == 16);
  for (std::size_t j = 0; j < 16; ++j) CHECK(e.at(0, j) == e.at(1, j));
  auto z = ap.annotator_embed(Tensor::constant({1, 3}, {0, 0, 0}));
  for (double v : z.values()) CHECK(v == 0.0);
  CHECK_THROWS_AS(ap.annotator_embed(Tensor::constant({1, 2}, {0, 0})), ShapeError);
}

TEST_CASE("instance embedding input shapes") {
  std::mt19937_64 rng(6);
  SUBCASE("hidden source consumes the GT hidden width") {
    dn::ParameterSet ps;
    APModel ap(ps, APConfig{}, 4, 128, 2, rng);
    CHECK(ap.instance_input_dim() == 128);
    CHECK(ap.instance_embed(random_rows(3, 128, rng)).cols() == 16);
  }
  SUBCASE("raw source consumes D features") {
    dn::ParameterSet ps;
    APConfig cfg;
    cfg.instance_source = InstanceSource::RawFeatures;
    APModel ap(ps, cfg, 4, 7, 2, rng);
    auto x = random_rows(3, 7, rng);
    CHECK(vals(ap.instance_embed(x)) == vals(ap.instance_embed(x)));
    CHECK_THROWS_AS(ap.instance_embed(random_rows(3, 6, rng)), ShapeError);
  }
  SUBCASE("instance-independent models refuse") {
    dn::ParameterSet ps;
    APConfig cfg;
    cfg.instance_dependent = false;
    APModel ap(ps, cfg, 4, 0, 2, rng);
    CHECK_THROWS_AS(ap.instance_embed(random_rows(1, 4, rng)), ContractError);
  }
}

TEST_CASE("initial confusion matrix is close to the prior") {
  std::mt19937_64 rng(7);
  dn::ParameterSet ps;
  APModel ap(ps, APConfig{}, 3, 128, 2, rng);
  auto emb = ap.annotator_embed(random_rows(4, 3, rng));
  auto inst = ap.instance_embed(random_rows(4, 128, rng, 0.2));
  auto conf = ap.combine(emb, inst);
  for (std::size_t r = 0; r < 4; ++r) {
    CHECK(std::abs(conf.at(r, 0) - 0.8) < 1e-3);
    CHECK(std::abs(conf.at(r, 1) - 0.2) < 1e-3);
    CHECK(std::abs(conf.at(r, 2) - 0.2) < 1e-3);
    CHECK(std::abs(conf.at(r, 3) - 0.8) < 1e-3);
  }
}

TEST_CASE("residual block adds only the annotator embedding") {
  std::mt19937_64 rng_a(8), rng_b(8);
  dn::ParameterSet pa, pb;
  APConfig with, without;
  without.residual = false;
  APModel a(pa, with, 3, 5, 3, rng_a);
  APModel b(pb, without, 3, 5, 3, rng_b);
  std::mt19937_64 rng(9);
  auto feats = random_rows(2, 3, rng);
  auto x = random_rows(2, 5, rng);
  auto ea = a.annotator_embed(feats);
  auto raw_a = a.head_raw(ea, a.instance_embed(x));
  auto raw_b = b.head_raw(b.annotator_embed(feats), b.instance_embed(x));
  // head(ã + h) - head(h) = ã W
  auto diff = dn::matmul(ea, pa.find("ap.head.weight")->tensor);
  for (std::size_t i = 0; i < raw_a.size(); ++i) {
    CHECK(raw_a.values()[i] - raw_b.values()[i] == doctest::Approx(diff.values()[i]).epsilon(1e-9));
  }
}

TEST_CASE("every variant produces row-stochastic matrices") {
  std::mt19937_64 rng(10);
  for (auto dep : {ClassDependency::Independent, ClassDependency::Partial, ClassDependency::Full}) {
    for (bool inst : {true, false}) {
      dn::ParameterSet ps;
      APConfig cfg;
      cfg.class_dependency = dep;
      cfg.instance_dependent = inst;
      APModel ap(ps, cfg, 4, 128, 5, rng);
      // Push parameters well away from their initialization.
      std::normal_distribution<double> nd(0.0, 2.0);
      for (const auto& p : ps.items())
        for (double& v : Tensor(p.tensor).mutable_values()) v += nd(rng);
      auto emb = ap.annotator_embed(random_rows(6, 4, rng));
      std::optional<Tensor> ie;
      if (inst) ie = ap.instance_embed(random_rows(6, 128, rng));
      auto conf = ap.combine(emb, ie);
      for (std::size_t r = 0; r < 6; ++r) {
        ConfusionMatrix cm{5, {conf.values().begin() + r * 25, conf.values().begin() + (r + 1) * 25}};
        CHECK(cm.row_stochastic(1e-6));
      }
    }
  }
}

TEST_CASE("instance-independent combine is constant in x") {
  std::mt19937_64 rng(11);
  dn::ParameterSet ps;
  APConfig cfg;
  cfg.instance_dependent = false;
  APModel ap(ps, cfg, 3, 0, 3, rng);
  auto feats = random_rows(1, 3, rng);
  auto first = vals(ap.combine(ap.annotator_embed(feats), std::nullopt));
  auto second = vals(ap.combine(ap.annotator_embed(feats), std::nullopt));
  CHECK(first == second);
  CHECK_THROWS_AS(ap.combine(ap.annotator_embed(feats), random_rows(1, 16, rng)), ContractError);
}

TEST_CASE("expand_confusion examples") {
  auto logit = [](double s) { return std::log(s / (1.0 - s)); };
  SUBCASE("class independent") {
    auto cm = expand_confusion(ClassDependency::Independent, std::vector<double>{logit(0.8)}, 3);
    for (std::size_t r = 0; r < 3; ++r)
      for (std::size_t c = 0; c < 3; ++c) CHECK(cm(r, c) == doctest::Approx(r == c ? 0.8 : 0.1));
  }
  SUBCASE("partially class dependent") {
    auto cm = expand_confusion(ClassDependency::Partial, std::vector<double>{logit(0.6), logit(0.8), 800.0}, 3);
    std::vector<double> expect{0.6, 0.2, 0.2, 0.1, 0.8, 0.1, 0.0, 0.0, 1.0};
    for (std::size_t i = 0; i < 9; ++i) CHECK(cm.entries[i] == doctest::Approx(expect[i]));
  }
  SUBCASE("full with equal raw values") {
    auto cm = expand_confusion(ClassDependency::Full, std::vector<double>(16, 0.7), 4);
    for (double v : cm.entries) CHECK(v == doctest::Approx(0.25));
  }
  SUBCASE("wrong arity") {
    CHECK_THROWS_AS(expand_confusion(ClassDependency::Full, std::vector<double>(3, 0.0), 2), ShapeError);
    CHECK_THROWS_AS(expand_confusion(ClassDependency::Partial, std::vector<double>(1, 0.0), 2), ShapeError);
  }
}

TEST_CASE("ap_correctness examples") {
  std::vector<double> p{0.8, 0.2};
  CHECK(ap_correctness(p, ConfusionMatrix{2, {1, 0, 0, 1}}) == doctest::Approx(1.0));
  CHECK(ap_correctness(p, ConfusionMatrix{2, {0.5, 0.5, 0.5, 0.5}}) == doctest::Approx(0.5));
  CHECK(ap_correctness(p, ConfusionMatrix{2, {0, 1, 1, 0}}) == 0.0);
}

TEST_CASE("ap_predict examples") {
  CHECK(ap_predict(1.0) == 0);
  CHECK(ap_predict(0.49) == 1);
  CHECK(ap_predict(0.5) == 0);
}

TEST_CASE("init_output_bias examples") {
  auto b = init_output_bias(ClassDependency::Full, 0.8, 2);
  REQUIRE(b.size() == 4);
  CHECK(b[0] == doctest::Approx(1.3862943611).epsilon(1e-10));
  CHECK(b[3] == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  CHECK(b[1] == 0.0);
  CHECK(b[2] == 0.0);
  for (double v : init_output_bias(ClassDependency::Full, 0.5, 2)) CHECK(v == 0.0);
  auto b10 = init_output_bias(ClassDependency::Full, 0.8, 10);
  CHECK(b10[0] == doctest::Approx(3.5835189385).epsilon(1e-10));
  CHECK(b10[11] == doctest::Approx(std::log(36.0)).epsilon(1e-12));
  CHECK(b10[1] == 0.0);
  auto bi = init_output_bias(ClassDependency::Independent, 0.8, 5);
  REQUIRE(bi.size() == 1);
  CHECK(bi[0] == doctest::Approx(std::log(4.0)));
  CHECK(init_output_bias(ClassDependency::Partial, 0.9, 5).size() == 5);
  CHECK_THROWS_AS(init_output_bias(ClassDependency::Full, 1.0, 2), ConfigError);
  CHECK_THROWS_AS(init_output_bias(ClassDependency::Full, 0.0, 2), ConfigError);
}

TEST_CASE("prior confusion keeps annotation probabilities near class probabilities") {
  std::mt19937_64 rng(12);
  std::gamma_distribution<double> gd(1.0, 1.0);
  for (std::size_t c : {2u, 3u, 7u}) {
    for (double eta : {0.5, 0.8, 0.95}) {
      auto cm = expand_confusion(ClassDependency::Full, init_output_bias(ClassDependency::Full, eta, c), c);
      for (int t = 0; t < 20; ++t) {
        std::vector<double> p(c);
        double s = 0.0;
        for (auto& v : p) s += (v = gd(rng));
        for (auto& v : p) v /= s;
        double tv = 0.0;
        for (std::size_t z = 0; z < c; ++z) {
          double q = 0.0;
          for (std::size_t k = 0; k < c; ++k) q += p[k] * cm(k, z);
          tv += std::abs(q - p[z]);
        }
        tv *= 0.5;
        CHECK(tv <= (1.0 - eta) + 1e-12);
      }
      std::vector<double> onehot(c, 0.0);
      onehot[0] = 1.0;
      double tv = 0.0;
      for (std::size_t z = 0; z < c; ++z) tv += std::abs(cm(0, z) - onehot[z]);
      CHECK(0.5 * tv == doctest::Approx(1.0 - eta).epsilon(1e-12));
    }
  }
}

TEST_CASE("AP config validation") {
  APConfig cfg;
  cfg.eta = 1.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.eta = 0.8;
  cfg.annotator_embed_size = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  CHECK(parse_class_dependency("p") == ClassDependency::Partial);
  CHECK_THROWS_AS(parse_class_dependency("q"), ConfigError);
}
