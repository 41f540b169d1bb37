#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "fjs/importance.hpp"
#include "fjs/regressor.hpp"
#include "fjs/rng.hpp"
#include "fjs/theory.hpp"
#include "fjs/toy.hpp"

using namespace fjs;
using namespace fjs::importance;

namespace {

bool near(double a, double b, double tol = 1e-12) {
  return std::abs(a - b) <= tol;
}

UModel zeroed_u(int clusters) {
  Rng rng(1);
  UModel u = make_u_model(clusters, rng);
  std::fill(u.log_scores.begin(), u.log_scores.end(), 0.0);
  return u;
}

VModel zeroed_v() {
  Rng rng(2);
  VModel v = make_v_model(rng);
  std::fill(v.params.begin(), v.params.end(), 0.0);
  return v;
}

// Classifier that splits sharply at x = 0: cluster 0 for x > 0, cluster 1
// for x < 0, with per-cluster scores (level_pos, level_neg).
UModel step_u(double level_pos, double level_neg) {
  Rng rng(3);
  UModel u = make_u_model(2, rng);
  REQUIRE(u.classifier_spec.hidden == std::vector<int>{32});
  std::fill(u.classifier_params.begin(), u.classifier_params.end(), 0.0);
  u.classifier_params[0] = 50.0;    // first hidden unit reads x steeply
  u.classifier_params[64] = 20.0;   // logit 0 follows tanh(50 x)
  u.classifier_params[96] = -20.0;  // logit 1 opposes it
  u.log_scores = {std::log(level_pos), std::log(level_neg)};
  return u;
}

// Label factor close to a step: level_pos for y > 0, level_neg for y < 0.
VModel step_v(double level_pos, double level_neg) {
  Rng rng(4);
  VModel v = make_v_model(rng);
  REQUIRE(v.spec.hidden == std::vector<int>{32});
  std::fill(v.params.begin(), v.params.end(), 0.0);
  v.params[0] = 50.0;  // first hidden unit reads y steeply
  v.params[64] = 0.5 * std::log(level_pos / level_neg);
  v.output_bias() = 0.5 * std::log(level_pos * level_neg);
  return v;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("neutral models give unit factors and twice log two") {
  UModel u = zeroed_u(2);
  VModel v = zeroed_v();
  for (double x : {-0.9, -0.1, 0.0, 0.4, 1.0}) {
    CHECK(near(u.value(x), 1.0));
    CHECK(near(v.value(x), 1.0));
    auto probs = u.cluster_probs(x);
    double total = 0.0;
    for (double p : probs) total += p;
    CHECK(near(total, 1.0));
  }
  toy::Dataset src = toy::sample_source({}, {}, 9);
  toy::Dataset tgt = toy::sample_target({}, 300, 10);
  CHECK(near(l_sup_value(u, v, src.samples, tgt.samples),
             2.0 * std::log(2.0)));
}

TEST_CASE("weights are clipped to the configured range") {
  VModel v = zeroed_v();
  UModel hi = zeroed_u(2);
  std::fill(hi.log_scores.begin(), hi.log_scores.end(), 20.0);
  CHECK(weight(hi, v, 0.3, 0.1) == kWeightClipHi);
  UModel lo = zeroed_u(2);
  std::fill(lo.log_scores.begin(), lo.log_scores.end(), -20.0);
  CHECK(weight(lo, v, 0.3, 0.1) == kWeightClipLo);
  UModel mid = step_u(0.5, 2.0);
  CHECK(near(weight(mid, v, 0.5, 0.0), 0.5, 1e-6));
}

TEST_CASE("gauge motion leaves objectives and weights unchanged") {
  toy::Dataset src = toy::sample_source({}, {}, 21);
  toy::Dataset tgt = toy::sample_target({}, 400, 22);
  Rng rng(23);
  UModel u = make_u_model(2, rng);
  VModel v = make_v_model(rng);
  u.log_scores = {0.3, -0.6};

  const double sup_before = l_sup_value(u, v, src.samples, tgt.samples);
  std::vector<double> w_before;
  for (const auto& s : src.samples) w_before.push_back(weight(u, v, s.x, s.y));

  // The unlabeled objective needs a conditional model and pinned draws.
  model::FitConfig quick;
  quick.epochs = 8;
  model::GaussianRegressor cond =
      model::fit_gaussian_regressor(src.samples, {}, quick, 77);
  std::vector<double> sx, tx;
  for (const auto& s : src.samples) sx.push_back(s.x);
  for (const auto& s : tgt.samples) tx.push_back(s.x);
  const int m = 8;
  std::vector<double> eps((sx.size() + tx.size()) * m);
  Rng erng(31);
  for (double& e : eps) e = erng.normal();
  const double unsup_before = l_unsup_value(u, v, cond, m, sx, tx, eps);

  scale_factors(u, v, 2.0);
  CHECK(near(l_sup_value(u, v, src.samples, tgt.samples), sup_before, 1e-12));
  CHECK(near(l_unsup_value(u, v, cond, m, sx, tx, eps), unsup_before, 1e-12));
  for (size_t i = 0; i < src.samples.size(); ++i)
    CHECK(near(weight(u, v, src.samples[i].x, src.samples[i].y), w_before[i],
               1e-9));
}

TEST_CASE("normalization fixes the source mean product at one") {
  toy::Dataset src = toy::sample_source({}, {}, 33);
  Rng rng(34);
  UModel u = make_u_model(2, rng);
  VModel v = make_v_model(rng);
  u.log_scores = {1.1, -0.4};
  v.output_bias() += 0.7;
  const double mean = normalize_factors(u, v, src.samples);
  CHECK(mean > 0.0);
  double after = 0.0;
  for (const auto& s : src.samples) after += u.value(s.x) * v.value(s.y);
  after /= static_cast<double>(src.samples.size());
  CHECK(near(after, 1.0, 1e-9));
}

TEST_CASE("constant label factor reduces the unlabeled objective") {
  toy::Dataset src = toy::sample_source({}, {}, 41);
  toy::Dataset tgt = toy::sample_target({}, 300, 42);
  UModel u = step_u(0.6, 1.8);
  VModel v = zeroed_v();
  model::FitConfig quick;
  quick.epochs = 8;
  model::GaussianRegressor cond =
      model::fit_gaussian_regressor(src.samples, {}, quick, 55);
  std::vector<double> sx, tx;
  for (const auto& s : src.samples) sx.push_back(s.x);
  for (const auto& s : tgt.samples) tx.push_back(s.x);
  const int m = 4;
  std::vector<double> eps((sx.size() + tx.size()) * m);
  Rng erng(56);
  for (double& e : eps) e = erng.normal();

  // With V identically one the conditional expectation is one for every
  // draw, so the objective only sees U.
  double direct = 0.0;
  for (double x : sx) direct += std::log1p(u.value(x)) / sx.size();
  for (double x : tx) direct += std::log1p(1.0 / u.value(x)) / tx.size();
  CHECK(near(l_unsup_value(u, v, cond, m, sx, tx, eps), direct, 1e-12));
}

TEST_CASE("finite-table objectives against the closed form") {
  toy::HexagonSpec hex;
  toy::SourceSpec spec;
  auto [s, t] = toy::quadrant_tables(hex, spec);
  const std::vector<double> u_true{1.0, 4.0};
  const std::vector<double> v_true{0.875, 0.4375};

  SUBCASE("labeled objective at the true factors attains the optimum") {
    theory::RatioObjectiveOptimum opt =
        theory::ratio_objective_optimum(s.p, t.p);
    CHECK(near(discrete_l_sup(s, t, u_true, v_true), opt.value, 1e-12));
    CHECK(near(opt.value,
               2.0 * (std::log(2.0) -
                      theory::jensen_shannon_divergence(s.p, t.p)),
               1e-12));
    CHECK(near(discrete_l_sup(s, t, {1.0, 1.0}, {1.0, 1.0}),
               2.0 * std::log(2.0)));
  }

  SUBCASE("gradient fit reaches the labeled optimum") {
    DiscreteFitResult fit = fit_discrete_sup(s, t);
    theory::RatioObjectiveOptimum opt =
        theory::ratio_objective_optimum(s.p, t.p);
    CHECK(near(fit.objective, opt.value, 1e-6));
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j)
        CHECK(near(fit.u[i] * fit.v[j], u_true[i] * v_true[j], 1e-3));
    DiscreteFitResult again = fit_discrete_sup(s, t);
    CHECK(fit.u == again.u);
    CHECK(fit.v == again.v);
  }

  SUBCASE("unlabeled objective only pins the covariate marginal ratio") {
    auto sx = s.x_marginal();
    auto tx = t.x_marginal();
    theory::RatioObjectiveOptimum opt = theory::ratio_objective_optimum(sx, tx);

    // True factors and the collapsed solution (marginal ratio as U, constant
    // V) score identically: the smoothed objective cannot tell them apart.
    std::vector<double> u_ratio{tx[0] / sx[0], tx[1] / sx[1]};
    const double at_true = discrete_l_unsup(s, t, u_true, v_true);
    const double at_collapse = discrete_l_unsup(s, t, u_ratio, {1.0, 1.0});
    CHECK(near(at_true, at_collapse, 1e-9));
    CHECK(near(at_true, opt.value, 1e-12));

    DiscreteFitResult fit = fit_discrete_unsup(s, t);
    CHECK(near(fit.objective, opt.value, 1e-6));
    // The product of U with the smoothed label factor recovers the marginal
    // ratio even though (U, V) themselves are not identified.
    for (int i = 0; i < 2; ++i) {
      double vbar = 0.0, mass = 0.0;
      for (int j = 0; j < 2; ++j) {
        vbar += s.at(i, j) * fit.v[j];
        mass += s.at(i, j);
      }
      vbar /= mass;
      CHECK(near(fit.u[i] * vbar, tx[i] / sx[i], 1e-3));
    }
  }
}

TEST_CASE("supervised fit recovers the quadrant structure") {
  toy::HexagonSpec hex;
  toy::SourceSpec spec;
  spec.quadrant_counts = {400, 400, 50, 200};
  toy::Dataset src = toy::sample_source(hex, spec, 61);
  toy::Dataset tgt = toy::sample_target(hex, 400, 62);
  JiaConfig cfg;
  cfg.epochs = 300;
  FitResult fit = fit_supervised(src, tgt, cfg, 63);
  CHECK_FALSE(fit.aborted_early);
  CHECK_FALSE(fit.has_conditional);
  CHECK(std::isfinite(fit.final_loss));
  CHECK(fit.normalizer > 0.0);
  CHECK(cluster_sign_purity(fit.u) >= 0.5);

  toy::GroundTruthFactors gt = toy::ground_truth_importance(hex, spec);
  auto q = quadrant_mean_weight(fit.u, fit.v, hex);
  for (int k = 0; k < 4; ++k) {
    const double rel = std::abs(q[k] - gt.quadrant_weight[k]) /
                       gt.quadrant_weight[k];
    CHECK(rel < 0.35);
  }
}

TEST_CASE("unsupervised fit runs both stages") {
  toy::HexagonSpec hex;
  toy::SourceSpec spec;
  spec.quadrant_counts = {200, 200, 25, 100};
  toy::Dataset src = toy::sample_source(hex, spec, 71);
  toy::Dataset tgt = toy::sample_target(hex, 200, 72);
  JiaConfig cfg;
  cfg.epochs = 60;
  cfg.conditional.epochs = 40;
  long steps = 0;
  FitResult fit = fit_unsupervised(src, tgt, cfg, 73,
                                   [&](long, double, double, double) { ++steps; });
  CHECK_FALSE(fit.aborted_early);
  CHECK(fit.has_conditional);
  CHECK(std::isfinite(fit.final_loss));
  CHECK(steps > 0);
  double mean = 0.0;
  for (const auto& s : src.samples) mean += fit.u.value(s.x) * fit.v.value(s.y);
  mean /= static_cast<double>(src.samples.size());
  CHECK(near(mean, 1.0, 1e-9));

  FitResult again = fit_unsupervised(src, tgt, cfg, 73);
  CHECK(fit.u.classifier_params == again.u.classifier_params);
  CHECK(fit.v.params == again.v.params);
}

TEST_CASE("handcrafted step factors") {
  UModel u = step_u(0.5, 2.0);
  VModel v = step_v(1.75, 0.875);
  CHECK(cluster_sign_purity(u) == 1.0);
  CHECK(near(u.value(0.5), 0.5, 1e-6));
  CHECK(near(u.value(-0.5), 2.0, 1e-6));
  CHECK(near(v.value(0.5), 1.75, 1e-6));
  CHECK(near(v.value(-0.5), 0.875, 1e-6));

  toy::HexagonSpec hex;
  toy::GroundTruthFactors gt = toy::ground_truth_importance(hex, {});
  auto q = quadrant_mean_weight(u, v, hex);
  // Lattice rows near the axes blend both levels, so the match is loose.
  for (int k = 0; k < 4; ++k)
    CHECK(std::abs(q[k] - gt.quadrant_weight[k]) / gt.quadrant_weight[k] <
          0.08);

  UModel u1 = zeroed_u(2);
  VModel v1 = zeroed_v();
  auto ones = quadrant_mean_weight(u1, v1, hex);
  for (double w : ones) CHECK(near(w, 1.0));
}

TEST_CASE("factor serialization round trips exactly") {
  Rng rng(81);
  UModel u = make_u_model(3, rng);
  VModel v = make_v_model(rng);
  u.log_scores = {0.25, -0.5, 0.125};
  auto [u2, v2] = factors_from_json(factors_to_json(u, v));
  CHECK(u2.classifier_spec == u.classifier_spec);
  CHECK(u2.classifier_params == u.classifier_params);
  CHECK(u2.log_scores == u.log_scores);
  CHECK(v2.spec == v.spec);
  CHECK(v2.params == v.params);

  JiaConfig cfg;
  cfg.clusters = 4;
  cfg.mc_samples = 12;
  cfg.epochs = 77;
  cfg.batch = 64;
  cfg.lr = 1e-4;
  cfg.conditional.epochs = 33;
  cfg.conditional.lr = 2e-3;
  JiaConfig back = jia_config_from_json(jia_config_to_json(cfg));
  CHECK(back.clusters == 4);
  CHECK(back.mc_samples == 12);
  CHECK(back.epochs == 77);
  CHECK(back.batch == 64);
  CHECK(back.lr == 1e-4);
  CHECK(back.conditional.epochs == 33);
  CHECK(back.conditional.lr == 2e-3);
}

TEST_CASE("importance grid file layout") {
  UModel u = step_u(0.5, 2.0);
  VModel v = step_v(1.75, 0.875);
  toy::HexagonSpec hex;
  toy::GroundTruthFactors gt = toy::ground_truth_importance(hex, {});
  const std::string path = temp_path("fjs_grid.csv");
  write_importance_grid(u, v, hex, &gt, path, 21, "# run=example\n");

  std::ifstream in(path);
  REQUIRE(in.good());
  std::string line;
  REQUIRE(std::getline(in, line));
  CHECK(line == "# run=example");
  REQUIRE(std::getline(in, line));
  CHECK(line == "x,y,u,v,w,w_true");
  long rows = 0;
  while (std::getline(in, line)) {
    std::istringstream ss(line);
    double vals[6];
    char comma;
    ss >> vals[0];
    for (int k = 1; k < 6; ++k) ss >> comma >> vals[k];
    REQUIRE_FALSE(ss.fail());
    CHECK(toy::contains(hex, vals[0], vals[1]));
    CHECK(near(vals[4], vals[2] * vals[3], 1e-9));
    ++rows;
  }
  // 21 x 21 lattice restricted to the hexagon (area 3 of 4 plus boundary).
  CHECK(rows > 300);
  CHECK(rows < 441);
  std::remove(path.c_str());

  write_importance_grid(u, v, hex, nullptr, path, 5);
  std::ifstream in2(path);
  REQUIRE(std::getline(in2, line));
  CHECK(line == "x,y,u,v,w");
  std::remove(path.c_str());
}
