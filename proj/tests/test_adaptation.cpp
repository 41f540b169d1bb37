#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "fjs/adaptation.hpp"
#include "fjs/importance.hpp"
#include "fjs/regressor.hpp"
#include "fjs/rng.hpp"
#include "fjs/toy.hpp"

using namespace fjs;
using namespace fjs::adapt;

namespace {

bool near(double a, double b, double tol = 1e-12) {
  return std::abs(a - b) <= tol;
}

model::GaussianRegressor zeroed_regressor() {
  Rng rng(1);
  model::GaussianRegressor m = model::make_default_regressor(rng);
  std::fill(m.encoder_params.begin(), m.encoder_params.end(), 0.0);
  std::fill(m.head_params.begin(), m.head_params.end(), 0.0);
  return m;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("method names round trip") {
  REQUIRE(all_methods().size() == 7);
  for (Method m : all_methods()) {
    CHECK(method_from_name(method_name(m)) == m);
  }
  CHECK(method_name(Method::source_only) == "source_only");
  CHECK(method_name(Method::jiada) == "jiada");
  CHECK_THROWS(method_from_name("gradient_descent_into_madness"));
}

TEST_CASE("zeroed predictor is the standard normal") {
  model::GaussianRegressor m = zeroed_regressor();
  nets::GaussianPrediction p = m.predict(0.7);
  CHECK(near(p.mu, 0.0));
  CHECK(near(p.sigma, 1.0));

  // Single points: closed-form Gaussian scores.
  toy::Dataset one;
  one.samples = {{0.3, 0.0}};
  CHECK(near(evaluate_nll(m, one), 0.9189385332046727));
  one.samples = {{0.3, 1.0}};
  CHECK(near(evaluate_nll(m, one), 1.4189385332046727));

  // Against the hexagon target the constant predictor scores the entropy
  // of the marginal: 0.5 log(2 pi) + E[y^2] / 2 with E[y^2] = 5/18.
  toy::Dataset big = toy::sample_target({}, 50000, 123);
  CHECK(evaluate_nll(m, big) == doctest::Approx(1.0578274220935615).epsilon(0.005));
}

TEST_CASE("plain training is deterministic and learns the slice structure") {
  toy::Dataset tgt = toy::sample_target({}, 600, 7);
  model::FitConfig cfg;
  cfg.epochs = 120;
  TrainedPredictor a = train_plain(tgt, cfg, 99);
  TrainedPredictor b = train_plain(tgt, cfg, 99);
  CHECK(a.model.encoder_params == b.model.encoder_params);
  CHECK(a.model.head_params == b.model.head_params);
  CHECK(a.method == "target_only");
  CHECK(a.seed == 99);

  // Beats the constant predictor on held-out target data.
  toy::Dataset eval = toy::sample_target({}, 2000, 8);
  CHECK(evaluate_nll(a.model, eval) < evaluate_nll(zeroed_regressor(), eval));

  TrainedPredictor src = train_plain(toy::sample_source({}, {}, 9), cfg, 99);
  CHECK(src.method == "source_only");
}

TEST_CASE("zero adversarial coefficient reduces to weighted plain training") {
  toy::Dataset src = toy::sample_source({}, {}, 11);
  toy::Dataset tgt = toy::sample_target({}, 400, 12);
  model::FitConfig cfg;
  cfg.epochs = 25;
  std::vector<double> w(src.samples.size(), 1.0);
  for (size_t i = 0; i < w.size(); ++i) w[i] = (i % 3 == 0) ? 1.5 : 0.8;

  TrainedPredictor adv =
      train_adversarial(src, tgt, w, AdvConfig{0.0, 0.2}, cfg, 31);
  TrainedPredictor plain = train_plain(src, cfg, 31, nullptr);
  // Weighted comparison needs the same weights on the plain side; re-run
  // through the adversarial entry with an empty discriminator influence is
  // the contract, so compare against itself under unit weights instead.
  TrainedPredictor adv_unit = train_adversarial(
      src, tgt, std::vector<double>(src.samples.size(), 1.0),
      AdvConfig{0.0, 0.2}, cfg, 31);
  CHECK(adv_unit.model.encoder_params == plain.model.encoder_params);
  CHECK(adv_unit.model.head_params == plain.model.head_params);
  // Non-unit weights move the optimum.
  CHECK(adv.model.head_params != plain.model.head_params);
}

TEST_CASE("adversarial coefficient ramps over the warmup") {
  toy::Dataset src = toy::sample_source({}, {}, 13);
  toy::Dataset tgt = toy::sample_target({}, 300, 14);
  model::FitConfig cfg;
  cfg.epochs = 20;
  std::vector<double> lambdas;
  train_adversarial(src, tgt, {}, AdvConfig{0.7, 0.25}, cfg, 15,
                    [&](long, double, double, double lam) {
                      lambdas.push_back(lam);
                    });
  REQUIRE(lambdas.size() > 10);
  CHECK(lambdas.front() < 0.7);
  CHECK(near(lambdas.back(), 0.7, 1e-12));
  bool monotone = true;
  for (size_t i = 1; i < lambdas.size(); ++i)
    monotone = monotone && lambdas[i] >= lambdas[i - 1] - 1e-12;
  CHECK(monotone);
  // After the warmup the coefficient sits exactly at its maximum.
  const size_t warm = static_cast<size_t>(0.25 * lambdas.size()) + 1;
  for (size_t i = warm; i < lambdas.size(); ++i)
    CHECK(near(lambdas[i], 0.7, 1e-12));
}

TEST_CASE("domain classifier weights on matched marginals are degenerate") {
  // Identical covariates on both sides: the optimal classifier is constant,
  // so the odds carry no signal and the degeneracy warning fires.
  toy::Dataset a = toy::sample_target({}, 500, 21);
  toy::Dataset b = a;
  a.domain = toy::Domain::source;
  b.domain = toy::Domain::target;
  model::FitConfig cfg;
  cfg.epochs = 200;
  SsbcResult r = ssbc_weights(a, b, cfg, 23);
  REQUIRE(r.weights.size() == a.samples.size());
  CHECK(r.degenerate);
  for (double w : r.weights) {
    CHECK(w >= importance::kWeightClipLo);
    CHECK(w <= importance::kWeightClipHi);
    CHECK(w == doctest::Approx(1.0).epsilon(0.25));
  }
}

TEST_CASE("shifted marginals give informative domain classifier weights") {
  toy::Dataset src = toy::sample_source({}, {}, 31);
  toy::Dataset tgt = toy::sample_target({}, 1000, 32);
  model::FitConfig cfg;
  cfg.epochs = 120;
  SsbcResult r = ssbc_weights(src, tgt, cfg, 33);
  CHECK_FALSE(r.degenerate);
  // Source is rich-heavy (x >= 0), target splits evenly: negative-x samples
  // should weigh more on average.
  double neg = 0.0, pos = 0.0;
  long nneg = 0, npos = 0;
  for (size_t i = 0; i < src.samples.size(); ++i) {
    if (src.samples[i].x < 0.0) {
      neg += r.weights[i];
      ++nneg;
    } else {
      pos += r.weights[i];
      ++npos;
    }
  }
  CHECK(neg / nneg > pos / npos);
}

TEST_CASE("label-shift calibration direction and normalization") {
  toy::Dataset src = toy::sample_source({}, {}, 41);
  toy::Dataset tgt = toy::sample_target({}, 1000, 42);
  model::FitConfig cfg;
  BbscResult r = bbsc_weights(src, tgt, 2, cfg, 43);
  REQUIRE(r.bin_importance.size() == 2);
  REQUIRE(r.weights.size() == src.samples.size());
  CHECK_FALSE(r.singular_fallback);
  // Bin 0 holds y < 0: under-represented in the source, so its importance
  // exceeds one; the closed-form population ratios are 1.4875 and 0.35.
  CHECK(r.bin_importance[0] > 1.2);
  CHECK(r.bin_importance[0] < 1.7);
  CHECK(r.bin_importance[1] > 0.2);
  CHECK(r.bin_importance[1] < 0.55);
  double mean = 0.0;
  for (double w : r.weights) mean += w;
  mean /= static_cast<double>(r.weights.size());
  CHECK(near(mean, 1.0, 1e-9));
}

TEST_CASE("checkpoints round trip exactly") {
  toy::Dataset tgt = toy::sample_target({}, 200, 51);
  model::FitConfig cfg;
  cfg.epochs = 10;
  TrainedPredictor p = train_plain(tgt, cfg, 52);
  const std::string path = temp_path("fjs_ckpt.json");
  save_checkpoint(p, path);
  TrainedPredictor q = load_checkpoint(path);
  CHECK(q.method == p.method);
  CHECK(q.seed == p.seed);
  CHECK(q.model.encoder_spec == p.model.encoder_spec);
  CHECK(q.model.encoder_params == p.model.encoder_params);
  CHECK(q.model.head_params == p.model.head_params);
  for (double x : {-0.8, -0.2, 0.0, 0.3, 0.9}) {
    nets::GaussianPrediction a = predict(p, x);
    nets::GaussianPrediction b = predict(q, x);
    CHECK(near(a.mu, b.mu));
    CHECK(near(a.sigma, b.sigma));
  }
  std::remove(path.c_str());
  CHECK_THROWS_AS(load_checkpoint("/nonexistent/dir/ckpt.json"), toy::IoError);
  CHECK_THROWS_AS(save_checkpoint(p, "/nonexistent/dir/ckpt.json"), toy::IoError);
}
