#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include "json.hpp"

#include "fjs/nets.hpp"
#include "fjs/toy.hpp"

namespace fjs::model {

struct NonFiniteLoss : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Called once per optimizer step: (step, prediction loss, discriminator
// loss, adversarial coefficient). Non-adversarial trainers report zeros
// for the last two.
using MetricsSink = std::function<void(long, double, double, double)>;

struct FitConfig {
  long epochs = 240;
  int batch = 128;
  double lr = 1e-3;
  nets::OptMethod method = nets::OptMethod::adam;
};

// Predictor used by every adaptation method: a shared feature encoder
// followed by a Gaussian head (mu, log sigma). Keeping the same shape
// everywhere lets the adversarial trainer with a zero coefficient reduce
// exactly to plain training.
struct GaussianRegressor {
  nets::MlpSpec encoder_spec;
  std::vector<double> encoder_params;
  nets::MlpSpec head_spec;
  std::vector<double> head_params;

  nets::GaussianPrediction predict(double x) const;
  std::vector<double> features(double x) const;
};

// Encoder 1 -> 64 -> 16, head 16 -> 64 -> 64 -> 2, tanh; parameters drawn
// from the given stream in a pinned order.
GaussianRegressor make_default_regressor(Rng& rng);

// Minimizes the weighted Gaussian negative log likelihood
//   (1/B) sum_i weight_i * nll(f(x_i), y_i)
// over minibatches drawn with replacement. An empty weight span means
// unit weights. Throws NonFiniteLoss when the loss leaves the reals.
GaussianRegressor fit_gaussian_regressor(std::span<const toy::LabeledSample> data,
                                         std::span<const double> weights,
                                         const FitConfig& cfg, uint64_t seed,
                                         const MetricsSink& sink = nullptr);

nlohmann::json mlp_spec_to_json(const nets::MlpSpec& spec);
nets::MlpSpec mlp_spec_from_json(const nlohmann::json& j);
nlohmann::json regressor_to_json(const GaussianRegressor& model);
GaussianRegressor regressor_from_json(const nlohmann::json& j);

nlohmann::json fit_config_to_json(const FitConfig& cfg);
FitConfig fit_config_from_json(const nlohmann::json& j);

}  // namespace fjs::model
