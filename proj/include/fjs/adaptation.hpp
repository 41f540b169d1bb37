#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fjs/regressor.hpp"
#include "fjs/toy.hpp"

namespace fjs::adapt {

enum class Method { source_only, target_only, ssbc, bbsc, dann, iwdan, jiada };

std::string method_name(Method m);
Method method_from_name(const std::string& s);
const std::vector<Method>& all_methods();

struct TrainedPredictor {
  model::GaussianRegressor model;
  std::string method;
  uint64_t seed = 0;
};

// Unweighted Gaussian NLL minimization on one labeled dataset.
TrainedPredictor train_plain(const toy::Dataset& data, const model::FitConfig& cfg,
                             uint64_t seed, const model::MetricsSink& sink = nullptr);

// Domain-classifier importance on x alone: odds(x) * n_src / n_tgt from a
// source-vs-target classifier, clipped to the shared weight range. Sets
// `degenerate` (and warns) when the weights are nearly constant, which is
// what happens when the covariate marginals barely differ.
struct SsbcResult {
  std::vector<double> weights;  // one per source sample
  bool degenerate = false;
};

SsbcResult ssbc_weights(const toy::Dataset& source, const toy::Dataset& target,
                        const model::FitConfig& cfg, uint64_t seed);

// Label-shift calibration on discretized y: a B-way bin classifier's hard
// confusion matrix C (predicted x true, source) and target prediction
// histogram mu solve C r = mu; negatives are clipped and r is rescaled so
// the source mean of the per-sample weights is one. A singular system
// falls back to a ridge least-squares solve and sets `singular_fallback`.
struct BbscResult {
  std::vector<double> weights;         // one per source sample
  std::vector<double> bin_importance;  // r, one per bin
  bool singular_fallback = false;
};

BbscResult bbsc_weights(const toy::Dataset& source, const toy::Dataset& target,
                        int bins, const model::FitConfig& cfg, uint64_t seed);

struct AdvConfig {
  double lambda = 1.0;       // feature-confusion coefficient
  double warmup_frac = 0.2;  // fraction of steps to ramp lambda from zero
};

// Three-player training: the discriminator learns to tell weighted source
// features from target features, the encoder is pushed toward features
// the discriminator cannot separate (coefficient lambda), and the head
// minimizes the weighted prediction loss. Source-side terms carry the
// per-sample weights; the target-side discriminator term is never
// weighted. lambda == 0 reduces exactly to weighted plain training.
TrainedPredictor train_adversarial(const toy::Dataset& source,
                                   const toy::Dataset& target,
                                   std::span<const double> weights,
                                   const AdvConfig& adv,
                                   const model::FitConfig& cfg, uint64_t seed,
                                   const model::MetricsSink& sink = nullptr);

nets::GaussianPrediction predict(const TrainedPredictor& p, double x);

// Mean Gaussian NLL of the model's predictions over a labeled set.
double evaluate_nll(const model::GaussianRegressor& model,
                    const toy::Dataset& data);

void save_checkpoint(const TrainedPredictor& p, const std::string& path);
TrainedPredictor load_checkpoint(const std::string& path);

}  // namespace fjs::adapt
