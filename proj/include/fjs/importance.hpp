#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "fjs/regressor.hpp"
#include "fjs/theory.hpp"
#include "fjs/toy.hpp"

namespace fjs::importance {

// Sample weights fed to downstream trainers are clipped to this range.
inline constexpr double kWeightClipLo = 1e-3;
inline constexpr double kWeightClipHi = 1e3;

// Covariate factor U(x) = sum_k score_k * C_k(x) with C a softmax
// classifier over K clusters. Tying U to cluster responsibilities keeps
// the factorized form from collapsing into a freeform density ratio.
struct UModel {
  nets::MlpSpec classifier_spec;
  std::vector<double> classifier_params;
  std::vector<double> log_scores;

  int clusters() const { return static_cast<int>(log_scores.size()); }
  std::vector<double> cluster_probs(double x) const;
  double value(double x) const;
};

// Label factor V(y) = exp(net(y)), strictly positive.
struct VModel {
  nets::MlpSpec spec;
  std::vector<double> params;

  double value(double y) const;
  // Additive shift of the log output; scaling V is a bias move.
  double& output_bias() { return params.back(); }
  double output_bias() const { return params.back(); }
};

UModel make_u_model(int clusters, Rng& rng);
VModel make_v_model(Rng& rng);

struct JiaConfig {
  int clusters = 2;     // K
  int mc_samples = 16;  // draws per x for the conditional expectation
  long epochs = 200;
  int batch = 128;
  double lr = 3e-3;
  model::FitConfig conditional;  // stage-1 fit of D_source(y|x)
};

nlohmann::json jia_config_to_json(const JiaConfig& cfg);
JiaConfig jia_config_from_json(const nlohmann::json& j);

// Clipped per-sample weight U(x) V(y).
double weight(const UModel& u, const VModel& v, double x, double y);

// Gauge motion: U *= k, V /= k. Products, and hence both objectives, are
// unchanged.
void scale_factors(UModel& u, VModel& v, double k);

// Rescales V so the empirical source mean of U(x) V(y) is one; returns
// the mean that was divided out.
double normalize_factors(UModel& u, VModel& v,
                         std::span<const toy::LabeledSample> source);

// Labeled-target objective:
//   E_src[log(1 + U V)] + E_tgt[log(1 + 1/(U V))].
double l_sup_value(const UModel& u, const VModel& v,
                   std::span<const toy::LabeledSample> source,
                   std::span<const toy::LabeledSample> target);

// Unlabeled-target objective: V(y) is replaced by its conditional
// expectation under the fitted source conditional, estimated with
// mc_samples Gaussian draws per x. `eps` supplies the standard normal
// draws, (source_x.size() + target_x.size()) * mc_samples of them, so
// callers control replay.
double l_unsup_value(const UModel& u, const VModel& v,
                     const model::GaussianRegressor& conditional,
                     int mc_samples, std::span<const double> source_x,
                     std::span<const double> target_x,
                     std::span<const double> eps);

struct FitResult {
  UModel u;
  VModel v;
  double final_loss = 0.0;
  double normalizer = 1.0;
  bool aborted_early = false;  // non-finite loss; last finite state kept
  model::GaussianRegressor conditional;
  bool has_conditional = false;
};

// Joint minimization of l_sup over (U, V) by minibatch Adam, followed by
// normalize_factors.
FitResult fit_supervised(const toy::Dataset& source, const toy::Dataset& target,
                         const JiaConfig& cfg, uint64_t seed,
                         const model::MetricsSink& sink = nullptr);

// Two stages: fit the source conditional, then minimize l_unsup. Target
// labels are never touched.
FitResult fit_unsupervised(const toy::Dataset& source, const toy::Dataset& target,
                           const JiaConfig& cfg, uint64_t seed,
                           const model::MetricsSink& sink = nullptr);

// Finite-table analogues used to validate the estimator against exact
// optima.
double discrete_l_sup(const theory::DiscreteJoint& s,
                      const theory::DiscreteJoint& t,
                      const std::vector<double>& u,
                      const std::vector<double>& v);
double discrete_l_unsup(const theory::DiscreteJoint& s,
                        const theory::DiscreteJoint& t,
                        const std::vector<double>& u,
                        const std::vector<double>& v);

struct DiscreteFitResult {
  std::vector<double> u, v;
  double objective = 0.0;
};

DiscreteFitResult fit_discrete_sup(const theory::DiscreteJoint& s,
                                   const theory::DiscreteJoint& t,
                                   long iters = 9000, double lr = 0.1,
                                   uint64_t seed = 0);
DiscreteFitResult fit_discrete_unsup(const theory::DiscreteJoint& s,
                                     const theory::DiscreteJoint& t,
                                     long iters = 9000, double lr = 0.1,
                                     uint64_t seed = 0);

// Lattice over [-1,1]^2 restricted to the hexagon; writes
// x,y,u,v,w[,w_true] rows. A non-empty preamble (complete '#' comment
// lines) is emitted before the header.
void write_importance_grid(const UModel& u, const VModel& v,
                           const toy::HexagonSpec& hex,
                           const toy::GroundTruthFactors* gt,
                           const std::string& path, int n = 101,
                           const std::string& preamble = "");

// Mean unclipped product per quadrant over the same lattice.
std::array<double, 4> quadrant_mean_weight(const UModel& u, const VModel& v,
                                           const toy::HexagonSpec& hex,
                                           int n = 101);

// Fraction of grid x values whose argmax cluster agrees with the majority
// sign of its cluster; 1.0 means the clusters split exactly at x = 0.
double cluster_sign_purity(const UModel& u, int n = 201);

nlohmann::json factors_to_json(const UModel& u, const VModel& v);
std::pair<UModel, VModel> factors_from_json(const nlohmann::json& j);

}  // namespace fjs::importance
