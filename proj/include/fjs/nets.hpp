#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fjs/rng.hpp"

namespace fjs::nets {

struct DimensionMismatch : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NonFiniteGradient : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class Activation { tanh_act, relu };

// Fully connected net: input -> hidden... -> output, with the activation
// on every layer except the last (the output is linear; heads interpret
// it).
struct MlpSpec {
  int input_dim = 0;
  std::vector<int> hidden;
  int output_dim = 0;
  Activation activation = Activation::tanh_act;

  std::vector<int> dims() const;
  bool operator==(const MlpSpec&) const = default;
};

long param_count(const MlpSpec& spec);

// Symmetric uniform init with bound 1/sqrt(fan_in); biases start at zero.
// Weights are drawn layer by layer in storage order, so a given rng state
// pins the full vector.
std::vector<double> init_params(const MlpSpec& spec, Rng& rng);

// Activations per layer for a batch, kept for the backward pass.
// acts[0] is the input (batch x input_dim, row-major); acts[l+1] is the
// layer-l output after its activation.
struct BatchTape {
  int batch = 0;
  std::vector<std::vector<double>> acts;
  const std::vector<double>& output() const { return acts.back(); }
};

void forward_batch(const MlpSpec& spec, std::span<const double> params,
                   std::span<const double> x, int batch, BatchTape& tape);

// Accumulates d(sum_i dy_i . f(x_i)) into grad (sum semantics; scale dy by
// 1/batch beforehand for a mean). When dx is non-null it receives the
// per-row input gradients.
void backward_batch(const MlpSpec& spec, std::span<const double> params,
                    const BatchTape& tape, std::span<const double> dy,
                    std::span<double> grad, std::vector<double>* dx = nullptr);

// Single-row convenience forward.
std::vector<double> forward(const MlpSpec& spec, std::span<const double> params,
                            std::span<const double> x);

// Mean-of-per-sample-gradients convenience used by the finite difference
// harness and tests.
std::vector<double> backward_mean(const MlpSpec& spec,
                                  std::span<const double> params,
                                  std::span<const double> x, int batch,
                                  std::span<const double> dy);

// --- heads -----------------------------------------------------------

struct GaussianPrediction {
  double mu = 0.0;
  double sigma = 1.0;
};

// Raw output (mu, s) maps to (mu, exp(s)) so sigma stays positive.
inline GaussianPrediction gaussian_head(double raw_mu, double raw_log_sigma) {
  return {raw_mu, std::exp(raw_log_sigma)};
}

struct GaussianNllGrad {
  double loss = 0.0;
  double d_mu = 0.0;
  double d_raw_sigma = 0.0;  // gradient w.r.t. the pre-exp output
};

GaussianNllGrad gaussian_nll(double raw_mu, double raw_log_sigma, double y);

void softmax(std::span<const double> z, std::span<double> out);

// Numerically safe log(sigmoid(z)).
double log_sigmoid(double z);
double sigmoid(double z);

// --- optimizer --------------------------------------------------------

enum class OptMethod { sgd, adam };

std::string opt_method_name(OptMethod m);
OptMethod opt_method_from_name(const std::string& s);

struct Optimizer {
  OptMethod method = OptMethod::adam;
  double lr = 1e-3;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  void reset(size_t n);
  // Throws NonFiniteGradient on NaN or infinite gradient entries.
  void step(std::span<double> params, std::span<const double> grad);

  long t = 0;
  std::vector<double> m, v;
};

}  // namespace fjs::nets
