#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "fjs/rng.hpp"

namespace fjs::theory {

// Comparison tolerance for conditionals, factor products and consistency
// checks on exactly-constructed tables.
inline constexpr double kMatchTol = 1e-9;
// Slack allowed when validating that a table sums to one.
inline constexpr double kNormTol = 1e-12;
// Partition enumeration is exhaustive; Bell(8) = 4140 is the ceiling.
inline constexpr int kMaxPartitionGround = 8;

struct SupportViolation : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct SizeLimit : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct CounterexampleFound : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Finite joint distribution over X x Y stored row-major, nx rows (x values)
// by ny columns (y values).
struct DiscreteJoint {
  int nx = 0, ny = 0;
  std::vector<double> p;

  DiscreteJoint() = default;
  DiscreteJoint(int nx_, int ny_)
      : nx(nx_), ny(ny_), p(static_cast<size_t>(nx_) * ny_, 0.0) {}

  double& at(int i, int j) { return p[static_cast<size_t>(i) * ny + j]; }
  double at(int i, int j) const { return p[static_cast<size_t>(i) * ny + j]; }
  bool in_support(int i, int j) const { return at(i, j) > 0.0; }

  std::vector<double> x_marginal() const;
  std::vector<double> y_marginal() const;

  // Scales entries to sum to one; throws std::invalid_argument on a zero
  // or negative total.
  void normalize();
  // Throws std::invalid_argument unless entries are nonnegative and sum to
  // one within kNormTol.
  void validate() const;

  bool operator==(const DiscreteJoint&) const = default;
};

// Pointwise target/source density ratio, defined on the source support.
struct ImportanceTable {
  int nx = 0, ny = 0;
  std::vector<double> w;
  std::vector<uint8_t> defined;

  double at(int i, int j) const { return w[static_cast<size_t>(i) * ny + j]; }
  bool is_defined(int i, int j) const {
    return defined[static_cast<size_t>(i) * ny + j] != 0;
  }
};

struct FactorPair {
  std::vector<double> u;  // per x value, strictly positive
  std::vector<double> v;  // per y value, strictly positive
};

// Partition of the x ground set: cell[i] is the block index of x value i.
struct FeatureMap {
  std::vector<int> cell;
  int num_cells = 0;
};

enum class Assumption {
  covariate_shift,
  label_shift,
  domain_invariance,
  generalized_label_shift,
  factorizable_joint_shift,
};

std::string assumption_name(Assumption a);

// w(x,y) = target(x,y) / source(x,y) on the source support. Throws
// SupportViolation if the target puts mass outside the source support.
ImportanceTable joint_importance(const DiscreteJoint& source,
                                 const DiscreteJoint& target);

enum class FactorizeStatus { factorized, not_factorizable, ambiguous_support };

struct FactorizeResult {
  FactorizeStatus status = FactorizeStatus::not_factorizable;
  FactorPair factors;  // valid only when status == factorized
};

// Attempts to write w(x,y) = u(x) v(y) on the defined cells. The gauge is
// fixed by u = 1 at the smallest x index with any defined cell. A zero
// ratio on a defined cell rules factorization out; a disconnected support
// graph leaves the relative scale of components undetermined and is
// reported as ambiguous_support.
FactorizeResult factorize(const ImportanceTable& w, double tol = kMatchTol);

// Decides the assumption by direct comparison (covariate / label shift),
// exhaustive partition search (domain invariance / generalized label
// shift; throws SizeLimit when nx exceeds kMaxPartitionGround), or
// support-graph consistency (factorizable joint shift). Throws
// SupportViolation under the same condition as joint_importance.
bool check_assumption(const DiscreteJoint& source, const DiscreteJoint& target,
                      Assumption a);

// All partitions witnessing domain invariance or generalized label shift.
std::vector<FeatureMap> witness_partitions(const DiscreteJoint& source,
                                           const DiscreteJoint& target,
                                           Assumption a);

// Enumerates set partitions of {0..n-1} in restricted-growth order.
void for_each_partition(int n, const std::function<void(const FeatureMap&)>& cb);

// Randomized verification of the structural implications. `failures`
// counts trials whose conclusion did not hold; for the positive suites a
// nonzero count signals an implementation bug. Negative-control suites
// generate premise-violating instances, and there `failures` counts the
// violations found (the controls are expected to find some).
struct VerifierReport {
  long trials = 0;
  long failures = 0;
  uint64_t seed = 0;
  double elapsed_ms = 0.0;
  std::vector<std::pair<DiscreteJoint, DiscreteJoint>> counterexamples;
};

std::string to_json_string(const VerifierReport& r);

struct DomainSizes {
  int nx_min = 1, nx_max = 5;
  int ny_min = 1, ny_max = 5;
};

// Deterministic labeling + matched label marginals + covariate shift
// implies domain invariance (the label partition is a witness).
VerifierReport verify_cs_determinism_implies_di(long trials, uint64_t seed,
                                                DomainSizes sizes = {},
                                                bool throw_on_counterexample = false);
// Control: same construction except the label marginals are not matched.
VerifierReport control_di_fails_without_matched_labels(long trials, uint64_t seed,
                                                       DomainSizes sizes = {});

// Deterministic labeling + factorizable joint shift implies generalized
// label shift.
VerifierReport verify_fjs_determinism_implies_gls(long trials, uint64_t seed,
                                                  DomainSizes sizes = {},
                                                  bool throw_on_counterexample = false);
// Control: factorizable shift on full-support (non-deterministic) tables.
VerifierReport control_gls_fails_without_determinism(long trials, uint64_t seed,
                                                     DomainSizes sizes = {});

// Closed form for the minimizer of
//   sum_i p_i log(1 + w_i) + sum_i q_i log(1 + 1/w_i)
// over positive w: w*_i = q_i / p_i, with optimal value
// 2 (log 2 - JSD(p || q)). Throws SupportViolation when q puts mass where
// p has none.
struct RatioObjectiveOptimum {
  std::vector<double> w_star;
  double value = 0.0;
};

RatioObjectiveOptimum ratio_objective_optimum(const std::vector<double>& p,
                                              const std::vector<double>& q);
double ratio_objective_value(const std::vector<double>& p,
                             const std::vector<double>& q,
                             const std::vector<double>& w);
double entropy(const std::vector<double>& p);
double jensen_shannon_divergence(const std::vector<double>& p,
                                 const std::vector<double>& q);

// Positive distribution over n outcomes (normalized Exp(1) draws).
std::vector<double> random_distribution(int n, Rng& rng);
// Random joint table; with sparsify, entries below 1e-3 are zeroed and the
// rest renormalized, producing partial supports.
DiscreteJoint random_joint(int nx, int ny, Rng& rng, bool sparsify = false);

}  // namespace fjs::theory
