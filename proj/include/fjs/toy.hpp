#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "fjs/rng.hpp"
#include "fjs/theory.hpp"

namespace fjs::toy {

struct NotFactorizable : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Convex hexagon given counterclockwise; the target density is uniform on
// its interior. The default geometry spans [-1,1]^2 and has one vertex per
// axis crossing, so vertical slices are intervals with piecewise linear
// endpoints.
struct HexagonSpec {
  std::array<std::array<double, 2>, 6> vertices{{{-1.0, 0.0},
                                                 {-1.0, -1.0},
                                                 {0.0, -1.0},
                                                 {1.0, 0.0},
                                                 {1.0, 1.0},
                                                 {0.0, 1.0}}};
};

bool contains(const HexagonSpec& hex, double x, double y);

// [lo, hi] bounds of the vertical slice at x. Requires x within the
// hexagon's x range; a degenerate slice returns lo == hi.
std::pair<double, double> conditional_slice(const HexagonSpec& hex, double x);

struct SliceGaussian {
  double mu = 0.0;
  double sigma = 0.0;
};

// Mean and standard deviation of y uniform on the slice at x: midpoint and
// length / sqrt(12).
SliceGaussian optimal_gaussian(const HexagonSpec& hex, double x);

// Quadrants indexed ++, +-, -+, -- (sign of x then y, boundary on the
// nonnegative side): 0:(x>=0,y>=0) 1:(x>=0,y<0) 2:(x<0,y>=0) 3:(x<0,y<0).
int quadrant_of(double x, double y);
double quadrant_area(const HexagonSpec& hex, int quadrant);
double total_area(const HexagonSpec& hex);

// Expected Gaussian negative log likelihood on the target of the per-slice
// optimal predictor, by quadrature split at the vertex x breakpoints.
double analytic_target_nll(const HexagonSpec& hex);

enum class Domain { source, target };

std::string domain_name(Domain d);
Domain domain_from_name(const std::string& s);

struct LabeledSample {
  double x = 0.0, y = 0.0;
  bool operator==(const LabeledSample&) const = default;
};

struct Dataset {
  std::vector<LabeledSample> samples;
  Domain domain = Domain::source;
  uint64_t seed = 0;
  bool operator==(const Dataset&) const = default;
};

// Per-quadrant sample counts for the source domain, indexed as quadrant_of.
struct SourceSpec {
  std::array<long, 4> quadrant_counts{1000, 1000, 125, 500};
};

// Uniform draws from the hexagon by rejection from the bounding box.
Dataset sample_target(const HexagonSpec& hex, long n, uint64_t seed);
// Exact per-quadrant counts, uniform within each quadrant piece, then a
// seeded shuffle so the order carries no quadrant signal.
Dataset sample_source(const HexagonSpec& hex, const SourceSpec& spec,
                      uint64_t seed);

struct GroundTruthFactors {
  // Representative gauge: u_rich * u_poor = 1.
  double u_rich = 0.0, u_poor = 0.0;
  double v_healthy = 0.0, v_unhealthy = 0.0;
  std::array<double, 4> quadrant_weight{};  // target/source density ratio
};

// Exact importance ratios from areas and counts. Throws NotFactorizable if
// the per-quadrant ratios are not rank one.
GroundTruthFactors ground_truth_importance(const HexagonSpec& hex,
                                           const SourceSpec& spec);

// Induced 2x2 joint tables over (sign of x, sign of y): row 0 is x>=0
// ("rich"), column 0 is y>=0 ("healthy").
std::pair<theory::DiscreteJoint, theory::DiscreteJoint> quadrant_tables(
    const HexagonSpec& hex, const SourceSpec& spec);

// CSV with a `# domain=...` / `# seed=...` preamble, a `x,y,domain`
// header, and %.17g doubles so a round trip is byte exact.
void write_csv(const Dataset& data, const std::string& path);
Dataset read_csv(const std::string& path);

}  // namespace fjs::toy
