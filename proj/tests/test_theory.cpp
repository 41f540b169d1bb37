#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <set>
#include <stdexcept>
#include <vector>

#include "fjs/rng.hpp"
#include "fjs/theory.hpp"
#include "json.hpp"

using namespace fjs;
using namespace fjs::theory;

namespace {

// Census counts from the quadrant benchmark: rows are x-groups (rich, poor),
// columns are y-groups (healthy, unhealthy).
DiscreteJoint census_source() {
  DiscreteJoint s(2, 2);
  s.at(0, 0) = 1000.0;
  s.at(0, 1) = 1000.0;
  s.at(1, 0) = 125.0;
  s.at(1, 1) = 500.0;
  s.normalize();
  return s;
}

// Quadrant areas of the hexagon target, same group layout.
DiscreteJoint census_target() {
  DiscreteJoint t(2, 2);
  t.at(0, 0) = 1.0;
  t.at(0, 1) = 0.5;
  t.at(1, 0) = 0.5;
  t.at(1, 1) = 1.0;
  t.normalize();
  return t;
}

bool near(double a, double b, double tol = 1e-12) {
  return std::abs(a - b) <= tol;
}

}  // namespace

TEST_CASE("joint table marginals, normalize and validate") {
  DiscreteJoint d = census_source();
  d.validate();
  auto mx = d.x_marginal();
  auto my = d.y_marginal();
  CHECK(near(mx[0], 2000.0 / 2625.0));
  CHECK(near(mx[1], 625.0 / 2625.0));
  CHECK(near(my[0], 1125.0 / 2625.0));
  CHECK(near(my[1], 1500.0 / 2625.0));

  DiscreteJoint zero(2, 2);
  CHECK_THROWS_AS(zero.normalize(), std::invalid_argument);

  DiscreteJoint neg(1, 2);
  neg.at(0, 0) = 1.5;
  neg.at(0, 1) = -0.5;
  CHECK_THROWS_AS(neg.validate(), std::invalid_argument);

  DiscreteJoint off(1, 2);
  off.at(0, 0) = 0.6;
  off.at(0, 1) = 0.5;
  CHECK_THROWS_AS(off.validate(), std::invalid_argument);
}

TEST_CASE("identical domains give unit importance everywhere") {
  DiscreteJoint s = census_source();
  ImportanceTable w = joint_importance(s, s);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) {
      CHECK(w.is_defined(i, j));
      CHECK(near(w.at(i, j), 1.0));
    }
}

TEST_CASE("census pair importance and factorization") {
  DiscreteJoint s = census_source();
  DiscreteJoint t = census_target();
  ImportanceTable w = joint_importance(s, t);
  CHECK(near(w.at(0, 0), 0.875));
  CHECK(near(w.at(0, 1), 0.4375));
  CHECK(near(w.at(1, 0), 3.5));
  CHECK(near(w.at(1, 1), 1.75));

  FactorizeResult f = factorize(w);
  REQUIRE(f.status == FactorizeStatus::factorized);
  CHECK(near(f.factors.u[0], 1.0));
  CHECK(near(f.factors.u[1], 4.0));
  CHECK(near(f.factors.v[0], 0.875));
  CHECK(near(f.factors.v[1], 0.4375));
}

TEST_CASE("support violation when target exceeds source support") {
  DiscreteJoint s(2, 2);
  s.at(0, 0) = 0.5;
  s.at(1, 0) = 0.25;
  s.at(1, 1) = 0.25;
  DiscreteJoint t(2, 2);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) t.at(i, j) = 0.25;
  CHECK_THROWS_AS(joint_importance(s, t), SupportViolation);
  CHECK_THROWS_AS(check_assumption(s, t, Assumption::covariate_shift),
                  SupportViolation);
}

TEST_CASE("factorize status branches") {
  SUBCASE("full support rank-one violation") {
    DiscreteJoint s(2, 2);
    for (double& x : s.p) x = 0.25;
    DiscreteJoint t(2, 2);
    t.at(0, 0) = 0.4;
    t.at(0, 1) = 0.1;
    t.at(1, 0) = 0.1;
    t.at(1, 1) = 0.4;
    FactorizeResult f = factorize(joint_importance(s, t));
    CHECK(f.status == FactorizeStatus::not_factorizable);
    CHECK_FALSE(check_assumption(s, t, Assumption::factorizable_joint_shift));
  }
  SUBCASE("zero ratio on a defined cell") {
    DiscreteJoint s(2, 2);
    for (double& x : s.p) x = 0.25;
    DiscreteJoint t(2, 2);
    t.at(0, 1) = 1.0 / 3.0;
    t.at(1, 0) = 1.0 / 3.0;
    t.at(1, 1) = 1.0 / 3.0;
    FactorizeResult f = factorize(joint_importance(s, t));
    CHECK(f.status == FactorizeStatus::not_factorizable);
    // The zero cell sits on a positive row and a positive column, so no
    // zero factor can cover it either.
    CHECK_FALSE(check_assumption(s, t, Assumption::factorizable_joint_shift));
  }
  SUBCASE("disconnected support is ambiguous") {
    DiscreteJoint s(2, 2);
    s.at(0, 0) = 0.5;
    s.at(1, 1) = 0.5;
    DiscreteJoint t(2, 2);
    t.at(0, 0) = 0.25;
    t.at(1, 1) = 0.75;
    FactorizeResult f = factorize(joint_importance(s, t));
    CHECK(f.status == FactorizeStatus::ambiguous_support);
    // Each component is trivially consistent, so the assumption itself holds.
    CHECK(check_assumption(s, t, Assumption::factorizable_joint_shift));
  }
}

TEST_CASE("covariate and label shift constructions are recognized") {
  Rng rng(41);
  for (int rep = 0; rep < 20; ++rep) {
    DiscreteJoint s = random_joint(3, 4, rng);
    SUBCASE("") {}
    // Covariate shift: new x marginal, conditionals D(y|x) kept.
    std::vector<double> qx = random_distribution(3, rng);
    DiscreteJoint t_cs(3, 4);
    auto mx = s.x_marginal();
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 4; ++j) t_cs.at(i, j) = qx[i] * s.at(i, j) / mx[i];
    CHECK(check_assumption(s, t_cs, Assumption::covariate_shift));

    // Label shift: new y marginal, conditionals D(x|y) kept.
    std::vector<double> qy = random_distribution(4, rng);
    DiscreteJoint t_ls(3, 4);
    auto my = s.y_marginal();
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 4; ++j) t_ls.at(i, j) = qy[j] * s.at(i, j) / my[j];
    CHECK(check_assumption(s, t_ls, Assumption::label_shift));

    // Both are factorizable: w = q(x)/p(x) resp. q(y)/p(y).
    CHECK(check_assumption(s, t_cs, Assumption::factorizable_joint_shift));
    CHECK(check_assumption(s, t_ls, Assumption::factorizable_joint_shift));
  }
}

TEST_CASE("assumption profile of the census pair") {
  DiscreteJoint s = census_source();
  DiscreteJoint t = census_target();
  CHECK(check_assumption(s, t, Assumption::factorizable_joint_shift));
  CHECK_FALSE(check_assumption(s, t, Assumption::covariate_shift));
  CHECK_FALSE(check_assumption(s, t, Assumption::label_shift));
  CHECK_FALSE(check_assumption(s, t, Assumption::domain_invariance));
  CHECK_FALSE(check_assumption(s, t, Assumption::generalized_label_shift));
}

TEST_CASE("identical domains satisfy every assumption") {
  DiscreteJoint s = census_source();
  for (Assumption a :
       {Assumption::covariate_shift, Assumption::label_shift,
        Assumption::domain_invariance, Assumption::generalized_label_shift,
        Assumption::factorizable_joint_shift})
    CHECK(check_assumption(s, s, a));
}

TEST_CASE("witness partitions for an unshifted pair") {
  DiscreteJoint s = census_source();
  // The two x-groups have distinct label conditionals, so only the identity
  // partition preserves them.
  for (Assumption a :
       {Assumption::domain_invariance, Assumption::generalized_label_shift}) {
    auto ws = witness_partitions(s, s, a);
    REQUIRE(ws.size() == 1);
    CHECK(ws[0].num_cells == 2);
    CHECK(ws[0].cell == std::vector<int>{0, 1});
  }
  CHECK_THROWS_AS(witness_partitions(s, s, Assumption::covariate_shift),
                  std::invalid_argument);
}

TEST_CASE("partition enumeration matches Bell numbers") {
  auto count = [](int n) {
    long c = 0;
    std::set<std::vector<int>> seen;
    for_each_partition(n, [&](const FeatureMap& g) {
      ++c;
      seen.insert(g.cell);
      REQUIRE(static_cast<int>(g.cell.size()) == n);
      // Restricted growth: first cell 0, each label at most prior max + 1.
      int mx = -1;
      for (int v : g.cell) {
        REQUIRE(v <= mx + 1);
        mx = std::max(mx, v);
      }
      REQUIRE(g.num_cells == mx + 1);
    });
    REQUIRE(seen.size() == static_cast<size_t>(c));
    return c;
  };
  CHECK(count(1) == 1);
  CHECK(count(2) == 2);
  CHECK(count(3) == 5);
  CHECK(count(4) == 15);
  CHECK(count(kMaxPartitionGround) == 4140);
}

TEST_CASE("partition search size limit") {
  DiscreteJoint s(9, 2);
  for (double& x : s.p) x = 1.0 / 18.0;
  CHECK_THROWS_AS(check_assumption(s, s, Assumption::domain_invariance),
                  SizeLimit);
  CHECK_THROWS_AS(witness_partitions(s, s, Assumption::generalized_label_shift),
                  SizeLimit);
  CHECK(check_assumption(s, s, Assumption::covariate_shift));
}

TEST_CASE("ratio objective closed form") {
  SUBCASE("skewed pair") {
    std::vector<double> p{0.75, 0.25}, q{0.25, 0.75};
    RatioObjectiveOptimum opt = ratio_objective_optimum(p, q);
    CHECK(near(opt.w_star[0], 1.0 / 3.0));
    CHECK(near(opt.w_star[1], 3.0));
    CHECK(near(opt.value, 1.1246702892376166));
    CHECK(near(opt.value,
               2.0 * (std::log(2.0) - jensen_shannon_divergence(p, q)), 1e-12));
  }
  SUBCASE("identical pair attains twice log two") {
    std::vector<double> p{0.3, 0.2, 0.5};
    RatioObjectiveOptimum opt = ratio_objective_optimum(p, p);
    for (double w : opt.w_star) CHECK(near(w, 1.0));
    CHECK(near(opt.value, 1.3862943611198906));
  }
  SUBCASE("perturbations never beat the optimum") {
    Rng rng(7);
    for (int rep = 0; rep < 50; ++rep) {
      std::vector<double> p = random_distribution(4, rng);
      std::vector<double> q = random_distribution(4, rng);
      RatioObjectiveOptimum opt = ratio_objective_optimum(p, q);
      for (int k = 0; k < 20; ++k) {
        std::vector<double> w = opt.w_star;
        for (double& x : w) x *= std::exp(rng.uniform(-1.0, 1.0));
        CHECK(ratio_objective_value(p, q, w) >= opt.value - 1e-12);
      }
    }
  }
  SUBCASE("support violation") {
    CHECK_THROWS_AS(ratio_objective_optimum({1.0, 0.0}, {0.5, 0.5}),
                    SupportViolation);
  }
  SUBCASE("zero ratio under q mass costs infinity") {
    CHECK(std::isinf(ratio_objective_value({0.5, 0.5}, {0.5, 0.5}, {1.0, 0.0})));
  }
}

TEST_CASE("entropy and divergence basics") {
  CHECK(near(entropy({1.0, 0.0, 0.0}), 0.0));
  CHECK(near(entropy({0.25, 0.25, 0.25, 0.25}), std::log(4.0)));
  std::vector<double> p{0.6, 0.4}, q{0.1, 0.9};
  CHECK(near(jensen_shannon_divergence(p, p), 0.0));
  CHECK(near(jensen_shannon_divergence(p, q), jensen_shannon_divergence(q, p)));
  CHECK(jensen_shannon_divergence(p, q) > 0.0);
  CHECK(near(jensen_shannon_divergence({1.0, 0.0}, {0.0, 1.0}), std::log(2.0)));
  CHECK_THROWS_AS(jensen_shannon_divergence({1.0}, {0.5, 0.5}),
                  std::invalid_argument);
}

TEST_CASE("random generators are deterministic and normalized") {
  Rng a(99), b(99);
  std::vector<double> da = random_distribution(6, a);
  std::vector<double> db = random_distribution(6, b);
  CHECK(da == db);
  double total = 0.0;
  for (double x : da) {
    CHECK(x > 0.0);
    total += x;
  }
  CHECK(near(total, 1.0));

  DiscreteJoint ja = random_joint(4, 3, a);
  DiscreteJoint jb = random_joint(4, 3, b);
  CHECK(ja == jb);
  ja.validate();
  DiscreteJoint sparse = random_joint(5, 5, a, true);
  sparse.validate();
}

TEST_CASE("implication verifiers pass and controls find violations") {
  DomainSizes sizes;
  VerifierReport di = verify_cs_determinism_implies_di(100, 2024, sizes);
  CHECK(di.trials == 100);
  CHECK(di.failures == 0);
  CHECK(di.seed == 2024);
  CHECK(di.counterexamples.empty());

  VerifierReport gls = verify_fjs_determinism_implies_gls(100, 2024, sizes);
  CHECK(gls.trials == 100);
  CHECK(gls.failures == 0);

  VerifierReport cdi = control_di_fails_without_matched_labels(100, 2024, sizes);
  CHECK(cdi.failures > 0);
  VerifierReport cgls = control_gls_fails_without_determinism(100, 2024, sizes);
  CHECK(cgls.failures > 0);

  // Same seed reproduces the same counts.
  VerifierReport di2 = verify_cs_determinism_implies_di(100, 2024, sizes);
  CHECK(di2.failures == di.failures);
  VerifierReport cdi2 = control_di_fails_without_matched_labels(100, 2024, sizes);
  CHECK(cdi2.failures == cdi.failures);
}

TEST_CASE("verifier report serializes to parseable json") {
  VerifierReport r;
  r.trials = 42;
  r.failures = 3;
  r.seed = 777;
  r.elapsed_ms = 1.5;
  nlohmann::json j = nlohmann::json::parse(to_json_string(r));
  CHECK(j["trials"] == 42);
  CHECK(j["failures"] == 3);
  CHECK(j["seed"] == 777);
  CHECK(j["elapsed_ms"] == 1.5);
}
