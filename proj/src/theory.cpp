#include "fjs/theory.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <deque>
#include <limits>
#include <optional>

#include "json.hpp"

namespace fjs::theory {

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

}  // namespace

std::vector<double> DiscreteJoint::x_marginal() const {
  std::vector<double> m(nx, 0.0);
  for (int i = 0; i < nx; ++i)
    for (int j = 0; j < ny; ++j) m[i] += at(i, j);
  return m;
}

std::vector<double> DiscreteJoint::y_marginal() const {
  std::vector<double> m(ny, 0.0);
  for (int i = 0; i < nx; ++i)
    for (int j = 0; j < ny; ++j) m[j] += at(i, j);
  return m;
}

void DiscreteJoint::normalize() {
  double total = 0.0;
  for (double x : p) total += x;
  if (!(total > 0.0)) throw std::invalid_argument("normalize: zero total mass");
  for (double& x : p) x /= total;
}

void DiscreteJoint::validate() const {
  if (nx < 1 || ny < 1 || p.size() != static_cast<size_t>(nx) * ny)
    throw std::invalid_argument("joint table: bad shape");
  double total = 0.0;
  for (double x : p) {
    if (x < 0.0 || !std::isfinite(x))
      throw std::invalid_argument("joint table: negative or non-finite entry");
    total += x;
  }
  if (std::abs(total - 1.0) > kNormTol)
    throw std::invalid_argument("joint table: sums to " + std::to_string(total));
}

std::string assumption_name(Assumption a) {
  switch (a) {
    case Assumption::covariate_shift: return "covariate_shift";
    case Assumption::label_shift: return "label_shift";
    case Assumption::domain_invariance: return "domain_invariance";
    case Assumption::generalized_label_shift: return "generalized_label_shift";
    case Assumption::factorizable_joint_shift: return "factorizable_joint_shift";
  }
  return "unknown";
}

namespace {

void require_same_shape(const DiscreteJoint& a, const DiscreteJoint& b) {
  if (a.nx != b.nx || a.ny != b.ny)
    throw std::invalid_argument("table pair: mismatched shapes");
}

void require_support_covered(const DiscreteJoint& source,
                             const DiscreteJoint& target) {
  for (int i = 0; i < source.nx; ++i)
    for (int j = 0; j < source.ny; ++j)
      if (target.at(i, j) > 0.0 && source.at(i, j) <= 0.0)
        throw SupportViolation("target mass outside source support at (" +
                               std::to_string(i) + "," + std::to_string(j) + ")");
}

// D(Y | X = i); nullopt when the x marginal is zero.
std::optional<std::vector<double>> cond_y_given_x(const DiscreteJoint& d, int i) {
  double m = 0.0;
  for (int j = 0; j < d.ny; ++j) m += d.at(i, j);
  if (m <= 0.0) return std::nullopt;
  std::vector<double> c(d.ny);
  for (int j = 0; j < d.ny; ++j) c[j] = d.at(i, j) / m;
  return c;
}

std::optional<std::vector<double>> cond_x_given_y(const DiscreteJoint& d, int j) {
  double m = 0.0;
  for (int i = 0; i < d.nx; ++i) m += d.at(i, j);
  if (m <= 0.0) return std::nullopt;
  std::vector<double> c(d.nx);
  for (int i = 0; i < d.nx; ++i) c[i] = d.at(i, j) / m;
  return c;
}

bool close_all(const std::vector<double>& a, const std::vector<double>& b,
               double tol) {
  for (size_t k = 0; k < a.size(); ++k)
    if (std::abs(a[k] - b[k]) > tol) return false;
  return true;
}

bool covariate_shift_holds(const DiscreteJoint& s, const DiscreteJoint& t) {
  for (int i = 0; i < s.nx; ++i) {
    auto cs = cond_y_given_x(s, i);
    auto ct = cond_y_given_x(t, i);
    if (cs && ct && !close_all(*cs, *ct, kMatchTol)) return false;
  }
  return true;
}

bool label_shift_holds(const DiscreteJoint& s, const DiscreteJoint& t) {
  for (int j = 0; j < s.ny; ++j) {
    auto cs = cond_x_given_y(s, j);
    auto ct = cond_x_given_y(t, j);
    if (cs && ct && !close_all(*cs, *ct, kMatchTol)) return false;
  }
  return true;
}

// Joint over (partition cell, y).
DiscreteJoint cell_joint(const DiscreteJoint& d, const FeatureMap& g) {
  DiscreteJoint z(g.num_cells, d.ny);
  for (int i = 0; i < d.nx; ++i)
    for (int j = 0; j < d.ny; ++j) z.at(g.cell[i], j) += d.at(i, j);
  return z;
}

// D(Y | g(X)) = D(Y | X) within one domain: every x keeps the label
// conditional of its cell.
bool partition_preserves_label_conditional(const DiscreteJoint& d,
                                           const FeatureMap& g) {
  DiscreteJoint z = cell_joint(d, g);
  for (int i = 0; i < d.nx; ++i) {
    auto cx = cond_y_given_x(d, i);
    if (!cx) continue;
    auto cz = cond_y_given_x(z, g.cell[i]);
    if (!cz || !close_all(*cx, *cz, kMatchTol)) return false;
  }
  return true;
}

bool di_holds_with(const DiscreteJoint& s, const DiscreteJoint& t,
                   const FeatureMap& g) {
  if (!partition_preserves_label_conditional(s, g)) return false;
  if (!partition_preserves_label_conditional(t, g)) return false;
  DiscreteJoint zs = cell_joint(s, g), zt = cell_joint(t, g);
  return close_all(zs.p, zt.p, kMatchTol);
}

bool gls_holds_with(const DiscreteJoint& s, const DiscreteJoint& t,
                    const FeatureMap& g) {
  if (!partition_preserves_label_conditional(s, g)) return false;
  if (!partition_preserves_label_conditional(t, g)) return false;
  DiscreteJoint zs = cell_joint(s, g), zt = cell_joint(t, g);
  for (int j = 0; j < s.ny; ++j) {
    auto cs = cond_x_given_y(zs, j);
    auto ct = cond_x_given_y(zt, j);
    if (cs && ct && !close_all(*cs, *ct, kMatchTol)) return false;
  }
  return true;
}

// Factorizability of the ratio table, allowing zero factors: a zero ratio
// cell is coverable only by an all-zero row or an all-zero column, and the
// positive cells must be log-consistent within each connected component of
// the support graph.
bool fjs_holds(const ImportanceTable& w, double tol) {
  const int nx = w.nx, ny = w.ny;
  std::vector<uint8_t> rowpos(nx, 0), colpos(ny, 0);
  for (int i = 0; i < nx; ++i)
    for (int j = 0; j < ny; ++j)
      if (w.is_defined(i, j) && w.at(i, j) > 0.0) rowpos[i] = colpos[j] = 1;
  for (int i = 0; i < nx; ++i)
    for (int j = 0; j < ny; ++j)
      if (w.is_defined(i, j) && w.at(i, j) <= 0.0 && rowpos[i] && colpos[j])
        return false;

  // BFS over positive cells; log u + log v must reproduce log w.
  std::vector<double> lu(nx, 0.0), lv(ny, 0.0);
  std::vector<int> useen(nx, 0), vseen(ny, 0);
  for (int start = 0; start < nx; ++start) {
    if (!rowpos[start] || useen[start]) continue;
    useen[start] = 1;
    lu[start] = 0.0;
    std::deque<std::pair<bool, int>> queue{{true, start}};  // (is_row, index)
    while (!queue.empty()) {
      auto [is_row, k] = queue.front();
      queue.pop_front();
      if (is_row) {
        for (int j = 0; j < ny; ++j) {
          if (!w.is_defined(k, j) || w.at(k, j) <= 0.0) continue;
          const double lw = std::log(w.at(k, j));
          if (!vseen[j]) {
            vseen[j] = 1;
            lv[j] = lw - lu[k];
            queue.emplace_back(false, j);
          } else if (std::abs(lu[k] + lv[j] - lw) > tol) {
            return false;
          }
        }
      } else {
        for (int i = 0; i < nx; ++i) {
          if (!w.is_defined(i, k) || w.at(i, k) <= 0.0) continue;
          const double lw = std::log(w.at(i, k));
          if (!useen[i]) {
            useen[i] = 1;
            lu[i] = lw - lv[k];
            queue.emplace_back(true, i);
          } else if (std::abs(lu[i] + lv[k] - lw) > tol) {
            return false;
          }
        }
      }
    }
  }
  return true;
}

}  // namespace

ImportanceTable joint_importance(const DiscreteJoint& source,
                                 const DiscreteJoint& target) {
  require_same_shape(source, target);
  require_support_covered(source, target);
  ImportanceTable w;
  w.nx = source.nx;
  w.ny = source.ny;
  w.w.assign(source.p.size(), 0.0);
  w.defined.assign(source.p.size(), 0);
  for (size_t k = 0; k < source.p.size(); ++k) {
    if (source.p[k] > 0.0) {
      w.defined[k] = 1;
      w.w[k] = target.p[k] / source.p[k];
    }
  }
  return w;
}

FactorizeResult factorize(const ImportanceTable& w, double tol) {
  const int nx = w.nx, ny = w.ny;
  FactorizeResult res;
  res.factors.u.assign(nx, 1.0);
  res.factors.v.assign(ny, 1.0);

  for (int i = 0; i < nx; ++i)
    for (int j = 0; j < ny; ++j)
      if (w.is_defined(i, j) && w.at(i, j) <= 0.0) {
        res.status = FactorizeStatus::not_factorizable;
        return res;
      }

  std::vector<double> lu(nx, 0.0), lv(ny, 0.0);
  std::vector<int> useen(nx, 0), vseen(ny, 0);
  int components = 0;
  for (int start = 0; start < nx; ++start) {
    bool has_cell = false;
    for (int j = 0; j < ny; ++j) has_cell = has_cell || w.is_defined(start, j);
    if (!has_cell || useen[start]) continue;
    ++components;
    useen[start] = 1;
    lu[start] = 0.0;  // gauge: u = 1 at the first row of each component
    std::deque<std::pair<bool, int>> queue{{true, start}};
    while (!queue.empty()) {
      auto [is_row, k] = queue.front();
      queue.pop_front();
      if (is_row) {
        for (int j = 0; j < ny; ++j) {
          if (!w.is_defined(k, j)) continue;
          const double lw = std::log(w.at(k, j));
          if (!vseen[j]) {
            vseen[j] = 1;
            lv[j] = lw - lu[k];
            queue.emplace_back(false, j);
          } else if (std::abs(lu[k] + lv[j] - lw) > tol) {
            res.status = FactorizeStatus::not_factorizable;
            return res;
          }
        }
      } else {
        for (int i = 0; i < nx; ++i) {
          if (!w.is_defined(i, k)) continue;
          const double lw = std::log(w.at(i, k));
          if (!useen[i]) {
            useen[i] = 1;
            lu[i] = lw - lv[k];
            queue.emplace_back(true, i);
          } else if (std::abs(lu[i] + lv[k] - lw) > tol) {
            res.status = FactorizeStatus::not_factorizable;
            return res;
          }
        }
      }
    }
  }
  if (components > 1) {
    res.status = FactorizeStatus::ambiguous_support;
    return res;
  }
  for (int i = 0; i < nx; ++i) res.factors.u[i] = useen[i] ? std::exp(lu[i]) : 1.0;
  for (int j = 0; j < ny; ++j) res.factors.v[j] = vseen[j] ? std::exp(lv[j]) : 1.0;
  res.status = FactorizeStatus::factorized;
  return res;
}

void for_each_partition(int n, const std::function<void(const FeatureMap&)>& cb) {
  if (n < 1) return;
  std::vector<int> cell(n, 0);
  // Restricted growth strings: cell[0] = 0, cell[i] <= max(cell[0..i-1]) + 1.
  auto rec = [&](auto&& self, int i, int used) -> void {
    if (i == n) {
      FeatureMap g{cell, used};
      cb(g);
      return;
    }
    for (int c = 0; c <= used; ++c) {
      cell[i] = c;
      self(self, i + 1, std::max(used, c + 1));
    }
  };
  cell[0] = 0;
  rec(rec, 1, 1);
}

bool check_assumption(const DiscreteJoint& source, const DiscreteJoint& target,
                      Assumption a) {
  require_same_shape(source, target);
  require_support_covered(source, target);
  switch (a) {
    case Assumption::covariate_shift:
      return covariate_shift_holds(source, target);
    case Assumption::label_shift:
      return label_shift_holds(source, target);
    case Assumption::factorizable_joint_shift:
      return fjs_holds(joint_importance(source, target), kMatchTol);
    case Assumption::domain_invariance:
    case Assumption::generalized_label_shift: {
      if (source.nx > kMaxPartitionGround)
        throw SizeLimit("partition search limited to nx <= " +
                        std::to_string(kMaxPartitionGround));
      bool found = false;
      for_each_partition(source.nx, [&](const FeatureMap& g) {
        if (found) return;
        found = a == Assumption::domain_invariance
                    ? di_holds_with(source, target, g)
                    : gls_holds_with(source, target, g);
      });
      return found;
    }
  }
  throw std::invalid_argument("unknown assumption");
}

std::vector<FeatureMap> witness_partitions(const DiscreteJoint& source,
                                           const DiscreteJoint& target,
                                           Assumption a) {
  if (a != Assumption::domain_invariance &&
      a != Assumption::generalized_label_shift)
    throw std::invalid_argument("witness_partitions: partition assumptions only");
  require_same_shape(source, target);
  require_support_covered(source, target);
  if (source.nx > kMaxPartitionGround)
    throw SizeLimit("partition search limited to nx <= " +
                    std::to_string(kMaxPartitionGround));
  std::vector<FeatureMap> out;
  for_each_partition(source.nx, [&](const FeatureMap& g) {
    const bool ok = a == Assumption::domain_invariance
                        ? di_holds_with(source, target, g)
                        : gls_holds_with(source, target, g);
    if (ok) out.push_back(g);
  });
  return out;
}

std::string to_json_string(const VerifierReport& r) {
  nlohmann::json j;
  j["trials"] = r.trials;
  j["failures"] = r.failures;
  j["seed"] = r.seed;
  j["elapsed_ms"] = r.elapsed_ms;
  return j.dump();
}

std::vector<double> random_distribution(int n, Rng& rng) {
  std::vector<double> d(n);
  double total = 0.0;
  for (double& x : d) {
    x = rng.exponential();
    total += x;
  }
  for (double& x : d) x /= total;
  return d;
}

DiscreteJoint random_joint(int nx, int ny, Rng& rng, bool sparsify) {
  DiscreteJoint d(nx, ny);
  for (double& x : d.p) x = rng.exponential();
  d.normalize();
  if (sparsify) {
    for (double& x : d.p)
      if (x < 1e-3) x = 0.0;
    d.normalize();
  }
  return d;
}

namespace {

struct TrialShape {
  int nx = 1, ny = 1;
  std::vector<int> label;  // deterministic labeling f
};

TrialShape draw_shape(Rng& rng, const DomainSizes& sizes, int nx_floor = 1,
                      int ny_floor = 1) {
  TrialShape s;
  const int nx_min = std::max(sizes.nx_min, nx_floor);
  const int ny_min = std::max(sizes.ny_min, ny_floor);
  s.nx = nx_min + static_cast<int>(rng.below(std::max(1, sizes.nx_max - nx_min + 1)));
  s.ny = ny_min + static_cast<int>(rng.below(std::max(1, sizes.ny_max - ny_min + 1)));
  s.label.resize(s.nx);
  for (int i = 0; i < s.nx; ++i)
    s.label[i] = static_cast<int>(rng.below(s.ny));
  return s;
}

DiscreteJoint deterministic_joint(const TrialShape& shape,
                                  const std::vector<double>& px) {
  DiscreteJoint d(shape.nx, shape.ny);
  for (int i = 0; i < shape.nx; ++i) d.at(i, shape.label[i]) = px[i];
  return d;
}

void record_failure(VerifierReport& rep, const DiscreteJoint& s,
                    const DiscreteJoint& t, bool throw_on_counterexample,
                    const char* what) {
  ++rep.failures;
  if (rep.counterexamples.size() < 3) rep.counterexamples.emplace_back(s, t);
  if (throw_on_counterexample) throw CounterexampleFound(what);
}

}  // namespace

VerifierReport verify_cs_determinism_implies_di(long trials, uint64_t seed,
                                                DomainSizes sizes,
                                                bool throw_on_counterexample) {
  VerifierReport rep;
  rep.trials = trials;
  rep.seed = seed;
  const auto t0 = Clock::now();
  for (long trial = 0; trial < trials; ++trial) {
    Rng rng(derive_seed(seed, static_cast<uint64_t>(trial)));
    TrialShape shape = draw_shape(rng, sizes);
    std::vector<double> ps = random_distribution(shape.nx, rng);
    // Redistribute mass within each label group: the label marginal is
    // preserved exactly while the covariate marginal moves.
    std::vector<double> pt(shape.nx, 0.0);
    for (int y = 0; y < shape.ny; ++y) {
      std::vector<int> group;
      double mass = 0.0;
      for (int i = 0; i < shape.nx; ++i)
        if (shape.label[i] == y) {
          group.push_back(i);
          mass += ps[i];
        }
      if (group.empty()) continue;
      std::vector<double> share = random_distribution(static_cast<int>(group.size()), rng);
      for (size_t k = 0; k < group.size(); ++k) pt[group[k]] = mass * share[k];
    }
    DiscreteJoint s = deterministic_joint(shape, ps);
    DiscreteJoint t = deterministic_joint(shape, pt);
    if (!check_assumption(s, t, Assumption::domain_invariance))
      record_failure(rep, s, t, throw_on_counterexample,
                     "domain invariance missing under matched deterministic labels");
  }
  rep.elapsed_ms = elapsed_ms_since(t0);
  return rep;
}

VerifierReport control_di_fails_without_matched_labels(long trials, uint64_t seed,
                                                       DomainSizes sizes) {
  VerifierReport rep;
  rep.trials = trials;
  rep.seed = seed;
  const auto t0 = Clock::now();
  for (long trial = 0; trial < trials; ++trial) {
    Rng rng(derive_seed(seed, static_cast<uint64_t>(trial)));
    TrialShape shape = draw_shape(rng, sizes, /*nx_floor=*/2, /*ny_floor=*/2);
    // Force at least two distinct labels so the marginal can actually move.
    shape.label[0] = 0;
    shape.label[1] = 1;
    std::vector<double> ps = random_distribution(shape.nx, rng);
    std::vector<double> pt = random_distribution(shape.nx, rng);
    DiscreteJoint s = deterministic_joint(shape, ps);
    DiscreteJoint t = deterministic_joint(shape, pt);
    std::vector<double> ms = s.y_marginal(), mt = t.y_marginal();
    if (close_all(ms, mt, 1e-12)) continue;  // vanishingly unlikely
    if (!check_assumption(s, t, Assumption::domain_invariance)) ++rep.failures;
  }
  rep.elapsed_ms = elapsed_ms_since(t0);
  return rep;
}

VerifierReport verify_fjs_determinism_implies_gls(long trials, uint64_t seed,
                                                  DomainSizes sizes,
                                                  bool throw_on_counterexample) {
  VerifierReport rep;
  rep.trials = trials;
  rep.seed = seed;
  const auto t0 = Clock::now();
  for (long trial = 0; trial < trials; ++trial) {
    Rng rng(derive_seed(seed, static_cast<uint64_t>(trial)));
    TrialShape shape = draw_shape(rng, sizes);
    std::vector<double> ps = random_distribution(shape.nx, rng);
    std::vector<double> u(shape.nx), v(shape.ny);
    for (double& x : u) x = std::exp(rng.uniform(-1.5, 1.5));
    for (double& x : v) x = std::exp(rng.uniform(-1.5, 1.5));
    DiscreteJoint s = deterministic_joint(shape, ps);
    DiscreteJoint t = s;
    for (int i = 0; i < shape.nx; ++i)
      t.at(i, shape.label[i]) *= u[i] * v[shape.label[i]];
    t.normalize();
    if (!check_assumption(s, t, Assumption::generalized_label_shift))
      record_failure(rep, s, t, throw_on_counterexample,
                     "generalized label shift missing under deterministic factorizable shift");
  }
  rep.elapsed_ms = elapsed_ms_since(t0);
  return rep;
}

VerifierReport control_gls_fails_without_determinism(long trials, uint64_t seed,
                                                     DomainSizes sizes) {
  VerifierReport rep;
  rep.trials = trials;
  rep.seed = seed;
  const auto t0 = Clock::now();
  for (long trial = 0; trial < trials; ++trial) {
    Rng rng(derive_seed(seed, static_cast<uint64_t>(trial)));
    const int nx = std::max(2, sizes.nx_min) +
                   static_cast<int>(rng.below(std::max(1, sizes.nx_max - std::max(2, sizes.nx_min) + 1)));
    const int ny = std::max(2, sizes.ny_min) +
                   static_cast<int>(rng.below(std::max(1, sizes.ny_max - std::max(2, sizes.ny_min) + 1)));
    DiscreteJoint s = random_joint(nx, ny, rng, false);
    std::vector<double> u(nx), v(ny);
    for (double& x : u) x = std::exp(rng.uniform(-1.5, 1.5));
    for (double& x : v) x = std::exp(rng.uniform(-1.5, 1.5));
    u[0] *= 2.0;  // guarantee a genuinely non-constant covariate factor
    v[0] *= 2.0;
    DiscreteJoint t = s;
    for (int i = 0; i < nx; ++i)
      for (int j = 0; j < ny; ++j) t.at(i, j) *= u[i] * v[j];
    t.normalize();
    if (!check_assumption(s, t, Assumption::generalized_label_shift))
      ++rep.failures;
  }
  rep.elapsed_ms = elapsed_ms_since(t0);
  return rep;
}

double entropy(const std::vector<double>& p) {
  double h = 0.0;
  for (double x : p)
    if (x > 0.0) h -= x * std::log(x);
  return h;
}

double jensen_shannon_divergence(const std::vector<double>& p,
                                 const std::vector<double>& q) {
  if (p.size() != q.size())
    throw std::invalid_argument("jsd: mismatched lengths");
  std::vector<double> m(p.size());
  for (size_t i = 0; i < p.size(); ++i) m[i] = 0.5 * (p[i] + q[i]);
  return entropy(m) - 0.5 * (entropy(p) + entropy(q));
}

RatioObjectiveOptimum ratio_objective_optimum(const std::vector<double>& p,
                                              const std::vector<double>& q) {
  if (p.size() != q.size())
    throw std::invalid_argument("ratio objective: mismatched lengths");
  RatioObjectiveOptimum opt;
  opt.w_star.assign(p.size(), 0.0);
  for (size_t i = 0; i < p.size(); ++i) {
    if (q[i] > 0.0 && p[i] <= 0.0)
      throw SupportViolation("ratio objective: q mass outside p support");
    if (p[i] > 0.0) opt.w_star[i] = q[i] / p[i];
  }
  opt.value = ratio_objective_value(p, q, opt.w_star);
  return opt;
}

double ratio_objective_value(const std::vector<double>& p,
                             const std::vector<double>& q,
                             const std::vector<double>& w) {
  if (p.size() != q.size() || p.size() != w.size())
    throw std::invalid_argument("ratio objective: mismatched lengths");
  double value = 0.0;
  for (size_t i = 0; i < p.size(); ++i) {
    if (p[i] > 0.0) value += p[i] * std::log1p(w[i]);
    if (q[i] > 0.0) {
      if (w[i] <= 0.0) return std::numeric_limits<double>::infinity();
      value += q[i] * std::log1p(1.0 / w[i]);
    }
  }
  return value;
}

}  // namespace fjs::theory
