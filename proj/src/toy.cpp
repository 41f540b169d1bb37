#include "fjs/toy.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <limits>
#include <set>

namespace fjs::toy {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

using Pt = std::array<double, 2>;

std::vector<Pt> hex_points(const HexagonSpec& hex) {
  return {hex.vertices.begin(), hex.vertices.end()};
}

// Keeps the region a*x + b*y <= c (Sutherland-Hodgman step).
std::vector<Pt> clip_halfplane(const std::vector<Pt>& poly, double a, double b,
                               double c) {
  std::vector<Pt> out;
  const size_t n = poly.size();
  for (size_t i = 0; i < n; ++i) {
    const Pt& cur = poly[i];
    const Pt& nxt = poly[(i + 1) % n];
    const double dc = a * cur[0] + b * cur[1] - c;
    const double dn = a * nxt[0] + b * nxt[1] - c;
    if (dc <= 0.0) out.push_back(cur);
    if ((dc < 0.0 && dn > 0.0) || (dc > 0.0 && dn < 0.0)) {
      const double t = dc / (dc - dn);
      out.push_back({cur[0] + t * (nxt[0] - cur[0]), cur[1] + t * (nxt[1] - cur[1])});
    }
  }
  return out;
}

double polygon_area(const std::vector<Pt>& poly) {
  double twice = 0.0;
  const size_t n = poly.size();
  for (size_t i = 0; i < n; ++i) {
    const Pt& a = poly[i];
    const Pt& b = poly[(i + 1) % n];
    twice += a[0] * b[1] - b[0] * a[1];
  }
  return std::abs(twice) * 0.5;
}

struct Box {
  double xlo, xhi, ylo, yhi;
};

Box quadrant_box(int q) {
  // The geometry is confined to [-1,1]^2 by construction.
  const bool xpos = q == 0 || q == 1;
  const bool ypos = q == 0 || q == 2;
  return {xpos ? 0.0 : -1.0, xpos ? 1.0 : 0.0, ypos ? 0.0 : -1.0,
          ypos ? 1.0 : 0.0};
}

}  // namespace

bool contains(const HexagonSpec& hex, double x, double y) {
  // Counterclockwise polygon: inside iff on the left of every edge.
  const auto& v = hex.vertices;
  for (size_t i = 0; i < v.size(); ++i) {
    const auto& a = v[i];
    const auto& b = v[(i + 1) % v.size()];
    const double cross =
        (b[0] - a[0]) * (y - a[1]) - (b[1] - a[1]) * (x - a[0]);
    if (cross < -1e-12) return false;
  }
  return true;
}

std::pair<double, double> conditional_slice(const HexagonSpec& hex, double x) {
  const auto& v = hex.vertices;
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (size_t i = 0; i < v.size(); ++i) {
    const auto& a = v[i];
    const auto& b = v[(i + 1) % v.size()];
    if (a[0] == b[0]) {
      if (a[0] == x) {
        lo = std::min({lo, a[1], b[1]});
        hi = std::max({hi, a[1], b[1]});
      }
      continue;
    }
    if ((a[0] - x) * (b[0] - x) > 0.0) continue;
    const double t = (x - a[0]) / (b[0] - a[0]);
    const double y = a[1] + t * (b[1] - a[1]);
    lo = std::min(lo, y);
    hi = std::max(hi, y);
  }
  if (!(lo <= hi))
    throw std::invalid_argument("conditional_slice: x outside hexagon range");
  return {lo, hi};
}

SliceGaussian optimal_gaussian(const HexagonSpec& hex, double x) {
  auto [lo, hi] = conditional_slice(hex, x);
  return {0.5 * (lo + hi), (hi - lo) / std::sqrt(12.0)};
}

int quadrant_of(double x, double y) {
  return (x >= 0.0 ? 0 : 2) + (y >= 0.0 ? 0 : 1);
}

double quadrant_area(const HexagonSpec& hex, int quadrant) {
  std::vector<Pt> poly = hex_points(hex);
  const bool xpos = quadrant == 0 || quadrant == 1;
  const bool ypos = quadrant == 0 || quadrant == 2;
  poly = clip_halfplane(poly, xpos ? -1.0 : 1.0, 0.0, 0.0);
  if (poly.size() < 3) return 0.0;
  poly = clip_halfplane(poly, 0.0, ypos ? -1.0 : 1.0, 0.0);
  if (poly.size() < 3) return 0.0;
  return polygon_area(poly);
}

double total_area(const HexagonSpec& hex) {
  return polygon_area(hex_points(hex));
}

double analytic_target_nll(const HexagonSpec& hex) {
  const double area = total_area(hex);
  // Slice endpoints are piecewise linear with kinks only at vertex x
  // coordinates, so composite Simpson within each piece converges fast.
  std::set<double> cuts;
  for (const auto& v : hex.vertices) cuts.insert(v[0]);
  std::vector<double> xs(cuts.begin(), cuts.end());

  auto integrand = [&](double x) {
    auto [lo, hi] = conditional_slice(hex, x);
    const double len = hi - lo;
    if (len <= 1e-300) return 0.0;
    // Density of x is len/area; expected optimal score on the slice is
    // 1/2 + log(sqrt(2*pi) * len / sqrt(12)).
    const double sigma = len / std::sqrt(12.0);
    return (len / area) * (0.5 + std::log(std::sqrt(kTwoPi) * sigma));
  };

  double total = 0.0;
  const int steps = 4096;  // per piece, even
  for (size_t k = 0; k + 1 < xs.size(); ++k) {
    const double a = xs[k], b = xs[k + 1];
    if (b - a <= 0.0) continue;
    const double h = (b - a) / steps;
    double acc = integrand(a) + integrand(b);
    for (int i = 1; i < steps; ++i)
      acc += integrand(a + h * i) * (i % 2 == 1 ? 4.0 : 2.0);
    total += acc * h / 3.0;
  }
  return total;
}

std::string domain_name(Domain d) {
  return d == Domain::source ? "source" : "target";
}

Domain domain_from_name(const std::string& s) {
  if (s == "source") return Domain::source;
  if (s == "target") return Domain::target;
  throw FormatError("unknown domain tag: " + s);
}

Dataset sample_target(const HexagonSpec& hex, long n, uint64_t seed) {
  Rng rng(seed);
  Dataset out;
  out.domain = Domain::target;
  out.seed = seed;
  out.samples.reserve(n);
  while (static_cast<long>(out.samples.size()) < n) {
    const double x = rng.uniform(-1.0, 1.0);
    const double y = rng.uniform(-1.0, 1.0);
    if (contains(hex, x, y)) out.samples.push_back({x, y});
  }
  return out;
}

Dataset sample_source(const HexagonSpec& hex, const SourceSpec& spec,
                      uint64_t seed) {
  Rng rng(seed);
  Dataset out;
  out.domain = Domain::source;
  out.seed = seed;
  long total = 0;
  for (long c : spec.quadrant_counts) total += c;
  out.samples.reserve(total);
  for (int q = 0; q < 4; ++q) {
    if (spec.quadrant_counts[q] > 0 && quadrant_area(hex, q) <= 0.0)
      throw std::invalid_argument("sample_source: quadrant " +
                                  std::to_string(q) + " has zero area");
    const Box box = quadrant_box(q);
    long need = spec.quadrant_counts[q];
    while (need > 0) {
      const double x = rng.uniform(box.xlo, box.xhi);
      const double y = rng.uniform(box.ylo, box.yhi);
      if (!contains(hex, x, y) || quadrant_of(x, y) != q) continue;
      out.samples.push_back({x, y});
      --need;
    }
  }
  rng.shuffle(out.samples);
  return out;
}

GroundTruthFactors ground_truth_importance(const HexagonSpec& hex,
                                           const SourceSpec& spec) {
  const double area = total_area(hex);
  double n_total = 0.0;
  for (long c : spec.quadrant_counts) n_total += static_cast<double>(c);
  GroundTruthFactors gt;
  for (int q = 0; q < 4; ++q) {
    const double aq = quadrant_area(hex, q);
    const double nq = static_cast<double>(spec.quadrant_counts[q]);
    if (nq <= 0.0 || aq <= 0.0)
      throw NotFactorizable("ground truth needs mass in every quadrant");
    // (target density) / (source density) = (aq/area) / (nq/n_total).
    gt.quadrant_weight[q] = (aq / area) * (n_total / nq);
  }
  const double lhs = gt.quadrant_weight[0] * gt.quadrant_weight[3];
  const double rhs = gt.quadrant_weight[1] * gt.quadrant_weight[2];
  if (std::abs(lhs - rhs) > 1e-9 * std::max(lhs, rhs))
    throw NotFactorizable("per-quadrant ratios are not rank one");
  gt.u_rich = std::sqrt(gt.quadrant_weight[0] / gt.quadrant_weight[2]);
  gt.u_poor = 1.0 / gt.u_rich;
  gt.v_healthy = gt.quadrant_weight[0] / gt.u_rich;
  gt.v_unhealthy = gt.quadrant_weight[1] / gt.u_rich;
  return gt;
}

std::pair<theory::DiscreteJoint, theory::DiscreteJoint> quadrant_tables(
    const HexagonSpec& hex, const SourceSpec& spec) {
  const double area = total_area(hex);
  double n_total = 0.0;
  for (long c : spec.quadrant_counts) n_total += static_cast<double>(c);
  theory::DiscreteJoint s(2, 2), t(2, 2);
  for (int q = 0; q < 4; ++q) {
    const int row = q >= 2 ? 1 : 0;  // sign of x
    const int col = q % 2;           // sign of y
    s.at(row, col) = static_cast<double>(spec.quadrant_counts[q]) / n_total;
    t.at(row, col) = quadrant_area(hex, q) / area;
  }
  return {s, t};
}

void write_csv(const Dataset& data, const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw IoError("cannot open for writing: " + path);
  std::fprintf(f, "# domain=%s\n", domain_name(data.domain).c_str());
  std::fprintf(f, "# seed=%llu\n", static_cast<unsigned long long>(data.seed));
  std::fprintf(f, "x,y,domain\n");
  const std::string tag = domain_name(data.domain);
  for (const LabeledSample& s : data.samples)
    std::fprintf(f, "%.17g,%.17g,%s\n", s.x, s.y, tag.c_str());
  if (std::fclose(f) != 0) throw IoError("write failed: " + path);
}

namespace {

double parse_double_field(const std::string& field, int line_no) {
  const char* begin = field.c_str();
  char* end = nullptr;
  errno = 0;
  const double v = std::strtod(begin, &end);
  if (end == begin || *end != '\0' || errno == ERANGE)
    throw FormatError("line " + std::to_string(line_no) +
                      ": bad numeric field '" + field + "'");
  return v;
}

}  // namespace

Dataset read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open for reading: " + path);
  Dataset out;
  bool domain_set = false;
  bool header_seen = false;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      const size_t eq = line.find('=');
      if (eq == std::string::npos) continue;
      std::string key = line.substr(1, eq - 1);
      std::string value = line.substr(eq + 1);
      key.erase(0, key.find_first_not_of(' '));
      key.erase(key.find_last_not_of(' ') + 1);
      if (key == "domain") {
        out.domain = domain_from_name(value);
        domain_set = true;
      } else if (key == "seed") {
        out.seed = std::strtoull(value.c_str(), nullptr, 10);
      }
      continue;
    }
    if (!header_seen) {
      if (line != "x,y,domain")
        throw FormatError("line " + std::to_string(line_no) +
                          ": expected header 'x,y,domain'");
      header_seen = true;
      continue;
    }
    const size_t c1 = line.find(',');
    const size_t c2 = c1 == std::string::npos ? std::string::npos
                                              : line.find(',', c1 + 1);
    if (c1 == std::string::npos || c2 == std::string::npos ||
        line.find(',', c2 + 1) != std::string::npos)
      throw FormatError("line " + std::to_string(line_no) +
                        ": expected three comma-separated fields");
    LabeledSample s;
    s.x = parse_double_field(line.substr(0, c1), line_no);
    s.y = parse_double_field(line.substr(c1 + 1, c2 - c1 - 1), line_no);
    const Domain row_domain = domain_from_name(line.substr(c2 + 1));
    if (!domain_set) {
      out.domain = row_domain;
      domain_set = true;
    } else if (row_domain != out.domain) {
      throw FormatError("line " + std::to_string(line_no) +
                        ": domain tag differs from dataset domain");
    }
    out.samples.push_back(s);
  }
  if (!header_seen) throw FormatError("missing 'x,y,domain' header");
  return out;
}

}  // namespace fjs::toy
