#include "fjs/importance.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace fjs::importance {

namespace {

// Floor applied inside log(1 + 1/P) and its gradient so an underflowing
// product cannot produce infinities.
constexpr double kProdFloor = 1e-12;

// Fixed feature scale on the V net input. Per-region sample means of U*V
// blur whatever transition the net ramps through, so the net must be able
// to turn over within a small fraction of the O(1) label range; scaling the
// input steepens the attainable slope without changing the function class.
constexpr double kVInputScale = 2.0;

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

// Inverse standard normal CDF by bisection; precompute-only, so the cost
// of avoiding rational-approximation constants does not matter.
double normal_quantile(double p) {
  p = std::clamp(p, 1e-15, 1.0 - 1e-15);
  double lo = -40.0, hi = 40.0;
  for (int it = 0; it < 100; ++it) {
    const double mid = 0.5 * (lo + hi);
    (normal_cdf(mid) < p ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

struct UEval {
  nets::BatchTape tape;
  std::vector<double> probs;   // batch x K
  std::vector<double> scores;  // exp(log_scores)
  std::vector<double> value;   // batch
};

void u_forward(const UModel& u, std::span<const double> xs, UEval& ev) {
  const int batch = static_cast<int>(xs.size());
  const int K = u.clusters();
  nets::forward_batch(u.classifier_spec, u.classifier_params, xs, batch, ev.tape);
  ev.scores.resize(K);
  for (int k = 0; k < K; ++k) ev.scores[k] = std::exp(u.log_scores[k]);
  ev.probs.assign(static_cast<size_t>(batch) * K, 0.0);
  ev.value.assign(batch, 0.0);
  const std::vector<double>& z = ev.tape.output();
  for (int i = 0; i < batch; ++i) {
    nets::softmax(std::span(z.data() + static_cast<size_t>(i) * K, K),
                  std::span(ev.probs.data() + static_cast<size_t>(i) * K, K));
    double acc = 0.0;
    for (int k = 0; k < K; ++k)
      acc += ev.scores[k] * ev.probs[static_cast<size_t>(i) * K + k];
    ev.value[i] = acc;
  }
}

// du holds dL/dU(x_i) with any batch scaling already applied.
void u_backward(const UModel& u, const UEval& ev, std::span<const double> du,
                std::span<double> grad_classifier,
                std::span<double> grad_log_scores) {
  const int batch = static_cast<int>(du.size());
  const int K = u.clusters();
  std::vector<double> dz(static_cast<size_t>(batch) * K);
  for (int i = 0; i < batch; ++i) {
    for (int k = 0; k < K; ++k) {
      const double c = ev.probs[static_cast<size_t>(i) * K + k];
      dz[static_cast<size_t>(i) * K + k] =
          du[i] * c * (ev.scores[k] - ev.value[i]);
      grad_log_scores[k] += du[i] * ev.scores[k] * c;
    }
  }
  nets::backward_batch(u.classifier_spec, u.classifier_params, ev.tape, dz,
                       grad_classifier);
}

struct VEval {
  nets::BatchTape tape;
  std::vector<double> scaled;  // batch, kVInputScale * y
  std::vector<double> value;   // batch
};

void v_forward(const VModel& v, std::span<const double> ys, VEval& ev) {
  const int batch = static_cast<int>(ys.size());
  ev.scaled.assign(ys.begin(), ys.end());
  for (double& y : ev.scaled) y *= kVInputScale;
  nets::forward_batch(v.spec, v.params, ev.scaled, batch, ev.tape);
  ev.value.assign(batch, 0.0);
  for (int i = 0; i < batch; ++i) ev.value[i] = std::exp(ev.tape.output()[i]);
}

void v_backward(const VModel& v, const VEval& ev, std::span<const double> dv,
                std::span<double> grad) {
  std::vector<double> draw(dv.size());
  for (size_t i = 0; i < dv.size(); ++i) draw[i] = dv[i] * ev.value[i];
  nets::backward_batch(v.spec, v.params, ev.tape, draw, grad);
}

// log(1 + P) term and its dP for one source row.
inline double src_term(double prod, double scale, double& d_prod) {
  d_prod = scale / (1.0 + prod);
  return scale * std::log1p(prod);
}

// log(1 + 1/P) term and its dP for one target row.
inline double tgt_term(double prod, double scale, double& d_prod) {
  const double p = std::max(prod, kProdFloor);
  d_prod = prod > kProdFloor ? -scale / (p * (1.0 + p)) : 0.0;
  return scale * std::log1p(1.0 / p);
}

}  // namespace

std::vector<double> UModel::cluster_probs(double x) const {
  const std::vector<double> z =
      nets::forward(classifier_spec, classifier_params, std::span(&x, 1));
  std::vector<double> probs(z.size());
  nets::softmax(z, probs);
  return probs;
}

double UModel::value(double x) const {
  const std::vector<double> probs = cluster_probs(x);
  double acc = 0.0;
  for (size_t k = 0; k < probs.size(); ++k)
    acc += std::exp(log_scores[k]) * probs[k];
  return acc;
}

double VModel::value(double y) const {
  const double ys = kVInputScale * y;
  return std::exp(nets::forward(spec, params, std::span(&ys, 1))[0]);
}

UModel make_u_model(int clusters, Rng& rng) {
  if (clusters < 1) throw std::invalid_argument("u model: clusters < 1");
  UModel u;
  u.classifier_spec = {1, {32}, clusters, nets::Activation::tanh_act};
  u.classifier_params = nets::init_params(u.classifier_spec, rng);
  u.log_scores.resize(clusters);
  // Non-equal initial scores: with equal scores the classifier sits on a
  // saddle where U is constant and receives no gradient.
  for (double& s : u.log_scores) s = 0.1 * rng.normal();
  return u;
}

VModel make_v_model(Rng& rng) {
  VModel v;
  v.spec = {1, {32}, 1, nets::Activation::tanh_act};
  v.params = nets::init_params(v.spec, rng);
  // Shrink the output layer: V starts near 1, so directions of y-space the
  // objective never constrains keep a near-flat value instead of init noise,
  // while the residual randomness keeps V off the V-constant saddle.
  const long head = nets::param_count(v.spec) - (32 + 1);
  for (size_t i = static_cast<size_t>(head); i < v.params.size(); ++i)
    v.params[i] *= 0.1;
  return v;
}

nlohmann::json jia_config_to_json(const JiaConfig& cfg) {
  return {{"clusters", cfg.clusters},
          {"mc_samples", cfg.mc_samples},
          {"epochs", cfg.epochs},
          {"batch", cfg.batch},
          {"lr", cfg.lr},
          {"conditional", model::fit_config_to_json(cfg.conditional)}};
}

JiaConfig jia_config_from_json(const nlohmann::json& j) {
  JiaConfig cfg;
  if (j.contains("clusters")) cfg.clusters = j.at("clusters").get<int>();
  if (j.contains("mc_samples")) cfg.mc_samples = j.at("mc_samples").get<int>();
  if (j.contains("epochs")) cfg.epochs = j.at("epochs").get<long>();
  if (j.contains("batch")) cfg.batch = j.at("batch").get<int>();
  if (j.contains("lr")) cfg.lr = j.at("lr").get<double>();
  if (j.contains("conditional"))
    cfg.conditional = model::fit_config_from_json(j.at("conditional"));
  return cfg;
}

double weight(const UModel& u, const VModel& v, double x, double y) {
  return std::clamp(u.value(x) * v.value(y), kWeightClipLo, kWeightClipHi);
}

void scale_factors(UModel& u, VModel& v, double k) {
  if (!(k > 0.0)) throw std::invalid_argument("scale_factors: k must be positive");
  const double lk = std::log(k);
  for (double& s : u.log_scores) s += lk;
  v.output_bias() -= lk;
}

double normalize_factors(UModel& u, VModel& v,
                         std::span<const toy::LabeledSample> source) {
  if (source.empty())
    throw std::invalid_argument("normalize_factors: empty source");
  UEval ue;
  VEval ve;
  std::vector<double> xs(source.size()), ys(source.size());
  for (size_t i = 0; i < source.size(); ++i) {
    xs[i] = source[i].x;
    ys[i] = source[i].y;
  }
  u_forward(u, xs, ue);
  v_forward(v, ys, ve);
  double mean = 0.0;
  for (size_t i = 0; i < source.size(); ++i) mean += ue.value[i] * ve.value[i];
  mean /= static_cast<double>(source.size());
  if (!(mean > 0.0) || !std::isfinite(mean))
    throw std::invalid_argument("normalize_factors: degenerate source mean");
  v.output_bias() -= std::log(mean);
  return mean;
}

double l_sup_value(const UModel& u, const VModel& v,
                   std::span<const toy::LabeledSample> source,
                   std::span<const toy::LabeledSample> target) {
  UEval ue;
  VEval ve;
  double loss = 0.0;
  double d;
  {
    std::vector<double> xs(source.size()), ys(source.size());
    for (size_t i = 0; i < source.size(); ++i) {
      xs[i] = source[i].x;
      ys[i] = source[i].y;
    }
    u_forward(u, xs, ue);
    v_forward(v, ys, ve);
    for (size_t i = 0; i < source.size(); ++i)
      loss += src_term(ue.value[i] * ve.value[i], 1.0 / source.size(), d);
  }
  {
    std::vector<double> xs(target.size()), ys(target.size());
    for (size_t i = 0; i < target.size(); ++i) {
      xs[i] = target[i].x;
      ys[i] = target[i].y;
    }
    u_forward(u, xs, ue);
    v_forward(v, ys, ve);
    for (size_t i = 0; i < target.size(); ++i)
      loss += tgt_term(ue.value[i] * ve.value[i], 1.0 / target.size(), d);
  }
  return loss;
}

double l_unsup_value(const UModel& u, const VModel& v,
                     const model::GaussianRegressor& conditional,
                     int mc_samples, std::span<const double> source_x,
                     std::span<const double> target_x,
                     std::span<const double> eps) {
  const size_t n = source_x.size() + target_x.size();
  if (eps.size() != n * static_cast<size_t>(mc_samples))
    throw std::invalid_argument("l_unsup_value: eps size mismatch");
  std::vector<double> xs;
  xs.reserve(n);
  xs.insert(xs.end(), source_x.begin(), source_x.end());
  xs.insert(xs.end(), target_x.begin(), target_x.end());

  nets::BatchTape enc, head;
  nets::forward_batch(conditional.encoder_spec, conditional.encoder_params, xs,
                      static_cast<int>(n), enc);
  nets::forward_batch(conditional.head_spec, conditional.head_params,
                      enc.output(), static_cast<int>(n), head);
  std::vector<double> ys(n * mc_samples);
  for (size_t i = 0; i < n; ++i) {
    const double mu = head.output()[2 * i];
    const double sigma = std::exp(head.output()[2 * i + 1]);
    for (int m = 0; m < mc_samples; ++m)
      ys[i * mc_samples + m] = mu + sigma * eps[i * mc_samples + m];
  }
  UEval ue;
  VEval ve;
  u_forward(u, xs, ue);
  v_forward(v, ys, ve);
  double loss = 0.0;
  double d;
  for (size_t i = 0; i < n; ++i) {
    double vtilde = 0.0;
    for (int m = 0; m < mc_samples; ++m) vtilde += ve.value[i * mc_samples + m];
    vtilde /= mc_samples;
    const double prod = ue.value[i] * vtilde;
    if (i < source_x.size())
      loss += src_term(prod, 1.0 / source_x.size(), d);
    else
      loss += tgt_term(prod, 1.0 / target_x.size(), d);
  }
  return loss;
}

namespace {

struct JiaParams {
  UModel u;
  VModel v;
};

struct JiaOptimizers {
  nets::Optimizer classifier, scores, vnet;
  void reset(const JiaParams& p, double lr) {
    classifier.lr = scores.lr = vnet.lr = lr;
    classifier.reset(p.u.classifier_params.size());
    scores.reset(p.u.log_scores.size());
    vnet.reset(p.v.params.size());
  }
};

}  // namespace

FitResult fit_supervised(const toy::Dataset& source, const toy::Dataset& target,
                         const JiaConfig& cfg, uint64_t seed,
                         const model::MetricsSink& sink) {
  if (source.samples.empty() || target.samples.empty())
    throw std::invalid_argument("fit_supervised: empty dataset");
  Rng init(derive_seed(seed, "jia-init"));
  JiaParams p{make_u_model(cfg.clusters, init), make_v_model(init)};
  Rng batches(derive_seed(seed, "jia-batches"));

  const long ns = static_cast<long>(source.samples.size());
  const long nt = static_cast<long>(target.samples.size());
  const int bs = static_cast<int>(std::min<long>(cfg.batch, ns));
  const int bt = static_cast<int>(std::min<long>(cfg.batch, nt));
  const long steps = cfg.epochs * ((ns + cfg.batch - 1) / cfg.batch);

  JiaOptimizers opt;
  opt.reset(p, cfg.lr);

  FitResult res;
  JiaParams snapshot = p;
  std::vector<double> xs(bs + bt), ys(bs + bt), du(bs + bt), dv(bs + bt);
  std::vector<double> gc(p.u.classifier_params.size()),
      gs(p.u.log_scores.size()), gv(p.v.params.size());
  UEval ue;
  VEval ve;
  double loss = 0.0;
  for (long step = 0; step < steps; ++step) {
    for (int i = 0; i < bs; ++i) {
      const auto& s = source.samples[batches.below(ns)];
      xs[i] = s.x;
      ys[i] = s.y;
    }
    for (int j = 0; j < bt; ++j) {
      const auto& s = target.samples[batches.below(nt)];
      xs[bs + j] = s.x;
      ys[bs + j] = s.y;
    }
    u_forward(p.u, xs, ue);
    v_forward(p.v, ys, ve);
    loss = 0.0;
    for (int i = 0; i < bs + bt; ++i) {
      const double prod = ue.value[i] * ve.value[i];
      double d_prod;
      loss += i < bs ? src_term(prod, 1.0 / bs, d_prod)
                     : tgt_term(prod, 1.0 / bt, d_prod);
      du[i] = ve.value[i] * d_prod;
      dv[i] = ue.value[i] * d_prod;
    }
    if (!std::isfinite(loss)) {
      p = snapshot;
      res.aborted_early = true;
      break;
    }
    std::fill(gc.begin(), gc.end(), 0.0);
    std::fill(gs.begin(), gs.end(), 0.0);
    std::fill(gv.begin(), gv.end(), 0.0);
    u_backward(p.u, ue, du, gc, gs);
    v_backward(p.v, ve, dv, gv);
    opt.classifier.step(p.u.classifier_params, gc);
    opt.scores.step(p.u.log_scores, gs);
    opt.vnet.step(p.v.params, gv);
    if (sink) sink(step, loss, 0.0, 0.0);
    if (step % 50 == 0) snapshot = p;
  }
  res.normalizer = normalize_factors(p.u, p.v, source.samples);
  res.u = std::move(p.u);
  res.v = std::move(p.v);
  res.final_loss = loss;
  return res;
}

FitResult fit_unsupervised(const toy::Dataset& source, const toy::Dataset& target,
                           const JiaConfig& cfg, uint64_t seed,
                           const model::MetricsSink& sink) {
  if (source.samples.empty() || target.samples.empty())
    throw std::invalid_argument("fit_unsupervised: empty dataset");
  FitResult res;
  res.conditional = model::fit_gaussian_regressor(
      source.samples, {}, cfg.conditional, derive_seed(seed, "jia-conditional"));
  res.has_conditional = true;
  const model::GaussianRegressor& cond = res.conditional;

  Rng init(derive_seed(seed, "jia-init"));
  JiaParams p{make_u_model(cfg.clusters, init), make_v_model(init)};
  Rng batches(derive_seed(seed, "jia-batches"));
  Rng noise(derive_seed(seed, "jia-noise"));

  const long ns = static_cast<long>(source.samples.size());
  const long nt = static_cast<long>(target.samples.size());
  const int bs = static_cast<int>(std::min<long>(cfg.batch, ns));
  const int bt = static_cast<int>(std::min<long>(cfg.batch, nt));
  const int M = cfg.mc_samples;
  const long steps = cfg.epochs * ((ns + cfg.batch - 1) / cfg.batch);

  // The conditional is frozen, so each point's M reparameterized draws are
  // fixed up front (source points first, then target, m-major). Reusing
  // the same draws every step makes the objective deterministic, and
  // stratifying each point's draws over the M probability bins kills the
  // mixing-fraction noise that would otherwise flatten the learned V.
  const long n_all = ns + nt;
  std::vector<double> x_all(n_all);
  for (long i = 0; i < ns; ++i) x_all[i] = source.samples[i].x;
  for (long j = 0; j < nt; ++j) x_all[ns + j] = target.samples[j].x;
  std::vector<double> ymc_all(static_cast<size_t>(n_all) * M);
  {
    nets::BatchTape enc_all, head_all;
    nets::forward_batch(cond.encoder_spec, cond.encoder_params, x_all,
                        static_cast<int>(n_all), enc_all);
    nets::forward_batch(cond.head_spec, cond.head_params, enc_all.output(),
                        static_cast<int>(n_all), head_all);
    for (long i = 0; i < n_all; ++i) {
      const double mu = head_all.output()[2 * i];
      const double sigma = std::exp(head_all.output()[2 * i + 1]);
      for (int m = 0; m < M; ++m)
        ymc_all[static_cast<size_t>(i) * M + m] =
            mu + sigma * normal_quantile((m + noise.uniform()) / M);
    }
  }

  JiaOptimizers opt;
  opt.reset(p, cfg.lr);

  JiaParams snapshot = p;
  const int B = bs + bt;
  std::vector<double> xs(B), du(B), vtilde(B), dmc(static_cast<size_t>(B) * M),
      ymc(static_cast<size_t>(B) * M);
  std::vector<double> gc(p.u.classifier_params.size()),
      gs(p.u.log_scores.size()), gv(p.v.params.size());
  UEval ue;
  VEval ve;
  double loss = 0.0;
  for (long step = 0; step < steps; ++step) {
    for (int i = 0; i < B; ++i) {
      const long row = i < bs ? static_cast<long>(batches.below(ns))
                              : ns + static_cast<long>(batches.below(nt));
      xs[i] = x_all[row];
      std::copy_n(ymc_all.begin() + row * M, M,
                  ymc.begin() + static_cast<size_t>(i) * M);
    }
    u_forward(p.u, xs, ue);
    v_forward(p.v, ymc, ve);
    loss = 0.0;
    for (int i = 0; i < B; ++i) {
      double vt = 0.0;
      for (int m = 0; m < M; ++m) vt += ve.value[static_cast<size_t>(i) * M + m];
      vtilde[i] = vt / M;
      const double prod = ue.value[i] * vtilde[i];
      double d_prod;
      loss += i < bs ? src_term(prod, 1.0 / bs, d_prod)
                     : tgt_term(prod, 1.0 / bt, d_prod);
      du[i] = vtilde[i] * d_prod;
      const double dvt = ue.value[i] * d_prod;
      for (int m = 0; m < M; ++m)
        dmc[static_cast<size_t>(i) * M + m] = dvt / M;
    }
    if (!std::isfinite(loss)) {
      p = snapshot;
      res.aborted_early = true;
      break;
    }
    std::fill(gc.begin(), gc.end(), 0.0);
    std::fill(gs.begin(), gs.end(), 0.0);
    std::fill(gv.begin(), gv.end(), 0.0);
    u_backward(p.u, ue, du, gc, gs);
    v_backward(p.v, ve, dmc, gv);
    opt.classifier.step(p.u.classifier_params, gc);
    opt.scores.step(p.u.log_scores, gs);
    opt.vnet.step(p.v.params, gv);
    if (sink) sink(step, loss, 0.0, 0.0);
    if (step % 50 == 0) snapshot = p;
  }
  res.normalizer = normalize_factors(p.u, p.v, source.samples);
  res.u = std::move(p.u);
  res.v = std::move(p.v);
  res.final_loss = loss;
  return res;
}

double discrete_l_sup(const theory::DiscreteJoint& s,
                      const theory::DiscreteJoint& t,
                      const std::vector<double>& u,
                      const std::vector<double>& v) {
  double loss = 0.0;
  double d;
  for (int i = 0; i < s.nx; ++i)
    for (int j = 0; j < s.ny; ++j) {
      const double prod = u[i] * v[j];
      if (s.at(i, j) > 0.0) loss += src_term(prod, s.at(i, j), d);
      if (t.at(i, j) > 0.0) loss += tgt_term(prod, t.at(i, j), d);
    }
  return loss;
}

double discrete_l_unsup(const theory::DiscreteJoint& s,
                        const theory::DiscreteJoint& t,
                        const std::vector<double>& u,
                        const std::vector<double>& v) {
  const std::vector<double> psx = s.x_marginal();
  const std::vector<double> ptx = t.x_marginal();
  double loss = 0.0;
  double d;
  for (int i = 0; i < s.nx; ++i) {
    if (psx[i] <= 0.0) continue;
    double vtilde = 0.0;
    for (int j = 0; j < s.ny; ++j) vtilde += s.at(i, j) / psx[i] * v[j];
    const double prod = u[i] * vtilde;
    loss += src_term(prod, psx[i], d);
    if (ptx[i] > 0.0) loss += tgt_term(prod, ptx[i], d);
  }
  return loss;
}

namespace {

DiscreteFitResult run_discrete_fit(const theory::DiscreteJoint& s,
                                   const theory::DiscreteJoint& t, long iters,
                                   double lr, uint64_t seed, bool unsupervised) {
  const int nx = s.nx, ny = s.ny;
  Rng rng(derive_seed(seed, "discrete-fit"));
  std::vector<double> lu(nx), lv(ny);
  for (double& x : lu) x = 0.01 * rng.normal();
  for (double& x : lv) x = 0.01 * rng.normal();
  const std::vector<double> psx = s.x_marginal();
  const std::vector<double> ptx = t.x_marginal();

  std::vector<double> glu(nx), glv(ny), vtilde(nx);
  nets::Optimizer olu, olv;
  // Three phases with a decaying rate polish the optimum to well below
  // the comparison tolerance.
  const long phase = std::max<long>(1, iters / 3);
  long done = 0;
  for (int ph = 0; ph < 3 && done < iters; ++ph) {
    const double rate = lr / std::pow(10.0, ph);
    olu.lr = olv.lr = rate;
    olu.reset(lu.size());
    olv.reset(lv.size());
    const long todo = ph == 2 ? iters - done : std::min(phase, iters - done);
    for (long it = 0; it < todo; ++it, ++done) {
      std::fill(glu.begin(), glu.end(), 0.0);
      std::fill(glv.begin(), glv.end(), 0.0);
      if (!unsupervised) {
        for (int i = 0; i < nx; ++i)
          for (int j = 0; j < ny; ++j) {
            const double tt = lu[i] + lv[j];
            const double g = s.at(i, j) * nets::sigmoid(tt) -
                             t.at(i, j) * nets::sigmoid(-tt);
            glu[i] += g;
            glv[j] += g;
          }
      } else {
        for (int i = 0; i < nx; ++i) {
          if (psx[i] <= 0.0) continue;
          double vt = 0.0;
          for (int j = 0; j < ny; ++j)
            vt += s.at(i, j) / psx[i] * std::exp(lv[j]);
          vtilde[i] = vt;
          const double tt = lu[i] + std::log(vt);
          const double g =
              psx[i] * nets::sigmoid(tt) - ptx[i] * nets::sigmoid(-tt);
          glu[i] += g;
          for (int j = 0; j < ny; ++j)
            glv[j] += g * (s.at(i, j) / psx[i]) * std::exp(lv[j]) / vt;
        }
      }
      olu.step(lu, glu);
      olv.step(lv, glv);
    }
  }
  DiscreteFitResult res;
  res.u.resize(nx);
  res.v.resize(ny);
  for (int i = 0; i < nx; ++i) res.u[i] = std::exp(lu[i]);
  for (int j = 0; j < ny; ++j) res.v[j] = std::exp(lv[j]);
  res.objective = unsupervised ? discrete_l_unsup(s, t, res.u, res.v)
                               : discrete_l_sup(s, t, res.u, res.v);
  return res;
}

}  // namespace

DiscreteFitResult fit_discrete_sup(const theory::DiscreteJoint& s,
                                   const theory::DiscreteJoint& t, long iters,
                                   double lr, uint64_t seed) {
  return run_discrete_fit(s, t, iters, lr, seed, false);
}

DiscreteFitResult fit_discrete_unsup(const theory::DiscreteJoint& s,
                                     const theory::DiscreteJoint& t, long iters,
                                     double lr, uint64_t seed) {
  return run_discrete_fit(s, t, iters, lr, seed, true);
}

void write_importance_grid(const UModel& u, const VModel& v,
                           const toy::HexagonSpec& hex,
                           const toy::GroundTruthFactors* gt,
                           const std::string& path, int n,
                           const std::string& preamble) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw toy::IoError("cannot open for writing: " + path);
  if (!preamble.empty()) std::fprintf(f, "%s", preamble.c_str());
  std::fprintf(f, gt ? "x,y,u,v,w,w_true\n" : "x,y,u,v,w\n");
  for (int iy = 0; iy < n; ++iy) {
    const double y = -1.0 + 2.0 * iy / (n - 1);
    for (int ix = 0; ix < n; ++ix) {
      const double x = -1.0 + 2.0 * ix / (n - 1);
      if (!toy::contains(hex, x, y)) continue;
      const double uu = u.value(x);
      const double vv = v.value(y);
      if (gt) {
        const double wt = gt->quadrant_weight[toy::quadrant_of(x, y)];
        std::fprintf(f, "%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", x, y, uu, vv,
                     uu * vv, wt);
      } else {
        std::fprintf(f, "%.17g,%.17g,%.17g,%.17g,%.17g\n", x, y, uu, vv, uu * vv);
      }
    }
  }
  if (std::fclose(f) != 0) throw toy::IoError("write failed: " + path);
}

std::array<double, 4> quadrant_mean_weight(const UModel& u, const VModel& v,
                                           const toy::HexagonSpec& hex, int n) {
  std::array<double, 4> total{0.0, 0.0, 0.0, 0.0};
  std::array<long, 4> count{0, 0, 0, 0};
  for (int iy = 0; iy < n; ++iy) {
    const double y = -1.0 + 2.0 * iy / (n - 1);
    for (int ix = 0; ix < n; ++ix) {
      const double x = -1.0 + 2.0 * ix / (n - 1);
      if (!toy::contains(hex, x, y)) continue;
      const int q = toy::quadrant_of(x, y);
      total[q] += u.value(x) * v.value(y);
      ++count[q];
    }
  }
  std::array<double, 4> mean{};
  for (int q = 0; q < 4; ++q)
    mean[q] = count[q] > 0 ? total[q] / count[q] : 0.0;
  return mean;
}

double cluster_sign_purity(const UModel& u, int n) {
  const int K = u.clusters();
  std::vector<std::array<long, 2>> hits(K, {0, 0});
  for (int i = 0; i < n; ++i) {
    const double x = -1.0 + 2.0 * i / (n - 1);
    const std::vector<double> probs = u.cluster_probs(x);
    int best = 0;
    for (int k = 1; k < K; ++k)
      if (probs[k] > probs[best]) best = k;
    ++hits[best][x >= 0.0 ? 0 : 1];
  }
  long agree = 0;
  for (int k = 0; k < K; ++k) agree += std::max(hits[k][0], hits[k][1]);
  return static_cast<double>(agree) / n;
}

nlohmann::json factors_to_json(const UModel& u, const VModel& v) {
  return {{"classifier_spec", model::mlp_spec_to_json(u.classifier_spec)},
          {"classifier_params", u.classifier_params},
          {"log_scores", u.log_scores},
          {"v_spec", model::mlp_spec_to_json(v.spec)},
          {"v_params", v.params}};
}

std::pair<UModel, VModel> factors_from_json(const nlohmann::json& j) {
  UModel u;
  u.classifier_spec = model::mlp_spec_from_json(j.at("classifier_spec"));
  u.classifier_params = j.at("classifier_params").get<std::vector<double>>();
  u.log_scores = j.at("log_scores").get<std::vector<double>>();
  VModel v;
  v.spec = model::mlp_spec_from_json(j.at("v_spec"));
  v.params = j.at("v_params").get<std::vector<double>>();
  if (u.classifier_params.size() !=
          static_cast<size_t>(nets::param_count(u.classifier_spec)) ||
      v.params.size() != static_cast<size_t>(nets::param_count(v.spec)))
    throw std::invalid_argument("factor checkpoint: parameter count mismatch");
  return {std::move(u), std::move(v)};
}

}  // namespace fjs::importance
