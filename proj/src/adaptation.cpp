#include "fjs/adaptation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "fjs/importance.hpp"

namespace fjs::adapt {

namespace {

constexpr double kClipLo = importance::kWeightClipLo;
constexpr double kClipHi = importance::kWeightClipHi;

// Discriminator losses below this for 100 consecutive steps trigger a
// collapse warning: the discriminator has won and the confusion gradient
// carries no signal.
constexpr double kCollapseLoss = 0.01;
constexpr int kCollapsePatience = 100;

}  // namespace

std::string method_name(Method m) {
  switch (m) {
    case Method::source_only: return "source_only";
    case Method::target_only: return "target_only";
    case Method::ssbc: return "ssbc";
    case Method::bbsc: return "bbsc";
    case Method::dann: return "dann";
    case Method::iwdan: return "iwdan";
    case Method::jiada: return "jiada";
  }
  return "unknown";
}

Method method_from_name(const std::string& s) {
  for (Method m : all_methods())
    if (method_name(m) == s) return m;
  throw std::invalid_argument("unknown method: " + s);
}

const std::vector<Method>& all_methods() {
  static const std::vector<Method> ms{
      Method::source_only, Method::target_only, Method::ssbc, Method::bbsc,
      Method::dann,        Method::iwdan,       Method::jiada};
  return ms;
}

TrainedPredictor train_plain(const toy::Dataset& data, const model::FitConfig& cfg,
                             uint64_t seed, const model::MetricsSink& sink) {
  TrainedPredictor p;
  p.model = model::fit_gaussian_regressor(data.samples, {}, cfg, seed, sink);
  p.method = data.domain == toy::Domain::source ? "source_only" : "target_only";
  p.seed = seed;
  return p;
}

SsbcResult ssbc_weights(const toy::Dataset& source, const toy::Dataset& target,
                        const model::FitConfig& cfg, uint64_t seed) {
  const long ns = static_cast<long>(source.samples.size());
  const long nt = static_cast<long>(target.samples.size());
  if (ns == 0 || nt == 0) throw std::invalid_argument("ssbc: empty dataset");

  // Binary domain classifier on raw x, balanced minibatches, logit output.
  const nets::MlpSpec spec{1, {64, 64}, 1, nets::Activation::tanh_act};
  Rng init(derive_seed(seed, "ssbc-init"));
  std::vector<double> params = nets::init_params(spec, init);
  Rng batches(derive_seed(seed, "ssbc-batches"));
  nets::Optimizer opt;
  opt.method = cfg.method;
  opt.lr = cfg.lr;
  opt.reset(params.size());

  const int half = std::max(1, cfg.batch / 2);
  const long steps = cfg.epochs * ((ns + nt + cfg.batch - 1) / cfg.batch);
  std::vector<double> xs(2 * half), dy(2 * half), grad(params.size());
  nets::BatchTape tape;
  for (long step = 0; step < steps; ++step) {
    for (int i = 0; i < half; ++i) {
      xs[i] = source.samples[batches.below(ns)].x;
      xs[half + i] = target.samples[batches.below(nt)].x;
    }
    nets::forward_batch(spec, params, xs, 2 * half, tape);
    for (int i = 0; i < 2 * half; ++i) {
      const double z = tape.output()[i];
      const double t = i < half ? 0.0 : 1.0;  // target = 1
      dy[i] = (nets::sigmoid(z) - t) / (2.0 * half);
    }
    std::fill(grad.begin(), grad.end(), 0.0);
    nets::backward_batch(spec, params, tape, dy, grad);
    opt.step(params, grad);
  }

  SsbcResult res;
  res.weights.resize(ns);
  std::vector<double> sxs(ns);
  for (long i = 0; i < ns; ++i) sxs[i] = source.samples[i].x;
  nets::forward_batch(spec, params, sxs, static_cast<int>(ns), tape);
  const double prior = static_cast<double>(ns) / static_cast<double>(nt);
  double wmin = kClipHi, wmax = kClipLo;
  for (long i = 0; i < ns; ++i) {
    // odds of "target" times n_src/n_tgt estimates the density ratio.
    const double w =
        std::clamp(std::exp(tape.output()[i]) * prior, kClipLo, kClipHi);
    res.weights[i] = w;
    wmin = std::min(wmin, w);
    wmax = std::max(wmax, w);
  }
  // Minibatch noise keeps a converged-but-uninformative classifier a few
  // percent away from exactly constant, so the band must be wider than
  // that; a genuine marginal shift on this benchmark spreads the odds by
  // several fold.
  if (wmax / wmin < 1.25) {
    res.degenerate = true;
    std::fprintf(stderr,
                 "warning: ssbc domain classifier is nearly constant "
                 "(weight range %.4f..%.4f); covariate marginals may match\n",
                 wmin, wmax);
  }
  return res;
}

namespace {

int bin_of(double y, int bins) {
  const int b = static_cast<int>((y + 1.0) * 0.5 * bins);
  return std::clamp(b, 0, bins - 1);
}

// Gaussian elimination with partial pivoting; returns false on a pivot
// smaller than 1e-10.
bool solve_linear(std::vector<double> a, std::vector<double> b, int n,
                  std::vector<double>& out) {
  for (int col = 0; col < n; ++col) {
    int piv = col;
    for (int r = col + 1; r < n; ++r)
      if (std::abs(a[r * n + col]) > std::abs(a[piv * n + col])) piv = r;
    if (std::abs(a[piv * n + col]) < 1e-10) return false;
    if (piv != col) {
      for (int c = 0; c < n; ++c) std::swap(a[col * n + c], a[piv * n + c]);
      std::swap(b[col], b[piv]);
    }
    for (int r = col + 1; r < n; ++r) {
      const double f = a[r * n + col] / a[col * n + col];
      for (int c = col; c < n; ++c) a[r * n + c] -= f * a[col * n + c];
      b[r] -= f * b[col];
    }
  }
  out.assign(n, 0.0);
  for (int r = n - 1; r >= 0; --r) {
    double acc = b[r];
    for (int c = r + 1; c < n; ++c) acc -= a[r * n + c] * out[c];
    out[r] = acc / a[r * n + r];
  }
  return true;
}

}  // namespace

BbscResult bbsc_weights(const toy::Dataset& source, const toy::Dataset& target,
                        int bins, const model::FitConfig& cfg, uint64_t seed) {
  const long ns = static_cast<long>(source.samples.size());
  const long nt = static_cast<long>(target.samples.size());
  if (ns == 0 || nt == 0) throw std::invalid_argument("bbsc: empty dataset");
  if (bins < 2) throw std::invalid_argument("bbsc: need at least two bins");

  // B-way bin classifier on x, trained on the source.
  const nets::MlpSpec spec{1, {64, 64}, bins, nets::Activation::tanh_act};
  Rng init(derive_seed(seed, "bbsc-init"));
  std::vector<double> params = nets::init_params(spec, init);
  Rng batches(derive_seed(seed, "bbsc-batches"));
  nets::Optimizer opt;
  opt.method = cfg.method;
  opt.lr = cfg.lr;
  opt.reset(params.size());

  const int batch = static_cast<int>(std::min<long>(cfg.batch, ns));
  const long steps = cfg.epochs * ((ns + cfg.batch - 1) / cfg.batch);
  std::vector<double> xs(batch), dy(static_cast<size_t>(batch) * bins),
      grad(params.size()), probs(bins);
  std::vector<int> labels(batch);
  nets::BatchTape tape;
  for (long step = 0; step < steps; ++step) {
    for (int i = 0; i < batch; ++i) {
      const auto& s = source.samples[batches.below(ns)];
      xs[i] = s.x;
      labels[i] = bin_of(s.y, bins);
    }
    nets::forward_batch(spec, params, xs, batch, tape);
    for (int i = 0; i < batch; ++i) {
      nets::softmax(
          std::span(tape.output().data() + static_cast<size_t>(i) * bins, bins),
          probs);
      for (int k = 0; k < bins; ++k)
        dy[static_cast<size_t>(i) * bins + k] =
            (probs[k] - (k == labels[i] ? 1.0 : 0.0)) / batch;
    }
    std::fill(grad.begin(), grad.end(), 0.0);
    nets::backward_batch(spec, params, tape, dy, grad);
    opt.step(params, grad);
  }

  auto argmax_bin = [&](double x) {
    const std::vector<double> z = nets::forward(spec, params, std::span(&x, 1));
    int best = 0;
    for (int k = 1; k < bins; ++k)
      if (z[k] > z[best]) best = k;
    return best;
  };

  // Hard confusion on the source training set, predicted x true.
  std::vector<double> confusion(static_cast<size_t>(bins) * bins, 0.0);
  std::vector<double> source_bin_freq(bins, 0.0);
  for (long i = 0; i < ns; ++i) {
    const int truth = bin_of(source.samples[i].y, bins);
    confusion[static_cast<size_t>(argmax_bin(source.samples[i].x)) * bins + truth] +=
        1.0 / ns;
    source_bin_freq[truth] += 1.0 / ns;
  }
  std::vector<double> mu(bins, 0.0);
  for (long i = 0; i < nt; ++i) mu[argmax_bin(target.samples[i].x)] += 1.0 / nt;

  BbscResult res;
  if (!solve_linear(confusion, mu, bins, res.bin_importance)) {
    res.singular_fallback = true;
    std::fprintf(stderr,
                 "warning: bbsc confusion matrix is singular; using ridge "
                 "least squares\n");
    // Normal equations C^T C + eps I, C^T mu.
    std::vector<double> ata(static_cast<size_t>(bins) * bins, 0.0), atb(bins, 0.0);
    for (int i = 0; i < bins; ++i)
      for (int j = 0; j < bins; ++j) {
        for (int k = 0; k < bins; ++k)
          ata[static_cast<size_t>(i) * bins + j] +=
              confusion[static_cast<size_t>(k) * bins + i] *
              confusion[static_cast<size_t>(k) * bins + j];
        if (i == j) ata[static_cast<size_t>(i) * bins + j] += 1e-8;
      }
    for (int i = 0; i < bins; ++i)
      for (int k = 0; k < bins; ++k)
        atb[i] += confusion[static_cast<size_t>(k) * bins + i] * mu[k];
    if (!solve_linear(ata, atb, bins, res.bin_importance))
      res.bin_importance.assign(bins, 1.0);
  }

  for (double& r : res.bin_importance) r = std::max(r, 0.0);
  double mean = 0.0;
  for (int k = 0; k < bins; ++k) mean += source_bin_freq[k] * res.bin_importance[k];
  if (mean <= 0.0) {
    std::fprintf(stderr, "warning: bbsc importance collapsed; using unit weights\n");
    res.bin_importance.assign(bins, 1.0);
    mean = 1.0;
  }
  for (double& r : res.bin_importance) r /= mean;

  res.weights.resize(ns);
  for (long i = 0; i < ns; ++i)
    res.weights[i] = std::clamp(res.bin_importance[bin_of(source.samples[i].y, bins)],
                                kClipLo, kClipHi);
  return res;
}

TrainedPredictor train_adversarial(const toy::Dataset& source,
                                   const toy::Dataset& target,
                                   std::span<const double> weights,
                                   const AdvConfig& adv,
                                   const model::FitConfig& cfg, uint64_t seed,
                                   const model::MetricsSink& sink) {
  if (source.samples.empty() || target.samples.empty())
    throw std::invalid_argument("train_adversarial: empty dataset");
  if (!weights.empty() && weights.size() != source.samples.size())
    throw std::invalid_argument("train_adversarial: weight count mismatch");

  TrainedPredictor out;
  out.seed = seed;
  if (adv.lambda == 0.0) {
    // No adversary at all: identical to weighted plain training.
    out.model = model::fit_gaussian_regressor(source.samples, weights, cfg, seed, sink);
    return out;
  }

  Rng init(derive_seed(seed, "regressor-init"));
  model::GaussianRegressor m = model::make_default_regressor(init);
  const nets::MlpSpec disc_spec{m.encoder_spec.output_dim, {64, 64}, 1,
                                nets::Activation::tanh_act};
  Rng disc_init(derive_seed(seed, "disc-init"));
  std::vector<double> disc_params = nets::init_params(disc_spec, disc_init);
  Rng src_batches(derive_seed(seed, "regressor-batches"));
  Rng tgt_batches(derive_seed(seed, "adv-target-batches"));

  const long ns = static_cast<long>(source.samples.size());
  const long nt = static_cast<long>(target.samples.size());
  const int bs = static_cast<int>(std::min<long>(cfg.batch, ns));
  const int bt = static_cast<int>(std::min<long>(cfg.batch, nt));
  const long steps = cfg.epochs * ((ns + cfg.batch - 1) / cfg.batch);

  nets::Optimizer opt_enc, opt_head, opt_disc;
  opt_enc.method = opt_head.method = opt_disc.method = cfg.method;
  opt_enc.lr = opt_head.lr = opt_disc.lr = cfg.lr;
  opt_enc.reset(m.encoder_params.size());
  opt_head.reset(m.head_params.size());
  opt_disc.reset(disc_params.size());

  std::vector<double> sxs(bs), sws(bs), sys(bs), txs(bt);
  std::vector<double> grad_enc(m.encoder_params.size()),
      grad_head(m.head_params.size()), grad_disc(disc_params.size()),
      disc_scratch(disc_params.size());
  std::vector<double> dy_pred(static_cast<size_t>(bs) * 2), dz_s(bs), dz_t(bt);
  std::vector<double> dfeat_pred, dfeat_adv_s, dfeat_adv_t, dfeat_total;
  nets::BatchTape enc_s, enc_t, head_tape, disc_s, disc_t;
  int collapse_run = 0;
  bool collapse_warned = false;

  for (long step = 0; step < steps; ++step) {
    const double warm = adv.warmup_frac > 0.0
                            ? std::min(1.0, static_cast<double>(step) /
                                                (adv.warmup_frac * steps))
                            : 1.0;
    const double lambda_t = adv.lambda * warm;

    for (int i = 0; i < bs; ++i) {
      const long k = static_cast<long>(src_batches.below(ns));
      sxs[i] = source.samples[k].x;
      sys[i] = source.samples[k].y;
      sws[i] = weights.empty() ? 1.0 : weights[k];
    }
    for (int j = 0; j < bt; ++j)
      txs[j] = target.samples[tgt_batches.below(nt)].x;

    nets::forward_batch(m.encoder_spec, m.encoder_params, sxs, bs, enc_s);
    nets::forward_batch(m.encoder_spec, m.encoder_params, txs, bt, enc_t);

    // Discriminator update: classify weighted source features (label 1)
    // against target features (label 0).
    nets::forward_batch(disc_spec, disc_params, enc_s.output(), bs, disc_s);
    nets::forward_batch(disc_spec, disc_params, enc_t.output(), bt, disc_t);
    double loss_disc = 0.0;
    for (int i = 0; i < bs; ++i) {
      const double z = disc_s.output()[i];
      loss_disc -= sws[i] * nets::log_sigmoid(z) / bs;
      dz_s[i] = -sws[i] * (1.0 - nets::sigmoid(z)) / bs;
    }
    for (int j = 0; j < bt; ++j) {
      const double z = disc_t.output()[j];
      loss_disc -= nets::log_sigmoid(-z) / bt;
      dz_t[j] = nets::sigmoid(z) / bt;
    }
    std::fill(grad_disc.begin(), grad_disc.end(), 0.0);
    nets::backward_batch(disc_spec, disc_params, disc_s, dz_s, grad_disc);
    nets::backward_batch(disc_spec, disc_params, disc_t, dz_t, grad_disc);
    opt_disc.step(disc_params, grad_disc);

    collapse_run = loss_disc < kCollapseLoss ? collapse_run + 1 : 0;
    if (collapse_run >= kCollapsePatience && !collapse_warned) {
      collapse_warned = true;
      std::fprintf(stderr,
                   "warning: discriminator collapse at step %ld "
                   "(loss %.5f for %d steps)\n",
                   step, loss_disc, kCollapsePatience);
    }

    // Prediction path: weighted Gaussian NLL through head and encoder.
    nets::forward_batch(m.head_spec, m.head_params, enc_s.output(), bs, head_tape);
    double loss_pred = 0.0;
    for (int i = 0; i < bs; ++i) {
      const auto g = nets::gaussian_nll(head_tape.output()[2 * i],
                                        head_tape.output()[2 * i + 1], sys[i]);
      loss_pred += sws[i] * g.loss;
      dy_pred[2 * i] = sws[i] * g.d_mu / bs;
      dy_pred[2 * i + 1] = sws[i] * g.d_raw_sigma / bs;
    }
    loss_pred /= bs;
    if (!std::isfinite(loss_pred))
      throw model::NonFiniteLoss("prediction loss diverged at step " +
                                 std::to_string(step));
    std::fill(grad_head.begin(), grad_head.end(), 0.0);
    std::fill(grad_enc.begin(), grad_enc.end(), 0.0);
    nets::backward_batch(m.head_spec, m.head_params, head_tape, dy_pred,
                         grad_head, &dfeat_pred);

    if (lambda_t > 0.0) {
      // Confusion pull on the encoder through the refreshed discriminator;
      // its parameters stay frozen here.
      nets::forward_batch(disc_spec, disc_params, enc_s.output(), bs, disc_s);
      nets::forward_batch(disc_spec, disc_params, enc_t.output(), bt, disc_t);
      for (int i = 0; i < bs; ++i)
        dz_s[i] = lambda_t * sws[i] * (1.0 - nets::sigmoid(disc_s.output()[i])) / bs;
      for (int j = 0; j < bt; ++j)
        dz_t[j] = -lambda_t * nets::sigmoid(disc_t.output()[j]) / bt;
      std::fill(disc_scratch.begin(), disc_scratch.end(), 0.0);
      nets::backward_batch(disc_spec, disc_params, disc_s, dz_s, disc_scratch,
                           &dfeat_adv_s);
      nets::backward_batch(disc_spec, disc_params, disc_t, dz_t, disc_scratch,
                           &dfeat_adv_t);
      dfeat_total.assign(dfeat_pred.size(), 0.0);
      for (size_t k = 0; k < dfeat_total.size(); ++k)
        dfeat_total[k] = dfeat_pred[k] + dfeat_adv_s[k];
      nets::backward_batch(m.encoder_spec, m.encoder_params, enc_s, dfeat_total,
                           grad_enc);
      nets::backward_batch(m.encoder_spec, m.encoder_params, enc_t, dfeat_adv_t,
                           grad_enc);
    } else {
      nets::backward_batch(m.encoder_spec, m.encoder_params, enc_s, dfeat_pred,
                           grad_enc);
    }
    opt_head.step(m.head_params, grad_head);
    opt_enc.step(m.encoder_params, grad_enc);
    if (sink) sink(step, loss_pred, loss_disc, lambda_t);
  }
  out.model = std::move(m);
  return out;
}

nets::GaussianPrediction predict(const TrainedPredictor& p, double x) {
  return p.model.predict(x);
}

double evaluate_nll(const model::GaussianRegressor& model,
                    const toy::Dataset& data) {
  if (data.samples.empty()) throw std::invalid_argument("evaluate: empty dataset");
  const int n = static_cast<int>(data.samples.size());
  std::vector<double> xs(n);
  for (int i = 0; i < n; ++i) xs[i] = data.samples[i].x;
  nets::BatchTape enc, head;
  nets::forward_batch(model.encoder_spec, model.encoder_params, xs, n, enc);
  nets::forward_batch(model.head_spec, model.head_params, enc.output(), n, head);
  double total = 0.0;
  for (int i = 0; i < n; ++i)
    total += nets::gaussian_nll(head.output()[2 * i], head.output()[2 * i + 1],
                                data.samples[i].y)
                 .loss;
  return total / n;
}

void save_checkpoint(const TrainedPredictor& p, const std::string& path) {
  nlohmann::json j{{"method", p.method},
                   {"seed", p.seed},
                   {"model", model::regressor_to_json(p.model)}};
  std::ofstream out(path);
  if (!out) throw toy::IoError("cannot open for writing: " + path);
  out << j.dump(2) << "\n";
  if (!out) throw toy::IoError("write failed: " + path);
}

TrainedPredictor load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw toy::IoError("cannot open for reading: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw toy::FormatError("bad checkpoint json: " + std::string(e.what()));
  }
  TrainedPredictor p;
  p.method = j.at("method").get<std::string>();
  p.seed = j.at("seed").get<uint64_t>();
  p.model = model::regressor_from_json(j.at("model"));
  return p;
}

}  // namespace fjs::adapt
