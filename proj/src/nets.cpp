#include "fjs/nets.hpp"

#include <algorithm>
#include <cmath>

namespace fjs::nets {

namespace {

constexpr double kHalfLogTwoPi = 0.91893853320467274178;

struct LayerView {
  int in = 0, out = 0;
  const double* w = nullptr;  // out x in, row-major
  const double* b = nullptr;
};

std::vector<LayerView> layer_views(const MlpSpec& spec,
                                   std::span<const double> params) {
  const std::vector<int> dims = spec.dims();
  std::vector<LayerView> views;
  size_t off = 0;
  for (size_t l = 0; l + 1 < dims.size(); ++l) {
    LayerView v;
    v.in = dims[l];
    v.out = dims[l + 1];
    v.w = params.data() + off;
    off += static_cast<size_t>(v.in) * v.out;
    v.b = params.data() + off;
    off += v.out;
    views.push_back(v);
  }
  if (off != params.size())
    throw DimensionMismatch("parameter vector has " + std::to_string(params.size()) +
                            " entries, spec needs " + std::to_string(off));
  return views;
}

inline double activate(Activation a, double z) {
  return a == Activation::tanh_act ? std::tanh(z) : (z > 0.0 ? z : 0.0);
}

// Derivative expressed through the activation output.
inline double activate_grad(Activation a, double out) {
  return a == Activation::tanh_act ? 1.0 - out * out : (out > 0.0 ? 1.0 : 0.0);
}

}  // namespace

std::vector<int> MlpSpec::dims() const {
  std::vector<int> d;
  d.push_back(input_dim);
  d.insert(d.end(), hidden.begin(), hidden.end());
  d.push_back(output_dim);
  return d;
}

long param_count(const MlpSpec& spec) {
  const std::vector<int> d = spec.dims();
  long n = 0;
  for (size_t l = 0; l + 1 < d.size(); ++l)
    n += static_cast<long>(d[l]) * d[l + 1] + d[l + 1];
  return n;
}

std::vector<double> init_params(const MlpSpec& spec, Rng& rng) {
  const std::vector<int> d = spec.dims();
  std::vector<double> params;
  params.reserve(param_count(spec));
  for (size_t l = 0; l + 1 < d.size(); ++l) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(d[l]));
    for (long k = 0; k < static_cast<long>(d[l]) * d[l + 1]; ++k)
      params.push_back(rng.uniform(-bound, bound));
    for (int k = 0; k < d[l + 1]; ++k) params.push_back(0.0);
  }
  return params;
}

void forward_batch(const MlpSpec& spec, std::span<const double> params,
                   std::span<const double> x, int batch, BatchTape& tape) {
  if (static_cast<size_t>(batch) * spec.input_dim != x.size())
    throw DimensionMismatch("forward: input is not batch x input_dim");
  const auto views = layer_views(spec, params);
  tape.batch = batch;
  tape.acts.resize(views.size() + 1);
  tape.acts[0].assign(x.begin(), x.end());
  for (size_t l = 0; l < views.size(); ++l) {
    const LayerView& lv = views[l];
    const std::vector<double>& in = tape.acts[l];
    std::vector<double>& out = tape.acts[l + 1];
    out.assign(static_cast<size_t>(batch) * lv.out, 0.0);
    const bool last = l + 1 == views.size();
    for (int i = 0; i < batch; ++i) {
      const double* xi = in.data() + static_cast<size_t>(i) * lv.in;
      double* oi = out.data() + static_cast<size_t>(i) * lv.out;
      for (int o = 0; o < lv.out; ++o) {
        const double* wr = lv.w + static_cast<size_t>(o) * lv.in;
        double acc = lv.b[o];
        for (int k = 0; k < lv.in; ++k) acc += wr[k] * xi[k];
        oi[o] = last ? acc : activate(spec.activation, acc);
      }
    }
  }
}

void backward_batch(const MlpSpec& spec, std::span<const double> params,
                    const BatchTape& tape, std::span<const double> dy,
                    std::span<double> grad, std::vector<double>* dx) {
  const auto views = layer_views(spec, params);
  if (grad.size() != params.size())
    throw DimensionMismatch("backward: gradient buffer size mismatch");
  if (dy.size() != tape.output().size())
    throw DimensionMismatch("backward: dy is not batch x output_dim");
  const int batch = tape.batch;

  std::vector<double> cur(dy.begin(), dy.end());
  std::vector<double> prev;
  // Gradient offsets mirror layer_views' walk over params.
  std::vector<size_t> offsets(views.size());
  {
    size_t off = 0;
    for (size_t l = 0; l < views.size(); ++l) {
      offsets[l] = off;
      off += static_cast<size_t>(views[l].in) * views[l].out + views[l].out;
    }
  }
  for (size_t l = views.size(); l-- > 0;) {
    const LayerView& lv = views[l];
    const bool last = l + 1 == views.size();
    const std::vector<double>& in = tape.acts[l];
    const std::vector<double>& out = tape.acts[l + 1];
    double* gw = grad.data() + offsets[l];
    double* gb = gw + static_cast<size_t>(lv.in) * lv.out;
    if (!last) {
      for (int i = 0; i < batch; ++i) {
        const double* oi = out.data() + static_cast<size_t>(i) * lv.out;
        double* ci = cur.data() + static_cast<size_t>(i) * lv.out;
        for (int o = 0; o < lv.out; ++o)
          ci[o] *= activate_grad(spec.activation, oi[o]);
      }
    }
    const bool need_dx = l > 0 || dx != nullptr;
    if (need_dx) prev.assign(static_cast<size_t>(batch) * lv.in, 0.0);
    for (int i = 0; i < batch; ++i) {
      const double* xi = in.data() + static_cast<size_t>(i) * lv.in;
      const double* ci = cur.data() + static_cast<size_t>(i) * lv.out;
      double* pi = need_dx ? prev.data() + static_cast<size_t>(i) * lv.in : nullptr;
      for (int o = 0; o < lv.out; ++o) {
        const double d = ci[o];
        if (d == 0.0) continue;
        gb[o] += d;
        double* gwr = gw + static_cast<size_t>(o) * lv.in;
        const double* wr = lv.w + static_cast<size_t>(o) * lv.in;
        for (int k = 0; k < lv.in; ++k) {
          gwr[k] += d * xi[k];
          if (pi) pi[k] += d * wr[k];
        }
      }
    }
    if (need_dx) cur.swap(prev);
  }
  if (dx != nullptr) *dx = std::move(cur);
}

std::vector<double> forward(const MlpSpec& spec, std::span<const double> params,
                            std::span<const double> x) {
  BatchTape tape;
  forward_batch(spec, params, x, 1, tape);
  return tape.output();
}

std::vector<double> backward_mean(const MlpSpec& spec,
                                  std::span<const double> params,
                                  std::span<const double> x, int batch,
                                  std::span<const double> dy) {
  BatchTape tape;
  forward_batch(spec, params, x, batch, tape);
  std::vector<double> scaled(dy.begin(), dy.end());
  for (double& d : scaled) d /= batch;
  std::vector<double> grad(params.size(), 0.0);
  backward_batch(spec, params, tape, scaled, grad);
  return grad;
}

GaussianNllGrad gaussian_nll(double raw_mu, double raw_log_sigma, double y) {
  GaussianNllGrad g;
  const double sigma = std::exp(raw_log_sigma);
  const double z = (y - raw_mu) / sigma;
  g.loss = kHalfLogTwoPi + raw_log_sigma + 0.5 * z * z;
  g.d_mu = -z / sigma;
  g.d_raw_sigma = 1.0 - z * z;
  return g;
}

void softmax(std::span<const double> z, std::span<double> out) {
  double zmax = z[0];
  for (double v : z) zmax = std::max(zmax, v);
  double total = 0.0;
  for (size_t k = 0; k < z.size(); ++k) {
    out[k] = std::exp(z[k] - zmax);
    total += out[k];
  }
  for (size_t k = 0; k < z.size(); ++k) out[k] /= total;
}

double sigmoid(double z) {
  if (z >= 0.0) {
    const double e = std::exp(-z);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double log_sigmoid(double z) {
  // log(1/(1+e^-z)) = -log1p(e^-z), stable on both tails.
  return z >= 0.0 ? -std::log1p(std::exp(-z)) : z - std::log1p(std::exp(z));
}

std::string opt_method_name(OptMethod m) {
  return m == OptMethod::sgd ? "sgd" : "adam";
}

OptMethod opt_method_from_name(const std::string& s) {
  if (s == "sgd") return OptMethod::sgd;
  if (s == "adam") return OptMethod::adam;
  throw std::invalid_argument("unknown optimizer: " + s);
}

void Optimizer::reset(size_t n) {
  t = 0;
  m.assign(n, 0.0);
  v.assign(n, 0.0);
}

void Optimizer::step(std::span<double> params, std::span<const double> grad) {
  if (params.size() != grad.size())
    throw DimensionMismatch("optimizer: params/grad size mismatch");
  for (size_t i = 0; i < grad.size(); ++i)
    if (!std::isfinite(grad[i]))
      throw NonFiniteGradient("non-finite gradient at index " + std::to_string(i));
  if (method == OptMethod::sgd) {
    for (size_t i = 0; i < params.size(); ++i) params[i] -= lr * grad[i];
    ++t;
    return;
  }
  if (m.size() != params.size()) reset(params.size());
  ++t;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  for (size_t i = 0; i < params.size(); ++i) {
    m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
    v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
    params[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
  }
}

}  // namespace fjs::nets
