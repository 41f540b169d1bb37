#include "fjs/regressor.hpp"

#include <cmath>

namespace fjs::model {

nets::GaussianPrediction GaussianRegressor::predict(double x) const {
  const std::vector<double> feats =
      nets::forward(encoder_spec, encoder_params, std::span(&x, 1));
  const std::vector<double> raw = nets::forward(head_spec, head_params, feats);
  return nets::gaussian_head(raw[0], raw[1]);
}

std::vector<double> GaussianRegressor::features(double x) const {
  return nets::forward(encoder_spec, encoder_params, std::span(&x, 1));
}

GaussianRegressor make_default_regressor(Rng& rng) {
  GaussianRegressor m;
  m.encoder_spec = {1, {64}, 16, nets::Activation::tanh_act};
  m.head_spec = {16, {64, 64}, 2, nets::Activation::tanh_act};
  m.encoder_params = nets::init_params(m.encoder_spec, rng);
  m.head_params = nets::init_params(m.head_spec, rng);
  return m;
}

GaussianRegressor fit_gaussian_regressor(std::span<const toy::LabeledSample> data,
                                         std::span<const double> weights,
                                         const FitConfig& cfg, uint64_t seed,
                                         const MetricsSink& sink) {
  if (data.empty()) throw std::invalid_argument("fit: empty dataset");
  if (!weights.empty() && weights.size() != data.size())
    throw std::invalid_argument("fit: weight count differs from sample count");

  Rng init_rng(derive_seed(seed, "regressor-init"));
  GaussianRegressor m = make_default_regressor(init_rng);
  Rng batch_rng(derive_seed(seed, "regressor-batches"));

  const long n = static_cast<long>(data.size());
  const int batch = static_cast<int>(std::min<long>(cfg.batch, n));
  const long steps = cfg.epochs * ((n + cfg.batch - 1) / cfg.batch);

  nets::Optimizer opt_enc, opt_head;
  opt_enc.method = opt_head.method = cfg.method;
  opt_enc.lr = opt_head.lr = cfg.lr;
  opt_enc.reset(m.encoder_params.size());
  opt_head.reset(m.head_params.size());

  std::vector<double> xs(batch), grad_enc(m.encoder_params.size()),
      grad_head(m.head_params.size()), dy(static_cast<size_t>(batch) * 2),
      dfeats;
  std::vector<long> idx(batch);
  nets::BatchTape enc_tape, head_tape;

  for (long step = 0; step < steps; ++step) {
    for (int i = 0; i < batch; ++i) {
      idx[i] = static_cast<long>(batch_rng.below(n));
      xs[i] = data[idx[i]].x;
    }
    nets::forward_batch(m.encoder_spec, m.encoder_params, xs, batch, enc_tape);
    nets::forward_batch(m.head_spec, m.head_params, enc_tape.output(), batch,
                        head_tape);
    const std::vector<double>& raw = head_tape.output();
    double loss = 0.0;
    for (int i = 0; i < batch; ++i) {
      const double w = weights.empty() ? 1.0 : weights[idx[i]];
      const auto g = nets::gaussian_nll(raw[2 * i], raw[2 * i + 1], data[idx[i]].y);
      loss += w * g.loss;
      dy[2 * i] = w * g.d_mu / batch;
      dy[2 * i + 1] = w * g.d_raw_sigma / batch;
    }
    loss /= batch;
    if (!std::isfinite(loss))
      throw NonFiniteLoss("prediction loss diverged at step " + std::to_string(step));

    std::fill(grad_head.begin(), grad_head.end(), 0.0);
    std::fill(grad_enc.begin(), grad_enc.end(), 0.0);
    nets::backward_batch(m.head_spec, m.head_params, head_tape, dy, grad_head,
                         &dfeats);
    nets::backward_batch(m.encoder_spec, m.encoder_params, enc_tape, dfeats,
                         grad_enc);
    opt_head.step(m.head_params, grad_head);
    opt_enc.step(m.encoder_params, grad_enc);
    if (sink) sink(step, loss, 0.0, 0.0);
  }
  return m;
}

nlohmann::json mlp_spec_to_json(const nets::MlpSpec& spec) {
  return {{"input_dim", spec.input_dim},
          {"hidden", spec.hidden},
          {"output_dim", spec.output_dim},
          {"activation",
           spec.activation == nets::Activation::tanh_act ? "tanh" : "relu"}};
}

nets::MlpSpec mlp_spec_from_json(const nlohmann::json& j) {
  nets::MlpSpec spec;
  spec.input_dim = j.at("input_dim").get<int>();
  spec.hidden = j.at("hidden").get<std::vector<int>>();
  spec.output_dim = j.at("output_dim").get<int>();
  const std::string act = j.at("activation").get<std::string>();
  if (act == "tanh") {
    spec.activation = nets::Activation::tanh_act;
  } else if (act == "relu") {
    spec.activation = nets::Activation::relu;
  } else {
    throw std::invalid_argument("unknown activation: " + act);
  }
  return spec;
}

nlohmann::json regressor_to_json(const GaussianRegressor& model) {
  return {{"encoder_spec", mlp_spec_to_json(model.encoder_spec)},
          {"encoder_params", model.encoder_params},
          {"head_spec", mlp_spec_to_json(model.head_spec)},
          {"head_params", model.head_params}};
}

GaussianRegressor regressor_from_json(const nlohmann::json& j) {
  GaussianRegressor m;
  m.encoder_spec = mlp_spec_from_json(j.at("encoder_spec"));
  m.encoder_params = j.at("encoder_params").get<std::vector<double>>();
  m.head_spec = mlp_spec_from_json(j.at("head_spec"));
  m.head_params = j.at("head_params").get<std::vector<double>>();
  if (m.encoder_params.size() != static_cast<size_t>(nets::param_count(m.encoder_spec)) ||
      m.head_params.size() != static_cast<size_t>(nets::param_count(m.head_spec)))
    throw std::invalid_argument("regressor checkpoint: parameter count mismatch");
  return m;
}

nlohmann::json fit_config_to_json(const FitConfig& cfg) {
  return {{"epochs", cfg.epochs},
          {"batch", cfg.batch},
          {"lr", cfg.lr},
          {"optimizer", nets::opt_method_name(cfg.method)}};
}

FitConfig fit_config_from_json(const nlohmann::json& j) {
  FitConfig cfg;
  if (j.contains("epochs")) cfg.epochs = j.at("epochs").get<long>();
  if (j.contains("batch")) cfg.batch = j.at("batch").get<int>();
  if (j.contains("lr")) cfg.lr = j.at("lr").get<double>();
  if (j.contains("optimizer"))
    cfg.method = nets::opt_method_from_name(j.at("optimizer").get<std::string>());
  return cfg;
}

}  // namespace fjs::model
