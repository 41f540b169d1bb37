// Command-line front end for the factorizable joint shift workbench.
//
// Exit codes: 0 success, 2 configuration error, 3 a cell or verification
// suite failed, 4 table-check violation under --check.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "CLI11.hpp"

#include "fjs/harness.hpp"
#include "fjs/theory.hpp"

namespace {

using fjs::harness::ExperimentConfig;

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitCellFailed = 3;
constexpr int kExitCheckViolation = 4;

ExperimentConfig resolve_config(const std::string& config_path,
                                const std::string& out_override) {
  ExperimentConfig cfg;
  if (!config_path.empty()) cfg = fjs::harness::load_config(config_path);
  if (!out_override.empty()) cfg.out_dir = out_override;
  cfg.validate();
  return cfg;
}

void print_aggregates(const fjs::harness::RunReport& report) {
  std::printf("%-12s %8s %10s %10s\n", "method", "cells", "mean NLL", "std");
  for (const auto& a : report.aggregates)
    std::printf("%-12s %8d %10.4f %10.4f\n", a.method.c_str(), a.count,
                a.mean, a.stddev);
  if (!report.jiada_quadrant_error_mean.empty()) {
    std::printf("jiada quadrant importance relative error:");
    for (double e : report.jiada_quadrant_error_mean) std::printf(" %.3f", e);
    std::printf("\n");
  }
  for (const auto& v : report.band_violations)
    std::printf("table check: %s\n", v.c_str());
}

int cmd_generate(const ExperimentConfig& cfg, uint64_t seed) {
  std::filesystem::create_directories(cfg.out_dir);
  const auto tag = std::to_string(seed);
  const auto source = fjs::toy::sample_source(cfg.hexagon, cfg.source,
                                              fjs::derive_seed(seed, "source"));
  fjs::toy::write_csv(source, cfg.out_dir + "/source_" + tag + ".csv");
  const auto target = fjs::toy::sample_target(cfg.hexagon, cfg.n_target,
                                              fjs::derive_seed(seed, "target"));
  fjs::toy::write_csv(target, cfg.out_dir + "/target_" + tag + ".csv");
  if (!cfg.eval_on_train) {
    const auto eval = fjs::toy::sample_target(cfg.hexagon, cfg.n_eval,
                                              fjs::derive_seed(seed, "eval"));
    fjs::toy::write_csv(eval, cfg.out_dir + "/eval_" + tag + ".csv");
  }
  std::printf("wrote datasets for seed %llu to %s\n",
              static_cast<unsigned long long>(seed), cfg.out_dir.c_str());
  return kExitOk;
}

int cmd_estimate_importance(const ExperimentConfig& cfg, uint64_t seed,
                            bool supervised) {
  std::filesystem::create_directories(cfg.out_dir);
  const auto source = fjs::toy::sample_source(cfg.hexagon, cfg.source,
                                              fjs::derive_seed(seed, "source"));
  const auto target = fjs::toy::sample_target(cfg.hexagon, cfg.n_target,
                                              fjs::derive_seed(seed, "target"));
  const uint64_t fit_seed = fjs::derive_seed(seed, "jiada");
  const auto fit = supervised
                       ? fjs::importance::fit_supervised(source, target,
                                                         cfg.jia, fit_seed)
                       : fjs::importance::fit_unsupervised(source, target,
                                                           cfg.jia, fit_seed);
  const std::string digest =
      fjs::harness::digest_string(fjs::harness::config_digest(cfg));
  const std::string stem =
      cfg.out_dir + "/importance_" + std::to_string(cfg.jia.clusters);

  const fjs::toy::GroundTruthFactors* gt_ptr = nullptr;
  fjs::toy::GroundTruthFactors gt;
  try {
    gt = fjs::toy::ground_truth_importance(cfg.hexagon, cfg.source);
    gt_ptr = &gt;
  } catch (const fjs::toy::NotFactorizable&) {
    // Configured counts without a rank-one ratio: grid omits w_true.
  }
  fjs::importance::write_importance_grid(fit.u, fit.v, cfg.hexagon, gt_ptr,
                                         stem + ".csv", 101,
                                         "# config=" + digest + "\n");
  nlohmann::json jf = fjs::importance::factors_to_json(fit.u, fit.v);
  jf["config_digest"] = digest;
  jf["final_loss"] = fit.final_loss;
  jf["normalizer"] = fit.normalizer;
  jf["supervised"] = supervised;
  std::ofstream out(stem + ".json", std::ios::binary);
  out << jf.dump(2) << "\n";
  if (!out) throw fjs::toy::IoError("write failed: " + stem + ".json");

  const auto mean_w =
      fjs::importance::quadrant_mean_weight(fit.u, fit.v, cfg.hexagon);
  std::printf("quadrant mean importance:");
  for (double w : mean_w) std::printf(" %.4f", w);
  std::printf("\n");
  if (gt_ptr) {
    std::printf("ground truth:            ");
    for (double w : gt.quadrant_weight) std::printf(" %.4f", w);
    std::printf("\n");
  }
  std::printf("wrote %s and %s\n", (stem + ".csv").c_str(),
              (stem + ".json").c_str());
  return kExitOk;
}

int cmd_train(const ExperimentConfig& cfg, const std::string& method_name,
              uint64_t seed) {
  fjs::adapt::Method method;
  try {
    method = fjs::adapt::method_from_name(method_name);
  } catch (const std::exception& e) {
    throw fjs::harness::ConfigError(e.what());
  }
  std::filesystem::create_directories(cfg.out_dir);
  const std::string digest =
      fjs::harness::digest_string(fjs::harness::config_digest(cfg));
  try {
    const auto outcome = fjs::harness::run_cell(cfg, method, seed);
    const std::string stem =
        cfg.out_dir + "/" + method_name + "_" + std::to_string(seed);
    fjs::adapt::save_checkpoint(outcome.predictor,
                                stem + "_checkpoint.json");
    fjs::harness::write_metrics_jsonl(stem + "_metrics.jsonl", digest,
                                      method_name, seed, outcome.metrics);
    std::printf("%s seed=%llu nll=%.6f sigma=[%.4f, %.4f]\n",
                method_name.c_str(), static_cast<unsigned long long>(seed),
                outcome.nll, outcome.sigma_min, outcome.sigma_max);
    return kExitOk;
  } catch (const fjs::harness::ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "cell failed: %s\n", e.what());
    return kExitCellFailed;
  }
}

int cmd_run(const ExperimentConfig& cfg, bool check) {
  const auto report = fjs::harness::run_experiment(cfg);
  print_aggregates(report);
  std::printf("report: %s/report.json\n", cfg.out_dir.c_str());
  if (report.any_cell_failed()) return kExitCellFailed;
  if (check && !report.band_violations.empty()) return kExitCheckViolation;
  return kExitOk;
}

int cmd_verify_theory(long trials, uint64_t seed) {
  using namespace fjs::theory;
  struct Suite {
    const char* name;
    VerifierReport report;
    bool expect_failures;
  };
  const Suite suites[] = {
      {"cs+determinism+matched-labels => DI",
       verify_cs_determinism_implies_di(trials, seed), false},
      {"control: mismatched labels break DI",
       control_di_fails_without_matched_labels(trials, seed), true},
      {"fjs+determinism => GLS",
       verify_fjs_determinism_implies_gls(trials, seed), false},
      {"control: non-determinism breaks GLS",
       control_gls_fails_without_determinism(trials, seed), true},
  };
  bool ok = true;
  for (const Suite& s : suites) {
    const bool good =
        s.expect_failures ? s.report.failures > 0 : s.report.failures == 0;
    ok = ok && good;
    std::printf("%-40s trials=%ld failures=%ld  [%s]\n", s.name,
                s.report.trials, s.report.failures, good ? "ok" : "BAD");
  }
  return ok ? kExitOk : kExitCellFailed;
}

int cmd_report(const std::string& path, bool check) {
  const auto report = fjs::harness::reaggregate_report(path);
  print_aggregates(report);
  if (check && !report.band_violations.empty()) return kExitCheckViolation;
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Factorizable joint shift workbench"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path, out_override;
  app.add_option("--config", config_path, "JSON experiment config file")
      ->check(CLI::ExistingFile);
  app.add_option("--out", out_override, "Output directory override");

  uint64_t seed = 0;
  std::string method;
  bool check = false, supervised = false;
  long trials = 1000;
  std::string report_path = "runs/default/report.json";

  auto* generate = app.add_subcommand("generate", "Write one seed's datasets");
  generate->add_option("--seed", seed, "Dataset seed");

  auto* estimate = app.add_subcommand(
      "estimate-importance", "Fit importance factors; write grid and factors");
  estimate->add_option("--seed", seed, "Dataset seed");
  estimate->add_flag("--supervised", supervised,
                     "Use labeled-target objective instead of the unlabeled one");

  auto* train = app.add_subcommand("train", "Train one (method, seed) cell");
  train->add_option("--method", method, "Adaptation method")->required();
  train->add_option("--seed", seed, "Dataset seed");

  auto* run = app.add_subcommand("run", "Run the full experiment grid");
  run->add_flag("--check", check, "Exit 4 when the table bands are violated");

  auto* verify = app.add_subcommand("verify-theory",
                                    "Run the finite-domain implication suites");
  verify->add_option("--trials", trials, "Random instances per suite")
      ->check(CLI::PositiveNumber);
  verify->add_option("--seed", seed, "Suite seed");

  auto* report = app.add_subcommand("report", "Re-aggregate an existing report");
  report->add_option("--in", report_path, "Path to report.json");
  report->add_flag("--check", check, "Exit 4 when the table bands are violated");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*verify) return cmd_verify_theory(trials, seed);
    if (*report) return cmd_report(report_path, check);
    const ExperimentConfig cfg = resolve_config(config_path, out_override);
    if (*generate) return cmd_generate(cfg, seed);
    if (*estimate) return cmd_estimate_importance(cfg, seed, supervised);
    if (*train) return cmd_train(cfg, method, seed);
    if (*run) return cmd_run(cfg, check);
  } catch (const fjs::harness::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitCellFailed;
  }
  return kExitOk;
}
