#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "doublegen/autoreg.hpp"
#include "doublegen/data.hpp"
#include "doublegen/diffusion.hpp"
#include "doublegen/flow.hpp"
#include "doublegen/metrics.hpp"
#include "doublegen/nuisance.hpp"
#include "doublegen/risk.hpp"
#include "doublegen/synth.hpp"

namespace doublegen {

/// Invalid or inconsistent configuration; the CLI maps this to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DgpConfig {
  std::string kind = "gauss";  // gauss | token
  GaussDgpParams gauss;
  double token_q = 0.5;
  double token_pi1 = 0.8;
  double token_pi0 = 0.2;
};

struct TrainConfig {
  int hidden = 32;
  long sgd_steps = 20000;
  int batch = 16;
  double learning_rate = 1e-3;
  double init_scale = 0.1;
  int mc_tu = 2;          // (t, noise) draws inside one loss evaluation
  int mc_u = 8;           // noise draws per observation while training
  int mc_u_report = 128;  // noise draws for the final logged risk
  long log_every = 2000;  // steps per training-log row
  int flow_steps = 100;
  int diffusion_steps = 200;
  double beta = 1.0;
  double t_min = 1e-3;
  double t_max = 3.0;
  double tabular_learning_rate = 2.0;
  int tabular_iterations = 400;
  // Ablation switches wired through to the risk (test surface).
  bool zero_alpha = false;
  bool zero_psi_terms = false;
};

struct NuisanceConfig {
  int knn_k = 200;
  double clip = 100.0;
  double logistic_learning_rate = 2.0;
  int logistic_iterations = 2000;
  std::vector<int> propensity_ignore = {0};  // features dropped when the propensity is wrong
  int misspecified_knn_k = 1;
  int bias_feature = 0;
  double bias_threshold = 0.5;
};

struct MetricConfig {
  long eval_samples = 10000;
  int bins = 50;
  int projections = 32;
};

struct ExperimentConfig {
  DgpConfig dgp;
  std::string backend = "flow";  // flow | diffusion | autoreg
  std::vector<std::string> methods = {"naive", "doublegen"};
  std::vector<std::string> scenarios = {"both_right"};
  long n = 20000;
  std::vector<std::uint64_t> seeds = {1};
  TrainConfig train;
  NuisanceConfig nuisance;
  MetricConfig metrics;
  std::string out_dir = "out";
  int threads = 1;
};

ExperimentConfig config_from_json_text(const std::string& text);
ExperimentConfig config_from_file(const std::filesystem::path& path);
/// Config with every default materialized, for provenance.
std::string config_to_json_text(const ExperimentConfig& config);

Dgp make_dgp(const DgpConfig& config);

/// A trained hypothesis plus everything its sampler needs.
struct TrainedModel {
  std::string backend;  // flow | diffusion | autoreg
  int dim = 1;
  TimeConditionedNet net;   // flow / diffusion
  NoiseSchedule schedule;   // diffusion
  int sample_steps = 0;     // flow / diffusion
  NextTokenModel table;     // autoreg
};

void save_model(const TrainedModel& model, const std::filesystem::path& path);
TrainedModel load_model(const std::filesystem::path& path);

struct TrainResult {
  TrainedModel model;
  std::vector<std::pair<long, double>> risk_log;  // (step, risk estimate)
  double final_risk = 0.0;
};

/// Per-seed materials shared by every cell of that seed.
struct SeedData {
  Dataset data;
  FoldedDataset folded;
  std::vector<Outcome> counterfactual;
};

SeedData make_seed_data(const ExperimentConfig& config, const Dgp& dgp, std::uint64_t seed);

/// Nuisances for one misspecification scenario, cross-fitted per fold.
/// Scenarios: both_right | outcome_wrong | propensity_wrong | both_wrong.
std::array<NuisancePair, 2> fit_scenario_nuisances(const FoldedDataset& folded,
                                                   const std::string& scenario,
                                                   const NuisanceConfig& config, int a_star);

/// Trains one (method, scenario) cell. Methods naive and oracle ignore the
/// scenario (their training stream depends only on method and seed).
TrainResult train_model(const ExperimentConfig& config, const SeedData& seed_data,
                        const std::string& method, const std::string& scenario,
                        std::uint64_t seed,
                        const std::array<NuisancePair, 2>* nuisances = nullptr);

/// Draws `count` outcomes through the model's sampler. Row i consumes the
/// substream fork(i) of rng, so equal seeds give row-aligned coupled samples
/// across models.
std::vector<Outcome> generate_samples(const TrainedModel& model, long count,
                                      const RngStream& rng);

/// Subcommand drivers (shared between the CLI and tests).
void run_simulate(const ExperimentConfig& config);
void run_train(const ExperimentConfig& config, const std::string& method,
               const std::string& scenario);
void run_generate(const std::filesystem::path& model_file, long count, std::uint64_t seed,
                  const std::filesystem::path& out_csv);
std::vector<MetricReport> evaluate_samples(const ExperimentConfig& config,
                                           std::span<const Outcome> samples,
                                           std::span<const Outcome> reference,
                                           const std::string& scenario, const std::string& method,
                                           std::uint64_t seed);
void run_evaluate(const ExperimentConfig& config, const std::filesystem::path& samples_csv,
                  const std::filesystem::path& reference_csv, const std::string& scenario,
                  const std::string& method, std::uint64_t seed);
void run_experiment(const ExperimentConfig& config);
void run_report(const std::filesystem::path& metrics_csv, const std::filesystem::path& out_dir);

/// Primary comparison metric of a backend: w1 for real outcomes, kl for
/// tokens.
std::string primary_metric(const std::string& backend);

}  // namespace doublegen
