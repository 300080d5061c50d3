#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "doublegen/experiment.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

struct CommonArgs {
  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "Experiment config (JSON)")->required();
  cmd->add_option("--out", args.out_dir, "Output directory override");
  cmd->add_option("--seed", args.seed, "Single-seed override");
  cmd->add_option("--threads", args.threads, "Worker thread count override");
}

doublegen::ExperimentConfig load_config(const CommonArgs& args) {
  auto cfg = doublegen::config_from_file(args.config_path);
  if (!args.out_dir.empty()) cfg.out_dir = args.out_dir;
  if (args.seed) cfg.seeds = {*args.seed};
  if (args.threads) cfg.threads = *args.threads;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Counterfactual generative modeling with doubly robust training"};
  app.require_subcommand(1);

  CommonArgs sim_args;
  auto* sim = app.add_subcommand("simulate", "Write observational and counterfactual CSVs");
  add_common(sim, sim_args);

  CommonArgs train_args;
  std::string train_method = "doublegen";
  std::string train_scenario = "both_right";
  auto* train = app.add_subcommand("train", "Fit nuisances and train one method");
  add_common(train, train_args);
  train->add_option("--method", train_method, "naive | plugin | ipw | doublegen | oracle");
  train->add_option("--scenario", train_scenario,
                    "both_right | outcome_wrong | propensity_wrong | both_wrong");

  std::string gen_model, gen_out = "samples.csv";
  long gen_count = 10000;
  std::uint64_t gen_seed = 1;
  auto* gen = app.add_subcommand("generate", "Sample from a trained model file");
  gen->add_option("--model", gen_model, "Model JSON file")->required();
  gen->add_option("--count", gen_count, "Number of samples");
  gen->add_option("--seed", gen_seed, "Noise seed (shared seeds couple models)");
  gen->add_option("--out", gen_out, "Output CSV path");

  CommonArgs eval_args;
  std::string eval_samples, eval_reference, eval_scenario = "both_right",
                            eval_method = "doublegen";
  std::uint64_t eval_seed = 1;
  auto* eval = app.add_subcommand("evaluate", "Compare samples against reference draws");
  add_common(eval, eval_args);
  eval->add_option("--samples", eval_samples, "Generated samples CSV")->required();
  eval->add_option("--reference", eval_reference, "Reference counterfactual CSV")->required();
  eval->add_option("--scenario", eval_scenario, "Label recorded in the metrics row");
  eval->add_option("--method", eval_method, "Label recorded in the metrics row");
  eval->add_option("--seed-label", eval_seed, "Seed recorded in the metrics row");

  CommonArgs exp_args;
  auto* exp = app.add_subcommand("experiment", "Run the scenario x method x seed grid");
  add_common(exp, exp_args);

  std::string report_metrics, report_out = ".";
  auto* report = app.add_subcommand("report", "Pivot a metrics CSV into a summary table");
  report->add_option("--metrics", report_metrics, "metrics.csv path")->required();
  report->add_option("--out", report_out, "Directory for summary.csv / summary.txt");

  CLI11_PARSE(app, argc, argv);

  try {
    if (sim->parsed()) {
      doublegen::run_simulate(load_config(sim_args));
    } else if (train->parsed()) {
      doublegen::run_train(load_config(train_args), train_method, train_scenario);
    } else if (gen->parsed()) {
      doublegen::run_generate(gen_model, gen_count, gen_seed, gen_out);
    } else if (eval->parsed()) {
      doublegen::run_evaluate(load_config(eval_args), eval_samples, eval_reference,
                              eval_scenario, eval_method, eval_seed);
    } else if (exp->parsed()) {
      doublegen::run_experiment(load_config(exp_args));
    } else if (report->parsed()) {
      doublegen::run_report(report_metrics, report_out);
    }
  } catch (const doublegen::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitOk;
}
