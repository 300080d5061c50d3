#include "doublegen/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "doublegen/mathutil.hpp"
#include "json.hpp"

namespace doublegen {

namespace {

namespace streams {
constexpr std::uint64_t data = 1;
constexpr std::uint64_t folds = 2;
constexpr std::uint64_t counterfactual = 3;
constexpr std::uint64_t train = 4;
constexpr std::uint64_t generate = 5;
constexpr std::uint64_t evaluation = 6;
constexpr std::uint64_t risk = 7;
constexpr std::uint64_t metric = 8;
}  // namespace streams

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

const std::set<std::string>& known_methods() {
  static const std::set<std::string> methods = {"naive", "plugin", "ipw", "doublegen", "oracle"};
  return methods;
}

const std::set<std::string>& known_scenarios() {
  static const std::set<std::string> scenarios = {"both_right", "outcome_wrong",
                                                  "propensity_wrong", "both_wrong"};
  return scenarios;
}

bool scenario_free(const std::string& method) { return method == "naive" || method == "oracle"; }

RiskVariant variant_of(const std::string& method) {
  if (method == "naive") return RiskVariant::naive;
  if (method == "plugin") return RiskVariant::plug_in;
  if (method == "ipw") return RiskVariant::ipw;
  if (method == "doublegen") return RiskVariant::doublegen;
  if (method == "oracle") return RiskVariant::oracle;
  throw ConfigError("unknown method: " + method);
}

template <typename T>
void read_field(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

ExperimentConfig config_from_json_text(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }

  ExperimentConfig cfg;
  try {
    if (j.contains("dgp")) {
      const auto& d = j.at("dgp");
      read_field(d, "kind", cfg.dgp.kind);
      read_field(d, "p", cfg.dgp.gauss.p);
      read_field(d, "a0", cfg.dgp.gauss.a0);
      read_field(d, "a", cfg.dgp.gauss.a);
      read_field(d, "c0", cfg.dgp.gauss.c0);
      read_field(d, "c", cfg.dgp.gauss.c);
      read_field(d, "s", cfg.dgp.gauss.s);
      read_field(d, "contaminant_shift", cfg.dgp.gauss.contaminant_shift);
      read_field(d, "q", cfg.dgp.token_q);
      read_field(d, "pi1", cfg.dgp.token_pi1);
      read_field(d, "pi0", cfg.dgp.token_pi0);
    }
    read_field(j, "backend", cfg.backend);
    read_field(j, "methods", cfg.methods);
    read_field(j, "scenarios", cfg.scenarios);
    read_field(j, "n", cfg.n);
    read_field(j, "seeds", cfg.seeds);
    if (j.contains("train")) {
      const auto& t = j.at("train");
      read_field(t, "hidden", cfg.train.hidden);
      read_field(t, "sgd_steps", cfg.train.sgd_steps);
      read_field(t, "batch", cfg.train.batch);
      read_field(t, "learning_rate", cfg.train.learning_rate);
      read_field(t, "init_scale", cfg.train.init_scale);
      read_field(t, "mc_tu", cfg.train.mc_tu);
      read_field(t, "mc_u", cfg.train.mc_u);
      read_field(t, "mc_u_report", cfg.train.mc_u_report);
      read_field(t, "log_every", cfg.train.log_every);
      read_field(t, "flow_steps", cfg.train.flow_steps);
      read_field(t, "diffusion_steps", cfg.train.diffusion_steps);
      read_field(t, "beta", cfg.train.beta);
      read_field(t, "t_min", cfg.train.t_min);
      read_field(t, "t_max", cfg.train.t_max);
      read_field(t, "tabular_learning_rate", cfg.train.tabular_learning_rate);
      read_field(t, "tabular_iterations", cfg.train.tabular_iterations);
      read_field(t, "zero_alpha", cfg.train.zero_alpha);
      read_field(t, "zero_psi_terms", cfg.train.zero_psi_terms);
    }
    if (j.contains("nuisance")) {
      const auto& u = j.at("nuisance");
      read_field(u, "knn_k", cfg.nuisance.knn_k);
      read_field(u, "clip", cfg.nuisance.clip);
      read_field(u, "logistic_learning_rate", cfg.nuisance.logistic_learning_rate);
      read_field(u, "logistic_iterations", cfg.nuisance.logistic_iterations);
      read_field(u, "propensity_ignore", cfg.nuisance.propensity_ignore);
      read_field(u, "misspecified_knn_k", cfg.nuisance.misspecified_knn_k);
      read_field(u, "bias_feature", cfg.nuisance.bias_feature);
      read_field(u, "bias_threshold", cfg.nuisance.bias_threshold);
    }
    if (j.contains("metrics")) {
      const auto& m = j.at("metrics");
      read_field(m, "eval_samples", cfg.metrics.eval_samples);
      read_field(m, "bins", cfg.metrics.bins);
      read_field(m, "projections", cfg.metrics.projections);
    }
    read_field(j, "out", cfg.out_dir);
    read_field(j, "threads", cfg.threads);
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(std::string("bad config field: ") + e.what());
  }

  if (cfg.dgp.kind != "gauss" && cfg.dgp.kind != "token") {
    throw ConfigError("dgp.kind must be gauss or token");
  }
  if (cfg.backend != "flow" && cfg.backend != "diffusion" && cfg.backend != "autoreg") {
    throw ConfigError("backend must be flow, diffusion, or autoreg");
  }
  if ((cfg.backend == "autoreg") != (cfg.dgp.kind == "token")) {
    throw ConfigError("autoreg pairs with the token dgp; flow/diffusion with gauss");
  }
  if (cfg.n < 1) throw ConfigError("n must be at least 1");
  if (cfg.seeds.empty()) throw ConfigError("seeds must be non-empty");
  if (cfg.methods.empty()) throw ConfigError("methods must be non-empty");
  if (cfg.scenarios.empty()) throw ConfigError("scenarios must be non-empty");
  for (const auto& m : cfg.methods) {
    if (!known_methods().count(m)) throw ConfigError("unknown method: " + m);
  }
  for (const auto& s : cfg.scenarios) {
    if (!known_scenarios().count(s)) throw ConfigError("unknown scenario: " + s);
  }
  if (cfg.threads < 1) throw ConfigError("threads must be at least 1");
  if (cfg.train.mc_u < 1 || cfg.train.mc_tu < 1) throw ConfigError("mc counts must be positive");
  if (cfg.metrics.eval_samples < 1) throw ConfigError("metrics.eval_samples must be positive");
  if (cfg.nuisance.clip < 1.0) throw ConfigError("nuisance.clip must be at least 1");
  return cfg;
}

ExperimentConfig config_from_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config: " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return config_from_json_text(ss.str());
}

std::string config_to_json_text(const ExperimentConfig& cfg) {
  nlohmann::json j;
  j["dgp"]["kind"] = cfg.dgp.kind;
  if (cfg.dgp.kind == "gauss") {
    j["dgp"]["p"] = cfg.dgp.gauss.p;
    j["dgp"]["a0"] = cfg.dgp.gauss.a0;
    j["dgp"]["a"] = cfg.dgp.gauss.a;
    j["dgp"]["c0"] = cfg.dgp.gauss.c0;
    j["dgp"]["c"] = cfg.dgp.gauss.c;
    j["dgp"]["s"] = cfg.dgp.gauss.s;
    j["dgp"]["contaminant_shift"] = cfg.dgp.gauss.contaminant_shift;
  } else {
    j["dgp"]["q"] = cfg.dgp.token_q;
    j["dgp"]["pi1"] = cfg.dgp.token_pi1;
    j["dgp"]["pi0"] = cfg.dgp.token_pi0;
  }
  j["backend"] = cfg.backend;
  j["methods"] = cfg.methods;
  j["scenarios"] = cfg.scenarios;
  j["n"] = cfg.n;
  j["seeds"] = cfg.seeds;
  j["train"] = {{"hidden", cfg.train.hidden},
                {"sgd_steps", cfg.train.sgd_steps},
                {"batch", cfg.train.batch},
                {"learning_rate", cfg.train.learning_rate},
                {"init_scale", cfg.train.init_scale},
                {"mc_tu", cfg.train.mc_tu},
                {"mc_u", cfg.train.mc_u},
                {"mc_u_report", cfg.train.mc_u_report},
                {"log_every", cfg.train.log_every},
                {"flow_steps", cfg.train.flow_steps},
                {"diffusion_steps", cfg.train.diffusion_steps},
                {"beta", cfg.train.beta},
                {"t_min", cfg.train.t_min},
                {"t_max", cfg.train.t_max},
                {"tabular_learning_rate", cfg.train.tabular_learning_rate},
                {"tabular_iterations", cfg.train.tabular_iterations},
                {"zero_alpha", cfg.train.zero_alpha},
                {"zero_psi_terms", cfg.train.zero_psi_terms}};
  j["nuisance"] = {{"knn_k", cfg.nuisance.knn_k},
                   {"clip", cfg.nuisance.clip},
                   {"logistic_learning_rate", cfg.nuisance.logistic_learning_rate},
                   {"logistic_iterations", cfg.nuisance.logistic_iterations},
                   {"propensity_ignore", cfg.nuisance.propensity_ignore},
                   {"misspecified_knn_k", cfg.nuisance.misspecified_knn_k},
                   {"bias_feature", cfg.nuisance.bias_feature},
                   {"bias_threshold", cfg.nuisance.bias_threshold}};
  j["metrics"] = {{"eval_samples", cfg.metrics.eval_samples},
                  {"bins", cfg.metrics.bins},
                  {"projections", cfg.metrics.projections}};
  j["out"] = cfg.out_dir;
  j["threads"] = cfg.threads;
  return j.dump(2);
}

Dgp make_dgp(const DgpConfig& config) {
  if (config.kind == "gauss") return Dgp::gauss(config.gauss);
  TokenDgpParams params = default_token_params();
  params.q = config.token_q;
  params.pi1 = config.token_pi1;
  params.pi0 = config.token_pi0;
  return Dgp::token(params);
}

void save_model(const TrainedModel& model, const std::filesystem::path& path) {
  nlohmann::json j;
  j["backend"] = model.backend;
  j["dim"] = model.dim;
  if (model.backend == "autoreg") {
    j["table"] = nlohmann::json::parse(model.table.to_json());
  } else {
    j["net"] = nlohmann::json::parse(mlp_to_json(model.net.net()));
    j["sample_steps"] = model.sample_steps;
    if (model.backend == "diffusion") {
      j["schedule"] = {{"beta", model.schedule.beta},
                       {"t_min", model.schedule.t_min},
                       {"t_max", model.schedule.t_max}};
    }
  }
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open for writing: " + path.string());
  os << j.dump(2) << '\n';
}

TrainedModel load_model(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open model file: " + path.string());
  nlohmann::json j;
  try {
    is >> j;
  } catch (const std::exception& e) {
    throw std::runtime_error("model file is not valid JSON: " + path.string());
  }

  TrainedModel model;
  model.backend = j.at("backend").get<std::string>();
  model.dim = j.at("dim").get<int>();
  if (model.backend == "autoreg") {
    model.table = NextTokenModel::from_json(j.at("table").dump());
  } else if (model.backend == "flow" || model.backend == "diffusion") {
    model.net = TimeConditionedNet(mlp_from_json(j.at("net").dump()));
    model.sample_steps = j.at("sample_steps").get<int>();
    if (model.backend == "diffusion") {
      const auto& s = j.at("schedule");
      model.schedule = NoiseSchedule(s.at("beta").get<double>(), s.at("t_min").get<double>(),
                                     s.at("t_max").get<double>());
    }
  } else {
    throw std::runtime_error("model file names an unknown backend: " + model.backend);
  }
  return model;
}

SeedData make_seed_data(const ExperimentConfig& config, const Dgp& dgp, std::uint64_t seed) {
  SeedData sd;
  RngStream data_rng(seed, streams::data);
  sd.data = dgp.sample_observational(config.n, data_rng);
  RngStream fold_rng(seed, streams::folds);
  sd.folded = partition_folds(sd.data, fold_rng);
  RngStream cf_rng(seed, streams::counterfactual);
  sd.counterfactual = dgp.sample_counterfactual(config.n, cf_rng);
  return sd;
}

std::array<NuisancePair, 2> fit_scenario_nuisances(const FoldedDataset& folded,
                                                   const std::string& scenario,
                                                   const NuisanceConfig& config, int a_star) {
  if (!known_scenarios().count(scenario)) throw ConfigError("unknown scenario: " + scenario);
  const bool outcome_wrong = scenario == "outcome_wrong" || scenario == "both_wrong";
  const bool propensity_wrong = scenario == "propensity_wrong" || scenario == "both_wrong";

  std::array<NuisancePair, 2> nuisances;
  for (int j = 0; j < 2; ++j) {
    const Dataset& fold = j == 0 ? folded.fold1 : folded.fold2;

    PropensityFitConfig pcfg;
    pcfg.learning_rate = config.logistic_learning_rate;
    pcfg.iterations = config.logistic_iterations;
    pcfg.clip = config.clip;
    if (propensity_wrong) pcfg.ignored_features = config.propensity_ignore;
    const PropensityModel propensity = fit_propensity(fold, a_star, pcfg);
    nuisances[j].alpha = [propensity](std::span<const double> x) {
      return inverse_propensity(propensity, x);
    };

    nuisances[j].psi =
        outcome_wrong
            ? fit_outcome_sampler_biased(fold, a_star, config.misspecified_knn_k,
                                         config.bias_feature, config.bias_threshold)
            : fit_outcome_sampler(fold, a_star, config.knn_k);
  }
  return nuisances;
}

namespace {

LossFn make_flow_loss(const VectorField* field, int mc_tu) {
  LossFn loss;
  loss.param_count = field->net().param_count();
  loss.value = [field, mc_tu](const Outcome& y, RngStream rng) {
    return flow_loss(field_of(*field), y.reals(), rng, mc_tu);
  };
  loss.value_and_grad = [field, mc_tu](const Outcome& y, RngStream rng, std::span<double> grad,
                                       double weight) {
    return flow_loss_grad(*field, y.reals(), rng, mc_tu, grad, weight);
  };
  return loss;
}

LossFn make_dsm_loss(const ScoreNet* score, NoiseSchedule sched, int mc_tu) {
  LossFn loss;
  loss.param_count = score->net().param_count();
  loss.value = [score, sched, mc_tu](const Outcome& y, RngStream rng) {
    return dsm_loss(field_of(*score), sched, y.reals(), rng, mc_tu);
  };
  loss.value_and_grad = [score, sched, mc_tu](const Outcome& y, RngStream rng,
                                              std::span<double> grad, double weight) {
    return dsm_loss_grad(*score, sched, y.reals(), rng, mc_tu, grad, weight);
  };
  return loss;
}

LossFn make_ce_loss(const NextTokenModel* table) {
  LossFn loss;
  loss.param_count = table->logits().size();
  loss.value = [table](const Outcome& y, RngStream) { return ce_loss(*table, y.token_seq()); };
  loss.value_and_grad = [table](const Outcome& y, RngStream, std::span<double> grad,
                                double weight) {
    ce_loss_grad(*table, y.token_seq(), grad, weight);
    return ce_loss(*table, y.token_seq());
  };
  return loss;
}

RiskSpec make_spec(const ExperimentConfig& config, const std::string& method) {
  RiskSpec spec;
  spec.variant = variant_of(method);
  spec.mc_u = config.train.mc_u;
  spec.a_star = 1;
  spec.zero_alpha = config.train.zero_alpha;
  spec.zero_psi_terms = config.train.zero_psi_terms;
  return spec;
}

TrainResult train_net_backend(const ExperimentConfig& config, const SeedData& seed_data,
                              const std::string& method, const RngStream& train_rng,
                              const std::array<NuisancePair, 2>* nuisances) {
  const TrainConfig& tc = config.train;
  const int dim = static_cast<int>(seed_data.data.front().y.dim());

  TrainResult result;
  result.model.backend = config.backend;
  result.model.dim = dim;

  RngStream init_rng = train_rng.fork(fnv1a("init"));
  TimeConditionedNet net(
      Mlp::random_init(dim + static_cast<int>(kTimeFeatureCount), tc.hidden, dim, init_rng,
                       tc.init_scale));

  const NoiseSchedule sched(tc.beta, tc.t_min, tc.t_max);
  LossFn loss = config.backend == "flow" ? make_flow_loss(&net, tc.mc_tu)
                                         : make_dsm_loss(&net, sched, tc.mc_tu);

  const RiskSpec spec = make_spec(config, method);
  RiskProblem problem(loss, &seed_data.folded, nuisances, spec,
                      spec.variant == RiskVariant::oracle
                          ? std::span<const Outcome>(seed_data.counterfactual)
                          : std::span<const Outcome>());

  AdamState adam(net.net().param_count(), tc.learning_rate);
  std::vector<double> grad(net.net().param_count());
  RngStream sgd_rng = train_rng.fork(fnv1a("sgd"));
  double block_sum = 0.0;
  long block_count = 0;
  for (long step = 0; step < tc.sgd_steps; ++step) {
    std::fill(grad.begin(), grad.end(), 0.0);
    double mean_term = 0.0;
    for (int b = 0; b < tc.batch; ++b) {
      mean_term += problem.sample_gradient_term(sgd_rng, grad, 1.0 / tc.batch);
    }
    adam_step(net.net().params, grad, adam);
    block_sum += mean_term / tc.batch;
    block_count += 1;
    if ((step + 1) % tc.log_every == 0 || step + 1 == tc.sgd_steps) {
      result.risk_log.emplace_back(step + 1, block_sum / block_count);
      block_sum = 0.0;
      block_count = 0;
    }
  }

  RiskSpec report_spec = spec;
  report_spec.mc_u = tc.mc_u_report;
  RiskProblem report(loss, &seed_data.folded, nuisances, report_spec,
                     spec.variant == RiskVariant::oracle
                         ? std::span<const Outcome>(seed_data.counterfactual)
                         : std::span<const Outcome>());
  result.final_risk = report.value(train_rng.fork(fnv1a("report")));

  result.model.net = net;
  result.model.schedule = sched;
  result.model.sample_steps =
      config.backend == "flow" ? tc.flow_steps : tc.diffusion_steps;
  return result;
}

TrainResult train_autoreg_backend(const ExperimentConfig& config, const SeedData& seed_data,
                                  const std::string& method, const RngStream& train_rng,
                                  const std::array<NuisancePair, 2>* nuisances) {
  const TrainConfig& tc = config.train;
  const TokenDgpParams token_defaults = default_token_params();
  const int k = token_defaults.table_x0.k();
  const int d = token_defaults.table_x0.d();

  TrainResult result;
  result.model.backend = "autoreg";
  result.model.dim = d;

  NextTokenModel table(k, d);
  LossFn loss = make_ce_loss(&table);
  const RiskSpec spec = make_spec(config, method);
  RiskProblem problem(loss, &seed_data.folded, nuisances, spec,
                      spec.variant == RiskVariant::oracle
                          ? std::span<const Outcome>(seed_data.counterfactual)
                          : std::span<const Outcome>());

  TabularFitConfig fit_cfg;
  fit_cfg.learning_rate = tc.tabular_learning_rate;
  fit_cfg.iterations = tc.tabular_iterations;
  const auto fit = fit_tabular(problem, table, fit_cfg, train_rng.fork(fnv1a("tabular")));
  result.risk_log = fit.risk_log;

  RiskSpec report_spec = spec;
  report_spec.mc_u = tc.mc_u_report;
  RiskProblem report(loss, &seed_data.folded, nuisances, report_spec,
                     spec.variant == RiskVariant::oracle
                         ? std::span<const Outcome>(seed_data.counterfactual)
                         : std::span<const Outcome>());
  result.final_risk = report.value(train_rng.fork(fnv1a("report")));

  result.model.table = std::move(table);
  return result;
}

}  // namespace

TrainResult train_model(const ExperimentConfig& config, const SeedData& seed_data,
                        const std::string& method, const std::string& scenario,
                        std::uint64_t seed, const std::array<NuisancePair, 2>* nuisances) {
  if (!known_methods().count(method)) throw ConfigError("unknown method: " + method);

  const bool needs_nuisances = !scenario_free(method);
  std::array<NuisancePair, 2> local;
  if (needs_nuisances && !nuisances) {
    local = fit_scenario_nuisances(seed_data.folded, scenario, config.nuisance, 1);
    nuisances = &local;
  }

  const std::uint64_t scenario_tag = scenario_free(method) ? 0 : fnv1a(scenario);
  const RngStream train_rng =
      RngStream(seed, streams::train).fork(fnv1a(method), scenario_tag);

  if (config.backend == "autoreg") {
    return train_autoreg_backend(config, seed_data, method, train_rng, nuisances);
  }
  return train_net_backend(config, seed_data, method, train_rng, nuisances);
}

std::vector<Outcome> generate_samples(const TrainedModel& model, long count,
                                      const RngStream& rng) {
  if (count < 0) throw std::invalid_argument("generate_samples: count must be >= 0");
  std::vector<Outcome> out;
  out.reserve(static_cast<std::size_t>(count));

  if (model.backend == "flow") {
    const FieldFn field = field_of(model.net);
    std::vector<double> u(model.dim);
    for (long i = 0; i < count; ++i) {
      RngStream row = rng.fork(static_cast<std::uint64_t>(i));
      row.fill_normal(u);
      out.push_back(Outcome::real(flow_sample(field, u, model.sample_steps)));
    }
  } else if (model.backend == "diffusion") {
    const ScoreFn score = field_of(model.net);
    for (long i = 0; i < count; ++i) {
      RngStream row = rng.fork(static_cast<std::uint64_t>(i));
      out.push_back(
          Outcome::real(diffusion_sample(score, model.schedule, model.dim, row,
                                         model.sample_steps)));
    }
  } else if (model.backend == "autoreg") {
    std::vector<double> u(model.table.d());
    for (long i = 0; i < count; ++i) {
      RngStream row = rng.fork(static_cast<std::uint64_t>(i));
      row.fill_uniform(u);
      out.push_back(Outcome::tokens(ancestral_sample(model.table, u)));
    }
  } else {
    throw std::runtime_error("generate_samples: unknown backend " + model.backend);
  }
  return out;
}

namespace {

std::filesystem::path data_dir(const ExperimentConfig& c) {
  return std::filesystem::path(c.out_dir) / "data";
}
std::filesystem::path model_dir(const ExperimentConfig& c) {
  return std::filesystem::path(c.out_dir) / "models";
}
std::filesystem::path log_dir(const ExperimentConfig& c) {
  return std::filesystem::path(c.out_dir) / "logs";
}

std::string cell_name(const ExperimentConfig& c, const std::string& method,
                      const std::string& scenario, std::uint64_t seed) {
  std::ostringstream os;
  os << c.backend << '_' << method;
  if (!scenario_free(method)) os << '_' << scenario;
  os << "_seed" << seed;
  return os.str();
}

void write_training_log(const std::filesystem::path& path, const TrainResult& result) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open for writing: " + path.string());
  os << "step,risk\n";
  for (const auto& [step, risk] : result.risk_log) {
    os << step << ',' << format_double(risk) << '\n';
  }
  os << "final," << format_double(result.final_risk) << '\n';
}

}  // namespace

void run_simulate(const ExperimentConfig& config) {
  const Dgp dgp = make_dgp(config.dgp);
  std::filesystem::create_directories(data_dir(config));
  for (std::uint64_t seed : config.seeds) {
    RngStream data_rng(seed, streams::data);
    const Dataset data = dgp.sample_observational(config.n, data_rng);
    write_dataset_csv(data_dir(config) / ("obs_seed" + std::to_string(seed) + ".csv"), data);

    RngStream cf_rng(seed, streams::counterfactual);
    const auto counterfactual = dgp.sample_counterfactual(config.n, cf_rng);
    write_outcomes_csv(data_dir(config) / ("cf_seed" + std::to_string(seed) + ".csv"),
                       counterfactual);
  }
}

void run_train(const ExperimentConfig& config, const std::string& method,
               const std::string& scenario) {
  if (!known_methods().count(method)) throw ConfigError("unknown method: " + method);
  if (!scenario_free(method) && !known_scenarios().count(scenario)) {
    throw ConfigError("unknown scenario: " + scenario);
  }
  std::filesystem::create_directories(model_dir(config));
  std::filesystem::create_directories(log_dir(config));

  for (std::uint64_t seed : config.seeds) {
    const auto obs_path = data_dir(config) / ("obs_seed" + std::to_string(seed) + ".csv");
    if (!std::filesystem::exists(obs_path)) {
      throw std::runtime_error("train: missing data file " + obs_path.string() +
                               " (run simulate first)");
    }
    SeedData sd;
    sd.data = read_dataset_csv(obs_path);
    RngStream fold_rng(seed, streams::folds);
    sd.folded = partition_folds(sd.data, fold_rng);
    if (method == "oracle") {
      const auto cf_path = data_dir(config) / ("cf_seed" + std::to_string(seed) + ".csv");
      if (!std::filesystem::exists(cf_path)) {
        throw std::runtime_error("train: missing counterfactual file " + cf_path.string());
      }
      sd.counterfactual = read_outcomes_csv(cf_path);
    }

    const TrainResult result = train_model(config, sd, method, scenario, seed);
    const std::string name = cell_name(config, method, scenario, seed);
    save_model(result.model, model_dir(config) / (name + ".json"));
    write_training_log(log_dir(config) / (name + ".csv"), result);
  }
}

void run_generate(const std::filesystem::path& model_file, long count, std::uint64_t seed,
                  const std::filesystem::path& out_csv) {
  const TrainedModel model = load_model(model_file);
  const RngStream rng(seed, streams::generate);
  const auto samples = generate_samples(model, count, rng);
  if (samples.empty()) {
    write_outcomes_csv(out_csv, samples,
                       model.backend == "autoreg" ? OutcomeKind::token_seq
                                                  : OutcomeKind::real_vector,
                       model.backend == "autoreg" ? model.table.d() : model.dim);
  } else {
    write_outcomes_csv(out_csv, samples);
  }
}

std::vector<MetricReport> evaluate_samples(const ExperimentConfig& config,
                                           std::span<const Outcome> samples,
                                           std::span<const Outcome> reference,
                                           const std::string& scenario, const std::string& method,
                                           std::uint64_t seed) {
  if (samples.empty() || reference.empty()) {
    throw std::runtime_error("evaluate: empty sample set");
  }
  std::vector<MetricReport> reports;
  const long n = config.n;

  if (samples.front().is_real()) {
    const std::size_t dim = samples.front().dim();
    RngStream metric_rng(seed, streams::metric);
    if (dim == 1) {
      std::vector<double> a, b;
      a.reserve(samples.size());
      b.reserve(reference.size());
      for (const auto& y : samples) a.push_back(y.reals()[0]);
      for (const auto& y : reference) b.push_back(y.reals()[0]);
      reports.push_back({scenario, method, "w1", wasserstein1_1d(a, b, metric_rng.fork(1)),
                         seed, n});
      const auto edges = equal_width_edges(a, b, config.metrics.bins);
      reports.push_back({scenario, method, "tv", tv_binned(a, b, edges), seed, n});
    } else {
      std::vector<std::vector<double>> a, b;
      for (const auto& y : samples) a.push_back(y.reals());
      for (const auto& y : reference) b.push_back(y.reals());
      reports.push_back({scenario, method, "sliced_w1",
                         sliced_w1(a, b, config.metrics.projections, metric_rng.fork(1)), seed,
                         n});
    }
  } else {
    TokenPmf pa, pb;
    for (const auto& y : samples) pa[y.token_seq()] += 1.0 / samples.size();
    for (const auto& y : reference) pb[y.token_seq()] += 1.0 / reference.size();
    reports.push_back({scenario, method, "tv", tv_between_pmfs(pb, pa), seed, n});
  }
  return reports;
}

void run_evaluate(const ExperimentConfig& config, const std::filesystem::path& samples_csv,
                  const std::filesystem::path& reference_csv, const std::string& scenario,
                  const std::string& method, std::uint64_t seed) {
  const auto samples = read_outcomes_csv(samples_csv);
  const auto reference = read_outcomes_csv(reference_csv);
  const auto reports = evaluate_samples(config, samples, reference, scenario, method, seed);
  std::filesystem::create_directories(config.out_dir);
  append_metric_reports(std::filesystem::path(config.out_dir) / "metrics.csv", reports);
}

namespace {

struct CellResult {
  std::vector<MetricReport> reports;
};

/// Metrics for one trained model of one seed.
std::vector<MetricReport> evaluate_cell(const ExperimentConfig& config, const Dgp& dgp,
                                        const TrainedModel& model, const std::string& scenario,
                                        const std::string& method, std::uint64_t seed,
                                        const std::vector<Outcome>& eval_reference,
                                        const TokenPmf& truth_pmf) {
  std::vector<MetricReport> reports;
  const long n = config.n;
  if (config.backend == "autoreg") {
    const TokenPmf model_pmf = exact_pmf(model.table);
    reports.push_back(
        {scenario, method, "kl", exact_kl_to_model(truth_pmf, model.table), seed, n});
    reports.push_back({scenario, method, "tv", tv_between_pmfs(truth_pmf, model_pmf), seed, n});
    return reports;
  }
  const RngStream gen_rng = RngStream(seed, streams::generate).fork(fnv1a(method));
  const auto samples = generate_samples(model, config.metrics.eval_samples, gen_rng);
  return evaluate_samples(config, samples, eval_reference, scenario, method, seed);
}

struct SummaryRow {
  std::string scenario;
  std::string method;
  std::map<std::string, double> metric_means;
  std::string beats_naive;  // e.g. "8/10" for doublegen rows
};

std::vector<SummaryRow> summarize(const std::vector<MetricReport>& reports,
                                  const std::vector<std::string>& scenario_order,
                                  const std::vector<std::string>& method_order,
                                  const std::string& primary) {
  // Means per (scenario, method, metric).
  std::map<std::tuple<std::string, std::string, std::string>, std::pair<double, long>> acc;
  // Per-seed primary-metric values for the beats-naive counts.
  std::map<std::tuple<std::string, std::string, std::uint64_t>, double> primary_vals;
  for (const auto& r : reports) {
    auto& slot = acc[{r.scenario, r.method, r.metric}];
    slot.first += r.value;
    slot.second += 1;
    if (r.metric == primary) primary_vals[{r.scenario, r.method, r.seed}] = r.value;
  }

  std::vector<SummaryRow> rows;
  for (const auto& scenario : scenario_order) {
    for (const auto& method : method_order) {
      SummaryRow row;
      row.scenario = scenario;
      row.method = method;
      bool any = false;
      for (const auto& [key, val] : acc) {
        if (std::get<0>(key) != scenario || std::get<1>(key) != method) continue;
        row.metric_means[std::get<2>(key)] = val.first / val.second;
        any = true;
      }
      if (!any) continue;
      if (method != "naive") {
        long wins = 0, total = 0;
        for (const auto& [key, val] : primary_vals) {
          if (std::get<0>(key) != scenario || std::get<1>(key) != method) continue;
          const auto naive_it = primary_vals.find({scenario, "naive", std::get<2>(key)});
          if (naive_it == primary_vals.end()) continue;
          total += 1;
          if (val <= naive_it->second) wins += 1;
        }
        if (total > 0) {
          row.beats_naive = std::to_string(wins) + "/" + std::to_string(total);
        }
      }
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

void write_summary(const std::filesystem::path& dir, const std::vector<SummaryRow>& rows) {
  // Union of metric names, sorted for a stable column order.
  std::set<std::string> metric_names;
  for (const auto& row : rows) {
    for (const auto& [name, _] : row.metric_means) metric_names.insert(name);
  }

  std::ofstream csv(dir / "summary.csv");
  if (!csv) throw std::runtime_error("cannot open summary.csv for writing");
  csv << "scenario,method";
  for (const auto& name : metric_names) csv << ',' << name;
  csv << ",le_naive\n";
  for (const auto& row : rows) {
    csv << row.scenario << ',' << row.method;
    for (const auto& name : metric_names) {
      csv << ',';
      const auto it = row.metric_means.find(name);
      if (it != row.metric_means.end()) csv << format_double(it->second);
    }
    csv << ',' << row.beats_naive << '\n';
  }

  std::ofstream txt(dir / "summary.txt");
  txt << "scenario            method      ";
  for (const auto& name : metric_names) {
    txt << name;
    txt << std::string(name.size() < 12 ? 12 - name.size() : 1, ' ');
  }
  txt << "le_naive\n";
  for (const auto& row : rows) {
    std::ostringstream line;
    line << row.scenario << std::string(row.scenario.size() < 20 ? 20 - row.scenario.size() : 1, ' ')
         << row.method << std::string(row.method.size() < 12 ? 12 - row.method.size() : 1, ' ');
    for (const auto& name : metric_names) {
      const auto it = row.metric_means.find(name);
      std::string cell = it == row.metric_means.end() ? "-" : format_double(it->second);
      if (cell.size() > 10) cell = cell.substr(0, 10);
      line << cell << std::string(cell.size() < 12 ? 12 - cell.size() : 1, ' ');
    }
    line << row.beats_naive;
    txt << line.str() << '\n';
  }
}

}  // namespace

std::string primary_metric(const std::string& backend) {
  return backend == "autoreg" ? "kl" : "w1";
}

void run_experiment(const ExperimentConfig& config) {
  const Dgp dgp = make_dgp(config.dgp);
  std::filesystem::create_directories(config.out_dir);
  std::filesystem::create_directories(log_dir(config));
  {
    std::ofstream os(std::filesystem::path(config.out_dir) / "config.json");
    os << config_to_json_text(config) << '\n';
  }

  const std::size_t n_seeds = config.seeds.size();
  std::vector<std::vector<MetricReport>> per_seed(n_seeds);
  std::vector<std::map<std::string, TrainResult>> per_seed_logs(n_seeds);

  const TokenPmf truth_pmf =
      config.backend == "autoreg" ? dgp.counterfactual_pmf() : TokenPmf{};

  auto run_seed = [&](std::size_t seed_index) {
    const std::uint64_t seed = config.seeds[seed_index];
    const SeedData sd = make_seed_data(config, dgp, seed);

    std::vector<Outcome> eval_reference;
    if (config.backend != "autoreg") {
      RngStream eval_rng(seed, streams::evaluation);
      eval_reference = dgp.sample_counterfactual(config.metrics.eval_samples, eval_rng);
    }

    // Scenario-free methods are trained once per seed and reused.
    std::map<std::string, TrainResult> trained_scenario_free;
    std::map<std::string, std::array<NuisancePair, 2>> scenario_nuisances;

    for (const auto& scenario : config.scenarios) {
      for (const auto& method : config.methods) {
        const TrainResult* result = nullptr;
        TrainResult local;
        if (scenario_free(method)) {
          auto it = trained_scenario_free.find(method);
          if (it == trained_scenario_free.end()) {
            it = trained_scenario_free
                     .emplace(method, train_model(config, sd, method, scenario, seed))
                     .first;
          }
          result = &it->second;
        } else {
          auto it = scenario_nuisances.find(scenario);
          if (it == scenario_nuisances.end()) {
            it = scenario_nuisances
                     .emplace(scenario, fit_scenario_nuisances(sd.folded, scenario,
                                                               config.nuisance, 1))
                     .first;
          }
          local = train_model(config, sd, method, scenario, seed, &it->second);
          result = &local;
        }

        auto reports = evaluate_cell(config, dgp, result->model, scenario, method, seed,
                                     eval_reference, truth_pmf);
        per_seed[seed_index].insert(per_seed[seed_index].end(), reports.begin(), reports.end());
        per_seed_logs[seed_index][cell_name(config, method, scenario, seed)] = *result;
      }
    }
  };

  if (config.threads <= 1 || n_seeds < 2) {
    for (std::size_t i = 0; i < n_seeds; ++i) run_seed(i);
  } else {
    std::vector<std::thread> pool;
    std::size_t next = 0;
    std::mutex mu;
    const std::size_t workers = std::min<std::size_t>(config.threads, n_seeds);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (;;) {
          std::size_t i;
          {
            std::lock_guard<std::mutex> lock(mu);
            if (next >= n_seeds) return;
            i = next++;
          }
          run_seed(i);
        }
      });
    }
    for (auto& t : pool) t.join();
  }

  // Single writer, fixed (scenario, method, seed) order.
  std::vector<MetricReport> ordered;
  for (const auto& scenario : config.scenarios) {
    for (const auto& method : config.methods) {
      for (std::size_t i = 0; i < n_seeds; ++i) {
        for (const auto& r : per_seed[i]) {
          if (r.scenario == scenario && r.method == method) ordered.push_back(r);
        }
      }
    }
  }
  const auto metrics_path = std::filesystem::path(config.out_dir) / "metrics.csv";
  std::filesystem::remove(metrics_path);
  append_metric_reports(metrics_path, ordered);

  for (std::size_t i = 0; i < n_seeds; ++i) {
    for (const auto& [name, result] : per_seed_logs[i]) {
      write_training_log(log_dir(config) / (name + ".csv"), result);
    }
  }

  const auto rows =
      summarize(ordered, config.scenarios, config.methods, primary_metric(config.backend));
  write_summary(config.out_dir, rows);
}

void run_report(const std::filesystem::path& metrics_csv, const std::filesystem::path& out_dir) {
  const auto reports = read_metric_reports(metrics_csv);
  if (reports.empty()) throw std::runtime_error("report: metrics file has no rows");

  // Recover orders of appearance and the primary metric from the rows.
  std::vector<std::string> scenarios, methods;
  bool has_kl = false;
  for (const auto& r : reports) {
    if (std::find(scenarios.begin(), scenarios.end(), r.scenario) == scenarios.end()) {
      scenarios.push_back(r.scenario);
    }
    if (std::find(methods.begin(), methods.end(), r.method) == methods.end()) {
      methods.push_back(r.method);
    }
    has_kl = has_kl || r.metric == "kl";
  }
  std::filesystem::create_directories(out_dir);
  write_summary(out_dir, summarize(reports, scenarios, methods, has_kl ? "kl" : "w1"));
}

}  // namespace doublegen
