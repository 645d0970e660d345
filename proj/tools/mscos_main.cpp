// Command-line front end: simulate / fit / predict / evaluate over JSON
// configs. Exit codes: 0 success, 2 usage or config error, 3 numerical
// failure.

#include <CLI11.hpp>

#include <chrono>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mscos/mscos.hpp"

namespace fs = std::filesystem;
using namespace mscos;

namespace {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

Json load_config(const std::string& path) {
  try {
    return Json::parse(io::read_file(path));
  } catch (const Json::parse_error& e) {
    throw ConfigError(path + ": invalid JSON: " + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

// Walk a dotted path; failures report the full field path.
const Json& field(const Json& root, const std::string& path) {
  const Json* cur = &root;
  std::string walked;
  std::istringstream in(path);
  std::string key;
  while (std::getline(in, key, '.')) {
    walked += walked.empty() ? key : "." + key;
    if (!cur->is_object() || !cur->contains(key))
      throw ConfigError("config: missing field '" + walked + "'");
    cur = &(*cur)[key];
  }
  return *cur;
}

template <typename T>
T field_as(const Json& root, const std::string& path) {
  try {
    return field(root, path).get<T>();
  } catch (const Json::exception& e) {
    throw ConfigError("config: field '" + path + "': " + e.what());
  }
}

template <typename T>
T field_or(const Json& root, const std::string& path, T fallback) {
  try {
    field(root, path);
  } catch (const ConfigError&) {
    return fallback;
  }
  return field_as<T>(root, path);
}

void check_schema(const Json& config) {
  if (field_or<int>(config, "schema", -1) != 1)
    throw ConfigError("config: 'schema' must be 1");
}

std::string timestamp_utc() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

Hyperparams hyper_from(const Json& config, const std::string& path) {
  Hyperparams h;
  Json j;
  try {
    j = field(config, path);
  } catch (const ConfigError&) {
    return h;
  }
  auto set = [&](const char* key, double& slot) {
    if (j.contains(key)) slot = j[key].get<double>();
  };
  set("sigma2_beta", h.sigma2_beta);
  set("a_eta", h.a_eta); set("b_eta", h.b_eta);
  set("a_sigma", h.a_sigma); set("b_sigma", h.b_sigma);
  set("a_nu", h.a_nu); set("b_nu", h.b_nu);
  set("a_phi", h.a_phi); set("b_phi", h.b_phi);
  set("a_rho", h.a_rho); set("b_rho", h.b_rho);
  set("a_tau", h.a_tau); set("b_tau", h.b_tau);
  try {
    h.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError("config: field '" + path + "': " + e.what());
  }
  return h;
}

Json hyper_to_json(const Hyperparams& h) {
  return Json{{"sigma2_beta", h.sigma2_beta}, {"a_eta", h.a_eta},
              {"b_eta", h.b_eta},             {"a_sigma", h.a_sigma},
              {"b_sigma", h.b_sigma},         {"a_nu", h.a_nu},
              {"b_nu", h.b_nu},               {"a_phi", h.a_phi},
              {"b_phi", h.b_phi},             {"a_rho", h.a_rho},
              {"b_rho", h.b_rho},             {"a_tau", h.a_tau},
              {"b_tau", h.b_tau}};
}

McmcConfig mcmc_from(const Json& config, const std::string& path,
                     std::optional<std::uint64_t> seed_override) {
  McmcConfig m;
  m.n_iter = field_as<int>(config, path + ".n_iter");
  m.burn_in = field_as<int>(config, path + ".burn_in");
  m.thin = field_or<int>(config, path + ".thin", 1);
  m.seed = field_or<std::uint64_t>(config, path + ".seed", 0);
  m.chains = field_or<int>(config, path + ".chains", 2);
  m.adapt = field_or<bool>(config, path + ".adapt", true);
  m.step_phi = field_or<double>(config, path + ".step_phi", 0.5);
  m.step_rho = field_or<double>(config, path + ".step_rho", 0.1);
  m.step_tau = field_or<double>(config, path + ".step_tau", 0.2);
  if (seed_override) m.seed = *seed_override;
  try {
    m.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError("config: field '" + path + "': " + e.what());
  }
  return m;
}

Json mcmc_to_json(const McmcConfig& m) {
  return Json{{"n_iter", m.n_iter},     {"burn_in", m.burn_in},
              {"thin", m.thin},         {"seed", m.seed},
              {"chains", m.chains},     {"adapt", m.adapt},
              {"step_phi", m.step_phi}, {"step_rho", m.step_rho},
              {"step_tau", m.step_tau}};
}

void ensure_out_dir(const std::string& out) {
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec || !fs::is_directory(out))
    throw ConfigError("config: output directory '" + out + "' is not writable");
}

std::string truth_csv(const std::vector<std::string>& ids,
                      const Eigen::VectorXd& y1, const Eigen::VectorXd& y2) {
  std::string out = "unit_id,y1,y2\n";
  for (Eigen::Index i = 0; i < y1.size(); ++i)
    out += ids[static_cast<std::size_t>(i)] + "," + io::format_double(y1[i]) +
           "," + io::format_double(y2[i]) + "\n";
  return out;
}

struct TruthTable {
  std::vector<std::string> ids;
  Eigen::VectorXd y1, y2;
};

TruthTable load_truth_csv(const std::string& path) {
  const auto lines = io::csv_lines(io::read_file(path), path);
  if (lines.empty() || io::split_csv_line(lines[0]) !=
                           std::vector<std::string>{"unit_id", "y1", "y2"})
    throw std::invalid_argument(path + ": expected header unit_id,y1,y2");
  TruthTable out;
  std::vector<double> y1, y2;
  for (std::size_t k = 1; k < lines.size(); ++k) {
    const auto fields = io::split_csv_line(lines[k]);
    const std::string where = path + ": line " + std::to_string(k + 1);
    if (fields.size() != 3) throw std::invalid_argument(where + ": expected 3 fields");
    out.ids.push_back(fields[0]);
    y1.push_back(fields[1].empty() ? std::nan("") : io::parse_double(fields[1], where));
    y2.push_back(fields[2].empty() ? std::nan("") : io::parse_double(fields[2], where));
  }
  out.y1 = Eigen::Map<const Eigen::VectorXd>(y1.data(), static_cast<Eigen::Index>(y1.size()));
  out.y2 = Eigen::Map<const Eigen::VectorXd>(y2.data(), static_cast<Eigen::Index>(y2.size()));
  return out;
}

// ---- model/spec assembly from a files block ------------------------------

struct LoadedGeometry {
  ArealSupport fine;
  ArealSupport support1, support2;
  PartitionMatrix p1, p2;
};

LoadedGeometry load_geometry(const Json& config, Arity arity) {
  LoadedGeometry g;
  g.fine = load_support_json(field_as<std::string>(config, "files.fine_support"));
  const bool partial = field_or<bool>(config, "files.allow_partial_overlap", false);
  if (arity != Arity::Univariate2) {
    g.support1 = load_support_json(field_as<std::string>(config, "files.support1"));
    g.p1 = build_partition_matrix(
        g.support1, g.fine,
        load_overlap_csv(field_as<std::string>(config, "files.overlap1")), partial);
  }
  if (arity != Arity::Univariate1) {
    g.support2 = load_support_json(field_as<std::string>(config, "files.support2"));
    g.p2 = build_partition_matrix(
        g.support2, g.fine,
        load_overlap_csv(field_as<std::string>(config, "files.overlap2")), partial);
  }
  return g;
}

ModelSpec spec_from(const Json& model_block, const LoadedGeometry& g) {
  const ModelKind kind =
      model_kind_from_string(field_as<std::string>(model_block, "kind"));
  const Arity arity =
      arity_from_string(field_or<std::string>(model_block, "arity", "bivariate"));
  const Hyperparams hyper = hyper_from(model_block, "hyper");
  std::shared_ptr<const BasisSet> basis;
  std::shared_ptr<const CarStructure> car;
  if (kind == ModelKind::MCAR) {
    car = std::make_shared<CarStructure>(g.fine);
  } else {
    const int r = field_as<int>(model_block, "r");
    const auto knot_seed = field_or<std::uint64_t>(model_block, "knot_seed", 1);
    basis = std::make_shared<BasisSet>(build_basis(g.fine, r, knot_seed));
  }
  return make_model_spec(kind, arity, hyper, g.p1, g.p2, basis, car);
}

// ---- subcommands ----------------------------------------------------------

int cmd_simulate(const Json& config, std::optional<std::uint64_t> seed_override,
                 int threads, std::string out_dir) {
  check_schema(config);
  const auto wall_start = std::chrono::steady_clock::now();
  if (out_dir.empty()) out_dir = field_as<std::string>(config, "out");
  ensure_out_dir(out_dir);
  ensure_out_dir(out_dir + "/supports");
  ensure_out_dir(out_dir + "/datasets");

  ScenarioConfig scenario;
  scenario.truths.clear();
  for (const auto& name : field_as<std::vector<std::string>>(config, "scenario.truths"))
    scenario.truths.push_back(model_kind_from_string(name));
  scenario.fits.clear();
  for (const auto& name : field_as<std::vector<std::string>>(config, "scenario.fits"))
    scenario.fits.push_back(model_kind_from_string(name));
  scenario.n_datasets = field_as<int>(config, "scenario.n_datasets");
  scenario.r = field_or<int>(config, "scenario.r", 50);
  scenario.knot_seed = field_or<std::uint64_t>(config, "scenario.knot_seed", 1);
  scenario.seed = field_or<std::uint64_t>(config, "scenario.seed", 0);
  if (seed_override) scenario.seed = *seed_override;
  scenario.mcmc = mcmc_from(config, "scenario.mcmc", std::nullopt);
  try {
    scenario.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: scenario: ") + e.what());
  }

  const SimSupports sims = build_sim_supports();
  save_support_json(sims.da, out_dir + "/supports/da.json");
  save_support_json(sims.d1, out_dir + "/supports/d1.json");
  save_support_json(sims.d2, out_dir + "/supports/d2.json");
  save_overlap_csv(sims.overlaps1, out_dir + "/supports/overlap1.csv");
  save_overlap_csv(sims.overlaps2, out_dir + "/supports/overlap2.csv");

  // Regenerate the datasets the scenario will see and persist them.
  const auto basis = build_basis(
      sims.da, scenario.r, derive_seed(scenario.seed, 0x6b6eULL, scenario.knot_seed));
  const CarStructure car(sims.da);
  for (const auto& [truth, d] : scenario_datasets(scenario)) {
    const SimulatedDataset sim = generate_dataset(
        truth, TruthParams::defaults_for(truth), sims, &basis, &car,
        derive_seed(scenario.seed, 1ULL, static_cast<std::uint64_t>(truth),
                    static_cast<std::uint64_t>(d)));
    const std::string stem =
        out_dir + "/datasets/" + to_string(truth) + "_d" + std::to_string(d);
    save_data_csv(sims.d1.ids(), sim.data.y1, stem + "_y1.csv");
    save_data_csv(sims.d2.ids(), sim.data.y2, stem + "_y2.csv");
    io::write_file(stem + "_truth.csv", truth_csv(sims.da.ids(), sim.ya1, sim.ya2));
  }

  const ScenarioResult result = run_scenario(scenario, sims, threads);

  std::string runs = "truth,dataset,fit,rmse_y1_partition,rmse_y2_partition,"
                     "rmse_y1_observed,rmse_y2_observed,ok,error\n";
  for (const ScenarioRun& run : result.runs) {
    runs += to_string(run.truth) + "," + std::to_string(run.dataset_index) + "," +
            to_string(run.fit) + ",";
    if (run.ok)
      runs += io::format_double(run.rmse_y1_partition) + "," +
              io::format_double(run.rmse_y2_partition) + "," +
              io::format_double(run.rmse_y1_observed) + "," +
              io::format_double(run.rmse_y2_observed) + ",1,";
    else
      runs += ",,,,0," + run.error;
    runs += "\n";
  }
  io::write_file(out_dir + "/runs.csv", runs);

  std::string table = "truth,fit,variable,scale,mean_rmse,sd_rmse,completed\n";
  for (const ScenarioCell& cell : result.table)
    table += to_string(cell.truth) + "," + to_string(cell.fit) + "," +
             cell.variable + "," + cell.scale + "," +
             io::format_double(cell.mean_rmse) + "," +
             io::format_double(cell.sd_rmse) + "," +
             std::to_string(cell.completed) + "\n";
  io::write_file(out_dir + "/table.csv", table);

  Json timings = Json::array();
  for (const ScenarioRun& run : result.runs)
    timings.push_back({{"truth", to_string(run.truth)},
                       {"dataset", run.dataset_index},
                       {"fit", to_string(run.fit)},
                       {"seconds", run.seconds}});
  Json manifest = {
      {"schema", 1},
      {"command", "simulate"},
      {"seed", scenario.seed},
      {"config", config},
      {"runs", result.runs.size()},
      {"timings", timings},
      {"written_at", timestamp_utc()},
      {"run_seconds",
       std::chrono::duration<double>(std::chrono::steady_clock::now() - wall_start)
           .count()},
  };
  io::write_file(out_dir + "/manifest.json", manifest.dump(2) + "\n");
  return 0;
}

int cmd_fit(const Json& config, std::optional<std::uint64_t> seed_override,
            int threads, std::string out_dir) {
  check_schema(config);
  const auto wall_start = std::chrono::steady_clock::now();
  if (out_dir.empty()) out_dir = field_as<std::string>(config, "out");
  ensure_out_dir(out_dir);

  const Json& model_block = field(config, "model");
  const Arity arity =
      arity_from_string(field_or<std::string>(model_block, "arity", "bivariate"));
  const LoadedGeometry g = load_geometry(config, arity);
  const ModelSpec spec = spec_from(model_block, g);

  Dataset data;
  if (spec.uses_var1())
    data.y1 = load_data_csv(field_as<std::string>(config, "files.data1"), g.support1);
  if (spec.uses_var2())
    data.y2 = load_data_csv(field_as<std::string>(config, "files.data2"), g.support2);
  try {
    validate_dataset(spec, data);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: files: ") + e.what());
  }

  const McmcConfig mcmc = mcmc_from(config, "mcmc", seed_override);
  const std::vector<PosteriorDraws> chains = run_chains(spec, data, mcmc, threads);
  for (std::size_t c = 0; c < chains.size(); ++c)
    save_draws_csv(chains[c], static_cast<int>(c),
                   out_dir + "/draws_chain" + std::to_string(c) + ".csv");

  // Gelman-Rubin per scalar parameter across chains.
  std::string diagnostics = "parameter,rhat\n";
  std::map<std::string, double> rhat;
  if (chains.size() >= 2 && chains[0].n_draws() >= 10) {
    for (std::size_t k = 0; k < chains[0].scalar_names.size(); ++k) {
      std::vector<Eigen::VectorXd> columns;
      for (const auto& chain : chains)
        columns.push_back(chain.scalars.col(static_cast<Eigen::Index>(k)));
      rhat[chains[0].scalar_names[k]] = gelman_rubin(columns);
    }
  }
  for (const auto& [name, value] : rhat)
    diagnostics += name + "," + io::format_double(value) + "\n";
  io::write_file(out_dir + "/diagnostics.csv", diagnostics);

  Json chain_info = Json::array();
  for (const auto& chain : chains) {
    Json acc;
    for (const auto& [name, value] : chain.acceptance) acc[name] = value;
    chain_info.push_back({{"seed", chain.chain_seed},
                          {"acceptance", acc},
                          {"numerical_rejections", chain.numerical_rejections}});
  }
  Json manifest = {
      {"schema", 1},
      {"command", "fit"},
      {"model",
       {{"kind", to_string(spec.kind)},
        {"arity", to_string(spec.arity)},
        {"r", spec.rank()},
        {"knot_seed", field_or<std::uint64_t>(model_block, "knot_seed", 1)},
        {"hyper", hyper_to_json(spec.hyper)}}},
      {"mcmc", mcmc_to_json(mcmc)},
      {"chains", chain_info},
      {"gelman_rubin", rhat},
      {"config", config},
      {"written_at", timestamp_utc()},
      {"run_seconds",
       std::chrono::duration<double>(std::chrono::steady_clock::now() - wall_start)
           .count()},
  };
  io::write_file(out_dir + "/manifest.json", manifest.dump(2) + "\n");
  return 0;
}

// Identity partition of a support: lets the prediction-side ModelSpec be
// rebuilt without the original observation geometry.
PartitionMatrix identity_partition(const ArealSupport& support) {
  OverlapTable t;
  for (Eigen::Index i = 0; i < support.n(); ++i)
    t.push_back({support.ids()[static_cast<std::size_t>(i)],
                 support.ids()[static_cast<std::size_t>(i)], support.areas()[i]});
  return build_partition_matrix(support, support, t);
}

ModelSpec prediction_spec(const Json& fit_manifest, const ArealSupport& fine) {
  const ModelKind kind =
      model_kind_from_string(field_as<std::string>(fit_manifest, "model.kind"));
  const Arity arity =
      arity_from_string(field_as<std::string>(fit_manifest, "model.arity"));
  const Hyperparams hyper = hyper_from(fit_manifest, "model.hyper");
  const PartitionMatrix identity = identity_partition(fine);
  std::shared_ptr<const BasisSet> basis;
  std::shared_ptr<const CarStructure> car;
  if (kind == ModelKind::MCAR) {
    car = std::make_shared<CarStructure>(fine);
  } else {
    basis = std::make_shared<BasisSet>(
        build_basis(fine, field_as<int>(fit_manifest, "model.r"),
                    field_or<std::uint64_t>(fit_manifest, "model.knot_seed", 1)));
  }
  return make_model_spec(kind, arity, hyper, identity, identity, basis, car);
}

std::vector<PosteriorDraws> load_fit_draws(const std::string& fit_dir,
                                           const Json& fit_manifest,
                                           const ModelSpec& spec) {
  const auto n_chains = field(fit_manifest, "chains").size();
  if (n_chains == 0) throw ConfigError(fit_dir + ": manifest lists no chains");
  std::vector<PosteriorDraws> chains;
  for (std::size_t c = 0; c < n_chains; ++c)
    chains.push_back(load_draws_csv(
        fit_dir + "/draws_chain" + std::to_string(c) + ".csv", spec));
  return chains;
}

int cmd_predict(const Json& config, std::optional<std::uint64_t> seed_override,
                int threads, std::string out_dir) {
  check_schema(config);
  const auto wall_start = std::chrono::steady_clock::now();
  if (out_dir.empty()) out_dir = field_as<std::string>(config, "out");
  ensure_out_dir(out_dir);

  const std::string fit_dir = field_as<std::string>(config, "fit_dir");
  const Json fit_manifest = load_config(fit_dir + "/manifest.json");
  const ArealSupport fine =
      load_support_json(field_as<std::string>(config, "files.fine_support"));
  const ModelSpec spec = prediction_spec(fit_manifest, fine);
  const PosteriorDraws draws = pool_draws(load_fit_draws(fit_dir, fit_manifest, spec));

  PredictOptions options;
  options.seed = field_or<std::uint64_t>(config, "predict.seed", 0);
  if (seed_override) options.seed = *seed_override;
  options.use_latent_mean = field_or<bool>(config, "predict.use_latent_mean", false);
  options.thin = field_or<int>(config, "predict.thin", 1);
  options.threads = threads;
  options.keep_draws = field_or<bool>(config, "predict.save_draws", false);

  std::optional<PartitionMatrix> target;
  if (field_or<std::string>(config, "files.target_overlap", "") != "") {
    const ArealSupport target_support =
        load_support_json(field_as<std::string>(config, "files.target_support"));
    target = build_partition_matrix(
        target_support, fine,
        load_overlap_csv(field_as<std::string>(config, "files.target_overlap")),
        field_or<bool>(config, "files.allow_partial_overlap", false));
  }

  const PredictionResult result =
      cos_predict(spec, draws, options, target ? &*target : nullptr);
  save_prediction_csv(result, out_dir + "/predictions.csv");
  if (options.keep_draws) {
    std::string text = "draw,variable,unit_id,value\n";
    auto emit = [&](const std::string& variable, const Eigen::MatrixXd& values) {
      for (Eigen::Index k = 0; k < values.rows(); ++k)
        for (Eigen::Index u = 0; u < values.cols(); ++u)
          text += std::to_string(k) + "," + variable + "," +
                  result.unit_ids[static_cast<std::size_t>(u)] + "," +
                  io::format_double(values(k, u)) + "\n";
    };
    if (result.has_var1) emit("y1", result.draws1);
    if (result.has_var2) emit("y2", result.draws2);
    io::write_file(out_dir + "/prediction_draws.csv", text);
  }

  Json manifest = {
      {"schema", 1},
      {"command", "predict"},
      {"seed", options.seed},
      {"draws_used", draws.n_draws()},
      {"config", config},
      {"written_at", timestamp_utc()},
      {"run_seconds",
       std::chrono::duration<double>(std::chrono::steady_clock::now() - wall_start)
           .count()},
  };
  io::write_file(out_dir + "/manifest.json", manifest.dump(2) + "\n");
  return 0;
}

int cmd_evaluate(const Json& config, std::string out_dir) {
  check_schema(config);
  if (out_dir.empty()) out_dir = field_as<std::string>(config, "out");
  ensure_out_dir(out_dir);

  MetricReport report;
  const std::string truth_path = field_or<std::string>(config, "files.truth", "");
  const std::string pred_path = field_or<std::string>(config, "files.prediction", "");
  if (!truth_path.empty() || !pred_path.empty()) {
    if (truth_path.empty())
      throw ConfigError("config: files.truth required when RMSE is requested");
    if (pred_path.empty())
      throw ConfigError("config: files.prediction required when RMSE is requested");
    const TruthTable truth = load_truth_csv(truth_path);
    const PredictionTable pred = load_prediction_csv(pred_path);
    std::map<std::string, Eigen::Index> index;
    for (std::size_t i = 0; i < truth.ids.size(); ++i)
      index[truth.ids[i]] = static_cast<Eigen::Index>(i);
    auto align = [&](const Eigen::VectorXd& column) {
      Eigen::VectorXd out(static_cast<Eigen::Index>(pred.unit_ids.size()));
      for (std::size_t i = 0; i < pred.unit_ids.size(); ++i) {
        const auto it = index.find(pred.unit_ids[i]);
        if (it == index.end())
          throw ConfigError("evaluate: prediction unit '" + pred.unit_ids[i] +
                            "' not present in the truth file");
        out[static_cast<Eigen::Index>(i)] = column[it->second];
      }
      return out;
    };
    if (pred.has_var1) report.rmse["y1"] = rmse(align(truth.y1), pred.mean1);
    if (pred.has_var2) report.rmse["y2"] = rmse(align(truth.y2), pred.mean2);
  }

  const std::string fit_dir = field_or<std::string>(config, "fit_dir", "");
  // WAIC needs the fit's data files; Gelman-Rubin only needs the fine
  // support (to rebuild the draw layout) and at least two stored chains.
  const bool have_fine = field_or<std::string>(config, "files.fine_support", "") != "";
  const bool want_waic = have_fine &&
                         (field_or<std::string>(config, "files.data1", "") != "" ||
                          field_or<std::string>(config, "files.data2", "") != "");
  if (!fit_dir.empty()) {
    const Json fit_manifest = load_config(fit_dir + "/manifest.json");
    if (want_waic) {
      const Arity arity =
          arity_from_string(field_as<std::string>(fit_manifest, "model.arity"));
      const LoadedGeometry g = load_geometry(config, arity);
      Json model_block = fit_manifest["model"];
      const ModelSpec spec = spec_from(model_block, g);
      Dataset data;
      if (spec.uses_var1())
        data.y1 = load_data_csv(field_as<std::string>(config, "files.data1"), g.support1);
      if (spec.uses_var2())
        data.y2 = load_data_csv(field_as<std::string>(config, "files.data2"), g.support2);
      const PosteriorDraws draws =
          pool_draws(load_fit_draws(fit_dir, fit_manifest, spec));
      const LogLikMatrix ll = predictive_ll_matrix(spec, draws, data);
      if (ll.n_obs1 > 0)
        report.waic["y1"] = waic(ll.values.leftCols(ll.n_obs1));
      if (ll.n_obs2 > 0)
        report.waic["y2"] = waic(ll.values.rightCols(ll.n_obs2));
      report.waic["combined"] = waic(ll.values);
    }
    // Gelman-Rubin straight from the stored chains.
    const auto n_chains = field(fit_manifest, "chains").size();
    if (have_fine && n_chains >= 2) {
      const ArealSupport fine = load_support_json(
          field_as<std::string>(config, "files.fine_support"));
      const ModelSpec spec = prediction_spec(fit_manifest, fine);
      std::vector<PosteriorDraws> chains = load_fit_draws(fit_dir, fit_manifest, spec);
      if (chains[0].n_draws() >= 10) {
        for (std::size_t k = 0; k < chains[0].scalar_names.size(); ++k) {
          std::vector<Eigen::VectorXd> columns;
          for (const auto& chain : chains)
            columns.push_back(chain.scalars.col(static_cast<Eigen::Index>(k)));
          report.gelman_rubin[chains[0].scalar_names[k]] = gelman_rubin(columns);
        }
      }
    }
  }

  if (report.rmse.empty() && report.waic.empty() && report.gelman_rubin.empty())
    throw ConfigError("config: nothing to evaluate (provide files.truth/"
                      "files.prediction for RMSE or fit_dir for WAIC/diagnostics)");

  report.config["out"] = out_dir;
  Json j = metric_report_json(report);
  j["written_at"] = timestamp_utc();
  io::write_file(out_dir + "/metrics.json", j.dump(2) + "\n");
  io::write_file(out_dir + "/metrics.csv", metric_report_csv(report));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bayesian bivariate multiscale spatial change-of-support models"};
  app.require_subcommand(1);

  std::string config_path, out_dir;
  std::optional<std::uint64_t> seed;
  int threads = 1;

  auto add_common = [&](CLI::App* cmd, bool with_threads) {
    cmd->add_option("--config", config_path, "JSON config file")->required();
    cmd->add_option("--seed", seed, "override the config seed");
    cmd->add_option("--out", out_dir, "override the output directory");
    if (with_threads) cmd->add_option("--threads", threads, "worker threads");
  };

  CLI::App* simulate = app.add_subcommand("simulate", "run the simulation scenario grid");
  add_common(simulate, true);
  CLI::App* fit = app.add_subcommand("fit", "fit a model by MCMC");
  add_common(fit, true);
  CLI::App* predict = app.add_subcommand("predict", "change-of-support prediction");
  add_common(predict, true);
  CLI::App* evaluate = app.add_subcommand("evaluate", "RMSE / WAIC / convergence metrics");
  add_common(evaluate, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    const Json config = load_config(config_path);
    if (simulate->parsed()) return cmd_simulate(config, seed, threads, out_dir);
    if (fit->parsed()) return cmd_fit(config, seed, threads, out_dir);
    if (predict->parsed()) return cmd_predict(config, seed, threads, out_dir);
    if (evaluate->parsed()) return cmd_evaluate(config, out_dir);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 3;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const Json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}
