// nmipw: pattern tabulation, missingness-model fitting with IPW/AIPW
// estimation, and the simulation study harness. Batch-oriented: outputs are a
// pure function of (input files, config, seed) and every run writes a
// manifest sufficient to reproduce them.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "nmipw/aipw.hpp"
#include "nmipw/cbe.hpp"
#include "nmipw/dataset.hpp"
#include "nmipw/ipw.hpp"
#include "nmipw/simulation.hpp"
#include "nmipw/umle.hpp"

namespace {

constexpr const char* kVersion = "0.1.0";
constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitNonConvergence = 2;

using nlohmann::ordered_json;

std::string fnv1a(const std::string& text) {
  std::uint64_t hash = 1469598103934665603ULL;
  for (unsigned char c : text) {
    hash ^= c;
    hash *= 1099511628211ULL;
  }
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(hash));
  return buf;
}

void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << content;
}

void write_manifest(const std::filesystem::path& dir, const std::string& command,
                    const ordered_json& config) {
  ordered_json manifest;
  manifest["command"] = command;
  manifest["version"] = kVersion;
  manifest["config"] = config;
  manifest["config_hash"] = fnv1a(config.dump());
  write_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

std::vector<std::string> split_list(const std::string& csv) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream ss(csv);
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

struct FitOptions {
  std::string input;
  std::string config_path;
  std::string outcome;
  std::vector<std::string> covariates;
  std::string missingness = "umle";
  std::vector<std::string> estimators = {"ipw", "aipw"};
  std::string variance;  // default depends on missingness path
  double sigma_star = 1e-8;
  long combine_sparse = 0;
  std::uint64_t seed = 1;
  int chains = 3;
  long iterations = 20000;
  long adapt = 10000;
  double prior_variance = 1e3;
  int umle_max_iterations = 500;
  int umle_fallback_budget = 2000;
  std::string basis_json;  // optional custom AIPW basis specification
  std::string out_dir;
  std::string trace_path;
};

ordered_json fit_config_json(const FitOptions& opt) {
  ordered_json config;
  config["input"] = opt.input;
  config["outcome"] = opt.outcome;
  config["covariates"] = opt.covariates;
  config["missingness"] = opt.missingness;
  config["estimators"] = opt.estimators;
  config["variance"] = opt.variance;
  config["sigma_star"] = opt.sigma_star;
  config["combine_sparse"] = opt.combine_sparse;
  config["seed"] = opt.seed;
  config["chains"] = opt.chains;
  config["iterations"] = opt.iterations;
  config["adapt"] = opt.adapt;
  config["prior_variance"] = opt.prior_variance;
  config["umle_max_iterations"] = opt.umle_max_iterations;
  config["umle_fallback_budget"] = opt.umle_fallback_budget;
  return config;
}

void overlay_fit_config(FitOptions& opt) {
  if (opt.config_path.empty()) return;
  std::ifstream in(opt.config_path);
  if (!in) throw std::runtime_error("cannot open config: " + opt.config_path);
  nlohmann::json config;
  in >> config;
  if (config.contains("outcome") && opt.outcome.empty())
    opt.outcome = config["outcome"].get<std::string>();
  if (config.contains("covariates") && opt.covariates.empty())
    opt.covariates = config["covariates"].get<std::vector<std::string>>();
  if (config.contains("missingness")) opt.missingness = config["missingness"];
  if (config.contains("estimators"))
    opt.estimators = config["estimators"].get<std::vector<std::string>>();
  if (config.contains("variance")) opt.variance = config["variance"];
  if (config.contains("sigma_star")) opt.sigma_star = config["sigma_star"];
  if (config.contains("combine_sparse")) opt.combine_sparse = config["combine_sparse"];
  if (config.contains("seed")) opt.seed = config["seed"].get<std::uint64_t>();
  if (config.contains("chains")) opt.chains = config["chains"];
  if (config.contains("iterations")) opt.iterations = config["iterations"];
  if (config.contains("adapt")) opt.adapt = config["adapt"];
  if (config.contains("prior_variance")) opt.prior_variance = config["prior_variance"];
  if (config.contains("umle_max_iterations"))
    opt.umle_max_iterations = config["umle_max_iterations"];
  if (config.contains("umle_fallback_budget"))
    opt.umle_fallback_budget = config["umle_fallback_budget"];
  if (config.contains("basis")) opt.basis_json = config["basis"].dump();
}

int run_tabulate(const std::string& input, long combine_sparse,
                 const std::string& out_path) {
  const nmipw::RawTable raw = nmipw::read_csv_file(input);
  auto [registry, dataset] = nmipw::infer_patterns(raw);
  if (combine_sparse > 0) {
    auto combined = nmipw::combine_sparse_patterns(registry, dataset, combine_sparse);
    registry = std::move(combined.first);
    dataset = std::move(combined.second);
  }
  const nmipw::PatternTable table = nmipw::tabulate_patterns(registry, dataset);
  std::cout << nmipw::format_pattern_table(table);
  if (!out_path.empty()) {
    std::ofstream out(out_path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + out_path);
    nmipw::write_pattern_table_csv(table, out);
  }
  return kExitOk;
}

int run_fit(FitOptions& opt) {
  overlay_fit_config(opt);
  if (opt.outcome.empty() || opt.covariates.empty())
    throw std::runtime_error("fit requires --outcome and --covariates");
  if (!(opt.sigma_star > 0.0 && opt.sigma_star < 1.0))
    throw std::runtime_error("--sigma-star must lie in (0,1)");
  if (opt.variance.empty())
    opt.variance = opt.missingness == "cbe" ? "cbe-corrected" : "corrected";

  const nmipw::RawTable raw = nmipw::read_csv_file(opt.input);
  auto [registry, dataset] = nmipw::infer_patterns(raw);
  if (opt.combine_sparse > 0) {
    auto combined = nmipw::combine_sparse_patterns(registry, dataset, opt.combine_sparse);
    registry = std::move(combined.first);
    dataset = std::move(combined.second);
  }

  const int outcome = dataset.schema.index_of(opt.outcome);
  if (outcome < 0) throw std::runtime_error("unknown outcome column: " + opt.outcome);
  std::vector<int> covariates;
  for (const auto& name : opt.covariates) {
    const int idx = dataset.schema.index_of(name);
    if (idx < 0) throw std::runtime_error("unknown covariate column: " + name);
    covariates.push_back(idx);
  }
  const nmipw::LogisticScoreFunction ef(outcome, covariates);
  const Eigen::VectorXd beta0 = Eigen::VectorXd::Zero(ef.dim());
  std::vector<std::string> coef_names = {"(Intercept)"};
  for (const auto& name : opt.covariates) coef_names.push_back(name);

  ordered_json output;
  output["pattern_table"] =
      ordered_json::parse([&] {
        std::ostringstream ss;
        const auto table = nmipw::tabulate_patterns(registry, dataset);
        ordered_json rows = ordered_json::array();
        for (const auto& row : table.rows) {
          ordered_json r;
          r["code"] = row.code;
          r["mask"] = row.mask;
          r["count"] = row.count;
          r["percent"] = row.percent;
          rows.push_back(r);
        }
        return rows.dump();
      }());

  bool nonconverged = false;
  nmipw::MissingnessParams gamma;
  const bool needs_missingness =
      std::find(opt.estimators.begin(), opt.estimators.end(), "ipw") !=
          opt.estimators.end() ||
      std::find(opt.estimators.begin(), opt.estimators.end(), "aipw") !=
          opt.estimators.end();

  if (needs_missingness && registry.n_patterns() > 1) {
    const nmipw::PatternDesign design(dataset, registry);
    if (opt.missingness == "umle") {
      nmipw::UmleConfig umle_config;
      umle_config.max_iterations = opt.umle_max_iterations;
      umle_config.fallback_budget = opt.umle_fallback_budget;
      const nmipw::UmleReport umle =
          nmipw::fit_umle(design, registry, nmipw::frequency_init(design), umle_config);
      output["missingness"] = ordered_json::parse(umle.to_json());
      output["missingness"]["method"] = "umle";
      gamma = umle.params;
      if (!umle.converged) {
        nonconverged = true;
        output["missingness"]["suggestion"] =
            "UMLE did not converge; consider --missingness cbe";
      }
    } else if (opt.missingness == "cbe") {
      nmipw::ChainConfig chain;
      chain.n_chains = opt.chains;
      chain.n_iterations = opt.iterations;
      chain.n_adapt = opt.adapt;
      chain.sigma_star = opt.sigma_star;
      chain.seed = opt.seed;
      const nmipw::PriorSpec prior =
          nmipw::PriorSpec::diffuse(design.total_dim(), opt.prior_variance);
      const nmipw::PosteriorDraws draws =
          nmipw::sample_posterior(design, registry, prior, chain);
      gamma = nmipw::point_estimate(draws, registry, nmipw::PointEstimateKind::Mean);
      const nmipw::GelmanRubinResult gr = nmipw::gelman_rubin(draws);
      ordered_json miss;
      miss["method"] = "cbe";
      miss["gamma"] = ordered_json::parse(gamma.to_json())["gamma"];
      miss["gelman_rubin"] = std::vector<double>(
          gr.statistic.data(), gr.statistic.data() + gr.statistic.size());
      miss["chains"] = opt.chains;
      miss["iterations"] = opt.iterations;
      miss["adapt"] = opt.adapt;
      output["missingness"] = miss;
      if (!opt.trace_path.empty()) {
        std::ofstream trace(opt.trace_path, std::ios::binary);
        if (!trace) throw std::runtime_error("cannot write " + opt.trace_path);
        nmipw::write_trace_csv(draws, trace);
      }
    } else {
      throw std::runtime_error("unknown missingness method: " + opt.missingness);
    }
  } else if (needs_missingness) {
    gamma = nmipw::MissingnessParams::zero(registry);  // M = 1: weights are one
  }

  ordered_json fits;
  for (const auto& estimator : opt.estimators) {
    if (estimator == "cc") {
      const nmipw::FitReport cc = nmipw::fit_complete_case(dataset, registry, ef, beta0);
      fits["cc"] = ordered_json::parse(cc.to_json(coef_names, true));
    } else if (estimator == "mle") {
      if (registry.n_patterns() != 1)
        throw std::runtime_error("estimator mle requires fully observed data");
      Eigen::MatrixXd rows(dataset.n(), registry.n_variables());
      for (long i = 0; i < dataset.n(); ++i)
        for (int v = 0; v < registry.n_variables(); ++v)
          rows(i, v) = dataset.rows[i].values[v];
      const nmipw::FitReport mle = nmipw::fit_full_mle(rows, ef, beta0);
      fits["mle"] = ordered_json::parse(mle.to_json(coef_names, true));
    } else if (estimator == "ipw" || estimator == "aipw") {
      if (nonconverged) continue;  // partial report; diagnostics already emitted
      nmipw::FitReport ipw = nmipw::solve_ipw(dataset, registry, gamma, ef, beta0);
      if (opt.variance == "corrected") {
        ipw.vcov = nmipw::variance_corrected(dataset, registry, gamma, ef, ipw.beta,
                                             &ipw.warnings);
        ipw.variance_kind = nmipw::VarianceKind::Corrected;
      } else if (opt.variance == "cbe-corrected") {
        ipw.vcov = nmipw::variance_cbe_corrected(dataset, registry, gamma, ef, ipw.beta,
                                                 &ipw.warnings);
        ipw.variance_kind = nmipw::VarianceKind::CbeCorrected;
      } else if (opt.variance == "sandwich") {
        ipw.vcov = nmipw::variance_sandwich(dataset, registry, gamma, ef, ipw.beta,
                                            &ipw.warnings);
        ipw.variance_kind = nmipw::VarianceKind::Sandwich;
      } else {
        throw std::runtime_error("unknown variance estimator: " + opt.variance);
      }
      if (estimator == "ipw") {
        fits["ipw"] = ordered_json::parse(ipw.to_json(coef_names, true));
      } else {
        const auto [full_basis, aug_basis] =
            opt.basis_json.empty()
                ? nmipw::build_default_bases(dataset.schema, registry, ef, dataset)
                : nmipw::bases_from_json(opt.basis_json, ef);
        const nmipw::AipwPath path = opt.missingness == "cbe" ? nmipw::AipwPath::Cbe
                                                              : nmipw::AipwPath::Umle;
        const nmipw::FitReport aipw = nmipw::one_step_aipw(
            dataset, registry, gamma, ef, full_basis, aug_basis, ipw.beta, path);
        fits["aipw"] = ordered_json::parse(aipw.to_json(coef_names, true));
        fits["aipw"]["basis"] = ordered_json::parse(bases_to_json(full_basis, aug_basis));
      }
    } else {
      throw std::runtime_error("unknown estimator: " + estimator);
    }
  }
  output["fits"] = fits;

  const std::string document = output.dump(2) + "\n";
  if (opt.out_dir.empty()) {
    std::cout << document;
  } else {
    std::filesystem::create_directories(opt.out_dir);
    write_file(std::filesystem::path(opt.out_dir) / "fit.json", document);
    write_manifest(opt.out_dir, "fit", fit_config_json(opt));
  }
  return nonconverged ? kExitNonConvergence : kExitOk;
}

struct SimulateOptions {
  std::string config_path;
  std::string out_dir = ".";
  std::optional<std::uint64_t> seed;
  int threads = 0;
};

int run_simulate(const SimulateOptions& opt) {
  nmipw::SimConfig config;
  ordered_json effective;
  if (!opt.config_path.empty()) {
    std::ifstream in(opt.config_path);
    if (!in) throw std::runtime_error("cannot open config: " + opt.config_path);
    nlohmann::json doc;
    in >> doc;
    if (doc.contains("n")) config.n = doc["n"];
    if (doc.contains("replicates")) config.replicates = doc["replicates"];
    if (doc.contains("seed")) config.seed = doc["seed"].get<std::uint64_t>();
    if (doc.contains("beta_truth")) {
      const auto beta = doc["beta_truth"].get<std::vector<double>>();
      if (beta.size() != 4) throw std::runtime_error("beta_truth must have 4 entries");
      for (int j = 0; j < 4; ++j) config.beta_truth[j] = beta[j];
    }
    if (doc.contains("rho12")) config.rho12 = doc["rho12"];
    if (doc.contains("rho13")) config.rho13 = doc["rho13"];
    if (doc.contains("estimators")) {
      config.run_cc = config.run_mle = config.run_umle = config.run_cbe = false;
      for (const auto& name : doc["estimators"]) {
        const std::string s = name.get<std::string>();
        if (s == "cc") config.run_cc = true;
        else if (s == "mle") config.run_mle = true;
        else if (s == "umle") config.run_umle = true;
        else if (s == "cbe") config.run_cbe = true;
        else throw std::runtime_error("unknown estimator in config: " + s);
      }
    }
    if (doc.contains("sigma_star")) config.sigma_star = doc["sigma_star"];
    if (doc.contains("prior_variance")) config.prior_variance = doc["prior_variance"];
    if (doc.contains("cbe")) {
      const auto& cbe = doc["cbe"];
      if (cbe.contains("chains")) config.cbe.n_chains = cbe["chains"];
      if (cbe.contains("iterations")) config.cbe.n_iterations = cbe["iterations"];
      if (cbe.contains("adapt")) config.cbe.n_adapt = cbe["adapt"];
    }
    if (doc.contains("threads")) config.n_threads = doc["threads"];
  }
  if (opt.seed.has_value()) config.seed = *opt.seed;
  if (opt.threads > 0) config.n_threads = opt.threads;

  effective["n"] = config.n;
  effective["replicates"] = config.replicates;
  effective["seed"] = config.seed;
  effective["beta_truth"] = {config.beta_truth[0], config.beta_truth[1],
                             config.beta_truth[2], config.beta_truth[3]};
  effective["rho12"] = config.rho12;
  effective["rho13"] = config.rho13;
  std::vector<std::string> estimators;
  if (config.run_cc) estimators.push_back("cc");
  if (config.run_mle) estimators.push_back("mle");
  if (config.run_umle) estimators.push_back("umle");
  if (config.run_cbe) estimators.push_back("cbe");
  effective["estimators"] = estimators;
  effective["sigma_star"] = config.sigma_star;
  effective["prior_variance"] = config.prior_variance;
  effective["cbe"] = {{"chains", config.cbe.n_chains},
                      {"iterations", config.cbe.n_iterations},
                      {"adapt", config.cbe.n_adapt}};

  const auto results = nmipw::run_replicates(config);
  const nmipw::SummaryTable table =
      nmipw::summarize(results, config.beta_truth, config.n);

  std::filesystem::create_directories(opt.out_dir);
  const std::filesystem::path dir(opt.out_dir);
  {
    std::ofstream out(dir / "summary.csv", std::ios::binary);
    nmipw::write_summary_csv(table, out);
  }
  write_file(dir / "summary.txt", nmipw::format_summary_table(table));
  {
    std::ofstream out(dir / "replicates.csv", std::ios::binary);
    nmipw::write_replicates_csv(results, out);
  }
  write_manifest(dir, "simulate", effective);
  std::cout << nmipw::format_summary_table(table);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"IPW and AIPW estimation for nonmonotone missing-at-random data"};
  app.require_subcommand(1);

  std::string tab_input, tab_out;
  long tab_combine = 0;
  CLI::App* tabulate = app.add_subcommand("tabulate", "tabulate missingness patterns");
  tabulate->add_option("--input", tab_input, "input CSV")->required();
  tabulate->add_option("--combine-sparse", tab_combine,
                       "merge incomplete patterns with count below N");
  tabulate->add_option("--out", tab_out, "write the table as CSV");

  FitOptions fit;
  std::string fit_covariates;
  CLI::App* fit_cmd = app.add_subcommand("fit", "fit the missingness model and estimate");
  fit_cmd->add_option("--input", fit.input, "input CSV")->required();
  fit_cmd->add_option("--config", fit.config_path, "JSON config (flags override)");
  fit_cmd->add_option("--outcome", fit.outcome, "outcome column");
  fit_cmd->add_option("--covariates", fit_covariates, "comma-separated covariates");
  fit_cmd->add_option("--missingness", fit.missingness, "umle | cbe");
  std::string fit_estimators;
  fit_cmd->add_option("--estimator", fit_estimators,
                      "comma-separated: cc, mle, ipw, aipw");
  fit_cmd->add_option("--variance", fit.variance,
                      "corrected | cbe-corrected | sandwich");
  fit_cmd->add_option("--sigma-star", fit.sigma_star, "constraint margin in (0,1)");
  fit_cmd->add_option("--combine-sparse", fit.combine_sparse,
                      "merge incomplete patterns with count below N");
  fit_cmd->add_option("--seed", fit.seed, "RNG seed");
  fit_cmd->add_option("--chains", fit.chains, "CBE chains");
  fit_cmd->add_option("--iterations", fit.iterations, "CBE total iterations per chain");
  fit_cmd->add_option("--adapt", fit.adapt, "CBE adaptive iterations");
  fit_cmd->add_option("--prior-variance", fit.prior_variance, "CBE prior variance");
  fit_cmd->add_option("--umle-max-iterations", fit.umle_max_iterations,
                      "quasi-Newton iteration budget");
  fit_cmd->add_option("--umle-fallback-budget", fit.umle_fallback_budget,
                      "simplex evaluations after quasi-Newton failure");
  fit_cmd->add_option("--out-dir", fit.out_dir, "write fit.json and manifest here");
  fit_cmd->add_option("--trace", fit.trace_path, "write CBE trace CSV here");

  SimulateOptions sim;
  std::uint64_t sim_seed = 0;
  bool sim_seed_set = false;
  CLI::App* sim_cmd = app.add_subcommand("simulate", "run the simulation study");
  sim_cmd->add_option("--config", sim.config_path, "JSON config");
  sim_cmd->add_option("--out-dir", sim.out_dir, "output directory");
  sim_cmd->add_option("--threads", sim.threads, "worker threads (0 = auto)");
  sim_cmd->add_option_function<std::uint64_t>(
      "--seed",
      [&](const std::uint64_t& value) {
        sim_seed = value;
        sim_seed_set = true;
      },
      "RNG seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (tabulate->parsed()) return run_tabulate(tab_input, tab_combine, tab_out);
    if (fit_cmd->parsed()) {
      if (!fit_covariates.empty()) fit.covariates = split_list(fit_covariates);
      if (!fit_estimators.empty()) fit.estimators = split_list(fit_estimators);
      return run_fit(fit);
    }
    if (sim_cmd->parsed()) {
      if (sim_seed_set) sim.seed = sim_seed;
      return run_simulate(sim);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
