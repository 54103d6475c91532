#include "nmipw/simulation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <stdexcept>
#include <thread>

namespace nmipw {

namespace {
// standard normal CDF via erfc, |error| well below 1e-12
double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }
}  // namespace

VariableSchema sim_schema() {
  VariableSchema schema;
  schema.names = {"Y", "A", "C1", "C2"};
  schema.types = {VarType::Binary, VarType::Continuous, VarType::Continuous,
                  VarType::Continuous};
  return schema;
}

PatternRegistry sim_registry() {
  std::vector<Pattern> patterns;
  patterns.push_back({1, {0, 1, 2, 3}});  // complete
  patterns.push_back({2, {0, 1, 2}});     // (Y, A, C1)
  patterns.push_back({3, {0, 1}});        // (Y, A)
  patterns.push_back({4, {2, 3}});        // (C1, C2)
  patterns.push_back({5, {0, 3}});        // (Y, C2)
  return PatternRegistry(4, std::move(patterns));
}

MissingnessParams sim_gamma_truth() {
  MissingnessParams gamma;
  gamma.blocks.push_back((Eigen::VectorXd(4) << -1.2, -1.2, -0.6, -0.3).finished());
  gamma.blocks.push_back((Eigen::VectorXd(3) << -1.0, -0.9, -0.8).finished());
  gamma.blocks.push_back((Eigen::VectorXd(3) << -1.2, -0.7, -0.8).finished());
  gamma.blocks.push_back((Eigen::VectorXd(3) << -1.1, -1.0, -0.8).finished());
  return gamma;
}

Eigen::MatrixXd generate_full_data(const SimConfig& config, Rng& rng) {
  Eigen::Matrix3d cov;
  cov << 1.0, config.rho12, config.rho13,
         config.rho12, 1.0, 0.0,
         config.rho13, 0.0, 1.0;
  const Eigen::LLT<Eigen::Matrix3d> llt(cov);
  if (llt.info() != Eigen::Success)
    throw std::invalid_argument("correlation parameters are not positive definite");
  const Eigen::Matrix3d chol = llt.matrixL();

  Eigen::MatrixXd data(config.n, 4);
  for (long i = 0; i < config.n; ++i) {
    const Eigen::Vector3d z{rng.normal(), rng.normal(), rng.normal()};
    const Eigen::Vector3d x = chol * z;
    const double a = normal_cdf(x[0]);
    const double c1 = normal_cdf(x[1]);
    const double c2 = normal_cdf(x[2]);
    const double eta = config.beta_truth[0] + config.beta_truth[1] * a +
                       config.beta_truth[2] * c1 + config.beta_truth[3] * c2;
    data(i, 0) = rng.bernoulli(expit(eta)) ? 1.0 : 0.0;
    data(i, 1) = a;
    data(i, 2) = c1;
    data(i, 3) = c2;
  }
  return data;
}

ObservedDataset generate_missingness(const Eigen::MatrixXd& full,
                                     const MissingnessParams& gamma,
                                     const PatternRegistry& registry, Rng& rng) {
  gamma.validate(registry);
  const int M = registry.n_patterns();
  ObservedDataset dataset;
  dataset.schema = sim_schema();
  if (registry.n_variables() != full.cols())
    throw std::invalid_argument("full-data width does not match registry");
  dataset.rows.reserve(full.rows());

  Eigen::VectorXd prob(M);
  for (long i = 0; i < full.rows(); ++i) {
    const Eigen::VectorXd row = full.row(i);
    double sum = 0.0;
    for (int m = 2; m <= M; ++m) {
      const auto& obs = registry.pattern(m).observed;
      const auto& block = gamma.blocks[m - 2];
      double eta = block[0];
      for (size_t j = 0; j < obs.size(); ++j) eta += block[1 + j] * row[obs[j]];
      prob[m - 1] = expit(eta);
      sum += prob[m - 1];
    }
    prob[0] = 1.0 - sum;
    if (!(prob[0] > 0.0))
      throw std::runtime_error("positivity violated at the data-generating truth");

    const double u = rng.uniform01();
    int pattern = M;
    double cum = 0.0;
    for (int m = 1; m <= M; ++m) {
      cum += prob[m - 1];
      if (u < cum) {
        pattern = m;
        break;
      }
    }

    DataRow out;
    out.pattern = pattern;
    for (int v : registry.pattern(pattern).observed) out.values.push_back(row[v]);
    dataset.rows.push_back(std::move(out));
  }
  return dataset;
}

namespace {

EstimateRecord record_from(const FitReport& report, const Eigen::Vector4d& truth) {
  EstimateRecord record;
  record.present = true;
  record.beta = report.beta;
  record.se = report.standard_errors();
  record.cover.resize(report.beta.size());
  for (long j = 0; j < report.beta.size(); ++j) {
    const double half = kWald95 * record.se[j];
    record.cover[j] = std::abs(report.beta[j] - truth[j]) <= half;
  }
  return record;
}

void run_one_replicate(const SimConfig& config, int rep, ReplicateResult& result) {
  result.replicate = rep;
  Rng rng = Rng::substream(config.seed, static_cast<std::uint64_t>(rep));
  const PatternRegistry registry = sim_registry();
  const MissingnessParams gamma_truth = sim_gamma_truth();
  const LogisticScoreFunction ef(0, {1, 2, 3});
  const Eigen::VectorXd beta0 = Eigen::VectorXd::Zero(4);

  Eigen::MatrixXd full;
  ObservedDataset dataset;
  try {
    full = generate_full_data(config, rng);
    dataset = generate_missingness(full, gamma_truth, registry, rng);
  } catch (const std::exception& e) {
    result.errors.push_back(std::string("generate: ") + e.what());
    return;
  }

  if (config.run_mle) {
    try {
      result.estimates["mle"] = record_from(fit_full_mle(full, ef, beta0),
                                            config.beta_truth);
    } catch (const std::exception& e) {
      result.errors.push_back(std::string("mle: ") + e.what());
    }
  }
  if (config.run_cc) {
    try {
      result.estimates["cc"] = record_from(fit_complete_case(dataset, registry, ef, beta0),
                                           config.beta_truth);
    } catch (const std::exception& e) {
      result.errors.push_back(std::string("cc: ") + e.what());
    }
  }

  if (config.run_umle) {
    try {
      const PatternDesign design(dataset, registry);
      const UmleReport umle = fit_umle(design, registry, frequency_init(design));
      result.umle_converged = umle.converged;
      result.umle_min_pi1 = umle.min_complete_case_probability;
      if (umle.converged) {
        FitReport ipw = solve_ipw(dataset, registry, umle.params, ef, beta0);
        ipw.vcov = variance_corrected(dataset, registry, umle.params, ef, ipw.beta,
                                      &ipw.warnings);
        ipw.variance_kind = VarianceKind::Corrected;
        result.estimates["ipw_umle"] = record_from(ipw, config.beta_truth);

        const auto [full_basis, aug_basis] =
            build_default_bases(dataset.schema, registry, ef, dataset);
        const FitReport aipw = one_step_aipw(dataset, registry, umle.params, ef,
                                             full_basis, aug_basis, ipw.beta,
                                             AipwPath::Umle);
        result.estimates["aipw_umle"] = record_from(aipw, config.beta_truth);
      }
    } catch (const std::exception& e) {
      result.errors.push_back(std::string("umle: ") + e.what());
    }
  }

  if (config.run_cbe) {
    try {
      const PatternDesign design(dataset, registry);
      ChainConfig chain;
      chain.n_chains = config.cbe.n_chains;
      chain.n_iterations = config.cbe.n_iterations;
      chain.n_adapt = config.cbe.n_adapt;
      chain.sigma_star = config.sigma_star;
      chain.seed = Rng::substream(config.seed, 0x9e3779b9u + rep).next_u64();
      chain.n_threads = 1;  // replicates already run in parallel
      const PriorSpec prior = PriorSpec::diffuse(design.total_dim(), config.prior_variance);
      const PosteriorDraws draws = sample_posterior(design, registry, prior, chain);
      const MissingnessParams gamma_cbe =
          point_estimate(draws, registry, PointEstimateKind::Mean);

      FitReport ipw = solve_ipw(dataset, registry, gamma_cbe, ef, beta0);
      ipw.vcov = variance_cbe_corrected(dataset, registry, gamma_cbe, ef, ipw.beta,
                                        &ipw.warnings);
      ipw.variance_kind = VarianceKind::CbeCorrected;
      result.estimates["ipw_cbe"] = record_from(ipw, config.beta_truth);

      const auto [full_basis, aug_basis] =
          build_default_bases(dataset.schema, registry, ef, dataset);
      const FitReport aipw = one_step_aipw(dataset, registry, gamma_cbe, ef, full_basis,
                                           aug_basis, ipw.beta, AipwPath::Cbe);
      result.estimates["aipw_cbe"] = record_from(aipw, config.beta_truth);
    } catch (const std::exception& e) {
      result.errors.push_back(std::string("cbe: ") + e.what());
    }
  }
}

}  // namespace

std::vector<ReplicateResult> run_replicates(const SimConfig& config) {
  if (config.replicates < 1) throw std::invalid_argument("need at least one replicate");
  std::vector<ReplicateResult> results(config.replicates);

  int threads = config.n_threads > 0
                    ? config.n_threads
                    : static_cast<int>(std::thread::hardware_concurrency());
  threads = std::max(1, std::min(threads, config.replicates));
  if (threads == 1) {
    for (int rep = 0; rep < config.replicates; ++rep)
      run_one_replicate(config, rep, results[rep]);
  } else {
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t)
      pool.emplace_back([&] {
        for (int rep = next.fetch_add(1); rep < config.replicates;
             rep = next.fetch_add(1))
          run_one_replicate(config, rep, results[rep]);
      });
    for (auto& th : pool) th.join();
  }
  return results;
}

SummaryTable summarize(const std::vector<ReplicateResult>& results,
                       const Eigen::Vector4d& truth, long n) {
  SummaryTable table;
  table.n = n;
  table.replicates = static_cast<int>(results.size());

  const std::vector<std::string> order = {"cc",      "mle",      "ipw_umle",
                                          "aipw_umle", "ipw_cbe", "aipw_cbe"};
  std::map<std::string, std::vector<double>> mean_av;  // for ARE

  for (const auto& name : order) {
    std::vector<const EstimateRecord*> cells;
    for (const auto& result : results) {
      const auto it = result.estimates.find(name);
      if (it != result.estimates.end() && it->second.present)
        cells.push_back(&it->second);
    }
    if (cells.empty()) {
      table.notes.push_back("estimator " + name + ": no usable replicates");
      continue;
    }
    std::vector<double>& av_store = mean_av[name];
    for (int j = 0; j < 4; ++j) {
      SummaryRow row;
      row.estimator = name;
      row.coefficient = j;
      row.n_used = static_cast<long>(cells.size());
      double mean = 0.0;
      for (const auto* cell : cells) mean += cell->beta[j];
      mean /= static_cast<double>(cells.size());
      row.bias = mean - truth[j];
      double var = 0.0;
      for (const auto* cell : cells) var += (cell->beta[j] - mean) * (cell->beta[j] - mean);
      row.mcv = cells.size() > 1 ? var / static_cast<double>(cells.size() - 1) : 0.0;
      row.mcv_scaled = row.mcv * static_cast<double>(n);
      double av = 0.0;
      long covered = 0;
      for (const auto* cell : cells) {
        av += cell->se[j] * cell->se[j];
        covered += cell->cover[j] ? 1 : 0;
      }
      row.av = av / static_cast<double>(cells.size());
      row.av_scaled = row.av * static_cast<double>(n);
      row.coverage = 100.0 * static_cast<double>(covered) / static_cast<double>(cells.size());
      av_store.push_back(row.av);

      if (name == "ipw_umle" || name == "aipw_umle") {
        long converged = 0;
        for (const auto& result : results) converged += result.umle_converged ? 1 : 0;
        row.convergence_rate =
            100.0 * static_cast<double>(converged) / static_cast<double>(results.size());
      }
      table.rows.push_back(std::move(row));
    }
  }

  // ARE = AV(AIPW) / AV(IPW) per coefficient, same missingness path
  for (auto& row : table.rows) {
    std::string ipw_name;
    if (row.estimator == "aipw_umle") ipw_name = "ipw_umle";
    if (row.estimator == "aipw_cbe") ipw_name = "ipw_cbe";
    if (ipw_name.empty()) continue;
    const auto it = mean_av.find(ipw_name);
    if (it == mean_av.end() || it->second.size() < 4) continue;
    row.are = mean_av[row.estimator][row.coefficient] / it->second[row.coefficient];
  }
  return table;
}

void write_summary_csv(const SummaryTable& table, std::ostream& out) {
  out << "estimator,coefficient,n_used,bias,mcv,mcv_scaled,av,av_scaled,are,"
         "coverage,convergence_rate\n";
  char buf[320];
  for (const auto& row : table.rows) {
    std::snprintf(buf, sizeof(buf),
                  "%s,beta%d,%ld,%.6f,%.6f,%.4f,%.6f,%.4f,%.4f,%.2f,%.2f\n",
                  row.estimator.c_str(), row.coefficient, row.n_used, row.bias, row.mcv,
                  row.mcv_scaled, row.av, row.av_scaled, row.are, row.coverage,
                  row.convergence_rate);
    out << buf;
  }
}

std::string format_summary_table(const SummaryTable& table) {
  std::string out;
  char buf[320];
  std::snprintf(buf, sizeof(buf), "n = %ld, replicates = %d\n", table.n,
                table.replicates);
  out += buf;
  out += "estimator   coef    used    Bias     MCV      AV     ARE   %Cover  %Conv\n";
  for (const auto& row : table.rows) {
    std::snprintf(buf, sizeof(buf),
                  "%-10s beta%d  %6ld  %6.2f  %6.2f  %6.2f  %6.2f  %6.1f  %6.1f\n",
                  row.estimator.c_str(), row.coefficient, row.n_used, row.bias, row.mcv,
                  row.av, row.are, row.coverage, row.convergence_rate);
    out += buf;
  }
  for (const auto& note : table.notes) out += "note: " + note + "\n";
  return out;
}

void write_replicates_csv(const std::vector<ReplicateResult>& results,
                          std::ostream& out) {
  out << "replicate,estimator,coefficient,beta,se,cover,umle_converged,umle_min_pi1\n";
  char buf[256];
  for (const auto& result : results) {
    for (const auto& [name, record] : result.estimates) {
      if (!record.present) continue;
      for (long j = 0; j < record.beta.size(); ++j) {
        std::snprintf(buf, sizeof(buf), "%d,%s,beta%ld,%.10g,%.10g,%d,%d,%.10g\n",
                      result.replicate, name.c_str(), j, record.beta[j], record.se[j],
                      record.cover[j] ? 1 : 0, result.umle_converged ? 1 : 0,
                      result.umle_min_pi1);
        out << buf;
      }
    }
  }
}

}  // namespace nmipw
