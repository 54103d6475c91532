#ifndef NMIPW_SIMULATION_HPP
#define NMIPW_SIMULATION_HPP

#include <Eigen/Dense>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "nmipw/aipw.hpp"
#include "nmipw/cbe.hpp"
#include "nmipw/ipw.hpp"
#include "nmipw/rng.hpp"
#include "nmipw/umle.hpp"

namespace nmipw {

// Study design: full data (Y, A, C1, C2) with A, C1, C2 uniform marginals from
// probability-integral-transformed correlated normals, logistic outcome, and
// five missingness patterns with logistic pattern probabilities.
struct CbeBudget {
  int n_chains = 2;
  long n_iterations = 6000;  // 4000 adaptive + 2000 retained
  long n_adapt = 4000;
};

struct SimConfig {
  long n = 1000;
  int replicates = 1000;
  Eigen::Vector4d beta_truth{-0.3, -0.4, 0.3, 0.5};
  double rho12 = 0.1;   // corr(X1, X2)
  double rho13 = -0.1;  // corr(X1, X3)
  bool run_cc = true;
  bool run_mle = true;
  bool run_umle = true;
  bool run_cbe = false;
  CbeBudget cbe;  // desk-scale default; raise to the full budget via config
  double sigma_star = 1e-8;
  double prior_variance = 1e3;
  std::uint64_t seed = 1;
  int n_threads = 0;  // 0 = hardware concurrency
};

VariableSchema sim_schema();
PatternRegistry sim_registry();
// gamma blocks of the data-generating missingness model
MissingnessParams sim_gamma_truth();

// n rows of (Y, A, C1, C2)
Eigen::MatrixXd generate_full_data(const SimConfig& config, Rng& rng);

// multinomial pattern draw per row; masked rows keep only the observed values
ObservedDataset generate_missingness(const Eigen::MatrixXd& full,
                                     const MissingnessParams& gamma,
                                     const PatternRegistry& registry, Rng& rng);

struct EstimateRecord {
  bool present = false;
  Eigen::VectorXd beta;
  Eigen::VectorXd se;
  std::vector<bool> cover;  // truth inside the nominal 95% Wald interval
};

struct ReplicateResult {
  int replicate = 0;
  std::map<std::string, EstimateRecord> estimates;
  bool umle_converged = false;
  double umle_min_pi1 = 0.0;
  std::vector<std::string> errors;
};

std::vector<ReplicateResult> run_replicates(const SimConfig& config);

struct SummaryRow {
  std::string estimator;
  int coefficient = 0;
  long n_used = 0;
  double bias = 0.0;
  double mcv = 0.0;         // Monte Carlo variance of beta-hat
  double mcv_scaled = 0.0;  // n x MCV (asymptotic-variance scale)
  double av = 0.0;          // mean estimated Var(beta-hat)
  double av_scaled = 0.0;   // n x AV
  double are = std::numeric_limits<double>::quiet_NaN();  // AV(AIPW)/AV(IPW)
  double coverage = 0.0;                                  // percent
  double convergence_rate = std::numeric_limits<double>::quiet_NaN();  // percent
};

struct SummaryTable {
  long n = 0;
  int replicates = 0;
  std::vector<SummaryRow> rows;
  std::vector<std::string> notes;
};

SummaryTable summarize(const std::vector<ReplicateResult>& results,
                       const Eigen::Vector4d& truth, long n);

void write_summary_csv(const SummaryTable& table, std::ostream& out);
std::string format_summary_table(const SummaryTable& table);
void write_replicates_csv(const std::vector<ReplicateResult>& results, std::ostream& out);

}  // namespace nmipw

#endif
