#ifndef NMIPW_IPW_HPP
#define NMIPW_IPW_HPP

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "nmipw/estimating.hpp"
#include "nmipw/missingness.hpp"

namespace nmipw {

enum class VarianceKind { None, Corrected, CbeCorrected, Sandwich, Aipw };

std::string variance_kind_name(VarianceKind kind);

struct FitReport {
  Eigen::VectorXd beta;
  Eigen::MatrixXd vcov;  // variance of beta-hat (asymptotic variance / n)
  VarianceKind variance_kind = VarianceKind::None;
  int iterations = 0;
  bool converged = false;
  double residual_inf = 0.0;
  std::vector<std::string> warnings;

  Eigen::VectorXd standard_errors() const;
  // JSON with estimates, SEs, Wald 95% CIs and, when names are supplied for a
  // logistic fit, the odds-ratio transform of the covariate coefficients
  std::string to_json(const std::vector<std::string>& coef_names = {},
                      bool odds_ratios = false) const;
};

constexpr double kWald95 = 1.9599639845400536;

// Solve P_n{ 1(R=1)/pi_1(L;gamma) M(L;beta) } = 0 by Newton iteration over the
// complete cases. Throws "invalid weights" if any complete case has pi_1 <= 0.
FitReport solve_ipw(const ObservedDataset& dataset, const PatternRegistry& registry,
                    const MissingnessParams& params, const EstimatingFunction& ef,
                    const Eigen::VectorXd& init);

// Asymptotic-variance estimators for the IPW estimator, returned on the scale
// of Var(beta-hat) (i.e. already divided by n).
//
//   Sandwich:     E{dG}^-1 Var[G]             E{dG}^-T   (conservative)
//   Corrected:    E{dG}^-1 Var[G - W]         E{dG}^-T   (score-projected)
//   CbeCorrected: E{dG}^-1 Var[G - W + E{W}]  E{dG}^-T   (re-centered for a
//                 Bayes point estimate whose empirical score is not zero)
//
// where G_i = 1(R_i=1)/pi_1 M(L_i;beta) and W_i is the projection of G onto
// the span of the missingness-model scores.
Eigen::MatrixXd variance_corrected(const ObservedDataset& dataset,
                                   const PatternRegistry& registry,
                                   const MissingnessParams& params,
                                   const EstimatingFunction& ef,
                                   const Eigen::VectorXd& beta_hat,
                                   std::vector<std::string>* warnings = nullptr);
Eigen::MatrixXd variance_cbe_corrected(const ObservedDataset& dataset,
                                       const PatternRegistry& registry,
                                       const MissingnessParams& params,
                                       const EstimatingFunction& ef,
                                       const Eigen::VectorXd& beta_hat,
                                       std::vector<std::string>* warnings = nullptr);
Eigen::MatrixXd variance_sandwich(const ObservedDataset& dataset,
                                  const PatternRegistry& registry,
                                  const MissingnessParams& params,
                                  const EstimatingFunction& ef,
                                  const Eigen::VectorXd& beta_hat,
                                  std::vector<std::string>* warnings = nullptr);

// Unweighted complete-case fit (biased unless missingness ignores the data),
// with the plain sandwich variance over the complete subsample.
FitReport fit_complete_case(const ObservedDataset& dataset,
                            const PatternRegistry& registry,
                            const EstimatingFunction& ef, const Eigen::VectorXd& init);

// Full-data fit on rows without any missingness; sandwich variance.
FitReport fit_full_mle(const Eigen::MatrixXd& full_rows, const EstimatingFunction& ef,
                       const Eigen::VectorXd& init);

// Complete rows of the dataset as full K-vectors plus their IPW weights
// 1/pi_1; shared by the IPW solver and the AIPW machinery.
struct CompleteCaseView {
  Eigen::MatrixXd rows;      // n_cc x K
  Eigen::VectorXd pi1;       // fitted complete-case probabilities
  std::vector<long> index;   // position of each row in the dataset
  long n_total = 0;          // all rows, complete and incomplete
};

CompleteCaseView complete_case_view(const ObservedDataset& dataset,
                                    const PatternRegistry& registry,
                                    const MissingnessParams& params);

}  // namespace nmipw

#endif
