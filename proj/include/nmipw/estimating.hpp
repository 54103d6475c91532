#ifndef NMIPW_ESTIMATING_HPP
#define NMIPW_ESTIMATING_HPP

#include <Eigen/Dense>
#include <memory>
#include <string>
#include <vector>

namespace nmipw {

// A full-data moment function M(L; beta) with its Jacobian dM/dbeta.
class EstimatingFunction {
 public:
  virtual ~EstimatingFunction() = default;
  virtual int dim() const = 0;  // q
  virtual Eigen::VectorXd evaluate(const Eigen::VectorXd& row,
                                   const Eigen::VectorXd& beta) const = 0;
  virtual Eigen::MatrixXd jacobian(const Eigen::VectorXd& row,
                                   const Eigen::VectorXd& beta) const = 0;
  // post-solve degeneracy check; a non-empty message flags the fit as
  // non-converged (e.g. perfect separation in logistic regression)
  virtual std::string diagnose(const Eigen::MatrixXd& rows,
                               const Eigen::VectorXd& beta) const {
    (void)rows;
    (void)beta;
    return {};
  }
};

// Score of a logistic regression of one variable on a set of covariates:
// (1,X)^T {Y - expit[beta (1,X)^T]}.
class LogisticScoreFunction : public EstimatingFunction {
 public:
  LogisticScoreFunction(int outcome_index, std::vector<int> covariate_indices);

  int dim() const override { return 1 + static_cast<int>(covariates_.size()); }
  Eigen::VectorXd evaluate(const Eigen::VectorXd& row,
                           const Eigen::VectorXd& beta) const override;
  Eigen::MatrixXd jacobian(const Eigen::VectorXd& row,
                           const Eigen::VectorXd& beta) const override;

  int outcome_index() const { return outcome_; }
  const std::vector<int>& covariate_indices() const { return covariates_; }
  // regression design (1, X) for a full row
  Eigen::VectorXd design(const Eigen::VectorXd& row) const;
  double fitted_probability(const Eigen::VectorXd& row, const Eigen::VectorXd& beta) const;
  // every fitted probability indistinguishable from 0/1 means the MLE has
  // run off to infinity
  std::string diagnose(const Eigen::MatrixXd& rows,
                       const Eigen::VectorXd& beta) const override;

 private:
  int outcome_;
  std::vector<int> covariates_;
};

struct MomentSolveOptions {
  double tol_inf = 1e-8;
  int max_iterations = 100;
  int max_halvings = 50;
  // iterates escaping this box are flagged as diverging (e.g. separation in
  // logistic regression drives coefficients to infinity)
  double divergence_bound = 30.0;
};

struct MomentSolveResult {
  Eigen::VectorXd beta;
  int iterations = 0;
  bool converged = false;
  double residual_inf = 0.0;
  std::vector<std::string> warnings;
};

// Newton with step-halving on the weighted empirical moment
// (1/n) sum_i w_i M(L_i; beta) = 0. Throws on a singular Jacobian.
MomentSolveResult solve_weighted_moment(const Eigen::MatrixXd& rows,
                                        const Eigen::VectorXd& weights,
                                        const EstimatingFunction& ef,
                                        const Eigen::VectorXd& init,
                                        const MomentSolveOptions& options = {});

}  // namespace nmipw

#endif
