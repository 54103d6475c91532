#include "nmipw/estimating.hpp"

#include <cmath>
#include <stdexcept>

#include "nmipw/missingness.hpp"

namespace nmipw {

LogisticScoreFunction::LogisticScoreFunction(int outcome_index,
                                             std::vector<int> covariate_indices)
    : outcome_(outcome_index), covariates_(std::move(covariate_indices)) {
  if (outcome_ < 0) throw std::invalid_argument("bad outcome index");
  for (int c : covariates_) {
    if (c < 0) throw std::invalid_argument("bad covariate index");
    if (c == outcome_) throw std::invalid_argument("outcome cannot be a covariate");
  }
}

Eigen::VectorXd LogisticScoreFunction::design(const Eigen::VectorXd& row) const {
  Eigen::VectorXd x(dim());
  x[0] = 1.0;
  for (size_t j = 0; j < covariates_.size(); ++j) x[1 + j] = row[covariates_[j]];
  return x;
}

double LogisticScoreFunction::fitted_probability(const Eigen::VectorXd& row,
                                                 const Eigen::VectorXd& beta) const {
  return expit(design(row).dot(beta));
}

Eigen::VectorXd LogisticScoreFunction::evaluate(const Eigen::VectorXd& row,
                                                const Eigen::VectorXd& beta) const {
  const Eigen::VectorXd x = design(row);
  const double residual = row[outcome_] - expit(x.dot(beta));
  return residual * x;
}

Eigen::MatrixXd LogisticScoreFunction::jacobian(const Eigen::VectorXd& row,
                                                const Eigen::VectorXd& beta) const {
  const Eigen::VectorXd x = design(row);
  const double p = expit(x.dot(beta));
  return -p * (1.0 - p) * x * x.transpose();
}

std::string LogisticScoreFunction::diagnose(const Eigen::MatrixXd& rows,
                                            const Eigen::VectorXd& beta) const {
  constexpr double kEdge = 1e-6;
  for (long i = 0; i < rows.rows(); ++i) {
    const double p = fitted_probability(rows.row(i), beta);
    if (p > kEdge && p < 1.0 - kEdge) return {};
  }
  return "all fitted probabilities at 0/1: perfect separation";
}

namespace {

void accumulate_moment(const Eigen::MatrixXd& rows, const Eigen::VectorXd& weights,
                       const EstimatingFunction& ef, const Eigen::VectorXd& beta,
                       Eigen::VectorXd& moment, Eigen::MatrixXd* jac) {
  const int q = ef.dim();
  moment.setZero(q);
  if (jac) jac->setZero(q, q);
  for (long i = 0; i < rows.rows(); ++i) {
    const Eigen::VectorXd row = rows.row(i);
    moment += weights[i] * ef.evaluate(row, beta);
    if (jac) *jac += weights[i] * ef.jacobian(row, beta);
  }
  const double n = static_cast<double>(rows.rows());
  moment /= n;
  if (jac) *jac /= n;
}

}  // namespace

MomentSolveResult solve_weighted_moment(const Eigen::MatrixXd& rows,
                                        const Eigen::VectorXd& weights,
                                        const EstimatingFunction& ef,
                                        const Eigen::VectorXd& init,
                                        const MomentSolveOptions& options) {
  if (rows.rows() != weights.size())
    throw std::invalid_argument("weights do not match row count");
  if (rows.rows() == 0) throw std::invalid_argument("no rows to fit");
  const int q = ef.dim();
  if (init.size() != q) throw std::invalid_argument("init has wrong dimension");

  MomentSolveResult result;
  result.beta = init;
  Eigen::VectorXd moment(q);
  Eigen::MatrixXd jac(q, q);
  accumulate_moment(rows, weights, ef, result.beta, moment, &jac);
  double res = moment.lpNorm<Eigen::Infinity>();

  for (int it = 0; it < options.max_iterations; ++it) {
    result.iterations = it;
    if (res < options.tol_inf) {
      result.converged = true;
      break;
    }
    Eigen::FullPivLU<Eigen::MatrixXd> lu(jac);
    if (!lu.isInvertible()) {
      const double cond =
          lu.maxPivot() == 0.0
              ? std::numeric_limits<double>::infinity()
              : std::abs(lu.maxPivot()) /
                    std::max(std::numeric_limits<double>::min(),
                             std::abs(lu.matrixLU().diagonal().cwiseAbs().minCoeff()));
      throw std::runtime_error("singular moment Jacobian (condition ~" +
                               std::to_string(cond) + ")");
    }
    const Eigen::VectorXd direction = lu.solve(-moment);

    double step = 1.0;
    bool improved = false;
    Eigen::VectorXd beta_new, moment_new(q);
    for (int h = 0; h < options.max_halvings; ++h) {
      beta_new = result.beta + step * direction;
      accumulate_moment(rows, weights, ef, beta_new, moment_new, nullptr);
      const double res_new = moment_new.lpNorm<Eigen::Infinity>();
      if (res_new < res) {
        result.beta = beta_new;
        res = res_new;
        improved = true;
        break;
      }
      step *= 0.5;
    }
    if (!improved) {
      result.warnings.push_back("line search failed to reduce the moment residual");
      break;
    }
    if (result.beta.lpNorm<Eigen::Infinity>() > options.divergence_bound) {
      result.warnings.push_back(
          "estimate escaped the divergence bound; possible separation");
      accumulate_moment(rows, weights, ef, result.beta, moment, &jac);
      res = moment.lpNorm<Eigen::Infinity>();
      result.residual_inf = res;
      result.converged = false;
      return result;
    }
    accumulate_moment(rows, weights, ef, result.beta, moment, &jac);
    res = moment.lpNorm<Eigen::Infinity>();
  }
  result.residual_inf = res;
  if (!result.converged) result.converged = res < options.tol_inf;
  if (result.converged &&
      result.beta.lpNorm<Eigen::Infinity>() > options.divergence_bound) {
    result.converged = false;
    result.warnings.push_back(
        "estimate escaped the divergence bound; possible separation");
  }
  if (result.converged) {
    const std::string diagnosis = ef.diagnose(rows, result.beta);
    if (!diagnosis.empty()) {
      result.converged = false;
      result.warnings.push_back(diagnosis);
    }
  }
  return result;
}

}  // namespace nmipw
