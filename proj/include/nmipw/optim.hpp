#ifndef NMIPW_OPTIM_HPP
#define NMIPW_OPTIM_HPP

#include <Eigen/Dense>
#include <functional>

namespace nmipw {

// Objectives may return -inf outside their domain; line searches treat such
// points as rejected steps.
using ObjectiveFn = std::function<double(const Eigen::VectorXd&)>;
using GradientFn = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

struct BfgsOptions {
  double grad_tol_inf = 1e-6;
  int max_iterations = 500;
  int max_halvings = 60;
};

struct BfgsResult {
  Eigen::VectorXd x;
  double f = 0.0;
  Eigen::VectorXd grad;
  int iterations = 0;
  bool converged = false;
  bool line_search_failed = false;
};

// Quasi-Newton ascent with backtracking Armijo line search; the inverse
// Hessian update is skipped when the curvature condition fails.
BfgsResult bfgs_maximize(const ObjectiveFn& f, const GradientFn& grad,
                         const Eigen::VectorXd& x0, const BfgsOptions& options = {});

struct NelderMeadOptions {
  int max_evaluations = 2000;
  double initial_step = 0.1;
};

struct NelderMeadResult {
  Eigen::VectorXd x;
  double f = 0.0;
  int evaluations = 0;
};

NelderMeadResult nelder_mead_maximize(const ObjectiveFn& f, const Eigen::VectorXd& x0,
                                      const NelderMeadOptions& options = {});

}  // namespace nmipw

#endif
