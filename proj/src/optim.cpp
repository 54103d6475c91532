#include "nmipw/optim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace nmipw {

BfgsResult bfgs_maximize(const ObjectiveFn& f, const GradientFn& grad,
                         const Eigen::VectorXd& x0, const BfgsOptions& options) {
  const int n = static_cast<int>(x0.size());
  BfgsResult result;
  result.x = x0;
  result.f = f(x0);
  result.grad = grad(x0);

  Eigen::MatrixXd H = Eigen::MatrixXd::Identity(n, n);
  constexpr double c1 = 1e-4;
  int skipped_updates = 0;

  for (int it = 0; it < options.max_iterations; ++it) {
    result.iterations = it;
    if (result.grad.lpNorm<Eigen::Infinity>() <= options.grad_tol_inf) {
      result.converged = true;
      return result;
    }

    Eigen::VectorXd p = H * result.grad;  // ascent direction
    double gtp = result.grad.dot(p);
    if (gtp <= 1e-16 || !p.allFinite()) {
      H.setIdentity();
      p = result.grad;
      gtp = result.grad.dot(p);
    }

    double alpha = 1.0;
    bool accepted = false;
    Eigen::VectorXd x_new;
    double f_new = result.f;
    for (int ls = 0; ls < options.max_halvings; ++ls) {
      x_new = result.x + alpha * p;
      f_new = f(x_new);
      if (std::isfinite(f_new) && f_new >= result.f + c1 * alpha * gtp) {
        accepted = true;
        break;
      }
      alpha *= 0.5;
    }
    if (!accepted) {
      result.line_search_failed = true;
      return result;
    }

    const Eigen::VectorXd g_new = grad(x_new);
    const Eigen::VectorXd s = x_new - result.x;
    const Eigen::VectorXd y = g_new - result.grad;  // note: ascent, y = dgrad
    const double sy = -s.dot(y);                    // curvature for maximization
    if (sy > 1e-12 * s.norm() * y.norm()) {
      // inverse Hessian update in maximization form: treat (-grad) as the
      // minimization gradient, H approximates the inverse of -Hessian
      const double rho = 1.0 / sy;
      const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(n, n);
      const Eigen::MatrixXd V = I + rho * s * y.transpose();
      H = V * H * V.transpose() + rho * s * s.transpose();
      skipped_updates = 0;
    } else if (++skipped_updates >= 2) {
      // a stale approximation causes creeping steps; start over
      H.setIdentity();
      skipped_updates = 0;
    }
    result.x = x_new;
    result.f = f_new;
    result.grad = g_new;
  }
  result.iterations = options.max_iterations;
  result.converged = result.grad.lpNorm<Eigen::Infinity>() <= options.grad_tol_inf;
  return result;
}

NelderMeadResult nelder_mead_maximize(const ObjectiveFn& f, const Eigen::VectorXd& x0,
                                      const NelderMeadOptions& options) {
  const int n = static_cast<int>(x0.size());
  const double neg_inf = -std::numeric_limits<double>::infinity();

  std::vector<Eigen::VectorXd> simplex(n + 1, x0);
  std::vector<double> value(n + 1, neg_inf);
  int evals = 0;
  auto eval = [&](const Eigen::VectorXd& x) {
    ++evals;
    const double v = f(x);
    return std::isfinite(v) ? v : neg_inf;
  };
  value[0] = eval(x0);
  for (int j = 0; j < n; ++j) {
    const double h = std::max(0.05, 0.05 * std::abs(x0[j]));
    simplex[j + 1][j] += h;
    value[j + 1] = eval(simplex[j + 1]);
  }

  constexpr double alpha = 1.0, gamma = 2.0, rho = 0.5, sigma = 0.5;
  std::vector<int> order(n + 1);
  while (evals < options.max_evaluations) {
    for (int i = 0; i <= n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](int a, int b) { return value[a] > value[b]; });
    const int best = order[0], worst = order[n], second_worst = order[n - 1];

    Eigen::VectorXd centroid = Eigen::VectorXd::Zero(n);
    for (int i = 0; i <= n; ++i)
      if (i != worst) centroid += simplex[i];
    centroid /= n;

    const Eigen::VectorXd reflected = centroid + alpha * (centroid - simplex[worst]);
    const double f_ref = eval(reflected);
    if (f_ref > value[best]) {
      const Eigen::VectorXd expanded = centroid + gamma * (reflected - centroid);
      const double f_exp = eval(expanded);
      if (f_exp > f_ref) {
        simplex[worst] = expanded;
        value[worst] = f_exp;
      } else {
        simplex[worst] = reflected;
        value[worst] = f_ref;
      }
    } else if (f_ref > value[second_worst]) {
      simplex[worst] = reflected;
      value[worst] = f_ref;
    } else {
      const Eigen::VectorXd contracted = centroid + rho * (simplex[worst] - centroid);
      const double f_con = eval(contracted);
      if (f_con > value[worst]) {
        simplex[worst] = contracted;
        value[worst] = f_con;
      } else {
        for (int i = 0; i <= n; ++i) {
          if (i == best) continue;
          simplex[i] = simplex[best] + sigma * (simplex[i] - simplex[best]);
          value[i] = eval(simplex[i]);
        }
      }
    }
  }

  NelderMeadResult result;
  int best = 0;
  for (int i = 1; i <= n; ++i)
    if (value[i] > value[best]) best = i;
  result.x = simplex[best];
  result.f = value[best];
  result.evaluations = evals;
  return result;
}

}  // namespace nmipw
