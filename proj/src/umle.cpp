#include "nmipw/umle.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "json.hpp"
#include "nmipw/optim.hpp"

namespace nmipw {

MissingnessParams frequency_init(const PatternDesign& design) {
  const double n = static_cast<double>(design.n_rows());
  MissingnessParams params;
  for (int m = 2; m <= design.n_patterns(); ++m) {
    Eigen::VectorXd block = Eigen::VectorXd::Zero(design.block_size(m));
    const double count = std::max(0.5, static_cast<double>(design.pattern_rows(m).rows()));
    const double p_hat = count / n;
    block[0] = std::log(p_hat / (1.0 - p_hat));
    params.blocks.push_back(std::move(block));
  }
  return params;
}

MissingnessParams frequency_init(const ObservedDataset& dataset,
                                 const PatternRegistry& registry) {
  return frequency_init(PatternDesign(dataset, registry));
}

UmleReport fit_umle(const PatternDesign& design, const PatternRegistry& registry,
                    const MissingnessParams& init, const UmleConfig& config) {
  init.validate(registry);
  if (design.n_complete() < 1)
    throw std::invalid_argument("fit_umle requires at least one complete case");

  const auto objective = [&](const Eigen::VectorXd& x) {
    return log_likelihood(MissingnessParams::unflatten(registry, x), design);
  };
  const auto gradient = [&](const Eigen::VectorXd& x) {
    return score_flat(MissingnessParams::unflatten(registry, x), design);
  };

  // Near the optimum the likelihood (a sum of order n) cannot resolve the
  // tiny improvements a value-based line search needs, so the quasi-Newton
  // phase can stall at a score norm of ~1e-5. A few Newton steps on the
  // score itself (finite-difference Hessian of the analytic gradient) finish
  // the job without comparing function values.
  const auto newton_polish = [&](Eigen::VectorXd x) {
    const int d = static_cast<int>(x.size());
    Eigen::VectorXd g = gradient(x);
    if (!std::isfinite(objective(x))) return x;
    for (int it = 0; it < 15; ++it) {
      const double gnorm = g.lpNorm<Eigen::Infinity>();
      if (gnorm <= config.score_tol || gnorm > 1e-2) break;
      const double h = 1e-6;
      Eigen::MatrixXd hess(d, d);
      for (int j = 0; j < d; ++j) {
        Eigen::VectorXd hi = x, lo = x;
        hi[j] += h;
        lo[j] -= h;
        hess.col(j) = (gradient(hi) - gradient(lo)) / (2.0 * h);
      }
      const Eigen::VectorXd step = hess.fullPivLu().solve(-g);
      if (!step.allFinite()) break;
      bool improved = false;
      double alpha = 1.0;
      for (int half = 0; half < 20; ++half) {
        const Eigen::VectorXd trial = x + alpha * step;
        if (std::isfinite(objective(trial))) {
          const Eigen::VectorXd g_trial = gradient(trial);
          if (g_trial.lpNorm<Eigen::Infinity>() < gnorm) {
            x = trial;
            g = g_trial;
            improved = true;
            break;
          }
        }
        alpha *= 0.5;
      }
      if (!improved) break;
    }
    return x;
  };

  BfgsOptions bfgs_options;
  bfgs_options.grad_tol_inf = config.score_tol;
  bfgs_options.max_iterations = config.max_iterations;
  const BfgsResult bfgs = bfgs_maximize(objective, gradient, init.flatten(), bfgs_options);

  UmleReport report;
  report.iterations = bfgs.iterations;
  Eigen::VectorXd solution = bfgs.x;
  bool quasi_newton_done = bfgs.converged;
  if (!quasi_newton_done) {
    solution = newton_polish(solution);
    quasi_newton_done = gradient(solution).lpNorm<Eigen::Infinity>() <= config.score_tol;
  }
  if (quasi_newton_done) {
    report.method = UmleMethod::QuasiNewton;
  } else {
    // mirror the usual practice: approximate the solution with a
    // derivative-free simplex once the quasi-Newton path stalls
    report.method = UmleMethod::DerivativeFreeFallback;
    NelderMeadOptions nm_options;
    nm_options.max_evaluations = config.fallback_budget;
    const NelderMeadResult nm = nelder_mead_maximize(objective, solution, nm_options);
    if (std::isfinite(nm.f) && nm.f >= objective(solution)) solution = nm.x;
    solution = newton_polish(solution);
  }

  report.params = MissingnessParams::unflatten(registry, solution);
  report.log_likelihood = log_likelihood(report.params, design);
  report.max_abs_score =
      score_flat(report.params, design).lpNorm<Eigen::Infinity>();
  report.converged = std::isfinite(report.log_likelihood) &&
                     report.max_abs_score <= config.score_tol;
  const Eigen::VectorXd pi1 = complete_case_probabilities(report.params, design);
  report.min_complete_case_probability = pi1.size() ? pi1.minCoeff() : 1.0;
  return report;
}

UmleReport fit_umle(const ObservedDataset& dataset, const PatternRegistry& registry,
                    const MissingnessParams& init, const UmleConfig& config) {
  return fit_umle(PatternDesign(dataset, registry), registry, init, config);
}

std::string UmleReport::to_json() const {
  nlohmann::ordered_json doc;
  doc["gamma"] = nlohmann::ordered_json::parse(params.to_json())["gamma"];
  doc["converged"] = converged;
  doc["method"] =
      method == UmleMethod::QuasiNewton ? "quasi-newton" : "derivative-free-fallback";
  doc["log_likelihood"] = log_likelihood;
  doc["max_abs_score"] = max_abs_score;
  doc["min_complete_case_probability"] = min_complete_case_probability;
  doc["iterations"] = iterations;
  return doc.dump();
}

}  // namespace nmipw
