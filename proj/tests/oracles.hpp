// Test-only reference implementations, kept independent of the library code
// paths they are used to check.
#ifndef NMIPW_TESTS_ORACLES_HPP
#define NMIPW_TESTS_ORACLES_HPP

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include "nmipw/aipw.hpp"
#include "nmipw/dataset.hpp"
#include "nmipw/rng.hpp"

namespace oracles {

inline double expit(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Iteratively reweighted least squares for logistic regression of y on
// design X (intercept included by the caller).
inline Eigen::VectorXd irls_logistic(const Eigen::MatrixXd& design,
                                     const Eigen::VectorXd& y, int max_iter = 100,
                                     double tol = 1e-12) {
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(design.cols());
  for (int it = 0; it < max_iter; ++it) {
    const Eigen::VectorXd eta = design * beta;
    Eigen::VectorXd mu(eta.size()), w(eta.size());
    for (long i = 0; i < eta.size(); ++i) {
      mu[i] = expit(eta[i]);
      w[i] = mu[i] * (1.0 - mu[i]);
    }
    const Eigen::MatrixXd xtwx =
        design.transpose() * w.asDiagonal() * design;
    const Eigen::VectorXd xty = design.transpose() * (y - mu);
    const Eigen::VectorXd step = xtwx.ldlt().solve(xty);
    beta += step;
    if (step.lpNorm<Eigen::Infinity>() < tol) break;
  }
  return beta;
}

// Textbook sandwich variance of a logistic MLE: B^-1 M B^-T with
// B = X' W X / n and M = X' diag((y-mu)^2) X / n, divided by n.
inline Eigen::MatrixXd glm_sandwich(const Eigen::MatrixXd& design,
                                    const Eigen::VectorXd& y,
                                    const Eigen::VectorXd& beta) {
  const double n = static_cast<double>(design.rows());
  const long p = design.cols();
  Eigen::MatrixXd bread = Eigen::MatrixXd::Zero(p, p);
  Eigen::MatrixXd meat = Eigen::MatrixXd::Zero(p, p);
  for (long i = 0; i < design.rows(); ++i) {
    const Eigen::VectorXd x = design.row(i);
    const double mu = expit(x.dot(beta));
    bread += mu * (1.0 - mu) * x * x.transpose();
    const double r = y[i] - mu;
    meat += r * r * x * x.transpose();
  }
  bread /= n;
  meat /= n;
  const Eigen::MatrixXd bread_inv = bread.inverse();
  return bread_inv * meat * bread_inv.transpose() / n;
}

// central finite differences of a scalar function
inline Eigen::VectorXd central_difference(
    const std::function<double(const Eigen::VectorXd&)>& f, const Eigen::VectorXd& x,
    double h = 1e-5) {
  Eigen::VectorXd grad(x.size());
  for (long j = 0; j < x.size(); ++j) {
    Eigen::VectorXd hi = x, lo = x;
    hi[j] += h;
    lo[j] -= h;
    grad[j] = (f(hi) - f(lo)) / (2.0 * h);
  }
  return grad;
}

// ---- fully discrete toy law: binary (Y, A), patterns R=1 complete,
// R=2 observes A, R=3 observes Y ----
struct DiscreteToyLaw {
  // p(y, a)
  double p_a1 = 0.4;
  double p_y_given_a0 = 0.3;
  double p_y_given_a1 = 0.6;
  Eigen::Vector2d gamma2{-1.1, 0.4};  // intercept, slope on A
  Eigen::Vector2d gamma3{-1.3, 0.5};  // intercept, slope on Y

  double mass(int y, int a) const {
    const double pa = a ? p_a1 : 1.0 - p_a1;
    const double py = a ? p_y_given_a1 : p_y_given_a0;
    return pa * (y ? py : 1.0 - py);
  }
  double pi2(int a) const { return expit(gamma2[0] + gamma2[1] * a); }
  double pi3(int y) const { return expit(gamma3[0] + gamma3[1] * y); }
  double pi1(int y, int a) const { return 1.0 - pi2(a) - pi3(y); }

  // saturated logistic truth: E[(1,a)'(y - expit(b0 + b1 a))] = 0
  Eigen::Vector2d beta_truth() const {
    const double b0 = std::log(p_y_given_a0 / (1.0 - p_y_given_a0));
    const double b1 = std::log(p_y_given_a1 / (1.0 - p_y_given_a1)) - b0;
    return {b0, b1};
  }

  nmipw::VariableSchema schema() const {
    nmipw::VariableSchema schema;
    schema.names = {"Y", "A"};
    schema.types = {nmipw::VarType::Binary, nmipw::VarType::Binary};
    return schema;
  }
  nmipw::PatternRegistry registry() const {
    std::vector<nmipw::Pattern> patterns;
    patterns.push_back({1, {0, 1}});
    patterns.push_back({2, {1}});  // observes A
    patterns.push_back({3, {0}});  // observes Y
    return nmipw::PatternRegistry(2, patterns);
  }
  nmipw::MissingnessParams gamma() const {
    nmipw::MissingnessParams params;
    params.blocks.push_back(gamma2);
    params.blocks.push_back(gamma3);
    return params;
  }

  // every observable outcome (R, observed values) with its exact mass
  struct Outcome {
    nmipw::DataRow row;
    double mass = 0.0;
  };
  std::vector<Outcome> outcomes() const {
    std::vector<Outcome> all;
    for (int y = 0; y < 2; ++y)
      for (int a = 0; a < 2; ++a) {
        all.push_back({{1, {double(y), double(a)}}, mass(y, a) * pi1(y, a)});
      }
    for (int a = 0; a < 2; ++a) {
      double m = 0.0;
      for (int y = 0; y < 2; ++y) m += mass(y, a) * pi2(a);
      all.push_back({{2, {double(a)}}, m});
    }
    for (int y = 0; y < 2; ++y) {
      double m = 0.0;
      for (int a = 0; a < 2; ++a) m += mass(y, a) * pi3(y);
      all.push_back({{3, {double(y)}}, m});
    }
    return all;
  }
};

// Full iterative solve of the restricted augmented estimating equation,
// re-estimating the optimal matrices at every beta; Newton with a
// finite-difference Jacobian of the combined moment.
inline Eigen::VectorXd full_aipw_solve(
    const nmipw::ObservedDataset& dataset, const nmipw::PatternRegistry& registry,
    const nmipw::MissingnessParams& params, const nmipw::LogisticScoreFunction& ef,
    const nmipw::FullDataBasis& full_basis, const nmipw::AugmentationBasis& aug_basis,
    const Eigen::VectorXd& init, nmipw::AipwPath path, int max_iter = 50,
    double tol = 1e-10) {
  const Eigen::MatrixXd astar = nmipw::center_augmentation(
      nmipw::evaluate_augmentation(dataset, registry, params, aug_basis), path);
  const nmipw::CompleteCaseView view =
      nmipw::complete_case_view(dataset, registry, params);
  const double n = static_cast<double>(view.n_total);

  const auto moment = [&](const Eigen::VectorXd& beta) {
    const nmipw::OptMatrices opt = nmipw::estimate_opt_matrices_from(
        dataset, registry, params, full_basis, astar, ef, beta);
    Eigen::VectorXd value = Eigen::VectorXd::Zero(ef.dim());
    for (long r = 0; r < view.rows.rows(); ++r) {
      const Eigen::VectorXd row = view.rows.row(r);
      const double resid =
          row[ef.outcome_index()] - expit(ef.design(row).dot(beta));
      value += opt.C1 * (resid * full_basis.phi(row)) / view.pi1[r];
    }
    value += opt.C2 * astar.colwise().sum().transpose();
    return (value / n).eval();
  };

  Eigen::VectorXd beta = init;
  for (int it = 0; it < max_iter; ++it) {
    const Eigen::VectorXd f0 = moment(beta);
    if (f0.lpNorm<Eigen::Infinity>() < tol) break;
    const double h = 1e-6;
    Eigen::MatrixXd jac(ef.dim(), ef.dim());
    for (int j = 0; j < ef.dim(); ++j) {
      Eigen::VectorXd hi = beta, lo = beta;
      hi[j] += h;
      lo[j] -= h;
      jac.col(j) = (moment(hi) - moment(lo)) / (2.0 * h);
    }
    const Eigen::VectorXd step = jac.fullPivLu().solve(-f0);
    beta += step;
    if (step.lpNorm<Eigen::Infinity>() < tol) break;
  }
  return beta;
}

// Random two-pattern dataset over (Y, A, C): pattern 2 observes (Y, A).
inline std::pair<nmipw::PatternRegistry, nmipw::ObservedDataset> random_two_pattern(
    nmipw::Rng& rng, long n) {
  nmipw::VariableSchema schema;
  schema.names = {"Y", "A", "C"};
  schema.types = {nmipw::VarType::Binary, nmipw::VarType::Continuous,
                  nmipw::VarType::Continuous};
  std::vector<nmipw::Pattern> patterns;
  patterns.push_back({1, {0, 1, 2}});
  patterns.push_back({2, {0, 1}});
  nmipw::PatternRegistry registry(3, patterns);

  nmipw::ObservedDataset dataset;
  dataset.schema = schema;
  for (long i = 0; i < n; ++i) {
    const double a = rng.uniform01();
    const double c = rng.normal();
    const double y = rng.bernoulli(expit(-0.2 + 0.8 * a)) ? 1.0 : 0.0;
    const double p2 = expit(-1.0 + 0.7 * y - 0.5 * a);
    nmipw::DataRow row;
    if (rng.bernoulli(p2)) {
      row.pattern = 2;
      row.values = {y, a};
    } else {
      row.pattern = 1;
      row.values = {y, a, c};
    }
    dataset.rows.push_back(std::move(row));
  }
  return {registry, dataset};
}

}  // namespace oracles

#endif
