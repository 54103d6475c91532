#include "nmipw/ipw.hpp"

#include <cmath>
#include <stdexcept>

#include "json.hpp"

namespace nmipw {

std::string variance_kind_name(VarianceKind kind) {
  switch (kind) {
    case VarianceKind::Corrected: return "corrected";
    case VarianceKind::CbeCorrected: return "cbe-corrected";
    case VarianceKind::Sandwich: return "sandwich";
    case VarianceKind::Aipw: return "aipw";
    default: return "none";
  }
}

Eigen::VectorXd FitReport::standard_errors() const {
  if (vcov.size() == 0) return Eigen::VectorXd();
  return vcov.diagonal().cwiseMax(0.0).cwiseSqrt();
}

std::string FitReport::to_json(const std::vector<std::string>& coef_names,
                               bool odds_ratios) const {
  nlohmann::ordered_json doc;
  doc["beta"] = std::vector<double>(beta.data(), beta.data() + beta.size());
  if (!coef_names.empty()) doc["names"] = coef_names;
  doc["converged"] = converged;
  doc["iterations"] = iterations;
  doc["residual_inf"] = residual_inf;
  if (vcov.size() > 0) {
    doc["variance_kind"] = variance_kind_name(variance_kind);
    std::vector<std::vector<double>> v(vcov.rows());
    for (long i = 0; i < vcov.rows(); ++i) {
      v[i].resize(vcov.cols());
      for (long j = 0; j < vcov.cols(); ++j) v[i][j] = vcov(i, j);
    }
    doc["vcov"] = v;
    const Eigen::VectorXd se = standard_errors();
    doc["se"] = std::vector<double>(se.data(), se.data() + se.size());
    std::vector<std::vector<double>> ci;
    for (long j = 0; j < beta.size(); ++j)
      ci.push_back({beta[j] - kWald95 * se[j], beta[j] + kWald95 * se[j]});
    doc["ci95"] = ci;
    if (odds_ratios) {
      nlohmann::ordered_json or_block;
      std::vector<double> ors, lo, hi;
      for (long j = 0; j < beta.size(); ++j) {
        ors.push_back(std::exp(beta[j]));
        lo.push_back(std::exp(beta[j] - kWald95 * se[j]));
        hi.push_back(std::exp(beta[j] + kWald95 * se[j]));
      }
      or_block["estimate"] = ors;
      or_block["ci95_low"] = lo;
      or_block["ci95_high"] = hi;
      doc["odds_ratio"] = or_block;
    }
  }
  if (!warnings.empty()) doc["warnings"] = warnings;
  return doc.dump();
}

CompleteCaseView complete_case_view(const ObservedDataset& dataset,
                                    const PatternRegistry& registry,
                                    const MissingnessParams& params) {
  params.validate(registry);
  const int K = registry.n_variables();
  CompleteCaseView view;
  view.n_total = dataset.n();
  long n_cc = 0;
  for (const auto& row : dataset.rows)
    if (row.pattern == 1) ++n_cc;
  view.rows.resize(n_cc, K);
  view.pi1.resize(n_cc);
  view.index.reserve(n_cc);
  long r = 0;
  for (long i = 0; i < dataset.n(); ++i) {
    const auto& row = dataset.rows[i];
    if (row.pattern != 1) continue;
    for (int v = 0; v < K; ++v) view.rows(r, v) = row.values[v];
    view.pi1[r] = complete_case_probability(params, view.rows.row(r), registry);
    view.index.push_back(i);
    ++r;
  }
  return view;
}

FitReport solve_ipw(const ObservedDataset& dataset, const PatternRegistry& registry,
                    const MissingnessParams& params, const EstimatingFunction& ef,
                    const Eigen::VectorXd& init) {
  const CompleteCaseView view = complete_case_view(dataset, registry, params);
  if (view.rows.rows() == 0)
    throw std::runtime_error("invalid weights: no complete cases");
  for (long i = 0; i < view.pi1.size(); ++i)
    if (!(view.pi1[i] > 0.0))
      throw std::runtime_error(
          "invalid weights: fitted complete-case probability <= 0 at row " +
          std::to_string(view.index[i]));

  const Eigen::VectorXd weights = view.pi1.cwiseInverse();
  const MomentSolveResult solved = solve_weighted_moment(view.rows, weights, ef, init);
  FitReport report;
  report.beta = solved.beta;
  report.iterations = solved.iterations;
  report.converged = solved.converged;
  report.residual_inf = solved.residual_inf;
  report.warnings = solved.warnings;
  return report;
}

namespace {

// per-row G_i = 1(R_i=1)/pi_1 M(L_i; beta), zero rows for incomplete cases
Eigen::MatrixXd gamma_rows(const CompleteCaseView& view, const EstimatingFunction& ef,
                           const Eigen::VectorXd& beta) {
  Eigen::MatrixXd g = Eigen::MatrixXd::Zero(view.n_total, ef.dim());
  for (long r = 0; r < view.rows.rows(); ++r)
    g.row(view.index[r]) = ef.evaluate(view.rows.row(r), beta) / view.pi1[r];
  return g;
}

Eigen::MatrixXd mean_jacobian(const CompleteCaseView& view, const EstimatingFunction& ef,
                              const Eigen::VectorXd& beta) {
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(ef.dim(), ef.dim());
  for (long r = 0; r < view.rows.rows(); ++r)
    d += ef.jacobian(view.rows.row(r), beta) / view.pi1[r];
  return d / static_cast<double>(view.n_total);
}

// symmetric solve with a trace-scaled ridge retry
Eigen::MatrixXd solve_spd(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                          std::vector<std::string>* warnings, const char* label) {
  Eigen::LDLT<Eigen::MatrixXd> ldlt(a);
  if (ldlt.info() == Eigen::Success && ldlt.isPositive()) {
    const Eigen::MatrixXd x = ldlt.solve(b);
    if ((a * x - b).norm() <= 1e-8 * (1.0 + b.norm())) return x;
  }
  const double ridge = 1e-10 * a.trace() / static_cast<double>(a.rows());
  if (warnings)
    warnings->push_back(std::string(label) + ": singular Gram matrix, ridge applied");
  Eigen::MatrixXd reg = a;
  reg.diagonal().array() += std::max(ridge, 1e-300);
  return reg.ldlt().solve(b);
}

enum class IpwVarianceForm { Sandwich, Corrected, CbeCorrected };

Eigen::MatrixXd ipw_variance(const ObservedDataset& dataset,
                             const PatternRegistry& registry,
                             const MissingnessParams& params,
                             const EstimatingFunction& ef, const Eigen::VectorXd& beta,
                             IpwVarianceForm form, std::vector<std::string>* warnings) {
  const CompleteCaseView view = complete_case_view(dataset, registry, params);
  for (long i = 0; i < view.pi1.size(); ++i)
    if (!(view.pi1[i] > 0.0))
      throw std::runtime_error("invalid weights: complete-case probability <= 0");
  const double n = static_cast<double>(view.n_total);

  Eigen::MatrixXd g = gamma_rows(view, ef, beta);
  if (form != IpwVarianceForm::Sandwich) {
    const PatternDesign design(dataset, registry);
    const Eigen::MatrixXd s = row_scores(params, design);  // n x d_gamma
    if (s.cols() > 0) {
      const Eigen::MatrixXd cross = g.transpose() * s / n;    // E[G S^T]
      const Eigen::MatrixXd gram = s.transpose() * s / n;     // E[S S^T]
      const Eigen::MatrixXd proj =
          solve_spd(gram, cross.transpose(), warnings, "score gram").transpose();
      g -= s * proj.transpose();  // residual G - W
      if (form == IpwVarianceForm::CbeCorrected) {
        // re-center so the term inside Var[.] has mean zero empirically
        const Eigen::RowVectorXd w_mean = (s.colwise().mean()) * proj.transpose();
        g.rowwise() += w_mean;
      }
    }
  }
  const Eigen::MatrixXd meat = g.transpose() * g / n;
  const Eigen::MatrixXd bread = mean_jacobian(view, ef, beta);
  Eigen::FullPivLU<Eigen::MatrixXd> lu(bread);
  if (!lu.isInvertible())
    throw std::runtime_error("singular moment Jacobian in variance estimation");
  const Eigen::MatrixXd bread_inv = lu.inverse();
  Eigen::MatrixXd av = bread_inv * meat * bread_inv.transpose();
  av = 0.5 * (av + av.transpose()).eval();  // enforce exact symmetry
  return av / n;  // scale of Var(beta-hat)
}

}  // namespace

Eigen::MatrixXd variance_corrected(const ObservedDataset& dataset,
                                   const PatternRegistry& registry,
                                   const MissingnessParams& params,
                                   const EstimatingFunction& ef,
                                   const Eigen::VectorXd& beta_hat,
                                   std::vector<std::string>* warnings) {
  return ipw_variance(dataset, registry, params, ef, beta_hat,
                      IpwVarianceForm::Corrected, warnings);
}

Eigen::MatrixXd variance_cbe_corrected(const ObservedDataset& dataset,
                                       const PatternRegistry& registry,
                                       const MissingnessParams& params,
                                       const EstimatingFunction& ef,
                                       const Eigen::VectorXd& beta_hat,
                                       std::vector<std::string>* warnings) {
  return ipw_variance(dataset, registry, params, ef, beta_hat,
                      IpwVarianceForm::CbeCorrected, warnings);
}

Eigen::MatrixXd variance_sandwich(const ObservedDataset& dataset,
                                  const PatternRegistry& registry,
                                  const MissingnessParams& params,
                                  const EstimatingFunction& ef,
                                  const Eigen::VectorXd& beta_hat,
                                  std::vector<std::string>* warnings) {
  return ipw_variance(dataset, registry, params, ef, beta_hat,
                      IpwVarianceForm::Sandwich, warnings);
}

namespace {

FitReport fit_unweighted(const Eigen::MatrixXd& rows, const EstimatingFunction& ef,
                         const Eigen::VectorXd& init) {
  const Eigen::VectorXd weights = Eigen::VectorXd::Ones(rows.rows());
  const MomentSolveResult solved = solve_weighted_moment(rows, weights, ef, init);
  FitReport report;
  report.beta = solved.beta;
  report.iterations = solved.iterations;
  report.converged = solved.converged;
  report.residual_inf = solved.residual_inf;
  report.warnings = solved.warnings;

  // plain sandwich over the fitted rows
  const double n = static_cast<double>(rows.rows());
  const int q = ef.dim();
  Eigen::MatrixXd meat = Eigen::MatrixXd::Zero(q, q);
  Eigen::MatrixXd bread = Eigen::MatrixXd::Zero(q, q);
  for (long i = 0; i < rows.rows(); ++i) {
    const Eigen::VectorXd row = rows.row(i);
    const Eigen::VectorXd m = ef.evaluate(row, report.beta);
    meat += m * m.transpose();
    bread += ef.jacobian(row, report.beta);
  }
  meat /= n;
  bread /= n;
  Eigen::FullPivLU<Eigen::MatrixXd> lu(bread);
  if (lu.isInvertible()) {
    const Eigen::MatrixXd bread_inv = lu.inverse();
    Eigen::MatrixXd av = bread_inv * meat * bread_inv.transpose();
    report.vcov = 0.5 * (av + av.transpose()) / n;
    report.variance_kind = VarianceKind::Sandwich;
  } else {
    report.warnings.push_back("singular Jacobian: no variance computed");
  }
  return report;
}

}  // namespace

FitReport fit_complete_case(const ObservedDataset& dataset,
                            const PatternRegistry& registry,
                            const EstimatingFunction& ef, const Eigen::VectorXd& init) {
  const int K = registry.n_variables();
  long n_cc = 0;
  for (const auto& row : dataset.rows)
    if (row.pattern == 1) ++n_cc;
  if (n_cc == 0) throw std::runtime_error("no complete cases");
  Eigen::MatrixXd rows(n_cc, K);
  long r = 0;
  for (const auto& row : dataset.rows) {
    if (row.pattern != 1) continue;
    for (int v = 0; v < K; ++v) rows(r, v) = row.values[v];
    ++r;
  }
  return fit_unweighted(rows, ef, init);
}

FitReport fit_full_mle(const Eigen::MatrixXd& full_rows, const EstimatingFunction& ef,
                       const Eigen::VectorXd& init) {
  return fit_unweighted(full_rows, ef, init);
}

}  // namespace nmipw
