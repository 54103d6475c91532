#include "nmipw/aipw.hpp"

#include <cmath>
#include <stdexcept>

#include "json.hpp"

namespace nmipw {

double BasisTerm::evaluate(const Eigen::VectorXd& full_row) const {
  switch (kind) {
    case Kind::Constant: return 1.0;
    case Kind::Main: return full_row[i];
    case Kind::Interaction: return full_row[i] * full_row[j];
    case Kind::Square: return full_row[i] * full_row[i];
  }
  return 0.0;
}

std::string BasisTerm::label(const VariableSchema& schema) const {
  switch (kind) {
    case Kind::Constant: return "1";
    case Kind::Main: return schema.names[i];
    case Kind::Interaction: return schema.names[i] + "*" + schema.names[j];
    case Kind::Square: return schema.names[i] + "^2";
  }
  return "?";
}

std::string BasisTerm::to_spec() const {
  switch (kind) {
    case Kind::Constant: return "1";
    case Kind::Main: return "main:" + std::to_string(i);
    case Kind::Interaction:
      return "inter:" + std::to_string(i) + ":" + std::to_string(j);
    case Kind::Square: return "square:" + std::to_string(i);
  }
  return "?";
}

BasisTerm BasisTerm::from_spec(const std::string& spec) {
  BasisTerm term;
  if (spec == "1") {
    term.kind = Kind::Constant;
    return term;
  }
  const auto colon = spec.find(':');
  if (colon == std::string::npos) throw std::invalid_argument("bad basis term: " + spec);
  const std::string head = spec.substr(0, colon);
  const std::string rest = spec.substr(colon + 1);
  if (head == "main") {
    term.kind = Kind::Main;
    term.i = std::stoi(rest);
  } else if (head == "square") {
    term.kind = Kind::Square;
    term.i = std::stoi(rest);
  } else if (head == "inter") {
    const auto colon2 = rest.find(':');
    if (colon2 == std::string::npos)
      throw std::invalid_argument("bad basis term: " + spec);
    term.kind = Kind::Interaction;
    term.i = std::stoi(rest.substr(0, colon2));
    term.j = std::stoi(rest.substr(colon2 + 1));
  } else {
    throw std::invalid_argument("bad basis term: " + spec);
  }
  return term;
}

Eigen::VectorXd FullDataBasis::phi(const Eigen::VectorXd& full_row) const {
  Eigen::VectorXd out(dimension());
  for (int c = 0; c < dimension(); ++c) out[c] = terms[c].evaluate(full_row);
  return out;
}

int AugmentationBasis::dimension() const {
  int k = 0;
  for (const auto& block : pattern_terms) k += static_cast<int>(block.size());
  return k;
}

int AugmentationBasis::block_offset(int m) const {
  int at = 0;
  for (int b = 0; b < m - 2; ++b) at += static_cast<int>(pattern_terms[b].size());
  return at;
}

namespace {

bool is_binary(const VariableSchema& schema, int v) {
  return !schema.types.empty() && schema.types[v] == VarType::Binary;
}

// main effects, pairwise interactions and squares (squares of binary
// variables collapse symbolically)
std::vector<BasisTerm> quadratic_terms(const VariableSchema& schema,
                                       const std::vector<int>& vars) {
  std::vector<BasisTerm> terms;
  for (int v : vars) terms.push_back({BasisTerm::Kind::Main, v, -1});
  for (size_t a = 0; a < vars.size(); ++a)
    for (size_t b = a + 1; b < vars.size(); ++b)
      terms.push_back({BasisTerm::Kind::Interaction, vars[a], vars[b]});
  for (int v : vars)
    if (!is_binary(schema, v)) terms.push_back({BasisTerm::Kind::Square, v, -1});
  return terms;
}

// Greedy rank filter by modified Gram-Schmidt: keep a column when its
// residual against the span of the kept ones exceeds the relative tolerance.
// The first `protect` columns are always kept.
std::vector<BasisTerm> rank_filter(const std::vector<BasisTerm>& terms,
                                   const Eigen::MatrixXd& columns, int protect,
                                   const VariableSchema& schema,
                                   std::vector<std::string>* dropped) {
  constexpr double kRelTol = 1e-10;
  std::vector<BasisTerm> kept;
  std::vector<Eigen::VectorXd> basis;  // orthonormalized kept columns
  for (int c = 0; c < columns.cols(); ++c) {
    Eigen::VectorXd v = columns.col(c);
    const double scale = v.norm();
    for (const auto& b : basis) v -= b.dot(v) * b;
    const bool independent = scale > 0.0 && v.norm() > kRelTol * scale;
    if (c < protect || independent) {
      kept.push_back(terms[c]);
      if (v.norm() > 0.0) basis.push_back(v.normalized());
    } else if (dropped) {
      dropped->push_back(terms[c].label(schema));
    }
  }
  return kept;
}

Eigen::VectorXd scatter_row(const DataRow& row, const Pattern& pattern, int K) {
  Eigen::VectorXd full = Eigen::VectorXd::Zero(K);
  for (size_t j = 0; j < pattern.observed.size(); ++j)
    full[pattern.observed[j]] = row.values[j];
  return full;
}

}  // namespace

std::pair<FullDataBasis, AugmentationBasis> build_default_bases(
    const VariableSchema& schema, const PatternRegistry& registry,
    const LogisticScoreFunction& ef, const ObservedDataset& dataset) {
  const int K = registry.n_variables();

  FullDataBasis full;
  full.q = ef.dim();
  std::vector<BasisTerm> phi;
  phi.push_back({BasisTerm::Kind::Constant, -1, -1});
  for (int c : ef.covariate_indices()) phi.push_back({BasisTerm::Kind::Main, c, -1});
  const std::vector<BasisTerm> h = quadratic_terms(schema, ef.covariate_indices());
  full.h_dimension = static_cast<int>(h.size());
  for (const auto& term : h)
    if (term.kind != BasisTerm::Kind::Main) phi.push_back(term);  // mains already in (1,X)

  // evaluate on complete rows for the data rank check
  std::vector<Eigen::VectorXd> complete;
  for (const auto& row : dataset.rows)
    if (row.pattern == 1)
      complete.push_back(Eigen::Map<const Eigen::VectorXd>(row.values.data(), K));
  Eigen::MatrixXd phi_cols(static_cast<long>(complete.size()), phi.size());
  for (long r = 0; r < phi_cols.rows(); ++r)
    for (size_t c = 0; c < phi.size(); ++c)
      phi_cols(r, c) = phi[c].evaluate(complete[r]);
  full.terms = rank_filter(phi, phi_cols, ef.dim(), schema, &full.dropped);

  AugmentationBasis aug;
  for (int m = 2; m <= registry.n_patterns(); ++m) {
    const Pattern& pattern = registry.pattern(m);
    std::vector<BasisTerm> t;
    t.push_back({BasisTerm::Kind::Constant, -1, -1});
    for (int v : pattern.observed) t.push_back({BasisTerm::Kind::Main, v, -1});
    for (const auto& term : quadratic_terms(schema, pattern.observed))
      if (term.kind != BasisTerm::Kind::Main) t.push_back(term);

    // rows where all of pattern m's variables are available
    std::vector<Eigen::VectorXd> rows;
    for (const auto& row : dataset.rows) {
      if (row.pattern == 1)
        rows.push_back(Eigen::Map<const Eigen::VectorXd>(row.values.data(), K));
      else if (row.pattern == m)
        rows.push_back(scatter_row(row, pattern, K));
    }
    Eigen::MatrixXd t_cols(static_cast<long>(rows.size()), t.size());
    for (long r = 0; r < t_cols.rows(); ++r)
      for (size_t c = 0; c < t.size(); ++c) t_cols(r, c) = t[c].evaluate(rows[r]);
    // the score columns (constant + mains) are never dropped
    const int protect = 1 + static_cast<int>(pattern.observed.size());
    aug.pattern_terms.push_back(rank_filter(t, t_cols, protect, schema, &aug.dropped));
  }
  return {std::move(full), std::move(aug)};
}

std::string bases_to_json(const FullDataBasis& full, const AugmentationBasis& aug) {
  nlohmann::ordered_json doc;
  std::vector<std::string> phi;
  for (const auto& t : full.terms) phi.push_back(t.to_spec());
  doc["full_data"]["q"] = full.q;
  doc["full_data"]["h_dimension"] = full.h_dimension;
  doc["full_data"]["terms"] = phi;
  nlohmann::ordered_json blocks;
  for (size_t b = 0; b < aug.pattern_terms.size(); ++b) {
    std::vector<std::string> specs;
    for (const auto& t : aug.pattern_terms[b]) specs.push_back(t.to_spec());
    blocks[std::to_string(b + 2)] = specs;
  }
  doc["augmentation"] = blocks;
  return doc.dump();
}

std::pair<FullDataBasis, AugmentationBasis> bases_from_json(
    const std::string& text, const LogisticScoreFunction& ef) {
  const auto doc = nlohmann::json::parse(text);
  FullDataBasis full;
  full.q = doc.at("full_data").at("q").get<int>();
  if (full.q != ef.dim())
    throw std::invalid_argument("basis q does not match the estimating function");
  full.h_dimension = doc.at("full_data").value("h_dimension", 0);
  for (const auto& spec : doc.at("full_data").at("terms"))
    full.terms.push_back(BasisTerm::from_spec(spec.get<std::string>()));
  AugmentationBasis aug;
  const auto& blocks = doc.at("augmentation");
  for (int m = 2; m <= static_cast<int>(blocks.size()) + 1; ++m) {
    std::vector<BasisTerm> t;
    for (const auto& spec : blocks.at(std::to_string(m)))
      t.push_back(BasisTerm::from_spec(spec.get<std::string>()));
    aug.pattern_terms.push_back(std::move(t));
  }
  return {std::move(full), std::move(aug)};
}

Eigen::MatrixXd evaluate_augmentation(const ObservedDataset& dataset,
                                      const PatternRegistry& registry,
                                      const MissingnessParams& params,
                                      const AugmentationBasis& basis) {
  params.validate(registry);
  const int K = registry.n_variables();
  const int k = basis.dimension();
  Eigen::MatrixXd astar = Eigen::MatrixXd::Zero(dataset.n(), k);

  for (long i = 0; i < dataset.n(); ++i) {
    const DataRow& row = dataset.rows[i];
    if (row.pattern == 1) {
      const Eigen::VectorXd full = Eigen::Map<const Eigen::VectorXd>(row.values.data(), K);
      const double pi1 = complete_case_probability(params, full, registry);
      if (!(pi1 > 0.0))
        throw std::runtime_error("invalid weights: complete-case probability <= 0");
      int at = 0;
      for (int m = 2; m <= registry.n_patterns(); ++m) {
        const auto& obs = registry.pattern(m).observed;
        const auto& gamma = params.blocks[m - 2];
        double eta = gamma[0];
        for (size_t j = 0; j < obs.size(); ++j) eta += gamma[1 + j] * full[obs[j]];
        const double pm = expit(eta);
        const double factor = pm * (1.0 - pm) / pi1;
        for (const auto& term : basis.pattern_terms[m - 2])
          astar(i, at++) = factor * term.evaluate(full);
      }
    } else {
      const int m = row.pattern;
      const Pattern& pattern = registry.pattern(m);
      const Eigen::VectorXd full = scatter_row(row, pattern, K);
      const auto& gamma = params.blocks[m - 2];
      double eta = gamma[0];
      for (size_t j = 0; j < pattern.observed.size(); ++j)
        eta += gamma[1 + j] * row.values[j];
      const double pm = expit(eta);
      // [1(R=1)/pi_1 - 1(R=m)/pi_m] pi_m (1-pi_m) = -(1-pi_m) for this row
      const double factor = -(1.0 - pm);
      int at = basis.block_offset(m);
      for (const auto& term : basis.pattern_terms[m - 2])
        astar(i, at++) = factor * term.evaluate(full);
    }
  }
  return astar;
}

Eigen::MatrixXd center_augmentation(const Eigen::MatrixXd& astar, AipwPath path) {
  if (path == AipwPath::Umle) return astar;
  return astar.rowwise() - astar.colwise().mean();
}

namespace {

Eigen::MatrixXd solve_sym(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                          std::vector<std::string>* warnings, const char* label) {
  Eigen::LDLT<Eigen::MatrixXd> ldlt(a);
  if (ldlt.info() == Eigen::Success) {
    const Eigen::MatrixXd x = ldlt.solve(b);
    if ((a * x - b).lpNorm<Eigen::Infinity>() <= 1e-8 * (1.0 + b.lpNorm<Eigen::Infinity>()))
      return x;
  }
  if (warnings)
    warnings->push_back(std::string(label) + ": singular matrix, ridge applied");
  Eigen::MatrixXd reg = a;
  reg.diagonal().array() += std::max(1e-10 * a.trace() / a.rows(), 1e-300);
  return reg.ldlt().solve(b);
}

OptMatrices estimate_from_astar(const ObservedDataset& dataset,
                                const PatternRegistry& registry,
                                const MissingnessParams& params,
                                const FullDataBasis& full_basis,
                                const Eigen::MatrixXd& astar,
                                const LogisticScoreFunction& ef,
                                const Eigen::VectorXd& beta) {
  const CompleteCaseView view = complete_case_view(dataset, registry, params);
  const double n = static_cast<double>(view.n_total);
  const int l = full_basis.dimension();
  const int k = static_cast<int>(astar.cols());
  const int q = ef.dim();

  OptMatrices opt;
  opt.n_rows = view.n_total;
  opt.U11 = Eigen::MatrixXd::Zero(l, l);
  opt.U12 = Eigen::MatrixXd::Zero(l, k);
  opt.H1 = Eigen::MatrixXd::Zero(q, l);
  opt.H2 = Eigen::MatrixXd::Zero(q, k);

  for (long r = 0; r < view.rows.rows(); ++r) {
    const Eigen::VectorXd row = view.rows.row(r);
    const double pi1 = view.pi1[r];
    const Eigen::VectorXd phi = full_basis.phi(row);
    const Eigen::VectorXd x = ef.design(row);
    const double p = expit(x.dot(beta));
    const double resid = row[ef.outcome_index()] - p;
    const Eigen::VectorXd ustar = resid * phi;
    opt.U11 += ustar * ustar.transpose() / (pi1 * pi1);
    opt.U12 += ustar * astar.row(view.index[r]) / pi1;
    opt.H1 += p * (1.0 - p) / pi1 * x * phi.transpose();
  }
  opt.U11 /= n;
  opt.U12 /= n;
  opt.H1 /= n;
  opt.U22 = astar.transpose() * astar / n;

  Eigen::MatrixXd gram(l + k, l + k);
  gram.topLeftCorner(l, l) = opt.U11;
  gram.topRightCorner(l, k) = opt.U12;
  gram.bottomLeftCorner(k, l) = opt.U12.transpose();
  gram.bottomRightCorner(k, k) = opt.U22;
  Eigen::MatrixXd h(q, l + k);
  h.leftCols(l) = opt.H1;
  h.rightCols(k) = opt.H2;

  // [C1 C2] G = [H1 H2]  <=>  G [C1 C2]^T = [H1 H2]^T (G symmetric)
  const Eigen::MatrixXd c =
      solve_sym(gram, h.transpose(), &opt.warnings, "block gram").transpose();
  opt.C1 = c.leftCols(l);
  opt.C2 = c.rightCols(k);
  opt.block_residual = (c * gram - h).lpNorm<Eigen::Infinity>();
  return opt;
}

}  // namespace

OptMatrices estimate_opt_matrices(const ObservedDataset& dataset,
                                  const PatternRegistry& registry,
                                  const MissingnessParams& params,
                                  const FullDataBasis& full_basis,
                                  const AugmentationBasis& aug_basis,
                                  const LogisticScoreFunction& ef,
                                  const Eigen::VectorXd& beta, AipwPath path) {
  const Eigen::MatrixXd astar = center_augmentation(
      evaluate_augmentation(dataset, registry, params, aug_basis), path);
  return estimate_from_astar(dataset, registry, params, full_basis, astar, ef, beta);
}

Eigen::MatrixXd aipw_variance(const OptMatrices& opt, std::vector<std::string>* warnings) {
  std::vector<std::string> local;
  std::vector<std::string>* sink = warnings ? warnings : &local;
  const Eigen::MatrixXd u22_inv_u12t = solve_sym(opt.U22, opt.U12.transpose(), sink, "U22");
  const Eigen::MatrixXd inner = opt.U11 - opt.U12 * u22_inv_u12t;
  const Eigen::MatrixXd u11_sup_h1t = solve_sym(inner, opt.H1.transpose(), sink, "U11-");
  Eigen::MatrixXd av_inv = opt.H1 * u11_sup_h1t;  // H1 U^{11} H1^T
  av_inv = 0.5 * (av_inv + av_inv.transpose()).eval();
  const Eigen::MatrixXd identity =
      Eigen::MatrixXd::Identity(av_inv.rows(), av_inv.cols());
  Eigen::MatrixXd av = solve_sym(av_inv, identity, sink, "H1 U11 H1^T");
  av = 0.5 * (av + av.transpose()).eval();
  const double n = opt.n_rows > 0 ? static_cast<double>(opt.n_rows) : 1.0;
  return av / n;
}

namespace {

// `astar` enters the moment itself; `astar_matrices` (centered under the
// Bayes path) enters the optimal-coefficient and variance plug-ins.
FitReport one_step_from_astar(const ObservedDataset& dataset,
                              const PatternRegistry& registry,
                              const MissingnessParams& params,
                              const LogisticScoreFunction& ef,
                              const FullDataBasis& full_basis,
                              const Eigen::MatrixXd& astar,
                              const Eigen::MatrixXd& astar_matrices,
                              const Eigen::VectorXd& beta_ipw) {
  const CompleteCaseView view = complete_case_view(dataset, registry, params);
  const double n = static_cast<double>(view.n_total);
  const int q = ef.dim();

  OptMatrices opt = estimate_from_astar(dataset, registry, params, full_basis,
                                        astar_matrices, ef, beta_ipw);

  // Newton step on the optimal combined moment. At the optimal (C1, C2) the
  // moment's Jacobian equals -H1 [U11 - U12 U22^-1 U12^T]^-1 H1^T (the
  // information-equality form); using it makes the update influence-function
  // equivalent to the full iterative solve.
  const Eigen::MatrixXd inner_inv_h1t =
      solve_sym(opt.U11 - opt.U12 * solve_sym(opt.U22, opt.U12.transpose(),
                                              &opt.warnings, "U22"),
                opt.H1.transpose(), &opt.warnings, "U11-");
  Eigen::MatrixXd jac = opt.H1 * inner_inv_h1t;  // H1 U^{11} H1^T
  jac = 0.5 * (jac + jac.transpose()).eval();
  Eigen::FullPivLU<Eigen::MatrixXd> lu(jac);
  if (!lu.isInvertible())
    throw std::runtime_error("singular moment Jacobian in one-step update");

  Eigen::VectorXd moment = Eigen::VectorXd::Zero(q);
  for (long r = 0; r < view.rows.rows(); ++r) {
    const Eigen::VectorXd row = view.rows.row(r);
    const double resid = row[ef.outcome_index()] - expit(ef.design(row).dot(beta_ipw));
    moment += opt.C1 * (resid * full_basis.phi(row)) / view.pi1[r];
  }
  moment += opt.C2 * astar.colwise().sum().transpose();
  moment /= n;

  FitReport report;
  report.beta = beta_ipw + lu.solve(moment);
  report.converged = true;
  report.iterations = 1;
  report.residual_inf = 0.0;
  report.warnings = opt.warnings;

  OptMatrices opt_at = estimate_from_astar(dataset, registry, params, full_basis,
                                           astar_matrices, ef, report.beta);
  report.vcov = aipw_variance(opt_at, &report.warnings);
  report.variance_kind = VarianceKind::Aipw;
  return report;
}

}  // namespace

FitReport one_step_aipw(const ObservedDataset& dataset, const PatternRegistry& registry,
                        const MissingnessParams& params, const LogisticScoreFunction& ef,
                        const FullDataBasis& full_basis,
                        const AugmentationBasis& aug_basis,
                        const Eigen::VectorXd& beta_ipw, AipwPath path) {
  const Eigen::MatrixXd astar =
      evaluate_augmentation(dataset, registry, params, aug_basis);
  // The raw columns stay in the moment: their empirical mean is what absorbs
  // the first-order deviation of the fitted missingness parameters. Centering
  // applies to the covariance plug-ins only.
  return one_step_from_astar(dataset, registry, params, ef, full_basis, astar,
                             center_augmentation(astar, path), beta_ipw);
}

OptMatrices estimate_opt_matrices_from(const ObservedDataset& dataset,
                                       const PatternRegistry& registry,
                                       const MissingnessParams& params,
                                       const FullDataBasis& full_basis,
                                       const Eigen::MatrixXd& astar,
                                       const LogisticScoreFunction& ef,
                                       const Eigen::VectorXd& beta) {
  return estimate_from_astar(dataset, registry, params, full_basis, astar, ef, beta);
}

FitReport one_step_aipw_from(const ObservedDataset& dataset,
                             const PatternRegistry& registry,
                             const MissingnessParams& params,
                             const LogisticScoreFunction& ef,
                             const FullDataBasis& full_basis,
                             const Eigen::MatrixXd& astar,
                             const Eigen::VectorXd& beta_ipw) {
  return one_step_from_astar(dataset, registry, params, ef, full_basis, astar, astar,
                             beta_ipw);
}

}  // namespace nmipw
