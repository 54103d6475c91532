#include "nmipw/missingness.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "json.hpp"

namespace nmipw {

MissingnessParams MissingnessParams::zero(const PatternRegistry& registry) {
  MissingnessParams params;
  for (int m = 2; m <= registry.n_patterns(); ++m) {
    const int p = 1 + static_cast<int>(registry.pattern(m).observed.size());
    params.blocks.push_back(Eigen::VectorXd::Zero(p));
  }
  return params;
}

int MissingnessParams::total_dim() const {
  int dim = 0;
  for (const auto& block : blocks) dim += static_cast<int>(block.size());
  return dim;
}

Eigen::VectorXd MissingnessParams::flatten() const {
  Eigen::VectorXd flat(total_dim());
  int at = 0;
  for (const auto& block : blocks) {
    flat.segment(at, block.size()) = block;
    at += static_cast<int>(block.size());
  }
  return flat;
}

MissingnessParams MissingnessParams::unflatten(const PatternRegistry& registry,
                                               const Eigen::VectorXd& flat) {
  MissingnessParams params = MissingnessParams::zero(registry);
  int at = 0;
  for (auto& block : params.blocks) {
    if (at + block.size() > flat.size())
      throw std::invalid_argument("flat parameter vector too short for registry");
    block = flat.segment(at, block.size());
    at += static_cast<int>(block.size());
  }
  if (at != flat.size())
    throw std::invalid_argument("flat parameter vector too long for registry");
  return params;
}

void MissingnessParams::validate(const PatternRegistry& registry) const {
  if (n_blocks() != registry.n_patterns() - 1)
    throw std::invalid_argument("parameter block count does not match registry");
  for (int m = 2; m <= registry.n_patterns(); ++m) {
    const auto& block = blocks[m - 2];
    if (block.size() != 1 + static_cast<long>(registry.pattern(m).observed.size()))
      throw std::invalid_argument("parameter block length mismatch for pattern " +
                                  std::to_string(m));
    if (!block.allFinite())
      throw std::invalid_argument("parameter block has non-finite entries");
  }
}

std::string MissingnessParams::to_json() const {
  nlohmann::ordered_json gamma;
  for (int b = 0; b < n_blocks(); ++b) {
    std::vector<double> coef(blocks[b].data(), blocks[b].data() + blocks[b].size());
    gamma[std::to_string(b + 2)] = coef;
  }
  nlohmann::ordered_json doc;
  doc["gamma"] = gamma;
  return doc.dump();
}

MissingnessParams MissingnessParams::from_json(const std::string& text,
                                               const PatternRegistry& registry) {
  const auto doc = nlohmann::json::parse(text);
  MissingnessParams params = MissingnessParams::zero(registry);
  for (int m = 2; m <= registry.n_patterns(); ++m) {
    const auto coef = doc.at("gamma").at(std::to_string(m)).get<std::vector<double>>();
    if (coef.size() != static_cast<size_t>(params.blocks[m - 2].size()))
      throw std::invalid_argument("json gamma block " + std::to_string(m) +
                                  " has wrong length");
    params.blocks[m - 2] = Eigen::Map<const Eigen::VectorXd>(coef.data(), coef.size());
  }
  return params;
}

PatternDesign::PatternDesign(const ObservedDataset& dataset,
                             const PatternRegistry& registry) {
  n_variables_ = registry.n_variables();
  M_ = registry.n_patterns();
  n_rows_ = dataset.n();

  std::vector<long> counts = pattern_counts(registry, dataset);
  const long n_cc = counts[0];

  complete_rows_.resize(n_cc, n_variables_);
  complete_index_.reserve(n_cc);
  pattern_design_.resize(M_ - 1);
  complete_design_.resize(M_ - 1);
  pattern_index_.resize(M_ - 1);
  total_dim_ = 0;
  for (int m = 2; m <= M_; ++m) {
    const int p = 1 + static_cast<int>(registry.pattern(m).observed.size());
    total_dim_ += p;
    pattern_design_[m - 2].resize(counts[m - 1], p);
    complete_design_[m - 2].resize(n_cc, p);
    pattern_index_[m - 2].reserve(counts[m - 1]);
  }

  std::vector<long> fill(M_, 0);
  for (long i = 0; i < n_rows_; ++i) {
    const DataRow& row = dataset.rows[i];
    const auto& obs = registry.pattern(row.pattern).observed;
    if (row.values.size() != obs.size())
      throw std::invalid_argument("row value count does not match its pattern");
    if (row.pattern == 1) {
      const long r = fill[0]++;
      for (int v = 0; v < n_variables_; ++v) complete_rows_(r, v) = row.values[v];
      complete_index_.push_back(i);
    } else {
      const long r = fill[row.pattern - 1]++;
      auto& X = pattern_design_[row.pattern - 2];
      X(r, 0) = 1.0;
      for (size_t j = 0; j < obs.size(); ++j) X(r, 1 + j) = row.values[j];
      pattern_index_[row.pattern - 2].push_back(i);
    }
  }
  for (int m = 2; m <= M_; ++m) {
    const auto& obs = registry.pattern(m).observed;
    auto& Xc = complete_design_[m - 2];
    Xc.col(0).setOnes();
    for (size_t j = 0; j < obs.size(); ++j) Xc.col(1 + j) = complete_rows_.col(obs[j]);
  }
}

double pattern_probability(const Eigen::VectorXd& gamma_block,
                           const Eigen::VectorXd& l_obs) {
  if (gamma_block.size() != l_obs.size() + 1)
    throw std::invalid_argument("pattern_probability: dimension mismatch");
  double eta = gamma_block[0];
  for (long j = 0; j < l_obs.size(); ++j) eta += gamma_block[1 + j] * l_obs[j];
  return expit(eta);
}

double complete_case_probability(const MissingnessParams& params,
                                 const Eigen::VectorXd& full_row,
                                 const PatternRegistry& registry) {
  if (full_row.size() != registry.n_variables())
    throw std::invalid_argument("complete_case_probability needs a full row");
  double sum = 0.0;
  for (int m = 2; m <= registry.n_patterns(); ++m) {
    const auto& obs = registry.pattern(m).observed;
    const auto& gamma = params.blocks[m - 2];
    double eta = gamma[0];
    for (size_t j = 0; j < obs.size(); ++j) eta += gamma[1 + j] * full_row[obs[j]];
    sum += expit(eta);
  }
  return 1.0 - sum;
}

Eigen::VectorXd complete_case_probabilities(const MissingnessParams& params,
                                            const PatternDesign& design) {
  const long n_cc = design.n_complete();
  Eigen::VectorXd pi1 = Eigen::VectorXd::Ones(n_cc);
  for (int m = 2; m <= design.n_patterns(); ++m) {
    const Eigen::VectorXd eta = design.complete_rows_for(m) * params.blocks[m - 2];
    for (long i = 0; i < n_cc; ++i) pi1[i] -= expit(eta[i]);
  }
  return pi1;
}

double log_likelihood(const MissingnessParams& params, const PatternDesign& design) {
  double ll = 0.0;
  for (int m = 2; m <= design.n_patterns(); ++m) {
    const Eigen::VectorXd eta = design.pattern_rows(m) * params.blocks[m - 2];
    for (long i = 0; i < eta.size(); ++i) ll += log_expit(eta[i]);
  }
  const Eigen::VectorXd pi1 = complete_case_probabilities(params, design);
  for (long i = 0; i < pi1.size(); ++i) {
    if (pi1[i] <= 0.0) return -std::numeric_limits<double>::infinity();
    ll += std::log(pi1[i]);
  }
  return ll;
}

double log_likelihood(const MissingnessParams& params, const ObservedDataset& dataset,
                      const PatternRegistry& registry) {
  params.validate(registry);
  return log_likelihood(params, PatternDesign(dataset, registry));
}

Eigen::VectorXd score_flat(const MissingnessParams& params, const PatternDesign& design) {
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(design.total_dim());
  const Eigen::VectorXd pi1 = complete_case_probabilities(params, design);
  int at = 0;
  for (int m = 2; m <= design.n_patterns(); ++m) {
    const int p = design.block_size(m);
    // rows with R = m contribute (1 - pi_m) x
    const auto& Xm = design.pattern_rows(m);
    const Eigen::VectorXd eta_m = Xm * params.blocks[m - 2];
    for (long i = 0; i < eta_m.size(); ++i)
      grad.segment(at, p) += (1.0 - expit(eta_m[i])) * Xm.row(i).transpose();
    // complete cases contribute -pi_m (1 - pi_m) / pi_1 x
    const auto& Xc = design.complete_rows_for(m);
    const Eigen::VectorXd eta_c = Xc * params.blocks[m - 2];
    for (long i = 0; i < eta_c.size(); ++i) {
      const double pm = expit(eta_c[i]);
      grad.segment(at, p) -= pm * (1.0 - pm) / pi1[i] * Xc.row(i).transpose();
    }
    at += p;
  }
  return grad;
}

MissingnessParams score(const MissingnessParams& params, const PatternDesign& design) {
  Eigen::VectorXd flat = score_flat(params, design);
  MissingnessParams out = params;
  int at = 0;
  for (auto& block : out.blocks) {
    block = flat.segment(at, block.size());
    at += static_cast<int>(block.size());
  }
  return out;
}

MissingnessParams score(const MissingnessParams& params, const ObservedDataset& dataset,
                        const PatternRegistry& registry) {
  params.validate(registry);
  return score(params, PatternDesign(dataset, registry));
}

Eigen::MatrixXd row_scores(const MissingnessParams& params, const PatternDesign& design) {
  Eigen::MatrixXd scores = Eigen::MatrixXd::Zero(design.n_rows(), design.total_dim());
  const Eigen::VectorXd pi1 = complete_case_probabilities(params, design);
  int at = 0;
  for (int m = 2; m <= design.n_patterns(); ++m) {
    const int p = design.block_size(m);
    const auto& Xm = design.pattern_rows(m);
    const Eigen::VectorXd eta_m = Xm * params.blocks[m - 2];
    const auto& idx_m = design.pattern_row_index(m);
    for (long i = 0; i < eta_m.size(); ++i)
      scores.block(idx_m[i], at, 1, p) = (1.0 - expit(eta_m[i])) * Xm.row(i);
    const auto& Xc = design.complete_rows_for(m);
    const Eigen::VectorXd eta_c = Xc * params.blocks[m - 2];
    const auto& idx_c = design.complete_row_index();
    for (long i = 0; i < eta_c.size(); ++i) {
      const double pm = expit(eta_c[i]);
      scores.block(idx_c[i], at, 1, p) = -pm * (1.0 - pm) / pi1[i] * Xc.row(i);
    }
    at += p;
  }
  return scores;
}

}  // namespace nmipw
