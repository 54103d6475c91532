#ifndef NMIPW_MISSINGNESS_HPP
#define NMIPW_MISSINGNESS_HPP

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "nmipw/dataset.hpp"

namespace nmipw {

inline double expit(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// log(expit(x)) without overflow for large |x|
inline double log_expit(double x) {
  if (x >= 0.0) return -std::log1p(std::exp(-x));
  return x - std::log1p(std::exp(x));
}

// Coefficients of the per-pattern logistic models: one block per incomplete
// pattern m = 2..M, intercept first, then one slope per observed variable of
// that pattern.
struct MissingnessParams {
  std::vector<Eigen::VectorXd> blocks;  // blocks[m-2] = gamma_m

  static MissingnessParams zero(const PatternRegistry& registry);
  int n_blocks() const { return static_cast<int>(blocks.size()); }
  int total_dim() const;
  Eigen::VectorXd flatten() const;
  static MissingnessParams unflatten(const PatternRegistry& registry,
                                     const Eigen::VectorXd& flat);
  void validate(const PatternRegistry& registry) const;  // lengths + finiteness

  std::string to_json() const;
  static MissingnessParams from_json(const std::string& text,
                                     const PatternRegistry& registry);
};

// Design matrices precomputed once per (dataset, registry): everything the
// likelihood, score, sampler and variance estimators touch row-wise. Immutable
// after construction, safe to share across threads.
class PatternDesign {
 public:
  PatternDesign(const ObservedDataset& dataset, const PatternRegistry& registry);

  int n_variables() const { return n_variables_; }
  int n_patterns() const { return M_; }
  long n_rows() const { return n_rows_; }
  long n_complete() const { return static_cast<long>(complete_rows_.rows()); }
  int block_size(int m) const { return static_cast<int>(pattern_design_[m - 2].cols()); }
  int total_dim() const { return total_dim_; }

  // rows with R = m, design (1, L_(m)); one matrix per incomplete pattern
  const Eigen::MatrixXd& pattern_rows(int m) const { return pattern_design_[m - 2]; }
  // complete-case rows evaluated on pattern m's variables, design (1, L_(m))
  const Eigen::MatrixXd& complete_rows_for(int m) const { return complete_design_[m - 2]; }
  // complete-case rows as full K-vectors
  const Eigen::MatrixXd& complete_rows() const { return complete_rows_; }
  // index in the original dataset of each row of pattern_rows(m)
  const std::vector<long>& pattern_row_index(int m) const { return pattern_index_[m - 2]; }
  const std::vector<long>& complete_row_index() const { return complete_index_; }

 private:
  int n_variables_ = 0;
  int M_ = 0;
  long n_rows_ = 0;
  int total_dim_ = 0;
  std::vector<Eigen::MatrixXd> pattern_design_;
  std::vector<Eigen::MatrixXd> complete_design_;
  std::vector<std::vector<long>> pattern_index_;
  std::vector<long> complete_index_;
  Eigen::MatrixXd complete_rows_;
};

// pi_m(L_(m); gamma_m) = expit(gamma_m . (1, l_obs)); strictly inside (0,1)
double pattern_probability(const Eigen::VectorXd& gamma_block,
                           const Eigen::VectorXd& l_obs);

// pi_1(L; gamma) = 1 - sum of all incomplete-pattern probabilities, evaluated
// at a complete row. May be <= 0 for pathological gamma; reported as-is.
double complete_case_probability(const MissingnessParams& params,
                                 const Eigen::VectorXd& full_row,
                                 const PatternRegistry& registry);

// pi_1 for every complete-case row of the design
Eigen::VectorXd complete_case_probabilities(const MissingnessParams& params,
                                            const PatternDesign& design);

// Unconstrained log-likelihood; -inf whenever a complete-case probability
// is <= 0, so optimizers can backtrack instead of throwing.
double log_likelihood(const MissingnessParams& params, const PatternDesign& design);
double log_likelihood(const MissingnessParams& params, const ObservedDataset& dataset,
                      const PatternRegistry& registry);

// Gradient of the log-likelihood in the same block layout as the parameters.
MissingnessParams score(const MissingnessParams& params, const PatternDesign& design);
MissingnessParams score(const MissingnessParams& params, const ObservedDataset& dataset,
                        const PatternRegistry& registry);
Eigen::VectorXd score_flat(const MissingnessParams& params, const PatternDesign& design);

// Per-row score contributions (n x total_dim), rows in dataset order; the
// column layout matches the flattened parameters.
Eigen::MatrixXd row_scores(const MissingnessParams& params, const PatternDesign& design);

}  // namespace nmipw

#endif
