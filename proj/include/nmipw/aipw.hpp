#ifndef NMIPW_AIPW_HPP
#define NMIPW_AIPW_HPP

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "nmipw/ipw.hpp"

namespace nmipw {

// A polynomial basis term over schema variables.
struct BasisTerm {
  enum class Kind { Constant, Main, Interaction, Square };
  Kind kind = Kind::Constant;
  int i = -1;  // variable index (Main, Square, Interaction)
  int j = -1;  // second variable (Interaction)

  double evaluate(const Eigen::VectorXd& full_row) const;
  std::string label(const VariableSchema& schema) const;
  std::string to_spec() const;                     // "1", "main:i", "inter:i:j", "square:i"
  static BasisTerm from_spec(const std::string&);  // inverse of to_spec
};

// Basis of the restricted full-data estimating space: U*(L;beta) =
// phi(X) {Y - expit[beta (1,X)^T]} with phi spanning (1, X) plus the
// quadratic expansion of the covariates. The first q columns reproduce the
// logistic score.
struct FullDataBasis {
  std::vector<BasisTerm> terms;  // phi columns
  int q = 0;                     // estimating-function dimension
  int h_dimension = 0;           // quadratic-expansion terms (mains+interactions+squares)
  std::vector<std::string> dropped;  // labels removed by the rank check

  int dimension() const { return static_cast<int>(terms.size()); }
  Eigen::VectorXd phi(const Eigen::VectorXd& full_row) const;
};

// Basis of the restricted augmentation space: for each incomplete pattern r a
// vector t*_r over L_(r) (constant and main effects first, so the
// missingness-model score columns are spanned), stacked into
// A*(R, L_(R)) = [1(R=1)/pi_1 - 1(R=r)/pi_r] pi_r (1-pi_r) t*_r(L_(r)).
struct AugmentationBasis {
  std::vector<std::vector<BasisTerm>> pattern_terms;  // per pattern m = 2..M
  std::vector<std::string> dropped;

  int dimension() const;
  int block_offset(int m) const;  // column offset of pattern m's block
};

std::pair<FullDataBasis, AugmentationBasis> build_default_bases(
    const VariableSchema& schema, const PatternRegistry& registry,
    const LogisticScoreFunction& ef, const ObservedDataset& dataset);

// Basis specification round-trip for configuration files.
std::string bases_to_json(const FullDataBasis& full, const AugmentationBasis& aug);
std::pair<FullDataBasis, AugmentationBasis> bases_from_json(
    const std::string& text, const LogisticScoreFunction& ef);

// A* evaluated on every dataset row (n x k); incomplete rows populate only
// their own pattern block.
Eigen::MatrixXd evaluate_augmentation(const ObservedDataset& dataset,
                                      const PatternRegistry& registry,
                                      const MissingnessParams& params,
                                      const AugmentationBasis& basis);

enum class AipwPath { Umle, Cbe };

// For the constrained-Bayes path the augmentation columns are centered to
// have mean zero empirically before entering the covariance plug-ins; under
// UMLE they are used as-is (the score columns are already mean zero at the
// MLE). The one-step moment always uses the raw columns, whose empirical
// mean absorbs the first-order deviation of the fitted missingness model.
Eigen::MatrixXd center_augmentation(const Eigen::MatrixXd& astar, AipwPath path);

struct OptMatrices {
  Eigen::MatrixXd U11, U12, U22;  // l x l, l x k, k x k
  Eigen::MatrixXd H1, H2;         // q x l, q x k (H2 = 0)
  Eigen::MatrixXd C1, C2;         // optimal combination, q x l and q x k
  double block_residual = 0.0;    // || [C1 C2] G - [H1 H2] ||_inf
  long n_rows = 0;
  std::vector<std::string> warnings;
};

OptMatrices estimate_opt_matrices(const ObservedDataset& dataset,
                                  const PatternRegistry& registry,
                                  const MissingnessParams& params,
                                  const FullDataBasis& full_basis,
                                  const AugmentationBasis& aug_basis,
                                  const LogisticScoreFunction& ef,
                                  const Eigen::VectorXd& beta, AipwPath path);

// Variants over a pre-evaluated (and already centered) augmentation matrix;
// the regular entry points evaluate and center it themselves.
OptMatrices estimate_opt_matrices_from(const ObservedDataset& dataset,
                                       const PatternRegistry& registry,
                                       const MissingnessParams& params,
                                       const FullDataBasis& full_basis,
                                       const Eigen::MatrixXd& astar,
                                       const LogisticScoreFunction& ef,
                                       const Eigen::VectorXd& beta);
FitReport one_step_aipw_from(const ObservedDataset& dataset,
                             const PatternRegistry& registry,
                             const MissingnessParams& params,
                             const LogisticScoreFunction& ef,
                             const FullDataBasis& full_basis,
                             const Eigen::MatrixXd& astar,
                             const Eigen::VectorXd& beta_ipw);

// One-step update of the IPW estimate with the optimal restricted augmented
// moment; the report's vcov is the AIPW asymptotic variance at the updated
// point, divided by n.
FitReport one_step_aipw(const ObservedDataset& dataset, const PatternRegistry& registry,
                        const MissingnessParams& params, const LogisticScoreFunction& ef,
                        const FullDataBasis& full_basis,
                        const AugmentationBasis& aug_basis,
                        const Eigen::VectorXd& beta_ipw, AipwPath path);

// { H1 [U11 - U12 U22^-1 U12^T]^-1 H1^T }^-1 / n
Eigen::MatrixXd aipw_variance(const OptMatrices& opt,
                              std::vector<std::string>* warnings = nullptr);

}  // namespace nmipw

#endif
