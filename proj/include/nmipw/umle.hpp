#ifndef NMIPW_UMLE_HPP
#define NMIPW_UMLE_HPP

#include <string>

#include "nmipw/missingness.hpp"

namespace nmipw {

struct UmleConfig {
  double score_tol = 1e-6;    // sup-norm of the total-log-likelihood gradient
  int max_iterations = 500;   // quasi-Newton budget
  int fallback_budget = 2000; // simplex evaluations after a quasi-Newton failure
};

enum class UmleMethod { QuasiNewton, DerivativeFreeFallback };

struct UmleReport {
  MissingnessParams params;
  bool converged = false;
  UmleMethod method = UmleMethod::QuasiNewton;
  double log_likelihood = 0.0;
  double max_abs_score = 0.0;
  // smallest fitted pi_1 over the complete cases; hovers near zero when the
  // likelihood supremum sits on the boundary of the feasible region
  double min_complete_case_probability = 0.0;
  int iterations = 0;

  std::string to_json() const;
};

// Data-adaptive start: intercepts at logit of the empirical pattern
// frequencies (slopes zero), which is always feasible.
MissingnessParams frequency_init(const ObservedDataset& dataset,
                                 const PatternRegistry& registry);
MissingnessParams frequency_init(const PatternDesign& design);

UmleReport fit_umle(const ObservedDataset& dataset, const PatternRegistry& registry,
                    const MissingnessParams& init, const UmleConfig& config = {});
UmleReport fit_umle(const PatternDesign& design, const PatternRegistry& registry,
                    const MissingnessParams& init, const UmleConfig& config = {});

}  // namespace nmipw

#endif
