#ifndef NMIPW_CBE_HPP
#define NMIPW_CBE_HPP

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <vector>

#include "nmipw/missingness.hpp"
#include "nmipw/rng.hpp"

namespace nmipw {

// Independent normal priors, one per flattened coefficient.
struct PriorSpec {
  Eigen::VectorXd mean;
  Eigen::VectorXd variance;

  static PriorSpec diffuse(int dim, double variance = 1e3);
  double log_density(const Eigen::VectorXd& x) const;  // up to an additive constant
  void validate() const;
};

struct ChainConfig {
  int n_chains = 3;
  long n_iterations = 20000;  // total sweeps per chain
  long n_adapt = 10000;       // adaptive phase; draws discarded, scales frozen after
  double sigma_star = 1e-8;
  std::uint64_t seed = 1;
  double target_acceptance = 0.44;
  double init_jitter_sd = 0.5;  // over-dispersion of chain starts
  int n_threads = 0;            // 0 = one thread per chain, capped by hardware

  void validate() const;
};

struct ChainDraws {
  Eigen::MatrixXd draws;           // kept draws, one row per post-adaptation sweep
  Eigen::VectorXd log_posterior;   // per kept draw
  Eigen::VectorXd acceptance_rate; // per coordinate, post-adaptation phase
  Eigen::VectorXd proposal_scale;  // frozen scales used after adaptation
};

struct PosteriorDraws {
  std::vector<ChainDraws> chains;
  std::vector<int> block_sizes;  // flattened-coordinate layout
  long n_adapt = 0;

  int dim() const { return chains.empty() ? 0 : static_cast<int>(chains[0].draws.cols()); }
  long kept_per_chain() const {
    return chains.empty() ? 0 : static_cast<long>(chains[0].draws.rows());
  }
  Eigen::MatrixXd pooled() const;
  std::vector<std::string> coordinate_names() const;
};

// Log of the constrained posterior up to an additive constant: likelihood plus
// log-prior, with -inf whenever any complete case violates
// sum_k pi_k < 1 - sigma_star.
double log_posterior(const MissingnessParams& params, const PatternDesign& design,
                     const PriorSpec& prior, double sigma_star);
double log_posterior(const MissingnessParams& params, const ObservedDataset& dataset,
                     const PatternRegistry& registry, const PriorSpec& prior,
                     double sigma_star);

// Adaptive random-walk Metropolis within a fixed-order Gibbs sweep over the
// constraint-truncated posterior. Chains run independently (optionally in
// parallel); draws are a deterministic function of (data, config, seed).
PosteriorDraws sample_posterior(const ObservedDataset& dataset,
                                const PatternRegistry& registry, const PriorSpec& prior,
                                const ChainConfig& config);
PosteriorDraws sample_posterior(const PatternDesign& design,
                                const PatternRegistry& registry, const PriorSpec& prior,
                                const ChainConfig& config);

struct GelmanRubinResult {
  Eigen::VectorXd statistic;     // potential scale reduction factor per coordinate
  std::vector<bool> degenerate;  // zero within-chain variance
};

GelmanRubinResult gelman_rubin(const PosteriorDraws& draws);

enum class PointEstimateKind { Mean, Mode };

MissingnessParams point_estimate(const PosteriorDraws& draws,
                                 const PatternRegistry& registry,
                                 PointEstimateKind kind = PointEstimateKind::Mean);

void write_trace_csv(const PosteriorDraws& draws, std::ostream& out);

// ---- generic chain machinery (also used by sampler diagnostics/tests) ----

// A target density that supports cheap single-coordinate updates.
class CoordinateTarget {
 public:
  virtual ~CoordinateTarget() = default;
  virtual int dim() const = 0;
  virtual double log_density() const = 0;               // at the current state
  virtual double log_density_if(int j, double v) = 0;   // coordinate j set to v
  virtual void accept_pending(int j, double v) = 0;     // commit the last _if
  virtual double recompute() = 0;                       // full refresh
  virtual Eigen::VectorXd state() const = 0;
};

// Wraps an arbitrary log density; every coordinate try is a full evaluation.
class FunctionTarget : public CoordinateTarget {
 public:
  FunctionTarget(std::function<double(const Eigen::VectorXd&)> log_density,
                 const Eigen::VectorXd& x0);
  int dim() const override { return static_cast<int>(x_.size()); }
  double log_density() const override { return value_; }
  double log_density_if(int j, double v) override;
  void accept_pending(int j, double v) override;
  double recompute() override;
  Eigen::VectorXd state() const override { return x_; }

 private:
  std::function<double(const Eigen::VectorXd&)> f_;
  Eigen::VectorXd x_;
  double value_;
  double pending_value_ = 0.0;
};

struct ChainRunConfig {
  long n_iterations = 0;
  long n_adapt = 0;
  double target_acceptance = 0.44;
  double initial_scale = 0.5;
};

ChainDraws run_adaptive_chain(CoordinateTarget& target, const ChainRunConfig& config,
                              Rng& rng);

}  // namespace nmipw

#endif
