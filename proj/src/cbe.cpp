#include "nmipw/cbe.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>
#include <stdexcept>
#include <thread>

#include "nmipw/umle.hpp"

namespace nmipw {

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();
}

PriorSpec PriorSpec::diffuse(int dim, double variance) {
  PriorSpec prior;
  prior.mean = Eigen::VectorXd::Zero(dim);
  prior.variance = Eigen::VectorXd::Constant(dim, variance);
  return prior;
}

void PriorSpec::validate() const {
  if (mean.size() != variance.size())
    throw std::invalid_argument("prior mean/variance size mismatch");
  if ((variance.array() <= 0.0).any())
    throw std::invalid_argument("prior variances must be positive");
}

double PriorSpec::log_density(const Eigen::VectorXd& x) const {
  if (x.size() != mean.size())
    throw std::invalid_argument("prior dimension mismatch");
  return -0.5 * ((x - mean).array().square() / variance.array()).sum();
}

void ChainConfig::validate() const {
  if (n_chains < 2) throw std::invalid_argument("need at least 2 chains");
  if (n_adapt >= n_iterations)
    throw std::invalid_argument("n_adapt must be smaller than n_iterations");
  if (!(sigma_star > 0.0 && sigma_star < 1.0))
    throw std::invalid_argument("sigma_star must lie in (0,1)");
}

double log_posterior(const MissingnessParams& params, const PatternDesign& design,
                     const PriorSpec& prior, double sigma_star) {
  // feasibility: every complete case must satisfy sum_k pi_k < 1 - sigma_star
  const Eigen::VectorXd pi1 = complete_case_probabilities(params, design);
  for (long i = 0; i < pi1.size(); ++i)
    if (!(pi1[i] > sigma_star)) return kNegInf;
  return log_likelihood(params, design) + prior.log_density(params.flatten());
}

double log_posterior(const MissingnessParams& params, const ObservedDataset& dataset,
                     const PatternRegistry& registry, const PriorSpec& prior,
                     double sigma_star) {
  params.validate(registry);
  return log_posterior(params, PatternDesign(dataset, registry), prior, sigma_star);
}

// ---- incremental target over the constrained posterior ----
//
// A coordinate proposal touches one gamma block, so only that block's pattern
// rows and the shared complete-case probability sums need updating. Pending
// buffers are swapped in on acceptance; a periodic full recompute bounds
// floating-point drift of the running sums.
namespace {

class ConstrainedPosteriorTarget : public CoordinateTarget {
 public:
  ConstrainedPosteriorTarget(const PatternDesign& design, const PriorSpec& prior,
                             double sigma_star, const Eigen::VectorXd& x0)
      : design_(design), prior_(prior), sigma_star_(sigma_star), x_(x0) {
    const int B = design.n_patterns() - 1;
    coord_block_.reserve(design.total_dim());
    coord_col_.reserve(design.total_dim());
    for (int b = 0; b < B; ++b) {
      const int p = design.block_size(b + 2);
      block_offset_.push_back(static_cast<int>(coord_block_.size()));
      for (int c = 0; c < p; ++c) {
        coord_block_.push_back(b);
        coord_col_.push_back(c);
      }
    }
    eta_pattern_.resize(B);
    eta_complete_.resize(B);
    expit_complete_.resize(B);
    ll_pattern_.resize(B);
    pending_eta_pattern_.resize(B);
    pending_eta_complete_.resize(B);
    pending_expit_complete_.resize(B);
    const long ncc = design.n_complete();
    s_sum_.resize(ncc);
    pending_s_sum_.resize(ncc);
    recompute();
  }

  int dim() const override { return static_cast<int>(coord_block_.size()); }
  double log_density() const override { return total_; }
  Eigen::VectorXd state() const override { return x_; }

  double recompute() override {
    const int B = design_.n_patterns() - 1;
    s_sum_.setZero();
    for (int b = 0; b < B; ++b) {
      const Eigen::VectorXd gamma = block_of(x_, b);
      eta_pattern_[b] = design_.pattern_rows(b + 2) * gamma;
      ll_pattern_[b] = 0.0;
      for (long i = 0; i < eta_pattern_[b].size(); ++i)
        ll_pattern_[b] += log_expit(eta_pattern_[b][i]);
      eta_complete_[b] = design_.complete_rows_for(b + 2) * gamma;
      expit_complete_[b].resize(eta_complete_[b].size());
      for (long i = 0; i < eta_complete_[b].size(); ++i) {
        expit_complete_[b][i] = expit(eta_complete_[b][i]);
        s_sum_[i] += expit_complete_[b][i];
      }
    }
    ll_complete_ = complete_term(s_sum_);
    log_prior_ = prior_.log_density(x_);
    total_ = sum_total();
    return total_;
  }

  double log_density_if(int j, double v) override {
    const int b = coord_block_[j];
    const int c = coord_col_[j];
    const double delta = v - x_[j];

    pending_eta_pattern_[b] =
        eta_pattern_[b] + delta * design_.pattern_rows(b + 2).col(c);
    double ll_pat = 0.0;
    for (long i = 0; i < pending_eta_pattern_[b].size(); ++i)
      ll_pat += log_expit(pending_eta_pattern_[b][i]);

    pending_eta_complete_[b] =
        eta_complete_[b] + delta * design_.complete_rows_for(b + 2).col(c);
    pending_expit_complete_[b].resize(pending_eta_complete_[b].size());
    for (long i = 0; i < pending_eta_complete_[b].size(); ++i) {
      pending_expit_complete_[b][i] = expit(pending_eta_complete_[b][i]);
      pending_s_sum_[i] = s_sum_[i] - expit_complete_[b][i] + pending_expit_complete_[b][i];
    }
    const double ll_cc = complete_term(pending_s_sum_);
    if (ll_cc == kNegInf) return kNegInf;

    const double prior_old = prior_coordinate(j, x_[j]);
    const double prior_new = prior_coordinate(j, v);
    return total_ - ll_pattern_[b] + ll_pat - ll_complete_ + ll_cc - prior_old +
           prior_new;
  }

  void accept_pending(int j, double v) override {
    const int b = coord_block_[j];
    std::swap(eta_pattern_[b], pending_eta_pattern_[b]);
    std::swap(eta_complete_[b], pending_eta_complete_[b]);
    std::swap(expit_complete_[b], pending_expit_complete_[b]);
    std::swap(s_sum_, pending_s_sum_);
    ll_pattern_[b] = 0.0;
    for (long i = 0; i < eta_pattern_[b].size(); ++i)
      ll_pattern_[b] += log_expit(eta_pattern_[b][i]);
    ll_complete_ = complete_term(s_sum_);
    log_prior_ += prior_coordinate(j, v) - prior_coordinate(j, x_[j]);
    x_[j] = v;
    total_ = sum_total();
  }

 private:
  Eigen::VectorXd block_of(const Eigen::VectorXd& x, int b) const {
    return x.segment(block_offset_[b], design_.block_size(b + 2));
  }

  double prior_coordinate(int j, double v) const {
    const double d = v - prior_.mean[j];
    return -0.5 * d * d / prior_.variance[j];
  }

  double complete_term(const Eigen::VectorXd& s) const {
    double ll = 0.0;
    for (long i = 0; i < s.size(); ++i) {
      if (!(s[i] < 1.0 - sigma_star_)) return kNegInf;
      ll += std::log1p(-s[i]);
    }
    return ll;
  }

  double sum_total() const {
    double total = ll_complete_ + log_prior_;
    for (double v : ll_pattern_) total += v;
    return total;
  }

  const PatternDesign& design_;
  const PriorSpec& prior_;
  double sigma_star_;
  Eigen::VectorXd x_;
  std::vector<int> coord_block_, coord_col_, block_offset_;
  std::vector<Eigen::VectorXd> eta_pattern_, eta_complete_, expit_complete_;
  std::vector<Eigen::VectorXd> pending_eta_pattern_, pending_eta_complete_,
      pending_expit_complete_;
  Eigen::VectorXd s_sum_, pending_s_sum_;
  std::vector<double> ll_pattern_;
  double ll_complete_ = 0.0;
  double log_prior_ = 0.0;
  double total_ = 0.0;
};

}  // namespace

FunctionTarget::FunctionTarget(std::function<double(const Eigen::VectorXd&)> log_density,
                               const Eigen::VectorXd& x0)
    : f_(std::move(log_density)), x_(x0), value_(f_(x0)) {}

double FunctionTarget::log_density_if(int j, double v) {
  Eigen::VectorXd trial = x_;
  trial[j] = v;
  pending_value_ = f_(trial);
  return pending_value_;
}

void FunctionTarget::accept_pending(int j, double v) {
  x_[j] = v;
  value_ = pending_value_;
}

double FunctionTarget::recompute() {
  value_ = f_(x_);
  return value_;
}

ChainDraws run_adaptive_chain(CoordinateTarget& target, const ChainRunConfig& config,
                              Rng& rng) {
  const int d = target.dim();
  const long n_keep = config.n_iterations - config.n_adapt;
  ChainDraws out;
  out.draws.resize(n_keep, d);
  out.log_posterior.resize(n_keep);
  out.acceptance_rate = Eigen::VectorXd::Zero(d);
  Eigen::VectorXd log_scale =
      Eigen::VectorXd::Constant(d, std::log(config.initial_scale));

  double lp = target.log_density();
  Eigen::VectorXd accepted = Eigen::VectorXd::Zero(d);
  for (long t = 1; t <= config.n_iterations; ++t) {
    const bool adapting = t <= config.n_adapt;
    for (int j = 0; j < d; ++j) {
      const double v = target.state()[j] + std::exp(log_scale[j]) * rng.normal();
      const double lp_try = target.log_density_if(j, v);
      const double log_u = std::log(rng.uniform01());
      const bool accept = std::isfinite(lp_try) && log_u < lp_try - lp;
      if (accept) {
        target.accept_pending(j, v);
        lp = lp_try;
      }
      if (adapting) {
        // Robbins-Monro on the log proposal scale, frozen after the
        // adaptive phase so the retained chain is Markov
        const double step = std::pow(static_cast<double>(t), -0.7);
        log_scale[j] += step * ((accept ? 1.0 : 0.0) - config.target_acceptance);
        log_scale[j] = std::clamp(log_scale[j], -12.0, 6.0);
      } else if (accept) {
        accepted[j] += 1.0;
      }
    }
    if (t % 64 == 0) lp = target.recompute();
    if (!adapting) {
      const long r = t - config.n_adapt - 1;
      out.draws.row(r) = target.state().transpose();
      out.log_posterior[r] = lp;
    }
  }
  if (n_keep > 0) out.acceptance_rate = accepted / static_cast<double>(n_keep);
  out.proposal_scale = log_scale.array().exp();
  return out;
}

PosteriorDraws sample_posterior(const PatternDesign& design,
                                const PatternRegistry& registry, const PriorSpec& prior,
                                const ChainConfig& config) {
  config.validate();
  prior.validate();
  if (design.n_complete() < 1)
    throw std::invalid_argument("sample_posterior requires at least one complete case");
  if (prior.mean.size() != design.total_dim())
    throw std::invalid_argument("prior dimension does not match parameter dimension");

  const MissingnessParams base = frequency_init(design);
  {
    ConstrainedPosteriorTarget probe(design, prior, config.sigma_star, base.flatten());
    if (!std::isfinite(probe.log_density()))
      throw std::runtime_error(
          "infeasible start: no parameter value satisfies the complete-case "
          "constraint");
  }

  PosteriorDraws out;
  for (int m = 2; m <= registry.n_patterns(); ++m)
    out.block_sizes.push_back(design.block_size(m));
  out.n_adapt = config.n_adapt;
  out.chains.resize(config.n_chains);

  const Eigen::VectorXd base_flat = base.flatten();
  std::vector<std::string> chain_errors(config.n_chains);
  auto run_one = [&](int chain) {
    try {
      Rng rng = Rng::substream(config.seed, static_cast<std::uint64_t>(chain));
      // over-dispersed start: frequency init plus shrinking jitter until feasible
      Eigen::VectorXd jitter(base_flat.size());
      for (long j = 0; j < jitter.size(); ++j)
        jitter[j] = config.init_jitter_sd * rng.normal();
      Eigen::VectorXd x0 = base_flat + jitter;
      for (int attempt = 0; attempt < 80; ++attempt) {
        ConstrainedPosteriorTarget probe(design, prior, config.sigma_star, x0);
        if (std::isfinite(probe.log_density())) break;
        jitter *= 0.5;
        x0 = base_flat + jitter;
      }
      ConstrainedPosteriorTarget target(design, prior, config.sigma_star, x0);
      if (!std::isfinite(target.log_density()))
        throw std::runtime_error(
            "infeasible start: could not find a feasible chain start");
      ChainRunConfig run;
      run.n_iterations = config.n_iterations;
      run.n_adapt = config.n_adapt;
      run.target_acceptance = config.target_acceptance;
      out.chains[chain] = run_adaptive_chain(target, run, rng);
    } catch (const std::exception& e) {
      chain_errors[chain] = e.what();
    }
  };

  int threads = config.n_threads > 0
                    ? config.n_threads
                    : static_cast<int>(std::thread::hardware_concurrency());
  threads = std::max(1, std::min(threads, config.n_chains));
  if (threads == 1) {
    for (int c = 0; c < config.n_chains; ++c) run_one(c);
  } else {
    std::vector<std::thread> pool;
    std::atomic<int> next{0};
    for (int t = 0; t < threads; ++t)
      pool.emplace_back([&] {
        for (int c = next.fetch_add(1); c < config.n_chains; c = next.fetch_add(1))
          run_one(c);
      });
    for (auto& th : pool) th.join();
  }
  for (const auto& message : chain_errors)
    if (!message.empty()) throw std::runtime_error(message);
  return out;
}

PosteriorDraws sample_posterior(const ObservedDataset& dataset,
                                const PatternRegistry& registry, const PriorSpec& prior,
                                const ChainConfig& config) {
  return sample_posterior(PatternDesign(dataset, registry), registry, prior, config);
}

Eigen::MatrixXd PosteriorDraws::pooled() const {
  const long per_chain = kept_per_chain();
  Eigen::MatrixXd all(per_chain * static_cast<long>(chains.size()), dim());
  long at = 0;
  for (const auto& chain : chains) {
    all.middleRows(at, chain.draws.rows()) = chain.draws;
    at += chain.draws.rows();
  }
  return all;
}

std::vector<std::string> PosteriorDraws::coordinate_names() const {
  std::vector<std::string> names;
  for (size_t b = 0; b < block_sizes.size(); ++b)
    for (int c = 0; c < block_sizes[b]; ++c)
      names.push_back("gamma" + std::to_string(b + 2) + "_" + std::to_string(c));
  return names;
}

GelmanRubinResult gelman_rubin(const PosteriorDraws& draws) {
  const int m = static_cast<int>(draws.chains.size());
  const long n = draws.kept_per_chain();
  if (m < 2) throw std::invalid_argument("gelman_rubin needs at least 2 chains");
  if (n < 10) throw std::invalid_argument("gelman_rubin needs at least 10 draws per chain");
  const int d = draws.dim();

  GelmanRubinResult result;
  result.statistic.resize(d);
  result.degenerate.assign(d, false);
  for (int j = 0; j < d; ++j) {
    Eigen::VectorXd means(m), vars(m);
    for (int c = 0; c < m; ++c) {
      const auto col = draws.chains[c].draws.col(j);
      const double mean = col.mean();
      means[c] = mean;
      vars[c] = (col.array() - mean).square().sum() / static_cast<double>(n - 1);
    }
    const double w = vars.mean();
    const double grand = means.mean();
    const double b_over_n =
        (means.array() - grand).square().sum() / static_cast<double>(m - 1);
    if (w <= 0.0) {
      result.statistic[j] = 1.0;
      result.degenerate[j] = true;
      continue;
    }
    const double nn = static_cast<double>(n);
    const double var_plus = (nn - 1.0) / nn * w + b_over_n;
    const double v_hat = var_plus + b_over_n / static_cast<double>(m);
    result.statistic[j] = std::sqrt(v_hat / w);
  }
  return result;
}

MissingnessParams point_estimate(const PosteriorDraws& draws,
                                 const PatternRegistry& registry,
                                 PointEstimateKind kind) {
  if (draws.chains.empty() || draws.kept_per_chain() == 0)
    throw std::invalid_argument("point_estimate needs retained draws");
  Eigen::VectorXd flat;
  if (kind == PointEstimateKind::Mean) {
    flat = draws.pooled().colwise().mean();
  } else {
    double best = -std::numeric_limits<double>::infinity();
    int best_chain = 0;
    long best_row = 0;
    for (size_t c = 0; c < draws.chains.size(); ++c) {
      const auto& lp = draws.chains[c].log_posterior;
      for (long r = 0; r < lp.size(); ++r) {
        if (lp[r] > best) {
          best = lp[r];
          best_chain = static_cast<int>(c);
          best_row = r;
        }
      }
    }
    flat = draws.chains[best_chain].draws.row(best_row);
  }
  MissingnessParams params;
  int at = 0;
  for (int p : draws.block_sizes) {
    params.blocks.push_back(flat.segment(at, p));
    at += p;
  }
  (void)registry;
  return params;
}

void write_trace_csv(const PosteriorDraws& draws, std::ostream& out) {
  out << "chain,iteration";
  for (const auto& name : draws.coordinate_names()) out << "," << name;
  out << "\n";
  char buf[32];
  for (size_t c = 0; c < draws.chains.size(); ++c) {
    const auto& m = draws.chains[c].draws;
    for (long r = 0; r < m.rows(); ++r) {
      out << c + 1 << "," << draws.n_adapt + r + 1;
      for (long j = 0; j < m.cols(); ++j) {
        std::snprintf(buf, sizeof(buf), "%.17g", m(r, j));
        out << "," << buf;
      }
      out << "\n";
    }
  }
}

}  // namespace nmipw
