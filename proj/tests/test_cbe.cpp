#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "nmipw/cbe.hpp"
#include "nmipw/simulation.hpp"
#include "nmipw/umle.hpp"
#include "oracles.hpp"

using namespace nmipw;

namespace {

std::pair<PatternRegistry, ObservedDataset> small_sim_dataset(long n, std::uint64_t seed) {
  SimConfig config;
  config.n = n;
  Rng rng = Rng::substream(seed, 0);
  const PatternRegistry registry = sim_registry();
  const Eigen::MatrixXd full = generate_full_data(config, rng);
  return {registry, generate_missingness(full, sim_gamma_truth(), registry, rng)};
}

double standard_normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

}  // namespace

TEST_CASE("log_posterior composes likelihood and prior, with the constraint") {
  auto [registry, dataset] = small_sim_dataset(200, 42);
  const PatternDesign design(dataset, registry);
  const PriorSpec prior = PriorSpec::diffuse(design.total_dim());
  const MissingnessParams gamma = sim_gamma_truth();

  const double lp = log_posterior(gamma, design, prior, 1e-8);
  const double expected =
      log_likelihood(gamma, design) + prior.log_density(gamma.flatten());
  CHECK(lp == doctest::Approx(expected).epsilon(1e-12));

  // a violating parameter point maps to the -inf sentinel
  MissingnessParams bad = gamma;
  bad.blocks[0][0] = 8.0;
  bad.blocks[1][0] = 8.0;
  CHECK(log_posterior(bad, design, prior, 1e-8) ==
        -std::numeric_limits<double>::infinity());

  // feasible but within sigma_star of the boundary is also rejected
  CHECK(log_posterior(gamma, design, prior, 0.999999) ==
        -std::numeric_limits<double>::infinity());
}

TEST_CASE("log_posterior with a single complete pattern is the prior alone") {
  VariableSchema schema;
  schema.names = {"a"};
  ObservedDataset dataset;
  dataset.schema = schema;
  dataset.rows.push_back({1, {1.0}});
  const PatternRegistry registry = PatternRegistry::complete_only(1);
  MissingnessParams none;
  PriorSpec prior = PriorSpec::diffuse(0);
  const PatternDesign design(dataset, registry);
  CHECK(log_posterior(none, design, prior, 1e-8) == doctest::Approx(0.0));
}

TEST_CASE("identical seeds reproduce draws bit for bit") {
  auto [registry, dataset] = small_sim_dataset(250, 7);
  const PatternDesign design(dataset, registry);
  const PriorSpec prior = PriorSpec::diffuse(design.total_dim());
  ChainConfig config;
  config.n_chains = 2;
  config.n_iterations = 400;
  config.n_adapt = 200;
  config.seed = 99;
  config.n_threads = 2;
  const PosteriorDraws a = sample_posterior(design, registry, prior, config);
  const PosteriorDraws b = sample_posterior(design, registry, prior, config);
  REQUIRE(a.chains.size() == b.chains.size());
  for (size_t c = 0; c < a.chains.size(); ++c) {
    CHECK(a.chains[c].draws == b.chains[c].draws);
    CHECK(a.chains[c].log_posterior == b.chains[c].log_posterior);
  }
  // a different seed moves the draws
  config.seed = 100;
  const PosteriorDraws other = sample_posterior(design, registry, prior, config);
  CHECK(a.chains[0].draws != other.chains[0].draws);
}

TEST_CASE("every retained draw satisfies the complete-case constraint") {
  auto [registry, dataset] = small_sim_dataset(300, 12);
  const PatternDesign design(dataset, registry);
  const PriorSpec prior = PriorSpec::diffuse(design.total_dim());
  ChainConfig config;
  config.n_chains = 2;
  config.n_iterations = 700;
  config.n_adapt = 300;
  config.seed = 5;
  const double sigma_star = 1e-8;
  config.sigma_star = sigma_star;
  const PosteriorDraws draws = sample_posterior(design, registry, prior, config);

  long audited = 0;
  for (const auto& chain : draws.chains) {
    for (long r = 0; r < chain.draws.rows(); ++r) {
      const MissingnessParams gamma =
          MissingnessParams::unflatten(registry, chain.draws.row(r));
      const Eigen::VectorXd pi1 = complete_case_probabilities(gamma, design);
      CHECK(pi1.minCoeff() > sigma_star);
      ++audited;
    }
  }
  CHECK(audited == 2 * 400);
}

TEST_CASE("acceptance rates sit near the adaptive target") {
  auto [registry, dataset] = small_sim_dataset(400, 21);
  const PatternDesign design(dataset, registry);
  const PriorSpec prior = PriorSpec::diffuse(design.total_dim());
  ChainConfig config;
  config.n_chains = 2;
  config.n_iterations = 3000;
  config.n_adapt = 1500;
  config.seed = 31;
  const PosteriorDraws draws = sample_posterior(design, registry, prior, config);
  for (const auto& chain : draws.chains) {
    CHECK(chain.acceptance_rate.minCoeff() > 0.2);
    CHECK(chain.acceptance_rate.maxCoeff() < 0.7);
  }
}

TEST_CASE("gelman_rubin on exact copies and on split chains") {
  PosteriorDraws draws;
  draws.block_sizes = {2};
  Rng rng(3);
  Eigen::MatrixXd base(1000, 2);
  for (long i = 0; i < base.rows(); ++i) {
    base(i, 0) = rng.normal();
    base(i, 1) = 2.0 + 0.5 * rng.normal();
  }
  ChainDraws chain;
  chain.draws = base;
  chain.log_posterior = Eigen::VectorXd::Zero(base.rows());
  draws.chains = {chain, chain, chain};
  const GelmanRubinResult copies = gelman_rubin(draws);
  CHECK(copies.statistic[0] == doctest::Approx(1.0).epsilon(0.01));
  CHECK(copies.statistic[1] == doctest::Approx(1.0).epsilon(0.01));
  CHECK_FALSE(copies.degenerate[0]);
}

TEST_CASE("gelman_rubin near one for iid chains, large for disjoint chains") {
  Rng rng(17);
  PosteriorDraws draws;
  draws.block_sizes = {2};
  for (int c = 0; c < 3; ++c) {
    ChainDraws chain;
    chain.draws.resize(2000, 2);
    for (long i = 0; i < 2000; ++i) {
      chain.draws(i, 0) = rng.normal();          // same law in every chain
      chain.draws(i, 1) = 6.0 * c + rng.normal();  // disjoint means
    }
    chain.log_posterior = Eigen::VectorXd::Zero(2000);
    draws.chains.push_back(std::move(chain));
  }
  const GelmanRubinResult result = gelman_rubin(draws);
  CHECK(result.statistic[0] == doctest::Approx(1.0).epsilon(0.05));
  CHECK(result.statistic[1] > 3.0);
}

TEST_CASE("gelman_rubin flags degenerate zero-variance chains") {
  PosteriorDraws draws;
  draws.block_sizes = {1};
  for (int c = 0; c < 2; ++c) {
    ChainDraws chain;
    chain.draws = Eigen::MatrixXd::Constant(50, 1, 1.25);
    chain.log_posterior = Eigen::VectorXd::Zero(50);
    draws.chains.push_back(std::move(chain));
  }
  const GelmanRubinResult result = gelman_rubin(draws);
  CHECK(result.statistic[0] == 1.0);
  CHECK(result.degenerate[0]);
}

TEST_CASE("point estimates: single draw, symmetric mean, brute-force mode") {
  const PatternRegistry registry = sim_registry();
  PosteriorDraws draws;
  draws.block_sizes = {4, 3, 3, 3};

  SUBCASE("single retained draw is returned for both kinds") {
    ChainDraws a, b;
    Eigen::RowVectorXd value(13);
    for (int j = 0; j < 13; ++j) value[j] = 0.1 * j;
    a.draws = value;
    a.log_posterior = Eigen::VectorXd::Constant(1, -5.0);
    b.draws = value;
    b.log_posterior = Eigen::VectorXd::Constant(1, -5.0);
    draws.chains = {a, b};
    const MissingnessParams mean = point_estimate(draws, registry, PointEstimateKind::Mean);
    const MissingnessParams mode = point_estimate(draws, registry, PointEstimateKind::Mode);
    CHECK((mean.flatten() - value.transpose()).lpNorm<Eigen::Infinity>() == 0.0);
    CHECK((mode.flatten() - value.transpose()).lpNorm<Eigen::Infinity>() == 0.0);
  }

  SUBCASE("antisymmetric draws average to zero") {
    ChainDraws a, b;
    Eigen::RowVectorXd value = Eigen::RowVectorXd::LinSpaced(13, -1.0, 1.0);
    a.draws = value;
    a.log_posterior = Eigen::VectorXd::Zero(1);
    b.draws = -value;
    b.log_posterior = Eigen::VectorXd::Zero(1);
    draws.chains = {a, b};
    const MissingnessParams mean = point_estimate(draws, registry, PointEstimateKind::Mean);
    CHECK(mean.flatten().lpNorm<Eigen::Infinity>() < 1e-15);
  }

  SUBCASE("mode maximizes the stored log posterior over all retained draws") {
    Rng rng(9);
    for (int c = 0; c < 3; ++c) {
      ChainDraws chain;
      chain.draws.resize(40, 13);
      chain.log_posterior.resize(40);
      for (long i = 0; i < 40; ++i) {
        for (int j = 0; j < 13; ++j) chain.draws(i, j) = rng.normal();
        chain.log_posterior[i] = -rng.uniform01() * 50.0;
      }
      draws.chains.push_back(std::move(chain));
    }
    const MissingnessParams mode = point_estimate(draws, registry, PointEstimateKind::Mode);
    double best = -1e300;
    Eigen::VectorXd best_row;
    for (const auto& chain : draws.chains)
      for (long i = 0; i < chain.draws.rows(); ++i)
        if (chain.log_posterior[i] > best) {
          best = chain.log_posterior[i];
          best_row = chain.draws.row(i);
        }
    CHECK((mode.flatten() - best_row).lpNorm<Eigen::Infinity>() == 0.0);
  }
}

TEST_CASE("flat-likelihood chain reproduces its prior (detailed-balance smoke)") {
  // 1-coefficient target equal to a standard normal prior; the sampled
  // marginal must match it
  FunctionTarget target([](const Eigen::VectorXd& x) { return -0.5 * x[0] * x[0]; },
                        Eigen::VectorXd::Zero(1));
  ChainRunConfig config;
  config.n_iterations = 7000;
  config.n_adapt = 2000;
  Rng rng(2024);
  const ChainDraws chain = run_adaptive_chain(target, config, rng);
  REQUIRE(chain.draws.rows() == 5000);

  std::vector<double> sorted(chain.draws.col(0).data(),
                             chain.draws.col(0).data() + chain.draws.rows());
  std::sort(sorted.begin(), sorted.end());
  double ks = 0.0;
  const double n = static_cast<double>(sorted.size());
  for (size_t i = 0; i < sorted.size(); ++i) {
    const double cdf = standard_normal_cdf(sorted[i]);
    ks = std::max(ks, std::abs(cdf - (i + 1) / n));
    ks = std::max(ks, std::abs(cdf - i / n));
  }
  CHECK(ks < 0.05);
}

TEST_CASE("posterior mean tracks the design truth on one seeded dataset") {
  auto [registry, dataset] = small_sim_dataset(1000, 88);
  const PatternDesign design(dataset, registry);
  const PriorSpec prior = PriorSpec::diffuse(design.total_dim());
  ChainConfig config;
  config.n_chains = 2;
  config.n_iterations = 4000;
  config.n_adapt = 2000;
  config.seed = 17;
  const PosteriorDraws draws = sample_posterior(design, registry, prior, config);
  const Eigen::MatrixXd pooled = draws.pooled();
  const Eigen::VectorXd mean = pooled.colwise().mean();
  const Eigen::VectorXd truth = sim_gamma_truth().flatten();
  int within = 0;
  for (int j = 0; j < 13; ++j) {
    const double sd = std::sqrt(
        (pooled.col(j).array() - mean[j]).square().sum() / (pooled.rows() - 1));
    if (std::abs(mean[j] - truth[j]) < 3.0 * sd) ++within;
  }
  CHECK(within >= 12);  // >= 95% of 13 coefficients
}

TEST_CASE("infeasible starting point is reported as an error") {
  auto [registry, dataset] = small_sim_dataset(150, 3);
  const PatternDesign design(dataset, registry);
  const PriorSpec prior = PriorSpec::diffuse(design.total_dim());
  ChainConfig config;
  config.n_chains = 2;
  config.n_iterations = 100;
  config.n_adapt = 50;
  config.sigma_star = 0.999999;  // impossible to satisfy with real data
  CHECK_THROWS_WITH_AS(sample_posterior(design, registry, prior, config),
                       doctest::Contains("infeasible start"), std::runtime_error);
}

TEST_CASE("trace csv lists chains, iterations and coordinates") {
  auto [registry, dataset] = small_sim_dataset(120, 33);
  const PatternDesign design(dataset, registry);
  const PriorSpec prior = PriorSpec::diffuse(design.total_dim());
  ChainConfig config;
  config.n_chains = 2;
  config.n_iterations = 60;
  config.n_adapt = 30;
  const PosteriorDraws draws = sample_posterior(design, registry, prior, config);
  std::ostringstream out;
  write_trace_csv(draws, out);
  const std::string text = out.str();
  CHECK(text.find("chain,iteration,gamma2_0") == 0);
  CHECK(text.find("gamma5_2") != std::string::npos);
  // header + 2 chains x 30 kept draws
  CHECK(std::count(text.begin(), text.end(), '\n') == 1 + 2 * 30);
}
