#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "nmipw/ipw.hpp"
#include "nmipw/simulation.hpp"
#include "nmipw/umle.hpp"
#include "oracles.hpp"

using namespace nmipw;

namespace {

// evaluate self-consistency of the shipped logistic score instance
TEST_CASE("logistic score jacobian matches finite differences of evaluate") {
  const LogisticScoreFunction ef(0, {1, 2});
  Rng rng(3);
  for (int trial = 0; trial < 25; ++trial) {
    Eigen::VectorXd row(3);
    row << (rng.bernoulli(0.5) ? 1.0 : 0.0), rng.normal(), rng.uniform01();
    Eigen::VectorXd beta(3);
    beta << rng.normal(), rng.normal(), rng.normal();
    const Eigen::MatrixXd analytic = ef.jacobian(row, beta);
    const double h = 1e-6;
    for (int j = 0; j < 3; ++j) {
      Eigen::VectorXd hi = beta, lo = beta;
      hi[j] += h;
      lo[j] -= h;
      const Eigen::VectorXd col = (ef.evaluate(row, hi) - ef.evaluate(row, lo)) / (2 * h);
      CHECK((analytic.col(j) - col).lpNorm<Eigen::Infinity>() <
            1e-5 * (1.0 + col.lpNorm<Eigen::Infinity>()));
    }
  }
}

ObservedDataset complete_dataset(const Eigen::MatrixXd& rows) {
  ObservedDataset dataset;
  dataset.schema.names.resize(rows.cols());
  for (long v = 0; v < rows.cols(); ++v)
    dataset.schema.names[v] = "v" + std::to_string(v);
  for (long i = 0; i < rows.rows(); ++i) {
    DataRow row;
    row.pattern = 1;
    for (long v = 0; v < rows.cols(); ++v) row.values.push_back(rows(i, v));
    dataset.rows.push_back(std::move(row));
  }
  return dataset;
}

Eigen::MatrixXd random_logistic_rows(Rng& rng, long n, Eigen::Vector3d beta) {
  Eigen::MatrixXd rows(n, 3);
  for (long i = 0; i < n; ++i) {
    const double a = rng.normal();
    const double c = rng.uniform01();
    const double p = oracles::expit(beta[0] + beta[1] * a + beta[2] * c);
    rows(i, 0) = rng.bernoulli(p) ? 1.0 : 0.0;
    rows(i, 1) = a;
    rows(i, 2) = c;
  }
  return rows;
}

}  // namespace

TEST_CASE("with a single complete pattern the IPW solution is the plain fit") {
  Rng rng(11);
  const Eigen::MatrixXd rows = random_logistic_rows(rng, 300, {-0.2, 0.6, -0.4});
  const ObservedDataset dataset = complete_dataset(rows);
  const PatternRegistry registry = PatternRegistry::complete_only(3);
  const LogisticScoreFunction ef(0, {1, 2});
  MissingnessParams empty;

  const FitReport ipw = solve_ipw(dataset, registry, empty, ef, Eigen::VectorXd::Zero(3));
  REQUIRE(ipw.converged);
  CHECK(ipw.residual_inf < 1e-8);
  const FitReport mle = fit_full_mle(rows, ef, Eigen::VectorXd::Zero(3));
  CHECK((ipw.beta - mle.beta).lpNorm<Eigen::Infinity>() < 1e-7);

  Eigen::MatrixXd design(rows.rows(), 3);
  design.col(0).setOnes();
  design.col(1) = rows.col(1);
  design.col(2) = rows.col(2);
  const Eigen::VectorXd irls = oracles::irls_logistic(design, rows.col(0));
  CHECK((ipw.beta - irls).lpNorm<Eigen::Infinity>() < 1e-6);
}

TEST_CASE("population IPW moment vanishes exactly on the discrete toy law") {
  const oracles::DiscreteToyLaw law;
  const Eigen::Vector2d beta = law.beta_truth();
  // enumerate (y, a): E[ 1(R=1)/pi_1 M ] = sum p(y,a) M(y,a) independently of pi
  Eigen::Vector2d ipw_moment = Eigen::Vector2d::Zero();
  Eigen::Vector2d cc_moment = Eigen::Vector2d::Zero();
  for (int y = 0; y < 2; ++y)
    for (int a = 0; a < 2; ++a) {
      const double resid = y - oracles::expit(beta[0] + beta[1] * a);
      const Eigen::Vector2d m{resid, resid * a};
      ipw_moment += law.mass(y, a) * law.pi1(y, a) / law.pi1(y, a) * m;
      cc_moment += law.mass(y, a) * law.pi1(y, a) * m;
    }
  CHECK(ipw_moment.lpNorm<Eigen::Infinity>() < 1e-14);
  // outcome-dependent missingness biases the unweighted complete-case moment
  CHECK(cc_moment.lpNorm<Eigen::Infinity>() > 0.01);
}

TEST_CASE("solve_ipw rejects non-positive weights") {
  Rng rng(13);
  const Eigen::MatrixXd rows = random_logistic_rows(rng, 40, {0.0, 0.3, 0.3});
  ObservedDataset dataset = complete_dataset(rows);
  std::vector<Pattern> patterns;
  patterns.push_back({1, {0, 1, 2}});
  patterns.push_back({2, {0, 1}});
  patterns.push_back({3, {1, 2}});
  const PatternRegistry registry(3, patterns);
  // two pattern probabilities near one make pi_1 negative
  MissingnessParams bad;
  bad.blocks.push_back((Eigen::VectorXd(3) << 10.0, 0.0, 0.0).finished());
  bad.blocks.push_back((Eigen::VectorXd(3) << 10.0, 0.0, 0.0).finished());
  const LogisticScoreFunction ef(0, {1, 2});
  CHECK_THROWS_WITH_AS(
      solve_ipw(dataset, registry, bad, ef, Eigen::VectorXd::Zero(3)),
      doctest::Contains("invalid weights"), std::runtime_error);
}

TEST_CASE("sandwich variance with one pattern matches the textbook oracle") {
  Rng rng(17);
  const Eigen::MatrixXd rows = random_logistic_rows(rng, 250, {0.1, -0.5, 0.8});
  const ObservedDataset dataset = complete_dataset(rows);
  const PatternRegistry registry = PatternRegistry::complete_only(3);
  const LogisticScoreFunction ef(0, {1, 2});
  MissingnessParams empty;
  const FitReport fit = solve_ipw(dataset, registry, empty, ef, Eigen::VectorXd::Zero(3));

  const Eigen::MatrixXd sandwich =
      variance_sandwich(dataset, registry, empty, ef, fit.beta);
  Eigen::MatrixXd design(rows.rows(), 3);
  design.col(0).setOnes();
  design.col(1) = rows.col(1);
  design.col(2) = rows.col(2);
  const Eigen::MatrixXd oracle = oracles::glm_sandwich(design, rows.col(0), fit.beta);
  CHECK((sandwich - oracle).lpNorm<Eigen::Infinity>() <
        1e-8 * (1.0 + oracle.lpNorm<Eigen::Infinity>()));

  // with no missingness-model score the corrected form reduces to the sandwich
  const Eigen::MatrixXd corrected =
      variance_corrected(dataset, registry, empty, ef, fit.beta);
  CHECK((sandwich - corrected).lpNorm<Eigen::Infinity>() < 1e-12);
}

TEST_CASE("corrected variance is dominated by the sandwich in PSD order") {
  SimConfig config;
  config.n = 600;
  const PatternRegistry registry = sim_registry();
  const MissingnessParams truth = sim_gamma_truth();
  const LogisticScoreFunction ef(0, {1, 2, 3});
  for (int rep = 0; rep < 5; ++rep) {
    Rng rng = Rng::substream(99, rep);
    const Eigen::MatrixXd full = generate_full_data(config, rng);
    const ObservedDataset dataset = generate_missingness(full, truth, registry, rng);
    const PatternDesign design(dataset, registry);
    const UmleReport umle = fit_umle(design, registry, frequency_init(design));
    if (!umle.converged) continue;
    const FitReport ipw =
        solve_ipw(dataset, registry, umle.params, ef, Eigen::VectorXd::Zero(4));
    const Eigen::MatrixXd corrected =
        variance_corrected(dataset, registry, umle.params, ef, ipw.beta);
    const Eigen::MatrixXd sandwich =
        variance_sandwich(dataset, registry, umle.params, ef, ipw.beta);
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eigs(sandwich - corrected);
    CHECK(eigs.eigenvalues().minCoeff() > -1e-10);
    // both symmetric PSD
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ec(corrected);
    CHECK(ec.eigenvalues().minCoeff() > -1e-10);
    CHECK((corrected - corrected.transpose()).lpNorm<Eigen::Infinity>() < 1e-14);
  }
}

TEST_CASE("cbe correction vanishes at the exact UMLE optimum") {
  Rng rng(23);
  auto [registry, dataset] = oracles::random_two_pattern(rng, 400);
  const PatternDesign design(dataset, registry);
  const UmleReport umle = fit_umle(design, registry, frequency_init(design));
  REQUIRE(umle.converged);
  const LogisticScoreFunction ef(0, {1});
  const FitReport ipw =
      solve_ipw(dataset, registry, umle.params, ef, Eigen::VectorXd::Zero(2));
  const Eigen::MatrixXd corrected =
      variance_corrected(dataset, registry, umle.params, ef, ipw.beta);
  const Eigen::MatrixXd cbe =
      variance_cbe_corrected(dataset, registry, umle.params, ef, ipw.beta);
  CHECK((corrected - cbe).lpNorm<Eigen::Infinity>() < 1e-8);
}

TEST_CASE("corrected variance equals a hand-computed dense formula") {
  // three complete rows, two pattern-2 rows; everything small enough to
  // recompute the estimator from its definition with dense matrices
  VariableSchema schema;
  schema.names = {"Y", "A"};
  std::vector<Pattern> patterns;
  patterns.push_back({1, {0, 1}});
  patterns.push_back({2, {1}});
  const PatternRegistry registry(2, patterns);
  ObservedDataset dataset;
  dataset.schema = schema;
  dataset.rows.push_back({1, {1.0, 0.2}});
  dataset.rows.push_back({1, {0.0, 0.8}});
  dataset.rows.push_back({1, {1.0, 0.5}});
  dataset.rows.push_back({2, {0.4}});
  dataset.rows.push_back({2, {0.9}});
  MissingnessParams params;
  params.blocks.push_back((Eigen::VectorXd(2) << -0.7, 0.4).finished());
  const LogisticScoreFunction ef(0, {1});
  const Eigen::Vector2d beta{0.3, -0.5};

  const long n = 5;
  const int d = 2;  // gamma dimension
  Eigen::MatrixXd g_rows = Eigen::MatrixXd::Zero(n, 2);
  Eigen::MatrixXd s_rows = Eigen::MatrixXd::Zero(n, d);
  Eigen::MatrixXd bread = Eigen::MatrixXd::Zero(2, 2);
  for (long i = 0; i < n; ++i) {
    const auto& row = dataset.rows[i];
    if (row.pattern == 1) {
      const double y = row.values[0], a = row.values[1];
      const double pi2 = oracles::expit(-0.7 + 0.4 * a);
      const double pi1 = 1.0 - pi2;
      const double resid = y - oracles::expit(beta[0] + beta[1] * a);
      g_rows(i, 0) = resid / pi1;
      g_rows(i, 1) = resid * a / pi1;
      const double p = oracles::expit(beta[0] + beta[1] * a);
      Eigen::Vector2d x{1.0, a};
      bread += -p * (1.0 - p) / pi1 * x * x.transpose();
      s_rows(i, 0) = -pi2 * (1.0 - pi2) / pi1;
      s_rows(i, 1) = -pi2 * (1.0 - pi2) / pi1 * a;
    } else {
      const double a = row.values[0];
      const double pi2 = oracles::expit(-0.7 + 0.4 * a);
      s_rows(i, 0) = 1.0 - pi2;
      s_rows(i, 1) = (1.0 - pi2) * a;
    }
  }
  bread /= n;
  const Eigen::MatrixXd cross = g_rows.transpose() * s_rows / n;
  const Eigen::MatrixXd gram = s_rows.transpose() * s_rows / n;
  const Eigen::MatrixXd resid_rows =
      g_rows - s_rows * (gram.inverse() * cross.transpose());
  const Eigen::MatrixXd meat = resid_rows.transpose() * resid_rows / n;
  const Eigen::MatrixXd expected =
      bread.inverse() * meat * bread.inverse().transpose() / n;

  const Eigen::MatrixXd actual =
      variance_corrected(dataset, registry, params, ef, beta);
  CHECK((actual - expected).lpNorm<Eigen::Infinity>() <
        1e-10 * (1.0 + expected.lpNorm<Eigen::Infinity>()));

  // re-centered form, same dense reconstruction
  const Eigen::RowVector2d w_mean =
      (s_rows.colwise().mean()) * (gram.inverse() * cross.transpose());
  const Eigen::MatrixXd centered = resid_rows.rowwise() + w_mean;
  const Eigen::MatrixXd meat_cbe = centered.transpose() * centered / n;
  const Eigen::MatrixXd expected_cbe =
      bread.inverse() * meat_cbe * bread.inverse().transpose() / n;
  const Eigen::MatrixXd actual_cbe =
      variance_cbe_corrected(dataset, registry, params, ef, beta);
  CHECK((actual_cbe - expected_cbe).lpNorm<Eigen::Infinity>() <
        1e-10 * (1.0 + expected_cbe.lpNorm<Eigen::Infinity>()));
}

namespace {

// constant-in-data moment: M(L; beta) = beta - c, so Gamma has zero variance
class ShiftFunction : public EstimatingFunction {
 public:
  explicit ShiftFunction(double c) : c_(c) {}
  int dim() const override { return 1; }
  Eigen::VectorXd evaluate(const Eigen::VectorXd&, const Eigen::VectorXd& beta) const override {
    return Eigen::VectorXd::Constant(1, beta[0] - c_);
  }
  Eigen::MatrixXd jacobian(const Eigen::VectorXd&, const Eigen::VectorXd&) const override {
    return Eigen::MatrixXd::Identity(1, 1);
  }

 private:
  double c_;
};

}  // namespace

namespace {

// moment with an identically singular Jacobian
class FlatFunction : public EstimatingFunction {
 public:
  int dim() const override { return 1; }
  Eigen::VectorXd evaluate(const Eigen::VectorXd&, const Eigen::VectorXd&) const override {
    return Eigen::VectorXd::Constant(1, 1.0);
  }
  Eigen::MatrixXd jacobian(const Eigen::VectorXd&, const Eigen::VectorXd&) const override {
    return Eigen::MatrixXd::Zero(1, 1);
  }
};

}  // namespace

TEST_CASE("a singular moment Jacobian raises with condition diagnostics") {
  Rng rng(29);
  const Eigen::MatrixXd rows = random_logistic_rows(rng, 20, {0.0, 0.2, 0.2});
  const FlatFunction ef;
  CHECK_THROWS_WITH_AS(
      solve_weighted_moment(rows, Eigen::VectorXd::Ones(rows.rows()), ef,
                            Eigen::VectorXd::Zero(1)),
      doctest::Contains("singular"), std::runtime_error);
}

TEST_CASE("zero-variance moment yields a zero sandwich") {
  Rng rng(31);
  const Eigen::MatrixXd rows = random_logistic_rows(rng, 50, {0.0, 0.2, 0.2});
  const ObservedDataset dataset = complete_dataset(rows);
  const PatternRegistry registry = PatternRegistry::complete_only(3);
  MissingnessParams empty;
  const ShiftFunction ef(1.5);
  const FitReport fit = solve_ipw(dataset, registry, empty, ef,
                                  Eigen::VectorXd::Zero(1));
  CHECK(fit.beta[0] == doctest::Approx(1.5).epsilon(1e-10));
  const Eigen::MatrixXd sandwich = variance_sandwich(dataset, registry, empty, ef, fit.beta);
  CHECK(sandwich.lpNorm<Eigen::Infinity>() < 1e-16);
}

TEST_CASE("complete separation is flagged as non-convergence") {
  Eigen::MatrixXd rows(8, 2);
  for (int i = 0; i < 8; ++i) {
    rows(i, 1) = i < 4 ? -1.0 - 0.2 * i : 1.0 + 0.2 * i;
    rows(i, 0) = i < 4 ? 0.0 : 1.0;
  }
  const LogisticScoreFunction ef(0, {1});
  const FitReport fit = fit_full_mle(rows, ef, Eigen::VectorXd::Zero(2));
  CHECK_FALSE(fit.converged);
  REQUIRE(!fit.warnings.empty());
}

TEST_CASE("complete-case fit ignores incomplete rows") {
  Rng rng(41);
  auto [registry, dataset] = oracles::random_two_pattern(rng, 500);
  const LogisticScoreFunction ef(0, {1});
  const FitReport cc = fit_complete_case(dataset, registry, ef, Eigen::VectorXd::Zero(2));
  REQUIRE(cc.converged);

  Eigen::MatrixXd design(0, 2);
  Eigen::VectorXd y(0);
  for (const auto& row : dataset.rows) {
    if (row.pattern != 1) continue;
    design.conservativeResize(design.rows() + 1, 2);
    y.conservativeResize(y.size() + 1);
    design(design.rows() - 1, 0) = 1.0;
    design(design.rows() - 1, 1) = row.values[1];
    y[y.size() - 1] = row.values[0];
  }
  const Eigen::VectorXd irls = oracles::irls_logistic(design, y);
  CHECK((cc.beta - irls).lpNorm<Eigen::Infinity>() < 1e-6);
}

TEST_CASE("no-missingness complete-case fit equals the full MLE") {
  Rng rng(43);
  const Eigen::MatrixXd rows = random_logistic_rows(rng, 200, {0.2, 0.4, -0.3});
  const ObservedDataset dataset = complete_dataset(rows);
  const PatternRegistry registry = PatternRegistry::complete_only(3);
  const LogisticScoreFunction ef(0, {1, 2});
  const FitReport cc = fit_complete_case(dataset, registry, ef, Eigen::VectorXd::Zero(3));
  const FitReport mle = fit_full_mle(rows, ef, Eigen::VectorXd::Zero(3));
  CHECK((cc.beta - mle.beta).lpNorm<Eigen::Infinity>() < 1e-9);
  CHECK((cc.vcov - mle.vcov).lpNorm<Eigen::Infinity>() < 1e-12);
}

TEST_CASE("ipw with true weights is nearly unbiased over light replication") {
  SimConfig config;
  config.n = 3000;
  const PatternRegistry registry = sim_registry();
  const MissingnessParams truth = sim_gamma_truth();
  const LogisticScoreFunction ef(0, {1, 2, 3});
  double mean_b1 = 0.0;
  const int reps = 60;
  for (int rep = 0; rep < reps; ++rep) {
    Rng rng = Rng::substream(424200, rep);
    const Eigen::MatrixXd full = generate_full_data(config, rng);
    const ObservedDataset dataset = generate_missingness(full, truth, registry, rng);
    const FitReport ipw =
        solve_ipw(dataset, registry, truth, ef, Eigen::VectorXd::Zero(4));
    mean_b1 += ipw.beta[1];
  }
  mean_b1 /= reps;
  CHECK(std::abs(mean_b1 - (-0.4)) < 0.1);  // > 3 x (MC SE at 60 reps, n=3000)
}

TEST_CASE("fit report json includes estimates, CIs and odds ratios") {
  Rng rng(47);
  const Eigen::MatrixXd rows = random_logistic_rows(rng, 150, {0.0, 0.5, 0.5});
  const FitReport fit = fit_full_mle(rows, LogisticScoreFunction(0, {1, 2}),
                                     Eigen::VectorXd::Zero(3));
  const std::string json = fit.to_json({"(Intercept)", "A", "C"}, true);
  CHECK(json.find("\"beta\"") != std::string::npos);
  CHECK(json.find("\"se\"") != std::string::npos);
  CHECK(json.find("\"ci95\"") != std::string::npos);
  CHECK(json.find("\"odds_ratio\"") != std::string::npos);
  CHECK(json.find("\"variance_kind\":\"sandwich\"") != std::string::npos);
}
