#include "doctest.h"
#include "testkit.hpp"

#include "bifdr/error.hpp"
#include "bifdr/random.hpp"
#include "bifdr/solver.hpp"

#include <cmath>
#include <limits>

using namespace bifdr;

namespace {

FitConfig fixed(double lambda, double tol = 1e-7) {
  FitConfig c;
  c.lambda = LambdaFixed{lambda};
  c.tol_kkt = tol;
  return c;
}

double penalized(const LossProblem& prob, const Vector& theta, double lambda) {
  double l1 = 0.0;
  for (Eigen::Index j = 0; j < theta.size(); ++j) {
    if (prob.penalized()[static_cast<std::size_t>(j)]) l1 += std::abs(theta[j]);
  }
  return prob.value(theta) + lambda * l1;
}

// Coordinate descent for 1/(2n) ||y - X t||^2 + lambda ||t||_1, warm started.
Vector cd_lasso(const Matrix& x, const Vector& y, double lambda, Vector t) {
  const double n = static_cast<double>(x.rows());
  Vector r = y - x * t;
  const Vector col_sq = x.colwise().squaredNorm().transpose() / n;
  for (int sweep = 0; sweep < 100000; ++sweep) {
    double change = 0.0;
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      const double rho = x.col(j).dot(r) / n + col_sq[j] * t[j];
      const double next = (rho > lambda ? rho - lambda : rho < -lambda ? rho + lambda : 0.0) / col_sq[j];
      if (next != t[j]) {
        r -= (next - t[j]) * x.col(j);
        change = std::max(change, std::abs(next - t[j]));
        t[j] = next;
      }
    }
    if (change < 1e-13) break;
  }
  return t;
}

}  // namespace

TEST_CASE("soft threshold") {
  CHECK(soft_threshold(3.0, 1.0) == 2.0);
  CHECK(soft_threshold(-0.5, 1.0) == 0.0);
  CHECK(soft_threshold(-3.0, 1.0) == -2.0);
  CHECK(soft_threshold(1.0, 1.0) == 0.0);
}

TEST_CASE("default lambda") {
  CHECK(default_lambda(1000, 200) == doctest::Approx(std::sqrt(std::log(200.0) / 1000.0)).epsilon(1e-15));
  CHECK(default_lambda(1000, 200) == doctest::Approx(0.07279).epsilon(1e-4));
  CHECK(default_lambda(1, std::exp(1.0)) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(default_lambda(500, 30, 2.0) == 2.0 * default_lambda(500, 30, 1.0));
  CHECK_THROWS_AS(default_lambda(100, 10, 0.0), ConfigError);
}

TEST_CASE("lambda rules") {
  CHECK(std::get<LambdaFixed>(parse_lambda_rule("0.25")).value == 0.25);
  CHECK(std::get<LambdaRate>(parse_lambda_rule("rate:2")).c == 2.0);
  CHECK(std::get<LambdaCV>(parse_lambda_rule("cv", 5)).folds == 5);
  CHECK_THROWS_AS(parse_lambda_rule("banana"), ConfigError);
  CHECK_THROWS_AS(parse_lambda_rule("-1"), ConfigError);
  FitConfig bad;
  bad.backtrack_beta = 1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = FitConfig{};
  bad.lambda = LambdaCV{1, 100, 1e-3};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("orthonormal design gives coordinatewise soft thresholding") {
  std::mt19937_64 rng(1);
  Vector c(3);
  c << 3.0, -0.5, -3.0;
  const Dataset data = testkit::orthonormal_instance(rng, 40, c);
  const auto prob = build_loss(registry_get("expected_product"), data, Basis::linear(3), Target::a, link("identity"));
  const auto fit = fit_l1(prob, 1.0, fixed(1.0, 1e-11));
  CHECK(fit.converged);
  CHECK(std::abs(fit.theta[0] - 2.0) <= 1e-8);
  CHECK(std::abs(fit.theta[1]) <= 1e-8);
  CHECK(std::abs(fit.theta[2] + 2.0) <= 1e-8);

  for (int t = 0; t < 20; ++t) {
    const Eigen::Index p = 2 + static_cast<Eigen::Index>(rng() % 8);
    Vector cc(p);
    for (Eigen::Index j = 0; j < p; ++j) cc[j] = testkit::uniform(rng, -3, 3);
    const double lambda = testkit::uniform(rng, 0.05, 2.0);
    const Dataset d = testkit::orthonormal_instance(rng, 30 + rng() % 50, cc);
    const auto pr = build_loss(registry_get("expected_product"), d, Basis::linear(static_cast<std::size_t>(p)),
                               Target::a, link("identity"));
    const auto f = fit_l1(pr, lambda, fixed(lambda, 1e-11));
    for (Eigen::Index j = 0; j < p; ++j) CHECK(std::abs(f.theta[j] - soft_threshold(cc[j], lambda)) <= 1e-8);
  }
}

TEST_CASE("zero is optimal above lambda_max") {
  std::mt19937_64 rng(2);
  const Dataset data = testkit::random_dataset(rng, 100, 6, "mixed");
  for (const auto& ln : link_names()) {
    const auto prob = build_loss(registry_get("mar_mean"), data, Basis::linear(6), Target::b, link(ln));
    const double top = lambda_max(prob);
    CHECK(top == doctest::Approx(prob.grad(Vector::Zero(6)).cwiseAbs().maxCoeff()));
    const auto fit = fit_l1(prob, top * 1.01, fixed(top * 1.01));
    CHECK(fit.theta.isZero(0.0));
    CHECK(kkt_residual(prob, Vector::Zero(6), top) == 0.0);
  }
}

TEST_CASE("fits beat random probes and satisfy KKT") {
  std::mt19937_64 rng(3);
  for (const std::string name : {"mar_mean", "ecc", "expected_product"}) {
    for (const auto& ln : link_names()) {
      for (Target c : {Target::a, Target::b}) {
        const auto data = testkit::compatible_instance(rng, name, c, ln, 50, 8);
        if (!data) continue;
        const auto prob = build_loss(registry_get(name), *data, Basis::linear(8), c, link(ln));
        const double lambda = 0.3 * lambda_max(prob) + 0.01;
        const auto fit = fit_l1(prob, lambda, fixed(lambda));
        INFO(name << " " << ln << " " << to_string(c) << " kkt=" << fit.kkt_residual);
        CHECK(fit.converged);
        CHECK(fit.kkt_residual <= 1e-7);
        CHECK(kkt_residual(prob, fit.theta, lambda) == doctest::Approx(fit.kkt_residual));
        CHECK(fit.objective == doctest::Approx(penalized(prob, fit.theta, lambda)).epsilon(1e-12));
        const double best = penalized(prob, fit.theta, lambda);
        for (int k = 0; k < 200; ++k) {
          Vector probe = fit.theta;
          const double scale = k < 100 ? 0.05 : 1.0;
          for (Eigen::Index j = 0; j < 8; ++j) probe[j] += scale * testkit::gaussian(rng);
          CHECK(best <= penalized(prob, probe, lambda) + 1e-9);
        }

        // Moving an active coordinate by 0.1 breaks stationarity.
        for (Eigen::Index j = 0; j < 8; ++j) {
          if (fit.theta[j] == 0.0) continue;
          Vector moved = fit.theta;
          moved[j] += 0.1;
          CHECK(kkt_residual(prob, moved, lambda) > 1e-7);
          break;
        }
      }
    }
  }
}

TEST_CASE("a loss without a minimiser is reported as not converged") {
  // Count outcomes under the expit link: the objective decreases without bound.
  std::mt19937_64 rng(12);
  const Dataset data = testkit::random_dataset(rng, 50, 8, "count_y");
  const auto prob = build_loss(registry_get("expected_product"), data, Basis::linear(8), Target::a, link("expit"));
  FitConfig cfg = fixed(0.01);
  cfg.max_iter = 500;
  const auto fit = fit_l1(prob, 0.01, cfg);
  CHECK_FALSE(fit.converged);
  CHECK(fit.kkt_residual > cfg.tol_kkt);
}

TEST_CASE("penalized objective never increases across accepted steps") {
  std::mt19937_64 rng(4);
  for (const auto& ln : link_names()) {
    const auto data = testkit::compatible_instance(rng, "ecc", Target::b, ln, 150, 20);
    const auto prob = build_loss(registry_get("ecc"), *data, Basis::linear(20), Target::b, link(ln));
    const double lambda = 0.1 * lambda_max(prob);
    std::vector<double> seen;
    const auto fit = fit_l1(prob, lambda, fixed(lambda), nullptr,
                            [&](int, double obj) { seen.push_back(obj); });
    INFO(ln << " kkt=" << fit.kkt_residual);
    CHECK(fit.converged);
    REQUIRE(!seen.empty());
    for (std::size_t i = 1; i < seen.size(); ++i) {
      CHECK(seen[i] <= seen[i - 1] + 1e-12 * std::max(1.0, std::abs(seen[i - 1])));
    }
  }
}

TEST_CASE("solution is invariant to a common rescaling") {
  std::mt19937_64 rng(5);
  for (const auto& ln : {"identity", "exp", "inv-expit"}) {
    const Dataset data = testkit::random_dataset(rng, 120, 10, "mixed");
    const auto prob = build_loss(registry_get("mar_mean"), data, Basis::linear(10), Target::b, link(ln));
    const double lambda = 0.2 * lambda_max(prob);
    const double kappa = 7.5;
    const auto a = fit_l1(prob, lambda, fixed(lambda, 1e-12));
    const auto b = fit_l1(prob.rescaled(kappa), kappa * lambda, fixed(kappa * lambda, 1e-12));
    CHECK((a.theta - b.theta).cwiseAbs().maxCoeff() <= 1e-8);
  }
}

TEST_CASE("balancing property of the inverse-propensity fit") {
  std::mt19937_64 rng(6);
  for (int rep = 0; rep < 5; ++rep) {
    const Dataset data = testkit::random_dataset(rng, 300, 15, "binary_d");
    const Basis basis = Basis::linear(15);
    const auto prob = build_loss(registry_get("mar_mean"), data, basis, Target::b, link("inv-expit"));
    const double lambda = default_lambda(300, 15);
    const auto fit = fit_l1(prob, lambda, fixed(lambda));
    const Matrix x = basis.design(data);
    const Vector d = data.field("d");
    double worst = 0.0;
    for (Eigen::Index j = 0; j < 15; ++j) {
      double raw = 0.0, weighted = 0.0;
      for (Eigen::Index i = 0; i < x.rows(); ++i) {
        raw += x(i, j);
        weighted += d[i] / testkit::expit(x.row(i).dot(fit.theta)) * x(i, j);
      }
      worst = std::max(worst, std::abs(raw - weighted) / 300.0);
    }
    CHECK(worst <= lambda + 1e-7);
  }
}

TEST_CASE("unpenalized intercept is left free") {
  std::mt19937_64 rng(7);
  const Dataset data = testkit::random_dataset(rng, 200, 4, "binary_d");
  const Basis basis = Basis::linear(4).with_intercept();
  const auto prob = build_loss(registry_get("mar_mean"), data, basis, Target::b, link("inv-expit"));
  const double lambda = 10.0 * lambda_max(prob);
  const auto fit = fit_l1(prob, lambda, fixed(lambda));
  CHECK(fit.converged);
  CHECK(fit.theta.tail(4).isZero(0.0));
  // With only the intercept free, 1/expit(theta_0) is the inverse response rate.
  const double rate = data.field("d").mean();
  CHECK(1.0 / testkit::expit(fit.theta[0]) == doctest::Approx(1.0 / rate).epsilon(1e-6));
}

TEST_CASE("iteration cap returns the best iterate flagged") {
  std::mt19937_64 rng(8);
  const Dataset data = testkit::random_dataset(rng, 100, 10, "mixed");
  const auto prob = build_loss(registry_get("ecc"), data, Basis::linear(10), Target::a, link("exp"));
  FitConfig cfg = fixed(1e-4, 1e-14);
  cfg.max_iter = 3;
  const auto fit = fit_l1(prob, 1e-4, cfg);
  CHECK_FALSE(fit.converged);
  CHECK(fit.theta.allFinite());
  CHECK(fit.objective <= penalized(prob, Vector::Zero(10), 1e-4));
}

TEST_CASE("cross-validation matches a hand-rolled CV lasso") {
  std::mt19937_64 rng(9);
  const auto spec = registry_get("expected_product");
  const Basis basis = Basis::linear(10);
  int agree = 0;
  for (int rep = 0; rep < 5; ++rep) {
    RowMatrix z(100, 10), f(100, 2);
    for (Eigen::Index i = 0; i < 100; ++i) {
      for (Eigen::Index j = 0; j < 10; ++j) z(i, j) = testkit::gaussian(rng);
      f(i, 0) = z(i, 0) - 0.5 * z(i, 3) + testkit::gaussian(rng);
      f(i, 1) = 1.0;
    }
    const Dataset data({"y", "d"}, f, z);
    const ProblemBuilder build = [&](const Dataset& d) {
      return build_loss(spec, d, basis, Target::a, link("identity"));
    };
    FitConfig cfg;
    cfg.lambda = LambdaCV{5, 30, 1e-2};
    cfg.tol_kkt = 1e-10;
    cfg.seed = 100 + static_cast<std::uint64_t>(rep);
    const CvPath path = cv_lambda_path(build, data, cfg);

    // Oracle: same folds and grid, squared error of a coordinate-descent lasso.
    const Matrix x = basis.design(data);
    const Vector y = data.field("y");
    const double top = (x.transpose() * y).cwiseAbs().maxCoeff() / 100.0;
    const auto folds = assign_folds(100, 5, cfg.seed);
    std::vector<double> sse(30, 0.0);
    for (int k = 0; k < 5; ++k) {
      std::vector<Eigen::Index> tr, te;
      for (Eigen::Index i = 0; i < 100; ++i) (folds[static_cast<std::size_t>(i)] == k ? te : tr).push_back(i);
      const Matrix xtr = x(tr, Eigen::all), xte = x(te, Eigen::all);
      const Vector ytr = y(tr), yte = y(te);
      Vector t = Vector::Zero(10);
      for (int l = 0; l < 30; ++l) {
        const double lam = top * std::pow(1e-2, l / 29.0);
        CHECK(path.lambdas[static_cast<std::size_t>(l)] == doctest::Approx(lam).epsilon(1e-12));
        t = cd_lasso(xtr, ytr, lam, t);
        sse[static_cast<std::size_t>(l)] += (yte - xte * t).squaredNorm();
      }
    }
    std::size_t best = 0;
    for (std::size_t l = 1; l < 30; ++l) if (sse[l] < sse[best]) best = l;
    agree += best == path.best;
    CHECK(best == path.best);
  }
  CHECK(agree == 5);
}

TEST_CASE("pure noise usually selects the largest lambda") {
  std::mt19937_64 rng(10);
  const auto spec = registry_get("expected_product");
  const Basis basis = Basis::linear(10);
  int largest = 0;
  for (int rep = 0; rep < 50; ++rep) {
    RowMatrix z(100, 10), f(100, 2);
    for (Eigen::Index i = 0; i < 100; ++i) {
      for (Eigen::Index j = 0; j < 10; ++j) z(i, j) = testkit::gaussian(rng);
      f(i, 0) = testkit::gaussian(rng);
      f(i, 1) = 1.0;
    }
    const Dataset data({"y", "d"}, f, z);
    FitConfig cfg;
    cfg.lambda = LambdaCV{10, 100, 1e-3};
    cfg.seed = static_cast<std::uint64_t>(rep);
    const auto path = cv_lambda_path(
        [&](const Dataset& d) { return build_loss(spec, d, basis, Target::a, link("identity")); }, data, cfg);
    largest += path.best == 0;
  }
  // Exact minimisation of the CV criterion picks the very first grid point in
  // roughly two thirds of pure-noise samples (the hand-rolled CV lasso above
  // agrees pick for pick), so the check is that it is the majority pick.
  MESSAGE("largest lambda selected in " << largest << " of 50");
  CHECK(largest >= 25);
}

TEST_CASE("cross-validation edge cases") {
  std::mt19937_64 rng(11);
  const Dataset data = testkit::random_dataset(rng, 60, 5, "mixed");
  const auto spec = registry_get("ecc");
  const ProblemBuilder build = [&](const Dataset& d) {
    return build_loss(spec, d, Basis::linear(5), Target::a, link("identity"));
  };
  FitConfig one;
  one.lambda = LambdaCV{5, 1, 1e-3};
  CHECK(cv_lambda(build, data, one) == doctest::Approx(lambda_max(build(data)) * 1e-3).epsilon(1e-15));

  FitConfig too_many;
  too_many.lambda = LambdaCV{61, 10, 1e-3};
  CHECK_THROWS_AS(cv_lambda(build, data, too_many), ConfigError);

  // Thread count does not change the selected lambda.
  FitConfig a;
  a.lambda = LambdaCV{5, 40, 1e-3};
  a.seed = 3;
  FitConfig b = a;
  b.threads = 4;
  const auto pa = cv_lambda_path(build, data, a), pb = cv_lambda_path(build, data, b);
  CHECK(pa.criterion == pb.criterion);
  CHECK(pa.lambda == pb.lambda);

  // A builder that always fails leaves no usable folds.
  int calls = 0;
  const ProblemBuilder flaky = [&](const Dataset& d) {
    if (calls++ > 0) throw DataError("no");
    return build(d);
  };
  CHECK_THROWS_AS(cv_lambda(flaky, data, a), SolverError);

  CHECK_THROWS_AS(fit_l1(build(data), FitConfig{}), ConfigError);
  FitConfig rate;
  rate.lambda = LambdaRate{2.0};
  CHECK(fit_l1(build(data), rate).lambda_used == doctest::Approx(default_lambda(60, 5, 2.0)));
}
