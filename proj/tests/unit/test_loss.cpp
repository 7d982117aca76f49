#include "doctest.h"
#include "testkit.hpp"

#include "bifdr/error.hpp"
#include "bifdr/loss.hpp"

#include <cmath>
#include <map>

using namespace bifdr;

namespace {

Vector random_theta(std::mt19937_64& rng, Eigen::Index p, double scale) {
  Vector t(p);
  for (Eigen::Index j = 0; j < p; ++j) t[j] = scale * testkit::gaussian(rng);
  return t;
}

double max_rel_grad_error(const LossProblem& prob, const Vector& theta) {
  const Vector g = prob.grad(theta);
  const Vector fd = testkit::fd_gradient([&](const Vector& t) { return prob.value(t); }, theta, 1e-5);
  return (g - fd).cwiseAbs().maxCoeff() / std::max(g.cwiseAbs().maxCoeff(), 1e-8);
}

}  // namespace

TEST_CASE("mar_mean a-loss is weighted least squares") {
  std::mt19937_64 rng(1);
  const Dataset data = testkit::random_dataset(rng, 120, 4, "binary_d");
  const Basis basis = Basis::linear(4);
  const auto spec = registry_get("mar_mean");
  const auto prob = build_loss(spec, data, basis, Target::a, link("identity"));
  const Matrix x = basis.design(data);
  const Vector y = data.field("y"), d = data.field("d");
  const auto n = static_cast<double>(data.rows());

  for (int t = 0; t < 5; ++t) {
    const Vector theta = random_theta(rng, 4, 1.0);
    const Vector r = y - x * theta;
    // P_n[D (Y - u)^2 / 2] - P_n[D Y^2 / 2]
    const double wls = 0.5 * (d.array() * r.array().square()).sum() / n -
                       0.5 * (d.array() * y.array().square()).sum() / n;
    CHECK(prob.value(theta) == doctest::Approx(wls).epsilon(1e-12));
    const Vector expect = -(x.transpose() * (d.array() * r.array()).matrix()) / n;
    CHECK((prob.grad(theta) - expect).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("identity link at zero") {
  std::mt19937_64 rng(2);
  const Dataset data = testkit::random_dataset(rng, 50, 3, "binary_d");
  for (const auto* name : {"mar_mean", "ecc", "expected_product"}) {
    for (Target c : {Target::a, Target::b}) {
      const auto prob = build_loss(registry_get(name), data, Basis::linear(3), c, link("identity"));
      const Vector zero = Vector::Zero(3);
      CHECK(prob.raw_value(zero) == 0.0);
      CHECK((prob.raw_grad(zero) - prob.m_vector()).cwiseAbs().maxCoeff() <= 1e-15);
    }
  }
}

TEST_CASE("mar_mean b-loss with the inverse expit link") {
  std::mt19937_64 rng(3);
  const Dataset data = testkit::random_dataset(rng, 200, 5, "binary_d");
  const Basis basis = Basis::linear(5);
  const auto prob = build_loss(registry_get("mar_mean"), data, basis, Target::b, link("inv-expit"));
  const Matrix x = basis.design(data);
  const Vector d = data.field("d");
  const auto n = static_cast<double>(data.rows());
  for (int t = 0; t < 10; ++t) {
    const Vector theta = random_theta(rng, 5, 0.3);
    Vector expect = Vector::Zero(5);
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const double u = x.row(i).dot(theta);
      expect += (1.0 - d[i] / testkit::expit(u)) * x.row(i).transpose();
    }
    expect /= n;
    CHECK((prob.raw_grad(theta) - expect).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK(max_rel_grad_error(prob, theta) <= 1e-6);
  }
}

TEST_CASE("gradient matches finite differences for every link, spec and target") {
  std::mt19937_64 rng(4);
  for (const auto* name : {"mar_mean", "ecc", "expected_product", "mar_nonrespondents"}) {
    const auto spec = registry_get(name);
    const Dataset data = testkit::random_dataset(rng, 80, 4, "count_y");
    for (const auto& ln : link_names()) {
      for (Target c : {Target::a, Target::b}) {
        auto weight = [](std::span<const double> z) { return 0.5 + testkit::expit(z[0]); };
        const auto prob = build_loss(spec, data, Basis::linear(4), c, link(ln), weight);
        for (int t = 0; t < 10; ++t) {
          CHECK(max_rel_grad_error(prob, random_theta(rng, 4, 0.4)) <= 1e-6);
        }
      }
    }
  }
}

TEST_CASE("oriented objective is convex") {
  std::mt19937_64 rng(5);
  const Dataset data = testkit::random_dataset(rng, 60, 3, "count_y");
  for (const auto* name : {"mar_mean", "ecc", "expected_product"}) {
    for (const auto& ln : link_names()) {
      for (Target c : {Target::a, Target::b}) {
        const auto prob = build_loss(registry_get(name), data, Basis::linear(3), c, link(ln));
        for (int t = 0; t < 20; ++t) {
          const Vector t1 = random_theta(rng, 3, 1.0), t2 = random_theta(rng, 3, 1.0);
          const double mid = prob.value(0.5 * (t1 + t2));
          CHECK(mid <= 0.5 * prob.value(t1) + 0.5 * prob.value(t2) + 1e-10);
        }
      }
    }
  }
}

TEST_CASE("weights enter both terms") {
  std::mt19937_64 rng(6);
  const Dataset data = testkit::random_dataset(rng, 40, 2, "count_y");
  auto w = [](std::span<const double> z) { return 1.0 + z[1] * z[1]; };
  const auto prob = build_loss(registry_get("expected_product"), data, Basis::linear(2), Target::a,
                               link("exp"), w);
  Vector m = Vector::Zero(2);
  for (std::size_t i = 0; i < data.rows(); ++i) {
    const auto z = data.z(i);
    for (int j = 0; j < 2; ++j) m[j] += data.value(i, "y") * w(z) * z[static_cast<std::size_t>(j)];
  }
  m /= static_cast<double>(data.rows());
  CHECK((prob.m_vector() - m).cwiseAbs().maxCoeff() <= 1e-14);
  CHECK(prob.weights()[0] == w(data.z(0)));
}

TEST_CASE("input validation") {
  std::mt19937_64 rng(7);
  const Dataset data = testkit::random_dataset(rng, 30, 2, "gaussian");  // d takes both signs
  CHECK_THROWS_AS(build_loss(registry_get("mar_mean"), data, Basis::linear(2), Target::a, link("identity")),
                  DataError);
  const Dataset ok = testkit::random_dataset(rng, 30, 2, "binary_d");
  const auto spec = registry_get("ecc");
  CHECK_THROWS_AS(build_loss(spec, ok, Basis::linear(2), Target::a, link("identity"),
                             [](std::span<const double>) { return 0.0; }),
                  DataError);
  CHECK_THROWS_AS(build_loss(spec, ok, Basis::linear(2), Target::a, link("identity"),
                             [](std::span<const double> z) { return z[0]; }),
                  DataError);
  CHECK_THROWS_AS(build_loss(spec, ok, Basis::linear(3), Target::a, link("identity")), DataError);
}

TEST_CASE("rescaling multiplies value and gradient") {
  std::mt19937_64 rng(8);
  const Dataset data = testkit::random_dataset(rng, 50, 3, "binary_d");
  const auto prob = build_loss(registry_get("mar_mean"), data, Basis::linear(3), Target::b, link("inv-expit"));
  const auto scaled = prob.rescaled(3.5);
  const Vector theta = random_theta(rng, 3, 0.5);
  CHECK(scaled.value(theta) == doctest::Approx(3.5 * prob.value(theta)).epsilon(1e-13));
  CHECK((scaled.grad(theta) - 3.5 * prob.grad(theta)).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("restricted problem agrees with the full one on its coordinates") {
  std::mt19937_64 rng(9);
  const Dataset data = testkit::random_dataset(rng, 50, 5, "count_y");
  const auto prob = build_loss(registry_get("expected_product"), data, Basis::linear(5), Target::b, link("exp"));
  const std::vector<Eigen::Index> cols{1, 3, 4};
  const auto sub = prob.restricted(cols);
  Vector small = random_theta(rng, 3, 0.3);
  Vector full = Vector::Zero(5);
  for (std::size_t k = 0; k < cols.size(); ++k) full[cols[k]] = small[static_cast<Eigen::Index>(k)];
  CHECK(sub.value(small) == doctest::Approx(prob.value(full)).epsilon(1e-14));
  const Vector gf = prob.grad(full), gs = sub.grad(small);
  for (std::size_t k = 0; k < cols.size(); ++k) {
    CHECK(gs[static_cast<Eigen::Index>(k)] == doctest::Approx(gf[cols[k]]).epsilon(1e-14));
  }
}

TEST_CASE("curvature estimate bounds the quadratic Hessian") {
  std::mt19937_64 rng(10);
  const Dataset data = testkit::random_dataset(rng, 100, 4, "binary_d");
  const Basis basis = Basis::linear(4);
  const auto prob = build_loss(registry_get("expected_product"), data, basis, Target::a, link("identity"));
  const Matrix x = basis.design(data);
  const Matrix h = x.transpose() * x / 100.0;
  const double top = Eigen::SelfAdjointEigenSolver<Matrix>(h).eigenvalues().maxCoeff();
  CHECK(prob.curvature_estimate(Vector::Zero(4)) == doctest::Approx(top).epsilon(0.05));
}

TEST_CASE("population gradient vanishes at the truth") {
  // Rows replicated by integer counts, so the sample mean is the exact
  // expectation under the table. One-hot features make the truth exactly
  // representable: theta_k = link^{-1}(truth at z_k).
  std::mt19937_64 rng(11);
  const auto spec = registry_get("mar_mean");
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t points = 4;
    std::vector<double> ys, ds, zs;
    for (std::size_t k = 0; k < points; ++k) {
      for (int r = 0; r < 3; ++r) {
        const int count = 1 + static_cast<int>(rng() % 4);
        const double y = std::round(testkit::uniform(rng, -3, 3) * 8) / 8;
        const double d = r == 0 ? 1.0 : (r == 1 ? 0.0 : testkit::coin(rng, 0.5));
        for (int c = 0; c < count; ++c) {
          ys.push_back(y);
          ds.push_back(d);
          zs.push_back(static_cast<double>(k));
        }
      }
    }
    const auto n = static_cast<Eigen::Index>(ys.size());
    RowMatrix f(n, 2), z(n, 1);
    for (Eigen::Index i = 0; i < n; ++i) {
      f(i, 0) = ys[static_cast<std::size_t>(i)];
      f(i, 1) = ds[static_cast<std::size_t>(i)];
      z(i, 0) = zs[static_cast<std::size_t>(i)];
    }
    const Dataset data({"y", "d"}, f, z);
    const FiniteDistribution law{data, std::vector<double>(ys.size(), 1.0 / static_cast<double>(n))};
    const auto truth = testkit::solve_truth(spec, law);

    const Basis onehot = Basis::custom(points, 1, [](std::span<const double> zz, std::span<double> out) {
      std::fill(out.begin(), out.end(), 0.0);
      out[static_cast<std::size_t>(zz[0])] = 1.0;
    });
    auto theta_for = [&](const std::vector<double>& values, auto inverse) {
      Vector t(static_cast<Eigen::Index>(points));
      for (std::size_t q = 0; q < truth.points.size(); ++q) {
        t[static_cast<Eigen::Index>(truth.points[q][0])] = inverse(values[q]);
      }
      return t;
    };
    const auto ident = [](double v) { return v; };
    const auto a_prob = build_loss(spec, data, onehot, Target::a, link("identity"));
    CHECK(a_prob.grad(theta_for(truth.a, ident)).cwiseAbs().maxCoeff() <= 1e-12);

    const auto b_id = build_loss(spec, data, onehot, Target::b, link("identity"));
    CHECK(b_id.grad(theta_for(truth.b, ident)).cwiseAbs().maxCoeff() <= 1e-12);

    const auto b_exp = build_loss(spec, data, onehot, Target::b, link("exp"));
    CHECK(b_exp.grad(theta_for(truth.b, [](double v) { return std::log(v); })).cwiseAbs().maxCoeff() <= 1e-12);
  }
}
