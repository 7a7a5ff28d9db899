#include <doctest.h>

#include <cmath>

#include "agcm/diffcore.hpp"
#include "agcm/errors.hpp"
#include "test_util.hpp"

using namespace agcm;
using namespace agcm::diff;
using agcm::testing::gaussian_vector;

namespace {

Vector vec(std::initializer_list<double> xs) {
  Vector v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v[i++] = x;
  return v;
}

}  // namespace

TEST_CASE("normalize") {
  CHECK((normalize(vec({0, 5})) - vec({0, 1})).norm() == doctest::Approx(0.0));
  CHECK((normalize(vec({3, 4})) - vec({0.6, 0.8})).norm() < 1e-15);
  const Vector u = vec({0.6, 0.8});
  CHECK((normalize(u) - u).norm() < 1e-15);

  std::mt19937_64 rng(7);
  for (int i = 0; i < 50; ++i) {
    CHECK(std::abs(normalize(gaussian_vector(rng, 9)).norm() - 1.0) < 1e-12);
  }
  CHECK_THROWS_AS(normalize(vec({0, 0})), DegenerateNorm);
  CHECK_THROWS_AS(normalize(vec({1e-13, 0})), DegenerateNorm);
  CHECK_THROWS_AS(normalize(vec({NAN, 1})), InvalidArgument);
  CHECK_THROWS_AS(normalize(Vector()), InvalidArgument);
}

TEST_CASE("cosine_sim") {
  CHECK(cosine_sim(vec({1, 0}), vec({1, 0})) == 1.0);
  CHECK(cosine_sim(vec({1, 0}), vec({0, 1})) == 0.0);
  CHECK(cosine_sim(vec({1, 2}), vec({2, 1})) == doctest::Approx(0.8).epsilon(1e-15));
  CHECK_THROWS_AS(cosine_sim(vec({0, 0}), vec({1, 0})), DegenerateNorm);
  CHECK_THROWS_AS(cosine_sim(vec({1, 0}), vec({1, 0, 0})), DimensionMismatch);

  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> scale(0.01, 100.0);
  for (int i = 0; i < 200; ++i) {
    const Vector a = gaussian_vector(rng, 6);
    const Vector b = gaussian_vector(rng, 6);
    const double c = cosine_sim(a, b);
    CHECK(c >= -1.0);
    CHECK(c <= 1.0);
    CHECK(std::abs(cosine_sim(scale(rng) * a, scale(rng) * b) - c) < 1e-12);
  }
}

TEST_CASE("pearson_sim") {
  const Vector a = vec({1, 2, 3});
  CHECK(pearson_sim(a, a) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(pearson_sim(vec({1, 2, 3}), vec({3, 2, 1})) == doctest::Approx(-1.0).epsilon(1e-15));
  // scipy.stats.pearsonr([1,2,4],[2,3,7])
  CHECK(std::abs(pearson_sim(vec({1, 2, 4}), vec({2, 3, 7})) - 0.9897433186107871) < 1e-14);
  CHECK_THROWS_AS(pearson_sim(vec({2, 2, 2}), a), DegenerateVariance);

  std::mt19937_64 rng(12);
  for (int i = 0; i < 200; ++i) {
    const Vector x = gaussian_vector(rng, 7);
    const Vector y = gaussian_vector(rng, 7);
    const Vector xc = x.array() - x.mean();
    const Vector yc = y.array() - y.mean();
    CHECK(std::abs(pearson_sim(x, y) - cosine_sim(xc, yc)) < 1e-12);
  }
}

TEST_CASE("neg_euclidean_sim") {
  const Vector a = vec({0.3, -2.0, 5.0});
  CHECK(neg_euclidean_sim(a, a) == 0.0);
  CHECK(neg_euclidean_sim(vec({0, 0}), vec({3, 4})) == -5.0);
  const Vector b = vec({1.0, 2.0, -1.0});
  CHECK(neg_euclidean_sim(a, b) == neg_euclidean_sim(b, a));
  CHECK_THROWS_AS(neg_euclidean_sim(a, vec({1, 2})), DimensionMismatch);
}

TEST_CASE("softmax and log_sum_exp") {
  const Vector third = softmax(vec({2.5, 2.5, 2.5}));
  for (int i = 0; i < 3; ++i) CHECK(third[i] == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(softmax(vec({-7.0}))[0] == 1.0);
  const Vector q = softmax(vec({0.0, std::log(3.0)}));
  CHECK(std::abs(q[0] - 0.25) < 1e-15);
  CHECK(std::abs(q[1] - 0.75) < 1e-15);
  // beta-scaled logits stay finite
  const Vector big = softmax(vec({1000.0, -1000.0, 999.0}));
  CHECK(big.allFinite());
  CHECK(log_sum_exp(vec({1000.0, 1000.0})) == doctest::Approx(1000.0 + std::log(2.0)));

  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> shift(-50.0, 50.0);
  for (int i = 0; i < 200; ++i) {
    const Vector s = 20.0 * gaussian_vector(rng, 5);
    const Vector p = softmax(s);
    CHECK(std::abs(p.sum() - 1.0) < 1e-12);
    CHECK((p.array() > 0.0).all());
    const Vector shifted = softmax((s.array() + shift(rng)).matrix());
    CHECK((shifted - p).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("vjp named examples") {
  const Vector v = vec({0.6, 0.8});
  const Vector u = vec({1.0, -2.0});
  const Vector expected = u - v * v.dot(u);  // (I - vv^T) u at unit v
  CHECK((vjp(Primitive::Normalize, {v}, u)[0] - expected).norm() < 1e-15);

  const Vector uniform = vec({0.4, 0.4, 0.4, 0.4});
  CHECK(vjp(Primitive::Softmax, {uniform}, Vector::Ones(4))[0].norm() < 1e-16);

  const auto cos_grads = vjp(Primitive::CosineSim, {vec({1, 0}), vec({0, 1})}, vec({2.0}));
  CHECK((cos_grads[0] - 2.0 * vec({0, 1})).norm() < 1e-15);
  CHECK((cos_grads[1] - 2.0 * vec({1, 0})).norm() < 1e-15);

  CHECK_THROWS_AS(vjp(Primitive::CosineSim, {vec({1, 0})}, vec({1.0})), InvalidArgument);
  CHECK_THROWS_AS(vjp(Primitive::LogSumExp, {vec({1, 0})}, vec({1.0, 2.0})), DimensionMismatch);
  CHECK_THROWS_AS(vjp(Primitive::Normalize, {vec({0, 0})}, vec({1.0, 2.0})), DegenerateNorm);
}

TEST_CASE("every primitive's vjp matches central differences at 100 points") {
  std::mt19937_64 rng(2024);
  GradCheckOptions opts;
  opts.tolerance = 1e-6;
  const Primitive unary[] = {Primitive::Normalize, Primitive::Softmax, Primitive::LogSumExp};
  const Primitive binary[] = {Primitive::CosineSim, Primitive::PearsonSim,
                              Primitive::NegEuclideanSim};
  for (int trial = 0; trial < 100; ++trial) {
    const int d = agcm::testing::uniform_int(rng, 3, 10);
    const Vector x = gaussian_vector(rng, d);
    const Vector g = gaussian_vector(rng, d);
    for (auto op : unary) {
      const Vector cot = op == Primitive::LogSumExp ? Vector(g.head(1)) : g;
      const auto report = grad_check(
          [&](const Vector& p) { return cot.dot(with_vjp(op, {p}).output); },
          [&](const Vector& p) { return vjp(op, {p}, cot)[0]; }, x, opts);
      INFO(to_string(op), " trial ", trial, " err ", report.max_relative_error);
      CHECK(report.passed);
    }
    const Vector y = gaussian_vector(rng, d);
    for (auto op : binary) {
      // Differentiate with respect to each argument in turn.
      const Vector cot = g.head(1);
      const auto ra = grad_check(
          [&](const Vector& p) { return cot[0] * with_vjp(op, {p, y}).output[0]; },
          [&](const Vector& p) { return vjp(op, {p, y}, cot)[0]; }, x, opts);
      const auto rb = grad_check(
          [&](const Vector& p) { return cot[0] * with_vjp(op, {x, p}).output[0]; },
          [&](const Vector& p) { return vjp(op, {x, p}, cot)[1]; }, y, opts);
      INFO(to_string(op), " trial ", trial, " err ", ra.max_relative_error, " ",
           rb.max_relative_error);
      CHECK(ra.passed);
      CHECK(rb.passed);
    }
  }
}

TEST_CASE("pullbacks are linear in the cotangent") {
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> coef(-3.0, 3.0);
  const Primitive ops[] = {Primitive::Normalize,  Primitive::Softmax,    Primitive::LogSumExp,
                           Primitive::CosineSim,  Primitive::PearsonSim, Primitive::NegEuclideanSim};
  for (int trial = 0; trial < 50; ++trial) {
    for (auto op : ops) {
      std::vector<Vector> inputs;
      for (int k = 0; k < arity(op); ++k) inputs.push_back(gaussian_vector(rng, 6));
      const auto res = with_vjp(op, inputs);
      const Eigen::Index out = res.output.size();
      const Vector u = gaussian_vector(rng, out);
      const Vector v = gaussian_vector(rng, out);
      const double a = coef(rng), b = coef(rng);
      const auto combined = res.pullback(a * u + b * v);
      const auto pu = res.pullback(u);
      const auto pv = res.pullback(v);
      for (std::size_t k = 0; k < combined.size(); ++k) {
        const Vector expect = a * pu[k] + b * pv[k];
        CHECK((combined[k] - expect).norm() <= 1e-9 * std::max(1.0, expect.norm()));
      }
    }
  }
}

TEST_CASE("grad_check") {
  std::mt19937_64 rng(5);
  const Vector x = gaussian_vector(rng, 8);
  const auto quad = grad_check([](const Vector& p) { return p.squaredNorm(); },
                               [](const Vector& p) -> Vector { return 2.0 * p; }, x);
  CHECK(quad.max_relative_error <= 1e-6);
  CHECK(quad.passed);

  const auto flat = grad_check([](const Vector&) { return 3.0; },
                               [](const Vector& p) -> Vector { return Vector::Zero(p.size()); }, x);
  CHECK(flat.numeric.cwiseAbs().maxCoeff() == 0.0);
  CHECK(flat.analytic.cwiseAbs().maxCoeff() == 0.0);
  CHECK(flat.passed);

  // A wrong gradient is caught, with the offending coordinate reported.
  const auto wrong = grad_check([](const Vector& p) { return p.squaredNorm(); },
                                [](const Vector& p) -> Vector {
                                  Vector g = 2.0 * p;
                                  g[3] += 0.5;
                                  return g;
                                },
                                x);
  CHECK_FALSE(wrong.passed);
  CHECK(wrong.worst_index == 3);
  CHECK(wrong.relative_error.size() == x.size());
}
