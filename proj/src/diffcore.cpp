#include "agcm/diffcore.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "agcm/errors.hpp"

namespace agcm::diff {

namespace {

void require_same_dim(const Vector& a, const Vector& b) {
  if (a.size() != b.size()) {
    throw DimensionMismatch("dimension mismatch: " + std::to_string(a.size()) + " vs " +
                            std::to_string(b.size()));
  }
}

double checked_norm(const Vector& v) {
  const double n = v.norm();
  if (!(n > kNormEpsilon)) throw DegenerateNorm("vector norm at or below 1e-12");
  return n;
}

Vector centered(const Vector& v) {
  Vector c = v.array() - v.mean();
  if (!(c.norm() > kNormEpsilon)) throw DegenerateVariance("constant input has zero variance");
  return c;
}

}  // namespace

void require_valid(const Vector& v, std::string_view what) {
  if (v.size() < 1) throw InvalidArgument(std::string(what) + ": empty vector");
  if (!v.allFinite()) throw InvalidArgument(std::string(what) + ": non-finite entry");
}

Vector normalize(const Vector& v) {
  require_valid(v, "normalize");
  return v / checked_norm(v);
}

double cosine_sim(const Vector& a, const Vector& b) {
  require_valid(a, "cosine_sim");
  require_valid(b, "cosine_sim");
  require_same_dim(a, b);
  const double c = a.dot(b) / (checked_norm(a) * checked_norm(b));
  return std::clamp(c, -1.0, 1.0);
}

double pearson_sim(const Vector& a, const Vector& b) {
  require_valid(a, "pearson_sim");
  require_valid(b, "pearson_sim");
  require_same_dim(a, b);
  return cosine_sim(centered(a), centered(b));
}

double neg_euclidean_sim(const Vector& a, const Vector& b) {
  require_valid(a, "neg_euclidean_sim");
  require_valid(b, "neg_euclidean_sim");
  require_same_dim(a, b);
  return -(a - b).norm();
}

Vector softmax(const Vector& scores) {
  require_valid(scores, "softmax");
  Vector e = (scores.array() - scores.maxCoeff()).exp();
  return e / e.sum();
}

double log_sum_exp(const Vector& scores) {
  require_valid(scores, "log_sum_exp");
  const double top = scores.maxCoeff();
  return top + std::log((scores.array() - top).exp().sum());
}

Vector normalize_vjp(const Vector& v, const Vector& cotangent) {
  require_same_dim(v, cotangent);
  const double n = checked_norm(v);
  const Vector u = v / n;
  return (cotangent - u * u.dot(cotangent)) / n;
}

std::pair<Vector, Vector> cosine_sim_vjp(const Vector& a, const Vector& b, double cotangent) {
  require_same_dim(a, b);
  const double na = checked_norm(a);
  const double nb = checked_norm(b);
  const double c = a.dot(b) / (na * nb);
  Vector da = cotangent * (b / (na * nb) - c * a / (na * na));
  Vector db = cotangent * (a / (na * nb) - c * b / (nb * nb));
  return {std::move(da), std::move(db)};
}

std::pair<Vector, Vector> pearson_sim_vjp(const Vector& a, const Vector& b, double cotangent) {
  require_same_dim(a, b);
  auto [da, db] = cosine_sim_vjp(centered(a), centered(b), cotangent);
  // Centering is the symmetric projection I - 11^T/d.
  da.array() -= da.mean();
  db.array() -= db.mean();
  return {std::move(da), std::move(db)};
}

std::pair<Vector, Vector> neg_euclidean_sim_vjp(const Vector& a, const Vector& b,
                                                double cotangent) {
  require_same_dim(a, b);
  const Vector diff = a - b;
  const double dist = diff.norm();
  if (dist == 0.0) return {Vector::Zero(a.size()), Vector::Zero(b.size())};
  Vector da = -cotangent * diff / dist;
  Vector db = -da;
  return {std::move(da), std::move(db)};
}

Vector softmax_vjp(const Vector& scores, const Vector& cotangent) {
  require_same_dim(scores, cotangent);
  const Vector y = softmax(scores);
  return y.array() * (cotangent.array() - y.dot(cotangent));
}

Vector log_sum_exp_vjp(const Vector& scores, double cotangent) {
  return cotangent * softmax(scores);
}

std::string_view to_string(Primitive op) {
  switch (op) {
    case Primitive::Normalize: return "normalize";
    case Primitive::CosineSim: return "cosine_sim";
    case Primitive::PearsonSim: return "pearson_sim";
    case Primitive::NegEuclideanSim: return "neg_euclidean_sim";
    case Primitive::Softmax: return "softmax";
    case Primitive::LogSumExp: return "log_sum_exp";
  }
  return "unknown";
}

int arity(Primitive op) {
  switch (op) {
    case Primitive::CosineSim:
    case Primitive::PearsonSim:
    case Primitive::NegEuclideanSim:
      return 2;
    default:
      return 1;
  }
}

namespace {

Vector scalar(double x) { return Vector::Constant(1, x); }

double scalar_cotangent(const Vector& g) {
  if (g.size() != 1) throw DimensionMismatch("scalar output expects a length-1 cotangent");
  return g[0];
}

}  // namespace

VjpResult with_vjp(Primitive op, std::vector<Vector> inputs) {
  if (static_cast<int>(inputs.size()) != arity(op)) {
    throw InvalidArgument(std::string(to_string(op)) + ": wrong number of inputs");
  }
  VjpResult result;
  switch (op) {
    case Primitive::Normalize:
      result.output = normalize(inputs[0]);
      result.pullback = [v = std::move(inputs[0])](const Vector& g) {
        return std::vector<Vector>{normalize_vjp(v, g)};
      };
      break;
    case Primitive::Softmax:
      result.output = softmax(inputs[0]);
      result.pullback = [s = std::move(inputs[0])](const Vector& g) {
        return std::vector<Vector>{softmax_vjp(s, g)};
      };
      break;
    case Primitive::LogSumExp:
      result.output = scalar(log_sum_exp(inputs[0]));
      result.pullback = [s = std::move(inputs[0])](const Vector& g) {
        return std::vector<Vector>{log_sum_exp_vjp(s, scalar_cotangent(g))};
      };
      break;
    case Primitive::CosineSim:
    case Primitive::PearsonSim:
    case Primitive::NegEuclideanSim: {
      using Forward = double (*)(const Vector&, const Vector&);
      using Backward = std::pair<Vector, Vector> (*)(const Vector&, const Vector&, double);
      Forward forward = op == Primitive::CosineSim    ? &cosine_sim
                        : op == Primitive::PearsonSim ? &pearson_sim
                                                      : &neg_euclidean_sim;
      Backward backward = op == Primitive::CosineSim    ? &cosine_sim_vjp
                          : op == Primitive::PearsonSim ? &pearson_sim_vjp
                                                        : &neg_euclidean_sim_vjp;
      result.output = scalar(forward(inputs[0], inputs[1]));
      result.pullback = [a = std::move(inputs[0]), b = std::move(inputs[1]),
                         backward](const Vector& g) {
        auto [da, db] = backward(a, b, scalar_cotangent(g));
        return std::vector<Vector>{std::move(da), std::move(db)};
      };
      break;
    }
  }
  return result;
}

std::vector<Vector> vjp(Primitive op, const std::vector<Vector>& inputs, const Vector& cotangent) {
  return with_vjp(op, inputs).pullback(cotangent);
}

GradCheckReport grad_check(const ScalarFn& f, const GradientFn& gradient, const Vector& point,
                           const GradCheckOptions& options) {
  GradCheckReport report;
  report.analytic = gradient(point);
  if (report.analytic.size() != point.size()) {
    throw DimensionMismatch("grad_check: gradient size differs from point size");
  }
  const Eigen::Index n = point.size();
  report.numeric.resize(n);
  report.relative_error.resize(n);
  Vector probe = point;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double x = point[i];
    probe[i] = x + options.epsilon;
    const double up = f(probe);
    probe[i] = x - options.epsilon;
    const double down = f(probe);
    probe[i] = x;
    report.numeric[i] = (up - down) / (2.0 * options.epsilon);
    const double a = report.analytic[i];
    const double num = report.numeric[i];
    const double scale = std::max({std::abs(a), std::abs(num), options.scale_floor});
    report.relative_error[i] = std::abs(a - num) / scale;
    if (!(report.relative_error[i] <= report.max_relative_error)) {
      report.max_relative_error = report.relative_error[i];
      report.worst_index = i;
    }
  }
  report.passed = report.max_relative_error <= options.tolerance;
  return report;
}

}  // namespace agcm::diff
