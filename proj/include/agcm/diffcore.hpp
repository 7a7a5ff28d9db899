#pragma once

// Differentiable primitives used by the fusion and loss pipeline. Each
// primitive has a forward function and a vector-Jacobian product; the
// finite-difference checker at the bottom verifies them.

#include <functional>
#include <string_view>
#include <vector>

#include "agcm/types.hpp"

namespace agcm::diff {

/// Throws InvalidArgument unless v is non-empty with finite entries.
void require_valid(const Vector& v, std::string_view what);

/// v / ||v||. Throws DegenerateNorm when ||v|| <= kNormEpsilon.
Vector normalize(const Vector& v);

/// <a,b> / (||a|| ||b||), clamped to [-1, 1].
double cosine_sim(const Vector& a, const Vector& b);

/// Pearson correlation of the coordinate sequences (cosine of the centered
/// inputs). Throws DegenerateVariance when either input is constant.
double pearson_sim(const Vector& a, const Vector& b);

/// -||a - b||. Distances enter attention as negative similarities so that
/// closer proposals still receive larger weights.
double neg_euclidean_sim(const Vector& a, const Vector& b);

/// Max-shifted softmax.
Vector softmax(const Vector& scores);

/// Max-shifted log(sum(exp(scores))).
double log_sum_exp(const Vector& scores);

// Vector-Jacobian products: given the cotangent of the output, return the
// cotangent(s) of the inputs.
Vector normalize_vjp(const Vector& v, const Vector& cotangent);
std::pair<Vector, Vector> cosine_sim_vjp(const Vector& a, const Vector& b, double cotangent);
std::pair<Vector, Vector> pearson_sim_vjp(const Vector& a, const Vector& b, double cotangent);
/// Uses the zero subgradient at a == b.
std::pair<Vector, Vector> neg_euclidean_sim_vjp(const Vector& a, const Vector& b,
                                                double cotangent);
Vector softmax_vjp(const Vector& scores, const Vector& cotangent);
Vector log_sum_exp_vjp(const Vector& scores, double cotangent);

enum class Primitive { Normalize, CosineSim, PearsonSim, NegEuclideanSim, Softmax, LogSumExp };

std::string_view to_string(Primitive op);
/// Number of Vector inputs the primitive takes.
int arity(Primitive op);

/// Forward value plus a linear pullback. Scalar outputs are length-1 vectors
/// and take length-1 cotangents.
struct VjpResult {
  Vector output;
  std::function<std::vector<Vector>(const Vector&)> pullback;
};

VjpResult with_vjp(Primitive op, std::vector<Vector> inputs);

/// Shorthand for with_vjp(op, inputs).pullback(cotangent).
std::vector<Vector> vjp(Primitive op, const std::vector<Vector>& inputs, const Vector& cotangent);

struct GradCheckOptions {
  double epsilon = 1e-5;
  double tolerance = 1e-4;
  // Relative error of coordinate i is |a_i - n_i| / max(|a_i|, |n_i|, scale_floor),
  // so coordinates with near-zero gradient are judged on absolute error.
  double scale_floor = 1e-3;
};

struct GradCheckReport {
  Vector analytic;
  Vector numeric;
  Vector relative_error;
  double max_relative_error = 0.0;
  Eigen::Index worst_index = -1;
  bool passed = true;
};

using ScalarFn = std::function<double(const Vector&)>;
using GradientFn = std::function<Vector(const Vector&)>;

/// Compares `gradient(point)` against central differences of `f`.
GradCheckReport grad_check(const ScalarFn& f, const GradientFn& gradient, const Vector& point,
                           const GradCheckOptions& options = {});

}  // namespace agcm::diff
