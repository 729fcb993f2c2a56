#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "bilinasa/rng.hpp"

namespace bilinasa {

// One level of the upper objective composition. Level i maps
// R^{input_dim} -> R^{output_dim}; levels chain so that the output of
// level i+1 feeds the input of level i, with level 1 producing a scalar.
struct CompositionLevel {
  int index = 0;       // 1-based position in the chain
  int input_dim = 0;   // d_i
  int output_dim = 0;  // d_{i-1}

  std::function<Vector(const Vector&)> value;
  // Transposed Jacobian, shape input_dim x output_dim.
  std::function<Matrix(const Vector&)> jacobian_t;
};

// Strongly convex lower-level objective g(x, y).
struct LowerLevel {
  int x_dim = 0;  // p
  int y_dim = 0;  // q

  std::function<double(const Vector&, const Vector&)> value;
  std::function<Vector(const Vector&, const Vector&)> grad_y;
  // Cross partial d^2 g / dx dy, shape p x q.
  std::function<Matrix(const Vector&, const Vector&)> cross_xy;
  // Hessian in y, shape q x q, symmetric with spectrum in [mu, lip_grad].
  std::function<Matrix(const Vector&, const Vector&)> hess_yy;

  double mu = 0.0;        // strong convexity modulus
  double lip_grad = 0.0;  // Lipschitz constant of the gradient
  double lip_hess = 0.0;  // Lipschitz constant of the Hessian
};

class FeasibleSet {
 public:
  enum class Kind { kAll, kBox, kBall };

  static FeasibleSet all(int dim) {
    FeasibleSet s;
    s.kind_ = Kind::kAll;
    s.dim_ = dim;
    return s;
  }

  static FeasibleSet box(Vector lower, Vector upper) {
    if (lower.size() != upper.size() || (upper - lower).minCoeff() < 0.0)
      throw std::invalid_argument("FeasibleSet::box: invalid bounds");
    FeasibleSet s;
    s.kind_ = Kind::kBox;
    s.dim_ = static_cast<int>(lower.size());
    s.lower_ = std::move(lower);
    s.upper_ = std::move(upper);
    return s;
  }

  static FeasibleSet ball(Vector center, double radius) {
    if (radius <= 0.0) throw std::invalid_argument("FeasibleSet::ball: radius must be positive");
    FeasibleSet s;
    s.kind_ = Kind::kBall;
    s.dim_ = static_cast<int>(center.size());
    s.center_ = std::move(center);
    s.radius_ = radius;
    return s;
  }

  Kind kind() const { return kind_; }
  int dim() const { return dim_; }

  Vector project(const Vector& v) const {
    switch (kind_) {
      case Kind::kAll:
        return v;
      case Kind::kBox:
        return v.cwiseMax(lower_).cwiseMin(upper_);
      case Kind::kBall: {
        const Vector diff = v - center_;
        const double norm = diff.norm();
        if (norm <= radius_) return v;
        return center_ + (radius_ / norm) * diff;
      }
    }
    throw std::logic_error("FeasibleSet: unknown kind");
  }

  bool contains(const Vector& v, double tol = 1e-12) const {
    return (v - project(v)).norm() <= tol;
  }

 private:
  Kind kind_ = Kind::kAll;
  int dim_ = 0;
  Vector lower_, upper_, center_;
  double radius_ = 0.0;
};

// Per-level and lower-level smoothness constants, plus the derived
// quantities for the composed objective.
struct SmoothnessConstants {
  std::vector<double> lip_f;       // L_{f_i}, i = 1..T
  std::vector<double> lip_grad_f;  // L_{grad f_i}
  double mu_g = 0.0;
  double lip_grad_g = 0.0;
  double lip_hess_g = 0.0;

  double lip_psi = 0.0;       // product of lip_f
  double lip_grad_psi = 0.0;  // composed-gradient Lipschitz constant
  double lip_ystar = 0.0;     // lip_grad_g / mu_g

  // Derived composed constants from the per-level values.
  static double compose_lip_psi(const std::vector<double>& lip_f);
  static double compose_lip_grad_psi(const std::vector<double>& lip_f,
                                     const std::vector<double>& lip_grad_f);

  // Fills lip_psi, lip_grad_psi, lip_ystar from the primitive fields.
  void finalize();
};

struct GroundTruth {
  std::function<Vector(const Vector&)> y_star;
  std::function<Vector(const Vector&)> grad_phi;
  std::function<double(const Vector&)> phi;
};

class Oracle;
struct NoiseModel;

// A full problem instance: composition chain, lower level, feasible set,
// constants, and optional analytic ground truth.
struct ProblemSpec {
  std::string name;
  // Key-value construction record (dims, seeds, constants) so a run can
  // be reproduced exactly from its artifacts.
  std::string manifest;
  std::vector<CompositionLevel> levels;  // levels[i] is level i+1
  LowerLevel lower;
  FeasibleSet feasible = FeasibleSet::all(0);
  SmoothnessConstants constants;
  std::optional<GroundTruth> ground_truth;

  // Instances whose stochasticity is not additive Gaussian noise (e.g.
  // data subsampling) install their own oracle factory.
  std::function<std::unique_ptr<Oracle>(const ProblemSpec&, const NoiseModel&)> oracle_factory;

  int num_levels() const { return static_cast<int>(levels.size()); }
  int x_dim() const { return lower.x_dim; }
  int y_dim() const { return lower.y_dim; }

  const CompositionLevel& level(int i) const {  // 1-based
    return levels.at(static_cast<std::size_t>(i - 1));
  }

  // Exact composed objective Psi(x, y) = f_1(f_2(...f_T(x, y)...)).
  double psi(const Vector& x, const Vector& y) const;

  // Exact transposed-Jacobian chain at the composition points, a vector
  // in R^{p+q}.
  Vector grad_psi(const Vector& x, const Vector& y) const;

  // Throws if chained dimensions are inconsistent.
  void check_dimensions() const;
};

}  // namespace bilinasa
