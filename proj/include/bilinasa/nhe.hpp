#pragma once

#include <functional>
#include <vector>

#include "bilinasa/oracle.hpp"
#include "bilinasa/problem.hpp"

namespace bilinasa {

// Parameters of the Hessian-inverse-product recursion.
struct NheConfig {
  double alpha = 0.0;  // recursion step, > 0
  int steps = 1;       // M, number of recursion steps

  // Largest admissible alpha for the given constants:
  // min{ mu / (mu^2 + sigma_H^2), 1 / lip_grad }.
  static double max_alpha(double mu, double lip_grad, double sigma_H);

  // Half the admissible maximum.
  static double default_alpha(double mu, double lip_grad, double sigma_H);

  // floor(log K) clamped to >= 1.
  static int default_steps(int outer_iterations);

  // Truncation factor (1 - alpha * mu)^M.
  double truncation_factor(double mu) const;

  // Validated construction: enforces the alpha interval and the
  // truncation condition (1 - alpha*mu)^M <= 1/2. Throws on violation.
  static NheConfig validated(double alpha, int steps, double mu, double lip_grad,
                             double sigma_H);
};

struct NheResult {
  Vector r;     // hypergradient estimate, R^p
  Vector r0;    // Jacobian-chain seed, R^{p+q}
  Vector rbar;  // final recursion state, R^q
};

// Right-to-left product of sampled transposed Jacobians along the chain,
// evaluated by matrix-vector products from the scalar end outward.
// `u` holds the tracked chain values u^{(1)}..u^{(T)}; level i's Jacobian
// is sampled at u^{(i+1)}, with u^{(T+1)} = (x, y).
Vector chain_seed(const ProblemSpec& problem, const std::vector<Vector>& u, const Vector& x,
                  const Vector& y, const Oracle& oracle, RngStream& rng);

// M steps of rbar_n = (I - alpha H_n) rbar_{n-1} + alpha r0y starting
// from zero, each step with a fresh Hessian sample.
Vector neumann_recursion(const Vector& r0y, const NheConfig& config,
                         const std::function<Matrix(RngStream&)>& hessian_sampler,
                         RngStream& rng);

// Full hypergradient estimate: chain seed, Neumann recursion with fresh
// independent Hessian draws, and the cross-partial correction.
NheResult estimate_hypergradient(const ProblemSpec& problem, const Vector& x, const Vector& y,
                                 const std::vector<Vector>& u, const NheConfig& config,
                                 const Oracle& oracle, RngStream& rng);

}  // namespace bilinasa
