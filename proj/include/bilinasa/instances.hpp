#pragma once

#include <cstdint>
#include <memory>
#include <string>

#include "bilinasa/oracle.hpp"
#include "bilinasa/problem.hpp"

namespace bilinasa {

// grad_x Psi(x, y*) - cross_xy(x, y*) [hess_yy(x, y*)]^{-1} grad_y Psi(x, y*),
// computed with an exact linear solve. Ground truth only; the algorithms
// never invert anything.
Vector analytic_hypergradient(const ProblemSpec& problem, const Vector& x);

// Quadratic bilevel family "QB": T = 1 with a quadratic upper objective
// and g(x, y) = y'Ay/2 - x'By, A symmetric positive definite with
// spectrum [1, conditioning]. Everything (y*, grad Phi, constants) is
// closed form.
ProblemSpec make_quadratic_bilevel(int p, int q, double conditioning, std::uint64_t seed);

// The canonical shipped instance QB-1.
ProblemSpec qb1();

// Nested composition family "NC": a smooth scalar risk head over
// affine-plus-tanh inner maps, quadratic lower level as in QB.
ProblemSpec make_nested_composition(int depth, int p, int q, int hidden_dim,
                                    std::uint64_t seed);

// The canonical shipped instance NC-2 (depth 2).
ProblemSpec nc2();

// ---------------------------------------------------------------------------
// Distributionally robust regression ("DRO")

// Differentiable feature map phi(params; z).
class FeatureMap {
 public:
  virtual ~FeatureMap() = default;
  virtual int param_dim() const = 0;
  virtual int out_dim() const = 0;
  virtual Vector features(const Vector& params, const Vector& z) const = 0;
  // d phi / d params, transposed: param_dim x out_dim.
  virtual Matrix dfeatures_dparams_t(const Vector& params, const Vector& z) const = 0;
  virtual std::string kind() const = 0;
};

std::unique_ptr<FeatureMap> make_linear_feature_map(int input_dim, int width);
std::unique_ptr<FeatureMap> make_two_layer_tanh_feature_map(int input_dim, int width);

struct DroConfig {
  int n_train = 200;
  int input_dim = 10;
  int n_indices = 5;      // number of index directions in the response model
  double c = 1.0;         // strength of the sinusoidal component
  double lambda = 1.65e-3;
  std::string feature_kind = "two-layer-tanh";  // or "linear"
  int width = 8;
  double kappa = 0.01;     // positive-part smoothing scale
  double eps_s = 1e-6;     // square-root smoothing offset
  double mu_reg = 1e-2;    // lower-level ridge weight
  double train_noise = 0.01;
  double test_noise = 0.1;
  std::uint64_t seed = 0;
};

// A DRO regression instance: the compositional risk upper level over a
// finite training population, least-squares-plus-ridge lower level, and
// the data needed to evaluate shifted-test losses.
struct DroInstance {
  DroConfig config;
  std::shared_ptr<const FeatureMap> feature_map;
  Matrix x_train;  // n x d
  Vector y_train;
  Matrix index_directions;  // n_indices x d, unit rows
  ProblemSpec spec;

  double mean_loss(const Vector& params, const Vector& beta) const;
  double mean_loss_on(const Vector& params, const Vector& beta, const Matrix& x,
                      const Vector& y) const;
  // Closed-form ridge solution of the lower level at fixed features.
  Vector ridge_solution(const Vector& params) const;
  // Fresh covariates from the shifted Beta-type marginal and matching
  // responses from the index model.
  Matrix sample_test_covariates(int n, double a, double b, RngStream& rng) const;
  Vector generate_responses(const Matrix& x, double noise_sigma, RngStream& rng) const;
};

std::shared_ptr<DroInstance> make_dro_regression(const DroConfig& config);

// n i.i.d. vectors with independent coordinates from the density
// proportional to x^a (1-x)^b on [0, 1] (exponent convention; equals a
// Beta(a+1, b+1) in standard shape parameters).
Matrix sample_shifted_covariates(int n, int dim, double a, double b, RngStream& rng);

}  // namespace bilinasa
