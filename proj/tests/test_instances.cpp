#include <doctest.h>

#include <cmath>

#include <Eigen/Dense>

#include "bilinasa/instances.hpp"

using namespace bilinasa;

namespace {

// Central finite difference of a scalar function of x.
Vector fd_gradient(const std::function<double(const Vector&)>& f, const Vector& x,
                   double h = 1e-5) {
  Vector g(x.size());
  for (int i = 0; i < x.size(); ++i) {
    Vector xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    g[i] = (f(xp) - f(xm)) / (2.0 * h);
  }
  return g;
}

double rel_err(const Vector& got, const Vector& want) {
  return (got - want).norm() / std::max(1e-8, want.norm());
}

}  // namespace

TEST_CASE("hand-built identity quadratic instance has hypergradient 2x") {
  // Psi = ||x||^2/2 via x'x/2 + y'y/2 with y*(x) = x and zero coupling:
  // g = ||y - x||^2 / 2, so Phi(x) = ||x||^2 and grad Phi = 2x.
  ProblemSpec spec;
  spec.name = "identity-qb";
  CompositionLevel head;
  head.index = 1;
  head.input_dim = 4;
  head.output_dim = 1;
  head.value = [](const Vector& z) {
    Vector out(1);
    out[0] = 0.5 * z.squaredNorm();
    return out;
  };
  head.jacobian_t = [](const Vector& z) { return Matrix(z); };
  spec.levels.push_back(head);
  spec.lower.x_dim = 2;
  spec.lower.y_dim = 2;
  spec.lower.grad_y = [](const Vector& x, const Vector& y) { return Vector(y - x); };
  spec.lower.cross_xy = [](const Vector&, const Vector&) {
    return Matrix(-Matrix::Identity(2, 2));
  };
  spec.lower.hess_yy = [](const Vector&, const Vector&) { return Matrix(Matrix::Identity(2, 2)); };
  spec.lower.mu = 1.0;
  spec.lower.lip_grad = 1.0;
  spec.feasible = FeasibleSet::all(2);
  spec.ground_truth = GroundTruth{};
  spec.ground_truth->y_star = [](const Vector& x) { return x; };

  Vector x(2);
  x << 0.7, -1.3;
  CHECK((analytic_hypergradient(spec, x) - 2.0 * x).norm() < 1e-12);
  CHECK(analytic_hypergradient(spec, Vector::Zero(2)).norm() == 0.0);
}

TEST_CASE("quadratic family: conditioning sets the Hessian spectrum") {
  const ProblemSpec spec = make_quadratic_bilevel(3, 4, 10.0, 7);
  const Matrix a = spec.lower.hess_yy(Vector::Zero(3), Vector::Zero(4));
  Eigen::SelfAdjointEigenSolver<Matrix> es(a);
  CHECK(es.eigenvalues().minCoeff() == doctest::Approx(1.0).epsilon(1e-10));
  CHECK(es.eigenvalues().maxCoeff() == doctest::Approx(10.0).epsilon(1e-10));
  CHECK(spec.lower.mu == doctest::Approx(1.0));
  // The stored constant covers the full (x, y) Hessian, so it upper-bounds
  // the y-block spectral radius.
  CHECK(spec.lower.lip_grad >= 10.0);
  CHECK(spec.lower.lip_grad < 12.0);
}

TEST_CASE("quadratic family: y* satisfies lower-level optimality") {
  const ProblemSpec spec = qb1();
  RngStream rng(31);
  for (int t = 0; t < 20; ++t) {
    const Vector x = rng.gaussian_vector(spec.x_dim());
    const Vector y = spec.ground_truth->y_star(x);
    CHECK(spec.lower.grad_y(x, y).norm() < 1e-10);
  }
}

TEST_CASE("ground-truth hypergradients match finite differences at 20 probes") {
  for (const ProblemSpec& spec : {qb1(), nc2()}) {
    REQUIRE(spec.ground_truth.has_value());
    RngStream rng(77);
    auto phi = [&spec](const Vector& x) {
      return spec.psi(x, spec.ground_truth->y_star(x));
    };
    for (int t = 0; t < 20; ++t) {
      const Vector x = rng.gaussian_vector(spec.x_dim());
      const Vector analytic = spec.ground_truth->grad_phi(x);
      CHECK(rel_err(analytic, fd_gradient(phi, x)) < 1e-4);
      // The stored closed form agrees with the generic solve-based path.
      CHECK((analytic - analytic_hypergradient(spec, x)).norm() <
            1e-8 * std::max(1.0, analytic.norm()));
    }
  }
}

TEST_CASE("level jacobians match finite differences of level values") {
  for (const ProblemSpec& spec : {qb1(), nc2()}) {
    RngStream rng(13);
    for (int i = 1; i <= spec.num_levels(); ++i) {
      const CompositionLevel& lvl = spec.level(i);
      const Vector point = rng.gaussian_vector(lvl.input_dim);
      const Matrix jt = lvl.jacobian_t(point);
      REQUIRE(jt.rows() == lvl.input_dim);
      REQUIRE(jt.cols() == lvl.output_dim);
      for (int c = 0; c < lvl.output_dim; ++c) {
        const Vector fd = fd_gradient(
            [&lvl, c](const Vector& z) { return lvl.value(z)[c]; }, point);
        CHECK(rel_err(jt.col(c), fd) < 1e-5);
      }
    }
  }
}

TEST_CASE("composed constants reproduce the per-level product and sum formulas") {
  for (const ProblemSpec& spec : {qb1(), nc2()}) {
    const auto& c = spec.constants;
    CHECK(c.lip_psi ==
          doctest::Approx(SmoothnessConstants::compose_lip_psi(c.lip_f)).epsilon(1e-14));
    CHECK(c.lip_grad_psi ==
          doctest::Approx(SmoothnessConstants::compose_lip_grad_psi(c.lip_f, c.lip_grad_f))
              .epsilon(1e-14));
    CHECK(c.lip_ystar == doctest::Approx(c.lip_grad_g / c.mu_g).epsilon(1e-14));
  }
}

TEST_CASE("nested family constructor validates depth") {
  CHECK_THROWS(make_nested_composition(1, 3, 2, 4, 0));
  CHECK_THROWS(make_nested_composition(4, 3, 2, 4, 0));
  const ProblemSpec three = make_nested_composition(3, 3, 2, 4, 5);
  CHECK(three.num_levels() == 3);
  CHECK_NOTHROW(three.check_dimensions());
}

TEST_CASE("shifted covariates match the stated Beta-type moments") {
  RngStream rng(19);
  const int n = 100000;
  auto mean_of = [&rng, n](double a, double b) {
    const Matrix draws = sample_shifted_covariates(n, 1, a, b, rng);
    return draws.col(0).mean();
  };
  CHECK(std::abs(mean_of(0.0, 0.0) - 0.5) < 0.005);
  CHECK(std::abs(mean_of(3.0, 6.0) - 4.0 / 11.0) < 0.005);
  CHECK(std::abs(mean_of(1.5, 4.5) - 0.3125) < 0.005);
  CHECK_THROWS(sample_shifted_covariates(10, 1, -1.0, 0.0, rng));
}

TEST_CASE("feature maps differentiate correctly") {
  RngStream rng(23);
  for (const auto* kind : {"linear", "two-layer-tanh"}) {
    const int d = 3, w = 4;
    std::unique_ptr<FeatureMap> fm = (std::string(kind) == "linear")
                                         ? make_linear_feature_map(d, w)
                                         : make_two_layer_tanh_feature_map(d, w);
    const Vector params = rng.gaussian_vector(fm->param_dim());
    const Vector z = rng.gaussian_vector(d);
    const Matrix jt = fm->dfeatures_dparams_t(params, z);
    REQUIRE(jt.rows() == fm->param_dim());
    REQUIRE(jt.cols() == fm->out_dim());
    for (int c = 0; c < fm->out_dim(); ++c) {
      const Vector fd = fd_gradient(
          [&fm, &z, c](const Vector& p) { return fm->features(p, z)[c]; }, params);
      CHECK(rel_err(jt.col(c), fd) < 1e-5);
    }
  }
}

TEST_CASE("robust-regression levels differentiate correctly") {
  DroConfig cfg;
  cfg.n_train = 20;
  cfg.input_dim = 3;
  cfg.width = 3;
  cfg.feature_kind = "linear";
  cfg.seed = 4;
  auto inst = make_dro_regression(cfg);
  const ProblemSpec& spec = inst->spec;
  CHECK_NOTHROW(spec.check_dimensions());
  RngStream rng(29);
  for (int i = 1; i <= 2; ++i) {
    const CompositionLevel& lvl = spec.level(i);
    const Vector point = (i == 1) ? Vector(0.5 * rng.gaussian_vector(2).cwiseAbs())
                                  : Vector(0.3 * rng.gaussian_vector(lvl.input_dim));
    const Matrix jt = lvl.jacobian_t(point);
    for (int c = 0; c < lvl.output_dim; ++c) {
      const Vector fd = fd_gradient(
          [&lvl, c](const Vector& z) { return lvl.value(z)[c]; }, point, 1e-6);
      CHECK(rel_err(jt.col(c), fd) < 1e-3);
    }
  }
  // Lower-level derivatives against finite differences of the value.
  const Vector params = 0.3 * rng.gaussian_vector(spec.x_dim());
  const Vector beta = 0.3 * rng.gaussian_vector(spec.y_dim());
  const Vector grad = spec.lower.grad_y(params, beta);
  const Vector fd = fd_gradient(
      [&spec, &params](const Vector& y) { return spec.lower.value(params, y); }, beta);
  CHECK(rel_err(grad, fd) < 1e-5);
}

TEST_CASE("lambda = 0 reduces the robust objective to the plain mean loss") {
  DroConfig cfg;
  cfg.n_train = 15;
  cfg.input_dim = 3;
  cfg.width = 3;
  cfg.feature_kind = "linear";
  cfg.lambda = 0.0;
  auto inst = make_dro_regression(cfg);
  RngStream rng(8);
  const Vector params = rng.gaussian_vector(inst->spec.x_dim());
  const Vector beta = rng.gaussian_vector(inst->spec.y_dim());
  CHECK(inst->spec.psi(params, beta) ==
        doctest::Approx(inst->mean_loss(params, beta)).epsilon(1e-12));
}

TEST_CASE("linear data with linear features fits below the noise floor") {
  DroConfig cfg;
  cfg.n_train = 200;
  cfg.input_dim = 4;
  cfg.width = 4;
  cfg.feature_kind = "linear";
  cfg.c = 0.0;  // response exactly linear in the covariates
  cfg.mu_reg = 1e-6;
  cfg.train_noise = 0.01;
  auto inst = make_dro_regression(cfg);
  // Identity weight matrix makes the features the raw covariates.
  Vector params = Vector::Zero(inst->spec.x_dim());
  for (int l = 0; l < cfg.width; ++l) params[l * cfg.input_dim + l] = 1.0;
  const Vector beta = inst->ridge_solution(params);
  CHECK(inst->mean_loss(params, beta) < 2.0 * cfg.train_noise * cfg.train_noise);
  // The ridge solution zeroes the lower-level gradient.
  CHECK(inst->spec.lower.grad_y(params, beta).norm() < 1e-10);
}

TEST_CASE("subsampling oracle is unbiased for the population lower gradient") {
  DroConfig cfg;
  cfg.n_train = 30;
  cfg.input_dim = 3;
  cfg.width = 3;
  cfg.feature_kind = "linear";
  auto inst = make_dro_regression(cfg);
  NoiseModel noisy;  // any non-zero kind triggers subsampling
  noisy.kind = NoiseModel::Kind::kGaussian;
  auto oracle = make_oracle(inst->spec, noisy);
  CHECK_FALSE(oracle->deterministic());
  RngStream rng(41);
  const Vector params = 0.3 * rng.gaussian_vector(inst->spec.x_dim());
  const Vector beta = 0.3 * rng.gaussian_vector(inst->spec.y_dim());
  const Vector exact = inst->spec.lower.grad_y(params, beta);
  Vector acc = Vector::Zero(exact.size());
  const int n = 20000;
  for (int t = 0; t < n; ++t) acc += oracle->sample_lower_gradient(params, beta, rng);
  acc /= n;
  CHECK((acc - exact).norm() < 0.05 * std::max(1.0, exact.norm()));
  // Zero-noise mode evaluates the exact population quantity.
  auto exact_oracle = make_oracle(inst->spec, NoiseModel::zero());
  CHECK(exact_oracle->deterministic());
  CHECK((exact_oracle->sample_lower_gradient(params, beta, rng) - exact).norm() == 0.0);
  CHECK((exact_oracle->sample_value(2, Vector(Vector::Zero(inst->spec.x_dim() +
                                                           inst->spec.y_dim()))
                                            .eval(),
                                    rng) -
         inst->spec.level(2).value(Vector::Zero(inst->spec.x_dim() + inst->spec.y_dim())))
            .norm() == 0.0);
}

TEST_CASE("unknown feature kind is rejected") {
  DroConfig cfg;
  cfg.feature_kind = "cubic-spline";
  CHECK_THROWS(make_dro_regression(cfg));
}
