#include <doctest.h>

#include <cmath>

#include "bilinasa/algo.hpp"
#include "bilinasa/instances.hpp"

using namespace bilinasa;

namespace {

Vector vec2(double a, double b) {
  Vector v(2);
  v << a, b;
  return v;
}

// Lower level g(x, y) = 0.5 ||y - x||^2 under a scalar head; mu = L = 1.
ProblemSpec tracking_spec() {
  ProblemSpec spec;
  spec.name = "tracking";
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
  spec.lower.value = [](const Vector& x, const Vector& y) { return 0.5 * (y - x).squaredNorm(); };
  spec.lower.grad_y = [](const Vector& x, const Vector& y) { return Vector(y - x); };
  spec.lower.cross_xy = [](const Vector&, const Vector&) {
    return Matrix(-Matrix::Identity(2, 2));
  };
  spec.lower.hess_yy = [](const Vector&, const Vector&) { return Matrix(Matrix::Identity(2, 2)); };
  spec.lower.mu = 1.0;
  spec.lower.lip_grad = 1.0;
  spec.feasible = FeasibleSet::all(2);
  spec.constants.lip_f = {1.0};
  spec.constants.lip_grad_f = {1.0};
  spec.constants.mu_g = 1.0;
  spec.constants.lip_grad_g = 1.0;
  spec.constants.finalize();
  return spec;
}

}  // namespace

TEST_CASE("prox step: unconstrained, box, and ball examples") {
  const Vector z1 = prox_step(Vector::Zero(2), vec2(2, 0), 2.0, FeasibleSet::all(2));
  CHECK((z1 - vec2(-1, 0)).norm() == 0.0);

  const FeasibleSet box = FeasibleSet::box(Vector::Zero(2), Vector::Ones(2));
  const Vector z2 = prox_step(Vector::Zero(2), vec2(2, 0), 2.0, box);
  CHECK(z2.norm() == 0.0);

  const FeasibleSet ball = FeasibleSet::ball(Vector::Zero(2), 1.0);
  const Vector z3 = prox_step(Vector::Zero(2), vec2(-3, -4), 1.0, ball);
  CHECK(z3[0] == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(z3[1] == doctest::Approx(0.8).epsilon(1e-12));
}

TEST_CASE("prox step satisfies beta ||z - x|| <= ||d|| on random inputs") {
  RngStream rng(17);
  const FeasibleSet ball = FeasibleSet::ball(vec2(0.5, -0.5), 2.0);
  for (int t = 0; t < 100; ++t) {
    const Vector x = ball.project(3.0 * rng.gaussian_vector(2));
    const Vector d = 5.0 * rng.gaussian_vector(2);
    const double beta = 0.5 + 3.0 * rng.uniform();
    const Vector z = prox_step(x, d, beta, ball);
    CHECK(beta * (z - x).norm() <= d.norm() * (1.0 + 1e-12) + 1e-300);
  }
}

TEST_CASE("inner loop: fixed point, one explicit step, exact contraction factor") {
  const ProblemSpec spec = tracking_spec();
  auto oracle = make_oracle(spec, NoiseModel::zero());
  RngStream rng(1);
  const Vector x = vec2(2, 2);
  // y0 at the minimizer stays put.
  CHECK((inner_loop(x, x, 5, 0.3, *oracle, rng) - x).norm() == 0.0);
  // One step from zero with gamma = 0.5 lands at (1, 1).
  CHECK((inner_loop(x, Vector::Zero(2), 1, 0.5, *oracle, rng) - vec2(1, 1)).norm() == 0.0);
  // Ten steps with gamma = 0.1 contract by exactly 0.9^10.
  const Vector y10 = inner_loop(x, Vector::Zero(2), 10, 0.1, *oracle, rng);
  const double ratio = (y10 - x).norm() / x.norm();
  CHECK(std::abs(ratio - std::pow(0.9, 10)) < 1e-12);
}

TEST_CASE("direction update is the stated convex combination") {
  CHECK((update_direction(vec2(1, 0), vec2(0, 1), 1.0) - vec2(0, 1)).norm() == 0.0);
  CHECK((update_direction(vec2(1, 0), vec2(0, 1), 0.5) - vec2(0.5, 0.5)).norm() == 0.0);
  // Repeated averaging against a constant w converges geometrically.
  Vector d = vec2(1, 0);
  const Vector w = vec2(0, 1);
  for (int k = 0; k < 50; ++k) d = update_direction(d, w, 0.3);
  CHECK((d - w).norm() == doctest::Approx(std::pow(0.7, 50) * std::sqrt(2.0)).epsilon(1e-10));
  CHECK(update_direction(vec2(3, 0), vec2(0, 4), 0.5).norm() <= 4.0);
}

TEST_CASE("chain update with tau = 1, zero noise, zero displacement resets exactly") {
  const ProblemSpec spec = tracking_spec();
  auto oracle = make_oracle(spec, NoiseModel::zero());
  RngStream rng(1);
  const Vector x = vec2(0.5, -1.0);
  const Vector y = vec2(0.2, 0.3);
  std::vector<Vector> u = {10.0 * Vector::Ones(1)};  // far from the true value
  const auto fresh =
      update_chain(spec, u, x, y, Vector::Zero(4), 1.0, *oracle, rng);
  Vector z(4);
  z << x, y;
  CHECK((fresh[0] - spec.level(1).value(z)).norm() < 1e-14);
}

TEST_CASE("chain update transports exactly through linear levels") {
  // f_1(z) = A z with A = c', so the Taylor remainder vanishes and the
  // tracking error contracts by exactly (1 - tau).
  ProblemSpec spec = tracking_spec();
  Vector c(4);
  c << 1.0, -2.0, 0.5, 3.0;
  spec.levels[0].value = [c](const Vector& z) {
    Vector out(1);
    out[0] = c.dot(z);
    return out;
  };
  spec.levels[0].jacobian_t = [c](const Vector&) { return Matrix(c); };
  auto oracle = make_oracle(spec, NoiseModel::zero());
  RngStream rng(1);
  const Vector x_old = vec2(0.1, 0.2), y_old = vec2(-0.3, 0.7);
  const Vector x_new = vec2(0.4, -0.1), y_new = vec2(0.0, 0.5);
  Vector z_old(4), z_new(4);
  z_old << x_old, y_old;
  z_new << x_new, y_new;
  std::vector<Vector> u = {Vector::Constant(1, 2.5)};
  const double tau = 0.3;
  const auto next = update_chain(spec, u, x_old, y_old, z_new - z_old, tau, *oracle, rng);
  const double err_old = (u[0] - spec.level(1).value(z_old)).norm();
  const double err_new = (next[0] - spec.level(1).value(z_new)).norm();
  CHECK(err_new == doctest::Approx((1.0 - tau) * err_old).epsilon(1e-10));
}

TEST_CASE("constant schedule satisfies and validates the coupling inequalities") {
  const NheConfig nhe{0.25, 5};
  const Schedule s = Schedule::constant(400, 5, 30.0, 0.03, 0.03, nhe);
  REQUIRE(static_cast<int>(s.tau.size()) == 401);
  CHECK(s.tau_at(0) == doctest::Approx(0.03 / 20.0));
  CHECK(s.gamma_at(3) == doctest::Approx(0.03 / 20.0));
  CHECK_NOTHROW(s.validate(1.0, 2.0));
}

TEST_CASE("schedule validation rejects broken sequences") {
  const NheConfig nhe{0.25, 5};
  Schedule s = Schedule::constant(10, 50, 30.0, 0.03, 0.03, nhe);
  CHECK_NOTHROW(s.validate(1.0, 2.0));
  Schedule increasing = s;
  increasing.tau[5] = 2.0 * increasing.tau[4];  // breaks monotonicity (and tau < 1 stays)
  CHECK_THROWS(increasing.validate(1.0, 2.0));
  Schedule big_gamma = s;
  big_gamma.gamma.assign(big_gamma.gamma.size(), 1.5);  // above 2/(mu+L) and above c_gamma tau
  CHECK_THROWS(big_gamma.validate(1.0, 2.0));
  Schedule few_inner = s;
  few_inner.inner = 0;
  CHECK_THROWS(few_inner.validate(1.0, 2.0));
}

TEST_CASE("run with K = 0 emits the initial record and R = 0") {
  const ProblemSpec spec = qb1();
  auto oracle = make_oracle(spec, NoiseModel::zero());
  RngStream rng(5);
  const NheConfig nhe{0.25, 5};
  Schedule s = Schedule::constant(0, 5, 30.0, 0.03, 0.03, nhe);
  AlgoState init = AlgoState::initialize(spec, *oracle, Vector::Zero(spec.x_dim()),
                                         Vector::Zero(spec.y_dim()), nhe, rng);
  const RunTrace trace = run(spec, *oracle, s, init, rng);
  CHECK(trace.records.size() == 1);
  CHECK(trace.output_index == 0);
  CHECK_FALSE(trace.diverged);
  const RunTrace base = run_baseline_double_loop(spec, *oracle, s, init, rng);
  CHECK(base.records.size() == 1);
}

TEST_CASE("every iterate stays feasible under a box constraint") {
  ProblemSpec spec = qb1();
  spec.feasible = FeasibleSet::box(-0.5 * Vector::Ones(spec.x_dim()),
                                   0.5 * Vector::Ones(spec.x_dim()));
  auto oracle = make_oracle(spec, NoiseModel::uniform(1, 0.05, 0.05, 0.05, 0.05, 0.05));
  RngStream rng(2);
  const NheConfig nhe{0.2, 4};
  const Schedule s = Schedule::constant(50, 5, 30.0, 0.03, 0.03, nhe);
  AlgoState init = AlgoState::initialize(spec, *oracle, Vector::Zero(spec.x_dim()),
                                         Vector::Zero(spec.y_dim()), nhe, rng);
  const RunTrace trace = run(spec, *oracle, s, init, rng);
  REQUIRE_FALSE(trace.diverged);
  for (const Vector& x : trace.xs) CHECK(spec.feasible.contains(x, 1e-10));
  CHECK(trace.prox_bound_violations == 0);
}

TEST_CASE("records carry the documented shape and the run is reproducible") {
  const ProblemSpec spec = qb1();
  auto oracle = make_oracle(spec, NoiseModel::uniform(1, 0.1, 0.1, 0.1, 0.1, 0.1));
  const NheConfig nhe{0.2, 4};
  const Schedule s = Schedule::constant(30, 5, 30.0, 0.03, 0.03, nhe);
  RngStream rng_a(7), rng_b(7);
  AlgoState init_a = AlgoState::initialize(spec, *oracle, Vector::Zero(spec.x_dim()),
                                           Vector::Zero(spec.y_dim()), nhe, rng_a);
  oracle->reset_call_counts();
  const RunTrace a = run(spec, *oracle, s, init_a, rng_a);
  AlgoState init_b = AlgoState::initialize(spec, *oracle, Vector::Zero(spec.x_dim()),
                                           Vector::Zero(spec.y_dim()), nhe, rng_b);
  oracle->reset_call_counts();
  const RunTrace b = run(spec, *oracle, s, init_b, rng_b);
  REQUIRE(a.records.size() == 31);
  CHECK(a.output_index == b.output_index);
  CHECK((a.x_final - b.x_final).norm() == 0.0);
  for (std::size_t k = 0; k < a.records.size(); ++k) {
    CHECK(a.records[k].k == static_cast<int>(k));
    CHECK(a.records[k].d_norm_sq == b.records[k].d_norm_sq);
    REQUIRE(a.records[k].v_true.has_value());
  }
}
