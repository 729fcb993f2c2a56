#include "bilinasa/algo.hpp"

#include <chrono>
#include <cmath>
#include <sstream>

#include "bilinasa/diagnostics.hpp"

namespace bilinasa {

namespace {

bool all_finite(const Vector& v) { return v.allFinite(); }

bool state_healthy(const AlgoState& s, double limit) {
  auto ok = [&](const Vector& v) { return all_finite(v) && v.norm() < limit; };
  if (!ok(s.x) || !ok(s.y) || !ok(s.d)) return false;
  for (const Vector& ui : s.u)
    if (!ok(ui)) return false;
  return true;
}

Vector concat(const Vector& a, const Vector& b) {
  Vector out(a.size() + b.size());
  out << a, b;
  return out;
}

void record_iteration(RunTrace& trace, const ProblemSpec& problem, const AlgoState& state,
                      const Vector& z, double beta, bool record_truth) {
  TraceRecord rec;
  rec.k = state.k;
  rec.prox_gap_sq = (z - state.x).squaredNorm();
  rec.d_norm_sq = state.d.squaredNorm();
  if (record_truth && problem.ground_truth) {
    const auto& gt = *problem.ground_truth;
    if (gt.grad_phi) rec.v_true = rec.prox_gap_sq + (state.d - gt.grad_phi(state.x)).squaredNorm();
    if (gt.y_star) rec.y_gap_sq = (state.y - gt.y_star(state.x)).squaredNorm();
  }
  const int T = problem.num_levels();
  rec.chain_err_sq.resize(static_cast<std::size_t>(T));
  for (int i = 1; i <= T; ++i) {
    const Vector next = (i < T) ? state.u[static_cast<std::size_t>(i)]
                                : concat(state.x, state.y);
    rec.chain_err_sq[static_cast<std::size_t>(i - 1)] =
        (state.u[static_cast<std::size_t>(i - 1)] - problem.level(i).value(next)).squaredNorm();
  }
  rec.objective = problem.psi(state.x, state.y);
  // Prox displacement bound, beta^2 ||z - x||^2 <= ||d||^2, holds exactly
  // up to rounding for every projection; count any violation.
  if (beta * beta * rec.prox_gap_sq > rec.d_norm_sq * (1.0 + 1e-9) + 1e-300)
    ++trace.prox_bound_violations;
  trace.records.push_back(std::move(rec));
  trace.xs.push_back(state.x);
  trace.ys.push_back(state.y);
}

void finish_trace(RunTrace& trace, const std::vector<double>& tau, RngStream& rng) {
  std::vector<double> weights(tau.begin(), tau.begin() + static_cast<long>(trace.records.size()));
  trace.output_index = draw_output_index(weights, rng);
  trace.x_final = trace.xs.back();
  trace.x_output = trace.xs[static_cast<std::size_t>(trace.output_index)];
}

}  // namespace

Schedule Schedule::constant(int outer, int inner, double beta, double c_tau,
                            double c_gamma_scale, NheConfig nhe) {
  if (outer < 0) throw std::invalid_argument("Schedule: outer iterations must be >= 0");
  Schedule s;
  s.outer = outer;
  s.inner = inner;
  s.beta = beta;
  s.nhe = nhe;
  const double root = std::sqrt(static_cast<double>(std::max(outer, 1)));
  const double tau = c_tau / root;
  const double gamma = c_gamma_scale / root;
  s.tau.assign(static_cast<std::size_t>(outer) + 1, tau);
  s.gamma.assign(static_cast<std::size_t>(outer) + 1, gamma);
  s.c_gamma = (tau > 0.0) ? std::max(1e-12, gamma / tau) : 1.0;
  return s;
}

void Schedule::validate(double mu_g, double lip_grad_g) const {
  if (outer < 0) throw std::invalid_argument("Schedule: outer iterations must be >= 0");
  if (inner < 1) throw std::invalid_argument("Schedule: inner iterations must be >= 1");
  if (beta <= 0.0) throw std::invalid_argument("Schedule: beta must be positive");
  if (static_cast<int>(tau.size()) < outer + 1 || static_cast<int>(gamma.size()) < outer + 1)
    throw std::invalid_argument("Schedule: tau/gamma must have K+1 entries");
  if (!(tau[0] < 1.0)) throw std::invalid_argument("Schedule: tau_0 must be < 1");
  for (int k = 0; k <= outer; ++k) {
    const double t = tau[static_cast<std::size_t>(k)];
    const double g = gamma[static_cast<std::size_t>(k)];
    if (!(t > 0.0) || t > 1.0)
      throw std::invalid_argument("Schedule: tau entries must lie in (0, 1]");
    if (!(g > 0.0)) throw std::invalid_argument("Schedule: gamma entries must be positive");
    if (k > 0) {
      if (t > tau[static_cast<std::size_t>(k - 1)] + 1e-15)
        throw std::invalid_argument("Schedule: tau must be non-increasing");
      if (g > gamma[static_cast<std::size_t>(k - 1)] + 1e-15)
        throw std::invalid_argument("Schedule: gamma must be non-increasing");
    }
    if (g > c_gamma * t + 1e-15)
      throw std::invalid_argument("Schedule: gamma_k <= c_gamma * tau_k violated");
    if (c_gamma * t > t + 1e-15)
      throw std::invalid_argument("Schedule: c_gamma * tau_k <= tau_k violated");
    if (!(g < 2.0 / (mu_g + lip_grad_g)))
      throw std::invalid_argument("Schedule: gamma must be below 2 / (mu_g + lip_grad_g)");
    const double tau1 = tau[std::min<std::size_t>(1, tau.size() - 1)];
    const double required = (1.0 + 1.0 / (1.0 - tau1)) * t / (2.0 * g * mu_g);
    if (static_cast<double>(inner) < required - 1e-12) {
      std::ostringstream msg;
      msg << "Schedule: inner iterations " << inner << " below required " << required
          << " at k = " << k;
      throw std::invalid_argument(msg.str());
    }
  }
}

AlgoState AlgoState::initialize(const ProblemSpec& problem, const Oracle& oracle, Vector x0,
                                Vector y0, const NheConfig& nhe, RngStream& rng) {
  problem.check_dimensions();
  if (!problem.feasible.contains(x0))
    throw std::invalid_argument("AlgoState: x0 must lie in the feasible set");
  const int T = problem.num_levels();
  AlgoState s;
  s.x = std::move(x0);
  s.y = std::move(y0);
  s.u.resize(static_cast<std::size_t>(T));
  // Seed the chain bottom-up with one noisy evaluation per level.
  Vector z = concat(s.x, s.y);
  for (int i = T; i >= 1; --i) {
    z = oracle.sample_value(i, z, rng);
    s.u[static_cast<std::size_t>(i - 1)] = z;
  }
  s.d = estimate_hypergradient(problem, s.x, s.y, s.u, nhe, oracle, rng).r;
  s.k = 0;
  return s;
}

Vector prox_step(const Vector& x, const Vector& d, double beta, const FeasibleSet& feasible) {
  if (!(beta > 0.0)) throw std::invalid_argument("prox_step: beta must be positive");
  return feasible.project(x - d / beta);
}

Vector inner_loop(const Vector& x, const Vector& y0, int steps, double gamma,
                  const Oracle& oracle, RngStream& rng) {
  Vector y = y0;
  for (int t = 0; t < steps; ++t) y -= gamma * oracle.sample_lower_gradient(x, y, rng);
  return y;
}

Vector update_direction(const Vector& d, const Vector& w, double tau) {
  if (!(tau > 0.0) || tau > 1.0)
    throw std::invalid_argument("update_direction: tau must lie in (0, 1]");
  return (1.0 - tau) * d + tau * w;
}

std::vector<Vector> update_chain(const ProblemSpec& problem, const std::vector<Vector>& u,
                                 const Vector& x_old, const Vector& y_old,
                                 const Vector& displacement_top, double tau,
                                 const Oracle& oracle, RngStream& rng) {
  const int T = problem.num_levels();
  if (static_cast<int>(u.size()) != T)
    throw std::invalid_argument("update_chain: chain length must equal the level count");
  std::vector<Vector> out(u.size());
  // Strict T -> 1 order so the displacement of level i+1 exists when
  // level i updates.
  Vector displacement = displacement_top;
  for (int i = T; i >= 1; --i) {
    const Vector& point = (i < T) ? u[static_cast<std::size_t>(i)] : concat(x_old, y_old);
    const Vector f_sample = oracle.sample_value(i, point, rng);
    const Matrix j_sample = oracle.sample_jacobian(i, point, rng);
    out[static_cast<std::size_t>(i - 1)] = (1.0 - tau) * u[static_cast<std::size_t>(i - 1)] +
                                           tau * f_sample +
                                           j_sample.transpose() * displacement;
    displacement = out[static_cast<std::size_t>(i - 1)] - u[static_cast<std::size_t>(i - 1)];
  }
  return out;
}

RunTrace run(const ProblemSpec& problem, const Oracle& oracle, const Schedule& schedule,
             AlgoState init, RngStream& rng, const RunOptions& options) {
  if (options.enforce_schedule) schedule.validate(problem.lower.mu, problem.lower.lip_grad);
  const auto start = std::chrono::steady_clock::now();
  oracle.reset_call_counts();

  RunTrace trace;
  trace.instance = problem.name;
  trace.seed = rng.seed();
  AlgoState state = std::move(init);

  for (int k = 0; k < schedule.outer; ++k) {
    state.k = k;
    const double tau = schedule.tau_at(k);
    const Vector z = prox_step(state.x, state.d, schedule.beta, problem.feasible);
    record_iteration(trace, problem, state, z, schedule.beta, options.record_ground_truth);

    const Vector x_next = state.x + tau * (z - state.x);
    const Vector y_next =
        inner_loop(x_next, state.y, schedule.inner, schedule.gamma_at(k + 1), oracle, rng);
    const NheResult w =
        estimate_hypergradient(problem, x_next, y_next, state.u, schedule.nhe, oracle, rng);
    const Vector d_next = update_direction(state.d, w.r, tau);
    const Vector displacement = concat(x_next - state.x, y_next - state.y);
    state.u = update_chain(problem, state.u, state.x, state.y, displacement, tau, oracle, rng);
    state.x = x_next;
    state.y = y_next;
    state.d = d_next;

    if (!state_healthy(state, options.divergence_norm)) {
      trace.diverged = true;
      break;
    }
  }
  if (!trace.diverged) {
    state.k = schedule.outer;
    const Vector z = prox_step(state.x, state.d, schedule.beta, problem.feasible);
    record_iteration(trace, problem, state, z, schedule.beta, options.record_ground_truth);
  }
  finish_trace(trace, schedule.tau, rng);
  trace.oracle_calls = oracle.call_counts();
  trace.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return trace;
}

RunTrace run_baseline_double_loop(const ProblemSpec& problem, const Oracle& oracle,
                                  const Schedule& schedule, AlgoState init, RngStream& rng,
                                  const RunOptions& options) {
  if (options.enforce_schedule) schedule.validate(problem.lower.mu, problem.lower.lip_grad);
  const auto start = std::chrono::steady_clock::now();
  oracle.reset_call_counts();

  RunTrace trace;
  trace.instance = problem.name;
  trace.seed = rng.seed();
  AlgoState state = std::move(init);

  for (int k = 0; k < schedule.outer; ++k) {
    state.k = k;
    const double tau = schedule.tau_at(k);
    const Vector z = prox_step(state.x, state.d, schedule.beta, problem.feasible);
    record_iteration(trace, problem, state, z, schedule.beta, options.record_ground_truth);

    const Vector x_next = state.x + tau * (z - state.x);
    const Vector y_next =
        inner_loop(x_next, state.y, schedule.inner, schedule.gamma_at(k + 1), oracle, rng);
    // Fresh chain of one-sample values each step; no averaging anywhere.
    Vector zc = concat(x_next, y_next);
    for (int i = problem.num_levels(); i >= 1; --i) {
      zc = oracle.sample_value(i, zc, rng);
      state.u[static_cast<std::size_t>(i - 1)] = zc;
    }
    state.d =
        estimate_hypergradient(problem, x_next, y_next, state.u, schedule.nhe, oracle, rng).r;
    state.x = x_next;
    state.y = y_next;

    if (!state_healthy(state, options.divergence_norm)) {
      trace.diverged = true;
      break;
    }
  }
  if (!trace.diverged) {
    state.k = schedule.outer;
    const Vector z = prox_step(state.x, state.d, schedule.beta, problem.feasible);
    record_iteration(trace, problem, state, z, schedule.beta, options.record_ground_truth);
  }
  finish_trace(trace, schedule.tau, rng);
  trace.oracle_calls = oracle.call_counts();
  trace.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return trace;
}

}  // namespace bilinasa
