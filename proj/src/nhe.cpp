#include "bilinasa/nhe.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace bilinasa {

double NheConfig::max_alpha(double mu, double lip_grad, double sigma_H) {
  if (mu <= 0.0 || lip_grad <= 0.0)
    throw std::invalid_argument("NheConfig: mu and lip_grad must be positive");
  return std::min(mu / (mu * mu + sigma_H * sigma_H), 1.0 / lip_grad);
}

double NheConfig::default_alpha(double mu, double lip_grad, double sigma_H) {
  return 0.5 * max_alpha(mu, lip_grad, sigma_H);
}

int NheConfig::default_steps(int outer_iterations) {
  if (outer_iterations < 1) return 1;
  return std::max(1, static_cast<int>(std::floor(std::log(static_cast<double>(outer_iterations)))));
}

double NheConfig::truncation_factor(double mu) const {
  return std::pow(1.0 - alpha * mu, steps);
}

NheConfig NheConfig::validated(double alpha, int steps, double mu, double lip_grad,
                               double sigma_H) {
  if (steps < 1) throw std::invalid_argument("NheConfig: steps must be >= 1");
  const double bound = max_alpha(mu, lip_grad, sigma_H);
  if (!(alpha > 0.0) || !(alpha < bound)) {
    std::ostringstream msg;
    msg << "NheConfig: alpha " << alpha << " outside (0, " << bound << ")";
    throw std::invalid_argument(msg.str());
  }
  NheConfig c{alpha, steps};
  if (c.truncation_factor(mu) > 0.5) {
    std::ostringstream msg;
    msg << "NheConfig: truncation factor " << c.truncation_factor(mu)
        << " exceeds 1/2; increase steps";
    throw std::invalid_argument(msg.str());
  }
  return c;
}

Vector chain_seed(const ProblemSpec& problem, const std::vector<Vector>& u, const Vector& x,
                  const Vector& y, const Oracle& oracle, RngStream& rng) {
  const int T = problem.num_levels();
  if (static_cast<int>(u.size()) != T)
    throw std::invalid_argument("chain_seed: chain length must equal the level count");
  Vector acc = Vector::Ones(1);
  for (int i = 1; i <= T; ++i) {
    Vector point;
    if (i < T) {
      point = u[static_cast<std::size_t>(i)];  // u^{(i+1)}
    } else {
      point.resize(x.size() + y.size());
      point << x, y;
    }
    acc = oracle.sample_jacobian(i, point, rng) * acc;
  }
  return acc;
}

Vector neumann_recursion(const Vector& r0y, const NheConfig& config,
                         const std::function<Matrix(RngStream&)>& hessian_sampler,
                         RngStream& rng) {
  Vector rbar = Vector::Zero(r0y.size());
  for (int n = 0; n < config.steps; ++n) {
    const Matrix h = hessian_sampler(rng);
    rbar = rbar - config.alpha * (h * rbar) + config.alpha * r0y;
  }
  return rbar;
}

NheResult estimate_hypergradient(const ProblemSpec& problem, const Vector& x, const Vector& y,
                                 const std::vector<Vector>& u, const NheConfig& config,
                                 const Oracle& oracle, RngStream& rng) {
  const int p = problem.x_dim();
  const int q = problem.y_dim();
  NheResult out;
  out.r0 = chain_seed(problem, u, x, y, oracle, rng);
  const Vector r0y = out.r0.tail(q);
  out.rbar = neumann_recursion(
      r0y, config, [&](RngStream& r) { return oracle.sample_hessian(x, y, r); }, rng);
  const Matrix jg = oracle.sample_cross(x, y, rng);
  out.r = out.r0.head(p) - jg * out.rbar;
  return out;
}

}  // namespace bilinasa
