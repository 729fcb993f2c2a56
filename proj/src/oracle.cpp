#include "bilinasa/oracle.hpp"

#include <cmath>
#include <sstream>

namespace bilinasa {

namespace {

void check_point_dim(const CompositionLevel& level, const Vector& point) {
  if (point.size() != level.input_dim) {
    std::ostringstream msg;
    msg << "oracle: level " << level.index << " expects input dim " << level.input_dim
        << ", got " << point.size();
    throw std::invalid_argument(msg.str());
  }
}

void check_xy_dims(const LowerLevel& g, const Vector& x, const Vector& y) {
  if (x.size() != g.x_dim || y.size() != g.y_dim) {
    std::ostringstream msg;
    msg << "oracle: lower level expects dims (" << g.x_dim << ", " << g.y_dim << "), got ("
        << x.size() << ", " << y.size() << ")";
    throw std::invalid_argument(msg.str());
  }
}

}  // namespace

NoiseModel NoiseModel::uniform(int num_levels, double s_F, double s_J, double s_v, double s_Jg,
                               double s_H) {
  NoiseModel n;
  n.sigma_F.assign(static_cast<std::size_t>(num_levels), s_F);
  n.sigma_J.assign(static_cast<std::size_t>(num_levels), s_J);
  n.sigma_v = s_v;
  n.sigma_Jg = s_Jg;
  n.sigma_H = s_H;
  n.validate();
  return n;
}

double NoiseModel::sigma_F_at(int level) const {
  if (is_zero() || sigma_F.empty()) return 0.0;
  return sigma_F.at(static_cast<std::size_t>(level - 1));
}

double NoiseModel::sigma_J_at(int level) const {
  if (is_zero() || sigma_J.empty()) return 0.0;
  return sigma_J.at(static_cast<std::size_t>(level - 1));
}

void NoiseModel::validate() const {
  auto check = [](double s) {
    if (!(s >= 0.0) || !std::isfinite(s))
      throw std::invalid_argument("NoiseModel: sigmas must be finite and non-negative");
  };
  for (double s : sigma_F) check(s);
  for (double s : sigma_J) check(s);
  check(sigma_v);
  check(sigma_Jg);
  check(sigma_H);
}

Vector sample_value(const CompositionLevel& level, const Vector& point, const NoiseModel& noise,
                    RngStream& rng) {
  check_point_dim(level, point);
  Vector out = level.value(point);
  const double s = noise.sigma_F_at(level.index);
  if (s > 0.0) out += s * rng.gaussian_vector(out.size());
  return out;
}

Matrix sample_jacobian(const CompositionLevel& level, const Vector& point,
                       const NoiseModel& noise, RngStream& rng) {
  check_point_dim(level, point);
  Matrix out = level.jacobian_t(point);
  const double s = noise.sigma_J_at(level.index);
  if (s > 0.0) out += s * rng.gaussian_matrix(out.rows(), out.cols());
  return out;
}

Vector sample_lower_gradient(const LowerLevel& g, const Vector& x, const Vector& y,
                             const NoiseModel& noise, RngStream& rng) {
  check_xy_dims(g, x, y);
  Vector out = g.grad_y(x, y);
  const double s = noise.is_zero() ? 0.0 : noise.sigma_v;
  if (s > 0.0) out += s * rng.gaussian_vector(out.size());
  return out;
}

std::pair<Matrix, Matrix> sample_cross_and_hessian(const LowerLevel& g, const Vector& x,
                                                   const Vector& y, const NoiseModel& noise,
                                                   RngStream& rng) {
  check_xy_dims(g, x, y);
  Matrix cross = g.cross_xy(x, y);
  const double s_jg = noise.is_zero() ? 0.0 : noise.sigma_Jg;
  if (s_jg > 0.0) cross += s_jg * rng.gaussian_matrix(cross.rows(), cross.cols());

  Matrix hess = g.hess_yy(x, y);
  const double s_h = noise.is_zero() ? 0.0 : noise.sigma_H;
  if (s_h > 0.0) {
    const auto q = hess.rows();
    // Scale so the configured sigma bounds the Frobenius-norm deviation
    // of the symmetrized noise: E||(E + E^T)/2||_F^2 = s^2 q(q+1)/2.
    const double scale = s_h / std::sqrt(0.5 * static_cast<double>(q) * static_cast<double>(q + 1));
    Matrix e = scale * rng.gaussian_matrix(q, q);
    if (noise.symmetrize_hessian) {
      hess += 0.5 * (e + e.transpose());
    } else {
      hess += e;
    }
  }
  return {std::move(cross), std::move(hess)};
}

OracleSample Oracle::sample_all(const Vector& x, const Vector& y, RngStream& rng) const {
  const ProblemSpec& p = problem();
  const int T = p.num_levels();
  OracleSample s;
  s.seed = rng.seed();
  s.counter = rng.counter();
  s.F.reserve(static_cast<std::size_t>(T));
  s.J.reserve(static_cast<std::size_t>(T));
  Vector xy(x.size() + y.size());
  xy << x, y;
  // Evaluate at the exact composition points (used by tests; the
  // algorithms sample at tracked chain points instead).
  std::vector<Vector> point(static_cast<std::size_t>(T));
  Vector z = xy;
  for (int i = T; i >= 1; --i) {
    point[static_cast<std::size_t>(i - 1)] = z;
    z = p.level(i).value(z);
  }
  for (int i = 1; i <= T; ++i) {
    s.F.push_back(sample_value(i, point[static_cast<std::size_t>(i - 1)], rng));
    s.J.push_back(sample_jacobian(i, point[static_cast<std::size_t>(i - 1)], rng));
  }
  s.v = sample_lower_gradient(x, y, rng);
  s.J_g = sample_cross(x, y, rng);
  s.H = sample_hessian(x, y, rng);
  return s;
}

AdditiveNoiseOracle::AdditiveNoiseOracle(const ProblemSpec& problem, NoiseModel noise)
    : problem_(&problem), noise_(std::move(noise)) {
  noise_.validate();
  if (!noise_.is_zero() && !noise_.sigma_F.empty() &&
      static_cast<int>(noise_.sigma_F.size()) != problem.num_levels())
    throw std::invalid_argument("AdditiveNoiseOracle: sigma_F size must match level count");
}

Vector AdditiveNoiseOracle::sample_value(int level, const Vector& point, RngStream& rng) const {
  ++counts_.value;
  return bilinasa::sample_value(problem_->level(level), point, noise_, rng);
}

Matrix AdditiveNoiseOracle::sample_jacobian(int level, const Vector& point,
                                            RngStream& rng) const {
  ++counts_.jacobian;
  return bilinasa::sample_jacobian(problem_->level(level), point, noise_, rng);
}

Vector AdditiveNoiseOracle::sample_lower_gradient(const Vector& x, const Vector& y,
                                                  RngStream& rng) const {
  ++counts_.lower_gradient;
  return bilinasa::sample_lower_gradient(problem_->lower, x, y, noise_, rng);
}

Matrix AdditiveNoiseOracle::sample_cross(const Vector& x, const Vector& y,
                                         RngStream& rng) const {
  ++counts_.cross;
  NoiseModel cross_only = noise_;
  cross_only.sigma_H = 0.0;
  return bilinasa::sample_cross_and_hessian(problem_->lower, x, y, cross_only, rng).first;
}

Matrix AdditiveNoiseOracle::sample_hessian(const Vector& x, const Vector& y,
                                           RngStream& rng) const {
  ++counts_.hessian;
  NoiseModel hess_only = noise_;
  hess_only.sigma_Jg = 0.0;
  return bilinasa::sample_cross_and_hessian(problem_->lower, x, y, hess_only, rng).second;
}

std::unique_ptr<Oracle> make_oracle(const ProblemSpec& problem, const NoiseModel& noise) {
  if (problem.oracle_factory) return problem.oracle_factory(problem, noise);
  return std::make_unique<AdditiveNoiseOracle>(problem, noise);
}

}  // namespace bilinasa
