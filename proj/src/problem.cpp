#include "bilinasa/problem.hpp"

#include <cmath>
#include <sstream>

namespace bilinasa {

double SmoothnessConstants::compose_lip_psi(const std::vector<double>& lip_f) {
  double prod = 1.0;
  for (double l : lip_f) prod *= l;
  return prod;
}

double SmoothnessConstants::compose_lip_grad_psi(const std::vector<double>& lip_f,
                                                 const std::vector<double>& lip_grad_f) {
  const std::size_t T = lip_f.size();
  if (lip_grad_f.size() != T)
    throw std::invalid_argument("compose_lip_grad_psi: mismatched constant lists");
  double total = 0.0;
  for (std::size_t j = 0; j < T; ++j) {
    double term = lip_grad_f[j];
    for (std::size_t l = 0; l < j; ++l) term *= lip_f[l];
    for (std::size_t l = j + 1; l < T; ++l) term *= lip_f[l] * lip_f[l];
    total += term;
  }
  return total;
}

void SmoothnessConstants::finalize() {
  lip_psi = compose_lip_psi(lip_f);
  lip_grad_psi = compose_lip_grad_psi(lip_f, lip_grad_f);
  if (mu_g <= 0.0) throw std::invalid_argument("SmoothnessConstants: mu_g must be positive");
  lip_ystar = lip_grad_g / mu_g;
}

double ProblemSpec::psi(const Vector& x, const Vector& y) const {
  Vector z(x.size() + y.size());
  z << x, y;
  for (int i = num_levels(); i >= 1; --i) z = level(i).value(z);
  if (z.size() != 1) throw std::logic_error("ProblemSpec::psi: composition is not scalar");
  return z[0];
}

Vector ProblemSpec::grad_psi(const Vector& x, const Vector& y) const {
  const int T = num_levels();
  // Composition points: point[i] is the input of level i+1 (0-based),
  // i.e. f_{i+2} o ... o f_T (x, y).
  std::vector<Vector> point(static_cast<std::size_t>(T));
  Vector z(x.size() + y.size());
  z << x, y;
  for (int i = T; i >= 1; --i) {
    point[static_cast<std::size_t>(i - 1)] = z;
    z = level(i).value(z);
  }
  // Right-to-left product of transposed Jacobians from the scalar end.
  Vector acc = Vector::Ones(1);
  for (int i = 1; i <= T; ++i)
    acc = level(i).jacobian_t(point[static_cast<std::size_t>(i - 1)]) * acc;
  return acc;
}

void ProblemSpec::check_dimensions() const {
  const int T = num_levels();
  if (T == 0) throw std::invalid_argument("ProblemSpec: empty composition chain");
  if (level(1).output_dim != 1)
    throw std::invalid_argument("ProblemSpec: level 1 must produce a scalar");
  for (int i = 1; i < T; ++i) {
    if (level(i + 1).output_dim != level(i).input_dim) {
      std::ostringstream msg;
      msg << "ProblemSpec '" << name << "': level " << i + 1 << " output dim "
          << level(i + 1).output_dim << " != level " << i << " input dim " << level(i).input_dim;
      throw std::invalid_argument(msg.str());
    }
  }
  if (level(T).input_dim != lower.x_dim + lower.y_dim)
    throw std::invalid_argument("ProblemSpec: top level input dim must equal p + q");
  if (feasible.dim() != lower.x_dim)
    throw std::invalid_argument("ProblemSpec: feasible set dimension must equal p");
}

}  // namespace bilinasa
