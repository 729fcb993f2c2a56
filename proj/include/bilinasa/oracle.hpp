#pragma once

#include <cstdint>
#include <memory>
#include <utility>
#include <vector>

#include "bilinasa/problem.hpp"
#include "bilinasa/rng.hpp"

namespace bilinasa {

// Noise configuration for the stochastic oracle. All sigmas are
// per-coordinate standard deviations, except sigma_H which bounds the
// Frobenius-norm deviation of the sampled Hessian (the symmetrized
// matrix noise is rescaled accordingly).
struct NoiseModel {
  enum class Kind { kGaussian, kZero };

  Kind kind = Kind::kGaussian;
  std::vector<double> sigma_F;  // one per level, or empty for zero
  std::vector<double> sigma_J;
  double sigma_v = 0.0;
  double sigma_Jg = 0.0;
  double sigma_H = 0.0;
  bool symmetrize_hessian = true;

  static NoiseModel zero() {
    NoiseModel n;
    n.kind = Kind::kZero;
    return n;
  }

  // Same sigma for every level's value/Jacobian outputs.
  static NoiseModel uniform(int num_levels, double s_F, double s_J, double s_v,
                            double s_Jg, double s_H);

  bool is_zero() const { return kind == Kind::kZero; }
  double sigma_F_at(int level) const;  // 1-based level index
  double sigma_J_at(int level) const;
  void validate() const;  // throws on negative or non-finite sigmas
};

// One full draw of the stochastic quantities, with its draw metadata.
struct OracleSample {
  std::vector<Vector> F;  // F^{(i)} in R^{d_{i-1}}
  std::vector<Matrix> J;  // J^{(i)} in R^{d_i x d_{i-1}} (transposed Jacobians)
  Vector v;               // noisy lower-level gradient
  Matrix J_g;             // noisy cross partial, p x q
  Matrix H;               // noisy Hessian in y, q x q, symmetric
  std::uint64_t seed = 0;
  std::uint64_t counter = 0;
};

// Stochastic first/second-order oracle: unbiased noisy evaluations of the
// composition levels and the lower-level derivatives. Implementations are
// immutable after construction apart from call counters; each trial owns
// its own RngStream, so sampling is safe across concurrent trials.
class Oracle {
 public:
  virtual ~Oracle() = default;

  virtual const ProblemSpec& problem() const = 0;
  virtual bool deterministic() const = 0;

  virtual Vector sample_value(int level, const Vector& point, RngStream& rng) const = 0;
  virtual Matrix sample_jacobian(int level, const Vector& point, RngStream& rng) const = 0;
  virtual Vector sample_lower_gradient(const Vector& x, const Vector& y,
                                       RngStream& rng) const = 0;
  virtual Matrix sample_cross(const Vector& x, const Vector& y, RngStream& rng) const = 0;
  virtual Matrix sample_hessian(const Vector& x, const Vector& y, RngStream& rng) const = 0;

  std::pair<Matrix, Matrix> sample_cross_and_hessian(const Vector& x, const Vector& y,
                                                     RngStream& rng) const {
    Matrix c = sample_cross(x, y, rng);
    Matrix h = sample_hessian(x, y, rng);
    return {std::move(c), std::move(h)};
  }

  // One draw of everything, recorded with its stream identity.
  OracleSample sample_all(const Vector& x, const Vector& y, RngStream& rng) const;

  struct CallCounts {
    std::uint64_t value = 0;
    std::uint64_t jacobian = 0;
    std::uint64_t lower_gradient = 0;
    std::uint64_t cross = 0;
    std::uint64_t hessian = 0;
    std::uint64_t total() const { return value + jacobian + lower_gradient + cross + hessian; }
  };

  const CallCounts& call_counts() const { return counts_; }
  void reset_call_counts() const { counts_ = CallCounts{}; }

 protected:
  mutable CallCounts counts_;
};

// Deterministic-function-plus-noise oracle over a ProblemSpec.
class AdditiveNoiseOracle final : public Oracle {
 public:
  AdditiveNoiseOracle(const ProblemSpec& problem, NoiseModel noise);

  const ProblemSpec& problem() const override { return *problem_; }
  const NoiseModel& noise() const { return noise_; }
  bool deterministic() const override { return noise_.is_zero(); }

  Vector sample_value(int level, const Vector& point, RngStream& rng) const override;
  Matrix sample_jacobian(int level, const Vector& point, RngStream& rng) const override;
  Vector sample_lower_gradient(const Vector& x, const Vector& y, RngStream& rng) const override;
  Matrix sample_cross(const Vector& x, const Vector& y, RngStream& rng) const override;
  Matrix sample_hessian(const Vector& x, const Vector& y, RngStream& rng) const override;

 private:
  const ProblemSpec* problem_;
  NoiseModel noise_;
};

// Builds the instance's oracle: the instance-specific factory when one is
// installed, the additive-noise oracle otherwise.
std::unique_ptr<Oracle> make_oracle(const ProblemSpec& problem, const NoiseModel& noise);

// Free-function samplers implementing the oracle contract on bare levels;
// AdditiveNoiseOracle delegates to these.
Vector sample_value(const CompositionLevel& level, const Vector& point, const NoiseModel& noise,
                    RngStream& rng);
Matrix sample_jacobian(const CompositionLevel& level, const Vector& point,
                       const NoiseModel& noise, RngStream& rng);
Vector sample_lower_gradient(const LowerLevel& g, const Vector& x, const Vector& y,
                             const NoiseModel& noise, RngStream& rng);
std::pair<Matrix, Matrix> sample_cross_and_hessian(const LowerLevel& g, const Vector& x,
                                                   const Vector& y, const NoiseModel& noise,
                                                   RngStream& rng);

}  // namespace bilinasa
