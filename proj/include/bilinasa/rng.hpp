#pragma once

#include <cstdint>
#include <random>

#include <Eigen/Core>

namespace bilinasa {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// Counter-based seeded random stream. Streams derived from the same
// (seed, counter) pair produce identical draws; distinct counters give
// statistically independent streams. Each trial owns its own stream, so
// concurrent trials never share generator state.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed, std::uint64_t counter = 0)
      : seed_(seed), counter_(counter), engine_(mix(seed, counter)) {}

  // Independent stream keyed off this stream's identity.
  RngStream substream(std::uint64_t counter) const {
    return RngStream(mix(seed_, counter_), counter);
  }

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

  double uniform() {
    return std::uniform_real_distribution<double>(0.0, 1.0)(engine_);
  }

  double gaussian() { return normal_(engine_); }

  double gamma_draw(double shape) {
    return std::gamma_distribution<double>(shape, 1.0)(engine_);
  }

  std::uint64_t next_u64() { return engine_(); }

  Vector gaussian_vector(Eigen::Index n) {
    Vector v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = gaussian();
    return v;
  }

  Matrix gaussian_matrix(Eigen::Index rows, Eigen::Index cols) {
    Matrix m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
      for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = gaussian();
    return m;
  }

 private:
  static std::uint64_t splitmix(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  static std::uint64_t mix(std::uint64_t seed, std::uint64_t counter) {
    return splitmix(splitmix(seed) ^ splitmix(counter ^ 0xa5a5a5a5a5a5a5a5ULL));
  }

  std::uint64_t seed_;
  std::uint64_t counter_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace bilinasa
