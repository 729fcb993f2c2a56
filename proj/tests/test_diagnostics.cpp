#include <doctest.h>

#include <cmath>
#include <sstream>

#include "bilinasa/algo.hpp"
#include "bilinasa/diagnostics.hpp"
#include "bilinasa/instances.hpp"

using namespace bilinasa;

TEST_CASE("optimality measure norm arithmetic") {
  Vector x(2), d(2), g(2);
  x << 1, 2;
  d << 3, 4;
  g = d;
  CHECK(optimality_measure(x, x, d, g) == 0.0);
  g << 0, 0;
  CHECK(optimality_measure(x, x, d, g) == 25.0);
  Vector z = x;
  z[0] += 2.0;
  CHECK(optimality_measure(x, z, d, g) == 29.0);
}

TEST_CASE("output index: uniform weights give uniform mass") {
  const int n = 100000;
  const int bins = 5;
  std::vector<double> weights(bins, 0.2);
  RngStream rng(10);
  std::vector<int> counts(bins, 0);
  for (int t = 0; t < n; ++t) ++counts[static_cast<std::size_t>(draw_output_index(weights, rng))];
  const double p = 1.0 / bins;
  const double band = 3.0 * std::sqrt(p * (1 - p) / n);
  for (int b = 0; b < bins; ++b)
    CHECK(std::abs(static_cast<double>(counts[static_cast<std::size_t>(b)]) / n - p) < band);
}

TEST_CASE("output index: weights (3, 1) put three quarters of the mass on 0") {
  RngStream rng(11);
  const std::vector<double> weights = {3.0, 1.0};
  int zeros = 0;
  const int n = 10000;
  for (int t = 0; t < n; ++t)
    if (draw_output_index(weights, rng) == 0) ++zeros;
  CHECK(std::abs(static_cast<double>(zeros) / n - 0.75) < 0.01);
}

TEST_CASE("output index rejects empty or non-positive weights") {
  RngStream rng(1);
  CHECK_THROWS(draw_output_index({}, rng));
  CHECK_THROWS(draw_output_index({1.0, 0.0}, rng));
  CHECK_THROWS(draw_output_index({1.0, -2.0}, rng));
}

TEST_CASE("bias curve decays monotonically with geometric ratio on the quadratic instance") {
  const ProblemSpec spec = qb1();
  Vector x(spec.x_dim());
  x << 0.4, -0.8;
  const double alpha = NheConfig::default_alpha(spec.lower.mu, spec.lower.lip_grad, 0.0);
  const std::vector<int> steps = {16, 24, 32, 40, 48, 56};
  const auto curve = neumann_bias_curve(spec, x, alpha, steps);
  REQUIRE(curve.size() == steps.size());
  for (std::size_t i = 1; i < curve.size(); ++i) CHECK(curve[i].bias <= curve[i - 1].bias);
  // Doubling M from 8 to 16 should roughly square the contraction factor;
  // fit the decay ratio per unit step instead of relying on one pair.
  std::vector<std::pair<int, double>> pts;
  for (const BiasPoint& b : curve) pts.push_back({b.steps, b.bias});
  // Log-bias versus M (not log M) is linear with slope log(1 - alpha mu).
  double sxx = 0, sxy = 0, sx = 0, sy = 0;
  for (const auto& [m, bias] : pts) {
    sx += m;
    sy += std::log(bias);
    sxx += static_cast<double>(m) * m;
    sxy += m * std::log(bias);
  }
  const double nn = static_cast<double>(pts.size());
  const double slope = (sxy - sx * sy / nn) / (sxx - sx * sx / nn);
  CHECK(slope == doctest::Approx(std::log(1.0 - alpha * spec.lower.mu)).epsilon(0.01));
}

TEST_CASE("truncation variance: noiseless averaged estimator is deterministic") {
  RngStream rng(12);
  const auto table = truncation_variance_table(10.0, {20, 100}, 2000, 0.0, rng);
  REQUIRE(table.size() == 2);
  for (const auto& row : table) {
    CHECK(row.var_averaged < 1e-20);     // deterministic recursion up to rounding
    CHECK(row.var_uniform > 0.0);        // random truncation point
  }
  // M = 100, L = 10: the lower bound (1/M)(M/L - 1)^2 = 0.81 applies.
  CHECK(table[1].lower_bound == doctest::Approx(0.81));
  CHECK(table[1].var_uniform > 0.81);
  // M = 20 <= 2L: bound is positive but small.
  CHECK(table[0].lower_bound == doctest::Approx(0.05));
}

TEST_CASE("rate fit recovers an exact power law and rejects short inputs") {
  std::vector<std::pair<int, double>> pts;
  for (int k : {100, 400, 1600}) pts.push_back({k, 7.0 * std::pow(k, -0.5)});
  const RateFit fit = convergence_rate_fit(pts);
  CHECK(fit.slope == doctest::Approx(-0.5).epsilon(1e-12));
  CHECK(fit.intercept == doctest::Approx(std::log(7.0)).epsilon(1e-10));
  CHECK(fit.r_squared == doctest::Approx(1.0));
  CHECK_THROWS(convergence_rate_fit({{100, 1.0}, {200, 0.5}}));
  CHECK_THROWS(convergence_rate_fit({{100, 1.0}, {200, 0.5}, {400, -0.1}}));
}

namespace {

RunTrace small_trace(std::uint64_t seed) {
  const ProblemSpec spec = qb1();
  auto oracle = make_oracle(spec, NoiseModel::uniform(1, 0.1, 0.1, 0.1, 0.1, 0.1));
  const NheConfig nhe{0.2, 3};
  const Schedule s = Schedule::constant(10, 5, 30.0, 0.03, 0.03, nhe);
  RngStream rng(seed);
  AlgoState init = AlgoState::initialize(spec, *oracle, Vector::Zero(spec.x_dim()),
                                         Vector::Zero(spec.y_dim()), nhe, rng);
  return run(spec, *oracle, s, init, rng);
}

}  // namespace

TEST_CASE("trace CSV is versioned, complete, and byte-identical across reruns") {
  const RunTrace a = small_trace(5);
  const RunTrace b = small_trace(5);
  std::ostringstream osa, osb;
  write_trace_csv(osa, a);
  write_trace_csv(osb, b);
  CHECK(osa.str() == osb.str());
  const std::string text = osa.str();
  CHECK(text.rfind("# schema=1\n", 0) == 0);
  CHECK(text.find("k,prox_gap_sq,d_norm_sq,v_true,y_gap_sq,chain_err_sq_1,objective") !=
        std::string::npos);
  // Two comment lines, one column header, then 11 records.
  int lines = 0;
  for (char c : text)
    if (c == '\n') ++lines;
  CHECK(lines == 3 + 11);
}

TEST_CASE("summary JSON reports seeds and aggregate statistics") {
  std::vector<RunTrace> traces = {small_trace(1), small_trace(2)};
  const std::string s = summarize_traces(traces);
  CHECK(s.find("\"completed\": 2") != std::string::npos);
  CHECK(s.find("\"v_at_output\"") != std::string::npos);
  CHECK(s.find("\"oracle_calls_total\"") != std::string::npos);
}
