#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "bilinasa/nhe.hpp"
#include "bilinasa/problem.hpp"
#include "bilinasa/trace.hpp"

namespace bilinasa {

// ||z - x||^2 + ||d - grad_phi_true||^2.
double optimality_measure(const Vector& x, const Vector& z, const Vector& d,
                          const Vector& grad_phi_true);

// Integer in {0..n-1} with P(R = k) proportional to weights[k]. Throws on
// empty or non-positive weights.
int draw_output_index(const std::vector<double>& weights, RngStream& rng);

struct BiasPoint {
  int steps = 0;     // M
  double bias = 0.0;  // ||r(M) - grad Phi(x)||
};

// Zero-noise hypergradient bias as a function of the recursion length,
// evaluated at the exact composition chain and y = y*(x).
std::vector<BiasPoint> neumann_bias_curve(const ProblemSpec& problem, const Vector& x,
                                          double alpha, const std::vector<int>& steps_list);

struct TruncationVarianceRow {
  int steps = 0;              // M
  double var_uniform = 0.0;   // uniform-truncation estimator
  double var_averaged = 0.0;  // weighted-average recursion estimator
  double lower_bound = 0.0;   // (1/M)(M/L - 1)^2, vacuous for M <= L
};

// Scalar inverse-estimation experiment contrasting the uniform-truncation
// Neumann estimator, whose variance grows with M, against the weighted-
// average recursion, whose variance stays bounded. `sigma` perturbs the
// matrix draws of both estimators identically (0 reproduces the noiseless
// construction).
std::vector<TruncationVarianceRow> truncation_variance_table(double big_l,
                                                             const std::vector<int>& steps_list,
                                                             int trials, double sigma,
                                                             RngStream& rng);

struct RateFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r_squared = 0.0;
};

// Least-squares fit of log(mean V_R) against log K. Needs at least three
// grid points.
RateFit convergence_rate_fit(const std::vector<std::pair<int, double>>& mean_vr_by_k);

// CSV trace emission; header carries "# schema=1" and fixed columns.
void write_trace_csv(std::ostream& os, const RunTrace& trace);
void write_trace_csv_file(const std::string& path, const RunTrace& trace);

// Structured-text summary (JSON) over a set of traces of one experiment.
std::string summarize_traces(const std::vector<RunTrace>& traces);

}  // namespace bilinasa
