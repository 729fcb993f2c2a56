#include "bilinasa/diagnostics.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <ostream>
#include <stdexcept>

#include <json.hpp>

namespace bilinasa {

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

double mean_of(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double std_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double acc = 0.0;
  for (double x : v) acc += (x - m) * (x - m);
  return std::sqrt(acc / static_cast<double>(v.size() - 1));
}

}  // namespace

double optimality_measure(const Vector& x, const Vector& z, const Vector& d,
                          const Vector& grad_phi_true) {
  return (z - x).squaredNorm() + (d - grad_phi_true).squaredNorm();
}

int draw_output_index(const std::vector<double>& weights, RngStream& rng) {
  if (weights.empty()) throw std::invalid_argument("draw_output_index: empty weight sequence");
  double total = 0.0;
  for (double w : weights) {
    if (!(w > 0.0)) throw std::invalid_argument("draw_output_index: weights must be positive");
    total += w;
  }
  const double target = rng.uniform() * total;
  double acc = 0.0;
  for (std::size_t k = 0; k < weights.size(); ++k) {
    acc += weights[k];
    if (target < acc) return static_cast<int>(k);
  }
  return static_cast<int>(weights.size()) - 1;
}

std::vector<BiasPoint> neumann_bias_curve(const ProblemSpec& problem, const Vector& x,
                                          double alpha, const std::vector<int>& steps_list) {
  if (!problem.ground_truth || !problem.ground_truth->grad_phi || !problem.ground_truth->y_star)
    throw std::invalid_argument("neumann_bias_curve: analytic ground truth required");
  const auto oracle = make_oracle(problem, NoiseModel::zero());
  const Vector y = problem.ground_truth->y_star(x);
  const Vector grad_phi = problem.ground_truth->grad_phi(x);
  // Exact composition chain.
  const int T = problem.num_levels();
  std::vector<Vector> u(static_cast<std::size_t>(T));
  Vector z(x.size() + y.size());
  z << x, y;
  for (int i = T; i >= 1; --i) {
    z = problem.level(i).value(z);
    u[static_cast<std::size_t>(i - 1)] = z;
  }
  RngStream rng(0);
  std::vector<BiasPoint> out;
  out.reserve(steps_list.size());
  for (int m : steps_list) {
    const NheConfig cfg{alpha, m};
    const NheResult res = estimate_hypergradient(problem, x, y, u, cfg, *oracle, rng);
    out.push_back({m, (res.r - grad_phi).norm()});
  }
  return out;
}

std::vector<TruncationVarianceRow> truncation_variance_table(double big_l,
                                                             const std::vector<int>& steps_list,
                                                             int trials, double sigma,
                                                             RngStream& rng) {
  if (!(big_l > 1.0)) throw std::invalid_argument("truncation_variance_table: L must exceed 1");
  if (trials < 2) throw std::invalid_argument("truncation_variance_table: need >= 2 trials");
  const double inv_l = 1.0 / big_l;
  std::vector<TruncationVarianceRow> table;
  table.reserve(steps_list.size());
  for (int m : steps_list) {
    std::vector<double> uniform(static_cast<std::size_t>(trials));
    std::vector<double> averaged(static_cast<std::size_t>(trials));
    for (int t = 0; t < trials; ++t) {
      // Uniform-truncation estimator: truncate the product at a random
      // length p, rescaled by M.
      const int p = static_cast<int>(rng.uniform() * m);
      double prod = static_cast<double>(m) * inv_l;
      for (int i = 0; i < p; ++i) prod *= 1.0 - inv_l * (1.0 + sigma * rng.gaussian());
      uniform[static_cast<std::size_t>(t)] = prod;
      // Weighted-average recursion with the same step and draw law.
      double state = 0.0;
      for (int n = 0; n < m; ++n)
        state += -inv_l * (1.0 + sigma * rng.gaussian()) * state + inv_l;
      averaged[static_cast<std::size_t>(t)] = state;
    }
    TruncationVarianceRow row;
    row.steps = m;
    const double var_u = std_of(uniform);
    const double var_a = std_of(averaged);
    row.var_uniform = var_u * var_u;
    row.var_averaged = var_a * var_a;
    const double ratio = static_cast<double>(m) * inv_l - 1.0;
    row.lower_bound = (ratio > 0.0) ? ratio * ratio / static_cast<double>(m) : 0.0;
    table.push_back(row);
  }
  return table;
}

RateFit convergence_rate_fit(const std::vector<std::pair<int, double>>& mean_vr_by_k) {
  if (mean_vr_by_k.size() < 3)
    throw std::invalid_argument("convergence_rate_fit: need at least three grid points");
  const std::size_t n = mean_vr_by_k.size();
  std::vector<double> xs(n), ys(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (mean_vr_by_k[i].first < 1 || !(mean_vr_by_k[i].second > 0.0))
      throw std::invalid_argument("convergence_rate_fit: values must be positive");
    xs[i] = std::log(static_cast<double>(mean_vr_by_k[i].first));
    ys[i] = std::log(mean_vr_by_k[i].second);
  }
  const double mx = mean_of(xs);
  const double my = mean_of(ys);
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (xs[i] - mx) * (xs[i] - mx);
    sxy += (xs[i] - mx) * (ys[i] - my);
    syy += (ys[i] - my) * (ys[i] - my);
  }
  RateFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  fit.r_squared = (syy > 0.0) ? (sxy * sxy) / (sxx * syy) : 1.0;
  return fit;
}

void write_trace_csv(std::ostream& os, const RunTrace& trace) {
  os << "# schema=1\n";
  os << "# instance=" << trace.instance << " seed=" << trace.seed
     << " diverged=" << (trace.diverged ? 1 : 0) << " output_index=" << trace.output_index
     << "\n";
  const std::size_t levels = trace.records.empty() ? 0 : trace.records[0].chain_err_sq.size();
  os << "k,prox_gap_sq,d_norm_sq,v_true,y_gap_sq";
  for (std::size_t i = 1; i <= levels; ++i) os << ",chain_err_sq_" << i;
  os << ",objective\n";
  for (const TraceRecord& rec : trace.records) {
    os << rec.k << ',' << fmt_double(rec.prox_gap_sq) << ',' << fmt_double(rec.d_norm_sq) << ','
       << (rec.v_true ? fmt_double(*rec.v_true) : "nan") << ','
       << (rec.y_gap_sq ? fmt_double(*rec.y_gap_sq) : "nan");
    for (double e : rec.chain_err_sq) os << ',' << fmt_double(e);
    os << ',' << fmt_double(rec.objective) << '\n';
  }
}

void write_trace_csv_file(const std::string& path, const RunTrace& trace) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open trace file: " + path);
  write_trace_csv(os, trace);
}

std::string summarize_traces(const std::vector<RunTrace>& traces) {
  nlohmann::json j;
  if (!traces.empty()) j["instance"] = traces[0].instance;
  std::vector<double> final_objective, v_at_output, final_v;
  std::vector<std::uint64_t> seeds;
  int diverged = 0;
  std::uint64_t total_calls = 0;
  for (const RunTrace& t : traces) {
    seeds.push_back(t.seed);
    if (t.diverged) {
      ++diverged;
      continue;
    }
    final_objective.push_back(t.final_record().objective);
    total_calls += t.oracle_calls.total();
    const auto& out_rec = t.records[static_cast<std::size_t>(t.output_index)];
    if (out_rec.v_true) v_at_output.push_back(*out_rec.v_true);
    if (t.final_record().v_true) final_v.push_back(*t.final_record().v_true);
  }
  j["seeds"] = seeds;
  j["diverged"] = diverged;
  j["completed"] = traces.size() - static_cast<std::size_t>(diverged);
  j["oracle_calls_total"] = total_calls;
  if (!final_objective.empty()) {
    j["objective_final"] = {{"mean", mean_of(final_objective)}, {"std", std_of(final_objective)}};
  }
  if (!v_at_output.empty()) {
    j["v_at_output"] = {{"mean", mean_of(v_at_output)}, {"std", std_of(v_at_output)}};
  }
  if (!final_v.empty()) {
    j["v_final"] = {{"mean", mean_of(final_v)}, {"std", std_of(final_v)}};
  }
  return j.dump(2);
}

}  // namespace bilinasa
