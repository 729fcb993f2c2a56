// Python bindings for the core library: instances, oracles, the
// hypergradient estimator, the outer loop, and the diagnostics.

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstdint>
#include <optional>
#include <stdexcept>

#include "bilinasa/algo.hpp"
#include "bilinasa/diagnostics.hpp"
#include "bilinasa/instances.hpp"

namespace py = pybind11;
using namespace bilinasa;

namespace {

// Exact tracked chain u^{(1)}..u^{(T)} at (x, y), computed top-down.
std::vector<Vector> exact_chain(const ProblemSpec& spec, const Vector& x, const Vector& y) {
  const int T = spec.num_levels();
  std::vector<Vector> u(static_cast<std::size_t>(T));
  Vector point(x.size() + y.size());
  point << x, y;
  for (int i = T; i >= 1; --i) {
    u[static_cast<std::size_t>(i - 1)] = spec.level(i).value(point);
    point = u[static_cast<std::size_t>(i - 1)];
  }
  return u;
}

NoiseModel noise_from_sigma(const ProblemSpec& spec, double sigma) {
  if (sigma < 0.0) throw std::invalid_argument("sigma must be >= 0");
  if (sigma == 0.0) return NoiseModel::zero();
  return NoiseModel::uniform(spec.num_levels(), sigma, sigma, sigma, sigma, sigma);
}

py::dict trace_to_dict(const RunTrace& trace) {
  py::dict d;
  d["instance"] = trace.instance;
  d["seed"] = trace.seed;
  d["diverged"] = trace.diverged;
  d["output_index"] = trace.output_index;
  d["x_final"] = trace.x_final;
  d["x_output"] = trace.x_output;
  d["prox_bound_violations"] = trace.prox_bound_violations;
  py::list v_true, prox_gap_sq, d_norm_sq, objective;
  for (const TraceRecord& r : trace.records) {
    v_true.append(r.v_true ? py::object(py::float_(*r.v_true)) : py::none());
    prox_gap_sq.append(r.prox_gap_sq);
    d_norm_sq.append(r.d_norm_sq);
    objective.append(r.objective);
  }
  d["v_true"] = v_true;
  d["prox_gap_sq"] = prox_gap_sq;
  d["d_norm_sq"] = d_norm_sq;
  d["objective"] = objective;
  return d;
}

}  // namespace

PYBIND11_MODULE(pybilinasa, m) {
  m.doc() = "Stochastic approximation for nested compositional bi-level optimization";

  py::class_<ProblemSpec>(m, "ProblemSpec")
      .def_property_readonly("name", [](const ProblemSpec& s) { return s.name; })
      .def_property_readonly("manifest", [](const ProblemSpec& s) { return s.manifest; })
      .def_property_readonly("x_dim", &ProblemSpec::x_dim)
      .def_property_readonly("y_dim", &ProblemSpec::y_dim)
      .def_property_readonly("num_levels", &ProblemSpec::num_levels)
      .def("psi", &ProblemSpec::psi, py::arg("x"), py::arg("y"))
      .def("y_star",
           [](const ProblemSpec& s, const Vector& x) {
             if (!s.ground_truth || !s.ground_truth->y_star)
               throw std::runtime_error("instance has no analytic lower-level solution");
             return s.ground_truth->y_star(x);
           },
           py::arg("x"))
      .def("grad_phi",
           [](const ProblemSpec& s, const Vector& x) {
             if (!s.ground_truth || !s.ground_truth->grad_phi)
               throw std::runtime_error("instance has no analytic hypergradient");
             return s.ground_truth->grad_phi(x);
           },
           py::arg("x"));

  m.def("qb1", &qb1, "Canonical quadratic bilevel instance");
  m.def("nc2", &nc2, "Canonical depth-2 nested composition instance");
  m.def("make_quadratic_bilevel", &make_quadratic_bilevel, py::arg("p"), py::arg("q"),
        py::arg("conditioning"), py::arg("seed"));
  m.def("make_nested_composition", &make_nested_composition, py::arg("depth"), py::arg("p"),
        py::arg("q"), py::arg("hidden_dim"), py::arg("seed"));
  m.def("analytic_hypergradient", &analytic_hypergradient, py::arg("problem"), py::arg("x"));

  m.def(
      "estimate_hypergradient",
      [](const ProblemSpec& spec, const Vector& x, double alpha, int steps, double sigma,
         std::uint64_t seed) {
        auto oracle = make_oracle(spec, noise_from_sigma(spec, sigma));
        RngStream rng(seed);
        const Vector y = (spec.ground_truth && spec.ground_truth->y_star)
                             ? spec.ground_truth->y_star(x)
                             : Vector(Vector::Zero(spec.y_dim()));
        const NheConfig cfg{alpha, steps};
        return estimate_hypergradient(spec, x, y, exact_chain(spec, x, y), cfg, *oracle, rng).r;
      },
      py::arg("problem"), py::arg("x"), py::arg("alpha"), py::arg("steps"),
      py::arg("sigma") = 0.0, py::arg("seed") = 1,
      "One hypergradient estimate at (x, y*(x)) with the exact tracked chain");

  m.def(
      "run",
      [](const ProblemSpec& spec, int outer, int inner, double beta, double c_tau,
         double c_gamma, double alpha, int steps, double sigma, std::uint64_t seed,
         std::optional<Vector> x0, bool enforce_schedule) {
        const NoiseModel noise = noise_from_sigma(spec, sigma);
        auto oracle = make_oracle(spec, noise);
        NheConfig nhe;
        nhe.alpha = alpha > 0.0
                        ? alpha
                        : NheConfig::default_alpha(spec.lower.mu, spec.lower.lip_grad,
                                                   noise.sigma_H);
        nhe.steps = steps > 0 ? steps : NheConfig::default_steps(outer);
        const Schedule schedule = Schedule::constant(outer, inner, beta, c_tau, c_gamma, nhe);
        RngStream rng(seed);
        AlgoState init =
            AlgoState::initialize(spec, *oracle, x0 ? *x0 : Vector(Vector::Zero(spec.x_dim())),
                                  Vector::Zero(spec.y_dim()), nhe, rng);
        RunOptions options;
        options.enforce_schedule = enforce_schedule;
        return trace_to_dict(run(spec, *oracle, schedule, init, rng, options));
      },
      py::arg("problem"), py::arg("outer"), py::arg("inner") = 5, py::arg("beta") = 30.0,
      py::arg("c_tau") = 0.4, py::arg("c_gamma") = 0.4, py::arg("alpha") = 0.0,
      py::arg("steps") = 0, py::arg("sigma") = 0.1, py::arg("seed") = 1,
      py::arg("x0") = py::none(), py::arg("enforce_schedule") = true,
      "Full outer loop with a constant schedule; returns the trace as a dict");

  m.def(
      "neumann_bias_curve",
      [](const ProblemSpec& spec, const Vector& x, double alpha, const std::vector<int>& steps) {
        std::vector<std::pair<int, double>> out;
        for (const BiasPoint& b : neumann_bias_curve(spec, x, alpha, steps))
          out.push_back({b.steps, b.bias});
        return out;
      },
      py::arg("problem"), py::arg("x"), py::arg("alpha"), py::arg("steps_list"));

  m.def(
      "truncation_variance_table",
      [](double big_l, const std::vector<int>& steps, int trials, double sigma,
         std::uint64_t seed) {
        RngStream rng(seed);
        std::vector<py::dict> rows;
        for (const auto& r : truncation_variance_table(big_l, steps, trials, sigma, rng)) {
          py::dict d;
          d["steps"] = r.steps;
          d["var_uniform"] = r.var_uniform;
          d["var_averaged"] = r.var_averaged;
          d["lower_bound"] = r.lower_bound;
          rows.push_back(d);
        }
        return rows;
      },
      py::arg("big_l"), py::arg("steps_list"), py::arg("trials"), py::arg("sigma") = 0.0,
      py::arg("seed") = 1);

  m.def(
      "convergence_rate_fit",
      [](const std::vector<std::pair<int, double>>& pts) {
        const RateFit f = convergence_rate_fit(pts);
        py::dict d;
        d["slope"] = f.slope;
        d["intercept"] = f.intercept;
        d["r_squared"] = f.r_squared;
        return d;
      },
      py::arg("mean_vr_by_k"));
}
