// Command-line front end: configured experiment runs, K-grid sweeps, the
// robust-regression comparison, and the self-check suite.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <Eigen/Dense>
#include <json.hpp>

#include "bilinasa/algo.hpp"
#include "bilinasa/diagnostics.hpp"
#include "bilinasa/instances.hpp"

namespace fs = std::filesystem;
using namespace bilinasa;

namespace {

// ---------------------------------------------------------------------------
// Config: flat key-value text with [section] headers.

class Config {
 public:
  static Config from_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open config file: " + path);
    Config cfg;
    std::string line, section;
    int lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line = line.substr(0, hash);
      line = trim(line);
      if (line.empty()) continue;
      if (line.front() == '[' && line.back() == ']') {
        section = trim(line.substr(1, line.size() - 2));
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        std::ostringstream msg;
        msg << path << ":" << lineno << ": expected 'key = value', got '" << line << "'";
        throw std::runtime_error(msg.str());
      }
      const std::string key = trim(line.substr(0, eq));
      if (key.empty()) {
        std::ostringstream msg;
        msg << path << ":" << lineno << ": empty key";
        throw std::runtime_error(msg.str());
      }
      cfg.values_[section.empty() ? key : section + "." + key] = trim(line.substr(eq + 1));
    }
    return cfg;
  }

  std::string get(const std::string& key, const std::string& fallback) const {
    const auto it = values_.find(key);
    const std::string v = (it != values_.end()) ? it->second : fallback;
    resolved_[key] = v;
    return v;
  }

  double get_double(const std::string& key, double fallback) const {
    const std::string v = get(key, format_double(fallback));
    try {
      return std::stod(v);
    } catch (const std::exception&) {
      throw std::runtime_error("config field '" + key + "': not a number: '" + v + "'");
    }
  }

  int get_int(const std::string& key, int fallback) const {
    const std::string v = get(key, std::to_string(fallback));
    try {
      return std::stoi(v);
    } catch (const std::exception&) {
      throw std::runtime_error("config field '" + key + "': not an integer: '" + v + "'");
    }
  }

  // Echo with every queried default materialized, grouped by section.
  std::string resolved() const {
    std::map<std::string, std::map<std::string, std::string>> by_section;
    for (const auto& [k, v] : resolved_) {
      const auto dot = k.find('.');
      if (dot == std::string::npos)
        by_section[""][k] = v;
      else
        by_section[k.substr(0, dot)][k.substr(dot + 1)] = v;
    }
    std::ostringstream os;
    for (const auto& [section, kv] : by_section) {
      if (!section.empty()) os << "[" << section << "]\n";
      for (const auto& [k, v] : kv) os << k << " = " << v << "\n";
      os << "\n";
    }
    return os.str();
  }

  static std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
  }

 private:
  static std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
  }

  std::map<std::string, std::string> values_;
  mutable std::map<std::string, std::string> resolved_;
};

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) {
    const auto dash = part.find('-', 1);
    if (dash != std::string::npos) {
      const std::uint64_t lo = std::stoull(part.substr(0, dash));
      const std::uint64_t hi = std::stoull(part.substr(dash + 1));
      if (hi < lo) throw std::runtime_error("seed range is reversed: " + part);
      for (std::uint64_t s = lo; s <= hi; ++s) seeds.push_back(s);
    } else if (!part.empty()) {
      seeds.push_back(std::stoull(part));
    }
  }
  if (seeds.empty()) throw std::runtime_error("no seeds given");
  return seeds;
}

std::vector<int> parse_int_list(const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) {
    if (!part.empty()) out.push_back(std::stoi(part));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Instance and schedule construction from config.

struct InstanceBundle {
  ProblemSpec spec;
  std::shared_ptr<DroInstance> dro;  // set only for the dro family
};

InstanceBundle build_instance(const Config& cfg) {
  const std::string family = cfg.get("instance.family", "qb");
  InstanceBundle b;
  if (family == "qb") {
    b.spec = make_quadratic_bilevel(
        cfg.get_int("instance.p", 2), cfg.get_int("instance.q", 2),
        cfg.get_double("instance.conditioning", 2.0),
        static_cast<std::uint64_t>(cfg.get_int("instance.seed", 1)));
  } else if (family == "nc") {
    b.spec = make_nested_composition(
        cfg.get_int("instance.depth", 2), cfg.get_int("instance.p", 3),
        cfg.get_int("instance.q", 2), cfg.get_int("instance.hidden", 4),
        static_cast<std::uint64_t>(cfg.get_int("instance.seed", 2)));
  } else if (family == "dro") {
    DroConfig dc;
    dc.n_train = cfg.get_int("instance.n_train", dc.n_train);
    dc.input_dim = cfg.get_int("instance.input_dim", dc.input_dim);
    dc.n_indices = cfg.get_int("instance.n_indices", dc.n_indices);
    dc.c = cfg.get_double("instance.c", dc.c);
    dc.lambda = cfg.get_double("instance.lambda", dc.lambda);
    dc.feature_kind = cfg.get("instance.feature", dc.feature_kind);
    dc.width = cfg.get_int("instance.width", dc.width);
    dc.kappa = cfg.get_double("instance.kappa", dc.kappa);
    dc.mu_reg = cfg.get_double("instance.mu_reg", dc.mu_reg);
    dc.train_noise = cfg.get_double("instance.train_noise", dc.train_noise);
    dc.test_noise = cfg.get_double("instance.test_noise", dc.test_noise);
    dc.seed = static_cast<std::uint64_t>(cfg.get_int("instance.seed", 0));
    b.dro = make_dro_regression(dc);
    b.spec = b.dro->spec;
  } else {
    throw std::runtime_error("unknown instance family '" + family + "' (qb | nc | dro)");
  }
  return b;
}

NoiseModel build_noise(const Config& cfg, int num_levels, bool zero_noise) {
  if (zero_noise) {
    cfg.get("noise.sigma", "0");  // materialize the override into the echo
    return NoiseModel::zero();
  }
  const double sigma = cfg.get_double("noise.sigma", 0.1);
  NoiseModel n = NoiseModel::uniform(
      num_levels, cfg.get_double("noise.sigma_F", sigma), cfg.get_double("noise.sigma_J", sigma),
      cfg.get_double("noise.sigma_v", sigma), cfg.get_double("noise.sigma_Jg", sigma),
      cfg.get_double("noise.sigma_H", sigma));
  n.validate();
  return n;
}

NheConfig resolve_nhe(const Config& cfg, const ProblemSpec& spec, const NoiseModel& noise,
                      int outer) {
  const std::string alpha_text = cfg.get("schedule.alpha", "auto");
  const std::string m_text = cfg.get("schedule.M", "log");
  const double sigma_h = noise.is_zero() ? 0.0 : noise.sigma_H;
  NheConfig nhe;
  nhe.alpha = (alpha_text == "auto")
                  ? NheConfig::default_alpha(spec.lower.mu, spec.lower.lip_grad, sigma_h)
                  : std::stod(alpha_text);
  nhe.steps = (m_text == "log") ? NheConfig::default_steps(std::max(outer, 2)) : std::stoi(m_text);
  if (!(nhe.alpha > 0.0) || nhe.steps < 1)
    throw std::runtime_error("invalid schedule.alpha / schedule.M");
  return nhe;
}

Schedule build_schedule(const Config& cfg, const ProblemSpec& spec, const NoiseModel& noise,
                        std::optional<int> outer_override = std::nullopt) {
  const int outer = outer_override ? *outer_override : cfg.get_int("schedule.K", 200);
  const Schedule s = Schedule::constant(
      outer, cfg.get_int("schedule.N", 5), cfg.get_double("schedule.beta", 30.0),
      cfg.get_double("schedule.c_tau", 0.03), cfg.get_double("schedule.c_gamma", 0.03),
      resolve_nhe(cfg, spec, noise, outer));
  return s;
}

// ---------------------------------------------------------------------------
// Arms and parallel seed execution.

RunTrace run_single_level_arm(const ProblemSpec& problem, const Oracle& oracle,
                              const Schedule& schedule, AlgoState init, RngStream& rng,
                              const RunOptions& options) {
  // Lower-level-free control arm: y never moves and the hypergradient
  // correction is dropped; only the partial x-gradient drives the prox.
  RunTrace trace;
  trace.instance = problem.name;
  trace.seed = rng.seed();
  AlgoState state = std::move(init);
  const int p = problem.x_dim();
  for (int k = 0; k < schedule.outer; ++k) {
    state.k = k;
    const double tau = schedule.tau_at(k);
    const Vector z = prox_step(state.x, state.d, schedule.beta, problem.feasible);
    // Inline recording identical to the main loop's layout.
    {
      TraceRecord rec;
      rec.k = k;
      rec.prox_gap_sq = (z - state.x).squaredNorm();
      rec.d_norm_sq = state.d.squaredNorm();
      rec.chain_err_sq.assign(static_cast<std::size_t>(problem.num_levels()), 0.0);
      rec.objective = problem.psi(state.x, state.y);
      trace.records.push_back(std::move(rec));
      trace.xs.push_back(state.x);
      trace.ys.push_back(state.y);
    }
    const Vector x_next = state.x + tau * (z - state.x);
    const Vector w = chain_seed(problem, state.u, x_next, state.y, oracle, rng).head(p);
    state.d = update_direction(state.d, w, tau);
    const Vector displacement =
        (Vector(p + problem.y_dim()) << x_next - state.x, Vector::Zero(problem.y_dim()))
            .finished();
    state.u = update_chain(problem, state.u, state.x, state.y, displacement, tau, oracle, rng);
    state.x = x_next;
    if (!state.x.allFinite() || state.x.norm() > options.divergence_norm) {
      trace.diverged = true;
      break;
    }
  }
  if (!trace.diverged) {
    TraceRecord rec;
    rec.k = schedule.outer;
    const Vector z = prox_step(state.x, state.d, schedule.beta, problem.feasible);
    rec.prox_gap_sq = (z - state.x).squaredNorm();
    rec.d_norm_sq = state.d.squaredNorm();
    rec.chain_err_sq.assign(static_cast<std::size_t>(problem.num_levels()), 0.0);
    rec.objective = problem.psi(state.x, state.y);
    trace.records.push_back(std::move(rec));
    trace.xs.push_back(state.x);
    trace.ys.push_back(state.y);
  }
  std::vector<double> weights(schedule.tau.begin(),
                              schedule.tau.begin() + static_cast<long>(trace.records.size()));
  trace.output_index = draw_output_index(weights, rng);
  trace.x_final = trace.xs.back();
  trace.x_output = trace.xs[static_cast<std::size_t>(trace.output_index)];
  trace.oracle_calls = oracle.call_counts();
  return trace;
}

RunTrace run_one_seed(const ProblemSpec& spec, const NoiseModel& noise, const Schedule& schedule,
                      const std::string& arm, std::uint64_t seed, const RunOptions& options,
                      double x0_scale) {
  auto oracle = make_oracle(spec, noise);
  RngStream rng(seed);
  // A zero start is a stationary saddle for feature-learning instances
  // (zero weights give identically zero features), so those runs start
  // from a small random point. The point is shared across seeds so that
  // per-seed spread reflects algorithmic randomness only.
  RngStream x0_rng(0x78303030, 0);
  const Vector x0 =
      (x0_scale > 0.0)
          ? Vector(spec.feasible.project(x0_scale * x0_rng.gaussian_vector(spec.x_dim())))
          : Vector(Vector::Zero(spec.x_dim()));
  AlgoState init =
      AlgoState::initialize(spec, *oracle, x0, Vector::Zero(spec.y_dim()), schedule.nhe, rng);
  if (arm == "bilinasa") return run(spec, *oracle, schedule, std::move(init), rng, options);
  if (arm == "baseline-double-loop")
    return run_baseline_double_loop(spec, *oracle, schedule, std::move(init), rng, options);
  if (arm == "single-level-nested")
    return run_single_level_arm(spec, *oracle, schedule, std::move(init), rng, options);
  throw std::runtime_error("unknown arm '" + arm +
                           "' (bilinasa | baseline-double-loop | single-level-nested)");
}

std::vector<RunTrace> run_seeds(const ProblemSpec& spec, const NoiseModel& noise,
                                const Schedule& schedule, const std::string& arm,
                                const std::vector<std::uint64_t>& seeds, int jobs,
                                const RunOptions& options, double x0_scale = 0.0) {
  // Validate once up front so config errors surface before threads start.
  if (options.enforce_schedule) schedule.validate(spec.lower.mu, spec.lower.lip_grad);
  std::vector<RunTrace> traces(seeds.size());
  std::vector<std::string> errors(seeds.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= seeds.size()) return;
      try {
        traces[i] = run_one_seed(spec, noise, schedule, arm, seeds[i], options, x0_scale);
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    }
  };
  const int n_workers = std::max(1, std::min<int>(jobs, static_cast<int>(seeds.size())));
  std::vector<std::thread> pool;
  for (int t = 0; t < n_workers; ++t) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  for (std::size_t i = 0; i < seeds.size(); ++i)
    if (!errors[i].empty())
      throw std::runtime_error("seed " + std::to_string(seeds[i]) + ": " + errors[i]);
  return traces;
}

void write_artifacts(const fs::path& out_dir, const Config& cfg,
                     const std::vector<RunTrace>& traces, const nlohmann::json& extra) {
  fs::create_directories(out_dir);
  for (const RunTrace& t : traces)
    write_trace_csv_file((out_dir / ("seed_" + std::to_string(t.seed) + ".csv")).string(), t);
  nlohmann::json summary = nlohmann::json::parse(summarize_traces(traces));
  for (const auto& [k, v] : extra.items()) summary[k] = v;
  std::ofstream js(out_dir / "summary.json", std::ios::binary);
  js << summary.dump(2) << "\n";
  std::ofstream rc(out_dir / "resolved.ini", std::ios::binary);
  rc << cfg.resolved();
}

double mean_v_at_output(const std::vector<RunTrace>& traces) {
  double acc = 0.0;
  int n = 0;
  for (const RunTrace& t : traces) {
    if (t.diverged) continue;
    const auto& rec = t.records[static_cast<std::size_t>(t.output_index)];
    if (rec.v_true) {
      acc += *rec.v_true;
      ++n;
    }
  }
  if (n == 0) throw std::runtime_error("no completed traces with ground truth");
  return acc / n;
}

// ---------------------------------------------------------------------------
// Verbs.

struct CommonArgs {
  std::string config_path;
  std::string seeds_text;
  std::string out_dir;
  int jobs = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  bool zero_noise = false;
};

int verb_run(const CommonArgs& args) {
  const Config cfg =
      args.config_path.empty() ? Config{} : Config::from_file(args.config_path);
  const InstanceBundle inst = build_instance(cfg);
  const NoiseModel noise = build_noise(cfg, inst.spec.num_levels(), args.zero_noise);
  const Schedule schedule = build_schedule(cfg, inst.spec, noise);
  const std::string arm = cfg.get("run.arm", "bilinasa");
  const std::vector<std::uint64_t> seeds =
      parse_seeds(!args.seeds_text.empty() ? args.seeds_text : cfg.get("run.seeds", "1-5"));
  const std::string out =
      !args.out_dir.empty() ? args.out_dir : cfg.get("run.out", "artifacts/run");
  RunOptions options;
  options.enforce_schedule = inst.dro == nullptr;
  const double x0_scale = cfg.get_double("run.x0_scale", inst.dro ? 0.5 : 0.0);

  const auto traces =
      run_seeds(inst.spec, noise, schedule, arm, seeds, args.jobs, options, x0_scale);
  nlohmann::json extra;
  extra["arm"] = arm;
  extra["schedule"] = {{"K", schedule.outer},   {"N", schedule.inner},
                       {"beta", schedule.beta}, {"tau_0", schedule.tau_at(0)},
                       {"alpha", schedule.nhe.alpha}, {"M", schedule.nhe.steps}};
  extra["instance_manifest"] = inst.spec.manifest;
  write_artifacts(out, cfg, traces, extra);
  std::cout << "wrote " << traces.size() << " traces to " << out << "\n";
  int diverged = 0;
  for (const auto& t : traces) diverged += t.diverged ? 1 : 0;
  if (diverged > 0) std::cout << diverged << " seed(s) diverged (recorded, skipped)\n";
  return 0;
}

int verb_sweep(const CommonArgs& args) {
  const Config cfg =
      args.config_path.empty() ? Config{} : Config::from_file(args.config_path);
  const InstanceBundle inst = build_instance(cfg);
  if (inst.dro) throw std::runtime_error("sweep needs an instance with analytic ground truth");
  const NoiseModel noise = build_noise(cfg, inst.spec.num_levels(), args.zero_noise);
  const std::vector<int> grid = parse_int_list(cfg.get("sweep.grid", "250,1000,4000"));
  if (grid.size() < 3) throw std::runtime_error("sweep.grid needs at least three K values");
  const std::vector<std::uint64_t> seeds =
      parse_seeds(!args.seeds_text.empty() ? args.seeds_text : cfg.get("run.seeds", "1-20"));
  const std::string arm = cfg.get("run.arm", "bilinasa");
  const std::string out =
      !args.out_dir.empty() ? args.out_dir : cfg.get("run.out", "artifacts/sweep");

  std::vector<std::pair<int, double>> points;
  fs::create_directories(out);
  std::ofstream table(fs::path(out) / "sweep.csv", std::ios::binary);
  table << "# schema=1\nK,mean_v_at_output,seeds\n";
  for (int k_outer : grid) {
    const Schedule schedule = build_schedule(cfg, inst.spec, noise, k_outer);
    const auto traces =
        run_seeds(inst.spec, noise, schedule, arm, seeds, args.jobs, RunOptions{});
    const double v = mean_v_at_output(traces);
    points.push_back({k_outer, v});
    table << k_outer << ',' << Config::format_double(v) << ',' << seeds.size() << '\n';
    std::cout << "K = " << k_outer << ": mean V_R = " << v << "\n";
  }
  const RateFit fit = convergence_rate_fit(points);
  nlohmann::json j;
  j["slope"] = fit.slope;
  j["intercept"] = fit.intercept;
  j["r_squared"] = fit.r_squared;
  std::ofstream js(fs::path(out) / "fit.json", std::ios::binary);
  js << j.dump(2) << "\n";
  std::ofstream rc(fs::path(out) / "resolved.ini", std::ios::binary);
  rc << cfg.resolved();
  std::cout << "log-log slope " << fit.slope << " (R^2 = " << fit.r_squared << ")\n";
  return 0;
}

struct ArmResult {
  std::string name;
  std::vector<double> losses;  // shifted-test loss per seed
  double mean = 0.0, stderr_mean = 0.0;
};

ArmResult evaluate_dro_arm(const std::string& name, const Config& cfg, double lambda,
                           const std::vector<std::uint64_t>& seeds, int jobs, bool zero_noise) {
  // Rebuild the instance at the requested robustness weight; data and
  // feature initialization depend only on instance.seed, so both arms see
  // identical training sets.
  DroConfig dc;
  dc.n_train = cfg.get_int("instance.n_train", dc.n_train);
  dc.input_dim = cfg.get_int("instance.input_dim", dc.input_dim);
  dc.n_indices = cfg.get_int("instance.n_indices", dc.n_indices);
  dc.c = cfg.get_double("instance.c", dc.c);
  dc.feature_kind = cfg.get("instance.feature", dc.feature_kind);
  dc.width = cfg.get_int("instance.width", dc.width);
  dc.kappa = cfg.get_double("instance.kappa", dc.kappa);
  dc.mu_reg = cfg.get_double("instance.mu_reg", dc.mu_reg);
  dc.train_noise = cfg.get_double("instance.train_noise", dc.train_noise);
  dc.test_noise = cfg.get_double("instance.test_noise", dc.test_noise);
  dc.seed = static_cast<std::uint64_t>(cfg.get_int("instance.seed", 0));
  dc.lambda = lambda;
  auto inst = make_dro_regression(dc);

  const NoiseModel noise =
      zero_noise ? NoiseModel::zero() : NoiseModel{};  // non-zero kind => subsampling
  const Schedule schedule = build_schedule(cfg, inst->spec, noise);
  RunOptions options;
  options.enforce_schedule = false;
  const double x0_scale = cfg.get_double("run.x0_scale", 0.5);
  const auto traces =
      run_seeds(inst->spec, noise, schedule, "bilinasa", seeds, jobs, options, x0_scale);

  const double a = cfg.get_double("dro.a", 3.0);
  const double b = cfg.get_double("dro.b", 6.0);
  const int test_n = cfg.get_int("dro.test_n", 2000);

  // One fixed evaluation set shared by every seed and both arms, so the
  // per-seed loss spread reflects training randomness only.
  RngStream test_rng(0x74657374, 0);
  const Matrix x_test = inst->sample_test_covariates(test_n, a, b, test_rng);
  const Vector y_test = inst->generate_responses(x_test, dc.test_noise, test_rng);

  ArmResult result;
  result.name = name;
  for (const RunTrace& t : traces) {
    if (t.diverged) continue;
    // Tail-averaged iterate: the constant-step trajectory hovers around
    // its target, so averaging the last quarter removes most of the
    // per-seed wobble.
    const std::size_t n_iter = t.xs.size();
    const std::size_t start = (3 * n_iter) / 4;
    Vector params = Vector::Zero(t.xs[0].size());
    for (std::size_t i = start; i < n_iter; ++i) params += t.xs[i];
    params /= static_cast<double>(n_iter - start);
    const Vector beta = inst->ridge_solution(params);
    result.losses.push_back(inst->mean_loss_on(params, beta, x_test, y_test));
  }
  if (result.losses.size() < 2) throw std::runtime_error("arm '" + name + "': too few completed seeds");
  double acc = 0.0;
  for (double l : result.losses) acc += l;
  result.mean = acc / static_cast<double>(result.losses.size());
  double var = 0.0;
  for (double l : result.losses) var += (l - result.mean) * (l - result.mean);
  var /= static_cast<double>(result.losses.size() - 1);
  result.stderr_mean = std::sqrt(var / static_cast<double>(result.losses.size()));
  return result;
}

int verb_dro_compare(const CommonArgs& args) {
  const Config cfg =
      args.config_path.empty() ? Config{} : Config::from_file(args.config_path);
  const std::string family = cfg.get("instance.family", "dro");
  if (family != "dro") throw std::runtime_error("dro-compare requires instance.family = dro");
  const std::vector<std::uint64_t> seeds =
      parse_seeds(!args.seeds_text.empty() ? args.seeds_text : cfg.get("run.seeds", "1-20"));
  if (seeds.size() < 10) throw std::runtime_error("dro-compare needs at least 10 seeds");
  const double lambda = cfg.get_double("instance.lambda", 1.65e-3);
  const std::string out =
      !args.out_dir.empty() ? args.out_dir : cfg.get("run.out", "artifacts/dro-compare");

  const ArmResult robust =
      evaluate_dro_arm("robust", cfg, lambda, seeds, args.jobs, args.zero_noise);
  const ArmResult plain =
      evaluate_dro_arm("non-robust", cfg, 0.0, seeds, args.jobs, args.zero_noise);

  // 90% normal confidence intervals on the mean.
  const double zq = 1.6449;
  auto ci = [zq](const ArmResult& r) {
    return std::pair<double, double>{r.mean - zq * r.stderr_mean, r.mean + zq * r.stderr_mean};
  };
  const auto [rl, rh] = ci(robust);
  const auto [pl, ph] = ci(plain);
  const bool direction = robust.mean < plain.mean;
  const bool separated = rh < pl;

  std::ostringstream report;
  report << "arm,mean_shifted_test_loss,stderr,ci90_low,ci90_high,seeds\n";
  for (const ArmResult* r : {&robust, &plain}) {
    const auto [lo, hi] = ci(*r);
    report << r->name << ',' << Config::format_double(r->mean) << ','
           << Config::format_double(r->stderr_mean) << ',' << Config::format_double(lo) << ','
           << Config::format_double(hi) << ',' << r->losses.size() << '\n';
  }
  std::cout << report.str();
  std::cout << "robust mean " << (direction ? "<" : ">=") << " non-robust mean; 90% CIs "
            << (separated ? "do not overlap" : "overlap") << "\n";

  fs::create_directories(out);
  std::ofstream tf(fs::path(out) / "comparison.csv", std::ios::binary);
  tf << "# schema=1\n" << report.str();
  nlohmann::json j;
  j["robust"] = {{"mean", robust.mean}, {"stderr", robust.stderr_mean}, {"ci90", {rl, rh}}};
  j["non_robust"] = {{"mean", plain.mean}, {"stderr", plain.stderr_mean}, {"ci90", {pl, ph}}};
  j["direction_holds"] = direction;
  j["ci_separated"] = separated;
  std::ofstream js(fs::path(out) / "summary.json", std::ios::binary);
  js << j.dump(2) << "\n";
  std::ofstream rc(fs::path(out) / "resolved.ini", std::ios::binary);
  rc << cfg.resolved();
  return 0;
}

// ---------------------------------------------------------------------------
// verify: self-check suite, one pass/fail line per check.

int verb_verify(bool quick, int jobs) {
  int failures = 0;
  auto check = [&failures](const std::string& name, bool ok, const std::string& detail) {
    std::cout << (ok ? "PASS" : "FAIL") << "  " << name;
    if (!detail.empty()) std::cout << "  (" << detail << ")";
    std::cout << "\n";
    if (!ok) ++failures;
  };

  const ProblemSpec qb = qb1();
  const ProblemSpec nc = nc2();

  {  // Inner-loop contraction factor is exactly (1 - gamma mu)^N.
    ProblemSpec spec;
    CompositionLevel head;
    head.index = 1;
    head.input_dim = 4;
    head.output_dim = 1;
    head.value = [](const Vector& z) { return Vector(Vector::Constant(1, 0.5 * z.squaredNorm())); };
    head.jacobian_t = [](const Vector& z) { return Matrix(z); };
    spec.levels.push_back(head);
    spec.lower.x_dim = 2;
    spec.lower.y_dim = 2;
    spec.lower.grad_y = [](const Vector& x, const Vector& y) { return Vector(y - x); };
    spec.lower.cross_xy = [](const Vector&, const Vector&) {
      return Matrix(-Matrix::Identity(2, 2));
    };
    spec.lower.hess_yy = [](const Vector&, const Vector&) {
      return Matrix(Matrix::Identity(2, 2));
    };
    spec.lower.mu = 1.0;
    spec.lower.lip_grad = 1.0;
    spec.feasible = FeasibleSet::all(2);
    auto oracle = make_oracle(spec, NoiseModel::zero());
    RngStream rng(1);
    const Vector x = Vector::Constant(2, 2.0);
    const Vector y10 = inner_loop(x, Vector::Zero(2), 10, 0.1, *oracle, rng);
    const double ratio = (y10 - x).norm() / x.norm();
    check("inner-loop contraction 0.9^10", std::abs(ratio - std::pow(0.9, 10)) < 1e-12,
          Config::format_double(ratio));
  }

  {  // Noiseless recursion equals the geometric-sum closed form.
    Matrix a(2, 2);
    a << 1.6, 0.2, 0.2, 1.1;
    Vector r0y(2);
    r0y << 1.0, -0.5;
    RngStream rng(1);
    const NheConfig cfg_n{0.2, 30};
    const Vector got = neumann_recursion(r0y, cfg_n, [&a](RngStream&) { return a; }, rng);
    Matrix powm = Matrix::Identity(2, 2);
    const Matrix step = Matrix::Identity(2, 2) - cfg_n.alpha * a;
    for (int i = 0; i < 30; ++i) powm = step * powm;
    const Vector expected =
        a.partialPivLu().solve((Matrix::Identity(2, 2) - powm) * r0y);
    check("recursion matches geometric closed form", (got - expected).norm() < 1e-12, "");
  }

  {  // Zero-noise hypergradient bias vanishes at large M on the quadratic instance.
    Vector x(qb.x_dim());
    x << 0.4, -0.8;
    const double alpha = NheConfig::default_alpha(qb.lower.mu, qb.lower.lip_grad, 0.0);
    const auto curve = neumann_bias_curve(qb, x, alpha, {200});
    check("hypergradient bias at M=200 below 1e-6", curve[0].bias < 1e-6,
          Config::format_double(curve[0].bias));
  }

  {  // Analytic hypergradients match finite differences on both instances.
    bool ok = true;
    double worst = 0.0;
    for (const ProblemSpec* spec : {&qb, &nc}) {
      RngStream rng(77);
      for (int t = 0; t < (quick ? 5 : 20); ++t) {
        const Vector x = rng.gaussian_vector(spec->x_dim());
        const Vector analytic = spec->ground_truth->grad_phi(x);
        Vector fd(x.size());
        for (int i = 0; i < x.size(); ++i) {
          Vector xp = x, xm = x;
          xp[i] += 1e-5;
          xm[i] -= 1e-5;
          fd[i] = (spec->psi(xp, spec->ground_truth->y_star(xp)) -
                   spec->psi(xm, spec->ground_truth->y_star(xm))) /
                  2e-5;
        }
        const double err = (analytic - fd).norm() / std::max(1e-8, fd.norm());
        worst = std::max(worst, err);
        ok = ok && err < 1e-4;
      }
    }
    check("hypergradient finite-difference agreement", ok, "max rel err " + Config::format_double(worst));
  }

  {  // Truncated-product estimator variance exceeds the bound; the
     // averaged recursion stays far below it.
    RngStream rng(5);
    const int trials = quick ? 20000 : 100000;
    const auto table = truncation_variance_table(10.0, {100}, trials, 0.0, rng);
    check("truncated-product variance exceeds 0.81",
          table[0].var_uniform > 0.81 && table[0].var_averaged < 0.81,
          Config::format_double(table[0].var_uniform));
  }

  {  // Prox bound holds across a noisy run, and reruns are byte-identical.
    auto run_once = [&qb]() {
      auto oracle = make_oracle(qb, NoiseModel::uniform(1, 0.1, 0.1, 0.1, 0.1, 0.1));
      const NheConfig nhe{0.2, 4};
      const Schedule s = Schedule::constant(40, 5, 30.0, 0.03, 0.03, nhe);
      RngStream rng(3);
      AlgoState init = AlgoState::initialize(qb, *oracle, Vector::Zero(qb.x_dim()),
                                             Vector::Zero(qb.y_dim()), nhe, rng);
      return run(qb, *oracle, s, init, rng);
    };
    const RunTrace a = run_once();
    const RunTrace b = run_once();
    std::ostringstream osa, osb;
    write_trace_csv(osa, a);
    write_trace_csv(osb, b);
    check("prox displacement bound never violated", a.prox_bound_violations == 0, "");
    check("identical config and seed give byte-identical traces", osa.str() == osb.str(), "");
  }

  if (!quick) {  // Short stochastic run improves the optimality measure.
    const NoiseModel noise = NoiseModel::uniform(1, 0.1, 0.1, 0.1, 0.1, 0.1);
    NheConfig nhe;
    nhe.alpha = NheConfig::default_alpha(qb.lower.mu, qb.lower.lip_grad, noise.sigma_H);
    nhe.steps = NheConfig::default_steps(400);
    const Schedule s = Schedule::constant(400, 5, 30.0, 0.03, 0.03, nhe);
    const auto traces = run_seeds(qb, noise, s, "bilinasa", {1, 2, 3, 4, 5}, jobs, RunOptions{});
    double v0 = 0.0, vr = 0.0;
    for (const auto& t : traces) {
      v0 += *t.records.front().v_true;
      vr += *t.records[static_cast<std::size_t>(t.output_index)].v_true;
    }
    check("stochastic run improves the optimality measure", vr < v0,
          "V_R/V_0 = " + Config::format_double(vr / v0));
  }

  std::cout << (failures == 0 ? "all checks passed" : "some checks FAILED") << "\n";
  return failures == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Nested-composition bilevel stochastic approximation harness"};
  app.require_subcommand(1);

  CommonArgs args;
  bool quick = false;

  auto add_common = [&args](CLI::App* sub) {
    sub->add_option("--config", args.config_path, "experiment config file");
    sub->add_option("--seeds", args.seeds_text, "seed list, e.g. 1,2,3 or 1-20");
    sub->add_option("--out", args.out_dir, "output directory");
    sub->add_option("--jobs", args.jobs, "parallel seed workers");
    sub->add_flag("--zero-noise", args.zero_noise, "exact oracle mode");
  };

  CLI::App* c_run = app.add_subcommand("run", "run one configured experiment");
  add_common(c_run);
  CLI::App* c_sweep = app.add_subcommand("sweep", "K-grid sweep for rate fits");
  add_common(c_sweep);
  CLI::App* c_dro = app.add_subcommand("dro-compare", "robust vs non-robust regression arms");
  add_common(c_dro);
  CLI::App* c_verify = app.add_subcommand("verify", "run the self-check suite");
  c_verify->add_flag("--quick", quick, "reduced trial counts");
  c_verify->add_option("--jobs", args.jobs, "parallel seed workers");

  CLI11_PARSE(app, argc, argv);

  try {
    if (c_run->parsed()) return verb_run(args);
    if (c_sweep->parsed()) return verb_sweep(args);
    if (c_dro->parsed()) return verb_dro_compare(args);
    if (c_verify->parsed()) return verb_verify(quick, args.jobs);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}
