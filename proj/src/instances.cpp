#include "bilinasa/instances.hpp"

#include <cmath>
#include <sstream>

#include <Eigen/Dense>

namespace bilinasa {

namespace {

Matrix random_orthogonal(int n, RngStream& rng) {
  const Matrix g = rng.gaussian_matrix(n, n);
  Eigen::HouseholderQR<Matrix> qr(g);
  Matrix q = qr.householderQ();
  // Fix signs so the factorization is unique.
  const Matrix r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (int i = 0; i < n; ++i)
    if (r(i, i) < 0.0) q.col(i) = -q.col(i);
  return q;
}

Matrix spd_with_spectrum(int n, double lo, double hi, RngStream& rng) {
  Vector eigs(n);
  for (int i = 0; i < n; ++i)
    eigs[i] = (n > 1) ? lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1) : lo;
  const Matrix q = random_orthogonal(n, rng);
  return q * eigs.asDiagonal() * q.transpose();
}

double spectral_norm(const Matrix& m) {
  return m.jacobiSvd().singularValues()[0];
}

// Spectral norm of the full lower-level Hessian [[0, C], [C', A]].
double full_hessian_norm(const Matrix& cross, const Matrix& a) {
  const int p = static_cast<int>(cross.rows());
  const int q = static_cast<int>(cross.cols());
  Matrix h = Matrix::Zero(p + q, p + q);
  h.block(0, p, p, q) = cross;
  h.block(p, 0, q, p) = cross.transpose();
  h.block(p, p, q, q) = a;
  Eigen::SelfAdjointEigenSolver<Matrix> es(h);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

// Smoothed positive part kappa * log(1 + exp(t / kappa)) and its slope.
double softplus(double t, double kappa) {
  const double s = t / kappa;
  if (s > 30.0) return t;
  if (s < -30.0) return kappa * std::exp(s);
  return kappa * std::log1p(std::exp(s));
}

double sigmoid(double t) {
  if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
  const double e = std::exp(t);
  return e / (1.0 + e);
}

}  // namespace

Vector analytic_hypergradient(const ProblemSpec& problem, const Vector& x) {
  if (!problem.ground_truth || !problem.ground_truth->y_star)
    throw std::invalid_argument("analytic_hypergradient: instance has no analytic y*");
  const Vector y = problem.ground_truth->y_star(x);
  const Vector gpsi = problem.grad_psi(x, y);
  const int p = problem.x_dim();
  const int q = problem.y_dim();
  const Matrix hess = problem.lower.hess_yy(x, y);
  Eigen::LLT<Matrix> llt(hess);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error("analytic_hypergradient: lower-level Hessian not positive definite");
  const Vector correction = llt.solve(gpsi.tail(q));
  return gpsi.head(p) - problem.lower.cross_xy(x, y) * correction;
}

// ---------------------------------------------------------------------------
// QB family

namespace {

struct QbData {
  Matrix a_mat;   // lower-level Hessian A, q x q SPD
  Matrix b_mat;   // coupling B, p x q
  Matrix c_mat;   // upper-level coupling C, p x q
  Vector a_vec;   // upper-level anchor for x
  Vector b_vec;   // upper-level anchor for y
  Matrix s_mat;   // A^{-1} B', the solution map y*(x) = S x
};

}  // namespace

ProblemSpec make_quadratic_bilevel(int p, int q, double conditioning, std::uint64_t seed) {
  if (p < 1 || q < 1) throw std::invalid_argument("make_quadratic_bilevel: dims must be >= 1");
  if (!(conditioning >= 1.0))
    throw std::invalid_argument("make_quadratic_bilevel: conditioning must be >= 1");
  RngStream rng(seed, 0x5142);  // instance-construction stream

  auto data = std::make_shared<QbData>();
  data->a_mat = spd_with_spectrum(q, 1.0, conditioning, rng);
  data->b_mat = 0.3 * rng.gaussian_matrix(p, q);
  data->c_mat = 0.1 * rng.gaussian_matrix(p, q);
  data->a_vec = rng.gaussian_vector(p);
  data->b_vec = rng.gaussian_vector(q);
  data->s_mat = data->a_mat.llt().solve(data->b_mat.transpose());

  ProblemSpec spec;
  {
    std::ostringstream name;
    name << "QB[p=" << p << ",q=" << q << ",cond=" << conditioning << ",seed=" << seed << "]";
    spec.name = name.str();
  }
  {
    std::ostringstream m;
    m << "family = qb\np = " << p << "\nq = " << q << "\nconditioning = " << conditioning
      << "\nseed = " << seed << "\n";
    spec.manifest = m.str();
  }

  CompositionLevel f1;
  f1.index = 1;
  f1.input_dim = p + q;
  f1.output_dim = 1;
  f1.value = [data, p, q](const Vector& z) {
    const Vector x = z.head(p);
    const Vector y = z.tail(q);
    Vector out(1);
    out[0] = 0.5 * (x - data->a_vec).squaredNorm() + 0.5 * (y - data->b_vec).squaredNorm() +
             x.dot(data->c_mat * y);
    return out;
  };
  f1.jacobian_t = [data, p, q](const Vector& z) {
    const Vector x = z.head(p);
    const Vector y = z.tail(q);
    Matrix grad(p + q, 1);
    grad.col(0).head(p) = x - data->a_vec + data->c_mat * y;
    grad.col(0).tail(q) = y - data->b_vec + data->c_mat.transpose() * x;
    return grad;
  };
  spec.levels.push_back(std::move(f1));

  spec.lower.x_dim = p;
  spec.lower.y_dim = q;
  spec.lower.value = [data](const Vector& x, const Vector& y) {
    return 0.5 * y.dot(data->a_mat * y) - x.dot(data->b_mat * y);
  };
  spec.lower.grad_y = [data](const Vector& x, const Vector& y) {
    return Vector(data->a_mat * y - data->b_mat.transpose() * x);
  };
  spec.lower.cross_xy = [data](const Vector&, const Vector&) { return Matrix(-data->b_mat); };
  spec.lower.hess_yy = [data](const Vector&, const Vector&) { return data->a_mat; };
  spec.lower.mu = 1.0;
  spec.lower.lip_grad = full_hessian_norm(-data->b_mat, data->a_mat);
  spec.lower.lip_hess = 0.0;

  spec.feasible = FeasibleSet::all(p);

  GroundTruth gt;
  gt.y_star = [data](const Vector& x) { return Vector(data->s_mat * x); };
  gt.grad_phi = [data, p, q](const Vector& x) {
    const Vector y = data->s_mat * x;
    const Vector gx = x - data->a_vec + data->c_mat * y;
    const Vector gy = y - data->b_vec + data->c_mat.transpose() * x;
    return Vector(gx + data->s_mat.transpose() * gy);
  };
  gt.phi = [data, p, q](const Vector& x) {
    const Vector y = data->s_mat * x;
    return 0.5 * (x - data->a_vec).squaredNorm() + 0.5 * (y - data->b_vec).squaredNorm() +
           x.dot(data->c_mat * y);
  };
  spec.ground_truth = std::move(gt);

  // Upper-level Hessian [[I, C], [C', I]] is constant; its norm is the
  // gradient Lipschitz constant. The value Lipschitz constant is taken on
  // a reference ball of radius 10.
  Matrix upper_hess = Matrix::Identity(p + q, p + q);
  upper_hess.block(0, p, p, q) = data->c_mat;
  upper_hess.block(p, 0, q, p) = data->c_mat.transpose();
  const double h_norm = spectral_norm(upper_hess);
  Vector anchor(p + q);
  anchor << data->a_vec, data->b_vec;
  spec.constants.lip_f = {h_norm * 10.0 + anchor.norm()};
  spec.constants.lip_grad_f = {h_norm};
  spec.constants.mu_g = spec.lower.mu;
  spec.constants.lip_grad_g = spec.lower.lip_grad;
  spec.constants.lip_hess_g = 0.0;
  spec.constants.finalize();

  spec.check_dimensions();
  return spec;
}

ProblemSpec qb1() {
  ProblemSpec spec = make_quadratic_bilevel(2, 2, 2.0, 1);
  spec.name = "QB-1";
  return spec;
}

// ---------------------------------------------------------------------------
// NC family

namespace {

struct NcLayer {
  Matrix affine;     // dout x din
  Matrix nonlinear;  // dout x din
  Vector offset;     // dout
  double strength = 0.3;
};

}  // namespace

ProblemSpec make_nested_composition(int depth, int p, int q, int hidden_dim,
                                    std::uint64_t seed) {
  if (depth < 2 || depth > 3)
    throw std::invalid_argument("make_nested_composition: depth must be 2 or 3");
  if (p < 1 || q < 1 || hidden_dim < 1)
    throw std::invalid_argument("make_nested_composition: dims must be >= 1");
  RngStream rng(seed, 0x4e43);

  ProblemSpec spec;
  {
    std::ostringstream name;
    name << "NC[T=" << depth << ",p=" << p << ",q=" << q << ",h=" << hidden_dim
         << ",seed=" << seed << "]";
    spec.name = name.str();
  }
  {
    std::ostringstream m;
    m << "family = nc\ndepth = " << depth << "\np = " << p << "\nq = " << q
      << "\nhidden_dim = " << hidden_dim << "\nseed = " << seed << "\n";
    spec.manifest = m.str();
  }

  // Level 1: smooth scalar risk head sqrt(1 + ||z||^2).
  CompositionLevel head;
  head.index = 1;
  head.input_dim = hidden_dim;
  head.output_dim = 1;
  head.value = [](const Vector& z) {
    Vector out(1);
    out[0] = std::sqrt(1.0 + z.squaredNorm());
    return out;
  };
  head.jacobian_t = [](const Vector& z) {
    Matrix grad(z.size(), 1);
    grad.col(0) = z / std::sqrt(1.0 + z.squaredNorm());
    return grad;
  };
  spec.levels.push_back(std::move(head));
  spec.constants.lip_f.push_back(1.0);
  spec.constants.lip_grad_f.push_back(1.0);

  // Inner maps: z -> A z + strength * B tanh(z) + offset.
  std::vector<int> dims;  // input dims of levels 2..depth from the top down
  if (depth == 2) {
    dims = {p + q};
  } else {
    dims = {hidden_dim + 1, p + q};
  }
  int dout = hidden_dim;
  for (int level_idx = 2; level_idx <= depth; ++level_idx) {
    const int din = dims[static_cast<std::size_t>(level_idx - 2)];
    auto layer = std::make_shared<NcLayer>();
    const double scale = 1.0 / std::sqrt(static_cast<double>(din));
    layer->affine = scale * rng.gaussian_matrix(dout, din);
    layer->nonlinear = scale * rng.gaussian_matrix(dout, din);
    layer->offset = 0.5 * rng.gaussian_vector(dout);

    CompositionLevel level;
    level.index = level_idx;
    level.input_dim = din;
    level.output_dim = dout;
    level.value = [layer](const Vector& z) {
      return Vector(layer->affine * z + layer->strength * (layer->nonlinear * z.array().tanh().matrix()) +
                    layer->offset);
    };
    level.jacobian_t = [layer](const Vector& z) {
      const Vector s = z.array().tanh().square().unaryExpr([](double t) { return 1.0 - t; });
      return Matrix(layer->affine.transpose() +
                    layer->strength * (s.asDiagonal() * layer->nonlinear.transpose()));
    };
    spec.levels.push_back(std::move(level));

    const double a_norm = spectral_norm(layer->affine);
    const double b_norm = spectral_norm(layer->nonlinear);
    spec.constants.lip_f.push_back(a_norm + layer->strength * b_norm);
    // |d/dt sech^2(t)| <= 0.77, so the Jacobian varies at most this fast.
    spec.constants.lip_grad_f.push_back(0.77 * layer->strength * b_norm);
    dout = din;
  }

  // Quadratic lower level as in the QB family.
  auto data = std::make_shared<QbData>();
  data->a_mat = spd_with_spectrum(q, 1.0, 2.0, rng);
  data->b_mat = 0.3 * rng.gaussian_matrix(p, q);
  data->s_mat = data->a_mat.llt().solve(data->b_mat.transpose());

  spec.lower.x_dim = p;
  spec.lower.y_dim = q;
  spec.lower.value = [data](const Vector& x, const Vector& y) {
    return 0.5 * y.dot(data->a_mat * y) - x.dot(data->b_mat * y);
  };
  spec.lower.grad_y = [data](const Vector& x, const Vector& y) {
    return Vector(data->a_mat * y - data->b_mat.transpose() * x);
  };
  spec.lower.cross_xy = [data](const Vector&, const Vector&) { return Matrix(-data->b_mat); };
  spec.lower.hess_yy = [data](const Vector&, const Vector&) { return data->a_mat; };
  spec.lower.mu = 1.0;
  spec.lower.lip_grad = full_hessian_norm(-data->b_mat, data->a_mat);
  spec.lower.lip_hess = 0.0;

  spec.feasible = FeasibleSet::all(p);

  spec.constants.mu_g = spec.lower.mu;
  spec.constants.lip_grad_g = spec.lower.lip_grad;
  spec.constants.lip_hess_g = 0.0;
  spec.constants.finalize();

  GroundTruth gt;
  gt.y_star = [data](const Vector& x) { return Vector(data->s_mat * x); };
  spec.ground_truth = std::move(gt);
  spec.check_dimensions();
  // The hypergradient needs the full spec; wire it up after construction.
  auto spec_copy = std::make_shared<ProblemSpec>(spec);
  spec.ground_truth->grad_phi = [spec_copy](const Vector& x) {
    return analytic_hypergradient(*spec_copy, x);
  };
  spec.ground_truth->phi = [spec_copy, data](const Vector& x) {
    return spec_copy->psi(x, data->s_mat * x);
  };
  return spec;
}

ProblemSpec nc2() {
  ProblemSpec spec = make_nested_composition(2, 3, 2, 4, 2);
  spec.name = "NC-2";
  return spec;
}

// ---------------------------------------------------------------------------
// DRO family

namespace {

using RowMajorMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Row l of the w x d weight matrix occupies params[l*d .. l*d + d - 1].
Eigen::Map<const RowMajorMatrix> as_weight(const Vector& params, int offset, int rows, int cols) {
  return Eigen::Map<const RowMajorMatrix>(params.data() + offset, rows, cols);
}

class LinearFeatureMap final : public FeatureMap {
 public:
  LinearFeatureMap(int input_dim, int width) : d_(input_dim), w_(width) {}
  int param_dim() const override { return d_ * w_; }
  int out_dim() const override { return w_; }
  std::string kind() const override { return "linear"; }

  Vector features(const Vector& params, const Vector& z) const override {
    return as_weight(params, 0, w_, d_) * z;
  }

  Matrix dfeatures_dparams_t(const Vector& params, const Vector& z) const override {
    (void)params;
    Matrix out = Matrix::Zero(param_dim(), w_);
    for (int l = 0; l < w_; ++l) out.block(l * d_, l, d_, 1) = z;
    return out;
  }

 private:
  int d_, w_;
};

class TwoLayerTanhFeatureMap final : public FeatureMap {
 public:
  TwoLayerTanhFeatureMap(int input_dim, int width) : d_(input_dim), w_(width) {}
  int param_dim() const override { return w_ * d_ + w_ * w_; }
  int out_dim() const override { return w_; }
  std::string kind() const override { return "two-layer-tanh"; }

  Vector features(const Vector& params, const Vector& z) const override {
    const Vector h = (as_weight(params, 0, w_, d_) * z).array().tanh();
    return (as_weight(params, w_ * d_, w_, w_) * h).array().tanh();
  }

  Matrix dfeatures_dparams_t(const Vector& params, const Vector& z) const override {
    const auto w1 = as_weight(params, 0, w_, d_);
    const auto w2 = as_weight(params, w_ * d_, w_, w_);
    const Vector pre1 = w1 * z;
    const Vector h = pre1.array().tanh();
    const Vector pre2 = w2 * h;
    const Vector phi = pre2.array().tanh();
    const Vector dphi = phi.array().square().unaryExpr([](double t) { return 1.0 - t; });
    const Vector dh = h.array().square().unaryExpr([](double t) { return 1.0 - t; });

    Matrix out = Matrix::Zero(param_dim(), w_);
    const int off2 = w_ * d_;
    for (int l = 0; l < w_; ++l) {
      // First-layer weights reach feature l through h.
      for (int a = 0; a < w_; ++a) {
        const double chain = dphi[l] * w2(l, a) * dh[a];
        out.block(a * d_, l, d_, 1) += chain * z;
      }
      // Second-layer weights: only row l of W2 matters for feature l.
      out.block(off2 + l * w_, l, w_, 1) = dphi[l] * h;
    }
    return out;
  }

 private:
  int d_, w_;
};

}  // namespace

std::unique_ptr<FeatureMap> make_linear_feature_map(int input_dim, int width) {
  return std::make_unique<LinearFeatureMap>(input_dim, width);
}

std::unique_ptr<FeatureMap> make_two_layer_tanh_feature_map(int input_dim, int width) {
  return std::make_unique<TwoLayerTanhFeatureMap>(input_dim, width);
}

Matrix sample_shifted_covariates(int n, int dim, double a, double b, RngStream& rng) {
  if (n < 1 || dim < 1) throw std::invalid_argument("sample_shifted_covariates: bad dims");
  if (!(a > -1.0) || !(b > -1.0))
    throw std::invalid_argument("sample_shifted_covariates: exponents must exceed -1");
  Matrix out(n, dim);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < dim; ++j) {
      const double g1 = rng.gamma_draw(a + 1.0);
      const double g2 = rng.gamma_draw(b + 1.0);
      out(i, j) = g1 / (g1 + g2);
    }
  return out;
}

// ---------------------------------------------------------------------------
// DRO core computations over the finite training population

namespace {

struct DroData {
  DroConfig config;
  std::shared_ptr<const FeatureMap> fm;
  Matrix x_train;  // n x d
  Vector y_train;
  Matrix omega;  // n_indices x d

  int n() const { return static_cast<int>(x_train.rows()); }

  double residual(const Vector& params, const Vector& beta, int j, Vector* phi_out) const {
    const Vector phi = fm->features(params, x_train.row(j).transpose());
    if (phi_out) *phi_out = phi;
    return y_train[j] - beta.dot(phi);
  }

  double loss(const Vector& params, const Vector& beta, int j) const {
    const double e = residual(params, beta, j, nullptr);
    return e * e;
  }

  // Gradient of loss j with respect to (params, beta), stacked.
  Vector loss_grad(const Vector& params, const Vector& beta, int j) const {
    Vector phi;
    const double e = residual(params, beta, j, &phi);
    const Matrix dphi_t = fm->dfeatures_dparams_t(params, x_train.row(j).transpose());
    Vector g(fm->param_dim() + fm->out_dim());
    g.head(fm->param_dim()) = -2.0 * e * (dphi_t * beta);
    g.tail(fm->out_dim()) = -2.0 * e * phi;
    return g;
  }

  double mean_loss(const Vector& params, const Vector& beta) const {
    double acc = 0.0;
    for (int j = 0; j < n(); ++j) acc += loss(params, beta, j);
    return acc / n();
  }

  Vector mean_loss_grad(const Vector& params, const Vector& beta) const {
    Vector acc = Vector::Zero(fm->param_dim() + fm->out_dim());
    for (int j = 0; j < n(); ++j) acc += loss_grad(params, beta, j);
    return acc / n();
  }

  // (mean loss, mean smoothed-exceedance squared).
  Vector risk_pair(const Vector& params, const Vector& beta) const {
    const double m = mean_loss(params, beta);
    double s = 0.0;
    for (int j = 0; j < n(); ++j) {
      const double sp = softplus(loss(params, beta, j) - m, config.kappa);
      s += sp * sp;
    }
    Vector out(2);
    out << m, s / n();
    return out;
  }

  Matrix risk_pair_jacobian_t(const Vector& params, const Vector& beta) const {
    const double m = mean_loss(params, beta);
    const Vector grad_m = mean_loss_grad(params, beta);
    Vector grad_s = Vector::Zero(grad_m.size());
    for (int j = 0; j < n(); ++j) {
      const double t = loss(params, beta, j) - m;
      const double sp = softplus(t, config.kappa);
      grad_s += 2.0 * sp * sigmoid(t / config.kappa) * (loss_grad(params, beta, j) - grad_m);
    }
    grad_s /= n();
    Matrix out(grad_m.size(), 2);
    out.col(0) = grad_m;
    out.col(1) = grad_s;
    return out;
  }

  Vector lower_grad_sample(const Vector& params, const Vector& beta, int j) const {
    Vector phi;
    const double e = residual(params, beta, j, &phi);
    return Vector(-2.0 * e * phi + config.mu_reg * beta);
  }

  Matrix hessian_sample(const Vector& params, int j) const {
    const Vector phi = fm->features(params, x_train.row(j).transpose());
    return Matrix(2.0 * phi * phi.transpose() +
                  config.mu_reg * Matrix::Identity(phi.size(), phi.size()));
  }

  Matrix cross_sample(const Vector& params, const Vector& beta, int j) const {
    Vector phi;
    const double e = residual(params, beta, j, &phi);
    const Matrix dphi_t = fm->dfeatures_dparams_t(params, x_train.row(j).transpose());
    return Matrix(2.0 * (dphi_t * beta) * phi.transpose() - 2.0 * e * dphi_t);
  }
};

int draw_index(int n, RngStream& rng) {
  const int j = static_cast<int>(rng.uniform() * n);
  return (j >= n) ? n - 1 : j;
}

// Data-subsampling oracle: a draw evaluates one training point; the
// zero-noise mode evaluates the full empirical population.
class DroOracle final : public Oracle {
 public:
  DroOracle(const ProblemSpec& spec, std::shared_ptr<const DroData> data, bool exact)
      : spec_(&spec), data_(std::move(data)), exact_(exact) {}

  const ProblemSpec& problem() const override { return *spec_; }
  bool deterministic() const override { return exact_; }

  Vector sample_value(int level, const Vector& point, RngStream& rng) const override {
    ++counts_.value;
    if (level == 1 || exact_) return spec_->level(level).value(point);
    const auto [params, beta] = split(point);
    const double m = data_->mean_loss(params, beta);
    const int j = draw_index(data_->n(), rng);
    const int l = draw_index(data_->n(), rng);
    const double sp =
        softplus(data_->loss(params, beta, l) - m, data_->config.kappa);
    Vector out(2);
    out << data_->loss(params, beta, j), sp * sp;
    return out;
  }

  Matrix sample_jacobian(int level, const Vector& point, RngStream& rng) const override {
    ++counts_.jacobian;
    if (level == 1 || exact_) return spec_->level(level).jacobian_t(point);
    const auto [params, beta] = split(point);
    const double m = data_->mean_loss(params, beta);
    const Vector grad_m = data_->mean_loss_grad(params, beta);
    const int j = draw_index(data_->n(), rng);
    const int l = draw_index(data_->n(), rng);
    Matrix out(point.size(), 2);
    out.col(0) = data_->loss_grad(params, beta, j);
    const double t = data_->loss(params, beta, l) - m;
    out.col(1) = 2.0 * softplus(t, data_->config.kappa) * sigmoid(t / data_->config.kappa) *
                 (data_->loss_grad(params, beta, l) - grad_m);
    return out;
  }

  Vector sample_lower_gradient(const Vector& x, const Vector& y, RngStream& rng) const override {
    ++counts_.lower_gradient;
    if (exact_) return spec_->lower.grad_y(x, y);
    return data_->lower_grad_sample(x, y, draw_index(data_->n(), rng));
  }

  Matrix sample_cross(const Vector& x, const Vector& y, RngStream& rng) const override {
    ++counts_.cross;
    if (exact_) return spec_->lower.cross_xy(x, y);
    return data_->cross_sample(x, y, draw_index(data_->n(), rng));
  }

  Matrix sample_hessian(const Vector& x, const Vector& y, RngStream& rng) const override {
    ++counts_.hessian;
    if (exact_) return spec_->lower.hess_yy(x, y);
    return data_->hessian_sample(x, draw_index(data_->n(), rng));
  }

 private:
  std::pair<Vector, Vector> split(const Vector& point) const {
    const int p = data_->fm->param_dim();
    return {point.head(p), point.tail(data_->fm->out_dim())};
  }

  const ProblemSpec* spec_;
  std::shared_ptr<const DroData> data_;
  bool exact_;
};

}  // namespace

double DroInstance::mean_loss(const Vector& params, const Vector& beta) const {
  return mean_loss_on(params, beta, x_train, y_train);
}

double DroInstance::mean_loss_on(const Vector& params, const Vector& beta, const Matrix& x,
                                 const Vector& y) const {
  double acc = 0.0;
  for (int j = 0; j < x.rows(); ++j) {
    const double e = y[j] - beta.dot(feature_map->features(params, x.row(j).transpose()));
    acc += e * e;
  }
  return acc / static_cast<double>(x.rows());
}

Vector DroInstance::ridge_solution(const Vector& params) const {
  const int w = feature_map->out_dim();
  Matrix gram = Matrix::Zero(w, w);
  Vector moment = Vector::Zero(w);
  const int n = static_cast<int>(x_train.rows());
  for (int j = 0; j < n; ++j) {
    const Vector phi = feature_map->features(params, x_train.row(j).transpose());
    gram += 2.0 * phi * phi.transpose();
    moment += 2.0 * y_train[j] * phi;
  }
  gram /= n;
  moment /= n;
  gram += config.mu_reg * Matrix::Identity(w, w);
  return gram.llt().solve(moment);
}

Matrix DroInstance::sample_test_covariates(int n, double a, double b, RngStream& rng) const {
  return sample_shifted_covariates(n, config.input_dim, a, b, rng);
}

Vector DroInstance::generate_responses(const Matrix& x, double noise_sigma, RngStream& rng) const {
  Vector y(x.rows());
  for (int i = 0; i < x.rows(); ++i) {
    const Vector proj = index_directions * x.row(i).transpose();
    double acc = 0.0;
    for (int k = 0; k < proj.size(); ++k) acc += proj[k] + config.c * std::sin(proj[k]);
    y[i] = acc + noise_sigma * rng.gaussian();
  }
  return y;
}

std::shared_ptr<DroInstance> make_dro_regression(const DroConfig& config) {
  if (config.n_train < 1 || config.input_dim < 1 || config.width < 1 || config.n_indices < 1)
    throw std::invalid_argument("make_dro_regression: bad dims");
  if (config.lambda < 0.0) throw std::invalid_argument("make_dro_regression: lambda must be >= 0");

  auto inst = std::make_shared<DroInstance>();
  inst->config = config;
  if (config.feature_kind == "linear") {
    inst->feature_map = make_linear_feature_map(config.input_dim, config.width);
  } else if (config.feature_kind == "two-layer-tanh") {
    inst->feature_map = make_two_layer_tanh_feature_map(config.input_dim, config.width);
  } else {
    throw std::invalid_argument("make_dro_regression: unknown feature map '" +
                                config.feature_kind + "'");
  }

  RngStream rng(config.seed, 0x44524f);
  auto data = std::make_shared<DroData>();
  data->config = config;
  data->fm = inst->feature_map;
  // Training covariates uniform on [0, 1]^d; responses from the index
  // model with normalized random directions.
  data->x_train.resize(config.n_train, config.input_dim);
  for (int i = 0; i < config.n_train; ++i)
    for (int j = 0; j < config.input_dim; ++j) data->x_train(i, j) = rng.uniform();
  data->omega.resize(config.n_indices, config.input_dim);
  for (int k = 0; k < config.n_indices; ++k) {
    Vector w = rng.gaussian_vector(config.input_dim);
    data->omega.row(k) = w.transpose() / w.norm();
  }
  inst->x_train = data->x_train;
  inst->index_directions = data->omega;
  {
    Vector y(config.n_train);
    for (int i = 0; i < config.n_train; ++i) {
      const Vector proj = data->omega * data->x_train.row(i).transpose();
      double acc = 0.0;
      for (int k = 0; k < proj.size(); ++k) acc += proj[k] + config.c * std::sin(proj[k]);
      y[i] = acc + config.train_noise * rng.gaussian();
    }
    data->y_train = y;
    inst->y_train = y;
  }

  const int p = inst->feature_map->param_dim();
  const int q = inst->feature_map->out_dim();
  const double lambda = config.lambda;
  const double eps_s = config.eps_s;

  ProblemSpec& spec = inst->spec;
  {
    std::ostringstream name;
    name << "DRO[" << config.feature_kind << ",d=" << config.input_dim << ",n=" << config.n_train
         << ",w=" << config.width << ",seed=" << config.seed << "]";
    spec.name = name.str();
  }
  {
    std::ostringstream m;
    m << "family = dro\nfeature = " << config.feature_kind << "\nn_train = " << config.n_train
      << "\ninput_dim = " << config.input_dim << "\nn_indices = " << config.n_indices
      << "\nwidth = " << config.width << "\nc = " << config.c << "\nlambda = " << config.lambda
      << "\nkappa = " << config.kappa << "\nmu_reg = " << config.mu_reg
      << "\nseed = " << config.seed << "\n";
    spec.manifest = m.str();
  }

  // The semi-deviation input is non-negative on exact evaluations, but
  // the linearized chain tracker can drift below zero; a smoothed
  // positive part keeps the head defined and smooth on all of R.
  const double kappa_s = config.kappa;
  CompositionLevel risk_head;
  risk_head.index = 1;
  risk_head.input_dim = 2;
  risk_head.output_dim = 1;
  risk_head.value = [lambda, eps_s, kappa_s](const Vector& z) {
    Vector out(1);
    out[0] = z[0] + lambda * std::sqrt(softplus(z[1], kappa_s) + eps_s);
    return out;
  };
  risk_head.jacobian_t = [lambda, eps_s, kappa_s](const Vector& z) {
    Matrix grad(2, 1);
    grad(0, 0) = 1.0;
    grad(1, 0) = lambda * sigmoid(z[1] / kappa_s) /
                 (2.0 * std::sqrt(softplus(z[1], kappa_s) + eps_s));
    return grad;
  };
  spec.levels.push_back(std::move(risk_head));

  CompositionLevel risk_pair;
  risk_pair.index = 2;
  risk_pair.input_dim = p + q;
  risk_pair.output_dim = 2;
  risk_pair.value = [data, p, q](const Vector& z) {
    return data->risk_pair(z.head(p), z.tail(q));
  };
  risk_pair.jacobian_t = [data, p, q](const Vector& z) {
    return data->risk_pair_jacobian_t(z.head(p), z.tail(q));
  };
  spec.levels.push_back(std::move(risk_pair));

  spec.lower.x_dim = p;
  spec.lower.y_dim = q;
  spec.lower.value = [data](const Vector& x, const Vector& y) {
    return data->mean_loss(x, y) + 0.5 * data->config.mu_reg * y.squaredNorm();
  };
  spec.lower.grad_y = [data](const Vector& x, const Vector& y) {
    Vector acc = Vector::Zero(y.size());
    for (int j = 0; j < data->n(); ++j) acc += data->lower_grad_sample(x, y, j);
    return Vector(acc / data->n());
  };
  spec.lower.hess_yy = [data](const Vector& x, const Vector&) {
    Matrix acc = Matrix::Zero(data->fm->out_dim(), data->fm->out_dim());
    for (int j = 0; j < data->n(); ++j) acc += data->hessian_sample(x, j);
    return Matrix(acc / data->n());
  };
  spec.lower.cross_xy = [data](const Vector& x, const Vector& y) {
    Matrix acc = Matrix::Zero(data->fm->param_dim(), data->fm->out_dim());
    for (int j = 0; j < data->n(); ++j) acc += data->cross_sample(x, y, j);
    return Matrix(acc / data->n());
  };
  spec.lower.mu = config.mu_reg;
  spec.lower.lip_hess = 0.0;  // g is quadratic in y at fixed features

  spec.feasible = FeasibleSet::all(p);

  // Measured smoothness constants at a few probe points (no closed form
  // for data-driven instances).
  {
    double lip1 = 0.0, lip_grad1 = 0.0, lip2 = 0.0, lip_g = 0.0;
    RngStream probe_rng(config.seed, 0x70726f);
    for (int t = 0; t < 5; ++t) {
      const Vector params = 0.5 * probe_rng.gaussian_vector(p);
      const Vector beta = 0.5 * probe_rng.gaussian_vector(q);
      Vector z(p + q);
      z << params, beta;
      const Vector pair = spec.level(2).value(z);
      lip1 = std::max(lip1, spec.level(1).jacobian_t(pair).norm());
      lip_grad1 = std::max(lip_grad1, lambda / (4.0 * std::pow(pair[1] + eps_s, 1.5)));
      lip2 = std::max(lip2, spectral_norm(spec.level(2).jacobian_t(z)));
      lip_g = std::max(lip_g,
                       full_hessian_norm(spec.lower.cross_xy(params, beta),
                                         spec.lower.hess_yy(params, beta)));
    }
    spec.lower.lip_grad = 1.5 * lip_g + config.mu_reg;
    spec.constants.lip_f = {1.5 * lip1, 1.5 * lip2};
    spec.constants.lip_grad_f = {1.5 * lip_grad1, 1.5 * lip2};
    spec.constants.mu_g = spec.lower.mu;
    spec.constants.lip_grad_g = spec.lower.lip_grad;
    spec.constants.lip_hess_g = spec.lower.lip_hess;
    spec.constants.finalize();
  }

  spec.oracle_factory = [data](const ProblemSpec& s, const NoiseModel& noise) {
    return std::unique_ptr<Oracle>(new DroOracle(s, data, noise.is_zero()));
  };

  spec.check_dimensions();
  return inst;
}

}  // namespace bilinasa
