#include "snf/problems.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace snf {

namespace {
constexpr double kLog2Pi = 1.8378770664093453;
}

GaussianMixture::GaussianMixture(Eigen::VectorXd weights, Eigen::MatrixXd means,
                                 std::vector<Eigen::MatrixXd> covs)
    : means_(std::move(means)), covs_(std::move(covs)) {
  const int k = static_cast<int>(weights.size());
  if (k < 1 || means_.cols() != k || static_cast<int>(covs_.size()) != k)
    throw std::invalid_argument("GaussianMixture: component count mismatch");
  if ((weights.array() <= 0.0).any())
    throw std::invalid_argument("GaussianMixture: weights must be positive");
  w_ = weights / weights.sum();
  log_w_ = w_.array().log();
  const int d = dim();
  llt_.reserve(k);
  log_norm_.resize(k);
  for (int i = 0; i < k; ++i) {
    if (covs_[i].rows() != d || covs_[i].cols() != d)
      throw std::invalid_argument("GaussianMixture: covariance shape mismatch");
    llt_.emplace_back(covs_[i]);
    if (llt_[i].info() != Eigen::Success)
      throw std::invalid_argument("GaussianMixture: covariance not SPD");
    const double log_det =
        2.0 * llt_[i].matrixL().toDenseMatrix().diagonal().array().log().sum();
    log_norm_[i] = -0.5 * d * kLog2Pi - 0.5 * log_det;
  }
}

Eigen::MatrixXd GaussianMixture::component_logs(const Eigen::MatrixXd& x) const {
  const int k = num_components();
  Eigen::MatrixXd logs(k, x.cols());
  for (int i = 0; i < k; ++i) {
    Eigen::MatrixXd diff = x.colwise() - means_.col(i);
    Eigen::MatrixXd s = llt_[i].matrixL().solve(diff);
    logs.row(i) = (-0.5 * s.colwise().squaredNorm()).array() + log_w_[i] +
                  log_norm_[i];
  }
  return logs;
}

double GaussianMixture::log_density(const Eigen::VectorXd& x) const {
  return log_density_batch(x)[0];
}

Eigen::VectorXd GaussianMixture::grad_log_density(const Eigen::VectorXd& x) const {
  return grad_log_density_batch(x).col(0);
}

Eigen::VectorXd GaussianMixture::hvp_log_density(const Eigen::VectorXd& x,
                                                 const Eigen::VectorXd& v) const {
  return hvp_log_density_batch(x, v).col(0);
}

Eigen::RowVectorXd GaussianMixture::log_density_batch(const Eigen::MatrixXd& x) const {
  const Eigen::MatrixXd logs = component_logs(x);
  const Eigen::RowVectorXd mx = logs.colwise().maxCoeff();
  return mx.array() +
         (logs.rowwise() - mx).array().exp().colwise().sum().log();
}

Eigen::MatrixXd GaussianMixture::grad_log_density_batch(const Eigen::MatrixXd& x) const {
  const int k = num_components();
  const Eigen::MatrixXd logs = component_logs(x);
  const Eigen::RowVectorXd mx = logs.colwise().maxCoeff();
  Eigen::MatrixXd resp = (logs.rowwise() - mx).array().exp();
  resp.array().rowwise() /= resp.colwise().sum().array();

  Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(x.rows(), x.cols());
  for (int i = 0; i < k; ++i) {
    Eigen::MatrixXd diff = x.colwise() - means_.col(i);
    Eigen::MatrixXd g = -llt_[i].solve(diff);
    grad += (g.array().rowwise() * resp.row(i).array()).matrix();
  }
  return grad;
}

Eigen::MatrixXd GaussianMixture::hvp_log_density_batch(const Eigen::MatrixXd& x,
                                                       const Eigen::MatrixXd& v) const {
  const int k = num_components();
  const Eigen::MatrixXd logs = component_logs(x);
  const Eigen::RowVectorXd mx = logs.colwise().maxCoeff();
  Eigen::MatrixXd resp = (logs.rowwise() - mx).array().exp();
  resp.array().rowwise() /= resp.colwise().sum().array();

  Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(x.rows(), x.cols());
  Eigen::MatrixXd hv = Eigen::MatrixXd::Zero(x.rows(), x.cols());
  for (int i = 0; i < k; ++i) {
    Eigen::MatrixXd diff = x.colwise() - means_.col(i);
    Eigen::MatrixXd g = -llt_[i].solve(diff);
    Eigen::MatrixXd siv = llt_[i].solve(v);
    const Eigen::RowVectorXd gv = (g.array() * v.array()).colwise().sum();
    hv += ((-siv + (g.array().rowwise() * gv.array()).matrix()).array().rowwise() *
           resp.row(i).array())
              .matrix();
    grad += (g.array().rowwise() * resp.row(i).array()).matrix();
  }
  const Eigen::RowVectorXd gv_total = (grad.array() * v.array()).colwise().sum();
  hv -= (grad.array().rowwise() * gv_total.array()).matrix();
  return hv;
}

Eigen::VectorXd GaussianMixture::sample(RngStream& rng) const {
  const double u = rng.uniform();
  int comp = num_components() - 1;
  double acc = 0.0;
  for (int i = 0; i < num_components(); ++i) {
    acc += w_[i];
    if (u < acc) {
      comp = i;
      break;
    }
  }
  return means_.col(comp) +
         llt_[comp].matrixL() * rng.normal_vector(dim());
}

Eigen::MatrixXd GaussianMixture::sample(int n, RngStream& rng) const {
  Eigen::MatrixXd out(dim(), n);
  for (int j = 0; j < n; ++j) out.col(j) = sample(rng);
  return out;
}

RelaxedUniform::RelaxedUniform(int dim, double alpha) : dim_(dim), alpha_(alpha) {
  if (dim < 1) throw std::invalid_argument("RelaxedUniform: dim must be positive");
  if (alpha <= 0.0) throw std::invalid_argument("RelaxedUniform: alpha must be positive");
  log_c_ = std::log(alpha / (2.0 * alpha + 2.0));
}

double RelaxedUniform::log_density(const Eigen::VectorXd& x) const {
  double out = dim_ * log_c_;
  for (int i = 0; i < dim_; ++i) {
    const double t = x[i];
    if (t < -1.0)
      out += alpha_ * (1.0 + t);
    else if (t > 1.0)
      out -= alpha_ * (t - 1.0);
  }
  return out;
}

Eigen::VectorXd RelaxedUniform::grad_log_density(const Eigen::VectorXd& x) const {
  Eigen::VectorXd g = Eigen::VectorXd::Zero(dim_);
  for (int i = 0; i < dim_; ++i) {
    if (x[i] < -1.0)
      g[i] = alpha_;
    else if (x[i] > 1.0)
      g[i] = -alpha_;
  }
  return g;
}

Eigen::VectorXd RelaxedUniform::hvp_log_density(const Eigen::VectorXd&,
                                                const Eigen::VectorXd& v) const {
  return Eigen::VectorXd::Zero(v.size());
}

Eigen::RowVectorXd RelaxedUniform::log_density_batch(const Eigen::MatrixXd& x) const {
  const Eigen::ArrayXXd a = x.array();
  const Eigen::ArrayXXd tails = (a < -1.0).select(alpha_ * (1.0 + a), 0.0) +
                                (a > 1.0).select(-alpha_ * (a - 1.0), 0.0);
  return tails.colwise().sum().matrix() +
         Eigen::RowVectorXd::Constant(x.cols(), dim_ * log_c_);
}

Eigen::MatrixXd RelaxedUniform::grad_log_density_batch(const Eigen::MatrixXd& x) const {
  const Eigen::ArrayXXd a = x.array();
  return ((a < -1.0).cast<double>() - (a > 1.0).cast<double>()) * alpha_;
}

Eigen::MatrixXd RelaxedUniform::sample(int n, RngStream& rng) const {
  // Coordinate mass: alpha/(alpha+1) on [-1,1], 1/(2(alpha+1)) per tail.
  Eigen::MatrixXd out(dim_, n);
  const double p_box = alpha_ / (alpha_ + 1.0);
  const double p_tail = 0.5 * (1.0 - p_box);
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < dim_; ++i) {
      const double u = rng.uniform();
      if (u < p_box) {
        out(i, j) = 2.0 * rng.uniform() - 1.0;
      } else {
        const double e = -std::log(1.0 - rng.uniform()) / alpha_;
        out(i, j) = (u < p_box + p_tail) ? 1.0 + e : -1.0 - e;
      }
    }
  return out;
}

std::shared_ptr<const Density> relaxed_uniform(int dim, double alpha) {
  return std::make_shared<RelaxedUniform>(dim, alpha);
}

// ---------------------------------------------------------------------------
// Linear-Gaussian problem
// ---------------------------------------------------------------------------

class LinearGaussianProblem::Family final : public ConditionalDensityFamily {
 public:
  explicit Family(const LinearGaussianProblem* p) : p_(p) {
    const GaussianMixture& prior = *p_->prior_;
    const int d = prior.dim();
    const int k = prior.num_components();
    const Eigen::MatrixXd ata_b2 = p_->a_.transpose() * p_->a_ / p_->b2_;
    post_cov_.reserve(k);
    prior_llt_.reserve(k);
    for (int i = 0; i < k; ++i) {
      Eigen::LLT<Eigen::MatrixXd> prior_llt(prior.cov(i));
      Eigen::MatrixXd prec = ata_b2 + prior_llt.solve(Eigen::MatrixXd::Identity(d, d));
      Eigen::LLT<Eigen::MatrixXd> prec_llt(prec);
      if (prec_llt.info() != Eigen::Success)
        throw std::invalid_argument("LinearGaussianProblem: posterior precision not SPD");
      post_cov_.push_back(prec_llt.solve(Eigen::MatrixXd::Identity(d, d)));
      // Symmetrize against roundoff; the explicit inverse is tiny (d x d).
      post_cov_.back() = 0.5 * (post_cov_.back() + post_cov_.back().transpose());
      prior_llt_.push_back(std::move(prior_llt));
      const double log_det_post =
          -2.0 * prec_llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
      const double log_det_prior =
          2.0 * prior_llt_[i].matrixL().toDenseMatrix().diagonal().array().log().sum();
      log_det_ratio_half_.push_back(0.5 * (log_det_post - log_det_prior));
      prior_prec_mean_.push_back(prior_llt_[i].solve(prior.means().col(i)));
      prior_quad_.push_back(prior.means().col(i).dot(prior_prec_mean_[i]));
    }
  }

  int dim() const override { return p_->dim_x(); }
  int cond_dim() const override { return p_->dim_y(); }

  std::shared_ptr<const Density> at(const Eigen::VectorXd& y) const override {
    return posterior(y);
  }

  std::shared_ptr<const GaussianMixture> posterior(const Eigen::VectorXd& y) const {
    if (y.size() != p_->dim_y())
      throw std::invalid_argument("posterior: observation dimension mismatch");
    const GaussianMixture& prior = *p_->prior_;
    const int k = prior.num_components();
    const Eigen::VectorXd aty_b2 = p_->a_.transpose() * y / p_->b2_;
    Eigen::MatrixXd means(p_->dim_x(), k);
    Eigen::VectorXd log_w(k);
    for (int i = 0; i < k; ++i) {
      const Eigen::VectorXd h = aty_b2 + prior_prec_mean_[i];
      means.col(i) = post_cov_[i] * h;
      log_w[i] = std::log(prior.weights()[i]) + log_det_ratio_half_[i] +
                 0.5 * (means.col(i).dot(h) - prior_quad_[i]);
    }
    const Eigen::VectorXd w = (log_w.array() - log_w.maxCoeff()).exp();
    return std::make_shared<GaussianMixture>(w, means, post_cov_);
  }

 private:
  const LinearGaussianProblem* p_;
  std::vector<Eigen::MatrixXd> post_cov_;
  std::vector<Eigen::LLT<Eigen::MatrixXd>> prior_llt_;
  std::vector<Eigen::VectorXd> prior_prec_mean_;  // cov_k^{-1} m_k
  std::vector<double> prior_quad_;                // m_k^T cov_k^{-1} m_k
  std::vector<double> log_det_ratio_half_;
};

namespace {

/// Bayes-form posterior: log likelihood + log prior, unnormalized.
class BayesPosterior final : public Density {
 public:
  BayesPosterior(const InverseProblem* problem, Eigen::VectorXd y)
      : problem_(problem), y_(std::move(y)) {}
  int dim() const override { return problem_->dim_x(); }
  double log_density(const Eigen::VectorXd& x) const override {
    return problem_->log_likelihood(y_, x) + problem_->prior().log_density(x);
  }
  Eigen::VectorXd grad_log_density(const Eigen::VectorXd& x) const override {
    return problem_->grad_log_likelihood_x(y_, x) +
           problem_->prior().grad_log_density(x);
  }

 private:
  const InverseProblem* problem_;
  Eigen::VectorXd y_;
};

}  // namespace

LinearGaussianProblem::LinearGaussianProblem(
    Eigen::MatrixXd a, double b2, std::shared_ptr<const GaussianMixture> prior)
    : a_(std::move(a)), b2_(b2), prior_(std::move(prior)) {
  if (!prior_) throw std::invalid_argument("LinearGaussianProblem: null prior");
  if (b2_ <= 0.0) throw std::invalid_argument("LinearGaussianProblem: b2 must be positive");
  if (a_.cols() != prior_->dim())
    throw std::invalid_argument("LinearGaussianProblem: operator shape mismatch");
  if (!a_.allFinite())
    throw std::invalid_argument("LinearGaussianProblem: non-finite operator");
  family_ = std::make_shared<Family>(this);
}

const ConditionalDensityFamily& LinearGaussianProblem::posterior_family() const {
  return *family_;
}

std::shared_ptr<const Density> LinearGaussianProblem::posterior_log_density(
    const Eigen::VectorXd& y) const {
  return std::make_shared<BayesPosterior>(this, y);
}

void LinearGaussianProblem::sample_joint(int n, RngStream& rng, Eigen::MatrixXd& x,
                                         Eigen::MatrixXd& y) const {
  x = prior_->sample(n, rng);
  y.resize(dim_y(), n);
  const double b = std::sqrt(b2_);
  for (int j = 0; j < n; ++j)
    y.col(j) = a_ * x.col(j) + b * rng.normal_vector(dim_y());
}

Eigen::MatrixXd LinearGaussianProblem::sample_prior(int n, RngStream& rng) const {
  return prior_->sample(n, rng);
}

double LinearGaussianProblem::log_likelihood(const Eigen::VectorXd& y,
                                             const Eigen::VectorXd& x) const {
  const double sq = (y - a_ * x).squaredNorm();
  return -0.5 * sq / b2_ - 0.5 * dim_y() * (kLog2Pi + std::log(b2_));
}

Eigen::VectorXd LinearGaussianProblem::grad_log_likelihood_x(
    const Eigen::VectorXd& y, const Eigen::VectorXd& x) const {
  return a_.transpose() * (y - a_ * x) / b2_;
}

std::shared_ptr<const GaussianMixture> analytic_posterior(
    const LinearGaussianProblem& problem, const Eigen::VectorXd& y) {
  return problem.family_->posterior(y);
}

// ---------------------------------------------------------------------------
// Mixed-noise problem
// ---------------------------------------------------------------------------

namespace {

/// Fixed-condition posterior of the mixed-noise model. Batched overrides run
/// the forward net on the whole batch; this is the hot path of the MH
/// baseline.
class MixedNoisePosterior final : public Density {
 public:
  MixedNoisePosterior(const DenseNet* net, const RelaxedUniform* prior, double a,
                      double b, Eigen::VectorXd y)
      : net_(net), prior_(prior), a_(a), b_(b), y_(std::move(y)) {}

  int dim() const override { return net_->input_dim(); }

  double log_density(const Eigen::VectorXd& x) const override {
    return log_density_batch(x)[0];
  }
  Eigen::VectorXd grad_log_density(const Eigen::VectorXd& x) const override {
    return grad_log_density_batch(x).col(0);
  }

  Eigen::RowVectorXd log_density_batch(const Eigen::MatrixXd& x) const override {
    const Eigen::MatrixXd f = net_forward(*net_, x);
    const Eigen::ArrayXXd var = a_ * a_ * f.array().square() + b_ * b_;
    const Eigen::ArrayXXd err = (-f).array().colwise() + y_.array();
    const Eigen::RowVectorXd ll =
        (-0.5 * (var.log() + kLog2Pi) - 0.5 * err.square() / var)
            .colwise()
            .sum();
    return ll + prior_->log_density_batch(x);
  }

  Eigen::MatrixXd grad_log_density_batch(const Eigen::MatrixXd& x) const override {
    NetCache cache;
    const Eigen::MatrixXd f = net_forward(*net_, x, &cache);
    const Eigen::ArrayXXd var = a_ * a_ * f.array().square() + b_ * b_;
    const Eigen::ArrayXXd err = (-f).array().colwise() + y_.array();
    // d/df of the componentwise log-likelihood.
    const Eigen::MatrixXd dll_df =
        (err / var +
         a_ * a_ * f.array() * (err.square() / var.square() - 1.0 / var))
            .matrix();
    return net_backward(*net_, cache, dll_df) +
           prior_->grad_log_density_batch(x);
  }

 private:
  const DenseNet* net_;
  const RelaxedUniform* prior_;
  double a_, b_;
  Eigen::VectorXd y_;
};

}  // namespace

class MixedNoiseProblem::Family final : public ConditionalDensityFamily {
 public:
  explicit Family(const MixedNoiseProblem* p) : p_(p) {}
  int dim() const override { return p_->dim_x(); }
  int cond_dim() const override { return p_->dim_y(); }
  std::shared_ptr<const Density> at(const Eigen::VectorXd& y) const override {
    if (y.size() != p_->dim_y())
      throw std::invalid_argument("posterior: observation dimension mismatch");
    return std::make_shared<MixedNoisePosterior>(&p_->forward_, p_->prior_.get(),
                                                 p_->a_, p_->b_, y);
  }

 private:
  const MixedNoiseProblem* p_;
};

MixedNoiseProblem::MixedNoiseProblem(DenseNet forward_map, double noise_a,
                                     double noise_b, double prior_alpha)
    : forward_(std::move(forward_map)), a_(noise_a), b_(noise_b) {
  forward_.validate();
  if (a_ <= 0.0 || b_ <= 0.0)
    throw std::invalid_argument("MixedNoiseProblem: noise constants must be positive");
  prior_ = std::make_shared<RelaxedUniform>(forward_.input_dim(), prior_alpha);
  family_ = std::make_shared<Family>(this);
}

const ConditionalDensityFamily& MixedNoiseProblem::posterior_family() const {
  return *family_;
}

std::shared_ptr<const Density> MixedNoiseProblem::posterior_log_density(
    const Eigen::VectorXd& y) const {
  return family_->at(y);
}

void MixedNoiseProblem::sample_joint(int n, RngStream& rng, Eigen::MatrixXd& x,
                                     Eigen::MatrixXd& y) const {
  x = prior_->sample(n, rng);
  const Eigen::MatrixXd f = net_forward(forward_, x);
  y.resize(dim_y(), n);
  for (int j = 0; j < n; ++j) {
    const Eigen::VectorXd eta1 = rng.normal_vector(dim_y());
    const Eigen::VectorXd eta2 = rng.normal_vector(dim_y());
    y.col(j) = f.col(j).array() * (1.0 + a_ * eta1.array()) + b_ * eta2.array();
  }
}

Eigen::MatrixXd MixedNoiseProblem::sample_prior(int n, RngStream& rng) const {
  return prior_->sample(n, rng);
}

double MixedNoiseProblem::log_likelihood(const Eigen::VectorXd& y,
                                         const Eigen::VectorXd& x) const {
  const Eigen::ArrayXd f = net_forward(forward_, x).array();
  const Eigen::ArrayXd var = a_ * a_ * f.square() + b_ * b_;
  const Eigen::ArrayXd err = y.array() - f;
  return (-0.5 * (var.log() + kLog2Pi) - 0.5 * err.square() / var).sum();
}

Eigen::VectorXd MixedNoiseProblem::grad_log_likelihood_x(
    const Eigen::VectorXd& y, const Eigen::VectorXd& x) const {
  NetCache cache;
  const Eigen::ArrayXd f = net_forward(forward_, Eigen::MatrixXd(x), &cache).array();
  const Eigen::ArrayXd var = a_ * a_ * f.square() + b_ * b_;
  const Eigen::ArrayXd err = y.array() - f;
  const Eigen::VectorXd dll_df =
      (err / var + a_ * a_ * f * (err.square() / var.square() - 1.0 / var)).matrix();
  return net_backward(forward_, cache, Eigen::MatrixXd(dll_df)).col(0);
}

DenseNet make_synthetic_forward_map(int dim_x, int dim_y,
                                    const std::vector<int>& hidden,
                                    RngStream& rng) {
  std::vector<int> sizes;
  sizes.push_back(dim_x);
  for (int h : hidden) sizes.push_back(h);
  sizes.push_back(dim_y);
  return net_init(sizes, rng, Activation::kTanh, /*zero_last=*/false);
}

SurrogateFitResult surrogate_fit(const Eigen::MatrixXd& x, const Eigen::MatrixXd& f,
                                 const std::vector<int>& hidden, RngStream& rng,
                                 int steps, int batch, double lr) {
  if (x.cols() != f.cols() || x.cols() == 0)
    throw std::invalid_argument("surrogate_fit: sample count mismatch");
  const int n = static_cast<int>(x.cols());
  std::vector<int> sizes;
  sizes.push_back(static_cast<int>(x.rows()));
  for (int h : hidden) sizes.push_back(h);
  sizes.push_back(static_cast<int>(f.rows()));

  SurrogateFitResult out;
  out.net = net_init(sizes, rng, Activation::kTanh, false);
  Eigen::VectorXd params(out.net.param_count());
  net_get_params(out.net, params);
  AdamState adam = adam_init(out.net.param_count(), lr);
  Eigen::VectorXd grad(out.net.param_count());

  const int bs = std::min(batch, n);
  Eigen::MatrixXd xb(x.rows(), bs), fb(f.rows(), bs);
  for (int s = 0; s < steps; ++s) {
    for (int j = 0; j < bs; ++j) {
      const int idx = static_cast<int>(rng.next_raw() % static_cast<std::uint64_t>(n));
      xb.col(j) = x.col(idx);
      fb.col(j) = f.col(idx);
    }
    NetCache cache;
    const Eigen::MatrixXd pred = net_forward(out.net, xb, &cache);
    grad.setZero();
    net_backward(out.net, cache, (2.0 / bs) * (pred - fb), &grad, 0);
    adam_step(adam, params, grad);
    net_set_params(out.net, params);
  }
  out.train_rmse = std::sqrt((net_forward(out.net, x) - f).squaredNorm() / n);
  return out;
}

double posterior_grid_tv(const LinearGaussianProblem& problem,
                         const Eigen::VectorXd& y, const Eigen::VectorXd& lo,
                         const Eigen::VectorXd& hi, int res) {
  const int d = problem.dim_x();
  if (d > 2) throw std::invalid_argument("posterior_grid_tv: grid oracle needs d <= 2");
  if (lo.size() != d || hi.size() != d || res < 2)
    throw std::invalid_argument("posterior_grid_tv: bad grid");

  const auto analytic = analytic_posterior(problem, y);
  const auto bayes = problem.posterior_log_density(y);

  const long cells = d == 1 ? res : static_cast<long>(res) * res;
  Eigen::VectorXd la(cells), lb(cells);
  Eigen::VectorXd x(d);
  long idx = 0;
  for (int i = 0; i < res; ++i) {
    x[0] = lo[0] + (hi[0] - lo[0]) * (i + 0.5) / res;
    if (d == 1) {
      la[idx] = analytic->log_density(x);
      lb[idx] = bayes->log_density(x);
      ++idx;
    } else {
      for (int j = 0; j < res; ++j, ++idx) {
        x[1] = lo[1] + (hi[1] - lo[1]) * (j + 0.5) / res;
        la[idx] = analytic->log_density(x);
        lb[idx] = bayes->log_density(x);
      }
    }
  }
  auto normalize = [](Eigen::VectorXd& l) {
    const double mx = l.maxCoeff();
    Eigen::VectorXd p = (l.array() - mx).exp();
    return Eigen::VectorXd(p / p.sum());
  };
  const Eigen::VectorXd pa = normalize(la);
  const Eigen::VectorXd pb = normalize(lb);
  return 0.5 * (pa - pb).cwiseAbs().sum();
}

}  // namespace snf
