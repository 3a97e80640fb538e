#pragma once

#include <memory>
#include <vector>
#include <Eigen/Dense>

#include "snf/density.hpp"
#include "snf/nn.hpp"
#include "snf/rng.hpp"

namespace snf {

/// Gaussian mixture with log-sum-exp stable evaluation, analytic gradient and
/// Hessian-vector product, and exact sampling. Weights are normalized on
/// construction.
class GaussianMixture final : public Density {
 public:
  GaussianMixture(Eigen::VectorXd weights, Eigen::MatrixXd means,
                  std::vector<Eigen::MatrixXd> covs);

  int dim() const override { return static_cast<int>(means_.rows()); }
  int num_components() const { return static_cast<int>(means_.cols()); }
  const Eigen::VectorXd& weights() const { return w_; }
  const Eigen::MatrixXd& means() const { return means_; }
  const Eigen::MatrixXd& cov(int k) const { return covs_[k]; }

  double log_density(const Eigen::VectorXd& x) const override;
  Eigen::VectorXd grad_log_density(const Eigen::VectorXd& x) const override;
  Eigen::VectorXd hvp_log_density(const Eigen::VectorXd& x,
                                  const Eigen::VectorXd& v) const override;
  Eigen::RowVectorXd log_density_batch(const Eigen::MatrixXd& x) const override;
  Eigen::MatrixXd grad_log_density_batch(const Eigen::MatrixXd& x) const override;
  Eigen::MatrixXd hvp_log_density_batch(const Eigen::MatrixXd& x,
                                        const Eigen::MatrixXd& v) const override;

  Eigen::VectorXd sample(RngStream& rng) const;
  Eigen::MatrixXd sample(int n, RngStream& rng) const;

 private:
  // Per-component log weight + Gaussian normalizer and the quadratic form,
  // for every column.
  Eigen::MatrixXd component_logs(const Eigen::MatrixXd& x) const;

  Eigen::VectorXd w_, log_w_;
  Eigen::MatrixXd means_;  // dim x K
  std::vector<Eigen::MatrixXd> covs_;
  std::vector<Eigen::LLT<Eigen::MatrixXd>> llt_;
  Eigen::VectorXd log_norm_;  // -(d/2) log 2pi - (1/2) log det cov
};

/// Product of the relaxed box density: constant on [-1,1] per coordinate with
/// exp(-alpha * distance) tails, strictly positive everywhere and integrating
/// to one. The gradient at the kinks takes the interior (zero) value.
class RelaxedUniform final : public Density {
 public:
  RelaxedUniform(int dim, double alpha);
  int dim() const override { return dim_; }
  double alpha() const { return alpha_; }
  double log_density(const Eigen::VectorXd& x) const override;
  Eigen::VectorXd grad_log_density(const Eigen::VectorXd& x) const override;
  Eigen::VectorXd hvp_log_density(const Eigen::VectorXd& x,
                                  const Eigen::VectorXd& v) const override;
  Eigen::RowVectorXd log_density_batch(const Eigen::MatrixXd& x) const override;
  Eigen::MatrixXd grad_log_density_batch(const Eigen::MatrixXd& x) const override;

  Eigen::MatrixXd sample(int n, RngStream& rng) const;

 private:
  int dim_;
  double alpha_;
  double log_c_;  // log(alpha / (2 alpha + 2))
};

std::shared_ptr<const Density> relaxed_uniform(int dim, double alpha);

/// Forward operator, noise model and prior; produces conditional posteriors.
class InverseProblem {
 public:
  virtual ~InverseProblem() = default;
  virtual int dim_x() const = 0;
  virtual int dim_y() const = 0;
  virtual const Density& prior() const = 0;
  virtual const ConditionalDensityFamily& posterior_family() const = 0;

  /// Unnormalized p_{X|Y=y} assembled from likelihood and prior by Bayes'
  /// rule. For the linear-Gaussian problem this is an independent route from
  /// the analytic posterior the family returns.
  virtual std::shared_ptr<const Density> posterior_log_density(
      const Eigen::VectorXd& y) const = 0;

  virtual void sample_joint(int n, RngStream& rng, Eigen::MatrixXd& x,
                            Eigen::MatrixXd& y) const = 0;
  virtual Eigen::MatrixXd sample_prior(int n, RngStream& rng) const = 0;
  virtual double log_likelihood(const Eigen::VectorXd& y,
                                const Eigen::VectorXd& x) const = 0;
  virtual Eigen::VectorXd grad_log_likelihood_x(const Eigen::VectorXd& y,
                                                const Eigen::VectorXd& x) const = 0;
};

/// Y = A X + eta with eta ~ N(0, b^2 I) and a Gaussian-mixture prior on X.
/// The posterior is again a Gaussian mixture with
///   cov_k   = (A^T A / b^2 + cov_k^{-1})^{-1}
///   mean_k  = cov_k (A^T y / b^2 + cov_k^{-1} m_k)
/// and reweighted, renormalized component weights.
class LinearGaussianProblem final : public InverseProblem {
 public:
  LinearGaussianProblem(Eigen::MatrixXd a, double b2,
                        std::shared_ptr<const GaussianMixture> prior);

  int dim_x() const override { return static_cast<int>(a_.cols()); }
  int dim_y() const override { return static_cast<int>(a_.rows()); }
  const Eigen::MatrixXd& a() const { return a_; }
  double b2() const { return b2_; }
  const GaussianMixture& mixture_prior() const { return *prior_; }

  const Density& prior() const override { return *prior_; }
  const ConditionalDensityFamily& posterior_family() const override;
  std::shared_ptr<const Density> posterior_log_density(
      const Eigen::VectorXd& y) const override;
  void sample_joint(int n, RngStream& rng, Eigen::MatrixXd& x,
                    Eigen::MatrixXd& y) const override;
  Eigen::MatrixXd sample_prior(int n, RngStream& rng) const override;
  double log_likelihood(const Eigen::VectorXd& y,
                        const Eigen::VectorXd& x) const override;
  Eigen::VectorXd grad_log_likelihood_x(const Eigen::VectorXd& y,
                                        const Eigen::VectorXd& x) const override;

 private:
  friend std::shared_ptr<const GaussianMixture> analytic_posterior(
      const LinearGaussianProblem&, const Eigen::VectorXd&);
  class Family;
  Eigen::MatrixXd a_;
  double b2_;
  std::shared_ptr<const GaussianMixture> prior_;
  std::shared_ptr<const Family> family_;
};

/// Posterior mixture per the tilde formulas; weights renormalized in log
/// space.
std::shared_ptr<const GaussianMixture> analytic_posterior(
    const LinearGaussianProblem& problem, const Eigen::VectorXd& y);

/// Y = F(X) + a F(X) eta_1 + b eta_2 componentwise, so
/// p(y | x) = N(y | F(x), (a^2 F(x)^2 + b^2) I), with a relaxed uniform prior.
/// F is a dense network (normally a fitted surrogate).
class MixedNoiseProblem final : public InverseProblem {
 public:
  MixedNoiseProblem(DenseNet forward_map, double noise_a, double noise_b,
                    double prior_alpha);

  int dim_x() const override { return forward_.input_dim(); }
  int dim_y() const override { return forward_.output_dim(); }
  double noise_a() const { return a_; }
  double noise_b() const { return b_; }
  const DenseNet& forward_map() const { return forward_; }

  const Density& prior() const override { return *prior_; }
  const ConditionalDensityFamily& posterior_family() const override;
  std::shared_ptr<const Density> posterior_log_density(
      const Eigen::VectorXd& y) const override;
  void sample_joint(int n, RngStream& rng, Eigen::MatrixXd& x,
                    Eigen::MatrixXd& y) const override;
  Eigen::MatrixXd sample_prior(int n, RngStream& rng) const override;
  double log_likelihood(const Eigen::VectorXd& y,
                        const Eigen::VectorXd& x) const override;
  Eigen::VectorXd grad_log_likelihood_x(const Eigen::VectorXd& y,
                                        const Eigen::VectorXd& x) const override;

 private:
  class Family;
  DenseNet forward_;
  double a_, b_;
  std::shared_ptr<const RelaxedUniform> prior_;
  std::shared_ptr<const Family> family_;
};

/// Frozen random smooth map used as the ground-truth forward operator when no
/// physical solver is available.
DenseNet make_synthetic_forward_map(int dim_x, int dim_y,
                                    const std::vector<int>& hidden,
                                    RngStream& rng);

struct SurrogateFitResult {
  DenseNet net;
  double train_rmse = 0.0;
};

/// Least-squares fit of a dense net to (x_i, f_i) pairs with Adam.
SurrogateFitResult surrogate_fit(const Eigen::MatrixXd& x,
                                 const Eigen::MatrixXd& f,
                                 const std::vector<int>& hidden, RngStream& rng,
                                 int steps = 2000, int batch = 128,
                                 double lr = 1e-3);

/// Total-variation distance on a regular grid (cell-center quadrature, d <= 2)
/// between the analytic posterior and the normalized likelihood * prior. Both
/// sides are normalized over the grid, so this checks the tilde formulas
/// against plain Bayes.
double posterior_grid_tv(const LinearGaussianProblem& problem,
                         const Eigen::VectorXd& y, const Eigen::VectorXd& lo,
                         const Eigen::VectorXd& hi, int res);

}  // namespace snf
