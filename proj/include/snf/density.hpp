#pragma once

#include <memory>
#include <vector>
#include <Eigen/Dense>

namespace snf {

/// Evaluable unnormalized log-density with gradient and Hessian-vector
/// product. Normalizing constants are never needed: every quantity built on
/// top of this (acceptance ratios, quotient terms, interpolations) uses
/// differences of log-densities only.
///
/// Batched variants take one sample per column; the defaults loop, subclasses
/// on hot paths override them with vectorized code.
class Density {
 public:
  virtual ~Density() = default;

  virtual int dim() const = 0;
  virtual double log_density(const Eigen::VectorXd& x) const = 0;
  virtual Eigen::VectorXd grad_log_density(const Eigen::VectorXd& x) const = 0;

  /// Hessian-vector product of log-density. Default is a central finite
  /// difference of grad_log_density with step 1e-4 * (1 + |x|).
  virtual Eigen::VectorXd hvp_log_density(const Eigen::VectorXd& x,
                                          const Eigen::VectorXd& v) const;

  virtual Eigen::RowVectorXd log_density_batch(const Eigen::MatrixXd& x) const;
  virtual Eigen::MatrixXd grad_log_density_batch(const Eigen::MatrixXd& x) const;
  virtual Eigen::MatrixXd hvp_log_density_batch(const Eigen::MatrixXd& x,
                                                const Eigen::MatrixXd& v) const;
};

class StandardNormal final : public Density {
 public:
  explicit StandardNormal(int dim) : dim_(dim) {}
  int dim() const override { return dim_; }
  double log_density(const Eigen::VectorXd& x) const override;
  Eigen::VectorXd grad_log_density(const Eigen::VectorXd& x) const override;
  Eigen::VectorXd hvp_log_density(const Eigen::VectorXd& x,
                                  const Eigen::VectorXd& v) const override;
  Eigen::RowVectorXd log_density_batch(const Eigen::MatrixXd& x) const override;
  Eigen::MatrixXd grad_log_density_batch(const Eigen::MatrixXd& x) const override;
  Eigen::MatrixXd hvp_log_density_batch(const Eigen::MatrixXd& x,
                                        const Eigen::MatrixXd& v) const override;

 private:
  int dim_;
};

/// Geometric-mean interpolation between two unnormalized log-densities:
/// log p = wa * log a + wb * log b. The normalizing constant is dropped.
class GeometricInterpolation final : public Density {
 public:
  GeometricInterpolation(std::shared_ptr<const Density> a,
                         std::shared_ptr<const Density> b, double wa, double wb);
  int dim() const override { return a_->dim(); }
  double log_density(const Eigen::VectorXd& x) const override;
  Eigen::VectorXd grad_log_density(const Eigen::VectorXd& x) const override;
  Eigen::VectorXd hvp_log_density(const Eigen::VectorXd& x,
                                  const Eigen::VectorXd& v) const override;
  Eigen::RowVectorXd log_density_batch(const Eigen::MatrixXd& x) const override;
  Eigen::MatrixXd grad_log_density_batch(const Eigen::MatrixXd& x) const override;
  Eigen::MatrixXd hvp_log_density_batch(const Eigen::MatrixXd& x,
                                        const Eigen::MatrixXd& v) const override;

 private:
  std::shared_ptr<const Density> a_;
  std::shared_ptr<const Density> b_;
  double wa_, wb_;
};

/// The annealing schedule p_t proportional to p_Z^{(T-t)/T} * p_X^{t/T}.
std::shared_ptr<const Density> interpolated_density(
    std::shared_ptr<const Density> p_z, std::shared_ptr<const Density> p_x,
    int t, int t_total);

/// Family of densities indexed by a condition vector y (posteriors of an
/// inverse problem).
class ConditionalDensityFamily {
 public:
  virtual ~ConditionalDensityFamily() = default;
  virtual int dim() const = 0;
  virtual int cond_dim() const = 0;
  virtual std::shared_ptr<const Density> at(const Eigen::VectorXd& y) const = 0;
};

/// Uniform view over "one target for the whole batch" versus "one target per
/// column". Stochastic kernels and loss terms evaluate through this.
class TargetView {
 public:
  TargetView(std::shared_ptr<const Density> shared, int n);
  explicit TargetView(std::vector<std::shared_ptr<const Density>> per_column);

  int cols() const { return n_; }
  int dim() const;
  Eigen::RowVectorXd log_density(const Eigen::MatrixXd& x) const;
  Eigen::MatrixXd grad_log_density(const Eigen::MatrixXd& x) const;
  Eigen::MatrixXd hvp_log_density(const Eigen::MatrixXd& x,
                                  const Eigen::MatrixXd& v) const;

 private:
  std::shared_ptr<const Density> shared_;
  std::vector<std::shared_ptr<const Density>> per_column_;
  int n_ = 0;
};

}  // namespace snf
