#include "snf/density.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace snf {

Eigen::VectorXd Density::hvp_log_density(const Eigen::VectorXd& x,
                                         const Eigen::VectorXd& v) const {
  const double vn = v.norm();
  if (vn == 0.0) return Eigen::VectorXd::Zero(x.size());
  const double h = 1e-4 * (1.0 + x.norm());
  const Eigen::VectorXd dir = v / vn;
  return (grad_log_density(x + h * dir) - grad_log_density(x - h * dir)) *
         (vn / (2.0 * h));
}

Eigen::RowVectorXd Density::log_density_batch(const Eigen::MatrixXd& x) const {
  Eigen::RowVectorXd out(x.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j) out[j] = log_density(x.col(j));
  return out;
}

Eigen::MatrixXd Density::grad_log_density_batch(const Eigen::MatrixXd& x) const {
  Eigen::MatrixXd out(x.rows(), x.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j)
    out.col(j) = grad_log_density(x.col(j));
  return out;
}

Eigen::MatrixXd Density::hvp_log_density_batch(const Eigen::MatrixXd& x,
                                               const Eigen::MatrixXd& v) const {
  Eigen::MatrixXd out(x.rows(), x.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j)
    out.col(j) = hvp_log_density(x.col(j), v.col(j));
  return out;
}

double StandardNormal::log_density(const Eigen::VectorXd& x) const {
  return -0.5 * x.squaredNorm() -
         0.5 * dim_ * std::log(2.0 * std::numbers::pi);
}

Eigen::VectorXd StandardNormal::grad_log_density(const Eigen::VectorXd& x) const {
  return -x;
}

Eigen::VectorXd StandardNormal::hvp_log_density(const Eigen::VectorXd&,
                                                const Eigen::VectorXd& v) const {
  return -v;
}

Eigen::RowVectorXd StandardNormal::log_density_batch(const Eigen::MatrixXd& x) const {
  return (-0.5 * x.colwise().squaredNorm()).array() -
         0.5 * dim_ * std::log(2.0 * std::numbers::pi);
}

Eigen::MatrixXd StandardNormal::grad_log_density_batch(const Eigen::MatrixXd& x) const {
  return -x;
}

Eigen::MatrixXd StandardNormal::hvp_log_density_batch(const Eigen::MatrixXd&,
                                                      const Eigen::MatrixXd& v) const {
  return -v;
}

GeometricInterpolation::GeometricInterpolation(std::shared_ptr<const Density> a,
                                               std::shared_ptr<const Density> b,
                                               double wa, double wb)
    : a_(std::move(a)), b_(std::move(b)), wa_(wa), wb_(wb) {
  if (!a_ || !b_ || a_->dim() != b_->dim())
    throw std::invalid_argument("GeometricInterpolation: dimension mismatch");
}

double GeometricInterpolation::log_density(const Eigen::VectorXd& x) const {
  double out = 0.0;
  if (wa_ != 0.0) out += wa_ * a_->log_density(x);
  if (wb_ != 0.0) out += wb_ * b_->log_density(x);
  return out;
}

Eigen::VectorXd GeometricInterpolation::grad_log_density(const Eigen::VectorXd& x) const {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(x.size());
  if (wa_ != 0.0) out += wa_ * a_->grad_log_density(x);
  if (wb_ != 0.0) out += wb_ * b_->grad_log_density(x);
  return out;
}

Eigen::VectorXd GeometricInterpolation::hvp_log_density(const Eigen::VectorXd& x,
                                                        const Eigen::VectorXd& v) const {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(x.size());
  if (wa_ != 0.0) out += wa_ * a_->hvp_log_density(x, v);
  if (wb_ != 0.0) out += wb_ * b_->hvp_log_density(x, v);
  return out;
}

Eigen::RowVectorXd GeometricInterpolation::log_density_batch(const Eigen::MatrixXd& x) const {
  Eigen::RowVectorXd out = Eigen::RowVectorXd::Zero(x.cols());
  if (wa_ != 0.0) out += wa_ * a_->log_density_batch(x);
  if (wb_ != 0.0) out += wb_ * b_->log_density_batch(x);
  return out;
}

Eigen::MatrixXd GeometricInterpolation::grad_log_density_batch(const Eigen::MatrixXd& x) const {
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(x.rows(), x.cols());
  if (wa_ != 0.0) out += wa_ * a_->grad_log_density_batch(x);
  if (wb_ != 0.0) out += wb_ * b_->grad_log_density_batch(x);
  return out;
}

Eigen::MatrixXd GeometricInterpolation::hvp_log_density_batch(const Eigen::MatrixXd& x,
                                                              const Eigen::MatrixXd& v) const {
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(x.rows(), x.cols());
  if (wa_ != 0.0) out += wa_ * a_->hvp_log_density_batch(x, v);
  if (wb_ != 0.0) out += wb_ * b_->hvp_log_density_batch(x, v);
  return out;
}

std::shared_ptr<const Density> interpolated_density(
    std::shared_ptr<const Density> p_z, std::shared_ptr<const Density> p_x,
    int t, int t_total) {
  if (t_total <= 0 || t < 0 || t > t_total)
    throw std::invalid_argument("interpolated_density: need 0 <= t <= T, T > 0");
  const double wb = static_cast<double>(t) / t_total;
  return std::make_shared<GeometricInterpolation>(std::move(p_z), std::move(p_x),
                                                  1.0 - wb, wb);
}

TargetView::TargetView(std::shared_ptr<const Density> shared, int n)
    : shared_(std::move(shared)), n_(n) {
  if (!shared_) throw std::invalid_argument("TargetView: null density");
}

TargetView::TargetView(std::vector<std::shared_ptr<const Density>> per_column)
    : per_column_(std::move(per_column)),
      n_(static_cast<int>(per_column_.size())) {
  if (per_column_.empty())
    throw std::invalid_argument("TargetView: empty column set");
}

int TargetView::dim() const {
  return shared_ ? shared_->dim() : per_column_.front()->dim();
}

Eigen::RowVectorXd TargetView::log_density(const Eigen::MatrixXd& x) const {
  if (x.cols() != n_) throw std::invalid_argument("TargetView: batch size mismatch");
  if (shared_) return shared_->log_density_batch(x);
  Eigen::RowVectorXd out(n_);
  for (int j = 0; j < n_; ++j) out[j] = per_column_[j]->log_density(x.col(j));
  return out;
}

Eigen::MatrixXd TargetView::grad_log_density(const Eigen::MatrixXd& x) const {
  if (x.cols() != n_) throw std::invalid_argument("TargetView: batch size mismatch");
  if (shared_) return shared_->grad_log_density_batch(x);
  Eigen::MatrixXd out(x.rows(), n_);
  for (int j = 0; j < n_; ++j) out.col(j) = per_column_[j]->grad_log_density(x.col(j));
  return out;
}

Eigen::MatrixXd TargetView::hvp_log_density(const Eigen::MatrixXd& x,
                                            const Eigen::MatrixXd& v) const {
  if (x.cols() != n_) throw std::invalid_argument("TargetView: batch size mismatch");
  if (shared_) return shared_->hvp_log_density_batch(x, v);
  Eigen::MatrixXd out(x.rows(), n_);
  for (int j = 0; j < n_; ++j)
    out.col(j) = per_column_[j]->hvp_log_density(x.col(j), v.col(j));
  return out;
}

}  // namespace snf
