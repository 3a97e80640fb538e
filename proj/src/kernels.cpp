#include "snf/kernels.hpp"

#include <cmath>
#include <stdexcept>

namespace snf {

void LangevinConfig::validate() const {
  if (a1 <= 0.0 || a2 <= 0.0)
    throw std::invalid_argument("LangevinConfig: a1, a2 must be positive");
  if (n_steps < 0) throw std::invalid_argument("LangevinConfig: negative n_steps");
}

void MhConfig::validate() const {
  if (proposal == Proposal::kRandomWalk) {
    if (sigma <= 0.0) throw std::invalid_argument("MhConfig: sigma must be positive");
  } else {
    if (a1 <= 0.0 || a2 <= 0.0)
      throw std::invalid_argument("MhConfig: a1, a2 must be positive");
  }
  if (n_steps < 0) throw std::invalid_argument("MhConfig: negative n_steps");
}

namespace {

Eigen::MatrixXd draw_xi(Eigen::Index d, std::span<RngStream> rngs) {
  Eigen::MatrixXd xi(d, static_cast<Eigen::Index>(rngs.size()));
  for (Eigen::Index j = 0; j < xi.cols(); ++j)
    for (Eigen::Index i = 0; i < d; ++i) xi(i, j) = rngs[j].normal();
  return xi;
}

}  // namespace

void langevin_step(Eigen::MatrixXd& x, const TargetView& target,
                   const LangevinConfig& cfg, std::span<RngStream> rngs,
                   StepRecordBatch& rec, const Eigen::MatrixXd* grad_in,
                   Eigen::MatrixXd* grad_out) {
  const Eigen::MatrixXd grad =
      grad_in ? *grad_in : target.grad_log_density(x);
  if (!grad.allFinite())
    throw std::runtime_error("langevin_step: non-finite gradient");
  rec.xi = draw_xi(x.rows(), rngs);
  rec.u.resize(0);
  rec.accepted.clear();
  // grad u = -grad log p, so the drift is +a1 * grad log p.
  x += cfg.a1 * grad + cfg.a2 * rec.xi;
  if (grad_out) *grad_out = target.grad_log_density(x);
}

void mh_step(Eigen::MatrixXd& x, const TargetView& target, const MhConfig& cfg,
             std::span<RngStream> rngs, StepRecordBatch& rec,
             Eigen::RowVectorXd* logp_cur) {
  const Eigen::Index n = x.cols();
  Eigen::RowVectorXd lp_cur =
      (logp_cur && logp_cur->size() == n) ? *logp_cur : target.log_density(x);

  rec.xi = draw_xi(x.rows(), rngs);
  rec.u.resize(n);
  for (Eigen::Index j = 0; j < n; ++j) rec.u[j] = rngs[j].uniform();
  rec.accepted.assign(n, 0);

  Eigen::MatrixXd prop;
  Eigen::RowVectorXd log_ratio;
  if (cfg.proposal == MhConfig::Proposal::kRandomWalk) {
    prop = x + cfg.sigma * rec.xi;
    log_ratio = target.log_density(prop) - lp_cur;
  } else {
    const Eigen::MatrixXd grad_x = target.grad_log_density(x);
    if (!grad_x.allFinite())
      throw std::runtime_error("mh_step: non-finite gradient");
    const Eigen::MatrixXd mean_x = x + cfg.a1 * grad_x;
    prop = mean_x + cfg.a2 * rec.xi;
    const Eigen::MatrixXd grad_p = target.grad_log_density(prop);
    if (!grad_p.allFinite())
      throw std::runtime_error("mh_step: non-finite gradient at proposal");
    const Eigen::MatrixXd mean_p = prop + cfg.a1 * grad_p;
    const double inv2a2 = 1.0 / (2.0 * cfg.a2 * cfg.a2);
    const Eigen::RowVectorXd log_q_fwd =
        -inv2a2 * (prop - mean_x).colwise().squaredNorm();
    const Eigen::RowVectorXd log_q_bwd =
        -inv2a2 * (x - mean_p).colwise().squaredNorm();
    log_ratio = target.log_density(prop) + log_q_bwd - lp_cur - log_q_fwd;
  }
  const Eigen::RowVectorXd lp_prop = (cfg.proposal == MhConfig::Proposal::kRandomWalk)
                                         ? Eigen::RowVectorXd(log_ratio + lp_cur)
                                         : target.log_density(prop);

  for (Eigen::Index j = 0; j < n; ++j) {
    const double alpha = std::min(1.0, std::exp(std::min(0.0, log_ratio[j])));
    if (rec.u[j] < alpha) {  // tie u == alpha rejects
      rec.accepted[j] = 1;
      x.col(j) = prop.col(j);
      lp_cur[j] = lp_prop[j];
    }
  }
  if (logp_cur) *logp_cur = lp_cur;
}

double mh_acceptance(const Eigen::VectorXd& x, const Eigen::VectorXd& x_prop,
                     const Density& target, const MhConfig& cfg) {
  double log_ratio = target.log_density(x_prop) - target.log_density(x);
  if (cfg.proposal == MhConfig::Proposal::kMala) {
    const Eigen::VectorXd mean_x = x + cfg.a1 * target.grad_log_density(x);
    const Eigen::VectorXd mean_p = x_prop + cfg.a1 * target.grad_log_density(x_prop);
    const double inv2a2 = 1.0 / (2.0 * cfg.a2 * cfg.a2);
    log_ratio += -inv2a2 * (x - mean_p).squaredNorm() +
                 inv2a2 * (x_prop - mean_x).squaredNorm();
  }
  return std::min(1.0, std::exp(std::min(0.0, log_ratio)));
}

std::vector<StepRecordBatch> kernel_apply(Eigen::MatrixXd& x,
                                          const TargetView& target,
                                          const KernelConfig& cfg,
                                          std::span<RngStream> rngs) {
  std::vector<StepRecordBatch> records(cfg.n_steps());
  if (cfg.kind == KernelConfig::Kind::kLangevin) {
    cfg.langevin.validate();
    Eigen::MatrixXd grad;
    for (int s = 0; s < cfg.langevin.n_steps; ++s)
      langevin_step(x, target, cfg.langevin, rngs, records[s],
                    s > 0 ? &grad : nullptr, &grad);
  } else {
    cfg.mh.validate();
    Eigen::RowVectorXd lp;
    for (int s = 0; s < cfg.mh.n_steps; ++s)
      mh_step(x, target, cfg.mh, rngs, records[s], &lp);
  }
  return records;
}

Eigen::MatrixXd kernel_replay(const Eigen::MatrixXd& x_in,
                              const TargetView& target, const KernelConfig& cfg,
                              std::span<const StepRecordBatch> records) {
  Eigen::MatrixXd x = x_in;
  for (const StepRecordBatch& rec : records) {
    if (cfg.kind == KernelConfig::Kind::kLangevin) {
      x += cfg.langevin.a1 * target.grad_log_density(x) + cfg.langevin.a2 * rec.xi;
    } else if (cfg.mh.proposal == MhConfig::Proposal::kRandomWalk) {
      for (Eigen::Index j = 0; j < x.cols(); ++j)
        if (rec.accepted[j]) x.col(j) += cfg.mh.sigma * rec.xi.col(j);
    } else {
      const Eigen::MatrixXd prop =
          x + cfg.mh.a1 * target.grad_log_density(x) + cfg.mh.a2 * rec.xi;
      for (Eigen::Index j = 0; j < x.cols(); ++j)
        if (rec.accepted[j]) x.col(j) = prop.col(j);
    }
  }
  return x;
}

Eigen::MatrixXd replay_gradient(const Eigen::MatrixXd& x_in,
                                const Eigen::MatrixXd& grad_out,
                                std::span<const StepRecordBatch> records,
                                const TargetView& target,
                                const KernelConfig& cfg, bool detach) {
  if (detach) return grad_out;
  const int m = static_cast<int>(records.size());
  std::vector<Eigen::MatrixXd> states(m);  // states[j] = input of micro-step j
  Eigen::MatrixXd x = x_in;
  for (int j = 0; j < m; ++j) {
    states[j] = x;
    x = kernel_replay(x, target, cfg, records.subspan(j, 1));
  }

  Eigen::MatrixXd g = grad_out;
  for (int j = m - 1; j >= 0; --j) {
    const bool drift = cfg.kind == KernelConfig::Kind::kLangevin ||
                       cfg.mh.proposal == MhConfig::Proposal::kMala;
    if (!drift) continue;  // random-walk steps pass the gradient through
    const double a1 =
        cfg.kind == KernelConfig::Kind::kLangevin ? cfg.langevin.a1 : cfg.mh.a1;
    // (I - a1 hess u)^T g = g + a1 * hvp of log p.
    const Eigen::MatrixXd corr = a1 * target.hvp_log_density(states[j], g);
    if (cfg.kind == KernelConfig::Kind::kLangevin) {
      g += corr;
    } else {
      for (Eigen::Index c = 0; c < g.cols(); ++c)
        if (records[j].accepted[c]) g.col(c) += corr.col(c);
    }
  }
  return g;
}

}  // namespace snf
