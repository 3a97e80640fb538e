#pragma once

#include <span>
#include <vector>
#include <Eigen/Dense>

#include "snf/density.hpp"
#include "snf/rng.hpp"

namespace snf {

/// Overdamped Langevin step x' = x - a1 * grad u(x) + a2 * xi with
/// u = -log p_t and xi ~ N(0, I), applied n_steps times.
struct LangevinConfig {
  double a1 = 1e-6;
  double a2 = 1.4142135623730951e-3;  // a2^2 = 2e-6
  int n_steps = 1;

  void validate() const;
};

/// Metropolis-Hastings step. Random-walk proposal N(x, sigma^2 I) or MALA
/// proposal N(x - a1 * grad u(x), a2^2 I), applied n_steps times.
struct MhConfig {
  enum class Proposal { kRandomWalk, kMala };
  Proposal proposal = Proposal::kRandomWalk;
  double sigma = 0.4;
  double a1 = 1e-6;
  double a2 = 1.4142135623730951e-3;
  int n_steps = 1;

  void validate() const;
};

/// Replayable randomness of one micro-step over a batch: the Gaussian draw
/// per column, and for MH steps the uniform and the realized acceptance flag.
/// Replay treats all three as constants, which is exactly the almost-sure
/// gradient rule for the acceptance indicator.
struct StepRecordBatch {
  Eigen::MatrixXd xi;            // d x n
  Eigen::RowVectorXd u;          // 1 x n, MH only
  std::vector<std::uint8_t> accepted;  // n entries, MH only
};

/// One Langevin micro-step in place; the draw is recorded. grad_in, when
/// given, must equal grad log p(x) and saves one batch gradient; grad_out
/// receives grad log p(x') for ladder reuse.
void langevin_step(Eigen::MatrixXd& x, const TargetView& target,
                   const LangevinConfig& cfg, std::span<RngStream> rngs,
                   StepRecordBatch& rec,
                   const Eigen::MatrixXd* grad_in = nullptr,
                   Eigen::MatrixXd* grad_out = nullptr);

/// One MH micro-step in place; logp_cur (log p at x) is updated to the new
/// state when provided, avoiding re-evaluation across micro-steps.
void mh_step(Eigen::MatrixXd& x, const TargetView& target, const MhConfig& cfg,
             std::span<RngStream> rngs, StepRecordBatch& rec,
             Eigen::RowVectorXd* logp_cur = nullptr);

/// Single-point acceptance probability min{1, p(x')q(x|x') / (p(x)q(x'|x))},
/// computed in log space.
double mh_acceptance(const Eigen::VectorXd& x, const Eigen::VectorXd& x_prop,
                     const Density& target, const MhConfig& cfg);

/// Tagged micro-step sequence: n_steps of the configured kernel.
struct KernelConfig {
  enum class Kind { kLangevin, kMetropolis };
  Kind kind = Kind::kLangevin;
  LangevinConfig langevin;
  MhConfig mh;

  int n_steps() const {
    return kind == Kind::kLangevin ? langevin.n_steps : mh.n_steps;
  }
};

std::vector<StepRecordBatch> kernel_apply(Eigen::MatrixXd& x,
                                          const TargetView& target,
                                          const KernelConfig& cfg,
                                          std::span<RngStream> rngs);

/// Re-runs the micro-steps from x_in with frozen records. Bit-identical to the
/// original pass at the parameters it was recorded under.
Eigen::MatrixXd kernel_replay(const Eigen::MatrixXd& x_in,
                              const TargetView& target, const KernelConfig& cfg,
                              std::span<const StepRecordBatch> records);

/// Gradient with respect to the kernel input of a scalar with gradient
/// grad_out with respect to the kernel output, under frozen records:
/// Langevin and accepted MALA micro-steps propagate (I - a1 * hess u)^T via
/// the target's Hessian-vector product, random-walk and rejected steps pass
/// the gradient through unchanged. With detach = true every micro-step is
/// treated as pass-through.
Eigen::MatrixXd replay_gradient(const Eigen::MatrixXd& x_in,
                                const Eigen::MatrixXd& grad_out,
                                std::span<const StepRecordBatch> records,
                                const TargetView& target,
                                const KernelConfig& cfg, bool detach = false);

}  // namespace snf
