#pragma once

#include <memory>
#include <stdexcept>
#include <variant>
#include <vector>
#include <Eigen/Dense>

#include "snf/coupling.hpp"
#include "snf/density.hpp"
#include "snf/kernels.hpp"
#include "snf/problems.hpp"

namespace snf {

struct DeterministicLayer {
  int flow_index = -1;
};

struct LangevinLayer {
  LangevinConfig cfg;
  int interp_t = 0;  // index into the geometric interpolation schedule
};

struct McmcLayer {
  MhConfig cfg;
  int interp_t = 0;
};

/// One layer of the chain: a learnable diffeomorphism or a fixed stochastic
/// kernel targeting an interpolated density.
struct LayerSpec {
  std::variant<DeterministicLayer, LangevinLayer, McmcLayer> layer;

  bool is_deterministic() const {
    return std::holds_alternative<DeterministicLayer>(layer);
  }
};

/// A stochastic normalizing flow as a finite Markov chain X_0, ..., X_T with
/// X_0 ~ N(0, I). Unconditional chains carry a target density, conditional
/// chains a posterior family; stochastic layers target the geometric
/// interpolation between the latent and the (conditional) target.
struct Chain {
  int dim = 0;
  int cond_dim = 0;
  int interp_total = 0;
  std::shared_ptr<const StandardNormal> latent;
  std::shared_ptr<const Density> target;
  std::shared_ptr<const ConditionalDensityFamily> target_family;
  std::vector<LayerSpec> layers;
  std::vector<CouplingFlow> flows;

  bool conditional() const { return cond_dim > 0; }
  int num_layers() const { return static_cast<int>(layers.size()); }
  int param_count() const;
  Eigen::VectorXd params() const;
  void set_params(const Eigen::VectorXd& p);
  void validate() const;
};

enum class PathDirection { kForward, kReverse };

struct LayerPathData {
  std::vector<StepRecordBatch> records;
  std::vector<Eigen::MatrixXd> substates;  // state after each micro-step
};

/// A batch of sampled paths with everything needed to evaluate the loss and to
/// replay the paths deterministically: points x_0..x_T (one matrix per index,
/// columns are paths), per-layer accumulated log-quotient terms
/// log[f_t p_{X_{t-1}} / p_{X_t}] evaluated at the realized points, and the
/// per-micro-step randomness records.
struct PathBatch {
  PathDirection direction = PathDirection::kForward;
  std::vector<Eigen::MatrixXd> points;
  Eigen::MatrixXd terms;  // num_layers x n
  std::vector<LayerPathData> layers;
  Eigen::MatrixXd cond;  // cond_dim x n or cond_dim x 1 (broadcast); empty if none

  int n() const { return points.empty() ? 0 : static_cast<int>(points[0].cols()); }
};

/// x_0 ~ N(0, I), layers applied in order. For conditional chains y must have
/// n columns (one condition per path) or one column (shared condition).
PathBatch sample_forward_path(const Chain& chain, int n, RngStream& rng,
                              const Eigen::MatrixXd& y = Eigen::MatrixXd());

/// x_T = data column, deterministic layers apply their inverse, stochastic
/// layers apply the same kernel. Terms are evaluated on the reverse-path
/// points in chain-time orientation.
PathBatch sample_reverse_path(const Chain& chain, const Eigen::MatrixXd& x_data,
                              RngStream& rng,
                              const Eigen::MatrixXd& y = Eigen::MatrixXd());

/// Re-runs a recorded batch with frozen randomness at the chain's current
/// parameters. At the recording parameters the result is bit-identical.
PathBatch replay_path(const Chain& chain, const PathBatch& recorded);

struct LossOptions {
  bool with_grad = true;
  bool detach_stochastic = false;
  const InverseProblem* problem = nullptr;  // needed for conditional forward KL
};

struct LossResult {
  double value = 0.0;
  Eigen::VectorXd grad;
};

/// KL path loss of Theorem-5.1 form, up to additive constants:
///   forward: mean[ log p_Z(x_0) - log p_X(x_T) - sum_t term_t ]
///            (conditional: -log p_{Y|X=x_T}(y) - log p_prior(x_T) instead of
///             -log p_X(x_T))
///   reverse: mean[ -log p_Z(x_0) + sum_t term_t ]
/// Gradients flow through deterministic layers by backprop and through
/// stochastic layers by frozen-record replay rules.
LossResult kl_loss(const Chain& chain, const PathBatch& batch,
                   const LossOptions& options = LossOptions());

class JointSampler {
 public:
  virtual ~JointSampler() = default;
  /// y is left empty for unconditional data sources.
  virtual void sample(int n, RngStream& rng, Eigen::MatrixXd& x,
                      Eigen::MatrixXd& y) const = 0;
};

class ProblemSampler final : public JointSampler {
 public:
  explicit ProblemSampler(const InverseProblem& p) : p_(&p) {}
  void sample(int n, RngStream& rng, Eigen::MatrixXd& x,
              Eigen::MatrixXd& y) const override {
    p_->sample_joint(n, rng, x, y);
  }

 private:
  const InverseProblem* p_;
};

struct TrainConfig {
  double lambda = 0.0;  // weight of the forward KL term
  int batch = 128;
  int steps = 100;
  double lr = 1e-3;
  bool detach_stochastic = false;
};

struct TrainResult {
  std::vector<double> loss_trace;
};

/// Thrown when the loss goes non-finite; carries the partial trace.
class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(std::string what, std::vector<double> trace)
      : std::runtime_error(std::move(what)), loss_trace(std::move(trace)) {}
  std::vector<double> loss_trace;
};

/// Adam on the deterministic-layer parameters; the stochastic layers are
/// fixed. problem is required when lambda > 0 on a conditional chain.
TrainResult train(Chain& chain, const JointSampler& data, const TrainConfig& cfg,
                  RngStream& rng, const InverseProblem* problem = nullptr);

/// Forward-samples the chain and returns x_T (d x n).
Eigen::MatrixXd chain_sample(const Chain& chain, int n, RngStream& rng,
                             const Eigen::MatrixXd& y = Eigen::MatrixXd());

}  // namespace snf
