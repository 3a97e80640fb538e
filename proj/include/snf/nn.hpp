#pragma once

#include <vector>
#include <Eigen/Dense>

#include "snf/rng.hpp"

namespace snf {

enum class Activation { kTanh, kIdentity };

/// Plain dense feed-forward network. The activation applies to hidden layers
/// only; the output layer is always affine. Batches are column-major: each
/// column of an input matrix is one sample.
struct DenseNet {
  std::vector<int> layer_sizes;          // [in, h1, ..., out]
  std::vector<Eigen::MatrixXd> weights;  // weights[l]: sizes[l+1] x sizes[l]
  std::vector<Eigen::VectorXd> biases;
  Activation activation = Activation::kTanh;

  int input_dim() const { return layer_sizes.front(); }
  int output_dim() const { return layer_sizes.back(); }
  int num_layers() const { return static_cast<int>(weights.size()); }
  int param_count() const;

  /// Throws std::invalid_argument on inconsistent shapes or non-finite
  /// parameters.
  void validate() const;
};

/// Forward intermediates needed by net_backward. inputs[l] is the input to
/// affine layer l (so inputs[0] is the batch itself and inputs[l>0] are the
/// hidden activations).
struct NetCache {
  std::vector<Eigen::MatrixXd> inputs;
};

struct GradBundle {
  Eigen::VectorXd grad_input;
  Eigen::VectorXd grad_params;  // canonical flat order, see net_get_params
};

/// Fan-in scaled uniform init, zero biases. With zero_last the final layer is
/// zero-initialized so the net starts as the constant zero map.
DenseNet net_init(const std::vector<int>& layer_sizes, RngStream& rng,
                  Activation activation = Activation::kTanh,
                  bool zero_last = false);

Eigen::MatrixXd net_forward(const DenseNet& net, const Eigen::MatrixXd& x,
                            NetCache* cache = nullptr);
Eigen::VectorXd net_forward(const DenseNet& net, const Eigen::VectorXd& x);

/// Vector-Jacobian products for a cached batch. Returns the gradient with
/// respect to the input batch; if param_grad is non-null, the batch-summed
/// parameter gradient is accumulated into param_grad->segment(offset, ...).
Eigen::MatrixXd net_backward(const DenseNet& net, const NetCache& cache,
                             const Eigen::MatrixXd& upstream,
                             Eigen::VectorXd* param_grad = nullptr,
                             int offset = 0);
GradBundle net_backward(const DenseNet& net, const Eigen::VectorXd& x,
                        const Eigen::VectorXd& upstream);

/// Canonical parameter flattening: layer-major, weights (Eigen column-major
/// storage order) then bias. Everything that touches parameters (optimizer,
/// serialization, finite-difference tests) uses this order.
void net_get_params(const DenseNet& net, Eigen::VectorXd& out, int offset = 0);
void net_set_params(DenseNet& net, const Eigen::VectorXd& params, int offset = 0);

struct AdamState {
  std::int64_t step = 0;
  Eigen::VectorXd m;
  Eigen::VectorXd v;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

AdamState adam_init(int param_count, double lr);

/// One Adam update with bias correction. Throws std::runtime_error on
/// non-finite gradient entries (training divergence).
void adam_step(AdamState& state, Eigen::VectorXd& params,
               const Eigen::VectorXd& grad);

}  // namespace snf
