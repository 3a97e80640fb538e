#pragma once

#include <utility>
#include <vector>
#include <Eigen/Dense>

#include "snf/nn.hpp"
#include "snf/rng.hpp"

namespace snf {

/// Affine coupling block. With input split (xi1, xi2) and optional condition y
/// appended to every subnetwork input:
///   x1 = xi1 .* exp(s2(xi2, y)) + t2(xi2, y)
///   x2 = xi2 .* exp(s1(x1, y))  + t1(x1, y)
/// log-determinant = sum(s2) + sum(s1). The inverse is closed-form and needs
/// no subnetwork inversion. s-outputs are passed through c*tanh(./c) with
/// bound c = s_clamp so the exponentials stay in a safe range; the map remains
/// a diffeomorphism.
struct CouplingBlock {
  int d1 = 0;
  int d2 = 0;
  int cond_dim = 0;
  double s_clamp = 2.5;
  DenseNet s2, t2;  // (d2 + cond_dim) -> d1
  DenseNet s1, t1;  // (d1 + cond_dim) -> d2

  int dim() const { return d1 + d2; }
  int param_count() const;
  void validate() const;
};

/// Stack of (permutation, coupling block) pairs; the permutation applies
/// before its block. Permutations contribute zero log-determinant.
struct CouplingFlow {
  int dim = 0;
  int cond_dim = 0;
  std::vector<std::vector<int>> perms;
  std::vector<CouplingBlock> blocks;

  int num_blocks() const { return static_cast<int>(blocks.size()); }
  int param_count() const;
  void validate() const;

  Eigen::VectorXd params() const;
  void set_params(const Eigen::VectorXd& p);
};

/// Random fixed permutations, fan-in init with zero-initialized final subnet
/// layers: the flow starts as the identity map.
CouplingFlow make_flow(int dim, int cond_dim, int num_blocks,
                       const std::vector<int>& hidden, double s_clamp,
                       RngStream& rng);

struct BlockCache {
  NetCache s2c, t2c, s1c, t1c;
  Eigen::MatrixXd xi1, xi2, x1;
  Eigen::MatrixXd u, w;          // clamped s-values
  Eigen::MatrixXd exp_u, exp_w;  // exp(u) forward, exp(-u) inverse
};

struct FlowCache {
  bool inverse = false;
  Eigen::Index n = 0;
  std::vector<BlockCache> blocks;
};

/// Batched flow evaluation; columns are samples. y must have cond_dim rows and
/// either n columns or a single column (broadcast); pass an empty matrix when
/// cond_dim == 0. Throws std::runtime_error on non-finite results.
Eigen::MatrixXd flow_forward(const CouplingFlow& flow, const Eigen::MatrixXd& z,
                             const Eigen::MatrixXd& y,
                             Eigen::RowVectorXd* logdet = nullptr,
                             FlowCache* cache = nullptr);
Eigen::MatrixXd flow_inverse(const CouplingFlow& flow, const Eigen::MatrixXd& x,
                             const Eigen::MatrixXd& y,
                             Eigen::RowVectorXd* logdet_inv = nullptr,
                             FlowCache* cache = nullptr);

/// Reverse-mode gradients of any scalar built from (output, logdet).
/// grad_out is the gradient with respect to the pass's output, grad_logdet
/// with respect to its per-column log-determinant. Returns the gradient with
/// respect to the pass's input; parameter gradients are accumulated into
/// param_grad->segment(offset, flow.param_count()). The cache must come from
/// the matching pass.
Eigen::MatrixXd flow_backward(const CouplingFlow& flow, const FlowCache& cache,
                              const Eigen::MatrixXd& grad_out,
                              const Eigen::RowVectorXd& grad_logdet,
                              Eigen::VectorXd* param_grad = nullptr,
                              int offset = 0);
Eigen::MatrixXd flow_inverse_backward(const CouplingFlow& flow,
                                      const FlowCache& cache,
                                      const Eigen::MatrixXd& grad_out,
                                      const Eigen::RowVectorXd& grad_logdet_inv,
                                      Eigen::VectorXd* param_grad = nullptr,
                                      int offset = 0);

// Single-sample block operations.
std::pair<Eigen::VectorXd, double> block_forward(
    const CouplingBlock& block, const Eigen::VectorXd& xi,
    const Eigen::VectorXd& y = Eigen::VectorXd());
std::pair<Eigen::VectorXd, double> block_inverse(
    const CouplingBlock& block, const Eigen::VectorXd& x,
    const Eigen::VectorXd& y = Eigen::VectorXd());

}  // namespace snf
