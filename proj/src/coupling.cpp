#include "snf/coupling.hpp"

#include <cmath>
#include <stdexcept>

namespace snf {

namespace {

Eigen::MatrixXd clamp_s(const Eigen::MatrixXd& raw, double c) {
  return c * (raw.array() / c).tanh();
}

// d(clamp)/d(raw) expressed through the clamped value.
Eigen::ArrayXXd clamp_deriv(const Eigen::MatrixXd& clamped, double c) {
  return 1.0 - (clamped.array() / c).square();
}

// Stacks a coordinate part on top of the (possibly broadcast) condition.
Eigen::MatrixXd with_cond(const Eigen::MatrixXd& part, const Eigen::MatrixXd& y,
                          int cond_dim) {
  if (cond_dim == 0) return part;
  if (y.rows() != cond_dim)
    throw std::invalid_argument("coupling: condition dimension mismatch");
  Eigen::MatrixXd in(part.rows() + cond_dim, part.cols());
  in.topRows(part.rows()) = part;
  if (y.cols() == part.cols())
    in.bottomRows(cond_dim) = y;
  else if (y.cols() == 1)
    in.bottomRows(cond_dim) = y.replicate(1, part.cols());
  else
    throw std::invalid_argument("coupling: condition batch mismatch");
  return in;
}

void block_forward_batch(const CouplingBlock& b, const Eigen::MatrixXd& xi,
                         const Eigen::MatrixXd& y, Eigen::MatrixXd& x,
                         Eigen::RowVectorXd* logdet, BlockCache* cache) {
  const Eigen::MatrixXd xi1 = xi.topRows(b.d1);
  const Eigen::MatrixXd xi2 = xi.bottomRows(b.d2);

  const Eigen::MatrixXd in2 = with_cond(xi2, y, b.cond_dim);
  NetCache s2c, t2c;
  Eigen::MatrixXd u = clamp_s(net_forward(b.s2, in2, cache ? &s2c : nullptr), b.s_clamp);
  Eigen::MatrixXd v = net_forward(b.t2, in2, cache ? &t2c : nullptr);
  Eigen::MatrixXd exp_u = u.array().exp();
  Eigen::MatrixXd x1 = (xi1.array() * exp_u.array()).matrix() + v;

  const Eigen::MatrixXd in1 = with_cond(x1, y, b.cond_dim);
  NetCache s1c, t1c;
  Eigen::MatrixXd w = clamp_s(net_forward(b.s1, in1, cache ? &s1c : nullptr), b.s_clamp);
  Eigen::MatrixXd r = net_forward(b.t1, in1, cache ? &t1c : nullptr);
  Eigen::MatrixXd exp_w = w.array().exp();

  x.resize(b.dim(), xi.cols());
  x.topRows(b.d1) = x1;
  x.bottomRows(b.d2) = (xi2.array() * exp_w.array()).matrix() + r;
  if (logdet) *logdet += u.colwise().sum() + w.colwise().sum();

  if (cache) {
    cache->s2c = std::move(s2c);
    cache->t2c = std::move(t2c);
    cache->s1c = std::move(s1c);
    cache->t1c = std::move(t1c);
    cache->xi1 = xi1;
    cache->xi2 = xi2;
    cache->x1 = std::move(x1);
    cache->u = std::move(u);
    cache->w = std::move(w);
    cache->exp_u = std::move(exp_u);
    cache->exp_w = std::move(exp_w);
  }
}

void block_inverse_batch(const CouplingBlock& b, const Eigen::MatrixXd& x,
                         const Eigen::MatrixXd& y, Eigen::MatrixXd& xi,
                         Eigen::RowVectorXd* logdet_inv, BlockCache* cache) {
  const Eigen::MatrixXd x1 = x.topRows(b.d1);
  const Eigen::MatrixXd x2 = x.bottomRows(b.d2);

  const Eigen::MatrixXd in1 = with_cond(x1, y, b.cond_dim);
  NetCache s1c, t1c;
  Eigen::MatrixXd w = clamp_s(net_forward(b.s1, in1, cache ? &s1c : nullptr), b.s_clamp);
  Eigen::MatrixXd r = net_forward(b.t1, in1, cache ? &t1c : nullptr);
  Eigen::MatrixXd exp_mw = (-w).array().exp();
  Eigen::MatrixXd xi2 = ((x2 - r).array() * exp_mw.array()).matrix();

  const Eigen::MatrixXd in2 = with_cond(xi2, y, b.cond_dim);
  NetCache s2c, t2c;
  Eigen::MatrixXd u = clamp_s(net_forward(b.s2, in2, cache ? &s2c : nullptr), b.s_clamp);
  Eigen::MatrixXd v = net_forward(b.t2, in2, cache ? &t2c : nullptr);
  Eigen::MatrixXd exp_mu = (-u).array().exp();

  xi.resize(b.dim(), x.cols());
  xi.topRows(b.d1) = ((x1 - v).array() * exp_mu.array()).matrix();
  xi.bottomRows(b.d2) = xi2;
  if (logdet_inv) *logdet_inv -= u.colwise().sum() + w.colwise().sum();

  if (cache) {
    cache->s2c = std::move(s2c);
    cache->t2c = std::move(t2c);
    cache->s1c = std::move(s1c);
    cache->t1c = std::move(t1c);
    cache->xi1 = xi.topRows(b.d1);
    cache->xi2 = std::move(xi2);
    cache->x1 = x1;
    cache->u = std::move(u);
    cache->w = std::move(w);
    cache->exp_u = std::move(exp_mu);
    cache->exp_w = std::move(exp_mw);
  }
}

// Gradient through the forward block. gx is consumed; returns grad wrt xi.
Eigen::MatrixXd block_backward(const CouplingBlock& b, const BlockCache& c,
                               const Eigen::MatrixXd& gx,
                               const Eigen::RowVectorXd& gld,
                               Eigen::VectorXd* pg, int ofs) {
  const int ofs_s2 = ofs;
  const int ofs_t2 = ofs_s2 + b.s2.param_count();
  const int ofs_s1 = ofs_t2 + b.t2.param_count();
  const int ofs_t1 = ofs_s1 + b.s1.param_count();

  Eigen::MatrixXd gx1 = gx.topRows(b.d1);
  const Eigen::MatrixXd gx2 = gx.bottomRows(b.d2);

  // x2 = xi2 .* exp(w) + r, logdet += sum(w)
  Eigen::MatrixXd gw = (gx2.array() * c.xi2.array() * c.exp_w.array()).matrix();
  gw.array().rowwise() += gld.array();
  gw.array() *= clamp_deriv(c.w, b.s_clamp);
  Eigen::MatrixXd gin1 = net_backward(b.s1, c.s1c, gw, pg, ofs_s1);
  gin1 += net_backward(b.t1, c.t1c, gx2, pg, ofs_t1);
  gx1 += gin1.topRows(b.d1);
  Eigen::MatrixXd gxi2 = (gx2.array() * c.exp_w.array()).matrix();

  // x1 = xi1 .* exp(u) + v, logdet += sum(u)
  Eigen::MatrixXd gu = (gx1.array() * c.xi1.array() * c.exp_u.array()).matrix();
  gu.array().rowwise() += gld.array();
  gu.array() *= clamp_deriv(c.u, b.s_clamp);
  Eigen::MatrixXd gin2 = net_backward(b.s2, c.s2c, gu, pg, ofs_s2);
  gin2 += net_backward(b.t2, c.t2c, gx1, pg, ofs_t2);
  gxi2 += gin2.topRows(b.d2);

  Eigen::MatrixXd gxi(b.dim(), gx.cols());
  gxi.topRows(b.d1) = (gx1.array() * c.exp_u.array()).matrix();
  gxi.bottomRows(b.d2) = gxi2;
  return gxi;
}

// Gradient through the inverse block. gxi in, grad wrt x out.
Eigen::MatrixXd block_inverse_backward(const CouplingBlock& b, const BlockCache& c,
                                       const Eigen::MatrixXd& gxi,
                                       const Eigen::RowVectorXd& gldinv,
                                       Eigen::VectorXd* pg, int ofs) {
  const int ofs_s2 = ofs;
  const int ofs_t2 = ofs_s2 + b.s2.param_count();
  const int ofs_s1 = ofs_t2 + b.t2.param_count();
  const int ofs_t1 = ofs_s1 + b.s1.param_count();

  const Eigen::MatrixXd gxi1 = gxi.topRows(b.d1);
  Eigen::MatrixXd gxi2 = gxi.bottomRows(b.d2);

  // xi1 = (x1 - v) .* exp(-u), logdet_inv -= sum(u); exp_u caches exp(-u).
  Eigen::MatrixXd gu = -(gxi1.array() * c.xi1.array()).matrix();
  gu.array().rowwise() -= gldinv.array();
  gu.array() *= clamp_deriv(c.u, b.s_clamp);
  Eigen::MatrixXd gv = -(gxi1.array() * c.exp_u.array()).matrix();
  Eigen::MatrixXd gx1 = (gxi1.array() * c.exp_u.array()).matrix();
  Eigen::MatrixXd gin2 = net_backward(b.s2, c.s2c, gu, pg, ofs_s2);
  gin2 += net_backward(b.t2, c.t2c, gv, pg, ofs_t2);
  gxi2 += gin2.topRows(b.d2);

  // xi2 = (x2 - r) .* exp(-w), logdet_inv -= sum(w)
  Eigen::MatrixXd gw = -(gxi2.array() * c.xi2.array()).matrix();
  gw.array().rowwise() -= gldinv.array();
  gw.array() *= clamp_deriv(c.w, b.s_clamp);
  Eigen::MatrixXd gr = -(gxi2.array() * c.exp_w.array()).matrix();
  Eigen::MatrixXd gin1 = net_backward(b.s1, c.s1c, gw, pg, ofs_s1);
  gin1 += net_backward(b.t1, c.t1c, gr, pg, ofs_t1);
  gx1 += gin1.topRows(b.d1);

  Eigen::MatrixXd gx(b.dim(), gxi.cols());
  gx.topRows(b.d1) = gx1;
  gx.bottomRows(b.d2) = (gxi2.array() * c.exp_w.array()).matrix();
  return gx;
}

Eigen::MatrixXd permute_rows(const Eigen::MatrixXd& m, const std::vector<int>& perm) {
  Eigen::MatrixXd out(m.rows(), m.cols());
  for (std::size_t i = 0; i < perm.size(); ++i) out.row(i) = m.row(perm[i]);
  return out;
}

Eigen::MatrixXd unpermute_rows(const Eigen::MatrixXd& m, const std::vector<int>& perm) {
  Eigen::MatrixXd out(m.rows(), m.cols());
  for (std::size_t i = 0; i < perm.size(); ++i) out.row(perm[i]) = m.row(i);
  return out;
}

}  // namespace

int CouplingBlock::param_count() const {
  return s2.param_count() + t2.param_count() + s1.param_count() + t1.param_count();
}

void CouplingBlock::validate() const {
  if (d1 <= 0 || d2 <= 0)
    throw std::invalid_argument("CouplingBlock: both split sizes must be positive");
  if (cond_dim < 0) throw std::invalid_argument("CouplingBlock: negative cond_dim");
  if (s_clamp <= 0.0) throw std::invalid_argument("CouplingBlock: s_clamp must be positive");
  s2.validate();
  t2.validate();
  s1.validate();
  t1.validate();
  if (s2.input_dim() != d2 + cond_dim || s2.output_dim() != d1 ||
      t2.input_dim() != d2 + cond_dim || t2.output_dim() != d1 ||
      s1.input_dim() != d1 + cond_dim || s1.output_dim() != d2 ||
      t1.input_dim() != d1 + cond_dim || t1.output_dim() != d2)
    throw std::invalid_argument("CouplingBlock: subnetwork shape mismatch");
}

int CouplingFlow::param_count() const {
  int n = 0;
  for (const auto& b : blocks) n += b.param_count();
  return n;
}

void CouplingFlow::validate() const {
  if (dim < 2) throw std::invalid_argument("CouplingFlow: dim must be >= 2");
  if (perms.size() != blocks.size())
    throw std::invalid_argument("CouplingFlow: permutation/block count mismatch");
  for (const auto& p : perms) {
    if (static_cast<int>(p.size()) != dim)
      throw std::invalid_argument("CouplingFlow: permutation size mismatch");
    std::vector<bool> seen(p.size(), false);
    for (int i : p) {
      if (i < 0 || i >= dim || seen[i])
        throw std::invalid_argument("CouplingFlow: not a permutation");
      seen[i] = true;
    }
  }
  for (const auto& b : blocks) {
    b.validate();
    if (b.dim() != dim || b.cond_dim != cond_dim)
      throw std::invalid_argument("CouplingFlow: block shape mismatch");
  }
}

Eigen::VectorXd CouplingFlow::params() const {
  Eigen::VectorXd p(param_count());
  int ofs = 0;
  for (const auto& b : blocks)
    for (const DenseNet* net : {&b.s2, &b.t2, &b.s1, &b.t1}) {
      net_get_params(*net, p, ofs);
      ofs += net->param_count();
    }
  return p;
}

void CouplingFlow::set_params(const Eigen::VectorXd& p) {
  if (p.size() != param_count())
    throw std::invalid_argument("CouplingFlow::set_params: size mismatch");
  int ofs = 0;
  for (auto& b : blocks)
    for (DenseNet* net : {&b.s2, &b.t2, &b.s1, &b.t1}) {
      net_set_params(*net, p, ofs);
      ofs += net->param_count();
    }
}

CouplingFlow make_flow(int dim, int cond_dim, int num_blocks,
                       const std::vector<int>& hidden, double s_clamp,
                       RngStream& rng) {
  if (dim < 2) throw std::invalid_argument("make_flow: dim must be >= 2");
  if (num_blocks < 1) throw std::invalid_argument("make_flow: need >= 1 block");
  CouplingFlow flow;
  flow.dim = dim;
  flow.cond_dim = cond_dim;
  const int d1 = (dim + 1) / 2;
  const int d2 = dim - d1;
  auto sizes = [&](int in, int out) {
    std::vector<int> s;
    s.push_back(in + cond_dim);
    for (int h : hidden) s.push_back(h);
    s.push_back(out);
    return s;
  };
  for (int l = 0; l < num_blocks; ++l) {
    std::vector<int> perm(dim);
    for (int i = 0; i < dim; ++i) perm[i] = i;
    for (int i = dim - 1; i > 0; --i) {
      const int j = static_cast<int>(rng.next_raw() % static_cast<std::uint64_t>(i + 1));
      std::swap(perm[i], perm[j]);
    }
    flow.perms.push_back(std::move(perm));

    CouplingBlock b;
    b.d1 = d1;
    b.d2 = d2;
    b.cond_dim = cond_dim;
    b.s_clamp = s_clamp;
    b.s2 = net_init(sizes(d2, d1), rng, Activation::kTanh, /*zero_last=*/true);
    b.t2 = net_init(sizes(d2, d1), rng, Activation::kTanh, true);
    b.s1 = net_init(sizes(d1, d2), rng, Activation::kTanh, true);
    b.t1 = net_init(sizes(d1, d2), rng, Activation::kTanh, true);
    flow.blocks.push_back(std::move(b));
  }
  flow.validate();
  return flow;
}

Eigen::MatrixXd flow_forward(const CouplingFlow& flow, const Eigen::MatrixXd& z,
                             const Eigen::MatrixXd& y, Eigen::RowVectorXd* logdet,
                             FlowCache* cache) {
  if (z.rows() != flow.dim)
    throw std::invalid_argument("flow_forward: dimension mismatch");
  if (logdet) logdet->setZero(z.cols());
  if (cache) {
    cache->inverse = false;
    cache->n = z.cols();
    cache->blocks.resize(flow.blocks.size());
  }
  Eigen::MatrixXd cur = z;
  for (int l = 0; l < flow.num_blocks(); ++l) {
    Eigen::MatrixXd perm = permute_rows(cur, flow.perms[l]);
    block_forward_batch(flow.blocks[l], perm, y, cur, logdet,
                        cache ? &cache->blocks[l] : nullptr);
  }
  if (!cur.allFinite() || (logdet && !logdet->allFinite()))
    throw std::runtime_error("flow_forward: non-finite output");
  return cur;
}

Eigen::MatrixXd flow_inverse(const CouplingFlow& flow, const Eigen::MatrixXd& x,
                             const Eigen::MatrixXd& y,
                             Eigen::RowVectorXd* logdet_inv, FlowCache* cache) {
  if (x.rows() != flow.dim)
    throw std::invalid_argument("flow_inverse: dimension mismatch");
  if (logdet_inv) logdet_inv->setZero(x.cols());
  if (cache) {
    cache->inverse = true;
    cache->n = x.cols();
    cache->blocks.resize(flow.blocks.size());
  }
  Eigen::MatrixXd cur = x;
  for (int l = flow.num_blocks() - 1; l >= 0; --l) {
    Eigen::MatrixXd xi;
    block_inverse_batch(flow.blocks[l], cur, y, xi, logdet_inv,
                        cache ? &cache->blocks[l] : nullptr);
    cur = unpermute_rows(xi, flow.perms[l]);
  }
  if (!cur.allFinite() || (logdet_inv && !logdet_inv->allFinite()))
    throw std::runtime_error("flow_inverse: non-finite output");
  return cur;
}

Eigen::MatrixXd flow_backward(const CouplingFlow& flow, const FlowCache& cache,
                              const Eigen::MatrixXd& grad_out,
                              const Eigen::RowVectorXd& grad_logdet,
                              Eigen::VectorXd* param_grad, int offset) {
  if (cache.inverse || static_cast<int>(cache.blocks.size()) != flow.num_blocks())
    throw std::invalid_argument("flow_backward: cache does not match a forward pass");
  std::vector<int> block_ofs(flow.blocks.size());
  int ofs = offset;
  for (int l = 0; l < flow.num_blocks(); ++l) {
    block_ofs[l] = ofs;
    ofs += flow.blocks[l].param_count();
  }
  Eigen::MatrixXd g = grad_out;
  for (int l = flow.num_blocks() - 1; l >= 0; --l) {
    g = block_backward(flow.blocks[l], cache.blocks[l], g, grad_logdet,
                       param_grad, block_ofs[l]);
    g = unpermute_rows(g, flow.perms[l]);
  }
  return g;
}

Eigen::MatrixXd flow_inverse_backward(const CouplingFlow& flow,
                                      const FlowCache& cache,
                                      const Eigen::MatrixXd& grad_out,
                                      const Eigen::RowVectorXd& grad_logdet_inv,
                                      Eigen::VectorXd* param_grad, int offset) {
  if (!cache.inverse || static_cast<int>(cache.blocks.size()) != flow.num_blocks())
    throw std::invalid_argument(
        "flow_inverse_backward: cache does not match an inverse pass");
  std::vector<int> block_ofs(flow.blocks.size());
  int ofs = offset;
  for (int l = 0; l < flow.num_blocks(); ++l) {
    block_ofs[l] = ofs;
    ofs += flow.blocks[l].param_count();
  }
  Eigen::MatrixXd g = grad_out;
  for (int l = 0; l < flow.num_blocks(); ++l) {
    g = permute_rows(g, flow.perms[l]);
    g = block_inverse_backward(flow.blocks[l], cache.blocks[l], g,
                               grad_logdet_inv, param_grad, block_ofs[l]);
  }
  return g;
}

std::pair<Eigen::VectorXd, double> block_forward(const CouplingBlock& block,
                                                 const Eigen::VectorXd& xi,
                                                 const Eigen::VectorXd& y) {
  if (xi.size() != block.dim())
    throw std::invalid_argument("block_forward: dimension mismatch");
  if ((block.cond_dim > 0) != (y.size() > 0) ||
      (block.cond_dim > 0 && y.size() != block.cond_dim))
    throw std::invalid_argument("block_forward: condition mismatch");
  Eigen::MatrixXd x;
  Eigen::RowVectorXd logdet = Eigen::RowVectorXd::Zero(1);
  block_forward_batch(block, xi, y, x, &logdet, nullptr);
  if (!x.allFinite()) throw std::runtime_error("block_forward: non-finite output");
  return {x.col(0), logdet[0]};
}

std::pair<Eigen::VectorXd, double> block_inverse(const CouplingBlock& block,
                                                 const Eigen::VectorXd& x,
                                                 const Eigen::VectorXd& y) {
  if (x.size() != block.dim())
    throw std::invalid_argument("block_inverse: dimension mismatch");
  if ((block.cond_dim > 0) != (y.size() > 0) ||
      (block.cond_dim > 0 && y.size() != block.cond_dim))
    throw std::invalid_argument("block_inverse: condition mismatch");
  Eigen::MatrixXd xi;
  Eigen::RowVectorXd logdet_inv = Eigen::RowVectorXd::Zero(1);
  block_inverse_batch(block, x, y, xi, &logdet_inv, nullptr);
  if (!xi.allFinite()) throw std::runtime_error("block_inverse: non-finite output");
  return {xi.col(0), logdet_inv[0]};
}

}  // namespace snf
