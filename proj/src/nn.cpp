#include "snf/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace snf {

int DenseNet::param_count() const {
  int n = 0;
  for (std::size_t l = 0; l < weights.size(); ++l)
    n += static_cast<int>(weights[l].size() + biases[l].size());
  return n;
}

void DenseNet::validate() const {
  if (layer_sizes.size() < 2)
    throw std::invalid_argument("DenseNet: need at least input and output size");
  for (int s : layer_sizes)
    if (s <= 0) throw std::invalid_argument("DenseNet: layer sizes must be positive");
  if (weights.size() + 1 != layer_sizes.size() || biases.size() != weights.size())
    throw std::invalid_argument("DenseNet: layer count mismatch");
  for (std::size_t l = 0; l < weights.size(); ++l) {
    if (weights[l].rows() != layer_sizes[l + 1] || weights[l].cols() != layer_sizes[l])
      throw std::invalid_argument("DenseNet: weight shape mismatch");
    if (biases[l].size() != layer_sizes[l + 1])
      throw std::invalid_argument("DenseNet: bias shape mismatch");
    if (!weights[l].allFinite() || !biases[l].allFinite())
      throw std::invalid_argument("DenseNet: non-finite parameters");
  }
}

DenseNet net_init(const std::vector<int>& layer_sizes, RngStream& rng,
                  Activation activation, bool zero_last) {
  DenseNet net;
  net.layer_sizes = layer_sizes;
  net.activation = activation;
  const int L = static_cast<int>(layer_sizes.size()) - 1;
  if (L < 1) throw std::invalid_argument("net_init: need at least one layer");
  net.weights.resize(L);
  net.biases.resize(L);
  for (int l = 0; l < L; ++l) {
    const int in = layer_sizes[l], out = layer_sizes[l + 1];
    net.weights[l].resize(out, in);
    net.biases[l] = Eigen::VectorXd::Zero(out);
    if (zero_last && l == L - 1) {
      net.weights[l].setZero();
    } else {
      const double scale = 1.0 / std::sqrt(static_cast<double>(in));
      for (int j = 0; j < in; ++j)
        for (int i = 0; i < out; ++i)
          net.weights[l](i, j) = scale * (2.0 * rng.uniform() - 1.0);
    }
  }
  net.validate();
  return net;
}

Eigen::MatrixXd net_forward(const DenseNet& net, const Eigen::MatrixXd& x,
                            NetCache* cache) {
  if (x.rows() != net.input_dim())
    throw std::invalid_argument("net_forward: input dimension mismatch");
  const int L = net.num_layers();
  if (cache) {
    cache->inputs.resize(L);
    cache->inputs[0] = x;
  }
  Eigen::MatrixXd h = x;
  for (int l = 0; l < L; ++l) {
    Eigen::MatrixXd z = (net.weights[l] * h).colwise() + net.biases[l];
    if (l + 1 < L && net.activation == Activation::kTanh) z = z.array().tanh();
    h = std::move(z);
    if (cache && l + 1 < L) cache->inputs[l + 1] = h;
  }
  return h;
}

Eigen::VectorXd net_forward(const DenseNet& net, const Eigen::VectorXd& x) {
  return net_forward(net, Eigen::MatrixXd(x), nullptr).col(0);
}

Eigen::MatrixXd net_backward(const DenseNet& net, const NetCache& cache,
                             const Eigen::MatrixXd& upstream,
                             Eigen::VectorXd* param_grad, int offset) {
  const int L = net.num_layers();
  if (static_cast<int>(cache.inputs.size()) != L)
    throw std::invalid_argument("net_backward: missing forward cache");
  if (upstream.rows() != net.output_dim())
    throw std::invalid_argument("net_backward: upstream dimension mismatch");

  // Parameter offsets in canonical order.
  int pofs = offset;
  std::vector<int> wofs(L), bofs(L);
  for (int l = 0; l < L; ++l) {
    wofs[l] = pofs;
    pofs += static_cast<int>(net.weights[l].size());
    bofs[l] = pofs;
    pofs += static_cast<int>(net.biases[l].size());
  }

  Eigen::MatrixXd delta = upstream;
  for (int l = L - 1; l >= 0; --l) {
    if (param_grad) {
      Eigen::MatrixXd gw = delta * cache.inputs[l].transpose();
      param_grad->segment(wofs[l], gw.size()) +=
          Eigen::Map<const Eigen::VectorXd>(gw.data(), gw.size());
      param_grad->segment(bofs[l], delta.rows()) += delta.rowwise().sum();
    }
    Eigen::MatrixXd prev = net.weights[l].transpose() * delta;
    if (l > 0 && net.activation == Activation::kTanh)
      prev.array() *= 1.0 - cache.inputs[l].array().square();
    delta = std::move(prev);
  }
  return delta;
}

GradBundle net_backward(const DenseNet& net, const Eigen::VectorXd& x,
                        const Eigen::VectorXd& upstream) {
  NetCache cache;
  net_forward(net, Eigen::MatrixXd(x), &cache);
  GradBundle out;
  out.grad_params = Eigen::VectorXd::Zero(net.param_count());
  out.grad_input =
      net_backward(net, cache, Eigen::MatrixXd(upstream), &out.grad_params, 0).col(0);
  return out;
}

void net_get_params(const DenseNet& net, Eigen::VectorXd& out, int offset) {
  int p = offset;
  for (int l = 0; l < net.num_layers(); ++l) {
    out.segment(p, net.weights[l].size()) = Eigen::Map<const Eigen::VectorXd>(
        net.weights[l].data(), net.weights[l].size());
    p += static_cast<int>(net.weights[l].size());
    out.segment(p, net.biases[l].size()) = net.biases[l];
    p += static_cast<int>(net.biases[l].size());
  }
}

void net_set_params(DenseNet& net, const Eigen::VectorXd& params, int offset) {
  int p = offset;
  for (int l = 0; l < net.num_layers(); ++l) {
    Eigen::Map<Eigen::VectorXd>(net.weights[l].data(), net.weights[l].size()) =
        params.segment(p, net.weights[l].size());
    p += static_cast<int>(net.weights[l].size());
    net.biases[l] = params.segment(p, net.biases[l].size());
    p += static_cast<int>(net.biases[l].size());
  }
}

AdamState adam_init(int param_count, double lr) {
  AdamState s;
  s.m = Eigen::VectorXd::Zero(param_count);
  s.v = Eigen::VectorXd::Zero(param_count);
  s.lr = lr;
  return s;
}

void adam_step(AdamState& state, Eigen::VectorXd& params,
               const Eigen::VectorXd& grad) {
  if (params.size() != grad.size() || state.m.size() != params.size())
    throw std::invalid_argument("adam_step: size mismatch");
  if (!grad.allFinite())
    throw std::runtime_error("adam_step: non-finite gradient (diverged)");
  state.step += 1;
  state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad;
  state.v = state.beta2 * state.v.array().matrix() +
            (1.0 - state.beta2) * grad.array().square().matrix();
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  params.array() -= state.lr * (state.m.array() / c1) /
                    ((state.v.array() / c2).sqrt() + state.eps);
}

}  // namespace snf
