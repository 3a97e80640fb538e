#include "snf/chain.hpp"

#include <cmath>
#include <map>
#include <string>

namespace snf {

namespace {

KernelConfig to_kernel_config(const LayerSpec& spec) {
  KernelConfig cfg;
  if (const auto* lang = std::get_if<LangevinLayer>(&spec.layer)) {
    cfg.kind = KernelConfig::Kind::kLangevin;
    cfg.langevin = lang->cfg;
  } else if (const auto* mh = std::get_if<McmcLayer>(&spec.layer)) {
    cfg.kind = KernelConfig::Kind::kMetropolis;
    cfg.mh = mh->cfg;
  } else {
    throw std::logic_error("to_kernel_config: deterministic layer");
  }
  return cfg;
}

int layer_interp_t(const LayerSpec& spec) {
  if (const auto* lang = std::get_if<LangevinLayer>(&spec.layer)) return lang->interp_t;
  return std::get<McmcLayer>(spec.layer).interp_t;
}

/// Per-batch target assembly: the conditional posterior bases are built once
/// and the interpolated views are cached per schedule index.
class TargetContext {
 public:
  TargetContext(const Chain& chain, const Eigen::MatrixXd& cond, int n)
      : chain_(&chain), n_(n) {
    if (chain.conditional()) {
      if (cond.rows() != chain.cond_dim ||
          (cond.cols() != 1 && cond.cols() != n))
        throw std::invalid_argument("chain: condition shape mismatch");
      if (cond.cols() == 1) {
        shared_base_ = chain.target_family->at(cond.col(0));
      } else {
        col_base_.resize(n);
        for (int j = 0; j < n; ++j)
          col_base_[j] = chain.target_family->at(cond.col(j));
      }
    } else {
      if (cond.size() != 0)
        throw std::invalid_argument("chain: condition given to unconditional chain");
      shared_base_ = chain.target;
    }
  }

  const TargetView& view(int interp_t) {
    auto it = views_.find(interp_t);
    if (it != views_.end()) return it->second;
    TargetView v = make_view(interp_t);
    return views_.emplace(interp_t, std::move(v)).first->second;
  }

 private:
  TargetView make_view(int interp_t) {
    const int total = chain_->interp_total;
    if (interp_t == 0) return TargetView(chain_->latent, n_);
    if (!shared_base_ && col_base_.empty())
      throw std::invalid_argument("chain: stochastic layer needs a target");
    if (shared_base_) {
      if (interp_t == total) return TargetView(shared_base_, n_);
      return TargetView(
          interpolated_density(chain_->latent, shared_base_, interp_t, total), n_);
    }
    std::vector<std::shared_ptr<const Density>> cols(n_);
    for (int j = 0; j < n_; ++j)
      cols[j] = interp_t == total
                    ? col_base_[j]
                    : interpolated_density(chain_->latent, col_base_[j],
                                           interp_t, total);
    return TargetView(std::move(cols));
  }

  const Chain* chain_;
  int n_;
  std::shared_ptr<const Density> shared_base_;
  std::vector<std::shared_ptr<const Density>> col_base_;
  std::map<int, TargetView> views_;
};

/// Quotient term of one Langevin micro-step in chain-time orientation:
/// 0.5 (|eta|^2 - |eta~|^2) with eta built at the chain-earlier point. pre/post
/// are the micro-step input/output; on reverse paths the output is the
/// chain-earlier point.
Eigen::RowVectorXd langevin_term(const Eigen::MatrixXd& pre,
                                 const Eigen::MatrixXd& post,
                                 const Eigen::MatrixXd& grad_pre,
                                 const Eigen::MatrixXd& grad_post, double a1,
                                 double a2, bool reverse_time) {
  const Eigen::MatrixXd& e = reverse_time ? post : pre;
  const Eigen::MatrixXd& l = reverse_time ? pre : post;
  const Eigen::MatrixXd& grad_e = reverse_time ? grad_post : grad_pre;
  const Eigen::MatrixXd& grad_l = reverse_time ? grad_pre : grad_post;
  const Eigen::MatrixXd eta = (e - l + a1 * grad_e) / a2;
  const Eigen::MatrixXd eta_t = (e - l - a1 * grad_l) / a2;
  return 0.5 * (eta.colwise().squaredNorm() - eta_t.colwise().squaredNorm());
}

void apply_stochastic_layer(const KernelConfig& cfg, const TargetView& view,
                            Eigen::MatrixXd& x, std::span<RngStream> rngs,
                            bool reverse_time, LayerPathData& data,
                            Eigen::RowVectorXd& term) {
  const int m = cfg.n_steps();
  data.records.resize(m);
  data.substates.resize(m);
  term.setZero(x.cols());
  if (cfg.kind == KernelConfig::Kind::kLangevin) {
    Eigen::MatrixXd grad_cur = view.grad_log_density(x);
    Eigen::MatrixXd grad_new;
    for (int j = 0; j < m; ++j) {
      const Eigen::MatrixXd pre = x;
      langevin_step(x, view, cfg.langevin, rngs, data.records[j], &grad_cur,
                    &grad_new);
      term += langevin_term(pre, x, grad_cur, grad_new, cfg.langevin.a1,
                            cfg.langevin.a2, reverse_time);
      grad_cur = grad_new;
      data.substates[j] = x;
    }
  } else {
    Eigen::RowVectorXd lp = view.log_density(x);
    const Eigen::RowVectorXd lp_start = lp;
    for (int j = 0; j < m; ++j) {
      mh_step(x, view, cfg.mh, rngs, data.records[j], &lp);
      data.substates[j] = x;
    }
    term = reverse_time ? (lp - lp_start).eval() : (lp_start - lp).eval();
  }
}

void replay_stochastic_layer(const KernelConfig& cfg, const TargetView& view,
                             Eigen::MatrixXd& x, bool reverse_time,
                             LayerPathData& data, Eigen::RowVectorXd& term) {
  const int m = static_cast<int>(data.records.size());
  data.substates.resize(m);
  term.setZero(x.cols());
  if (cfg.kind == KernelConfig::Kind::kLangevin) {
    Eigen::MatrixXd grad_cur = view.grad_log_density(x);
    for (int j = 0; j < m; ++j) {
      const Eigen::MatrixXd pre = x;
      x += cfg.langevin.a1 * grad_cur + cfg.langevin.a2 * data.records[j].xi;
      const Eigen::MatrixXd grad_new = view.grad_log_density(x);
      term += langevin_term(pre, x, grad_cur, grad_new, cfg.langevin.a1,
                            cfg.langevin.a2, reverse_time);
      grad_cur = grad_new;
      data.substates[j] = x;
    }
  } else {
    const Eigen::RowVectorXd lp_start = view.log_density(x);
    for (int j = 0; j < m; ++j) {
      const StepRecordBatch& rec = data.records[j];
      if (cfg.mh.proposal == MhConfig::Proposal::kRandomWalk) {
        for (Eigen::Index c = 0; c < x.cols(); ++c)
          if (rec.accepted[c]) x.col(c) += cfg.mh.sigma * rec.xi.col(c);
      } else {
        const Eigen::MatrixXd prop =
            x + cfg.mh.a1 * view.grad_log_density(x) + cfg.mh.a2 * rec.xi;
        for (Eigen::Index c = 0; c < x.cols(); ++c)
          if (rec.accepted[c]) x.col(c) = prop.col(c);
      }
      data.substates[j] = x;
    }
    const Eigen::RowVectorXd lp_end = view.log_density(x);
    term = reverse_time ? (lp_end - lp_start).eval() : (lp_start - lp_end).eval();
  }
}

/// Gradient through a stochastic layer under frozen records. states holds
/// z_0..z_m in micro-step order (z_0 the layer input); grad_in is the loss
/// gradient with respect to z_m. term_coef is dL/d(term_t). Returns the
/// gradient with respect to z_0.
Eigen::MatrixXd ladder_backward(const KernelConfig& cfg, const TargetView& view,
                                const std::vector<const Eigen::MatrixXd*>& states,
                                const std::vector<StepRecordBatch>& records,
                                const Eigen::MatrixXd& grad_in, double term_coef,
                                bool reverse_time, bool detach) {
  const int m = static_cast<int>(records.size());
  Eigen::MatrixXd g = grad_in;
  if (cfg.kind == KernelConfig::Kind::kLangevin) {
    const double a1 = cfg.langevin.a1;
    const double a2 = cfg.langevin.a2;
    std::vector<Eigen::MatrixXd> grads(m + 1);
    for (int j = 0; j <= m; ++j) grads[j] = view.grad_log_density(*states[j]);
    for (int j = m; j >= 1; --j) {
      const Eigen::MatrixXd& pre = *states[j - 1];
      const Eigen::MatrixXd& post = *states[j];
      const Eigen::MatrixXd& e = reverse_time ? post : pre;
      const Eigen::MatrixXd& l = reverse_time ? pre : post;
      const Eigen::MatrixXd& grad_e = reverse_time ? grads[j] : grads[j - 1];
      const Eigen::MatrixXd& grad_l = reverse_time ? grads[j - 1] : grads[j];
      const Eigen::MatrixXd eta = (e - l + a1 * grad_e) / a2;
      const Eigen::MatrixXd eta_t = (e - l - a1 * grad_l) / a2;
      Eigen::MatrixXd dt_de = (eta - eta_t) / a2;
      Eigen::MatrixXd dt_dl = (eta_t - eta) / a2;
      if (!detach) {
        dt_de += a1 / a2 * view.hvp_log_density(e, eta);
        dt_dl += a1 / a2 * view.hvp_log_density(l, eta_t);
      }
      const Eigen::MatrixXd& dt_dpost = reverse_time ? dt_de : dt_dl;
      const Eigen::MatrixXd& dt_dpre = reverse_time ? dt_dl : dt_de;
      g += term_coef * dt_dpost;
      Eigen::MatrixXd g_pre = g;
      if (!detach) g_pre += a1 * view.hvp_log_density(pre, g);
      g_pre += term_coef * dt_dpre;
      g = std::move(g_pre);
    }
  } else {
    // Acceptance indicators and draws are constants; the realized map is
    // identity on rejected/random-walk steps and the MALA drift otherwise.
    // The telescoped term is log p(earlier) - log p(later), earlier being the
    // layer output on reverse paths.
    const double sign_m = reverse_time ? 1.0 : -1.0;
    g += sign_m * term_coef * view.grad_log_density(*states[m]);
    for (int j = m; j >= 1; --j) {
      const bool mala = cfg.mh.proposal == MhConfig::Proposal::kMala;
      if (mala && !detach) {
        Eigen::MatrixXd corr = cfg.mh.a1 * view.hvp_log_density(*states[j - 1], g);
        for (Eigen::Index c = 0; c < g.cols(); ++c)
          if (!records[j - 1].accepted[c]) corr.col(c).setZero();
        g += corr;
      }
    }
    g -= sign_m * term_coef * view.grad_log_density(*states[0]);
  }
  return g;
}

std::vector<int> flow_param_offsets(const Chain& chain) {
  std::vector<int> ofs(chain.flows.size(), 0);
  int acc = 0;
  for (std::size_t f = 0; f < chain.flows.size(); ++f) {
    ofs[f] = acc;
    acc += chain.flows[f].param_count();
  }
  return ofs;
}

std::vector<RngStream> make_streams(RngStream& rng, int n) {
  const std::uint64_t batch_seed = rng.next_raw();
  std::vector<RngStream> streams;
  streams.reserve(n);
  for (int j = 0; j < n; ++j) streams.emplace_back(batch_seed, j);
  return streams;
}

void check_finite(const Eigen::MatrixXd& x, int t, const char* where) {
  if (!x.allFinite())
    throw std::runtime_error(std::string(where) + ": non-finite state after layer " +
                             std::to_string(t));
}

}  // namespace

int Chain::param_count() const {
  int n = 0;
  for (const auto& f : flows) n += f.param_count();
  return n;
}

Eigen::VectorXd Chain::params() const {
  Eigen::VectorXd p(param_count());
  int ofs = 0;
  for (const auto& f : flows) {
    p.segment(ofs, f.param_count()) = f.params();
    ofs += f.param_count();
  }
  return p;
}

void Chain::set_params(const Eigen::VectorXd& p) {
  if (p.size() != param_count())
    throw std::invalid_argument("Chain::set_params: size mismatch");
  int ofs = 0;
  for (auto& f : flows) {
    f.set_params(p.segment(ofs, f.param_count()));
    ofs += f.param_count();
  }
}

void Chain::validate() const {
  if (dim < 1) throw std::invalid_argument("Chain: dim must be positive");
  if (!latent || latent->dim() != dim)
    throw std::invalid_argument("Chain: latent dimension mismatch");
  if (interp_total <= 0) throw std::invalid_argument("Chain: interp_total must be positive");
  if (conditional()) {
    if (!target_family || target_family->dim() != dim ||
        target_family->cond_dim() != cond_dim)
      throw std::invalid_argument("Chain: conditional target mismatch");
  } else if (target && target->dim() != dim) {
    throw std::invalid_argument("Chain: target dimension mismatch");
  }
  for (const auto& f : flows) {
    f.validate();
    if (f.dim != dim || f.cond_dim != cond_dim)
      throw std::invalid_argument("Chain: flow shape mismatch");
  }
  bool has_stochastic = false;
  for (const auto& spec : layers) {
    if (spec.is_deterministic()) {
      const int idx = std::get<DeterministicLayer>(spec.layer).flow_index;
      if (idx < 0 || idx >= static_cast<int>(flows.size()))
        throw std::invalid_argument("Chain: invalid flow index");
    } else {
      has_stochastic = true;
      const int t = layer_interp_t(spec);
      if (t < 0 || t > interp_total)
        throw std::invalid_argument("Chain: interpolation index out of range");
      if (const auto* lang = std::get_if<LangevinLayer>(&spec.layer))
        lang->cfg.validate();
      else
        std::get<McmcLayer>(spec.layer).cfg.validate();
    }
  }
  if (has_stochastic && !conditional() && !target)
    throw std::invalid_argument("Chain: stochastic layers need a target density");
}

PathBatch sample_forward_path(const Chain& chain, int n, RngStream& rng,
                              const Eigen::MatrixXd& y) {
  if (n < 1) throw std::invalid_argument("sample_forward_path: empty batch");
  const int t_total = chain.num_layers();
  TargetContext ctx(chain, y, n);
  std::vector<RngStream> streams = make_streams(rng, n);

  PathBatch batch;
  batch.direction = PathDirection::kForward;
  batch.cond = y;
  batch.points.resize(t_total + 1);
  batch.terms.resize(t_total, n);
  batch.layers.resize(t_total);

  Eigen::MatrixXd x(chain.dim, n);
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < chain.dim; ++i) x(i, j) = streams[j].normal();
  batch.points[0] = x;

  for (int t = 1; t <= t_total; ++t) {
    const LayerSpec& spec = chain.layers[t - 1];
    if (spec.is_deterministic()) {
      const auto& det = std::get<DeterministicLayer>(spec.layer);
      Eigen::RowVectorXd logdet;
      x = flow_forward(chain.flows[det.flow_index], x, y, &logdet);
      batch.terms.row(t - 1) = logdet;
    } else {
      Eigen::RowVectorXd term;
      apply_stochastic_layer(to_kernel_config(spec), ctx.view(layer_interp_t(spec)),
                             x, streams, /*reverse_time=*/false,
                             batch.layers[t - 1], term);
      batch.terms.row(t - 1) = term;
      check_finite(x, t, "sample_forward_path");
    }
    batch.points[t] = x;
  }
  return batch;
}

PathBatch sample_reverse_path(const Chain& chain, const Eigen::MatrixXd& x_data,
                              RngStream& rng, const Eigen::MatrixXd& y) {
  if (x_data.rows() != chain.dim)
    throw std::invalid_argument("sample_reverse_path: data dimension mismatch");
  const int n = static_cast<int>(x_data.cols());
  if (n < 1) throw std::invalid_argument("sample_reverse_path: empty batch");
  const int t_total = chain.num_layers();
  TargetContext ctx(chain, y, n);
  std::vector<RngStream> streams = make_streams(rng, n);

  PathBatch batch;
  batch.direction = PathDirection::kReverse;
  batch.cond = y;
  batch.points.resize(t_total + 1);
  batch.terms.resize(t_total, n);
  batch.layers.resize(t_total);

  Eigen::MatrixXd x = x_data;
  batch.points[t_total] = x;
  for (int t = t_total; t >= 1; --t) {
    const LayerSpec& spec = chain.layers[t - 1];
    if (spec.is_deterministic()) {
      const auto& det = std::get<DeterministicLayer>(spec.layer);
      Eigen::RowVectorXd logdet_inv;
      x = flow_inverse(chain.flows[det.flow_index], x, y, &logdet_inv);
      batch.terms.row(t - 1) = -logdet_inv;
    } else {
      Eigen::RowVectorXd term;
      apply_stochastic_layer(to_kernel_config(spec), ctx.view(layer_interp_t(spec)),
                             x, streams, /*reverse_time=*/true,
                             batch.layers[t - 1], term);
      batch.terms.row(t - 1) = term;
      check_finite(x, t, "sample_reverse_path");
    }
    batch.points[t - 1] = x;
  }
  return batch;
}

PathBatch replay_path(const Chain& chain, const PathBatch& recorded) {
  const int t_total = chain.num_layers();
  if (static_cast<int>(recorded.points.size()) != t_total + 1)
    throw std::invalid_argument("replay_path: layer count mismatch");
  const int n = recorded.n();
  TargetContext ctx(chain, recorded.cond, n);

  PathBatch batch;
  batch.direction = recorded.direction;
  batch.cond = recorded.cond;
  batch.points.resize(t_total + 1);
  batch.terms.resize(t_total, n);
  batch.layers = recorded.layers;  // records reused, substates recomputed

  const bool reverse = recorded.direction == PathDirection::kReverse;
  Eigen::MatrixXd x = reverse ? recorded.points[t_total] : recorded.points[0];
  if (reverse)
    batch.points[t_total] = x;
  else
    batch.points[0] = x;

  for (int s = 0; s < t_total; ++s) {
    const int t = reverse ? t_total - s : s + 1;
    const LayerSpec& spec = chain.layers[t - 1];
    if (spec.is_deterministic()) {
      const auto& det = std::get<DeterministicLayer>(spec.layer);
      Eigen::RowVectorXd logdet;
      if (reverse) {
        x = flow_inverse(chain.flows[det.flow_index], x, recorded.cond, &logdet);
        batch.terms.row(t - 1) = -logdet;
      } else {
        x = flow_forward(chain.flows[det.flow_index], x, recorded.cond, &logdet);
        batch.terms.row(t - 1) = logdet;
      }
    } else {
      Eigen::RowVectorXd term;
      replay_stochastic_layer(to_kernel_config(spec), ctx.view(layer_interp_t(spec)),
                              x, reverse, batch.layers[t - 1], term);
      batch.terms.row(t - 1) = term;
    }
    batch.points[reverse ? t - 1 : t] = x;
  }
  return batch;
}

LossResult kl_loss(const Chain& chain, const PathBatch& batch,
                   const LossOptions& options) {
  const int t_total = chain.num_layers();
  const int n = batch.n();
  if (n == 0 || static_cast<int>(batch.points.size()) != t_total + 1)
    throw std::invalid_argument("kl_loss: malformed path batch");
  const bool reverse = batch.direction == PathDirection::kReverse;
  const double w = 1.0 / n;

  // Loss value from the stored points and terms.
  Eigen::RowVectorXd per_path = batch.terms.colwise().sum();
  if (reverse) {
    per_path -= chain.latent->log_density_batch(batch.points[0]);
  } else {
    per_path = -per_path + chain.latent->log_density_batch(batch.points[0]);
    const Eigen::MatrixXd& x_t = batch.points[t_total];
    if (chain.conditional()) {
      if (!options.problem)
        throw std::invalid_argument(
            "kl_loss: forward direction on a conditional chain needs the "
            "problem's noise model");
      if (batch.cond.cols() != n && batch.cond.cols() != 1)
        throw std::invalid_argument("kl_loss: condition shape mismatch");
      per_path -= options.problem->prior().log_density_batch(x_t);
      for (int j = 0; j < n; ++j) {
        const Eigen::VectorXd yj =
            batch.cond.cols() == 1 ? batch.cond.col(0) : batch.cond.col(j);
        per_path[j] -= options.problem->log_likelihood(yj, x_t.col(j));
      }
    } else {
      if (!chain.target)
        throw std::invalid_argument("kl_loss: forward direction needs a target");
      per_path -= chain.target->log_density_batch(x_t);
    }
  }
  LossResult out;
  out.value = per_path.mean();
  if (!options.with_grad) return out;

  // Gradient by walking the path in reverse of its computation order.
  out.grad = Eigen::VectorXd::Zero(chain.param_count());
  TargetContext ctx(chain, batch.cond, n);
  const std::vector<int> flow_ofs = flow_param_offsets(chain);

  Eigen::MatrixXd gcur;
  if (reverse) {
    gcur = -w * chain.latent->grad_log_density_batch(batch.points[0]);
  } else {
    const Eigen::MatrixXd& x_t = batch.points[t_total];
    if (chain.conditional()) {
      gcur.resize(chain.dim, n);
      for (int j = 0; j < n; ++j) {
        const Eigen::VectorXd yj =
            batch.cond.cols() == 1 ? batch.cond.col(0) : batch.cond.col(j);
        gcur.col(j) = options.problem->grad_log_likelihood_x(yj, x_t.col(j));
      }
      gcur += options.problem->prior().grad_log_density_batch(x_t);
      gcur *= -w;
    } else {
      gcur = -w * chain.target->grad_log_density_batch(x_t);
    }
  }

  // dL/d(term_t): +w on reverse paths, -w on forward paths.
  const double term_coef = reverse ? w : -w;
  for (int s = 0; s < t_total; ++s) {
    const int t = reverse ? s + 1 : t_total - s;
    const LayerSpec& spec = chain.layers[t - 1];
    if (spec.is_deterministic()) {
      const auto& det = std::get<DeterministicLayer>(spec.layer);
      const CouplingFlow& flow = chain.flows[det.flow_index];
      FlowCache cache;
      if (reverse) {
        // term_t = -logdet_inv, so dL/d(logdet_inv) = -term_coef.
        flow_inverse(flow, batch.points[t], batch.cond, nullptr, &cache);
        gcur = flow_inverse_backward(flow, cache, gcur,
                                     Eigen::RowVectorXd::Constant(n, -term_coef),
                                     &out.grad, flow_ofs[det.flow_index]);
      } else {
        flow_forward(flow, batch.points[t - 1], batch.cond, nullptr, &cache);
        gcur = flow_backward(flow, cache, gcur,
                             Eigen::RowVectorXd::Constant(n, term_coef),
                             &out.grad, flow_ofs[det.flow_index]);
      }
    } else {
      const LayerPathData& data = batch.layers[t - 1];
      const int m = static_cast<int>(data.records.size());
      std::vector<const Eigen::MatrixXd*> states(m + 1);
      states[0] = reverse ? &batch.points[t] : &batch.points[t - 1];
      for (int j = 0; j < m; ++j) states[j + 1] = &data.substates[j];
      gcur = ladder_backward(to_kernel_config(spec),
                             ctx.view(layer_interp_t(spec)), states,
                             data.records, gcur, term_coef, reverse,
                             options.detach_stochastic);
    }
  }
  return out;
}

TrainResult train(Chain& chain, const JointSampler& data, const TrainConfig& cfg,
                  RngStream& rng, const InverseProblem* problem) {
  chain.validate();
  if (cfg.lambda < 0.0 || cfg.lambda > 1.0)
    throw std::invalid_argument("train: lambda must be in [0, 1]");
  if (cfg.batch < 1 || cfg.steps < 0 || cfg.lr <= 0.0)
    throw std::invalid_argument("train: bad training configuration");
  if (cfg.steps > 0 && chain.param_count() == 0)
    throw std::invalid_argument("train: chain has no trainable parameters");

  TrainResult result;
  if (cfg.steps == 0) return result;

  Eigen::VectorXd params = chain.params();
  AdamState adam = adam_init(chain.param_count(), cfg.lr);
  LossOptions options;
  options.detach_stochastic = cfg.detach_stochastic;
  options.problem = problem;

  for (int step = 0; step < cfg.steps; ++step) {
    Eigen::MatrixXd x, y;
    data.sample(cfg.batch, rng, x, y);

    double loss = 0.0;
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(chain.param_count());
    if (cfg.lambda < 1.0) {
      const PathBatch rev = sample_reverse_path(chain, x, rng, y);
      const LossResult r = kl_loss(chain, rev, options);
      loss += (1.0 - cfg.lambda) * r.value;
      grad += (1.0 - cfg.lambda) * r.grad;
    }
    if (cfg.lambda > 0.0) {
      const PathBatch fwd = sample_forward_path(chain, cfg.batch, rng, y);
      const LossResult f = kl_loss(chain, fwd, options);
      loss += cfg.lambda * f.value;
      grad += cfg.lambda * f.grad;
    }
    result.loss_trace.push_back(loss);
    if (!std::isfinite(loss))
      throw TrainingDiverged("train: non-finite loss at step " + std::to_string(step),
                             result.loss_trace);
    try {
      adam_step(adam, params, grad);
    } catch (const std::runtime_error& e) {
      throw TrainingDiverged(e.what(), result.loss_trace);
    }
    chain.set_params(params);
  }
  return result;
}

Eigen::MatrixXd chain_sample(const Chain& chain, int n, RngStream& rng,
                             const Eigen::MatrixXd& y) {
  return sample_forward_path(chain, n, rng, y).points.back();
}

}  // namespace snf
