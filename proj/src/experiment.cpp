#include "snf/experiment.hpp"

#include <cmath>

namespace snf {

BuiltProblem build_problem(const ExperimentConfig& config) {
  config.validate();
  RngStream rng = RngStream(config.seed).substream(streams::kProblem);
  BuiltProblem out;
  if (config.problem_type == ExperimentConfig::ProblemType::kLinearGaussian) {
    Eigen::MatrixXd means(config.dim_x, config.components);
    for (int k = 0; k < config.components; ++k)
      for (int i = 0; i < config.dim_x; ++i)
        means(i, k) = 2.0 * rng.uniform() - 1.0;
    std::vector<Eigen::MatrixXd> covs(
        config.components,
        config.prior_sigma2 *
            Eigen::MatrixXd::Identity(config.dim_x, config.dim_x));
    auto prior = std::make_shared<const GaussianMixture>(
        Eigen::VectorXd::Constant(config.components, 1.0), means, covs);
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(config.dim_y, config.dim_x);
    for (int i = 0; i < std::min(config.dim_y, config.dim_x); ++i)
      a(i, i) = config.a_scale / (i + 1.0);
    out.problem =
        std::make_shared<LinearGaussianProblem>(std::move(a), config.noise_b2, prior);
    return out;
  }

  RngStream map_rng = rng.substream(0);
  RngStream fit_rng = rng.substream(1);
  RngStream data_rng = rng.substream(2);
  const DenseNet truth = make_synthetic_forward_map(
      config.dim_x, config.dim_y, config.true_map_hidden, map_rng);

  const int n_total = config.surrogate_samples;
  const int n_holdout = std::max(1, n_total / 10);
  Eigen::MatrixXd x(config.dim_x, n_total + n_holdout);
  for (Eigen::Index j = 0; j < x.cols(); ++j)
    for (int i = 0; i < config.dim_x; ++i) x(i, j) = 2.0 * data_rng.uniform() - 1.0;
  const Eigen::MatrixXd f = net_forward(truth, x);

  SurrogateFitResult fit = surrogate_fit(
      x.leftCols(n_total), f.leftCols(n_total), config.surrogate_hidden, fit_rng,
      config.surrogate_steps, config.surrogate_batch, config.surrogate_lr);
  out.surrogate_train_rmse = fit.train_rmse;
  out.surrogate_holdout_rmse = std::sqrt(
      (net_forward(fit.net, Eigen::MatrixXd(x.rightCols(n_holdout))) -
       f.rightCols(n_holdout))
          .squaredNorm() /
      n_holdout);
  out.problem = std::make_shared<MixedNoiseProblem>(
      std::move(fit.net), config.noise_a, config.noise_b, config.prior_alpha);
  return out;
}

Chain build_chain(const ExperimentConfig& config,
                  std::shared_ptr<InverseProblem> problem) {
  config.validate();
  if (!problem) throw std::invalid_argument("build_chain: null problem");
  RngStream rng = RngStream(config.seed).substream(streams::kChainInit);

  Chain chain;
  chain.dim = config.dim_x;
  chain.cond_dim = config.dim_y;
  chain.interp_total = config.resolved_interp_total();
  chain.latent = std::make_shared<StandardNormal>(config.dim_x);
  chain.target_family = std::shared_ptr<const ConditionalDensityFamily>(
      problem, &problem->posterior_family());

  for (const LayerConfig& lc : config.layers) {
    LayerSpec spec;
    switch (lc.kind) {
      case LayerConfig::Kind::kDet: {
        DeterministicLayer det;
        det.flow_index = static_cast<int>(chain.flows.size());
        chain.flows.push_back(make_flow(config.dim_x, config.dim_y, lc.blocks,
                                        lc.hidden, lc.clamp, rng));
        spec.layer = det;
        break;
      }
      case LayerConfig::Kind::kLangevin: {
        LangevinLayer lang;
        lang.cfg.a1 = lc.a1;
        lang.cfg.a2 = std::sqrt(lc.a2sq);
        lang.cfg.n_steps = lc.steps;
        lang.interp_t = lc.interp_t;
        spec.layer = lang;
        break;
      }
      case LayerConfig::Kind::kMala: {
        McmcLayer mh;
        mh.cfg.proposal = MhConfig::Proposal::kMala;
        mh.cfg.a1 = lc.a1;
        mh.cfg.a2 = std::sqrt(lc.a2sq);
        mh.cfg.n_steps = lc.steps;
        mh.interp_t = lc.interp_t;
        spec.layer = mh;
        break;
      }
      case LayerConfig::Kind::kMhRandomWalk: {
        McmcLayer mh;
        mh.cfg.proposal = MhConfig::Proposal::kRandomWalk;
        mh.cfg.sigma = lc.sigma;
        mh.cfg.n_steps = lc.steps;
        mh.interp_t = lc.interp_t;
        spec.layer = mh;
        break;
      }
    }
    chain.layers.push_back(std::move(spec));
  }
  chain.validate();
  return chain;
}

EvalConfig to_eval_config(const ExperimentConfig& config, int threads) {
  EvalConfig eval;
  eval.metric = config.metric == ExperimentConfig::Metric::kW1
                    ? EvalConfig::Metric::kW1
                    : EvalConfig::Metric::kBinnedKl;
  eval.samples_per_y = config.samples_per_y;
  eval.noise_floor = config.noise_floor;
  eval.mh_steps = config.eval_mh_steps;
  eval.mh.proposal = MhConfig::Proposal::kRandomWalk;
  eval.mh.sigma = config.eval_mh_sigma;
  eval.mh.n_steps = 1;
  eval.grid.lo = Eigen::VectorXd::Constant(config.dim_x, config.grid_lo);
  eval.grid.hi = Eigen::VectorXd::Constant(config.dim_x, config.grid_hi);
  eval.grid.res = config.grid_res;
  eval.threads = threads;
  return eval;
}

Eigen::MatrixXd draw_observations(const InverseProblem& problem, int n,
                                  RngStream rng) {
  Eigen::MatrixXd x, y;
  problem.sample_joint(n, rng, x, y);
  return y;
}

}  // namespace snf
