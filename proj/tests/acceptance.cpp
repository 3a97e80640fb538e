// Acceptance suite. Each criterion prints exactly one PASS/FAIL line; the
// process exit code is the number of failed criteria. Soft checks print
// WARN-only lines and never fail the run.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numbers>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "snf/chain.hpp"
#include "snf/config.hpp"
#include "snf/experiment.hpp"
#include "snf/metrics.hpp"
#include "snf/problems.hpp"
#include "testutil.hpp"

using namespace snf;

namespace {

int g_failures = 0;

struct Outcome {
  bool pass = false;
  std::string detail;
};

void report(int index, const std::string& name, const std::function<Outcome()>& fn) {
  const auto start = std::chrono::steady_clock::now();
  Outcome outcome;
  try {
    outcome = fn();
  } catch (const std::exception& e) {
    outcome.pass = false;
    outcome.detail = std::string("exception: ") + e.what();
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::printf("CRITERION %d [%s]: %s (%s; %.1fs)\n", index, name.c_str(),
              outcome.pass ? "PASS" : "FAIL", outcome.detail.c_str(), secs);
  std::fflush(stdout);
  if (!outcome.pass) ++g_failures;
}

int eval_threads() {
  const unsigned hw = std::thread::hardware_concurrency();
  return static_cast<int>(std::min(8u, hw == 0 ? 1u : hw));
}

std::shared_ptr<const GaussianMixture> random_mixture(int d, int k, RngStream& rng,
                                                      double sigma2) {
  Eigen::MatrixXd means(d, k);
  for (int j = 0; j < k; ++j)
    for (int i = 0; i < d; ++i) means(i, j) = 2.0 * rng.uniform() - 1.0;
  Eigen::VectorXd w(k);
  for (int j = 0; j < k; ++j) w[j] = 0.25 + rng.uniform();
  std::vector<Eigen::MatrixXd> covs(k, sigma2 * Eigen::MatrixXd::Identity(d, d));
  return std::make_shared<GaussianMixture>(w, means, covs);
}

// --------------------------------------------------------------------------
// 1. Analytic posterior against grid-quadrature Bayes, d = 2, K in {1,2,3}.
Outcome criterion_oracle() {
  RngStream rng(10001);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const int k = 1 + trial % 3;
    const auto prior = random_mixture(2, k, rng, 0.005 + 0.02 * rng.uniform());
    Eigen::MatrixXd a(2, 2);
    a << 0.1 + 0.3 * rng.uniform(), 0.1 * rng.uniform(), 0.1 * rng.uniform(),
        0.1 + 0.3 * rng.uniform();
    const LinearGaussianProblem problem(a, 0.02 + 0.1 * rng.uniform(), prior);
    Eigen::MatrixXd xs, ys;
    problem.sample_joint(1, rng, xs, ys);
    const double tv = posterior_grid_tv(problem, ys.col(0),
                                        Eigen::VectorXd::Constant(2, -2.3),
                                        Eigen::VectorXd::Constant(2, 2.3), 220);
    worst = std::max(worst, tv);
  }
  Outcome out;
  out.pass = worst <= 1e-4;
  out.detail = "max TV over 20 cases = " + std::to_string(worst) + ", bound 1e-4";
  return out;
}

// --------------------------------------------------------------------------
// 2. Flow round-trips (d <= 16, L <= 4) and log-det against FD Jacobians
//    (d <= 6), 500 random cases each.
Outcome criterion_flows() {
  RngStream rng(10002);
  double worst_rt = 0.0, worst_anti = 0.0;
  for (int c = 0; c < 500; ++c) {
    const int d = 2 + static_cast<int>(rng.next_raw() % 15);
    const int blocks = 1 + static_cast<int>(rng.next_raw() % 4);
    const int cond = static_cast<int>(rng.next_raw() % 3);
    RngStream init(20000 + c);
    CouplingFlow flow = make_flow(d, cond, blocks, {8, 8}, 2.5, init);
    Eigen::VectorXd p(flow.param_count());
    for (Eigen::Index i = 0; i < p.size(); ++i) p[i] = 0.4 * init.normal();
    flow.set_params(p);
    const Eigen::MatrixXd z = rng.normal_vector(d);
    Eigen::MatrixXd y(cond, 1);
    if (cond > 0) y = rng.normal_vector(cond);
    Eigen::RowVectorXd ld, ldi;
    const Eigen::MatrixXd x = flow_forward(flow, z, y, &ld);
    const Eigen::MatrixXd back = flow_inverse(flow, x, y, &ldi);
    worst_rt = std::max(worst_rt, (back - z).cwiseAbs().maxCoeff());
    worst_anti = std::max(worst_anti, std::abs(ld[0] + ldi[0]));
  }

  double worst_ld = 0.0;
  for (int c = 0; c < 500; ++c) {
    const int d = 2 + static_cast<int>(rng.next_raw() % 5);
    const int blocks = 1 + static_cast<int>(rng.next_raw() % 4);
    RngStream init(30000 + c);
    CouplingFlow flow = make_flow(d, 0, blocks, {6}, 2.5, init);
    Eigen::VectorXd p(flow.param_count());
    for (Eigen::Index i = 0; i < p.size(); ++i) p[i] = 0.4 * init.normal();
    flow.set_params(p);
    const Eigen::VectorXd z = rng.normal_vector(d);
    Eigen::RowVectorXd ld;
    flow_forward(flow, z, Eigen::MatrixXd(), &ld);
    const Eigen::MatrixXd jac = testutil::fd_jacobian(
        [&](const Eigen::VectorXd& v) {
          return Eigen::VectorXd(
              flow_forward(flow, v, Eigen::MatrixXd(), nullptr).col(0));
        },
        z, 1e-6);
    const double fd = std::log(std::abs(jac.determinant()));
    worst_ld = std::max(worst_ld,
                        std::abs(ld[0] - fd) / std::max(1.0, std::abs(fd)));
  }
  Outcome out;
  out.pass = worst_rt <= 1e-9 && worst_ld <= 1e-4 && worst_anti <= 1e-12;
  std::ostringstream ss;
  ss << "round-trip " << worst_rt << " (<=1e-9), log-det rel " << worst_ld
     << " (<=1e-4), antisymmetry " << worst_anti << " (<=1e-12)";
  out.detail = ss.str();
  return out;
}

// --------------------------------------------------------------------------
// 3. Reverse-direction loss gradients against frozen-record finite
//    differences on (det, 2x Langevin, 2x MALA, det), d = 2, T = 6.
Outcome criterion_gradients() {
  const int d = 2, n = 8;
  RngStream setup(10003);
  const auto target = random_mixture(d, 2, setup, 0.3);

  double worst = 0.0;
  for (int draw = 0; draw < 20; ++draw) {
    Chain chain;
    chain.dim = d;
    chain.interp_total = 6;
    chain.latent = std::make_shared<StandardNormal>(d);
    chain.target = target;
    RngStream init(40000 + draw);
    chain.flows.push_back(make_flow(d, 0, 1, {6}, 2.5, init));
    chain.flows.push_back(make_flow(d, 0, 1, {6}, 2.5, init));
    DeterministicLayer det0;
    det0.flow_index = 0;
    DeterministicLayer det1;
    det1.flow_index = 1;
    LangevinLayer lang;
    lang.cfg.a1 = 0.02;
    lang.cfg.a2 = 0.15;
    lang.cfg.n_steps = 1;
    lang.interp_t = 3;
    McmcLayer mala;
    mala.cfg.proposal = MhConfig::Proposal::kMala;
    mala.cfg.a1 = 0.03;
    mala.cfg.a2 = std::sqrt(0.06);
    mala.cfg.n_steps = 1;
    mala.interp_t = 4;
    chain.layers = {LayerSpec{det0}, LayerSpec{lang}, LayerSpec{lang},
                    LayerSpec{mala}, LayerSpec{mala}, LayerSpec{det1}};
    Eigen::VectorXd params(chain.param_count());
    for (Eigen::Index i = 0; i < params.size(); ++i) params[i] = 0.3 * init.normal();
    chain.set_params(params);
    chain.validate();

    RngStream rng(41000 + draw);
    Eigen::MatrixXd data(d, n);
    rng.fill_normal(data);
    data *= 0.7;
    const PathBatch rev = sample_reverse_path(chain, data, rng);
    const LossResult loss = kl_loss(chain, rev);

    Chain probe = chain;
    const Eigen::VectorXd fd = testutil::fd_gradient(
        [&](const Eigen::VectorXd& p) {
          probe.set_params(p);
          LossOptions opts;
          opts.with_grad = false;
          return kl_loss(probe, replay_path(probe, rev), opts).value;
        },
        params, 1e-5);
    worst = std::max(worst, testutil::rel_error(loss.grad, fd));
  }
  Outcome out;
  out.pass = worst < 1e-4;
  out.detail = "max relative gradient error over 20 draws = " +
               std::to_string(worst) + ", bound 1e-4";
  return out;
}

// --------------------------------------------------------------------------
// 4. Detailed balance via the two-sample energy-distance permutation test,
//    N = 1e5 pairs in d = 2; a broken always-accept kernel must fail.
Outcome criterion_detailed_balance() {
  const int n = 100000, m = 2000;
  RngStream rng(10004);
  const auto target = random_mixture(2, 2, rng, 0.3);
  const Eigen::MatrixXd x = target->sample(n, rng);

  auto paired_pvalue = [&](const Eigen::MatrixXd& before,
                           const Eigen::MatrixXd& after, std::uint64_t seed) {
    const int h = n / 2;
    Eigen::MatrixXd a(4, m), b(4, m);
    const int stride = h / m;
    for (int j = 0; j < m; ++j) {
      a.col(j) << before.col(j * stride), after.col(j * stride);
      b.col(j) << after.col(h + j * stride), before.col(h + j * stride);
    }
    RngStream perm(seed);
    return testutil::energy_test_pvalue(a, b, 199, perm);
  };

  std::vector<RngStream> streams;
  for (int j = 0; j < n; ++j) streams.emplace_back(777, j);
  const TargetView view(target, n);

  MhConfig rw;
  rw.proposal = MhConfig::Proposal::kRandomWalk;
  rw.sigma = 0.8;
  Eigen::MatrixXd x_rw = x;
  StepRecordBatch rec;
  mh_step(x_rw, view, rw, streams, rec);
  const double p_rw = paired_pvalue(x, x_rw, 91);

  MhConfig mala;
  mala.proposal = MhConfig::Proposal::kMala;
  mala.a1 = 0.15;
  mala.a2 = std::sqrt(0.3);
  Eigen::MatrixXd x_mala = x;
  std::vector<RngStream> streams2;
  for (int j = 0; j < n; ++j) streams2.emplace_back(778, j);
  StepRecordBatch rec2;
  mh_step(x_mala, view, mala, streams2, rec2);
  const double p_mala = paired_pvalue(x, x_mala, 92);

  // Broken kernel: acceptance forced to one (a plain random walk).
  Eigen::MatrixXd x_broken = x;
  std::vector<RngStream> streams3;
  for (int j = 0; j < n; ++j) streams3.emplace_back(779, j);
  StepRecordBatch rec3;
  Eigen::RowVectorXd lp;
  mh_step(x_broken, view, rw, streams3, rec3, &lp);
  for (int j = 0; j < n; ++j)
    x_broken.col(j) = x.col(j) + rw.sigma * rec3.xi.col(j);
  const double p_broken = paired_pvalue(x, x_broken, 93);

  Outcome out;
  out.pass = p_rw > 0.01 && p_mala > 0.01 && p_broken <= 0.01;
  std::ostringstream ss;
  ss << "p(MH) = " << p_rw << ", p(MALA) = " << p_mala
     << " (> 0.01 required), p(broken) = " << p_broken << " (<= 0.01 required)";
  out.detail = ss.str();
  return out;
}

// --------------------------------------------------------------------------
// 5. Equilibrium: with X ~ p_t, the expected MH quotient term vanishes.
Outcome criterion_equilibrium() {
  const int n = 100000;
  RngStream rng(10005);
  const auto p_t = random_mixture(2, 2, rng, 0.3);
  const Eigen::MatrixXd x = p_t->sample(n, rng);
  const TargetView view(p_t, n);
  MhConfig cfg;
  cfg.proposal = MhConfig::Proposal::kRandomWalk;
  cfg.sigma = 0.5;
  Eigen::MatrixXd x_next = x;
  std::vector<RngStream> streams;
  for (int j = 0; j < n; ++j) streams.emplace_back(888, j);
  StepRecordBatch rec;
  mh_step(x_next, view, cfg, streams, rec);
  const Eigen::RowVectorXd term =
      view.log_density(x) - view.log_density(x_next);
  const double mean = term.mean();
  const double se =
      std::sqrt((term.array() - mean).square().sum() / (n - 1.0) / n);
  Outcome out;
  out.pass = std::abs(mean) < 3.0 * se;
  std::ostringstream ss;
  ss << "estimate " << mean << ", 3 x stderr " << 3.0 * se << ", N = " << n;
  out.detail = ss.str();
  return out;
}

// --------------------------------------------------------------------------
// 6. Desk-scale Gaussian-mixture experiment: trained conditional SNF within
//    twice the sampling-noise floor on mean W1 against the analytic posterior.
const char* kMixtureChain = R"(
layer = det blocks=4 hidden=64,64
layer = langevin steps=3 a1=1e-6 a2sq=2e-6 t=3
layer = mala steps=3 a1=1e-6 a2sq=2e-6 t=3
layer = det blocks=4 hidden=64,64
layer = langevin steps=3 a1=1e-6 a2sq=2e-6 t=6
layer = mala steps=3 a1=1e-6 a2sq=2e-6 t=6
)";
const char* kMixtureInnChain = "layer = det blocks=8 hidden=64,64\n";

std::string mixture_config(const std::string& chain) {
  return std::string(R"(
seed = 6001
[problem]
type = linear_gaussian
dim_x = 8
dim_y = 8
components = 3
prior_sigma2 = 0.01
a_scale = 0.1
noise_b2 = 0.05

[chain]
interp_total = 6
)") + chain + R"(
[train]
lambda = 0
batch = 512
steps = 2000
lr = 1e-3

[eval]
metric = w1
n_y = 20
samples_per_y = 1000
)";
}

EvalReport train_and_evaluate(const ExperimentConfig& cfg) {
  const BuiltProblem built = build_problem(cfg);
  Chain chain = build_chain(cfg, built.problem);
  TrainConfig tc;
  tc.lambda = cfg.lambda;
  tc.batch = cfg.train_batch;
  tc.steps = cfg.train_steps;
  tc.lr = cfg.lr;
  RngStream train_rng = RngStream(cfg.seed).substream(streams::kTrain);
  train(chain, ProblemSampler(*built.problem), tc, train_rng, built.problem.get());

  const Eigen::MatrixXd ys = draw_observations(
      *built.problem, cfg.n_y, RngStream(cfg.seed).substream(streams::kObservations));
  RngStream eval_rng = RngStream(cfg.seed).substream(streams::kEval);
  return evaluate_run(chain, *built.problem, ys,
                      to_eval_config(cfg, eval_threads()), eval_rng);
}

double g_mixture_snf_mean = 0.0;
double g_mixture_inn_mean = 0.0;

Outcome criterion_mixture_experiment() {
  const ExperimentConfig cfg = parse_config_text(mixture_config(kMixtureChain));
  const EvalReport snf = train_and_evaluate(cfg);
  g_mixture_snf_mean = snf.mean;

  const ExperimentConfig inn_cfg =
      parse_config_text(mixture_config(kMixtureInnChain));
  const EvalReport inn = train_and_evaluate(inn_cfg);
  g_mixture_inn_mean = inn.mean;

  Outcome out;
  out.pass = snf.mean <= 2.0 * snf.floor_mean;
  std::ostringstream ss;
  ss << "mean W1 " << snf.mean << " +/- " << snf.stddev << ", noise floor "
     << snf.floor_mean << " (bound 2x = " << 2.0 * snf.floor_mean
     << "); INN-only " << inn.mean << " +/- " << inn.stddev;
  out.detail = ss.str();
  return out;
}

// --------------------------------------------------------------------------
// 7. Desk-scale mixed-noise experiment with the synthetic stand-in forward
//    map: mean binned KL against the MH baseline within three times the
//    baseline self-distance.
const char* kScatterChain = R"(
layer = det blocks=1 hidden=64,64
layer = mh steps=10 sigma=0.4 t=2
layer = det blocks=1 hidden=64,64
layer = mh steps=10 sigma=0.4 t=4
layer = det blocks=1 hidden=64,64
layer = mh steps=10 sigma=0.4 t=6
layer = det blocks=1 hidden=64,64
layer = mh steps=10 sigma=0.4 t=8
)";
const char* kScatterInnChain = "layer = det blocks=4 hidden=64,64\n";

std::string scatter_config(const std::string& chain) {
  return std::string(R"(
seed = 7001
[problem]
type = mixed_noise
dim_x = 3
dim_y = 23
noise_a = 0.2
noise_b = 0.01
prior_alpha = 1000
true_map_hidden = 48,48
surrogate_hidden = 64,64,64
surrogate_samples = 10000
surrogate_steps = 2500
surrogate_batch = 128
surrogate_lr = 1e-3

[chain]
interp_total = 8
)") + chain + R"(
[train]
lambda = 0
batch = 256
steps = 600
lr = 1e-3

[eval]
metric = binned_kl
n_y = 20
samples_per_y = 3000
grid_lo = -1
grid_hi = 1
grid_res = 50
mh_steps = 1000
mh_sigma = 0.4
)";
}

double g_scatter_snf_mean = 0.0;
double g_scatter_inn_mean = 0.0;

Outcome criterion_scatter_experiment() {
  const ExperimentConfig cfg = parse_config_text(scatter_config(kScatterChain));
  const EvalReport snf = train_and_evaluate(cfg);
  g_scatter_snf_mean = snf.mean;

  const ExperimentConfig inn_cfg =
      parse_config_text(scatter_config(kScatterInnChain));
  const EvalReport inn = train_and_evaluate(inn_cfg);
  g_scatter_inn_mean = inn.mean;

  Outcome out;
  out.pass = snf.mean <= 3.0 * snf.floor_mean;
  std::ostringstream ss;
  ss << "mean binned KL " << snf.mean << " +/- " << snf.stddev
     << ", baseline self-distance " << snf.floor_mean << " (bound 3x = "
     << 3.0 * snf.floor_mean << "); INN-only " << inn.mean << " +/- "
     << inn.stddev;
  out.detail = ss.str();
  return out;
}

// --------------------------------------------------------------------------
// 8. Metric validation: brute-force assignment, sorted coupling, binned KL
//    closed forms.
Outcome criterion_metrics() {
  RngStream rng(10008);
  double worst_bf = 0.0;
  for (int n = 2; n <= 7; ++n)
    for (int trial = 0; trial < 4; ++trial) {
      Eigen::MatrixXd a(2, n), b(2, n);
      rng.fill_normal(a);
      rng.fill_normal(b);
      std::vector<int> perm(n);
      for (int i = 0; i < n; ++i) perm[i] = i;
      double best = std::numeric_limits<double>::infinity();
      do {
        double total = 0.0;
        for (int i = 0; i < n; ++i) total += (a.col(i) - b.col(perm[i])).norm();
        best = std::min(best, total / n);
      } while (std::next_permutation(perm.begin(), perm.end()));
      worst_bf = std::max(
          worst_bf, std::abs(wasserstein1({a, {}}, {b, {}}) - best));
    }

  double worst_sorted = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    const int n = 100;
    Eigen::MatrixXd a(1, n), b(1, n);
    rng.fill_normal(a);
    rng.fill_normal(b);
    std::vector<double> av(a.data(), a.data() + n), bv(b.data(), b.data() + n);
    std::sort(av.begin(), av.end());
    std::sort(bv.begin(), bv.end());
    double want = 0.0;
    for (int i = 0; i < n; ++i) want += std::abs(av[i] - bv[i]);
    worst_sorted = std::max(
        worst_sorted, std::abs(wasserstein1({a, {}}, {b, {}}) - want / n));
  }

  GridSpec grid;
  grid.lo = Eigen::VectorXd::Constant(2, -3.0);
  grid.hi = Eigen::VectorXd::Constant(2, 3.0);
  grid.res = 12;
  Eigen::MatrixXd cloud(2, 3000);
  rng.fill_normal(cloud);
  const double kl_same = binned_kl(cloud, cloud, grid);

  // Point mass vs uniform over m cells including it.
  GridSpec g1;
  g1.lo = Eigen::VectorXd::Constant(1, 0.0);
  g1.hi = Eigen::VectorXd::Constant(1, 1.0);
  g1.res = 10;
  const int m_cells = 5, n_pts = 5000;
  Eigen::MatrixXd ref(1, n_pts), cand(1, n_pts);
  for (int j = 0; j < n_pts; ++j) {
    ref(0, j) = 0.25;
    cand(0, j) = 0.05 + 0.1 * (j % m_cells);
  }
  const double kl_logm = binned_kl(ref, cand, g1);

  Outcome out;
  out.pass = worst_bf <= 1e-12 && worst_sorted <= 1e-10 && kl_same == 0.0 &&
             kl_logm == std::log(static_cast<double>(m_cells));
  std::ostringstream ss;
  ss << "brute-force dev " << worst_bf << ", sorted dev " << worst_sorted
     << ", KL(identical) = " << kl_same << ", KL(point vs uniform) - log m = "
     << kl_logm - std::log(static_cast<double>(m_cells));
  out.detail = ss.str();
  return out;
}

// --------------------------------------------------------------------------
// 9. Property suites: Gaussian geometric interpolation closed form, loss
//    invariance under constant rescaling of the stochastic targets, and the
//    marginal-KL inequality on analytic Gaussians.
class ShiftedDensity final : public Density {
 public:
  ShiftedDensity(std::shared_ptr<const Density> base, double shift)
      : base_(std::move(base)), shift_(shift) {}
  int dim() const override { return base_->dim(); }
  double log_density(const Eigen::VectorXd& x) const override {
    return base_->log_density(x) + shift_;
  }
  Eigen::VectorXd grad_log_density(const Eigen::VectorXd& x) const override {
    return base_->grad_log_density(x);
  }
  Eigen::VectorXd hvp_log_density(const Eigen::VectorXd& x,
                                  const Eigen::VectorXd& v) const override {
    return base_->hvp_log_density(x, v);
  }

 private:
  std::shared_ptr<const Density> base_;
  double shift_;
};

Chain shift_test_chain(int d, std::shared_ptr<const Density> target,
                       std::uint64_t seed) {
  Chain chain;
  chain.dim = d;
  chain.interp_total = 3;
  chain.latent = std::make_shared<StandardNormal>(d);
  chain.target = std::move(target);
  RngStream init(seed);
  chain.flows.push_back(make_flow(d, 0, 1, {6}, 2.5, init));
  chain.flows.push_back(make_flow(d, 0, 1, {6}, 2.5, init));
  DeterministicLayer det0;
  det0.flow_index = 0;
  DeterministicLayer det1;
  det1.flow_index = 1;
  LangevinLayer lang;
  lang.cfg.a1 = 0.02;
  lang.cfg.a2 = 0.2;
  lang.cfg.n_steps = 2;
  lang.interp_t = 2;
  McmcLayer mh;
  mh.cfg.proposal = MhConfig::Proposal::kRandomWalk;
  mh.cfg.sigma = 0.5;
  mh.cfg.n_steps = 2;
  mh.interp_t = 3;
  chain.layers = {LayerSpec{det0}, LayerSpec{lang}, LayerSpec{mh}, LayerSpec{det1}};
  Eigen::VectorXd p(chain.param_count());
  for (Eigen::Index i = 0; i < p.size(); ++i) p[i] = 0.3 * init.normal();
  chain.set_params(p);
  return chain;
}

Outcome criterion_properties() {
  RngStream rng(10009);

  // Geometric-mean interpolation of Gaussians: precision and mean combine as
  // a weighted sum of precisions.
  double worst_interp = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::VectorXd m0 = rng.normal_vector(2);
    const Eigen::VectorXd m1 = rng.normal_vector(2);
    Eigen::MatrixXd c0 = 0.4 * Eigen::MatrixXd::Identity(2, 2);
    c0(0, 1) = c0(1, 0) = 0.3 * (rng.uniform() - 0.5);
    Eigen::MatrixXd c1 = 0.7 * Eigen::MatrixXd::Identity(2, 2);
    c1(0, 1) = c1(1, 0) = 0.4 * (rng.uniform() - 0.5);
    auto ga = std::make_shared<const GaussianMixture>(
        Eigen::VectorXd::Ones(1), Eigen::MatrixXd(m0),
        std::vector<Eigen::MatrixXd>{c0});
    auto gb = std::make_shared<const GaussianMixture>(
        Eigen::VectorXd::Ones(1), Eigen::MatrixXd(m1),
        std::vector<Eigen::MatrixXd>{c1});
    const int t = 1 + static_cast<int>(rng.next_raw() % 4), total = 5;
    const auto interp = interpolated_density(ga, gb, t, total);
    const double w1 = static_cast<double>(t) / total, w0 = 1.0 - w1;
    const Eigen::MatrixXd prec = w0 * c0.inverse() + w1 * c1.inverse();
    const Eigen::MatrixXd cov = prec.inverse();
    const Eigen::VectorXd mean =
        cov * (w0 * c0.inverse() * m0 + w1 * c1.inverse() * m1);
    const Eigen::LLT<Eigen::MatrixXd> llt(cov);
    double base = std::numeric_limits<double>::quiet_NaN();
    for (int i = 0; i < 20; ++i) {
      const Eigen::VectorXd x = 2.0 * rng.normal_vector(2);
      const Eigen::VectorXd diff = x - mean;
      const double closed = -0.5 * diff.dot(llt.solve(diff));
      const double delta = interp->log_density(x) - closed;
      if (std::isnan(base))
        base = delta;
      else
        worst_interp = std::max(worst_interp, std::abs(delta - base));
    }
  }

  // Rescaling the stochastic-target density by a positive constant changes
  // neither the reverse loss value nor its gradient.
  const auto target = random_mixture(2, 2, rng, 0.3);
  Chain plain = shift_test_chain(2, target, 90001);
  Chain shifted =
      shift_test_chain(2, std::make_shared<ShiftedDensity>(target, std::log(250.0)),
                       90001);
  RngStream r1(90002);
  Eigen::MatrixXd data(2, 64);
  r1.fill_normal(data);
  const PathBatch rev_a = sample_reverse_path(plain, data, r1);
  // Frozen-record replay under the rescaled targets: identical points, terms
  // recomputed against the shifted densities.
  const PathBatch rev_b = replay_path(shifted, rev_a);
  const LossResult la = kl_loss(plain, rev_a);
  const LossResult lb = kl_loss(shifted, rev_b);
  const double dv = std::abs(la.value - lb.value);
  const double dg = (la.grad - lb.grad).cwiseAbs().maxCoeff();

  // Marginal-KL inequality on analytic Gaussians.
  bool marginal_ok = true;
  for (int trial = 0; trial < 50; ++trial) {
    auto rc = [&]() {
      const double sx = 0.3 + rng.uniform(), sy = 0.3 + rng.uniform();
      const double rho = 1.6 * rng.uniform() - 0.8;
      Eigen::MatrixXd c(2, 2);
      c << sx * sx, rho * sx * sy, rho * sx * sy, sy * sy;
      return c;
    };
    const Eigen::VectorXd m0 = rng.normal_vector(2), m1 = rng.normal_vector(2);
    const Eigen::MatrixXd c0 = rc(), c1 = rc();
    const double joint = testutil::gaussian_kl(m0, c0, m1, c1);
    const double marginal = testutil::gaussian_kl(
        m0.head(1), c0.topLeftCorner(1, 1), m1.head(1), c1.topLeftCorner(1, 1));
    if (joint < marginal - 1e-12) marginal_ok = false;
  }

  Outcome out;
  out.pass = worst_interp <= 1e-10 && dv <= 1e-12 && dg <= 1e-12 && marginal_ok;
  std::ostringstream ss;
  ss << "interpolation closed-form dev " << worst_interp
     << " (<=1e-10), loss shift-invariance dv = " << dv << ", dgrad = " << dg
     << " (<=1e-12), marginal-KL inequality " << (marginal_ok ? "holds" : "violated");
  out.detail = ss.str();
  return out;
}

}  // namespace

int main() {
  std::printf("stochastic normalizing flow acceptance suite\n");
  report(1, "analytic posterior oracle", criterion_oracle);
  report(2, "flow correctness", criterion_flows);
  report(3, "gradient exactness", criterion_gradients);
  report(4, "detailed balance", criterion_detailed_balance);
  report(5, "equilibrium property", criterion_equilibrium);
  report(6, "gaussian-mixture experiment", criterion_mixture_experiment);
  report(7, "mixed-noise experiment", criterion_scatter_experiment);
  report(8, "metric validation", criterion_metrics);
  report(9, "property suites", criterion_properties);

  if (g_mixture_snf_mean > 0.0 && g_mixture_inn_mean > 0.0) {
    const bool ok = g_mixture_snf_mean <= g_mixture_inn_mean;
    std::printf("SOFT [SNF <= INN, W1]: %s (SNF %.4f vs INN %.4f)%s\n",
                ok ? "holds" : "WARN: violated", g_mixture_snf_mean,
                g_mixture_inn_mean,
                ok ? "" : " - statistical ordering check only, not a failure");
  }
  if (g_scatter_snf_mean > 0.0 && g_scatter_inn_mean > 0.0) {
    const bool ok = g_scatter_snf_mean <= g_scatter_inn_mean;
    std::printf("SOFT [SNF <= INN, binned KL]: %s (SNF %.4f vs INN %.4f)%s\n",
                ok ? "holds" : "WARN: violated", g_scatter_snf_mean,
                g_scatter_inn_mean,
                ok ? "" : " - statistical ordering check only, not a failure");
  }

  std::printf("%d of 9 criteria failed\n", g_failures);
  return g_failures;
}
