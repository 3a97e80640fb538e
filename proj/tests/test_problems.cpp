#include <doctest.h>

#include <cmath>
#include <numbers>

#include "snf/density.hpp"
#include "snf/problems.hpp"
#include "testutil.hpp"

using namespace snf;

namespace {

std::shared_ptr<const GaussianMixture> random_mixture(int d, int k,
                                                      std::uint64_t seed,
                                                      double var = 0.25) {
  RngStream rng(seed);
  Eigen::MatrixXd means(d, k);
  for (int j = 0; j < k; ++j)
    for (int i = 0; i < d; ++i) means(i, j) = 2.0 * rng.uniform() - 1.0;
  Eigen::VectorXd w(k);
  for (int j = 0; j < k; ++j) w[j] = 0.2 + rng.uniform();
  std::vector<Eigen::MatrixXd> covs(k, var * Eigen::MatrixXd::Identity(d, d));
  return std::make_shared<GaussianMixture>(w, means, covs);
}

double normal_log_pdf(const Eigen::VectorXd& x, const Eigen::VectorXd& m,
                      const Eigen::MatrixXd& cov) {
  const Eigen::LLT<Eigen::MatrixXd> llt(cov);
  const double log_det =
      2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  const Eigen::VectorXd diff = x - m;
  return -0.5 * diff.dot(llt.solve(diff)) - 0.5 * log_det -
         0.5 * x.size() * std::log(2.0 * std::numbers::pi);
}

}  // namespace

TEST_CASE("single-component mixture equals the closed-form Gaussian") {
  RngStream rng(1);
  const Eigen::VectorXd mean = rng.normal_vector(3);
  const Eigen::MatrixXd r = Eigen::MatrixXd::Random(3, 3);
  const Eigen::MatrixXd cov =
      0.5 * (r + r.transpose()) + 3.0 * Eigen::MatrixXd::Identity(3, 3);
  const GaussianMixture gm(Eigen::VectorXd::Ones(1), mean, {cov});
  for (int i = 0; i < 20; ++i) {
    const Eigen::VectorXd x = 2.0 * rng.normal_vector(3);
    CHECK(gm.log_density(x) ==
          doctest::Approx(normal_log_pdf(x, mean, cov)).epsilon(1e-12));
  }
}

TEST_CASE("log-sum-exp keeps far tails finite and component-dominated") {
  const auto gm = random_mixture(2, 3, 5, 0.01);
  Eigen::VectorXd x(2);
  x << 400.0, -350.0;
  const double lp = gm->log_density(x);
  CHECK(std::isfinite(lp));
  double best = -std::numeric_limits<double>::infinity();
  for (int k = 0; k < 3; ++k)
    best = std::max(best, std::log(gm->weights()[k]) +
                              normal_log_pdf(x, gm->means().col(k), gm->cov(k)));
  CHECK(lp == doctest::Approx(best).epsilon(1e-12));
}

TEST_CASE("mixture gradient and hvp match finite differences") {
  const auto gm = random_mixture(3, 4, 7);
  RngStream rng(8);
  for (int i = 0; i < 30; ++i) {
    const Eigen::VectorXd x = rng.normal_vector(3);
    const Eigen::VectorXd fd = testutil::fd_gradient(
        [&](const Eigen::VectorXd& v) { return gm->log_density(v); }, x, 1e-6);
    CHECK(testutil::rel_error(gm->grad_log_density(x), fd) < 1e-6);

    const Eigen::VectorXd v = rng.normal_vector(3);
    const double h = 1e-6;
    const Eigen::VectorXd hvp_fd =
        (gm->grad_log_density(x + h * v) - gm->grad_log_density(x - h * v)) /
        (2.0 * h);
    CHECK(testutil::rel_error(gm->hvp_log_density(x, v), hvp_fd) < 1e-5);
  }
}

TEST_CASE("mixture batch evaluation agrees with per-column evaluation") {
  const auto gm = random_mixture(3, 3, 9);
  Eigen::MatrixXd x(3, 50);
  RngStream rng(10);
  rng.fill_normal(x);
  const Eigen::RowVectorXd lp = gm->log_density_batch(x);
  const Eigen::MatrixXd grad = gm->grad_log_density_batch(x);
  Eigen::MatrixXd v(3, 50);
  rng.fill_normal(v);
  const Eigen::MatrixXd hvp = gm->hvp_log_density_batch(x, v);
  for (int j = 0; j < 50; ++j) {
    CHECK(lp[j] == doctest::Approx(gm->log_density(x.col(j))).epsilon(1e-13));
    CHECK((grad.col(j) - gm->grad_log_density(x.col(j))).norm() < 1e-12);
    CHECK((hvp.col(j) - gm->hvp_log_density(x.col(j), v.col(j))).norm() < 1e-12);
  }
}

TEST_CASE("mixture sampling matches analytic moments") {
  const auto gm = random_mixture(2, 3, 11);
  RngStream rng(12);
  const int n = 200000;
  const Eigen::MatrixXd s = gm->sample(n, rng);
  Eigen::VectorXd mean_want = Eigen::VectorXd::Zero(2);
  for (int k = 0; k < 3; ++k) mean_want += gm->weights()[k] * gm->means().col(k);
  CHECK((s.rowwise().mean() - mean_want).cwiseAbs().maxCoeff() < 4.0 / std::sqrt(n));
}

TEST_CASE("K=1 posterior matches an independent conjugate update") {
  RngStream rng(21);
  const int d = 3, dy = 2;
  Eigen::MatrixXd a = Eigen::MatrixXd::Random(dy, d);
  const double b2 = 0.3;
  const Eigen::VectorXd m = rng.normal_vector(d);
  const Eigen::MatrixXd rc = Eigen::MatrixXd::Random(d, d);
  const Eigen::MatrixXd cov =
      0.5 * (rc + rc.transpose()) + 2.0 * Eigen::MatrixXd::Identity(d, d);
  auto prior = std::make_shared<const GaussianMixture>(
      Eigen::VectorXd::Ones(1), Eigen::MatrixXd(m), std::vector<Eigen::MatrixXd>{cov});
  const LinearGaussianProblem problem(a, b2, prior);

  const Eigen::VectorXd y = rng.normal_vector(dy);
  const auto post = analytic_posterior(problem, y);

  const Eigen::MatrixXd prec = cov.inverse() + a.transpose() * a / b2;
  const Eigen::MatrixXd cov_want = prec.inverse();
  const Eigen::VectorXd m_want =
      cov_want * (a.transpose() * y / b2 + cov.inverse() * m);
  CHECK((post->cov(0) - cov_want).cwiseAbs().maxCoeff() < 1e-10);
  CHECK((post->means().col(0) - m_want).cwiseAbs().maxCoeff() < 1e-10);
  CHECK(post->weights()[0] == 1.0);
}

TEST_CASE("A = 0 posterior is the prior") {
  const auto prior = random_mixture(3, 2, 31, 0.04);
  const LinearGaussianProblem problem(Eigen::MatrixXd::Zero(3, 3), 0.05, prior);
  RngStream rng(32);
  const auto post = analytic_posterior(problem, rng.normal_vector(3));
  CHECK((post->means() - prior->means()).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((post->weights() - prior->weights()).cwiseAbs().maxCoeff() < 1e-12);
  for (int k = 0; k < 2; ++k)
    CHECK((post->cov(k) - prior->cov(k)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("d=2 posterior density matches grid-renormalized Bayes pointwise") {
  const auto prior = random_mixture(2, 2, 41, 0.01);
  Eigen::MatrixXd a(2, 2);
  a << 0.1, 0.0, 0.0, 0.05;
  const LinearGaussianProblem problem(a, 0.05, prior);
  RngStream rng(42);
  Eigen::MatrixXd xs, ys;
  problem.sample_joint(1, rng, xs, ys);
  const Eigen::VectorXd y = ys.col(0);

  const auto analytic = analytic_posterior(problem, y);
  const auto bayes = problem.posterior_log_density(y);
  const int res = 50;
  const double lo = -1.6, hi = 1.6;
  Eigen::MatrixXd pa(res, res), pb(res, res);
  for (int i = 0; i < res; ++i)
    for (int j = 0; j < res; ++j) {
      Eigen::VectorXd x(2);
      x << lo + (hi - lo) * (i + 0.5) / res, lo + (hi - lo) * (j + 0.5) / res;
      pa(i, j) = std::exp(analytic->log_density(x));
      pb(i, j) = std::exp(bayes->log_density(x));
    }
  pa /= pa.sum();
  pb /= pb.sum();
  CHECK((pa - pb).cwiseAbs().maxCoeff() <= 1e-6);

  CHECK(posterior_grid_tv(problem, y, Eigen::VectorXd::Constant(2, -2.0),
                          Eigen::VectorXd::Constant(2, 2.0), 220) <= 1e-4);
}

TEST_CASE("posterior weights match quadrature marginal likelihoods") {
  const auto prior = random_mixture(2, 3, 51, 0.02);
  Eigen::MatrixXd a(2, 2);
  a << 0.3, 0.05, -0.1, 0.2;
  const double b2 = 0.04;
  const LinearGaussianProblem problem(a, b2, prior);
  RngStream rng(52);
  Eigen::MatrixXd xs, ys;
  problem.sample_joint(1, rng, xs, ys);
  const Eigen::VectorXd y = ys.col(0);
  const auto post = analytic_posterior(problem, y);

  Eigen::VectorXd ml(3);
  const int res = 400;
  const double lo = -2.0, hi = 2.0;
  const double cell = (hi - lo) / res * (hi - lo) / res;
  const Eigen::MatrixXd noise_cov = b2 * Eigen::MatrixXd::Identity(2, 2);
  for (int k = 0; k < 3; ++k) {
    double acc = 0.0;
    for (int i = 0; i < res; ++i)
      for (int j = 0; j < res; ++j) {
        Eigen::VectorXd x(2);
        x << lo + (hi - lo) * (i + 0.5) / res, lo + (hi - lo) * (j + 0.5) / res;
        acc += std::exp(normal_log_pdf(x, prior->means().col(k), prior->cov(k)) +
                        normal_log_pdf(y, a * x, noise_cov)) *
               cell;
      }
    ml[k] = acc;
  }
  Eigen::VectorXd want = prior->weights().array() * ml.array();
  want /= want.sum();
  for (int k = 0; k < 3; ++k)
    CHECK(std::abs(post->weights()[k] - want[k]) / want[k] <= 1e-4);
}

TEST_CASE("Bayes-form posterior differs from the analytic one by a constant") {
  const auto prior = random_mixture(2, 2, 61, 0.05);
  Eigen::MatrixXd a(2, 2);
  a << 0.2, 0.0, 0.1, 0.3;
  const LinearGaussianProblem problem(a, 0.1, prior);
  RngStream rng(62);
  const Eigen::VectorXd y = rng.normal_vector(2);
  const auto analytic = analytic_posterior(problem, y);
  const auto bayes = problem.posterior_log_density(y);
  Eigen::VectorXd diffs(100);
  for (int i = 0; i < 100; ++i) {
    const Eigen::VectorXd x = rng.normal_vector(2);
    diffs[i] = bayes->log_density(x) - analytic->log_density(x);
  }
  const double mean = diffs.mean();
  CHECK((diffs.array() - mean).square().sum() / 99.0 < 1e-10);

  const Eigen::VectorXd x = rng.normal_vector(2);
  CHECK(testutil::rel_error(bayes->grad_log_density(x),
                            analytic->grad_log_density(x)) < 1e-9);
}

TEST_CASE("relaxed uniform: box plateau, tail slope, and unit mass") {
  const RelaxedUniform q(1, 1000.0);
  Eigen::VectorXd x(1);
  x << 0.3;
  const double inside = q.log_density(x);
  x << -0.9;
  CHECK(q.log_density(x) == inside);
  x << 1.0 + 2e-3;
  CHECK(q.log_density(x) == doctest::Approx(inside - 1000.0 * 2e-3).epsilon(1e-9));

  const int res = 400000;
  const double lo = -1.05, hi = 1.05;
  double acc = 0.0;
  for (int i = 0; i < res; ++i) {
    x[0] = lo + (hi - lo) * (i + 0.5) / res;
    acc += std::exp(q.log_density(x)) * (hi - lo) / res;
  }
  const double c = 1000.0 / 2002.0;
  acc += 2.0 * c / 1000.0 * std::exp(-1000.0 * 0.05);
  CHECK(std::abs(acc - 1.0) <= 1e-8);
}

TEST_CASE("relaxed uniform gradient away from the kinks and sampling") {
  const RelaxedUniform q(3, 200.0);
  RngStream rng(71);
  for (int i = 0; i < 50; ++i) {
    Eigen::VectorXd x = 1.5 * rng.normal_vector(3);
    for (int j = 0; j < 3; ++j)
      if (std::abs(std::abs(x[j]) - 1.0) < 1e-3) x[j] = 0.5;
    const Eigen::VectorXd fd = testutil::fd_gradient(
        [&](const Eigen::VectorXd& v) { return q.log_density(v); }, x, 1e-7);
    CHECK((q.grad_log_density(x) - fd).cwiseAbs().maxCoeff() < 1e-4);
  }
  const Eigen::MatrixXd s = q.sample(100000, rng);
  CHECK(std::abs(s.mean()) < 0.01);
  CHECK(s.cwiseAbs().maxCoeff() < 1.2);
}

TEST_CASE("surrogate fit drives a realizable linear map to near-zero error") {
  RngStream rng(81);
  Eigen::MatrixXd x(3, 2000);
  rng.fill_normal(x);
  const Eigen::MatrixXd w = Eigen::MatrixXd::Random(2, 3);
  const Eigen::MatrixXd f = w * x;
  const SurrogateFitResult fit = surrogate_fit(x, f, {}, rng, 4000, 128, 1e-2);
  CHECK(fit.train_rmse < 1e-3);
}

TEST_CASE("surrogate fit generalizes on the synthetic stand-in map") {
  RngStream rng(82);
  const DenseNet truth = make_synthetic_forward_map(3, 23, {32, 32}, rng);
  const int n = 3000, held = 500;
  Eigen::MatrixXd x(3, n + held);
  for (Eigen::Index j = 0; j < x.cols(); ++j)
    for (int i = 0; i < 3; ++i) x(i, j) = 2.0 * rng.uniform() - 1.0;
  const Eigen::MatrixXd f = net_forward(truth, x);
  const SurrogateFitResult fit =
      surrogate_fit(x.leftCols(n), f.leftCols(n), {64, 64}, rng, 3000, 128, 2e-3);
  const double holdout = std::sqrt(
      (net_forward(fit.net, Eigen::MatrixXd(x.rightCols(held))) - f.rightCols(held))
          .squaredNorm() /
      held);
  CHECK(holdout < 2.0 * fit.train_rmse + 1e-6);
}

TEST_CASE("joint sampling: degenerate noise recovers the forward map") {
  const auto prior = random_mixture(2, 2, 91, 0.09);
  Eigen::MatrixXd a(2, 2);
  a << 0.4, 0.0, 0.0, 0.25;
  const LinearGaussianProblem problem(a, 1e-30, prior);
  RngStream rng(92);
  Eigen::MatrixXd x, y;
  problem.sample_joint(64, rng, x, y);
  CHECK((y - a * x).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("joint sampling: linear-Gaussian Y moments match the analytic mixture") {
  const auto prior = random_mixture(2, 3, 93, 0.04);
  Eigen::MatrixXd a(2, 2);
  a << 0.5, 0.1, -0.2, 0.3;
  const double b2 = 0.02;
  const LinearGaussianProblem problem(a, b2, prior);
  RngStream rng(94);
  Eigen::MatrixXd x, y;
  const int n = 200000;
  problem.sample_joint(n, rng, x, y);

  Eigen::VectorXd mx = Eigen::VectorXd::Zero(2);
  for (int k = 0; k < 3; ++k) mx += prior->weights()[k] * prior->means().col(k);
  const Eigen::VectorXd my = a * mx;
  CHECK((y.rowwise().mean() - my).cwiseAbs().maxCoeff() < 5.0 / std::sqrt(n));

  Eigen::MatrixXd cov_x = Eigen::MatrixXd::Zero(2, 2);
  for (int k = 0; k < 3; ++k) {
    const Eigen::VectorXd dm = prior->means().col(k) - mx;
    cov_x += prior->weights()[k] * (prior->cov(k) + dm * dm.transpose());
  }
  const Eigen::MatrixXd cov_y_want =
      a * cov_x * a.transpose() + b2 * Eigen::MatrixXd::Identity(2, 2);
  const Eigen::VectorXd ym = y.rowwise().mean();
  const Eigen::MatrixXd yc = y.colwise() - ym;
  const Eigen::MatrixXd cov_y = yc * yc.transpose() / (n - 1.0);
  CHECK((cov_y - cov_y_want).cwiseAbs().maxCoeff() < 6.0 / std::sqrt(n));
}

TEST_CASE("mixed noise: conditional variance is a^2 F^2 + b^2") {
  RngStream rng(95);
  const DenseNet truth = make_synthetic_forward_map(3, 5, {16}, rng);
  const MixedNoiseProblem problem(truth, 0.2, 0.01, 1000.0);
  Eigen::MatrixXd x0(3, 1);
  x0 << 0.2, -0.4, 0.6;
  const Eigen::VectorXd f = net_forward(problem.forward_map(), x0).col(0);
  const int n = 200000;
  Eigen::MatrixXd y(5, n);
  for (int j = 0; j < n; ++j) {
    const Eigen::VectorXd e1 = rng.normal_vector(5);
    const Eigen::VectorXd e2 = rng.normal_vector(5);
    y.col(j) = f.array() * (1.0 + 0.2 * e1.array()) + 0.01 * e2.array();
  }
  for (int i = 0; i < 5; ++i) {
    const double want = 0.04 * f[i] * f[i] + 1e-4;
    const Eigen::ArrayXd row = y.row(i).array() - y.row(i).mean();
    const double got = row.square().sum() / (n - 1.0);
    CHECK(std::abs(got - want) < 6.0 * want * std::sqrt(2.0 / n) + 1e-8);
  }
}

TEST_CASE("mixed-noise likelihood reduces to the additive form as a -> 0") {
  RngStream rng(96);
  const DenseNet truth = make_synthetic_forward_map(3, 4, {16}, rng);
  const double b = 0.01;
  const MixedNoiseProblem problem(truth, 1e-15, b, 1000.0);
  for (int i = 0; i < 20; ++i) {
    const Eigen::VectorXd x = 0.8 * rng.normal_vector(3);
    const Eigen::VectorXd y = rng.normal_vector(4);
    const Eigen::VectorXd f = net_forward(problem.forward_map(), x);
    const double want = -0.5 * (y - f).squaredNorm() / (b * b) -
                        4.0 * std::log(std::sqrt(2.0 * std::numbers::pi) * b);
    CHECK(problem.log_likelihood(y, x) == doctest::Approx(want).epsilon(1e-12));
  }
}

TEST_CASE("mixed-noise posterior gradient matches finite differences") {
  RngStream rng(97);
  const DenseNet truth = make_synthetic_forward_map(3, 6, {16, 16}, rng);
  const MixedNoiseProblem problem(truth, 0.2, 0.05, 500.0);
  const Eigen::VectorXd y = rng.normal_vector(6);
  const auto post = problem.posterior_family().at(y);
  for (int i = 0; i < 20; ++i) {
    Eigen::VectorXd x = 0.7 * rng.normal_vector(3);
    for (int j = 0; j < 3; ++j)
      if (std::abs(std::abs(x[j]) - 1.0) < 1e-3) x[j] *= 0.9;
    const Eigen::VectorXd fd = testutil::fd_gradient(
        [&](const Eigen::VectorXd& v) { return post->log_density(v); }, x, 1e-6);
    CHECK(testutil::rel_error(post->grad_log_density(x), fd) < 1e-5);
  }
  Eigen::MatrixXd xb(3, 20);
  rng.fill_normal(xb);
  xb *= 0.5;
  const Eigen::RowVectorXd lp = post->log_density_batch(xb);
  for (int j = 0; j < 20; ++j)
    CHECK(lp[j] == doctest::Approx(post->log_density(xb.col(j))).epsilon(1e-13));
}

TEST_CASE("geometric interpolation of two Gaussians has the closed form") {
  RngStream rng(101);
  const Eigen::VectorXd m0 = rng.normal_vector(2);
  const Eigen::VectorXd m1 = rng.normal_vector(2);
  const Eigen::MatrixXd r0 = Eigen::MatrixXd::Random(2, 2);
  const Eigen::MatrixXd c0 =
      0.5 * (r0 + r0.transpose()) + 2.0 * Eigen::MatrixXd::Identity(2, 2);
  const Eigen::MatrixXd r1 = Eigen::MatrixXd::Random(2, 2);
  const Eigen::MatrixXd c1 =
      0.5 * (r1 + r1.transpose()) + 2.0 * Eigen::MatrixXd::Identity(2, 2);
  auto ga = std::make_shared<const GaussianMixture>(
      Eigen::VectorXd::Ones(1), Eigen::MatrixXd(m0), std::vector<Eigen::MatrixXd>{c0});
  auto gb = std::make_shared<const GaussianMixture>(
      Eigen::VectorXd::Ones(1), Eigen::MatrixXd(m1), std::vector<Eigen::MatrixXd>{c1});

  const int t = 2, total = 5;
  const auto interp = interpolated_density(ga, gb, t, total);
  const double w0 = 1.0 - static_cast<double>(t) / total;
  const double w1 = static_cast<double>(t) / total;
  const Eigen::MatrixXd prec = w0 * c0.inverse() + w1 * c1.inverse();
  const Eigen::MatrixXd cov = prec.inverse();
  const Eigen::VectorXd mean =
      cov * (w0 * c0.inverse() * m0 + w1 * c1.inverse() * m1);

  Eigen::VectorXd diffs(50);
  for (int i = 0; i < 50; ++i) {
    const Eigen::VectorXd x = 2.0 * rng.normal_vector(2);
    diffs[i] = interp->log_density(x) - normal_log_pdf(x, mean, cov);
  }
  CHECK((diffs.array() - diffs.mean()).abs().maxCoeff() <= 1e-10);

  const auto at0 = interpolated_density(ga, gb, 0, total);
  const auto at_total = interpolated_density(ga, gb, total, total);
  const Eigen::VectorXd x = rng.normal_vector(2);
  CHECK(at0->log_density(x) == doctest::Approx(ga->log_density(x)).epsilon(1e-14));
  CHECK(at_total->log_density(x) ==
        doctest::Approx(gb->log_density(x)).epsilon(1e-14));
}

TEST_CASE("standard normal gradient and hvp match finite differences") {
  const StandardNormal sn(4);
  RngStream rng(111);
  for (int i = 0; i < 20; ++i) {
    const Eigen::VectorXd x = rng.normal_vector(4);
    const Eigen::VectorXd fd = testutil::fd_gradient(
        [&](const Eigen::VectorXd& v) { return sn.log_density(v); }, x, 1e-6);
    CHECK(testutil::rel_error(sn.grad_log_density(x), fd) < 1e-6);
    const Eigen::VectorXd v = rng.normal_vector(4);
    CHECK((sn.hvp_log_density(x, v) + v).norm() == 0.0);
  }
}

TEST_CASE("default finite-difference hvp approximates the analytic one") {
  const auto gm = random_mixture(2, 2, 121);
  class Wrapper final : public Density {
   public:
    explicit Wrapper(std::shared_ptr<const GaussianMixture> g) : g_(std::move(g)) {}
    int dim() const override { return g_->dim(); }
    double log_density(const Eigen::VectorXd& x) const override {
      return g_->log_density(x);
    }
    Eigen::VectorXd grad_log_density(const Eigen::VectorXd& x) const override {
      return g_->grad_log_density(x);
    }
    std::shared_ptr<const GaussianMixture> g_;
  } wrapped(gm);
  RngStream rng(122);
  for (int i = 0; i < 10; ++i) {
    const Eigen::VectorXd x = rng.normal_vector(2);
    const Eigen::VectorXd v = rng.normal_vector(2);
    CHECK(testutil::rel_error(wrapped.hvp_log_density(x, v),
                              gm->hvp_log_density(x, v)) < 1e-5);
  }
}
