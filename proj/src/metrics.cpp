#include "snf/metrics.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <thread>

namespace snf {

void SampleCloud::validate() const {
  if (points.cols() == 0) throw std::invalid_argument("SampleCloud: empty cloud");
  if (!points.allFinite())
    throw std::invalid_argument("SampleCloud: non-finite coordinates");
  if (weights.size() != 0) {
    if (weights.size() != points.cols())
      throw std::invalid_argument("SampleCloud: weight count mismatch");
    if ((weights.array() <= 0.0).any())
      throw std::invalid_argument("SampleCloud: weights must be positive");
    if (std::abs(weights.sum() - 1.0) > 1e-8)
      throw std::invalid_argument("SampleCloud: weights must sum to one");
  }
}

namespace {

Eigen::MatrixXd pairwise_distances(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  Eigen::MatrixXd d2 = (-2.0 * a.transpose() * b);
  d2.colwise() += a.colwise().squaredNorm().transpose();
  d2.rowwise() += b.colwise().squaredNorm();
  return d2.cwiseMax(0.0).cwiseSqrt();
}

}  // namespace

double solve_assignment(const Eigen::MatrixXd& cost, std::vector<int>* match) {
  const int n = static_cast<int>(cost.rows());
  if (cost.cols() != n || n == 0)
    throw std::invalid_argument("solve_assignment: square cost matrix required");
  const double inf = std::numeric_limits<double>::infinity();

  // Shortest augmenting paths with potentials, 1-indexed.
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<bool> used(n + 1, false);
    do {
      used[j0] = true;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }

  double total = 0.0;
  if (match) match->assign(n, -1);
  for (int j = 1; j <= n; ++j) {
    total += cost(p[j] - 1, j - 1);
    if (match) (*match)[p[j] - 1] = j - 1;
  }
  return total;
}

double transport_lp(const Eigen::MatrixXd& cost, const Eigen::VectorXd& supply,
                    const Eigen::VectorXd& demand) {
  const int m = static_cast<int>(supply.size());
  const int n = static_cast<int>(demand.size());
  if (cost.rows() != m || cost.cols() != n || m == 0 || n == 0)
    throw std::invalid_argument("transport_lp: shape mismatch");
  if ((supply.array() <= 0.0).any() || (demand.array() <= 0.0).any())
    throw std::invalid_argument("transport_lp: masses must be positive");
  const double total = supply.sum();
  if (std::abs(demand.sum() - total) > 1e-8 * total)
    throw std::invalid_argument("transport_lp: unbalanced masses");

  struct Cell {
    int i, j;
    double flow;
  };
  std::vector<Cell> basis;
  basis.reserve(m + n - 1);

  {  // Northwest-corner start; exactly m + n - 1 cells, zeros allowed.
    Eigen::VectorXd ra = supply, rb = demand * (total / demand.sum());
    int i = 0, j = 0;
    while (true) {
      const double t = std::min(ra[i], rb[j]);
      basis.push_back({i, j, t});
      ra[i] -= t;
      rb[j] -= t;
      if (i == m - 1 && j == n - 1) break;
      if (i == m - 1)
        ++j;
      else if (j == n - 1)
        ++i;
      else if (ra[i] <= rb[j])
        ++i;
      else
        ++j;
    }
  }

  const double eps = 1e-11 * (1.0 + cost.cwiseAbs().maxCoeff());
  const long max_iter = 4000L * (m + n) + 20000L;
  std::vector<double> u(m), v(n);
  std::vector<char> u_set(m), v_set(n);
  std::vector<std::vector<int>> adj(m + n);  // node -> basis cell indices

  for (long iter = 0; iter < max_iter; ++iter) {
    for (auto& a : adj) a.clear();
    for (int e = 0; e < static_cast<int>(basis.size()); ++e) {
      adj[basis[e].i].push_back(e);
      adj[m + basis[e].j].push_back(e);
    }
    // Duals from the spanning tree, u[0] = 0.
    std::fill(u_set.begin(), u_set.end(), 0);
    std::fill(v_set.begin(), v_set.end(), 0);
    u[0] = 0.0;
    u_set[0] = 1;
    std::vector<int> stack = {0};
    while (!stack.empty()) {
      const int node = stack.back();
      stack.pop_back();
      for (int e : adj[node]) {
        const Cell& c = basis[e];
        if (node < m && !v_set[c.j]) {
          v[c.j] = cost(c.i, c.j) - u[c.i];
          v_set[c.j] = 1;
          stack.push_back(m + c.j);
        } else if (node >= m && !u_set[c.i]) {
          u[c.i] = cost(c.i, c.j) - v[c.j];
          u_set[c.i] = 1;
          stack.push_back(c.i);
        }
      }
    }

    // Entering cell, Bland's rule.
    int ei = -1, ej = -1;
    for (int i = 0; i < m && ei < 0; ++i)
      for (int j = 0; j < n; ++j)
        if (cost(i, j) - u[i] - v[j] < -eps) {
          ei = i;
          ej = j;
          break;
        }
    if (ei < 0) break;

    // Tree path from row ei to column node m + ej.
    std::vector<int> parent_edge(m + n, -1), parent_node(m + n, -1);
    std::vector<char> seen(m + n, 0);
    std::vector<int> queue = {ei};
    seen[ei] = 1;
    for (std::size_t qi = 0; qi < queue.size(); ++qi) {
      const int node = queue[qi];
      if (node == m + ej) break;
      for (int e : adj[node]) {
        const Cell& c = basis[e];
        const int other = node < m ? m + c.j : c.i;
        if (!seen[other]) {
          seen[other] = 1;
          parent_edge[other] = e;
          parent_node[other] = node;
          queue.push_back(other);
        }
      }
    }
    if (!seen[m + ej])
      throw std::runtime_error("transport_lp: basis lost connectivity");

    // Cycle edges from ei to m+ej alternate -,+,-,... after the entering +.
    std::vector<int> path;
    for (int node = m + ej; node != ei; node = parent_node[node])
      path.push_back(parent_edge[node]);
    std::reverse(path.begin(), path.end());

    double theta = std::numeric_limits<double>::infinity();
    for (std::size_t t = 0; t < path.size(); t += 2)
      theta = std::min(theta, basis[path[t]].flow);
    int leaving = -1;
    for (std::size_t t = 0; t < path.size(); ++t) {
      basis[path[t]].flow += (t % 2 == 0 ? -theta : theta);
      if (t % 2 == 0 && leaving < 0 && basis[path[t]].flow <= eps) leaving = path[t];
    }
    if (leaving < 0)
      throw std::runtime_error("transport_lp: no leaving edge");
    basis[leaving] = {ei, ej, theta};
  }

  double value = 0.0;
  for (const Cell& c : basis) value += std::max(c.flow, 0.0) * cost(c.i, c.j);
  return value;
}

namespace {

// Deterministic cloud ordering so the optimum is evaluated in a canonical
// orientation; this makes the (mathematically symmetric) value bit-exactly
// symmetric in its arguments.
bool cloud_less(const SampleCloud& a, const SampleCloud& b) {
  if (a.size() != b.size()) return a.size() < b.size();
  return std::lexicographical_compare(
      a.points.data(), a.points.data() + a.points.size(), b.points.data(),
      b.points.data() + b.points.size());
}

}  // namespace

double wasserstein1(const SampleCloud& a, const SampleCloud& b, int cap) {
  a.validate();
  b.validate();
  if (a.points.rows() != b.points.rows())
    throw std::invalid_argument("wasserstein1: dimension mismatch");
  if (a.size() > cap || b.size() > cap)
    throw std::invalid_argument(
        "wasserstein1: cloud exceeds the exact-solver cap (" +
        std::to_string(cap) + " points); subsample and average instead");
  if (cloud_less(b, a)) return wasserstein1(b, a, cap);
  const Eigen::MatrixXd dist = pairwise_distances(a.points, b.points);
  if (a.uniform() && b.uniform() && a.size() == b.size())
    return solve_assignment(dist) / a.size();
  Eigen::VectorXd wa = a.uniform()
                           ? Eigen::VectorXd::Constant(a.size(), 1.0 / a.size())
                           : a.weights;
  Eigen::VectorXd wb = b.uniform()
                           ? Eigen::VectorXd::Constant(b.size(), 1.0 / b.size())
                           : b.weights;
  return transport_lp(dist, wa, wb);
}

std::int64_t GridSpec::num_cells() const {
  std::int64_t cells = 1;
  for (int i = 0; i < dim(); ++i) {
    cells *= res;
    if (cells > (1LL << 31))
      throw std::invalid_argument("GridSpec: too many cells");
  }
  return cells + 1;
}

void GridSpec::validate() const {
  if (lo.size() == 0 || lo.size() != hi.size())
    throw std::invalid_argument("GridSpec: bad box");
  if ((hi - lo).minCoeff() <= 0.0)
    throw std::invalid_argument("GridSpec: box must have positive extent");
  if (res < 1) throw std::invalid_argument("GridSpec: res must be positive");
  (void)num_cells();
}

CubeHistogram bin_cloud(const Eigen::MatrixXd& points, const GridSpec& grid) {
  grid.validate();
  if (points.rows() != grid.dim())
    throw std::invalid_argument("bin_cloud: dimension mismatch");
  CubeHistogram h;
  h.grid = grid;
  h.counts.assign(grid.num_cells(), 0);
  h.total = points.cols();
  const std::int64_t overflow = static_cast<std::int64_t>(h.counts.size()) - 1;
  for (Eigen::Index c = 0; c < points.cols(); ++c) {
    std::int64_t idx = 0;
    bool inside = true;
    for (int i = 0; i < grid.dim(); ++i) {
      const double rel = (points(i, c) - grid.lo[i]) / (grid.hi[i] - grid.lo[i]);
      const auto k = static_cast<std::int64_t>(std::floor(rel * grid.res));
      if (k < 0 || k >= grid.res) {
        inside = false;
        break;
      }
      idx = idx * grid.res + k;
    }
    ++h.counts[inside ? idx : overflow];
  }
  return h;
}

double binned_kl(const Eigen::MatrixXd& ref, const Eigen::MatrixXd& cand,
                 const GridSpec& grid) {
  if (ref.cols() == 0 || cand.cols() == 0)
    throw std::invalid_argument("binned_kl: empty cloud");
  const CubeHistogram hr = bin_cloud(ref, grid);
  const CubeHistogram hc = bin_cloud(cand, grid);

  std::int64_t occupied = 0;
  bool needs_smoothing = false;
  for (std::size_t i = 0; i < hr.counts.size(); ++i) {
    if (hr.counts[i] > 0 || hc.counts[i] > 0) ++occupied;
    if (hr.counts[i] > 0 && hc.counts[i] == 0) needs_smoothing = true;
  }

  const double nr = static_cast<double>(hr.total);
  const double nc = static_cast<double>(hc.total);
  const double denom = needs_smoothing ? nc + 0.5 * occupied : nc;
  double kl = 0.0;
  for (std::size_t i = 0; i < hr.counts.size(); ++i) {
    if (hr.counts[i] == 0) continue;
    const double p = hr.counts[i] / nr;
    const double q =
        (needs_smoothing ? hc.counts[i] + 0.5 : static_cast<double>(hc.counts[i])) /
        denom;
    kl += p * std::log(p / q);
  }
  return kl;
}

Eigen::MatrixXd mh_baseline(const Density& target, const Eigen::MatrixXd& x0,
                            int n_steps, const MhConfig& cfg, RngStream& rng) {
  if (x0.rows() != target.dim())
    throw std::invalid_argument("mh_baseline: dimension mismatch");
  cfg.validate();
  const int n = static_cast<int>(x0.cols());
  const std::uint64_t seed = rng.next_raw();
  std::vector<RngStream> streams;
  streams.reserve(n);
  for (int j = 0; j < n; ++j) streams.emplace_back(seed, j);

  // Borrowed view; non-owning.
  const std::shared_ptr<const Density> alias(&target, [](const Density*) {});
  const TargetView view(alias, n);
  Eigen::MatrixXd x = x0;
  Eigen::RowVectorXd lp = view.log_density(x);
  StepRecordBatch rec;
  MhConfig step_cfg = cfg;
  step_cfg.n_steps = 1;
  for (int s = 0; s < n_steps; ++s) mh_step(x, view, step_cfg, streams, rec, &lp);
  return x;
}

namespace {

double cloud_metric(const EvalConfig& cfg, const Eigen::MatrixXd& reference,
                    const Eigen::MatrixXd& candidate) {
  if (cfg.metric == EvalConfig::Metric::kW1)
    return wasserstein1({candidate, {}}, {reference, {}}, cfg.w1_cap);
  return binned_kl(reference, candidate, cfg.grid);
}

}  // namespace

EvalReport evaluate_run(const Chain& chain, const InverseProblem& problem,
                        const Eigen::MatrixXd& ys, const EvalConfig& cfg,
                        RngStream& rng) {
  if (ys.rows() != problem.dim_y())
    throw std::invalid_argument("evaluate_run: observation dimension mismatch");
  const int n_y = static_cast<int>(ys.cols());
  if (n_y == 0) throw std::invalid_argument("evaluate_run: no observations");
  const auto* linear = dynamic_cast<const LinearGaussianProblem*>(&problem);

  EvalReport report;
  report.rows.resize(n_y);

  auto reference_cloud = [&](const Eigen::VectorXd& y, RngStream& r) {
    if (linear) return analytic_posterior(*linear, y)->sample(cfg.samples_per_y, r);
    const Eigen::MatrixXd x0 = problem.sample_prior(cfg.samples_per_y, r);
    return mh_baseline(*problem.posterior_family().at(y), x0, cfg.mh_steps,
                       cfg.mh, r);
  };

  std::atomic<int> next(0);
  auto worker = [&]() {
    for (int i = next.fetch_add(1); i < n_y; i = next.fetch_add(1)) {
      RngStream base = rng.substream(0x5eed0000ULL + i);
      RngStream model_rng = base.substream(0);
      RngStream ref_rng = base.substream(1);
      RngStream floor_rng = base.substream(2);
      const Eigen::VectorXd y = ys.col(i);
      const Eigen::MatrixXd model =
          chain_sample(chain, cfg.samples_per_y, model_rng, y);
      const Eigen::MatrixXd ref = reference_cloud(y, ref_rng);
      EvalRow row;
      row.y_index = i;
      row.value = cloud_metric(cfg, ref, model);
      if (cfg.noise_floor) {
        const Eigen::MatrixXd ref2 = reference_cloud(y, floor_rng);
        row.floor_value = cloud_metric(cfg, ref, ref2);
      }
      report.rows[i] = row;
    }
  };

  const int n_threads = std::max(1, std::min(cfg.threads, n_y));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  auto mean_std = [&](auto getter, double& mean, double& sd) {
    double s = 0.0, s2 = 0.0;
    for (const EvalRow& r : report.rows) {
      const double v = getter(r);
      s += v;
      s2 += v * v;
    }
    mean = s / n_y;
    sd = n_y > 1 ? std::sqrt(std::max(0.0, (s2 - n_y * mean * mean) / (n_y - 1)))
                 : 0.0;
  };
  mean_std([](const EvalRow& r) { return r.value; }, report.mean, report.stddev);
  mean_std([](const EvalRow& r) { return r.floor_value; }, report.floor_mean,
           report.floor_stddev);
  return report;
}

}  // namespace snf
