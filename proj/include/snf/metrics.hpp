#pragma once

#include <cstdint>
#include <vector>
#include <Eigen/Dense>

#include "snf/chain.hpp"
#include "snf/kernels.hpp"
#include "snf/problems.hpp"
#include "snf/rng.hpp"

namespace snf {

/// Point cloud with optional weights (empty means uniform).
struct SampleCloud {
  Eigen::MatrixXd points;  // d x n
  Eigen::VectorXd weights;

  int size() const { return static_cast<int>(points.cols()); }
  bool uniform() const { return weights.size() == 0; }
  void validate() const;
};

/// Exact Wasserstein-1 distance with Euclidean cost between two clouds.
/// Equal-size uniform clouds are solved as an assignment problem (shortest
/// augmenting paths); weighted or unequal-size clouds go through the
/// transportation simplex. Clouds larger than cap are rejected with advice to
/// subsample.
double wasserstein1(const SampleCloud& a, const SampleCloud& b, int cap = 2000);

/// Min-cost assignment on a square cost matrix; returns the optimal total
/// cost, and the column matched to each row in match if non-null.
double solve_assignment(const Eigen::MatrixXd& cost, std::vector<int>* match = nullptr);

/// Exact optimal transport between weighted discrete measures (rows supply,
/// columns demand) by the transportation simplex.
double transport_lp(const Eigen::MatrixXd& cost, const Eigen::VectorXd& supply,
                    const Eigen::VectorXd& demand);

/// Regular grid over a box with res cells per axis; samples outside the box
/// are counted in a designated overflow cell so mass is conserved.
struct GridSpec {
  Eigen::VectorXd lo, hi;
  int res = 50;

  int dim() const { return static_cast<int>(lo.size()); }
  std::int64_t num_cells() const;  // res^dim + 1 (overflow)
  void validate() const;
};

struct CubeHistogram {
  GridSpec grid;
  std::vector<std::int64_t> counts;
  std::int64_t total = 0;
};

CubeHistogram bin_cloud(const Eigen::MatrixXd& points, const GridSpec& grid);

/// KL(ref_histogram, cand_histogram) over occupied cells. When the candidate
/// has empty cells where the reference does not, add-1/2 smoothing is applied
/// to the candidate counts over the occupied-cell union; otherwise the raw
/// histograms are compared, so identical clouds give exactly zero.
double binned_kl(const Eigen::MatrixXd& ref, const Eigen::MatrixXd& cand,
                 const GridSpec& grid);

/// Runs n_steps of the Metropolis-Hastings kernel on every column of x0 and
/// returns the final states, one sample per chain.
Eigen::MatrixXd mh_baseline(const Density& target, const Eigen::MatrixXd& x0,
                            int n_steps, const MhConfig& cfg, RngStream& rng);

struct EvalConfig {
  enum class Metric { kW1, kBinnedKl };
  Metric metric = Metric::kW1;
  int samples_per_y = 1000;
  bool noise_floor = true;
  int w1_cap = 2000;
  // Reference sampling when no analytic posterior applies.
  int mh_steps = 1000;
  MhConfig mh;
  GridSpec grid;
  int threads = 1;
};

struct EvalRow {
  int y_index = 0;
  double value = 0.0;
  double floor_value = 0.0;
};

struct EvalReport {
  std::vector<EvalRow> rows;
  double mean = 0.0;
  double stddev = 0.0;
  double floor_mean = 0.0;
  double floor_stddev = 0.0;
};

/// Per-observation metric between chain samples and reference posterior
/// samples (analytic mixture when the problem is linear-Gaussian, otherwise
/// one MH chain per sample). The noise floor is the metric between two
/// independent reference clouds of the same size.
EvalReport evaluate_run(const Chain& chain, const InverseProblem& problem,
                        const Eigen::MatrixXd& ys, const EvalConfig& cfg,
                        RngStream& rng);

}  // namespace snf
