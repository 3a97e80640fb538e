#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace snf {

/// One chain layer as described in the config file.
struct LayerConfig {
  enum class Kind { kDet, kLangevin, kMala, kMhRandomWalk };
  Kind kind = Kind::kDet;
  // deterministic
  int blocks = 4;
  std::vector<int> hidden = {64, 64};
  double clamp = 2.5;
  // stochastic
  int steps = 1;
  double a1 = 1e-6;
  double a2sq = 2e-6;
  double sigma = 0.4;
  int interp_t = -1;  // required for stochastic layers, never inferred
};

/// Flat, diff-able experiment description. Every field has a materialized
/// value after parsing; unknown keys are rejected.
struct ExperimentConfig {
  std::uint64_t seed = 0;

  enum class ProblemType { kLinearGaussian, kMixedNoise };
  ProblemType problem_type = ProblemType::kLinearGaussian;
  int dim_x = 8;
  int dim_y = 8;
  int components = 3;         // mixture prior, means drawn from the seed
  double prior_sigma2 = 0.01;
  double a_scale = 0.1;       // A = a_scale * diag(1, 1/2, ..., 1/d)
  double noise_b2 = 0.05;     // interpreted as the noise covariance scale b^2
  double noise_a = 0.2;       // mixed noise
  double noise_b = 0.01;
  double prior_alpha = 1000.0;
  std::vector<int> true_map_hidden = {64, 64, 64};
  std::vector<int> surrogate_hidden = {256, 256, 256};
  int surrogate_samples = 10000;
  int surrogate_steps = 2000;
  int surrogate_batch = 128;
  double surrogate_lr = 1e-3;

  std::vector<LayerConfig> layers;
  int interp_total = -1;  // -1: number of chain layers

  double lambda = 0.0;
  int train_batch = 128;
  int train_steps = 0;
  double lr = 1e-3;

  enum class Metric { kW1, kBinnedKl };
  Metric metric = Metric::kW1;
  int n_y = 20;
  int samples_per_y = 1000;
  double grid_lo = -1.0;
  double grid_hi = 1.0;
  int grid_res = 50;
  int eval_mh_steps = 1000;
  double eval_mh_sigma = 0.4;
  bool noise_floor = true;

  int resolved_interp_total() const {
    return interp_total > 0 ? interp_total : static_cast<int>(layers.size());
  }
  void validate() const;
};

ExperimentConfig parse_config_text(const std::string& text);
ExperimentConfig load_config(const std::string& path);

/// The config with every default materialized; re-parsing it reproduces the
/// run exactly.
std::string resolved_config_text(const ExperimentConfig& config);

}  // namespace snf
