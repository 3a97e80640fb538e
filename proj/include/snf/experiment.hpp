#pragma once

#include <memory>

#include "snf/chain.hpp"
#include "snf/config.hpp"
#include "snf/metrics.hpp"
#include "snf/problems.hpp"

namespace snf {

// Fixed substream ids so every command derives its randomness from the single
// experiment seed.
namespace streams {
constexpr std::uint64_t kProblem = 1;
constexpr std::uint64_t kChainInit = 2;
constexpr std::uint64_t kTrain = 3;
constexpr std::uint64_t kEval = 4;
constexpr std::uint64_t kObservations = 5;
constexpr std::uint64_t kBaseline = 6;
constexpr std::uint64_t kSampleCommand = 7;
}  // namespace streams

struct BuiltProblem {
  std::shared_ptr<InverseProblem> problem;
  // Surrogate diagnostics (mixed-noise problems only).
  double surrogate_train_rmse = 0.0;
  double surrogate_holdout_rmse = 0.0;
};

/// Generates the prior (mixture means from the seed) or fits the surrogate to
/// the frozen synthetic forward map, then assembles the problem.
BuiltProblem build_problem(const ExperimentConfig& config);

/// Flows initialized from the seed, layers per config, posterior family wired
/// as the chain target.
Chain build_chain(const ExperimentConfig& config,
                  std::shared_ptr<InverseProblem> problem);

EvalConfig to_eval_config(const ExperimentConfig& config, int threads);

/// n i.i.d. observations y ~ P_Y via the problem's joint sampler.
Eigen::MatrixXd draw_observations(const InverseProblem& problem, int n,
                                  RngStream rng);

}  // namespace snf
