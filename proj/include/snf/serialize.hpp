#pragma once

#include <cstdint>
#include <iostream>
#include <memory>
#include <string>

#include "snf/chain.hpp"
#include "snf/coupling.hpp"
#include "snf/nn.hpp"
#include "snf/problems.hpp"

namespace snf {

// Flat binary format, host byte order, 64-bit doubles; round-trips are
// lossless. Every blob carries a magic and version.

void save_net(std::ostream& os, const DenseNet& net);
DenseNet load_net(std::istream& is);

void save_flow(std::ostream& os, const CouplingFlow& flow);
CouplingFlow load_flow(std::istream& is);

void save_problem(std::ostream& os, const InverseProblem& problem);
std::shared_ptr<InverseProblem> load_problem(std::istream& is);

/// A trained model bundles the problem (priors, operator, noise constants)
/// with the chain, so sampling and evaluation need only the model file.
struct Model {
  std::shared_ptr<InverseProblem> problem;
  Chain chain;
};

void save_model(const std::string& path, const Chain& chain,
                const InverseProblem& problem);
Model load_model(const std::string& path);

void save_path_batch(std::ostream& os, const PathBatch& batch);
PathBatch load_path_batch(std::istream& is);

/// FNV-1a over the file bytes; stamped into CSV headers so outputs are
/// traceable to the exact model file.
std::uint64_t fnv1a_file(const std::string& path);

}  // namespace snf
