#pragma once

#include <cstdint>
#include <Eigen/Dense>

namespace snf {

/// Seedable random stream with explicit substream derivation.
///
/// Every batch entry gets its own stream derived from (master seed, stream id),
/// so draws are reproducible independently of evaluation order or threading.
/// Gaussians come from Box-Muller on 53-bit uniforms; the generator state is
/// fully determined by the seed pair, which keeps replay tests bit-exact.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed, std::uint64_t stream = 0);

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform();

  /// Standard normal draw.
  double normal();

  Eigen::VectorXd normal_vector(int d);
  void fill_normal(Eigen::Ref<Eigen::MatrixXd> m);

  std::uint64_t next_raw();

  /// Child stream; deterministic function of this stream's identity and `id`.
  RngStream substream(std::uint64_t id) const;

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }

 private:
  std::uint64_t seed_ = 0;
  std::uint64_t stream_ = 0;
  std::uint64_t state_[4] = {0, 0, 0, 0};  // xoshiro256++
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace snf
