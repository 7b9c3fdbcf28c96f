#pragma once

#include <cstdint>
#include <random>

#include <Eigen/Dense>

namespace ersde {

/// Stream purposes, so the prior draw and the step noise of one chain never
/// share a stream.
enum class StreamKind : std::uint32_t { StepNoise = 0, Prior = 1, Reference = 2, Subsample = 3 };

/// Independent normal stream keyed by (seed, chain, kind).
class ChainRng {
 public:
  ChainRng(std::uint64_t seed, std::uint64_t chain, StreamKind kind = StreamKind::StepNoise) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(chain), static_cast<std::uint32_t>(chain >> 32),
                      static_cast<std::uint32_t>(kind), 0x45525344u};
    engine_.seed(seq);
  }

  double normal() { return normal_(engine_); }
  double uniform() { return uniform_(engine_); }

  Eigen::VectorXd normal_vector(Eigen::Index dim) {
    Eigen::VectorXd z(dim);
    for (Eigen::Index i = 0; i < dim; ++i) z[i] = normal();
    return z;
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

}  // namespace ersde
