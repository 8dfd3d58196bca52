#pragma once

#include <vector>

#include "loopflow/structure_io.hpp"

namespace testing {

inline double max_abs_diff(const loopflow::Mat3& a, const loopflow::Mat3& b) {
  return (a - b).cwiseAbs().maxCoeff();
}

inline double max_abs_diff(const loopflow::Vec3& a, const loopflow::Vec3& b) {
  return (a - b).cwiseAbs().maxCoeff();
}

// A rotation with angle drawn uniformly below max_angle.
inline loopflow::Rotation random_rotation_below(loopflow::Rng& rng, double max_angle) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> angle(0.0, max_angle);
  loopflow::Vec3 axis(normal(rng), normal(rng), normal(rng));
  return loopflow::exp_rotvec(axis.normalized() * angle(rng));
}

inline loopflow::Frame random_frame(loopflow::Rng& rng, double spread = 10.0) {
  std::uniform_real_distribution<double> u(-spread, spread);
  return loopflow::Frame{loopflow::Vec3(u(rng), u(rng), u(rng)), loopflow::random_rotation(rng)};
}

inline std::vector<std::size_t> iota(std::size_t n, std::size_t first = 0) {
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = first + i;
  return v;
}

// Ideal helix with every frame jittered, so every bond term is strained.
inline loopflow::Structure strained_chain(int length, loopflow::Rng& rng, double sigma_x = 0.3,
                                          double sigma_r = 0.1) {
  const loopflow::Structure ideal = loopflow::random_helix_loop(length, rng);
  const auto all = iota(ideal.size());
  return loopflow::synth_prior(ideal, all, loopflow::NoiseSpec{sigma_x, sigma_r, 0}, rng);
}

}  // namespace testing
