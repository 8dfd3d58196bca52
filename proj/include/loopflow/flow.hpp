#pragma once

#include <array>
#include <span>
#include <vector>

#include "loopflow/frames.hpp"

namespace loopflow {

/// Interpolated frames of the refined residues at time t.
struct FlowState {
  double t = 0.0;
  std::vector<Frame> frames;
};

/// Per-residue velocities. v_r is a rotation vector in body coordinates of
/// the state rotation it was computed at.
struct VectorFieldSample {
  std::vector<Vec3> v_x;
  std::vector<Vec3> v_r;
};

struct FmLoss {
  double loss_r3 = 0.0;
  double loss_so3 = 0.0;
};

struct LossBreakdown {
  double loss_r3 = 0.0;
  double loss_so3 = 0.0;
  double loss_2d = 0.0;
  double total = 0.0;
};

struct RegressionLoss {
  double loss_x = 0.0;
  double loss_r = 0.0;
  static constexpr double kRotationWeight = 0.5;
  double combined() const { return loss_x + kRotationWeight * loss_r; }
};

enum class AuxLossMode { AllPairs, AdjacentCa };

/// N, CA, C of one residue.
using HeavyAtoms = std::array<Vec3, 3>;

inline constexpr double kDefaultTimeEps = 1e-2;
inline constexpr double kAuxDistanceCutoff = 6.0;  // Angstrom

/// x_t = (1-t) x0 + t x1, r_t on the geodesic from r0 to r1.
FlowState interpolate(std::span<const Frame> prior, std::span<const Frame> target, double t);

/// The interpolant with Gaussian noise of variance gamma^2 t (1-t) on positions
/// (per component) and rotations (tangent space).
FlowState noisy_interpolate(std::span<const Frame> prior, std::span<const Frame> target, double t,
                            double gamma_x, double gamma_r, Rng& rng);

/// v_x = (x1 - x_t) / (1-t), v_r = log(r_t^T r1) / (1-t). Throws TimeTooClose.
VectorFieldSample conditional_vf(const FlowState& state, std::span<const Frame> target,
                                 double eps_t = kDefaultTimeEps);

FmLoss fm_loss(const VectorFieldSample& pred, const VectorFieldSample& target);

/// Masked distance-matrix loss over unordered heavy-atom pairs whose true
/// distance is below 6 A, normalized by (mask count - residue count). In
/// AdjacentCa mode, compares consecutive C-alpha displacement vectors and
/// normalizes by the number of consecutive pairs.
double aux_2d_loss(std::span<const HeavyAtoms> pred, std::span<const HeavyAtoms> truth,
                   AuxLossMode mode = AuxLossMode::AllPairs);

struct Aux2dGradient {
  double loss = 0.0;
  std::vector<HeavyAtoms> grad;  // dL/d(pred atom)
};
Aux2dGradient aux_2d_loss_grad(std::span<const HeavyAtoms> pred, std::span<const HeavyAtoms> truth,
                               AuxLossMode mode = AuxLossMode::AllPairs);

/// total = loss_r3 + loss_so3 + lambda * [t > 0.5] * loss_2d. loss_2d is
/// always evaluated and reported.
LossBreakdown full_loss(const VectorFieldSample& pred, const VectorFieldSample& target,
                        std::span<const HeavyAtoms> pred_atoms,
                        std::span<const HeavyAtoms> true_atoms, double t, double lambda,
                        AuxLossMode mode = AuxLossMode::AllPairs);

/// Mean Euclidean position error and mean cosine-embedding loss between
/// flattened rotation matrices.
RegressionLoss regression_losses(std::span<const Vec3> pred_x1, std::span<const Rotation> pred_r1,
                                 std::span<const Vec3> true_x1, std::span<const Rotation> true_r1);

HeavyAtoms heavy_atoms(const Frame& f);
std::vector<HeavyAtoms> heavy_atoms(const Structure& s);

}  // namespace loopflow
