#pragma once

#include <array>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "loopflow/frames.hpp"

namespace loopflow {

/// The four inter-residue distance potentials that together encode the
/// peptide bond length, the two flanking bond angles and amide planarity.
enum class BondTerm { CaCa = 0, CN = 1, CaN = 2, CCa = 3 };
inline constexpr std::array<BondTerm, 4> kBondTerms = {BondTerm::CaCa, BondTerm::CN,
                                                       BondTerm::CaN, BondTerm::CCa};
std::string_view bond_term_name(BondTerm term);

struct EnergyParams {
  double k_alpha = 1.0;
  double d0_ca_ca = 3.80;
  double d0_c_n = 1.32;
  double d0_ca_n = 2.42;
  double d0_c_ca = 2.44;
  std::array<double, 4> omega{0.5, 0.5, 0.5, 0.5};
  double coincident_eps = 1e-6;

  double d0(BondTerm term) const;
  double weight(BondTerm term) const { return omega[static_cast<std::size_t>(term)]; }
  /// Throws ConfigError on negative or non-finite values.
  void validate() const;
};

struct BondEval {
  double energy = 0.0;
  Vec3 grad_i = Vec3::Zero();
  Vec3 grad_j = Vec3::Zero();
};

/// E = k (d - d0)^2 and its gradients with respect to both endpoints.
/// Throws CoincidentAtoms when d <= eps.
BondEval bond_energy_grad(const Vec3& p_i, const Vec3& p_j, double d0, double k,
                          double eps = 1e-6);

/// Unweighted energy of one term between residue i and its successor j, with
/// gradients with respect to both positions and both rotation matrices.
struct PairTermEval {
  double energy = 0.0;
  Vec3 grad_xi = Vec3::Zero();
  Vec3 grad_xj = Vec3::Zero();
  Mat3 grad_ri = Mat3::Zero();
  Mat3 grad_rj = Mat3::Zero();
};

PairTermEval pair_term_energy_grad(const ResidueBackbone& res_i, const ResidueBackbone& res_j,
                                   BondTerm term, const EnergyParams& params);

/// Per-residue gradients for every residue of a structure; entries outside
/// the selection stay zero. grad_r holds raw matrix derivatives dE/dr_ij.
struct EnergyGradient {
  std::vector<Vec3> grad_x;
  std::vector<Mat3> grad_r;
};

struct GuidanceEnergy {
  double energy = 0.0;
  EnergyGradient grads;
};

/// Weighted sum over every bonded pair touching the selection. Context
/// residues contribute energy but receive no gradient.
GuidanceEnergy total_guidance_energy(const Structure& s, std::span<const std::size_t> selection,
                                     const EnergyParams& params);

/// vee(skew(r^T G)).
Vec3 project_rotation_gradient(const Rotation& r, const Mat3& grad);

struct FiniteDifferenceReport {
  double max_rel_error = 0.0;
  std::string worst;  // which entry produced max_rel_error
};

/// Central differences of total_guidance_energy against the analytic
/// gradients: positions per component, rotations along body-frame axes
/// r exp(+-h e_k). A body-frame directional derivative equals
/// 2 * project_rotation_gradient (|hat(e_k)|_F^2 = 2). Relative errors use
/// max(|fd|, |analytic|, floor) as the denominator; `tamper` lets a caller
/// corrupt the analytic gradient before comparison.
FiniteDifferenceReport finite_difference_check(
    const Structure& s, std::span<const std::size_t> selection, const EnergyParams& params,
    double h, double floor = 1e-6,
    const std::function<void(EnergyGradient&)>& tamper = {});

}  // namespace loopflow
