#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "loopflow/frames.hpp"

namespace loopflow {

/// Inclusive residue range on one chain, written "H:95-102" (insertion codes
/// allowed, e.g. "H:100A-100C").
struct CdrSelection {
  char chain = 'H';
  ResidueId start;
  ResidueId end;
  std::string str() const;
};

/// Throws ConfigError on malformed text.
CdrSelection parse_selection(std::string_view spec);
std::vector<CdrSelection> parse_selections(std::span<const std::string> specs);

/// Flat, sorted, de-duplicated residue indices covered by the selections.
/// Throws SelectionMismatch when a selection names a missing chain or covers
/// no residue.
std::vector<std::size_t> resolve_selection(const Structure& s, std::span<const CdrSelection> sel);

struct RefinementProblem {
  Structure prior;
  std::optional<Structure> target;
  std::vector<CdrSelection> selections;

  /// Resolves the selections and checks that prior and target share chain
  /// layout and residue ids. Throws SelectionMismatch.
  std::vector<std::size_t> selection() const;
};

/// Backbone-only PDB reader (ATOM records for N, CA, C, O).
/// Throws EmptyInput, MalformedRecord, MissingBackboneAtom.
Structure parse_pdb_backbone(std::string_view text);
/// Fixed-column ATOM/TER/END writer; O is rebuilt from the frame and psi.
std::string write_pdb_backbone(const Structure& s);

Structure read_pdb_file(const std::string& path);
void write_pdb_file(const Structure& s, const std::string& path);

/// Direct RMSD (no superposition) over N, CA, C, O of the selected residues.
/// Throws SelectionMismatch when the two structures do not line up.
double rmsd_backbone(const Structure& a, const Structure& b, std::span<const std::size_t> selection);

struct NoiseSpec {
  double sigma_x = 1.0;  // Angstrom, per component
  double sigma_r = 0.2;  // radians, per tangent component
  std::uint64_t seed = 0;
};

/// Perturbs only the selected frames: x + N(0, sigma_x^2), r exp(N(0, sigma_r^2)).
Structure synth_prior(const Structure& target, std::span<const std::size_t> selection,
                      const NoiseSpec& noise, Rng& rng);

struct HelixGeometry {
  double phi_deg = -57.0;
  double psi_deg = -47.0;
  double omega_deg = 180.0;
  double c_n_bond = 1.32;
  double ca_c_n_angle_deg = 116.2;
  double c_n_ca_angle_deg = 121.7;
};

/// Backbone built residue by residue from ideal internal coordinates, with
/// the first residue in the identity frame. Residue ids start at 1.
BackboneChain build_backbone(int length, char chain_id, const HelixGeometry& geom = {},
                             std::span<const AminoAcid> sequence = {});

Rotation random_rotation(Rng& rng);

/// An ideal helix of random sequence under a uniformly random rotation and a
/// translation drawn from [-20, 20]^3 A.
Structure random_helix_loop(int length, Rng& rng, char chain_id = 'H');

/// Mean |d(C_i, N_i+1) - d0| over bonded pairs touching the selection.
double peptide_bond_error(const Structure& s, std::span<const std::size_t> selection,
                          double d0 = 1.32);

}  // namespace loopflow
