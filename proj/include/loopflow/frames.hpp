#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "loopflow/so3.hpp"

namespace loopflow {

/// The 20 standard amino acids in alphabetical three-letter order, then UNK.
enum class AminoAcid : std::uint8_t {
  ALA, ARG, ASN, ASP, CYS, GLN, GLU, GLY, HIS, ILE,
  LEU, LYS, MET, PHE, PRO, SER, THR, TRP, TYR, VAL, UNK
};
inline constexpr int kNumAminoAcidTypes = 21;

AminoAcid amino_acid_from_code(std::string_view three_letter);
std::string_view amino_acid_code(AminoAcid aa);

namespace ideal {
// Idealized local coordinates of the backbone atoms, Angstrom.
inline const Vec3 kN{-0.525, 1.363, 0.0};
inline const Vec3 kCA{0.0, 0.0, 0.0};
inline const Vec3 kC{1.526, 0.0, 0.0};
inline constexpr double kCOBond = 1.231;
inline constexpr double kCACOAngleDeg = 120.8;
// Used when an input residue carries no carbonyl oxygen.
inline constexpr double kDefaultPsiDeg = -47.0;
}  // namespace ideal

struct Frame {
  Vec3 x = Vec3::Zero();  // C-alpha position, Angstrom
  Rotation r;
};

struct ResidueBackbone {
  Frame frame;
  double psi = 0.0;  // radians, (-pi, pi]
  AminoAcid restype = AminoAcid::UNK;
};

struct ResidueId {
  int number = 0;
  char icode = ' ';
  auto operator<=>(const ResidueId&) const = default;
  std::string str() const;
};

struct BackboneAtoms {
  Vec3 n, ca, c, o;
};

/// N, CA and C from the frame action on the idealized coordinates; O placed
/// from (CA, C) at 1.231 A, CA-C-O 120.8 deg, with dihedral N-CA-C-O = psi + pi.
BackboneAtoms frame_to_atoms(const ResidueBackbone& res);
Vec3 frame_atom(const Frame& f, const Vec3& local);

/// Gram-Schmidt frame with x = CA, e1 along C - CA, e2 in the N-CA-C plane.
/// Throws CollinearAtoms when the triangle area is <= 1e-6 A^2.
Frame atoms_to_frame(const Vec3& n, const Vec3& ca, const Vec3& c);

/// Dihedral angle a-b-c-d in (-pi, pi].
double dihedral(const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& d);
/// Places d so that |cd| = bond, angle(b,c,d) = angle, dihedral(a,b,c,d) = torsion.
Vec3 place_atom(const Vec3& a, const Vec3& b, const Vec3& c, double bond, double angle,
                double torsion);
/// Stored psi recovered from an observed carbonyl oxygen (inverse of the O placement).
double psi_from_atoms(const Vec3& n, const Vec3& ca, const Vec3& c, const Vec3& o);
double wrap_angle(double a);

class BackboneChain {
 public:
  /// Throws InvalidChain unless ids are strictly increasing, sizes agree and
  /// the chain is non-empty.
  BackboneChain(char chain_id, std::vector<ResidueBackbone> residues, std::vector<ResidueId> ids);

  char chain_id() const { return chain_id_; }
  std::size_t size() const { return residues_.size(); }
  const std::vector<ResidueBackbone>& residues() const { return residues_; }
  std::vector<ResidueBackbone>& residues() { return residues_; }
  const std::vector<ResidueId>& ids() const { return ids_; }
  const ResidueBackbone& operator[](std::size_t i) const { return residues_[i]; }
  ResidueBackbone& operator[](std::size_t i) { return residues_[i]; }

 private:
  char chain_id_;
  std::vector<ResidueBackbone> residues_;
  std::vector<ResidueId> ids_;
};

/// A set of chains addressed through flat residue indices in chain order.
class Structure {
 public:
  Structure() = default;
  explicit Structure(std::vector<BackboneChain> chains);

  const std::vector<BackboneChain>& chains() const { return chains_; }
  std::size_t size() const { return flat_.size(); }
  bool empty() const { return flat_.empty(); }

  const ResidueBackbone& residue(std::size_t flat) const;
  ResidueBackbone& residue(std::size_t flat);
  const ResidueId& id(std::size_t flat) const;
  std::size_t chain_of(std::size_t flat) const { return flat_[flat].first; }
  /// Position of the residue inside its chain.
  std::size_t local_index(std::size_t flat) const { return flat_[flat].second; }
  std::size_t chain_length(std::size_t flat) const { return chains_[flat_[flat].first].size(); }

  /// Consecutive residues (i, i+1) of one chain whose residue numbers differ
  /// by at most one; a larger jump is treated as a chain break.
  const std::vector<std::pair<std::size_t, std::size_t>>& bonded_pairs() const { return bonds_; }

  std::vector<Frame> frames(std::span<const std::size_t> selection) const;
  void set_frames(std::span<const std::size_t> selection, std::span<const Frame> frames);

 private:
  void index();

  std::vector<BackboneChain> chains_;
  std::vector<std::pair<std::size_t, std::size_t>> flat_;
  std::vector<std::pair<std::size_t, std::size_t>> bonds_;
};

/// Every frame (x, r) becomes (R x + t, R r); psi and residue types are kept.
BackboneChain apply_rigid(const BackboneChain& chain, const Rotation& rot, const Vec3& t);
Structure apply_rigid(const Structure& s, const Rotation& rot, const Vec3& t);
Frame apply_rigid(const Frame& f, const Rotation& rot, const Vec3& t);

}  // namespace loopflow
