#include "loopflow/frames.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "loopflow/errors.hpp"

namespace loopflow {

namespace {

constexpr std::array<std::string_view, kNumAminoAcidTypes> kCodes = {
    "ALA", "ARG", "ASN", "ASP", "CYS", "GLN", "GLU", "GLY", "HIS", "ILE", "LEU",
    "LYS", "MET", "PHE", "PRO", "SER", "THR", "TRP", "TYR", "VAL", "UNK"};

constexpr double kDeg = std::numbers::pi / 180.0;

}  // namespace

AminoAcid amino_acid_from_code(std::string_view three_letter) {
  for (std::size_t i = 0; i < kCodes.size(); ++i) {
    if (kCodes[i] == three_letter) return static_cast<AminoAcid>(i);
  }
  if (three_letter == "MSE") return AminoAcid::MET;
  return AminoAcid::UNK;
}

std::string_view amino_acid_code(AminoAcid aa) { return kCodes[static_cast<std::size_t>(aa)]; }

std::string ResidueId::str() const {
  std::string s = std::to_string(number);
  if (icode != ' ') s.push_back(icode);
  return s;
}

double wrap_angle(double a) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  a = std::fmod(a, two_pi);
  if (a <= -std::numbers::pi) a += two_pi;
  if (a > std::numbers::pi) a -= two_pi;
  return a;
}

double dihedral(const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& d) {
  const Vec3 b0 = a - b;
  const Vec3 b1 = (c - b).normalized();
  const Vec3 b2 = d - c;
  const Vec3 v = b0 - b0.dot(b1) * b1;
  const Vec3 w = b2 - b2.dot(b1) * b1;
  return std::atan2(b1.cross(v).dot(w), v.dot(w));
}

Vec3 place_atom(const Vec3& a, const Vec3& b, const Vec3& c, double bond, double angle,
                double torsion) {
  const Vec3 bc = (c - b).normalized();
  const Vec3 n = (b - a).cross(bc).normalized();
  const Vec3 m = n.cross(bc);
  const Vec3 local(-bond * std::cos(angle), bond * std::sin(angle) * std::cos(torsion),
                   bond * std::sin(angle) * std::sin(torsion));
  return c + local.x() * bc + local.y() * m + local.z() * n;
}

Vec3 frame_atom(const Frame& f, const Vec3& local) { return f.r * local + f.x; }

BackboneAtoms frame_to_atoms(const ResidueBackbone& res) {
  BackboneAtoms atoms;
  atoms.n = frame_atom(res.frame, ideal::kN);
  atoms.ca = res.frame.x;
  atoms.c = frame_atom(res.frame, ideal::kC);
  atoms.o = place_atom(atoms.n, atoms.ca, atoms.c, ideal::kCOBond, ideal::kCACOAngleDeg * kDeg,
                       wrap_angle(res.psi + std::numbers::pi));
  return atoms;
}

double psi_from_atoms(const Vec3& n, const Vec3& ca, const Vec3& c, const Vec3& o) {
  return wrap_angle(dihedral(n, ca, c, o) - std::numbers::pi);
}

Frame atoms_to_frame(const Vec3& n, const Vec3& ca, const Vec3& c) {
  const Vec3 u = c - ca;
  const Vec3 v = n - ca;
  const double area = 0.5 * u.cross(v).norm();
  if (!(area > 1e-6)) {
    std::ostringstream os;
    os << "N, CA, C are collinear (triangle area " << area << " A^2)";
    throw CollinearAtoms(os.str());
  }
  const Vec3 e1 = u.normalized();
  const Vec3 e2 = (v - v.dot(e1) * e1).normalized();
  const Vec3 e3 = e1.cross(e2);
  Mat3 m;
  m.col(0) = e1;
  m.col(1) = e2;
  m.col(2) = e3;
  return Frame{ca, Rotation::unchecked(m)};
}

BackboneChain::BackboneChain(char chain_id, std::vector<ResidueBackbone> residues,
                             std::vector<ResidueId> ids)
    : chain_id_(chain_id), residues_(std::move(residues)), ids_(std::move(ids)) {
  if (residues_.empty()) throw InvalidChain("chain has no residues");
  if (residues_.size() != ids_.size()) {
    throw InvalidChain("residue and id counts differ");
  }
  for (std::size_t i = 1; i < ids_.size(); ++i) {
    if (!(ids_[i - 1] < ids_[i])) {
      std::ostringstream os;
      os << "chain " << chain_id_ << ": residue ids not strictly increasing at "
         << ids_[i].str();
      throw InvalidChain(os.str());
    }
  }
}

Structure::Structure(std::vector<BackboneChain> chains) : chains_(std::move(chains)) { index(); }

void Structure::index() {
  flat_.clear();
  bonds_.clear();
  for (std::size_t c = 0; c < chains_.size(); ++c) {
    const auto& ids = chains_[c].ids();
    for (std::size_t i = 0; i < chains_[c].size(); ++i) {
      if (i > 0 && ids[i].number - ids[i - 1].number <= 1) {
        bonds_.emplace_back(flat_.size() - 1, flat_.size());
      }
      flat_.emplace_back(c, i);
    }
  }
}

const ResidueBackbone& Structure::residue(std::size_t flat) const {
  const auto& [c, i] = flat_.at(flat);
  return chains_[c][i];
}

ResidueBackbone& Structure::residue(std::size_t flat) {
  const auto& [c, i] = flat_.at(flat);
  return chains_[c][i];
}

const ResidueId& Structure::id(std::size_t flat) const {
  const auto& [c, i] = flat_.at(flat);
  return chains_[c].ids()[i];
}

std::vector<Frame> Structure::frames(std::span<const std::size_t> selection) const {
  std::vector<Frame> out;
  out.reserve(selection.size());
  for (std::size_t idx : selection) out.push_back(residue(idx).frame);
  return out;
}

void Structure::set_frames(std::span<const std::size_t> selection, std::span<const Frame> frames) {
  if (selection.size() != frames.size()) {
    throw InvalidChain("selection and frame counts differ");
  }
  for (std::size_t k = 0; k < selection.size(); ++k) residue(selection[k]).frame = frames[k];
}

Frame apply_rigid(const Frame& f, const Rotation& rot, const Vec3& t) {
  return Frame{rot * f.x + t, rot * f.r};
}

BackboneChain apply_rigid(const BackboneChain& chain, const Rotation& rot, const Vec3& t) {
  BackboneChain out = chain;
  for (auto& res : out.residues()) res.frame = apply_rigid(res.frame, rot, t);
  return out;
}

Structure apply_rigid(const Structure& s, const Rotation& rot, const Vec3& t) {
  std::vector<BackboneChain> chains;
  chains.reserve(s.chains().size());
  for (const auto& c : s.chains()) chains.push_back(apply_rigid(c, rot, t));
  return Structure(std::move(chains));
}

}  // namespace loopflow
