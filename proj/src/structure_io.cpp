#include "loopflow/structure_io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>

#include "loopflow/errors.hpp"

namespace loopflow {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::string_view column(std::string_view line, std::size_t first, std::size_t last) {
  // 1-based inclusive PDB columns.
  if (line.size() < first) return {};
  return line.substr(first - 1, std::min(last, line.size()) - first + 1);
}

bool parse_int(std::string_view s, int& out) {
  s = trim(s);
  if (s.empty()) return false;
  if (s.front() == '+') s.remove_prefix(1);
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && p == s.data() + s.size();
}

bool parse_double(std::string_view s, double& out) {
  s = trim(s);
  if (s.empty()) return false;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && p == s.data() + s.size() && std::isfinite(out);
}

ResidueId parse_residue_id(std::string_view text, std::string_view whole) {
  text = trim(text);
  ResidueId id;
  std::size_t end = 0;
  if (end < text.size() && (text[end] == '-' || text[end] == '+')) ++end;
  while (end < text.size() && std::isdigit(static_cast<unsigned char>(text[end]))) ++end;
  if (!parse_int(text.substr(0, end), id.number)) {
    throw ConfigError("bad residue number in selection '" + std::string(whole) + "'");
  }
  if (end + 1 == text.size() && std::isalpha(static_cast<unsigned char>(text[end]))) {
    id.icode = text[end];
  } else if (end != text.size()) {
    throw ConfigError("bad residue id in selection '" + std::string(whole) + "'");
  }
  return id;
}

struct PendingResidue {
  ResidueId id;
  std::string resname;
  std::optional<Vec3> n, ca, c, o;
};

}  // namespace

std::string CdrSelection::str() const {
  std::string s(1, chain);
  s += ":" + start.str() + "-" + end.str();
  return s;
}

CdrSelection parse_selection(std::string_view spec) {
  const std::string_view whole = spec;
  spec = trim(spec);
  const auto colon = spec.find(':');
  if (colon != 1) throw ConfigError("selection must look like H:95-102, got '" + std::string(whole) + "'");
  CdrSelection sel;
  sel.chain = spec[0];
  const std::string_view range = spec.substr(2);
  // The separator is the first '-' after the start number (which may itself be negative).
  const auto dash = range.find('-', range.empty() || range[0] != '-' ? 0 : 1);
  if (dash == std::string_view::npos) {
    throw ConfigError("selection must look like H:95-102, got '" + std::string(whole) + "'");
  }
  sel.start = parse_residue_id(range.substr(0, dash), whole);
  sel.end = parse_residue_id(range.substr(dash + 1), whole);
  if (sel.end < sel.start) throw ConfigError("selection end precedes start: '" + std::string(whole) + "'");
  return sel;
}

std::vector<CdrSelection> parse_selections(std::span<const std::string> specs) {
  std::vector<CdrSelection> out;
  for (const auto& s : specs) out.push_back(parse_selection(s));
  return out;
}

std::vector<std::size_t> resolve_selection(const Structure& s, std::span<const CdrSelection> sel) {
  std::vector<std::size_t> out;
  for (const CdrSelection& range : sel) {
    bool chain_found = false;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (s.chains()[s.chain_of(i)].chain_id() != range.chain) continue;
      chain_found = true;
      const ResidueId& id = s.id(i);
      if (!(id < range.start) && !(range.end < id)) {
        out.push_back(i);
        ++hits;
      }
    }
    if (!chain_found) throw SelectionMismatch("selection " + range.str() + ": no such chain");
    if (hits == 0) throw SelectionMismatch("selection " + range.str() + " covers no residues");
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

namespace {

void require_same_layout(const Structure& a, const Structure& b) {
  if (a.chains().size() != b.chains().size()) throw SelectionMismatch("chain counts differ");
  for (std::size_t c = 0; c < a.chains().size(); ++c) {
    const auto& ca = a.chains()[c];
    const auto& cb = b.chains()[c];
    if (ca.chain_id() != cb.chain_id() || ca.ids() != cb.ids()) {
      throw SelectionMismatch(std::string("chain ") + ca.chain_id() +
                              ": residue numbering differs between structures");
    }
  }
}

}  // namespace

std::vector<std::size_t> RefinementProblem::selection() const {
  if (target) require_same_layout(prior, *target);
  return resolve_selection(prior, selections);
}

Structure parse_pdb_backbone(std::string_view text) {
  std::vector<char> chain_order;
  std::map<char, std::vector<PendingResidue>> by_chain;
  std::size_t line_no = 0;
  bool any_atom = false;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.substr(0, 6) != "ATOM  ") continue;
    any_atom = true;
    if (line.size() < 54) {
      throw MalformedRecord("line " + std::to_string(line_no) + ": ATOM record shorter than 54 columns");
    }
    const char altloc = line[16];
    if (altloc != ' ' && altloc != 'A') continue;
    const std::string_view name = trim(column(line, 13, 16));
    if (name != "N" && name != "CA" && name != "C" && name != "O") continue;
    ResidueId id;
    Vec3 xyz;
    if (!parse_int(column(line, 23, 26), id.number) || !parse_double(column(line, 31, 38), xyz.x()) ||
        !parse_double(column(line, 39, 46), xyz.y()) || !parse_double(column(line, 47, 54), xyz.z())) {
      throw MalformedRecord("line " + std::to_string(line_no) + ": cannot parse residue number or coordinates");
    }
    id.icode = line[26];
    const char chain = line[21];
    auto [it, inserted] = by_chain.try_emplace(chain);
    if (inserted) chain_order.push_back(chain);
    auto& residues = it->second;
    if (residues.empty() || residues.back().id != id) {
      residues.push_back(PendingResidue{id, std::string(trim(column(line, 18, 20))), {}, {}, {}, {}});
    }
    PendingResidue& res = residues.back();
    std::optional<Vec3>* slot = name == "N" ? &res.n : name == "CA" ? &res.ca : name == "C" ? &res.c : &res.o;
    if (!slot->has_value()) *slot = xyz;
  }
  if (!any_atom) throw EmptyInput("no ATOM records in input");

  std::vector<BackboneChain> chains;
  for (char chain_id : chain_order) {
    const auto& pending = by_chain[chain_id];
    std::vector<ResidueBackbone> residues;
    std::vector<ResidueId> ids;
    for (const PendingResidue& p : pending) {
      if (!p.n || !p.ca || !p.c) {
        std::ostringstream os;
        os << "chain " << chain_id << " residue " << p.id.str() << " lacks one of N/CA/C";
        throw MissingBackboneAtom(os.str());
      }
      ResidueBackbone res;
      res.frame = atoms_to_frame(*p.n, *p.ca, *p.c);
      res.psi = p.o ? psi_from_atoms(*p.n, *p.ca, *p.c, *p.o) : ideal::kDefaultPsiDeg * kDeg;
      res.restype = amino_acid_from_code(p.resname);
      residues.push_back(res);
      ids.push_back(p.id);
    }
    try {
      chains.emplace_back(chain_id, std::move(residues), std::move(ids));
    } catch (const InvalidChain& e) {
      throw MalformedRecord(e.what());
    }
  }
  return Structure(std::move(chains));
}

std::string write_pdb_backbone(const Structure& s) {
  std::string out;
  char buf[96];
  int serial = 1;
  for (const BackboneChain& chain : s.chains()) {
    for (std::size_t i = 0; i < chain.size(); ++i) {
      const ResidueBackbone& res = chain[i];
      const ResidueId& id = chain.ids()[i];
      const BackboneAtoms atoms = frame_to_atoms(res);
      const std::string_view resname = amino_acid_code(res.restype);
      const std::array<std::pair<const char*, const Vec3*>, 4> entries = {
          {{" N  ", &atoms.n}, {" CA ", &atoms.ca}, {" C  ", &atoms.c}, {" O  ", &atoms.o}}};
      for (const auto& [name, p] : entries) {
        const char element = name[1];
        std::snprintf(buf, sizeof(buf),
                      "ATOM  %5d %4s %3.3s %c%4d%c   %8.3f%8.3f%8.3f%6.2f%6.2f          %2c  \n",
                      serial % 100000, name, resname.data(), chain.chain_id(), id.number, id.icode,
                      p->x(), p->y(), p->z(), 1.0, 0.0, element);
        out += buf;
        ++serial;
      }
    }
    const ResidueId& last = chain.ids().back();
    std::snprintf(buf, sizeof(buf), "TER   %5d      %3.3s %c%4d%c\n", serial % 100000,
                  amino_acid_code(chain.residues().back().restype).data(), chain.chain_id(),
                  last.number, last.icode);
    out += buf;
    ++serial;
  }
  out += "END\n";
  return out;
}

Structure read_pdb_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw EmptyInput("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_pdb_backbone(ss.str());
}

void write_pdb_file(const Structure& s, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw EmptyInput("cannot open " + path + " for writing");
  out << write_pdb_backbone(s);
}

double rmsd_backbone(const Structure& a, const Structure& b, std::span<const std::size_t> selection) {
  require_same_layout(a, b);
  if (selection.empty()) throw SelectionMismatch("empty selection");
  double sum = 0.0;
  for (std::size_t idx : selection) {
    if (idx >= a.size()) throw SelectionMismatch("selection index out of range");
    const BackboneAtoms pa = frame_to_atoms(a.residue(idx));
    const BackboneAtoms pb = frame_to_atoms(b.residue(idx));
    sum += (pa.n - pb.n).squaredNorm() + (pa.ca - pb.ca).squaredNorm() +
           (pa.c - pb.c).squaredNorm() + (pa.o - pb.o).squaredNorm();
  }
  return std::sqrt(sum / (4.0 * static_cast<double>(selection.size())));
}

Structure synth_prior(const Structure& target, std::span<const std::size_t> selection,
                      const NoiseSpec& noise, Rng& rng) {
  Structure prior = target;
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t idx : selection) {
    Frame& f = prior.residue(idx).frame;
    Vec3 dx;
    for (int k = 0; k < 3; ++k) dx[k] = noise.sigma_x * normal(rng);
    Vec3 dr;
    for (int k = 0; k < 3; ++k) dr[k] = noise.sigma_r * normal(rng);
    f.x += dx;
    f.r = f.r * exp_rotvec(dr);
  }
  return prior;
}

BackboneChain build_backbone(int length, char chain_id, const HelixGeometry& geom,
                             std::span<const AminoAcid> sequence) {
  if (length < 1) throw InvalidChain("backbone length must be positive");
  const double n_ca = ideal::kN.norm();
  const double ca_c = ideal::kC.norm();
  const double n_ca_c = std::acos(ideal::kN.dot(ideal::kC) / (n_ca * ca_c));

  std::vector<ResidueBackbone> residues;
  std::vector<ResidueId> ids;
  Vec3 n = ideal::kN;
  Vec3 ca = ideal::kCA;
  Vec3 c = ideal::kC;
  for (int i = 0; i < length; ++i) {
    if (i > 0) {
      const Vec3 n_next =
          place_atom(n, ca, c, geom.c_n_bond, geom.ca_c_n_angle_deg * kDeg, geom.psi_deg * kDeg);
      const Vec3 ca_next =
          place_atom(ca, c, n_next, n_ca, geom.c_n_ca_angle_deg * kDeg, geom.omega_deg * kDeg);
      const Vec3 c_next = place_atom(c, n_next, ca_next, ca_c, n_ca_c, geom.phi_deg * kDeg);
      n = n_next;
      ca = ca_next;
      c = c_next;
    }
    ResidueBackbone res;
    res.frame = atoms_to_frame(n, ca, c);
    res.psi = geom.psi_deg * kDeg;
    res.restype = static_cast<std::size_t>(i) < sequence.size() ? sequence[i] : AminoAcid::ALA;
    residues.push_back(res);
    ids.push_back(ResidueId{i + 1, ' '});
  }
  return BackboneChain(chain_id, std::move(residues), std::move(ids));
}

Rotation random_rotation(Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::Quaterniond q(normal(rng), normal(rng), normal(rng), normal(rng));
  q.normalize();
  return Rotation::unchecked(q.toRotationMatrix());
}

Structure random_helix_loop(int length, Rng& rng, char chain_id) {
  std::uniform_int_distribution<int> aa(0, kNumAminoAcidTypes - 2);
  std::vector<AminoAcid> seq;
  for (int i = 0; i < length; ++i) seq.push_back(static_cast<AminoAcid>(aa(rng)));
  const BackboneChain chain = build_backbone(length, chain_id, HelixGeometry{}, seq);
  const Rotation rot = random_rotation(rng);
  std::uniform_real_distribution<double> shift(-20.0, 20.0);
  const Vec3 t(shift(rng), shift(rng), shift(rng));
  return Structure({apply_rigid(chain, rot, t)});
}

double peptide_bond_error(const Structure& s, std::span<const std::size_t> selection, double d0) {
  std::vector<char> selected(s.size(), 0);
  for (std::size_t idx : selection) selected.at(idx) = 1;
  double sum = 0.0;
  std::size_t count = 0;
  for (const auto& [i, j] : s.bonded_pairs()) {
    if (!selected[i] && !selected[j]) continue;
    const Vec3 c = frame_atom(s.residue(i).frame, ideal::kC);
    const Vec3 n = frame_atom(s.residue(j).frame, ideal::kN);
    sum += std::abs((c - n).norm() - d0);
    ++count;
  }
  return count ? sum / static_cast<double>(count) : 0.0;
}

}  // namespace loopflow
