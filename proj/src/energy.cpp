#include "loopflow/energy.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "loopflow/errors.hpp"

namespace loopflow {

std::string_view bond_term_name(BondTerm term) {
  switch (term) {
    case BondTerm::CaCa: return "CA_CA";
    case BondTerm::CN: return "C_N";
    case BondTerm::CaN: return "CA_N";
    case BondTerm::CCa: return "C_CA";
  }
  return "?";
}

double EnergyParams::d0(BondTerm term) const {
  switch (term) {
    case BondTerm::CaCa: return d0_ca_ca;
    case BondTerm::CN: return d0_c_n;
    case BondTerm::CaN: return d0_ca_n;
    case BondTerm::CCa: return d0_c_ca;
  }
  return 0.0;
}

void EnergyParams::validate() const {
  auto bad = [](double v) { return !std::isfinite(v) || v < 0.0; };
  for (BondTerm term : kBondTerms) {
    if (!(d0(term) > 0.0) || !std::isfinite(d0(term))) {
      throw ConfigError("equilibrium distance must be positive: " +
                        std::string(bond_term_name(term)));
    }
    if (bad(weight(term))) throw ConfigError("energy weights must be non-negative");
  }
  if (bad(k_alpha)) throw ConfigError("k_alpha must be non-negative");
  if (!(coincident_eps > 0.0)) throw ConfigError("coincident_eps must be positive");
}

BondEval bond_energy_grad(const Vec3& p_i, const Vec3& p_j, double d0, double k, double eps) {
  const Vec3 diff = p_i - p_j;
  const double d = diff.norm();
  if (d <= eps) {
    std::ostringstream os;
    os << "atoms coincide (d = " << d << " A)";
    throw CoincidentAtoms(os.str());
  }
  const double stretch = d - d0;
  BondEval out;
  out.energy = k * stretch * stretch;
  out.grad_i = (2.0 * k * stretch / d) * diff;
  out.grad_j = -out.grad_i;
  return out;
}

PairTermEval pair_term_energy_grad(const ResidueBackbone& res_i, const ResidueBackbone& res_j,
                                   BondTerm term, const EnergyParams& params) {
  const Frame& fi = res_i.frame;
  const Frame& fj = res_j.frame;
  // Local coordinates of the atom used on each side; nullptr means C-alpha,
  // which does not move with the rotation.
  const Vec3* local_i = nullptr;
  const Vec3* local_j = nullptr;
  switch (term) {
    case BondTerm::CaCa: break;
    case BondTerm::CN: local_i = &ideal::kC; local_j = &ideal::kN; break;
    case BondTerm::CaN: local_j = &ideal::kN; break;
    case BondTerm::CCa: local_i = &ideal::kC; break;
  }
  const Vec3 yi = local_i ? frame_atom(fi, *local_i) : fi.x;
  const Vec3 yj = local_j ? frame_atom(fj, *local_j) : fj.x;
  const BondEval bond =
      bond_energy_grad(yi, yj, params.d0(term), params.k_alpha, params.coincident_eps);

  PairTermEval out;
  out.energy = bond.energy;
  // y = r y* + x, so dy/dx = I and dE/dr = (dE/dy) y*^T.
  out.grad_xi = bond.grad_i;
  out.grad_xj = bond.grad_j;
  if (local_i) out.grad_ri = bond.grad_i * local_i->transpose();
  if (local_j) out.grad_rj = bond.grad_j * local_j->transpose();
  return out;
}

GuidanceEnergy total_guidance_energy(const Structure& s, std::span<const std::size_t> selection,
                                     const EnergyParams& params) {
  GuidanceEnergy out;
  out.grads.grad_x.assign(s.size(), Vec3::Zero());
  out.grads.grad_r.assign(s.size(), Mat3::Zero());
  std::vector<char> selected(s.size(), 0);
  for (std::size_t idx : selection) selected.at(idx) = 1;

  for (const auto& [i, j] : s.bonded_pairs()) {
    if (!selected[i] && !selected[j]) continue;
    for (BondTerm term : kBondTerms) {
      const double w = params.weight(term);
      if (w == 0.0) continue;
      const PairTermEval e = pair_term_energy_grad(s.residue(i), s.residue(j), term, params);
      out.energy += w * e.energy;
      if (selected[i]) {
        out.grads.grad_x[i] += w * e.grad_xi;
        out.grads.grad_r[i] += w * e.grad_ri;
      }
      if (selected[j]) {
        out.grads.grad_x[j] += w * e.grad_xj;
        out.grads.grad_r[j] += w * e.grad_rj;
      }
    }
  }
  return out;
}

Vec3 project_rotation_gradient(const Rotation& r, const Mat3& grad) {
  const Mat3 a = r.matrix().transpose() * grad;
  return vee(0.5 * (a - a.transpose()));
}

FiniteDifferenceReport finite_difference_check(const Structure& s,
                                               std::span<const std::size_t> selection,
                                               const EnergyParams& params, double h,
                                               double floor,
                                               const std::function<void(EnergyGradient&)>& tamper) {
  GuidanceEnergy analytic = total_guidance_energy(s, selection, params);
  if (tamper) tamper(analytic.grads);

  FiniteDifferenceReport report;
  auto record = [&](double fd, double an, const std::string& what) {
    const double denom = std::max({std::abs(fd), std::abs(an), floor});
    const double rel = std::abs(fd - an) / denom;
    if (report.worst.empty() || rel > report.max_rel_error) {
      report.max_rel_error = rel;
      report.worst = what;
    }
  };
  auto energy_of = [&](const Structure& probe) {
    return total_guidance_energy(probe, selection, params).energy;
  };

  Structure probe = s;
  for (std::size_t idx : selection) {
    const Frame original = s.residue(idx).frame;
    for (int k = 0; k < 3; ++k) {
      probe.residue(idx).frame.x = original.x + h * Vec3::Unit(k);
      const double ep = energy_of(probe);
      probe.residue(idx).frame.x = original.x - h * Vec3::Unit(k);
      const double em = energy_of(probe);
      probe.residue(idx).frame = original;
      std::ostringstream what;
      what << "residue " << idx << " x[" << k << "]";
      record((ep - em) / (2.0 * h), analytic.grads.grad_x[idx][k], what.str());
    }
    const Vec3 tangent =
        2.0 * project_rotation_gradient(original.r, analytic.grads.grad_r[idx]);
    for (int k = 0; k < 3; ++k) {
      probe.residue(idx).frame.r = original.r * exp_rotvec(h * Vec3::Unit(k));
      const double ep = energy_of(probe);
      probe.residue(idx).frame.r = original.r * exp_rotvec(-h * Vec3::Unit(k));
      const double em = energy_of(probe);
      probe.residue(idx).frame = original;
      std::ostringstream what;
      what << "residue " << idx << " r[" << k << "]";
      record((ep - em) / (2.0 * h), tangent[k], what.str());
    }
  }
  return report;
}

}  // namespace loopflow
