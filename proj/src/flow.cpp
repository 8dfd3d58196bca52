#include "loopflow/flow.hpp"

#include <cmath>
#include <sstream>

#include "loopflow/errors.hpp"

namespace loopflow {

namespace {

void require_same_length(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    std::ostringstream os;
    os << what << ": lengths differ (" << a << " vs " << b << ")";
    throw LengthMismatch(os.str());
  }
}

}  // namespace

FlowState interpolate(std::span<const Frame> prior, std::span<const Frame> target, double t) {
  require_same_length(prior.size(), target.size(), "interpolate");
  FlowState state;
  state.t = t;
  state.frames.reserve(prior.size());
  for (std::size_t i = 0; i < prior.size(); ++i) {
    Frame f;
    f.x = (1.0 - t) * prior[i].x + t * target[i].x;
    f.r = geodesic_interp(prior[i].r, target[i].r, t);
    state.frames.push_back(f);
  }
  return state;
}

FlowState noisy_interpolate(std::span<const Frame> prior, std::span<const Frame> target, double t,
                            double gamma_x, double gamma_r, Rng& rng) {
  FlowState state = interpolate(prior, target, t);
  const double bridge = t * (1.0 - t);
  const double var_x = gamma_x * gamma_x * bridge;
  const double var_r = gamma_r * gamma_r * bridge;
  if (var_x == 0.0 && var_r == 0.0) return state;
  std::normal_distribution<double> normal(0.0, 1.0);
  const double sd_x = std::sqrt(var_x);
  for (auto& f : state.frames) {
    if (var_x > 0.0) {
      for (int k = 0; k < 3; ++k) f.x[k] += sd_x * normal(rng);
    }
    f.r = sample_rotation_noise(f.r, var_r, rng);
  }
  return state;
}

VectorFieldSample conditional_vf(const FlowState& state, std::span<const Frame> target,
                                 double eps_t) {
  require_same_length(state.frames.size(), target.size(), "conditional_vf");
  const double remaining = 1.0 - state.t;
  if (remaining < eps_t) {
    std::ostringstream os;
    os << "conditional field requested at t=" << state.t;
    throw TimeTooClose(os.str());
  }
  VectorFieldSample out;
  out.v_x.reserve(target.size());
  out.v_r.reserve(target.size());
  for (std::size_t i = 0; i < target.size(); ++i) {
    out.v_x.push_back((target[i].x - state.frames[i].x) / remaining);
    out.v_r.push_back(so3_conditional_vf(state.frames[i].r, target[i].r, state.t, eps_t).v);
  }
  return out;
}

FmLoss fm_loss(const VectorFieldSample& pred, const VectorFieldSample& target) {
  require_same_length(pred.v_x.size(), target.v_x.size(), "fm_loss");
  require_same_length(pred.v_r.size(), target.v_r.size(), "fm_loss");
  require_same_length(pred.v_x.size(), pred.v_r.size(), "fm_loss");
  FmLoss out;
  const std::size_t n = pred.v_x.size();
  if (n == 0) return out;
  for (std::size_t i = 0; i < n; ++i) {
    out.loss_r3 += (pred.v_x[i] - target.v_x[i]).squaredNorm();
    const double rn = rotation_metric_norm(Vec3(pred.v_r[i] - target.v_r[i]));
    out.loss_so3 += rn * rn;
  }
  out.loss_r3 /= static_cast<double>(n);
  out.loss_so3 /= static_cast<double>(n);
  return out;
}

Aux2dGradient aux_2d_loss_grad(std::span<const HeavyAtoms> pred, std::span<const HeavyAtoms> truth,
                               AuxLossMode mode) {
  require_same_length(pred.size(), truth.size(), "aux_2d_loss");
  const std::size_t n_res = pred.size();
  Aux2dGradient out;
  out.grad.assign(n_res, HeavyAtoms{Vec3::Zero(), Vec3::Zero(), Vec3::Zero()});

  if (mode == AuxLossMode::AdjacentCa) {
    if (n_res < 2) throw MaskDegenerate("adjacent C-alpha loss needs at least two residues");
    double sum = 0.0;
    std::vector<Vec3> diffs(n_res - 1);
    for (std::size_t i = 0; i + 1 < n_res; ++i) {
      const Vec3 d_true = truth[i][1] - truth[i + 1][1];
      const Vec3 d_pred = pred[i][1] - pred[i + 1][1];
      diffs[i] = d_true - d_pred;
      sum += diffs[i].squaredNorm();
    }
    const double denom = static_cast<double>(n_res - 1);
    const double norm = std::sqrt(sum);
    out.loss = norm / denom;
    if (norm > 0.0) {
      for (std::size_t i = 0; i + 1 < n_res; ++i) {
        const Vec3 g = -diffs[i] / (norm * denom);  // dL/d(d_pred)
        out.grad[i][1] += g;
        out.grad[i + 1][1] -= g;
      }
    }
    return out;
  }

  const std::size_t n_atoms = 3 * n_res;
  auto atom = [](std::span<const HeavyAtoms> s, std::size_t a) -> const Vec3& {
    return s[a / 3][a % 3];
  };
  struct Entry {
    std::size_t a, b;
    double residual;  // D_true - D_pred
    Vec3 unit_pred;
  };
  std::vector<Entry> masked;
  double sum = 0.0;
  for (std::size_t a = 0; a < n_atoms; ++a) {
    for (std::size_t b = a + 1; b < n_atoms; ++b) {
      const double d_true = (atom(truth, a) - atom(truth, b)).norm();
      if (!(d_true < kAuxDistanceCutoff)) continue;
      const Vec3 dp = atom(pred, a) - atom(pred, b);
      const double d_pred = dp.norm();
      const double residual = d_true - d_pred;
      sum += residual * residual;
      masked.push_back({a, b, residual, d_pred > 0.0 ? Vec3(dp / d_pred) : Vec3::Zero()});
    }
  }
  if (masked.size() <= n_res) {
    std::ostringstream os;
    os << "mask count " << masked.size() << " does not exceed residue count " << n_res;
    throw MaskDegenerate(os.str());
  }
  const double denom = static_cast<double>(masked.size() - n_res);
  const double norm = std::sqrt(sum);
  out.loss = norm / denom;
  if (norm > 0.0) {
    for (const Entry& e : masked) {
      // dL/dD_pred = -(residual) / (norm * denom); dD_pred/dp_a = unit.
      const Vec3 g = (-e.residual / (norm * denom)) * e.unit_pred;
      out.grad[e.a / 3][e.a % 3] += g;
      out.grad[e.b / 3][e.b % 3] -= g;
    }
  }
  return out;
}

double aux_2d_loss(std::span<const HeavyAtoms> pred, std::span<const HeavyAtoms> truth,
                   AuxLossMode mode) {
  return aux_2d_loss_grad(pred, truth, mode).loss;
}

LossBreakdown full_loss(const VectorFieldSample& pred, const VectorFieldSample& target,
                        std::span<const HeavyAtoms> pred_atoms,
                        std::span<const HeavyAtoms> true_atoms, double t, double lambda,
                        AuxLossMode mode) {
  const FmLoss fm = fm_loss(pred, target);
  LossBreakdown out;
  out.loss_r3 = fm.loss_r3;
  out.loss_so3 = fm.loss_so3;
  out.loss_2d = aux_2d_loss(pred_atoms, true_atoms, mode);
  out.total = out.loss_r3 + out.loss_so3 + (t > 0.5 ? lambda * out.loss_2d : 0.0);
  return out;
}

RegressionLoss regression_losses(std::span<const Vec3> pred_x1, std::span<const Rotation> pred_r1,
                                 std::span<const Vec3> true_x1, std::span<const Rotation> true_r1) {
  require_same_length(pred_x1.size(), true_x1.size(), "regression_losses");
  require_same_length(pred_r1.size(), true_r1.size(), "regression_losses");
  RegressionLoss out;
  if (!pred_x1.empty()) {
    for (std::size_t i = 0; i < pred_x1.size(); ++i) out.loss_x += (pred_x1[i] - true_x1[i]).norm();
    out.loss_x /= static_cast<double>(pred_x1.size());
  }
  if (!pred_r1.empty()) {
    for (std::size_t i = 0; i < pred_r1.size(); ++i) {
      const Mat3& a = pred_r1[i].matrix();
      const Mat3& b = true_r1[i].matrix();
      const double cos_sim = a.cwiseProduct(b).sum() / (a.norm() * b.norm());
      out.loss_r += 1.0 - cos_sim;
    }
    out.loss_r /= static_cast<double>(pred_r1.size());
  }
  return out;
}

HeavyAtoms heavy_atoms(const Frame& f) {
  return HeavyAtoms{frame_atom(f, ideal::kN), f.x, frame_atom(f, ideal::kC)};
}

std::vector<HeavyAtoms> heavy_atoms(const Structure& s) {
  std::vector<HeavyAtoms> out;
  out.reserve(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) out.push_back(heavy_atoms(s.residue(i).frame));
  return out;
}

}  // namespace loopflow
