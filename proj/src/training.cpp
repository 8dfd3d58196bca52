#include "loopflow/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "loopflow/errors.hpp"
#include "loopflow/structure_io.hpp"

namespace loopflow {

void TrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!std::isfinite(lambda) || lambda < 0) throw ConfigError("lambda must be finite and >= 0");
  if (!std::isfinite(gamma) || gamma < 0) throw ConfigError("gamma must be finite and >= 0");
  if (!(eps_t > 0 && eps_t < 1)) throw ConfigError("eps_t must lie in (0, 1)");
  if (!(adam.lr > 0) || !std::isfinite(adam.lr)) throw ConfigError("lr must be positive");
  if (!(adam.weight_decay >= 0)) throw ConfigError("weight_decay must be >= 0");
}

namespace {

const std::array<Vec3, 3>& ideal_heavy() {
  static const std::array<Vec3, 3> atoms = {ideal::kN, ideal::kCA, ideal::kC};
  return atoms;
}

void accumulate(ModelParams& acc, const ModelParams& g, double scale = 1.0) {
  for_each_tensor([scale](auto& a, const auto& b) { a += scale * b; }, acc, g);
}

}  // namespace

SampleLoss state_loss(const ModelParams& params, const TrainingExample& ex, const FlowState& state,
                      const TrainConfig& cfg, ModelParams* grads) {
  const std::vector<std::size_t>& sel = ex.selection;
  const std::vector<Frame> prior = ex.prior.frames(sel);
  const std::vector<Frame> target = ex.target.frames(sel);
  if (state.frames.size() != sel.size()) throw ShapeMismatch("state/selection size mismatch");

  Structure current = ex.prior;
  current.set_frames(sel, state.frames);
  const Features features = featurize(current, sel, state.t, params.arch.k_neighbors);
  const std::span<const Frame> stand = cfg.standpoint == Standpoint::Prior
                                           ? std::span<const Frame>(prior)
                                           : std::span<const Frame>(state.frames);
  ForwardCache cache;
  const Prediction pred = forward(params, features, stand, grads ? &cache : nullptr);
  const VectorFieldSample vhat = predicted_vf(pred, state, cfg.eps_t);
  const VectorFieldSample vtrue = conditional_vf(state, target, cfg.eps_t);

  const std::size_t n = sel.size();
  std::vector<HeavyAtoms> pred_atoms;
  std::vector<HeavyAtoms> true_atoms;
  for (std::size_t k = 0; k < n; ++k) {
    pred_atoms.push_back(heavy_atoms(Frame{pred.x1[k], pred.r1[k]}));
    true_atoms.push_back(heavy_atoms(target[k]));
  }
  const Aux2dGradient aux = aux_2d_loss_grad(pred_atoms, true_atoms, cfg.aux);
  const FmLoss fm = fm_loss(vhat, vtrue);
  const bool use_aux = state.t > 0.5;

  SampleLoss out;
  out.fm.loss_r3 = fm.loss_r3;
  out.fm.loss_so3 = fm.loss_so3;
  out.fm.loss_2d = aux.loss;
  out.fm.total = fm.loss_r3 + fm.loss_so3 + (use_aux ? cfg.lambda * aux.loss : 0.0);
  out.objective = out.fm.total;

  std::vector<Vec3> true_x;
  std::vector<Rotation> true_r;
  for (const Frame& f : target) {
    true_x.push_back(f.x);
    true_r.push_back(f.r);
  }
  out.regression = regression_losses(pred.x1, pred.r1, true_x, true_r);
  const bool regression = cfg.loss == LossKind::Regression;
  if (regression) out.objective += out.regression.combined();

  if (!grads) return out;

  const double denom = std::max(1.0 - state.t, cfg.eps_t);
  const double inv_n = n ? 1.0 / static_cast<double>(n) : 0.0;
  UpstreamGradient up;
  up.d_x1.assign(n, Vec3::Zero());
  up.d_r1.assign(n, Vec3::Zero());
  for (std::size_t k = 0; k < n; ++k) {
    up.d_x1[k] = (2.0 * inv_n / denom) * (vhat.v_x[k] - vtrue.v_x[k]);
    // v_r = log(r_t^T r1) / denom and log(exp(phi) exp(xi)) ~ phi + J_r^-1(phi) xi.
    const Vec3 phi = vhat.v_r[k] * denom;
    const Vec3 d_phi = (2.0 * inv_n / denom) * (vhat.v_r[k] - vtrue.v_r[k]);
    up.d_r1[k] = right_jacobian_inverse(phi).transpose() * d_phi;

    const Mat3& r1 = pred.r1[k].matrix();
    if (use_aux && cfg.lambda != 0.0) {
      for (int a = 0; a < 3; ++a) {
        const Vec3 g = cfg.lambda * aux.grad[k][a];
        up.d_x1[k] += g;
        up.d_r1[k] += ideal_heavy()[a].cross(r1.transpose() * g);
      }
    }
    if (regression) {
      const Vec3 dx = pred.x1[k] - true_x[k];
      const double norm = dx.norm();
      if (norm > 0.0) up.d_x1[k] += inv_n * dx / norm;
      const Mat3& b = true_r[k].matrix();
      const Mat3 g = (-RegressionLoss::kRotationWeight * inv_n / (r1.norm() * b.norm())) * b;
      up.d_r1[k] += body_tangent_gradient(pred.r1[k], g);
    }
  }
  accumulate(*grads, backward(params, features, cache, up));
  return out;
}

SampleLoss example_loss(const ModelParams& params, const TrainingExample& ex, double t,
                        const TrainConfig& cfg, Rng& rng, ModelParams* grads) {
  const std::vector<Frame> prior = ex.prior.frames(ex.selection);
  const std::vector<Frame> target = ex.target.frames(ex.selection);
  const FlowState state = cfg.gamma > 0.0
                              ? noisy_interpolate(prior, target, t, cfg.gamma, cfg.gamma, rng)
                              : interpolate(prior, target, t);
  return state_loss(params, ex, state, cfg, grads);
}

std::vector<EpochStats> train(ModelParams& params, std::span<const TrainingExample> examples,
                              const TrainConfig& cfg,
                              const std::function<void(const EpochStats&)>& on_epoch) {
  cfg.validate();
  if (examples.empty() && cfg.epochs > 0) throw EmptyInput("no training examples");
  Rng rng(cfg.seed);
  AdamState adam = make_adam_state(params);
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);
  std::uniform_real_distribution<double> draw_t(0.0, 1.0 - cfg.eps_t);
  const auto batch = static_cast<std::size_t>(cfg.batch_size);

  std::vector<EpochStats> history;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    EpochStats stats;
    stats.epoch = epoch;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t stop = std::min(order.size(), start + batch);
      ModelParams grads = params.zeros_like();
      for (std::size_t b = start; b < stop; ++b) {
        const double t = draw_t(rng);
        const SampleLoss l = example_loss(params, examples[order[b]], t, cfg, rng, &grads);
        stats.loss_r3 += l.fm.loss_r3;
        stats.loss_so3 += l.fm.loss_so3;
        stats.loss_2d += l.fm.loss_2d;
        stats.total += l.objective;
      }
      for_each_tensor([s = 1.0 / static_cast<double>(stop - start)](auto& g) { g *= s; }, grads);
      adam_step(params, grads, adam, cfg.adam);
    }
    const double m = 1.0 / static_cast<double>(examples.size());
    stats.loss_r3 *= m;
    stats.loss_so3 *= m;
    stats.loss_2d *= m;
    stats.total *= m;
    history.push_back(stats);
    if (on_epoch) on_epoch(stats);
  }
  return history;
}

std::string loss_csv_header() { return "epoch,loss_r3,loss_so3,loss_2d,total\n"; }

std::string loss_csv_row(const EpochStats& s) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g,%.9g,%.9g\n", s.epoch, s.loss_r3, s.loss_so3,
                s.loss_2d, s.total);
  return buf;
}

namespace {

std::vector<std::string> tensor_names(const Architecture& arch) {
  std::vector<std::string> names = {"encoder.w", "encoder.b"};
  for (int l = 0; l < arch.rounds; ++l) {
    const std::string r = std::to_string(l);
    names.insert(names.end(), {"edge" + r + ".w", "edge" + r + ".b", "node" + r + ".w",
                               "node" + r + ".b"});
  }
  names.insert(names.end(), {"trans_hidden.w", "trans_hidden.b", "trans_out.w", "trans_out.b",
                             "rot_hidden.w", "rot_hidden.b", "rot_out.w", "rot_out.b"});
  return names;
}

}  // namespace

GradientCheckReport model_gradient_check(std::uint64_t seed, double h, double floor) {
  Rng rng(seed);
  const Architecture arch{6, 5, 2, 4};
  ModelParams params = init_params(arch, seed);
  std::normal_distribution<double> normal(0.0, 0.3);
  for_each_tensor(
      [&](auto& t) {
        for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = normal(rng);
      },
      params);

  TrainingExample ex;
  ex.target = random_helix_loop(7, rng);
  ex.selection = {2, 3, 4};
  ex.prior = synth_prior(ex.target, ex.selection, NoiseSpec{1.0, 0.2, seed}, rng);
  TrainConfig cfg;
  cfg.loss = LossKind::Regression;
  const FlowState state = interpolate(ex.prior.frames(ex.selection), ex.target.frames(ex.selection), 0.7);

  ModelParams grads = params.zeros_like();
  state_loss(params, ex, state, cfg, &grads);

  const std::vector<std::string> names = tensor_names(arch);
  GradientCheckReport report;
  std::size_t tensor = 0;
  for_each_tensor(
      [&](auto& p, const auto& g) {
        for (Eigen::Index i = 0; i < p.size(); ++i) {
          const double saved = p.data()[i];
          p.data()[i] = saved + h;
          const double lp = state_loss(params, ex, state, cfg, nullptr).objective;
          p.data()[i] = saved - h;
          const double lm = state_loss(params, ex, state, cfg, nullptr).objective;
          p.data()[i] = saved;
          const double fd = (lp - lm) / (2.0 * h);
          const double an = g.data()[i];
          const double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), floor});
          if (report.worst.empty() || rel > report.max_rel_error) {
            report.max_rel_error = rel;
            report.worst = names[tensor] + "[" + std::to_string(i) + "]";
          }
        }
        ++tensor;
      },
      params, grads);
  return report;
}

}  // namespace loopflow
