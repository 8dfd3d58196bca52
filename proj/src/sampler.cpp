#include "loopflow/sampler.hpp"

#include <cmath>

#include "loopflow/errors.hpp"

namespace loopflow {

void SamplerConfig::validate() const {
  if (steps < 1) throw ConfigError("steps must be >= 1");
  const double scales[] = {guidance_scale_sq, beta, annealing, zeta, gamma, eps_t};
  for (double v : scales) {
    if (!std::isfinite(v)) throw ConfigError("sampler scales must be finite");
  }
  if (guidance_scale_sq < 0 || beta < 0 || zeta < 0 || gamma < 0) {
    throw ConfigError("g_sq, beta, zeta and gamma must be non-negative");
  }
  if (annealing <= 0) throw ConfigError("annealing must be positive");
  if (eps_t <= 0 || eps_t >= 1) throw ConfigError("eps_t must lie in (0, 1)");
}

VectorField model_field(const ModelParams& params, std::vector<Frame> prior, Standpoint standpoint,
                        double eps_t) {
  return [&params, prior = std::move(prior), standpoint, eps_t](
             const Structure& current, std::span<const std::size_t> selection,
             const FlowState& state) {
    const Features features = featurize(current, selection, state.t, params.arch.k_neighbors);
    const std::span<const Frame> stand =
        standpoint == Standpoint::Prior ? std::span<const Frame>(prior) : std::span<const Frame>(state.frames);
    const Prediction pred = forward(params, features, stand);
    return predicted_vf(pred, state, eps_t);
  };
}

VectorField zero_field() {
  return [](const Structure&, std::span<const std::size_t> selection, const FlowState&) {
    VectorFieldSample v;
    v.v_x.assign(selection.size(), Vec3::Zero());
    v.v_r.assign(selection.size(), Vec3::Zero());
    return v;
  };
}

FlowState refine_step(const FlowState& state, const Structure& base,
                      std::span<const std::size_t> selection, const VectorField& field,
                      const EnergyParams& energy, const SamplerConfig& cfg, double t, double dt,
                      std::span<const Vec3> brownian, StepTrace* trace) {
  if (state.frames.size() != selection.size()) throw ShapeMismatch("state/selection size mismatch");
  if (!brownian.empty() && brownian.size() != selection.size()) {
    throw ShapeMismatch("one Brownian increment per refined residue expected");
  }
  Structure current = base;
  current.set_frames(selection, state.frames);

  FlowState in = state;
  in.t = t;
  const VectorFieldSample v = field(current, selection, in);
  if (v.v_x.size() != selection.size() || v.v_r.size() != selection.size()) {
    throw ShapeMismatch("vector field returned the wrong number of residues");
  }

  const double coef = 0.5 * cfg.g_sq(dt) * cfg.beta;
  const bool guided = coef != 0.0;
  GuidanceEnergy e;
  if (guided || trace) e = total_guidance_energy(current, selection, energy);

  FlowState out;
  out.t = t + dt;
  out.frames.resize(selection.size());
  double sum_vx = 0.0;
  double sum_ur = 0.0;
  for (std::size_t a = 0; a < selection.size(); ++a) {
    const Frame& f = state.frames[a];
    const std::size_t idx = selection[a];
    Vec3 u_r = v.v_r[a];
    Vec3 v_x = v.v_x[a];
    if (guided) {
      u_r -= coef * project_rotation_gradient(f.r, e.grads.grad_r[idx]);
      v_x -= coef * e.grads.grad_x[idx];
    }
    Vec3 step = u_r * (cfg.annealing * dt);
    if (!brownian.empty()) step += brownian[a];
    out.frames[a].r = f.r * exp_rotvec(step);
    out.frames[a].x = f.x + v_x * dt;
    sum_vx += v.v_x[a].norm();
    sum_ur += u_r.norm();
  }
  if (trace) {
    const double n = selection.empty() ? 1.0 : static_cast<double>(selection.size());
    trace->t = t;
    trace->energy = e.energy;
    trace->mean_vx = sum_vx / n;
    trace->mean_ur = sum_ur / n;
  }
  return out;
}

namespace {

RefineResult integrate(const RefinementProblem& problem, const VectorField& field,
                       const EnergyParams& energy, const SamplerConfig& cfg, Rng* rng) {
  cfg.validate();
  energy.validate();
  const std::vector<std::size_t> selection = problem.selection();
  const double dt = 1.0 / cfg.steps;
  const double noise = cfg.zeta * cfg.gamma;
  const bool stochastic = rng != nullptr && noise != 0.0;

  FlowState state{0.0, problem.prior.frames(selection)};
  RefineResult result;
  result.trace.reserve(static_cast<std::size_t>(cfg.steps));
  std::vector<Vec3> brownian;
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int s = 0; s < cfg.steps; ++s) {
    const double t = s * dt;
    if (stochastic) {
      const double scale = noise * std::sqrt(dt);
      brownian.resize(selection.size());
      for (Vec3& b : brownian) {
        for (int k = 0; k < 3; ++k) b[k] = scale * normal(*rng);
      }
    }
    StepTrace tr;
    tr.step = s;
    state = refine_step(state, problem.prior, selection, field, energy, cfg, t, dt, brownian, &tr);
    result.trace.push_back(tr);
  }
  result.refined = problem.prior;
  result.refined.set_frames(selection, state.frames);
  return result;
}

}  // namespace

RefineResult refine_with_field(const RefinementProblem& problem, const VectorField& field,
                               const EnergyParams& energy, const SamplerConfig& cfg) {
  return integrate(problem, field, energy, cfg, nullptr);
}

RefineResult refine(const RefinementProblem& problem, const ModelParams& params,
                    const EnergyParams& energy, const SamplerConfig& cfg) {
  const std::vector<std::size_t> selection = problem.selection();
  return refine_with_field(
      problem, model_field(params, problem.prior.frames(selection), cfg.standpoint, cfg.eps_t),
      energy, cfg);
}

RefineResult refine_sde_with_field(const RefinementProblem& problem, const VectorField& field,
                                   const EnergyParams& energy, const SamplerConfig& cfg, Rng& rng) {
  return integrate(problem, field, energy, cfg, &rng);
}

RefineResult refine_sde(const RefinementProblem& problem, const ModelParams& params,
                        const EnergyParams& energy, const SamplerConfig& cfg, Rng& rng) {
  const std::vector<std::size_t> selection = problem.selection();
  return refine_sde_with_field(
      problem, model_field(params, problem.prior.frames(selection), cfg.standpoint, cfg.eps_t),
      energy, cfg, rng);
}

}  // namespace loopflow
