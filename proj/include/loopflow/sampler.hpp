#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "loopflow/energy.hpp"
#include "loopflow/flow.hpp"
#include "loopflow/model.hpp"
#include "loopflow/structure_io.hpp"

namespace loopflow {

enum class GuidanceSchedule { Constant, Dt };
enum class Standpoint { Prior, State };

struct SamplerConfig {
  int steps = 2;
  double guidance_scale_sq = 1.0;  // g(t)^2
  double beta = 0.1;
  double annealing = 1.0;          // i(t), rotations only
  double zeta = 0.0;               // SDE noise scale
  double gamma = 0.0;              // SDE diffusion constant
  std::uint64_t seed = 0;
  double eps_t = kDefaultTimeEps;
  GuidanceSchedule schedule = GuidanceSchedule::Constant;
  Standpoint standpoint = Standpoint::Prior;

  /// Throws ConfigError.
  void validate() const;
  double g_sq(double dt) const { return schedule == GuidanceSchedule::Dt ? dt : guidance_scale_sq; }
};

/// Unconditional velocity at `state` for the selected residues of `current`
/// (which already carries the state frames).
using VectorField = std::function<VectorFieldSample(
    const Structure& current, std::span<const std::size_t> selection, const FlowState& state)>;

/// The learned field: forward + predicted_vf, standing at `prior` frames
/// (or at the state frames with Standpoint::State).
VectorField model_field(const ModelParams& params, std::vector<Frame> prior,
                        Standpoint standpoint = Standpoint::Prior,
                        double eps_t = kDefaultTimeEps);
/// Zero velocity everywhere; the sampler then follows the guidance alone.
VectorField zero_field();

struct StepTrace {
  int step = 0;
  double t = 0.0;
  double energy = 0.0;
  double mean_vx = 0.0;  // mean |v_x| over refined residues
  double mean_ur = 0.0;  // mean |u_r|
};

/// One explicit Euler step of the guided flow:
///   u_r = v_r - 1/2 g^2 beta proj(grad_r E);  r <- r exp(u_r i dt [+ dB])
///   x   <- x + (v_x - 1/2 g^2 beta grad_x E) dt
/// `base` supplies the context residues; only the selected frames change.
/// `brownian`, when given, holds one rotation-vector increment per residue.
FlowState refine_step(const FlowState& state, const Structure& base,
                      std::span<const std::size_t> selection, const VectorField& field,
                      const EnergyParams& energy, const SamplerConfig& cfg, double t, double dt,
                      std::span<const Vec3> brownian = {}, StepTrace* trace = nullptr);

struct RefineResult {
  Structure refined;
  std::vector<StepTrace> trace;
};

/// Integrates from the prior at t = 0 to t = 1 in cfg.steps steps.
RefineResult refine(const RefinementProblem& problem, const ModelParams& params,
                    const EnergyParams& energy, const SamplerConfig& cfg);
RefineResult refine_with_field(const RefinementProblem& problem, const VectorField& field,
                               const EnergyParams& energy, const SamplerConfig& cfg);

/// As refine, adding zeta * gamma * sqrt(dt) * z rotation increments per
/// residue and step. zeta * gamma == 0 takes exactly the ODE path.
RefineResult refine_sde(const RefinementProblem& problem, const ModelParams& params,
                        const EnergyParams& energy, const SamplerConfig& cfg, Rng& rng);
RefineResult refine_sde_with_field(const RefinementProblem& problem, const VectorField& field,
                                   const EnergyParams& energy, const SamplerConfig& cfg, Rng& rng);

}  // namespace loopflow
