#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "loopflow/flow.hpp"
#include "loopflow/model.hpp"
#include "loopflow/sampler.hpp"

namespace loopflow {

enum class LossKind { FlowMatching, Regression };

struct TrainConfig {
  int epochs = 100;
  int batch_size = 8;
  double lambda = 1.0;
  double gamma = 0.0;  // interpolant noise, positions (A) and rotations (rad)
  double eps_t = kDefaultTimeEps;
  AuxLossMode aux = AuxLossMode::AllPairs;
  LossKind loss = LossKind::FlowMatching;
  Standpoint standpoint = Standpoint::Prior;
  AdamConfig adam;
  std::uint64_t seed = 0;

  /// Throws ConfigError.
  void validate() const;
};

/// A prior/target pair sharing residue layout; only `selection` is learned.
struct TrainingExample {
  Structure prior;
  Structure target;
  std::vector<std::size_t> selection;
};

struct SampleLoss {
  LossBreakdown fm;
  RegressionLoss regression;
  double objective = 0.0;  // what the gradient is taken of
};

/// Loss of one example at time t from a given interpolant state, and (when
/// `grads` is non-null) its parameter gradient added into `grads`.
SampleLoss state_loss(const ModelParams& params, const TrainingExample& ex, const FlowState& state,
                      const TrainConfig& cfg, ModelParams* grads);

/// Draws the interpolant (noisy when cfg.gamma > 0) and evaluates state_loss.
SampleLoss example_loss(const ModelParams& params, const TrainingExample& ex, double t,
                        const TrainConfig& cfg, Rng& rng, ModelParams* grads);

struct EpochStats {
  int epoch = 0;
  double loss_r3 = 0.0;
  double loss_so3 = 0.0;
  double loss_2d = 0.0;
  double total = 0.0;
};

/// Minibatch AdamW over shuffled examples, t ~ U[0, 1 - eps_t] per sample.
/// Deterministic for a given cfg.seed. `on_epoch` sees each epoch's means.
std::vector<EpochStats> train(ModelParams& params, std::span<const TrainingExample> examples,
                              const TrainConfig& cfg,
                              const std::function<void(const EpochStats&)>& on_epoch = {});

std::string loss_csv_header();
std::string loss_csv_row(const EpochStats& s);

struct GradientCheckReport {
  double max_rel_error = 0.0;
  std::string worst;
};

/// Central differences of state_loss against backward() on a small random
/// model and example, over every parameter.
GradientCheckReport model_gradient_check(std::uint64_t seed, double h = 1e-5,
                                         double floor = 1e-4);

}  // namespace loopflow
