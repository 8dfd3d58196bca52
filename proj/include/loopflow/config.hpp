#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "loopflow/energy.hpp"
#include "loopflow/model.hpp"
#include "loopflow/sampler.hpp"
#include "loopflow/structure_io.hpp"
#include "loopflow/training.hpp"

namespace loopflow {

/// Every tunable of the toolkit. Text form is flat `key = value` lines; `#`
/// starts a comment. Later assignments win, so applying defaults, then the
/// file, then command-line overrides gives CLI > file > default.
struct RunConfig {
  // sampling
  int steps = 2;
  double beta = 0.1;
  double g_sq = 1.0;
  double annealing = 1.0;
  double zeta = 0.0;
  double gamma = 0.0;
  GuidanceSchedule guidance_schedule = GuidanceSchedule::Constant;
  Standpoint standpoint = Standpoint::Prior;
  double eps_t = kDefaultTimeEps;
  // energy
  double k_alpha = 1.0;
  std::array<double, 4> omega{0.5, 0.5, 0.5, 0.5};
  // training
  double lambda = 1.0;
  double lr = 1e-4;
  double weight_decay = 1e-4;
  int epochs = 100;
  int batch_size = 8;
  AuxLossMode aux_loss = AuxLossMode::AllPairs;
  LossKind loss = LossKind::FlowMatching;
  // model
  int hidden = 128;
  int head_hidden = 64;
  int rounds = 2;
  int k_neighbors = 8;
  // synthetic priors
  double sigma_x = 1.0;
  double sigma_r = 0.2;
  std::uint64_t seed = 0;

  /// Throws ConfigError on unknown keys or unparsable values.
  void set(std::string_view key, std::string_view value);
  /// Applies every assignment in `text`. Throws ConfigError naming the line.
  void apply_text(std::string_view text);
  void apply_file(const std::string& path);
  /// Applies "key=value" strings.
  void apply_overrides(const std::vector<std::string>& assignments);

  /// All keys in a fixed order, one `key=value` per line.
  std::string to_text() const;
  /// Same content as (key, value) pairs, for JSON or comment echoes.
  std::vector<std::pair<std::string, std::string>> entries() const;

  SamplerConfig sampler() const;
  EnergyParams energy() const;
  TrainConfig training() const;
  Architecture architecture() const;
  NoiseSpec noise() const;

  /// Validates the derived sampler/energy/training settings.
  void validate() const;
};

/// Shortest decimal text that reads back to the same double.
std::string format_double(double v);

}  // namespace loopflow
