#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "loopflow/config.hpp"
#include "loopflow/structure_io.hpp"

namespace loopflow {

namespace exit_code {
inline constexpr int kOk = 0;
inline constexpr int kVerificationFailed = 1;
inline constexpr int kInputError = 2;
}  // namespace exit_code

struct ManifestPair {
  std::string target;  // resolved paths
  std::string prior;
  std::vector<std::string> selections;
};

struct Manifest {
  std::vector<ManifestPair> pairs;
  NoiseSpec noise;
};

/// Paths in the file are relative to the manifest's directory.
Manifest read_manifest(const std::string& path);

/// Loads a manifest entry; throws on parse errors or mismatched layouts.
RefinementProblem load_pair(const ManifestPair& pair);

struct MakeLoopsOptions {
  int count = 200;
  int length = 10;
  std::string out_dir;
  RunConfig config;
};
/// Writes `count` ideal helices with random placement and sequence.
int cmd_make_loops(const MakeLoopsOptions& opt, std::ostream& log);

struct SynthOptions {
  std::vector<std::string> targets;  // PDB files or directories of them
  std::vector<std::string> cdrs;
  std::string out_dir;
  RunConfig config;
};
/// One prior per target (same file name, in out_dir) plus manifest.json.
int cmd_synth(const SynthOptions& opt, std::ostream& log);

struct TrainOptions {
  std::string manifest;
  std::string out_checkpoint;
  std::string loss_csv;  // defaults to <checkpoint>.loss.csv
  RunConfig config;
};
int cmd_train(const TrainOptions& opt, std::ostream& log);

struct RefineOptions {
  std::string prior;     // single structure mode
  std::string manifest;  // batch mode: every prior of the manifest
  std::string checkpoint;
  std::vector<std::string> cdrs;  // single mode only
  std::string out;                // PDB (single) or directory (batch)
  std::string trace_csv;          // single mode only
  int jobs = 1;
  RunConfig config;
};
int cmd_refine(const RefineOptions& opt, std::ostream& log);

struct MetricsRow {
  std::string structure;
  std::string cdr;
  bool ok = false;
  std::string error;
  double prior_rmsd = 0.0;
  double refined_rmsd = 0.0;
  double improvement_pct = 0.0;
  double final_energy = 0.0;
  double wall_time_s = 0.0;
};

struct EvalSummary {
  std::size_t rows = 0;
  std::size_t failed = 0;
  double mean_prior_rmsd = 0.0;
  double mean_refined_rmsd = 0.0;
  double mean_improvement_pct = 0.0;
};

/// Rows for every (pair, selection), refined structures looked up by the
/// prior's file name inside `refined_dir`.
std::vector<MetricsRow> evaluate(const Manifest& manifest, const std::string& refined_dir,
                                 const EnergyParams& energy, int jobs = 1);
EvalSummary summarize(const std::vector<MetricsRow>& rows);

struct EvalOptions {
  std::string manifest;
  std::string refined_dir;
  std::string out_csv;
  int jobs = 1;
  RunConfig config;
};
int cmd_eval(const EvalOptions& opt, std::ostream& log);

struct GradcheckOptions {
  int chains = 20;
  /// Corrupts the analytic gradient of the named term ("CA_CA", "C_N",
  /// "CA_N", "C_CA") to exercise the failure path.
  std::optional<std::string> inject_fault;
  RunConfig config;
};
int cmd_gradcheck(const GradcheckOptions& opt, std::ostream& log);

/// "# key=value" lines echoing the resolved configuration.
std::string config_comment_block(const RunConfig& config);

}  // namespace loopflow
