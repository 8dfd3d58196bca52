#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "loopflow/commands.hpp"
#include "loopflow/errors.hpp"

using namespace loopflow;

namespace {

// Options every subcommand shares: config file, key=value overrides and the
// most used hyperparameters as named flags.
struct CommonFlags {
  std::string config_file;
  std::vector<std::string> overrides;
  std::vector<std::pair<std::string, std::string>> named;

  void attach(CLI::App* app, const std::vector<std::string>& keys) {
    app->add_option("--config", config_file, "flat key=value config file");
    app->add_option("--set", overrides, "override a config key (key=value), repeatable");
    named.reserve(keys.size());
    for (const std::string& key : keys) {
      named.emplace_back(key, "");
      std::string flag = "--" + key;
      for (char& ch : flag) {
        if (ch == '_') ch = '-';
      }
      app->add_option(flag, named.back().second, "config key " + key);
    }
  }

  RunConfig resolve() const {
    RunConfig cfg;
    if (!config_file.empty()) cfg.apply_file(config_file);
    for (const auto& [key, value] : named) {
      if (!value.empty()) cfg.set(key, value);
    }
    cfg.apply_overrides(overrides);
    return cfg;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"loopflow: energy-guided SE(3) flow matching for CDR backbone refinement"};
  app.require_subcommand(1);

  MakeLoopsOptions loops;
  CommonFlags loops_flags;
  auto* make_loops = app.add_subcommand("make-loops", "write idealized helical loops with random placement");
  make_loops->add_option("--count", loops.count, "number of structures")->capture_default_str();
  make_loops->add_option("--length", loops.length, "residues per structure")->capture_default_str();
  make_loops->add_option("--out", loops.out_dir, "output directory")->required();
  loops_flags.attach(make_loops, {"seed"});

  SynthOptions synth;
  CommonFlags synth_flags;
  auto* synth_cmd = app.add_subcommand("synth", "perturb CDR frames of target structures into priors");
  synth_cmd->add_option("--targets", synth.targets, "target PDB files or directories")->required();
  synth_cmd->add_option("--cdr", synth.cdrs, "CDR range such as H:95-102, repeatable")->required();
  synth_cmd->add_option("--out", synth.out_dir, "output directory")->required();
  synth_flags.attach(synth_cmd, {"sigma_x", "sigma_r", "seed"});

  TrainOptions train_opt;
  CommonFlags train_flags;
  auto* train_cmd = app.add_subcommand("train", "train the vector field on a manifest of pairs");
  train_cmd->add_option("--manifest", train_opt.manifest, "manifest.json")->required();
  train_cmd->add_option("--out", train_opt.out_checkpoint, "checkpoint path")->required();
  train_cmd->add_option("--loss-csv", train_opt.loss_csv, "per-epoch loss CSV");
  train_flags.attach(train_cmd, {"epochs", "lr", "batch_size", "lambda", "gamma", "loss", "aux_loss",
                                 "standpoint", "hidden", "rounds", "seed"});

  RefineOptions refine_opt;
  CommonFlags refine_flags;
  auto* refine_cmd = app.add_subcommand("refine", "refine CDR loops of one prior or a whole manifest");
  auto* prior_opt = refine_cmd->add_option("--prior", refine_opt.prior, "prior PDB");
  auto* manifest_opt = refine_cmd->add_option("--manifest", refine_opt.manifest, "refine every prior listed");
  prior_opt->excludes(manifest_opt);
  refine_cmd->add_option("--checkpoint", refine_opt.checkpoint, "model checkpoint")->required();
  refine_cmd->add_option("--cdr", refine_opt.cdrs, "CDR range such as H:95-102, repeatable");
  refine_cmd->add_option("--out", refine_opt.out, "output PDB, or directory with --manifest")->required();
  refine_cmd->add_option("--trace", refine_opt.trace_csv, "per-step trace CSV");
  refine_cmd->add_option("--jobs", refine_opt.jobs, "parallel structures")->capture_default_str();
  refine_flags.attach(refine_cmd, {"steps", "beta", "g_sq", "annealing", "zeta", "gamma",
                                   "guidance_schedule", "standpoint", "seed"});

  EvalOptions eval_opt;
  CommonFlags eval_flags;
  auto* eval_cmd = app.add_subcommand("eval", "direct-RMSD metrics of refined structures");
  eval_cmd->add_option("--manifest", eval_opt.manifest, "manifest.json")->required();
  eval_cmd->add_option("--refined", eval_opt.refined_dir, "directory of refined PDBs")->required();
  eval_cmd->add_option("--out", eval_opt.out_csv, "metrics CSV")->required();
  eval_cmd->add_option("--jobs", eval_opt.jobs, "parallel structures")->capture_default_str();
  eval_flags.attach(eval_cmd, {});

  GradcheckOptions grad_opt;
  CommonFlags grad_flags;
  std::string fault;
  auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference check of energy and model gradients");
  grad_cmd->add_option("--chains", grad_opt.chains, "random chains to check")->capture_default_str();
  grad_cmd->add_option("--inject-fault", fault, "corrupt one energy term's gradient (testing)");
  grad_flags.attach(grad_cmd, {"seed"});

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? exit_code::kOk : exit_code::kInputError;
  }

  try {
    if (*make_loops) {
      loops.config = loops_flags.resolve();
      return cmd_make_loops(loops, std::cout);
    }
    if (*synth_cmd) {
      synth.config = synth_flags.resolve();
      return cmd_synth(synth, std::cout);
    }
    if (*train_cmd) {
      train_opt.config = train_flags.resolve();
      return cmd_train(train_opt, std::cout);
    }
    if (*refine_cmd) {
      if (refine_opt.prior.empty() && refine_opt.manifest.empty()) {
        std::cerr << "error: refine needs --prior or --manifest\n";
        return exit_code::kInputError;
      }
      refine_opt.config = refine_flags.resolve();
      return cmd_refine(refine_opt, std::cout);
    }
    if (*eval_cmd) {
      eval_opt.config = eval_flags.resolve();
      return cmd_eval(eval_opt, std::cout);
    }
    if (*grad_cmd) {
      grad_opt.config = grad_flags.resolve();
      if (!fault.empty()) grad_opt.inject_fault = fault;
      return cmd_gradcheck(grad_opt, std::cout);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code::kInputError;
  }
  return exit_code::kInputError;
}
