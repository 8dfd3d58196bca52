#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "loopflow/commands.hpp"

using namespace loopflow;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

RunConfig small_config() {
  RunConfig c;
  c.apply_overrides({"hidden=8", "head_hidden=4", "epochs=2", "batch_size=2", "seed=3"});
  return c;
}

}  // namespace

TEST_CASE("config comment block") {
  const std::string block = config_comment_block(RunConfig{});
  CHECK(block.rfind("# steps=2\n", 0) == 0);
  CHECK(block.find("# standpoint=prior\n") != std::string::npos);
}

TEST_CASE("end-to-end through the command layer") {
  TempDir dir("loopflow_commands_test");
  std::ostringstream log;

  MakeLoopsOptions loops{4, 8, (dir.path / "targets").string(), small_config()};
  REQUIRE(cmd_make_loops(loops, log) == exit_code::kOk);
  CHECK(fs::exists(dir.path / "targets" / "loop_0000.pdb"));
  CHECK(fs::exists(dir.path / "targets" / "loop_0003.pdb"));

  SynthOptions synth{{(dir.path / "targets").string()}, {"H:3-6"}, (dir.path / "priors").string(),
                     small_config()};
  REQUIRE(cmd_synth(synth, log) == exit_code::kOk);
  const std::string manifest_path = (dir.path / "priors" / "manifest.json").string();
  const Manifest m = read_manifest(manifest_path);
  REQUIRE(m.pairs.size() == 4);
  CHECK(m.pairs[0].selections == std::vector<std::string>{"H:3-6"});
  CHECK(m.noise.sigma_x == 1.0);
  const RefinementProblem p = load_pair(m.pairs[0]);
  CHECK(p.selection().size() == 4);

  TrainOptions train{manifest_path, (dir.path / "model.ckpt").string(), "", small_config()};
  REQUIRE(cmd_train(train, log) == exit_code::kOk);
  const std::string csv = slurp(dir.path / "model.ckpt.loss.csv");
  CHECK(csv.find("# hidden=8\n") != std::string::npos);
  CHECK(csv.find("epoch,loss_r3,loss_so3,loss_2d,total\n") != std::string::npos);
  CHECK(csv.find("\n2,") != std::string::npos);

  // Same seed, same bytes.
  TrainOptions again = train;
  again.out_checkpoint = (dir.path / "model2.ckpt").string();
  REQUIRE(cmd_train(again, log) == exit_code::kOk);
  CHECK(slurp(dir.path / "model2.ckpt.loss.csv") == csv);
  CHECK(slurp(dir.path / "model2.ckpt") == slurp(dir.path / "model.ckpt"));

  RefineOptions batch;
  batch.manifest = manifest_path;
  batch.checkpoint = train.out_checkpoint;
  batch.out = (dir.path / "refined").string();
  batch.jobs = 2;
  batch.config = small_config();
  REQUIRE(cmd_refine(batch, log) == exit_code::kOk);
  CHECK(fs::exists(dir.path / "refined" / "loop_0002.pdb"));

  RefineOptions single;
  single.prior = m.pairs[1].prior;
  single.checkpoint = train.out_checkpoint;
  single.cdrs = {"H:3-6"};
  single.out = (dir.path / "single.pdb").string();
  single.trace_csv = (dir.path / "trace.csv").string();
  single.config = small_config();
  REQUIRE(cmd_refine(single, log) == exit_code::kOk);
  CHECK(slurp(dir.path / "single.pdb") == slurp(dir.path / "refined" / "loop_0001.pdb"));
  const std::string trace = slurp(dir.path / "trace.csv");
  CHECK(trace.find("step,t,energy,mean_vx,mean_ur\n") != std::string::npos);

  EvalOptions eval{manifest_path, batch.out, (dir.path / "metrics.csv").string(), 1, small_config()};
  REQUIRE(cmd_eval(eval, log) == exit_code::kOk);
  const std::vector<MetricsRow> rows = evaluate(m, batch.out, EnergyParams{});
  REQUIRE(rows.size() == 4);
  for (const MetricsRow& r : rows) {
    CHECK(r.ok);
    CHECK(r.prior_rmsd > 0.0);
  }
  const std::string metrics = slurp(dir.path / "metrics.csv");
  CHECK(metrics.find("structure,cdr,status,prior_rmsd") != std::string::npos);
  CHECK(metrics.find("# direct RMSD:") != std::string::npos);

  // A missing refined structure is an input error, reported per row.
  fs::remove(dir.path / "refined" / "loop_0002.pdb");
  CHECK(cmd_eval(eval, log) == exit_code::kInputError);
  const auto partial = evaluate(m, batch.out, EnergyParams{});
  CHECK(summarize(partial).failed == 1);

  RefineOptions no_cdr = single;
  no_cdr.cdrs.clear();
  CHECK(cmd_refine(no_cdr, log) == exit_code::kInputError);
  RefineOptions bad_ckpt = single;
  bad_ckpt.checkpoint = (dir.path / "missing.ckpt").string();
  CHECK(cmd_refine(bad_ckpt, log) == exit_code::kInputError);
}

TEST_CASE("zero noise priors equal their targets") {
  TempDir dir("loopflow_commands_sigma0");
  std::ostringstream log;
  RunConfig cfg = small_config();
  cfg.apply_overrides({"sigma_x=0", "sigma_r=0"});
  REQUIRE(cmd_make_loops(MakeLoopsOptions{2, 6, (dir.path / "t").string(), cfg}, log) == exit_code::kOk);
  REQUIRE(cmd_synth(SynthOptions{{(dir.path / "t").string()}, {"H:2-4"}, (dir.path / "p").string(), cfg},
                    log) == exit_code::kOk);
  // Equal up to the PDB format's 1e-3 A precision.
  const Structure target = read_pdb_file((dir.path / "t" / "loop_0000.pdb").string());
  const Structure prior = read_pdb_file((dir.path / "p" / "loop_0000.pdb").string());
  std::vector<std::size_t> all(target.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  CHECK(rmsd_backbone(target, prior, all) < 2e-3);
}

TEST_CASE("input errors") {
  std::ostringstream log;
  CHECK_THROWS(read_manifest("/nonexistent/manifest.json"));
  TrainOptions train{"/nonexistent/manifest.json", "/tmp/x.ckpt", "", RunConfig{}};
  CHECK(cmd_train(train, log) == exit_code::kInputError);
  CHECK(cmd_make_loops(MakeLoopsOptions{0, 10, "/tmp/none", RunConfig{}}, log) == exit_code::kInputError);

  GradcheckOptions bad;
  bad.chains = 1;
  bad.inject_fault = "NOPE";
  CHECK(cmd_gradcheck(bad, log) == exit_code::kInputError);
}

TEST_CASE("gradcheck") {
  std::ostringstream out;
  GradcheckOptions ok;
  ok.chains = 3;
  CHECK(cmd_gradcheck(ok, out) == exit_code::kOk);
  CHECK(out.str().find("PASS") != std::string::npos);

  std::ostringstream fail;
  GradcheckOptions fault = ok;
  fault.inject_fault = "C_CA";
  CHECK(cmd_gradcheck(fault, fail) == exit_code::kVerificationFailed);
  CHECK(fail.str().find("worst=C_CA") != std::string::npos);
}
