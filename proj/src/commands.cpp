#include "loopflow/commands.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <thread>

#include "json.hpp"

#include "loopflow/errors.hpp"
#include "loopflow/sampler.hpp"
#include "loopflow/training.hpp"

namespace loopflow {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Runs body(i) for i in [0, n) on up to `jobs` threads.
template <class Body>
void parallel_for(std::size_t n, int jobs, Body body) {
  const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(jobs, 1)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) body(i);
    });
  }
  for (auto& t : pool) t.join();
}

std::vector<std::string> list_pdbs(const std::vector<std::string>& inputs) {
  std::vector<std::string> out;
  for (const std::string& in : inputs) {
    if (fs::is_directory(in)) {
      std::vector<std::string> found;
      for (const auto& entry : fs::directory_iterator(in)) {
        if (entry.is_regular_file() && entry.path().extension() == ".pdb") {
          found.push_back(entry.path().string());
        }
      }
      std::sort(found.begin(), found.end());
      out.insert(out.end(), found.begin(), found.end());
    } else {
      out.push_back(in);
    }
  }
  return out;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw EmptyInput("cannot write " + path);
  out << text;
}

json config_json(const RunConfig& config) {
  json j = json::object();
  for (const auto& [k, v] : config.entries()) j[k] = v;
  return j;
}

int report_error(std::ostream& log, const std::exception& e) {
  log << "error: " << e.what() << "\n";
  return exit_code::kInputError;
}

std::vector<std::size_t> all_residues(const Structure& s) {
  std::vector<std::size_t> idx(s.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return idx;
}

}  // namespace

std::string config_comment_block(const RunConfig& config) {
  std::string s;
  for (const auto& [k, v] : config.entries()) s += "# " + k + "=" + v + "\n";
  return s;
}

Manifest read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw EmptyInput("cannot open manifest " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw MalformedRecord("manifest " + path + ": " + e.what());
  }
  const fs::path base = fs::path(path).parent_path();
  auto resolve = [&](const std::string& p) {
    const fs::path fp(p);
    return (fp.is_absolute() ? fp : base / fp).lexically_normal().string();
  };
  Manifest m;
  try {
    for (const json& p : j.at("pairs")) {
      ManifestPair pair;
      pair.target = resolve(p.at("target").get<std::string>());
      pair.prior = resolve(p.at("prior").get<std::string>());
      pair.selections = p.at("selections").get<std::vector<std::string>>();
      m.pairs.push_back(std::move(pair));
    }
    if (j.contains("noise")) {
      const json& n = j.at("noise");
      m.noise.sigma_x = n.value("sigma_x", m.noise.sigma_x);
      m.noise.sigma_r = n.value("sigma_r", m.noise.sigma_r);
      m.noise.seed = n.value("seed", m.noise.seed);
    }
  } catch (const json::exception& e) {
    throw MalformedRecord("manifest " + path + ": " + e.what());
  }
  return m;
}

RefinementProblem load_pair(const ManifestPair& pair) {
  RefinementProblem p{read_pdb_file(pair.prior), read_pdb_file(pair.target),
                      parse_selections(pair.selections)};
  p.selection();  // validates layout and selections
  return p;
}

int cmd_make_loops(const MakeLoopsOptions& opt, std::ostream& log) {
  try {
    if (opt.count < 1 || opt.length < 2) throw ConfigError("need count >= 1 and length >= 2");
    fs::create_directories(opt.out_dir);
    Rng rng(opt.config.seed);
    char name[32];
    for (int i = 0; i < opt.count; ++i) {
      std::snprintf(name, sizeof(name), "loop_%04d.pdb", i);
      write_pdb_file(random_helix_loop(opt.length, rng), (fs::path(opt.out_dir) / name).string());
    }
    log << "wrote " << opt.count << " structures to " << opt.out_dir << "\n";
    return exit_code::kOk;
  } catch (const std::exception& e) {
    return report_error(log, e);
  }
}

int cmd_synth(const SynthOptions& opt, std::ostream& log) {
  try {
    opt.config.validate();
    const std::vector<std::string> targets = list_pdbs(opt.targets);
    if (targets.empty()) throw EmptyInput("no target structures given");
    if (opt.cdrs.empty()) throw ConfigError("at least one --cdr selection is required");
    const std::vector<CdrSelection> selections = parse_selections(opt.cdrs);
    const NoiseSpec noise = opt.config.noise();
    fs::create_directories(opt.out_dir);
    const fs::path out_dir = fs::absolute(opt.out_dir);

    json pairs = json::array();
    std::vector<std::string> used_names;
    for (std::size_t i = 0; i < targets.size(); ++i) {
      const Structure target = read_pdb_file(targets[i]);
      const std::vector<std::size_t> sel = resolve_selection(target, selections);
      std::seed_seq seq{static_cast<std::uint64_t>(noise.seed), static_cast<std::uint64_t>(i)};
      Rng rng(seq);
      const Structure prior = synth_prior(target, sel, noise, rng);
      const std::string name = fs::path(targets[i]).filename().string();
      if (std::find(used_names.begin(), used_names.end(), name) != used_names.end()) {
        throw ConfigError("duplicate target file name " + name);
      }
      used_names.push_back(name);
      write_pdb_file(prior, (out_dir / name).string());
      pairs.push_back({{"target", fs::absolute(targets[i]).lexically_normal().string()},
                       {"prior", name},
                       {"selections", opt.cdrs}});
    }
    json manifest = {{"pairs", pairs},
                     {"noise", {{"sigma_x", noise.sigma_x}, {"sigma_r", noise.sigma_r}, {"seed", noise.seed}}},
                     {"config", config_json(opt.config)}};
    write_text((out_dir / "manifest.json").string(), manifest.dump(2) + "\n");
    log << "wrote " << targets.size() << " priors and " << (out_dir / "manifest.json").string() << "\n";
    return exit_code::kOk;
  } catch (const std::exception& e) {
    return report_error(log, e);
  }
}

int cmd_train(const TrainOptions& opt, std::ostream& log) {
  std::vector<TrainingExample> examples;
  try {
    opt.config.validate();
    const Manifest manifest = read_manifest(opt.manifest);
    for (const ManifestPair& pair : manifest.pairs) {
      RefinementProblem p = load_pair(pair);
      std::vector<std::size_t> sel = p.selection();
      examples.push_back(TrainingExample{std::move(p.prior), std::move(*p.target), std::move(sel)});
    }
    if (examples.empty()) throw EmptyInput("manifest lists no pairs");
  } catch (const std::exception& e) {
    return report_error(log, e);
  }

  try {
    const TrainConfig cfg = opt.config.training();
    ModelParams params = init_params(opt.config.architecture(), opt.config.seed);
    const std::string csv_path = opt.loss_csv.empty() ? opt.out_checkpoint + ".loss.csv" : opt.loss_csv;
    std::ofstream csv(csv_path, std::ios::binary);
    if (!csv) throw EmptyInput("cannot write " + csv_path);
    csv << config_comment_block(opt.config) << loss_csv_header();
    train(params, examples, cfg, [&](const EpochStats& s) {
      csv << loss_csv_row(s);
      csv.flush();
      log << "epoch " << s.epoch << " total " << s.total << "\n";
    });
    save_checkpoint(params, opt.out_checkpoint);
    log << "wrote " << opt.out_checkpoint << " and " << csv_path << "\n";
    return exit_code::kOk;
  } catch (const std::exception& e) {
    return report_error(log, e);
  }
}

namespace {

RefineResult run_refinement(const RefinementProblem& problem, const ModelParams& params,
                            const RunConfig& config) {
  const SamplerConfig cfg = config.sampler();
  if (cfg.zeta * cfg.gamma != 0.0) {
    Rng rng(cfg.seed);
    return refine_sde(problem, params, config.energy(), cfg, rng);
  }
  return refine(problem, params, config.energy(), cfg);
}

std::string trace_csv(const RunConfig& config, const std::vector<StepTrace>& trace) {
  std::string s = config_comment_block(config) + "step,t,energy,mean_vx,mean_ur\n";
  char buf[160];
  for (const StepTrace& t : trace) {
    std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g,%.9g,%.9g\n", t.step, t.t, t.energy, t.mean_vx,
                  t.mean_ur);
    s += buf;
  }
  return s;
}

}  // namespace

int cmd_refine(const RefineOptions& opt, std::ostream& log) {
  try {
    opt.config.validate();
    const ModelParams params = load_checkpoint(opt.checkpoint);
    if (!opt.manifest.empty()) {
      const Manifest manifest = read_manifest(opt.manifest);
      fs::create_directories(opt.out);
      std::vector<std::string> errors(manifest.pairs.size());
      parallel_for(manifest.pairs.size(), opt.jobs, [&](std::size_t i) {
        try {
          const ManifestPair& pair = manifest.pairs[i];
          RefinementProblem p{read_pdb_file(pair.prior), std::nullopt,
                              parse_selections(pair.selections)};
          const RefineResult r = run_refinement(p, params, opt.config);
          write_pdb_file(r.refined,
                         (fs::path(opt.out) / fs::path(pair.prior).filename()).string());
        } catch (const std::exception& e) {
          errors[i] = e.what();
        }
      });
      int failed = 0;
      for (std::size_t i = 0; i < errors.size(); ++i) {
        if (errors[i].empty()) continue;
        ++failed;
        log << "error: " << manifest.pairs[i].prior << ": " << errors[i] << "\n";
      }
      log << "refined " << errors.size() - failed << " of " << errors.size() << " structures into "
          << opt.out << "\n";
      return failed ? exit_code::kInputError : exit_code::kOk;
    }

    if (opt.cdrs.empty()) throw ConfigError("at least one --cdr selection is required");
    RefinementProblem p{read_pdb_file(opt.prior), std::nullopt, parse_selections(opt.cdrs)};
    const RefineResult r = run_refinement(p, params, opt.config);
    write_pdb_file(r.refined, opt.out);
    if (!opt.trace_csv.empty()) write_text(opt.trace_csv, trace_csv(opt.config, r.trace));
    log << "wrote " << opt.out << "\n";
    return exit_code::kOk;
  } catch (const std::exception& e) {
    return report_error(log, e);
  }
}

std::vector<MetricsRow> evaluate(const Manifest& manifest, const std::string& refined_dir,
                                 const EnergyParams& energy, int jobs) {
  std::vector<std::vector<MetricsRow>> per_pair(manifest.pairs.size());
  parallel_for(manifest.pairs.size(), jobs, [&](std::size_t i) {
    const ManifestPair& pair = manifest.pairs[i];
    const std::string name = fs::path(pair.prior).filename().string();
    std::vector<MetricsRow>& rows = per_pair[i];
    for (const std::string& cdr : pair.selections) {
      MetricsRow row;
      row.structure = fs::path(pair.prior).stem().string();
      row.cdr = cdr;
      rows.push_back(row);
    }
    try {
      const RefinementProblem problem = load_pair(pair);
      const Structure refined = read_pdb_file((fs::path(refined_dir) / name).string());
      for (std::size_t c = 0; c < pair.selections.size(); ++c) {
        const auto start = std::chrono::steady_clock::now();
        MetricsRow& row = rows[c];
        const CdrSelection sel = parse_selection(pair.selections[c]);
        const std::vector<std::size_t> idx = resolve_selection(*problem.target, {&sel, 1});
        row.prior_rmsd = rmsd_backbone(problem.prior, *problem.target, idx);
        row.refined_rmsd = rmsd_backbone(refined, *problem.target, idx);
        row.improvement_pct =
            row.prior_rmsd > 0 ? 100.0 * (row.prior_rmsd - row.refined_rmsd) / row.prior_rmsd : 0.0;
        row.final_energy = total_guidance_energy(refined, idx, energy).energy;
        row.ok = true;
        row.wall_time_s =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      }
    } catch (const std::exception& e) {
      for (MetricsRow& row : rows) {
        if (!row.ok) row.error = e.what();
      }
    }
  });
  std::vector<MetricsRow> out;
  for (auto& rows : per_pair) out.insert(out.end(), rows.begin(), rows.end());
  return out;
}

EvalSummary summarize(const std::vector<MetricsRow>& rows) {
  EvalSummary s;
  s.rows = rows.size();
  std::size_t ok = 0;
  for (const MetricsRow& r : rows) {
    if (!r.ok) {
      ++s.failed;
      continue;
    }
    ++ok;
    s.mean_prior_rmsd += r.prior_rmsd;
    s.mean_refined_rmsd += r.refined_rmsd;
    s.mean_improvement_pct += r.improvement_pct;
  }
  if (ok) {
    s.mean_prior_rmsd /= static_cast<double>(ok);
    s.mean_refined_rmsd /= static_cast<double>(ok);
    s.mean_improvement_pct /= static_cast<double>(ok);
  }
  return s;
}

int cmd_eval(const EvalOptions& opt, std::ostream& log) {
  try {
    opt.config.validate();
    const Manifest manifest = read_manifest(opt.manifest);
    const std::vector<MetricsRow> rows = evaluate(manifest, opt.refined_dir, opt.config.energy(), opt.jobs);
    const EvalSummary s = summarize(rows);

    std::string csv = config_comment_block(opt.config);
    csv += "structure,cdr,status,prior_rmsd,refined_rmsd,improvement_pct,final_energy,wall_time_s\n";
    char buf[256];
    for (const MetricsRow& r : rows) {
      if (r.ok) {
        std::snprintf(buf, sizeof(buf), "%s,%s,ok,%.4f,%.4f,%.2f,%.6g,%.6f\n", r.structure.c_str(),
                      r.cdr.c_str(), r.prior_rmsd, r.refined_rmsd, r.improvement_pct, r.final_energy,
                      r.wall_time_s);
      } else {
        std::snprintf(buf, sizeof(buf), "%s,%s,failed,,,,,\n", r.structure.c_str(), r.cdr.c_str());
      }
      csv += buf;
    }
    std::snprintf(buf, sizeof(buf),
                  "direct RMSD: mean prior %.4f A, mean refined %.4f A, mean improvement %.2f%% "
                  "(%zu rows, %zu failed)",
                  s.mean_prior_rmsd, s.mean_refined_rmsd, s.mean_improvement_pct, s.rows, s.failed);
    csv += std::string("# ") + buf + "\n";
    write_text(opt.out_csv, csv);
    log << buf << "\n";
    for (const MetricsRow& r : rows) {
      if (!r.ok) log << "failed: " << r.structure << " " << r.cdr << ": " << r.error << "\n";
    }
    return s.failed ? exit_code::kInputError : exit_code::kOk;
  } catch (const std::exception& e) {
    return report_error(log, e);
  }
}

int cmd_gradcheck(const GradcheckOptions& opt, std::ostream& log) {
  constexpr double kEnergyTol = 1e-5;
  constexpr double kModelTol = 1e-4;
  constexpr double kStep = 1e-5;
  try {
    opt.config.validate();
    if (opt.inject_fault) {
      bool known = false;
      for (BondTerm term : kBondTerms) known = known || bond_term_name(term) == *opt.inject_fault;
      if (!known) throw ConfigError("unknown energy term '" + *opt.inject_fault + "'");
    }
    Rng rng(opt.config.seed);
    double energy_err = 0.0;
    std::string energy_worst = "none";
    for (int c = 0; c < opt.chains; ++c) {
      const Structure ideal_chain = random_helix_loop(10, rng);
      const std::vector<std::size_t> sel = all_residues(ideal_chain);
      const Structure chain = synth_prior(ideal_chain, sel, NoiseSpec{0.3, 0.1, 0}, rng);
      for (BondTerm term : kBondTerms) {
        EnergyParams params = opt.config.energy();
        params.omega.fill(0.0);
        params.omega[static_cast<std::size_t>(term)] = 1.0;
        const std::string name(bond_term_name(term));
        std::function<void(EnergyGradient&)> tamper;
        if (opt.inject_fault && *opt.inject_fault == name) {
          tamper = [](EnergyGradient& g) { g.grad_x[0] += Vec3(1.0, 0.0, 0.0); };
        }
        const FiniteDifferenceReport r = finite_difference_check(chain, sel, params, kStep, 1e-6, tamper);
        if (r.max_rel_error > energy_err || energy_worst == "none") {
          energy_err = r.max_rel_error;
          energy_worst = name + " " + r.worst;
        }
      }
    }
    const GradientCheckReport model = model_gradient_check(opt.config.seed);
    const bool pass = energy_err < kEnergyTol && model.max_rel_error < kModelTol;
    char buf[128];
    std::snprintf(buf, sizeof(buf), "%.3e", energy_err);
    log << "energy max_rel_error=" << buf << " (tol 1e-5) worst=" << energy_worst << "\n";
    std::snprintf(buf, sizeof(buf), "%.3e", model.max_rel_error);
    log << "model max_rel_error=" << buf << " (tol 1e-4) worst=" << model.worst << "\n";
    log << (pass ? "PASS" : "FAIL") << "\n";
    return pass ? exit_code::kOk : exit_code::kVerificationFailed;
  } catch (const std::exception& e) {
    return report_error(log, e);
  }
}

}  // namespace loopflow
