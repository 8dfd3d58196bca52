#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <optional>
#include <string>
#include <vector>

#include "loopflow/config.hpp"
#include "loopflow/energy.hpp"
#include "loopflow/errors.hpp"
#include "loopflow/model.hpp"
#include "loopflow/sampler.hpp"
#include "loopflow/so3.hpp"
#include "loopflow/structure_io.hpp"
#include "loopflow/training.hpp"

namespace py = pybind11;
using namespace loopflow;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Array vec3_stack(const std::vector<Vec3>& v) {
  Array out({static_cast<py::ssize_t>(v.size()), py::ssize_t{3}});
  auto a = out.mutable_unchecked<2>();
  for (std::size_t i = 0; i < v.size(); ++i)
    for (int k = 0; k < 3; ++k) a(i, k) = v[i][k];
  return out;
}

Array mat3_stack(const std::vector<Mat3>& m) {
  Array out({static_cast<py::ssize_t>(m.size()), py::ssize_t{3}, py::ssize_t{3}});
  auto a = out.mutable_unchecked<3>();
  for (std::size_t i = 0; i < m.size(); ++i)
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) a(i, r, c) = m[i](r, c);
  return out;
}

std::vector<Vec3> read_vec3_stack(const Array& arr, const char* what) {
  if (arr.ndim() != 2 || arr.shape(1) != 3)
    throw ShapeMismatch(std::string(what) + " must have shape (n, 3)");
  auto a = arr.unchecked<2>();
  std::vector<Vec3> out(static_cast<std::size_t>(arr.shape(0)));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = Vec3(a(i, 0), a(i, 1), a(i, 2));
  return out;
}

std::vector<Rotation> read_rotation_stack(const Array& arr) {
  if (arr.ndim() != 3 || arr.shape(1) != 3 || arr.shape(2) != 3)
    throw ShapeMismatch("rotations must have shape (n, 3, 3)");
  auto a = arr.unchecked<3>();
  std::vector<Rotation> out;
  out.reserve(static_cast<std::size_t>(arr.shape(0)));
  for (py::ssize_t i = 0; i < arr.shape(0); ++i) {
    Mat3 m;
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) m(r, c) = a(i, r, c);
    out.push_back(Rotation::from_matrix(m));
  }
  return out;
}

std::vector<std::size_t> all_residues(const Structure& s) {
  std::vector<std::size_t> sel(s.size());
  for (std::size_t i = 0; i < sel.size(); ++i) sel[i] = i;
  return sel;
}

std::vector<std::size_t> selection_of(const Structure& s, const std::vector<std::string>& cdrs) {
  const auto parsed = parse_selections(cdrs);
  return resolve_selection(s, parsed);
}

RunConfig make_config(const std::optional<RunConfig>& config) {
  return config ? *config : RunConfig{};
}

py::dict trace_row(const StepTrace& t) {
  py::dict d;
  d["step"] = t.step;
  d["t"] = t.t;
  d["energy"] = t.energy;
  d["mean_vx"] = t.mean_vx;
  d["mean_ur"] = t.mean_ur;
  return d;
}

}  // namespace

PYBIND11_MODULE(loopflow, m) {
  m.doc() = "Energy-guided SE(3) flow matching for backbone loop refinement";

  py::register_exception<Error>(m, "LoopflowError", PyExc_ValueError);

  // SO(3)
  m.def("hat", &hat, py::arg("v"));
  m.def("vee", &vee, py::arg("m"));
  m.def(
      "exp_rotvec", [](const Vec3& v) { return exp_rotvec(v).matrix(); }, py::arg("v"),
      "Rotation matrix exp(hat(v)).");
  m.def(
      "log_rotation", [](const Mat3& r) { return log_rotation(Rotation::from_matrix(r)); },
      py::arg("r"), "Rotation vector of r; raises near angle pi.");
  m.def(
      "geodesic_interp",
      [](const Mat3& r0, const Mat3& r1, double t) {
        return geodesic_interp(Rotation::from_matrix(r0), Rotation::from_matrix(r1), t).matrix();
      },
      py::arg("r0"), py::arg("r1"), py::arg("t"));
  m.def(
      "so3_conditional_vf",
      [](const Mat3& rt, const Mat3& r1, double t, double eps_t) {
        return so3_conditional_vf(Rotation::from_matrix(rt), Rotation::from_matrix(r1), t, eps_t)
            .v;
      },
      py::arg("rt"), py::arg("r1"), py::arg("t"), py::arg("eps_t") = kDefaultTimeEps,
      "Body-frame velocity toward r1 at time t.");

  // Structures
  py::class_<Structure>(m, "Structure")
      .def("__len__", &Structure::size)
      .def(
          "positions",
          [](const Structure& s) {
            std::vector<Vec3> x;
            for (std::size_t i = 0; i < s.size(); ++i) x.push_back(s.residue(i).frame.x);
            return vec3_stack(x);
          },
          "C-alpha positions, shape (n, 3).")
      .def(
          "rotations",
          [](const Structure& s) {
            std::vector<Mat3> r;
            for (std::size_t i = 0; i < s.size(); ++i) r.push_back(s.residue(i).frame.r.matrix());
            return mat3_stack(r);
          },
          "Frame rotations, shape (n, 3, 3).")
      .def("psi",
           [](const Structure& s) {
             std::vector<double> p;
             for (std::size_t i = 0; i < s.size(); ++i) p.push_back(s.residue(i).psi);
             return p;
           })
      .def(
          "atoms",
          [](const Structure& s) {
            Array out({static_cast<py::ssize_t>(s.size()), py::ssize_t{4}, py::ssize_t{3}});
            auto a = out.mutable_unchecked<3>();
            for (std::size_t i = 0; i < s.size(); ++i) {
              const BackboneAtoms b = frame_to_atoms(s.residue(i));
              const Vec3* atoms[4] = {&b.n, &b.ca, &b.c, &b.o};
              for (int j = 0; j < 4; ++j)
                for (int k = 0; k < 3; ++k) a(i, j, k) = (*atoms[j])[k];
            }
            return out;
          },
          "N, CA, C, O coordinates, shape (n, 4, 3).")
      .def("residue_ids",
           [](const Structure& s) {
             std::vector<std::string> ids;
             for (std::size_t i = 0; i < s.size(); ++i) {
               ids.push_back(std::string(1, s.chains()[s.chain_of(i)].chain_id()) + ":" +
                             s.id(i).str());
             }
             return ids;
           })
      .def(
          "set_frames",
          [](Structure& s, const std::vector<std::size_t>& selection, const Array& x,
             const Array& r) {
            const auto pos = read_vec3_stack(x, "positions");
            const auto rot = read_rotation_stack(r);
            if (pos.size() != selection.size() || rot.size() != selection.size())
              throw ShapeMismatch("selection, positions and rotations differ in length");
            std::vector<Frame> frames(selection.size());
            for (std::size_t i = 0; i < frames.size(); ++i) frames[i] = {pos[i], rot[i]};
            s.set_frames(selection, frames);
          },
          py::arg("selection"), py::arg("positions"), py::arg("rotations"))
      .def("to_pdb", &write_pdb_backbone)
      .def("write_pdb", [](const Structure& s, const std::string& path) { write_pdb_file(s, path); },
           py::arg("path"))
      .def("copy", [](const Structure& s) { return Structure(s); });

  m.def("parse_pdb", [](const std::string& text) { return parse_pdb_backbone(text); },
        py::arg("text"));
  m.def("read_pdb", &read_pdb_file, py::arg("path"));
  m.def(
      "build_helix",
      [](int length, char chain, double phi_deg, double psi_deg, double c_n_bond) {
        HelixGeometry g;
        g.phi_deg = phi_deg;
        g.psi_deg = psi_deg;
        g.c_n_bond = c_n_bond;
        return Structure({build_backbone(length, chain, g)});
      },
      py::arg("length"), py::arg("chain") = 'H', py::arg("phi_deg") = -57.0,
      py::arg("psi_deg") = -47.0, py::arg("c_n_bond") = 1.32,
      "Ideal backbone from internal coordinates; residue numbers start at 1.");
  m.def("resolve_selection", &selection_of, py::arg("structure"), py::arg("cdrs"),
        "Flat residue indices covered by selections such as 'H:95-102'.");
  m.def(
      "rmsd",
      [](const Structure& a, const Structure& b, std::optional<std::vector<std::size_t>> sel) {
        const auto s = sel ? *sel : all_residues(a);
        return rmsd_backbone(a, b, s);
      },
      py::arg("a"), py::arg("b"), py::arg("selection") = py::none(),
      "Backbone RMSD without superposition.");
  m.def(
      "synth_prior",
      [](const Structure& target, const std::vector<std::size_t>& selection, double sigma_x,
         double sigma_r, std::uint64_t seed) {
        NoiseSpec noise{sigma_x, sigma_r, seed};
        Rng rng(seed);
        return synth_prior(target, selection, noise, rng);
      },
      py::arg("target"), py::arg("selection"), py::arg("sigma_x") = 1.0,
      py::arg("sigma_r") = 0.2, py::arg("seed") = 0);

  // Configuration
  py::class_<RunConfig>(m, "Config")
      .def(py::init<>())
      .def(py::init([](const py::dict& kv) {
             RunConfig c;
             for (const auto& [k, v] : kv)
               c.set(py::str(k).cast<std::string>(), py::str(v).cast<std::string>());
             c.validate();
             return c;
           }),
           py::arg("values"))
      .def_static("from_file",
                  [](const std::string& path) {
                    RunConfig c;
                    c.apply_file(path);
                    c.validate();
                    return c;
                  })
      .def("set",
           [](RunConfig& c, const std::string& key, const py::object& value) {
             c.set(key, py::str(value).cast<std::string>());
           })
      .def("validate", &RunConfig::validate)
      .def("to_text", &RunConfig::to_text)
      .def("as_dict", [](const RunConfig& c) {
        py::dict d;
        for (const auto& [k, v] : c.entries()) d[py::str(k)] = v;
        return d;
      });

  // Guidance energy
  m.def(
      "guidance_energy",
      [](const Structure& s, const std::vector<std::size_t>& selection,
         const std::optional<RunConfig>& config) {
        const GuidanceEnergy g = total_guidance_energy(s, selection, make_config(config).energy());
        return py::make_tuple(g.energy, vec3_stack(g.grads.grad_x), mat3_stack(g.grads.grad_r));
      },
      py::arg("structure"), py::arg("selection"), py::arg("config") = py::none(),
      "(energy, grad_x (n, 3), grad_r (n, 3, 3)); gradients are zero outside the selection.");
  m.def(
      "project_rotation_gradient",
      [](const Mat3& r, const Mat3& grad) {
        return project_rotation_gradient(Rotation::from_matrix(r), grad);
      },
      py::arg("r"), py::arg("grad"));
  m.def(
      "energy_gradient_check",
      [](const Structure& s, const std::vector<std::size_t>& selection, double h,
         const std::optional<RunConfig>& config) {
        const auto rep = finite_difference_check(s, selection, make_config(config).energy(), h);
        return py::make_tuple(rep.max_rel_error, rep.worst);
      },
      py::arg("structure"), py::arg("selection"), py::arg("h") = 1e-5,
      py::arg("config") = py::none(), "(max relative error, worst entry).");

  // Model
  py::class_<ModelParams>(m, "Model")
      .def_static(
          "init",
          [](int hidden, int head_hidden, int rounds, int k_neighbors, std::uint64_t seed) {
            return init_params(Architecture{hidden, head_hidden, rounds, k_neighbors}, seed);
          },
          py::arg("hidden") = 128, py::arg("head_hidden") = 64, py::arg("rounds") = 2,
          py::arg("k_neighbors") = 8, py::arg("seed") = 0)
      .def_static("load", [](const std::string& path) { return load_checkpoint(path); },
                  py::arg("path"))
      .def("save", [](const ModelParams& p, const std::string& path) { save_checkpoint(p, path); },
           py::arg("path"))
      .def_property_readonly("num_parameters", &ModelParams::num_parameters)
      .def_property_readonly("hidden", [](const ModelParams& p) { return p.arch.hidden; });

  m.def(
      "train",
      [](ModelParams& params, const py::list& examples, const std::optional<RunConfig>& config,
         std::optional<int> epochs) {
        std::vector<TrainingExample> ex;
        for (const auto& item : examples) {
          auto tup = item.cast<py::tuple>();
          ex.push_back({tup[0].cast<Structure>(), tup[1].cast<Structure>(),
                        tup[2].cast<std::vector<std::size_t>>()});
        }
        TrainConfig cfg = make_config(config).training();
        if (epochs) cfg.epochs = *epochs;
        std::vector<EpochStats> stats;
        {
          py::gil_scoped_release release;
          stats = train(params, ex, cfg);
        }
        py::list rows;
        for (const auto& s : stats) {
          py::dict d;
          d["epoch"] = s.epoch;
          d["loss_r3"] = s.loss_r3;
          d["loss_so3"] = s.loss_so3;
          d["loss_2d"] = s.loss_2d;
          d["total"] = s.total;
          rows.append(d);
        }
        return rows;
      },
      py::arg("model"), py::arg("examples"), py::arg("config") = py::none(),
      py::arg("epochs") = py::none(),
      "Trains in place on (prior, target, selection) tuples; returns per-epoch means.");

  m.def(
      "refine",
      [](const Structure& prior, const ModelParams& params, const std::vector<std::string>& cdrs,
         const std::optional<RunConfig>& config) {
        RefinementProblem problem{prior, std::nullopt, parse_selections(cdrs)};
        const RunConfig c = make_config(config);
        c.validate();
        const SamplerConfig cfg = c.sampler();
        RefineResult res;
        {
          py::gil_scoped_release release;
          if (cfg.zeta * cfg.gamma != 0.0) {
            Rng rng(cfg.seed);
            res = refine_sde(problem, params, c.energy(), cfg, rng);
          } else {
            res = refine(problem, params, c.energy(), cfg);
          }
        }
        py::list trace;
        for (const auto& t : res.trace) trace.append(trace_row(t));
        return py::make_tuple(res.refined, trace);
      },
      py::arg("prior"), py::arg("model"), py::arg("cdrs"), py::arg("config") = py::none(),
      "Guided refinement of the CDR loops; returns (structure, per-step trace).");

  m.def(
      "model_gradient_check",
      [](std::uint64_t seed, double h) {
        const auto rep = model_gradient_check(seed, h);
        return py::make_tuple(rep.max_rel_error, rep.worst);
      },
      py::arg("seed") = 0, py::arg("h") = 1e-5);
}
