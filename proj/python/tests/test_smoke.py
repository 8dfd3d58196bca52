import numpy as np
import pytest

import loopflow as lf


def test_exp_log_round_trip():
    v = np.array([0.3, -1.1, 0.7])
    r = lf.exp_rotvec(v)
    assert np.allclose(r.T @ r, np.eye(3), atol=1e-12)
    assert np.isclose(np.linalg.det(r), 1.0)
    assert np.allclose(lf.log_rotation(r), v, atol=1e-12)


def test_geodesic_and_conditional_field():
    r0 = lf.exp_rotvec([0.1, 0.2, 0.3])
    r1 = lf.exp_rotvec([-0.4, 0.5, 0.1])
    assert np.allclose(lf.geodesic_interp(r0, r1, 0.0), r0, atol=1e-12)
    assert np.allclose(lf.geodesic_interp(r0, r1, 1.0), r1, atol=1e-12)
    v = lf.so3_conditional_vf(r0, r1, 0.0)
    assert np.allclose(v, lf.log_rotation(r0.T @ r1), atol=1e-12)


def test_pdb_round_trip_and_rmsd():
    s = lf.build_helix(12)
    assert len(s) == 12
    assert s.atoms().shape == (12, 4, 3)
    back = lf.parse_pdb(s.to_pdb())
    assert lf.rmsd(s, back) < 2e-3
    assert s.residue_ids()[0] == "H:1"


def test_selection_and_prior():
    s = lf.build_helix(10)
    sel = lf.resolve_selection(s, ["H:3-6"])
    assert sel == [2, 3, 4, 5]
    prior = lf.synth_prior(s, sel, sigma_x=0.5, sigma_r=0.1, seed=3)
    moved = np.linalg.norm(prior.positions() - s.positions(), axis=1)
    assert np.all(moved[[0, 1, 6, 7, 8, 9]] == 0.0)
    assert np.all(moved[sel] > 0.0)
    with pytest.raises(lf.LoopflowError):
        lf.resolve_selection(s, ["L:1-3"])


def test_energy_and_gradient_check():
    s = lf.build_helix(8, c_n_bond=1.6)
    sel = [2, 3, 4]
    e, gx, gr = lf.guidance_energy(s, sel)
    assert e > 0.0
    assert gx.shape == (8, 3) and gr.shape == (8, 3, 3)
    assert np.all(gx[[0, 1, 5, 6, 7]] == 0.0)
    err, worst = lf.energy_gradient_check(s, sel)
    assert err < 1e-5, worst
    ideal = lf.build_helix(8)
    e0, _, _ = lf.guidance_energy(ideal, sel)
    assert e0 < e


def test_config_round_trip():
    c = lf.Config({"beta": 0.25, "steps": 4})
    d = c.as_dict()
    assert float(d["beta"]) == 0.25 and d["steps"] == "4"
    with pytest.raises(lf.LoopflowError):
        lf.Config({"no_such_key": 1})


def test_train_refine_checkpoint(tmp_path):
    target = lf.build_helix(8)
    sel = lf.resolve_selection(target, ["H:3-6"])
    examples = [(lf.synth_prior(target, sel, 0.5, 0.1, seed), target, sel) for seed in range(4)]
    model = lf.Model.init(hidden=16, head_hidden=8, rounds=1, seed=2)
    cfg = lf.Config({"batch_size": 2, "seed": 1})
    rows = lf.train(model, examples, cfg, epochs=2)
    assert [r["epoch"] for r in rows] == [1, 2]
    assert all(np.isfinite(r["total"]) for r in rows)

    path = str(tmp_path / "m.ckpt")
    model.save(path)
    loaded = lf.Model.load(path)
    assert loaded.num_parameters == model.num_parameters

    prior = examples[0][0]
    a, trace = lf.refine(prior, model, ["H:3-6"], lf.Config({"steps": 3}))
    b, _ = lf.refine(prior, loaded, ["H:3-6"], lf.Config({"steps": 3}))
    assert len(trace) == 3
    assert a.to_pdb() == b.to_pdb()
    assert np.array_equal(a.positions()[:2], prior.positions()[:2])


def test_model_gradient_check():
    err, worst = lf.model_gradient_check(seed=1)
    assert err < 1e-4, worst
