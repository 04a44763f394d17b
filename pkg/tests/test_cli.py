"""Expression language, config validation, subcommands, pipeline artifacts."""

import json

import numpy as np
import pytest

from cmalab import cli, grid


# -- expression language -----------------------------------------------------------


def test_expression_basics():
    f = cli.compile_expression("1 + 0.5*cos(pi*x1)*sin(y1)", 2)
    pts = np.array([[0.0, 0.0], [1.0, 0.5]])
    got = f(pts)
    assert got[0] == pytest.approx(1.0 + 0.5 * np.cos(0.0) * np.sin(0.0))
    assert got[1] == pytest.approx(1.0 + 0.5 * np.cos(np.pi) * np.sin(0.5))


def test_expression_radius_variables():
    f = cli.compile_expression("r2 - r", 2)
    pts = np.array([[0.3, 0.4]])
    assert f(pts)[0] == pytest.approx(0.25 - 0.5)


def test_expression_rejects_attributes_and_imports():
    with pytest.raises(ValueError):
        cli.compile_expression("__import__('os')", 2)
    with pytest.raises(ValueError):
        cli.compile_expression("x1.real", 2)
    with pytest.raises(ValueError):
        cli.compile_expression("open('x')", 2)


def test_expression_unknown_variable_rejected():
    f = cli.compile_expression("x2 + 1", 2)  # x2 undefined at n=1
    with pytest.raises(ValueError):
        f(np.zeros((1, 2)))


# -- config validation --------------------------------------------------------------


def test_config_validates_before_compute(tmp_path):
    with pytest.raises(ValueError):
        cli.ExperimentConfig(gamma=0.6)
    with pytest.raises(ValueError):
        cli.ExperimentConfig(eps=0.5)
    with pytest.raises(ValueError):
        cli.ExperimentConfig(mu0=0.5)
    with pytest.raises(ValueError):
        cli.ExperimentConfig(eps_bar="bogus")
    assert not list(tmp_path.iterdir())


def test_config_eps_bar_recipe():
    cfg = cli.ExperimentConfig()
    assert cfg.eps_bar_value(2.0) == pytest.approx(1.0 / 288.0)
    cfg2 = cli.ExperimentConfig(eps_bar=1e-3)
    assert cfg2.eps_bar_value(2.0) == 1e-3


# -- solve subcommand ----------------------------------------------------------------


def test_solve_subcommand_roundtrip(tmp_path):
    out = tmp_path / "inst"
    rc = cli.main([
        "solve", "--n", "1", "--resolution", "33", "--out", str(out),
        "--report", str(tmp_path / "rep.json"), "--csv",
    ])
    assert rc == 0
    assert (tmp_path / "inst.bin").exists()
    assert (tmp_path / "inst.meta.json").exists()
    assert (tmp_path / "inst.csv").exists()
    rep = json.loads((tmp_path / "rep.json").read_text())
    assert rep["converged"]

    u = cli.load_instance(out)
    pts = u.domain.coords(u.domain.interior_mask.ravel())
    exact = np.sum(pts ** 2, axis=1) - 1.0
    assert np.max(np.abs(u.values[u.domain.interior_mask] - exact)) < 1e-8


def test_solve_subcommand_with_expression(tmp_path):
    rc = cli.main([
        "solve", "--n", "1", "--resolution", "33",
        "--f-expr", "1 + 0.05*cos(pi*x1)",
        "--out", str(tmp_path / "e"),
    ])
    assert rc == 0


# -- sections / engulf subcommands ----------------------------------------------------


def test_sections_and_engulf_subcommands(tmp_path):
    base = tmp_path / "inst"
    cli.main(["solve", "--n", "1", "--resolution", "65", "--out", str(base)])
    chains = tmp_path / "chains.json"
    rc = cli.main([
        "sections", "--instance", str(base), "--center", "0.1,0.0",
        "--center=-0.1,0.1", "--sigma", "0.2", "--levels", "2",
        "--chain-resolution", "33", "--out-chain", str(chains),
    ])
    assert rc == 0
    data = json.loads(chains.read_text())
    assert len(data) == 2
    assert len(data[0]["levels"]) == 2

    rc = cli.main([
        "engulf", "--instance", str(base), "--chains", str(chains),
        "--pairs", "10", "--seed", "3", "--report", str(tmp_path / "eng.json"),
    ])
    assert rc == 0
    counts = json.loads((tmp_path / "eng.json").read_text())
    assert counts["fail"] == 0


# -- cover subcommand ------------------------------------------------------------------


def test_cover_subcommand(tmp_path):
    dom = grid.build_domain(1, "ball:1.0", 49)
    pts = dom.coords()
    members = []
    for ctr, rad in (((0.0, 0.0), 0.3), ((0.4, 0.0), 0.2), ((-0.4, 0.1), 0.25)):
        ci = dom.node_index(ctr)
        dist = np.linalg.norm(pts - dom.coords(ci), axis=1).reshape(dom.interior_mask.shape)
        mask = (dist <= rad) & dom.interior_mask
        members.append({
            "center": list(ci),
            "mu": rad ** 2,
            "nodes": np.argwhere(mask).tolist(),
        })
    family = {
        "shape": list(dom.interior_mask.shape),
        "lo": [float(x) for x in dom.box[:, 0]],
        "h": dom.h,
        "members": members,
    }
    fam_path = tmp_path / "family.json"
    fam_path.write_text(json.dumps(family))
    tgt_path = tmp_path / "target.csv"
    np.savetxt(tgt_path, np.array(members[0]["nodes"], dtype=int), fmt="%d", delimiter=",")
    rc = cli.main([
        "cover", "--family", str(fam_path), "--target-set", str(tgt_path),
        "--report", str(tmp_path / "cover.json"),
    ])
    assert rc == 0
    rep = json.loads((tmp_path / "cover.json").read_text())
    assert rep["disjoint"] and rep["covered"]
    assert rep["witnesses"]


# -- pipeline ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def pipeline_runs(tmp_path_factory):
    cfg = cli.ExperimentConfig(
        n=1, resolution=49, gamma=0.05, eps=0.01, sigma=0.2, k_max=2,
        stride=4, seed=7, chain_points=4, chain_levels=2,
        chain_resolution=33, engulf_pairs=12, cover_families=2)
    d1 = tmp_path_factory.mktemp("run1")
    d2 = tmp_path_factory.mktemp("run2")
    m1 = cli.run_pipeline(cfg, d1)
    m2 = cli.run_pipeline(cfg, d2)
    return d1, d2, m1, m2


def test_pipeline_deterministic(pipeline_runs):
    d1, d2, m1, m2 = pipeline_runs
    assert set(m1["files"]) == set(m2["files"])
    for name in m1["files"]:
        assert (d1 / name).read_bytes() == (d2 / name).read_bytes(), name
    assert m1["config_hash"] == m2["config_hash"]


def test_pipeline_manifest_complete(pipeline_runs):
    d1, _, m1, _ = pipeline_runs
    assert all(m1["stages"][s] == "ok" for s in m1["stages"])
    for name, digest in m1["files"].items():
        assert (d1 / name).exists()
        assert cli.sha256_file(d1 / name) == digest
    expected = {"u.bin", "u.meta.json", "v0.bin", "v0.meta.json", "u.csv",
                "certificates.json", "chains.json", "engulf.json",
                "cover.json", "badset.json", "badset.csv", "w2p.json"}
    assert expected <= set(m1["files"])


def test_pipeline_artifacts_content(pipeline_runs):
    d1, _, _, _ = pipeline_runs
    certs = json.loads((d1 / "certificates.json").read_text())
    assert certs["sandwich"]["passed"]
    assert certs["barrier"]["passed"]
    bs = json.loads((d1 / "badset.json").read_text())
    assert all(r["passed"] for r in bs["rows"])
    eng = json.loads((d1 / "engulf.json").read_text())
    assert eng["counts"]["fail"] == 0
    lines = (d1 / "badset.csv").read_text().strip().splitlines()
    assert lines[0].startswith("k,r_k,measure")


def test_pipeline_stage_error_recorded_in_manifest(tmp_path):
    # Resolution 9 leaves no room for level-one sections: the sections stage
    # fails, the manifest records it, and the error propagates by name.
    from cmalab.errors import CmalabError

    cfg = cli.ExperimentConfig(n=1, resolution=9, gamma=0.0, eps=0.0,
                               chain_points=2, stride=2)
    with pytest.raises(CmalabError, match="sections"):
        cli.run_pipeline(cfg, tmp_path / "broken")
    manifest = json.loads((tmp_path / "broken" / "manifest.json").read_text())
    assert manifest["stages"]["sections"].startswith("error:")
    assert manifest["stages"]["solve"] == "ok"


def test_badset_and_w2p_subcommands(tmp_path):
    base = tmp_path / "inst"
    cli.main(["solve", "--n", "1", "--resolution", "49", "--out", str(base)])
    rc = cli.main([
        "badset", "--instance", str(base), "--k-max", "3", "--stride", "6",
        "--report", str(tmp_path / "bs.json"),
    ])
    assert rc == 0
    rows = json.loads((tmp_path / "bs.json").read_text())["rows"]
    assert len(rows) == 3 and all(r["passed"] for r in rows)
    assert (tmp_path / "bs.csv").exists()

    rc = cli.main([
        "w2p", "--instance", str(base), "--p", "2.0", "--stride", "6",
        "--report", str(tmp_path / "np.json"),
    ])
    assert rc == 0
    rep = json.loads((tmp_path / "np.json").read_text())
    assert rep["dominated"]


def test_pipeline_plot_exports(pipeline_runs):
    d1, _, m1, _ = pipeline_runs
    assert "plot_decay.csv" in m1["files"]
    assert "plot_weak11.csv" in m1["files"]
    decay = (d1 / "plot_decay.csv").read_text().strip().splitlines()
    assert decay[0] == "k,measure"
    w11 = (d1 / "plot_weak11.csv").read_text().strip().splitlines()
    assert w11[0] == "t,level_measure"
    assert len(w11) >= 5


def test_pipeline_cli_entry(tmp_path):
    rc = cli.main([
        "pipeline", "--out-dir", str(tmp_path / "out"), "--n", "1",
        "--resolution", "33", "--gamma", "0.0", "--eps", "0.0",
        "--k-max", "2", "--stride", "4", "--seed", "1",
    ])
    assert rc == 0
    assert (tmp_path / "out" / "manifest.json").exists()
