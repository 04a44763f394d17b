"""Experiment orchestration and command-line interface.

Subcommands: solve, sections, engulf, cover, badset, w2p, pipeline.
A pipeline run writes a solver cache, chain JSONs, verdict tables, the
bad-set CSV, the norm report, and a manifest with a config hash and content
hashes of every artifact; reruns with the same config and seed are
byte-identical in all JSON/CSV outputs.
"""

from __future__ import annotations

import argparse
import ast
import hashlib
import json
import math
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from . import badset as badset_mod
from . import covering as covering_mod
from . import engulfing as engulfing_mod
from . import w2p as w2p_mod
from .errors import CmalabError
from .grid import GridDomain, GridFunction, build_domain, read_cache
from .sections import construct_section_chain
from .solver import SolveConfig, comparison_sandwich, solve_dirichlet

_FUNCS = {
    "sin": np.sin, "cos": np.cos, "exp": np.exp, "sqrt": np.sqrt,
    "abs": np.abs, "atan2": np.arctan2, "log": np.log,
}
_CONSTS = {"pi": math.pi, "e": math.e}


def compile_expression(expr: str, d: int):
    """Small arithmetic expression language over the node coordinates.

    Variables: x1, y1 (and x2, y2 for n = 2), r = |z|, r2 = |z|^2; constants
    pi, e; functions sin, cos, exp, sqrt, abs, log, atan2.  Evaluated
    vectorized over points; anything outside the whitelist is rejected.
    """
    tree = ast.parse(expr, mode="eval")
    allowed = (ast.Expression, ast.BinOp, ast.UnaryOp, ast.Constant, ast.Name,
               ast.Call, ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow,
               ast.USub, ast.UAdd, ast.Load)
    for node in ast.walk(tree):
        if not isinstance(node, allowed):
            raise ValueError(f"expression token {type(node).__name__} not allowed")
        if isinstance(node, ast.Call):
            if not isinstance(node.func, ast.Name) or node.func.id not in _FUNCS:
                raise ValueError("only whitelisted function calls are allowed")

    def evaluate(pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(pts)
        names = {"x1": pts[:, 0], "y1": pts[:, 1]}
        if d >= 4:
            names["x2"] = pts[:, 2]
            names["y2"] = pts[:, 3]
        names["r2"] = np.sum(pts ** 2, axis=1)
        names["r"] = np.sqrt(names["r2"])
        names.update(_CONSTS)

        def rec(node):
            if isinstance(node, ast.Expression):
                return rec(node.body)
            if isinstance(node, ast.Constant):
                return float(node.value)
            if isinstance(node, ast.Name):
                if node.id not in names:
                    raise ValueError(f"unknown variable {node.id!r}")
                return names[node.id]
            if isinstance(node, ast.BinOp):
                lhs, rhs = rec(node.left), rec(node.right)
                if isinstance(node.op, ast.Add):
                    return lhs + rhs
                if isinstance(node.op, ast.Sub):
                    return lhs - rhs
                if isinstance(node.op, ast.Mult):
                    return lhs * rhs
                if isinstance(node.op, ast.Div):
                    return lhs / rhs
                if isinstance(node.op, ast.Pow):
                    return lhs ** rhs
            if isinstance(node, ast.UnaryOp):
                val = rec(node.operand)
                return -val if isinstance(node.op, ast.USub) else +val
            if isinstance(node, ast.Call):
                return _FUNCS[node.func.id](*[rec(a) for a in node.args])
            raise ValueError("unsupported expression node")

        out = rec(tree)
        return np.broadcast_to(np.asarray(out, dtype=float), (pts.shape[0],)).copy()

    return evaluate


# ---------------------------------------------------------------------------
# Experiment configuration


@dataclass
class ExperimentConfig:
    n: int = 1
    resolution: int = 65
    gamma: float = 0.05
    profile: str = "cos3"
    eps: float = 0.01
    f_expr: str | None = None
    sigma: float = 0.2
    mu0: float = 0.1
    k_max: int = 3
    eps_bar: str | float = "recipe"
    p_list: tuple = (2.0,)
    stride: int = 4
    seed: int = 0
    chain_points: int = 12
    chain_levels: int = 2
    chain_resolution: int | None = None
    engulf_pairs: int = 60
    cover_families: int = 10
    newton_tol: float = 1e-8

    def __post_init__(self):
        if self.n not in (1, 2):
            raise ValueError("n must be 1 or 2")
        if self.resolution < 9:
            raise ValueError("resolution must be at least 9")
        if not 0.0 <= self.gamma < 0.5:
            raise ValueError("gamma must lie in [0, 0.5)")
        if self.profile == "harmonic" and self.n == 1 or self.profile == "cos3" and self.n == 2:
            # profiles are dimension-specific; swap silently to the default
            self.profile = "cos3" if self.n == 1 else "harmonic"
        if not 0.0 <= self.eps <= 0.2:
            raise ValueError("eps must lie in [0, 0.2] (perturbative regime)")
        if not 0.0 < self.sigma < 1.0:
            raise ValueError("sigma must lie in (0, 1)")
        if not 0.01 <= self.mu0 <= 0.25:
            raise ValueError("mu0 must lie in [0.01, 0.25]")
        if self.k_max < 1:
            raise ValueError("k_max must be at least 1")
        if self.stride < 1:
            raise ValueError("stride must be at least 1")
        if isinstance(self.eps_bar, str) and self.eps_bar != "recipe":
            raise ValueError("eps_bar must be a float or 'recipe'")
        if any(p < 1 for p in self.p_list):
            raise ValueError("every p must be at least 1")
        self.p_list = tuple(float(p) for p in self.p_list)
        if self.chain_resolution is None:
            # 4 real dimensions cannot afford the planar default
            self.chain_resolution = 33 if self.n == 1 else 13
        if self.chain_resolution % 2 == 0:
            raise ValueError("chain_resolution must be odd")

    def eps_bar_value(self, p: float) -> float:
        if self.eps_bar == "recipe":
            return w2p_mod.eps_bar_recipe(p, self.n)
        return float(self.eps_bar)

    def shape_spec(self) -> str:
        if self.gamma == 0.0:
            return "ball:1.0"
        return f"perturbed:{self.gamma}:{self.profile}"

    def f_function(self):
        if self.f_expr is not None:
            return compile_expression(self.f_expr, 2 * self.n)
        eps = self.eps

        def default_f(pts):
            pts = np.atleast_2d(pts)
            return 1.0 + eps * np.cos(2.0 * math.pi * pts[:, 0]) * np.cos(2.0 * math.pi * pts[:, 1])

        return default_f

    def to_dict(self) -> dict:
        out = self.__dict__.copy()
        out["p_list"] = list(self.p_list)
        return out


# ---------------------------------------------------------------------------
# Artifact helpers


def _canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def _strip_runtimes(obj):
    if isinstance(obj, dict):
        return {k: _strip_runtimes(v) for k, v in obj.items()
                if k != "runtime_seconds"}
    if isinstance(obj, list):
        return [_strip_runtimes(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    return obj


def write_json(path: Path, obj) -> None:
    path.write_text(_canonical_json(_strip_runtimes(obj)))


def sha256_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def save_instance(u: GridFunction, base: Path, report=None) -> dict:
    """Write the binary cache and a meta sidecar; returns meta."""
    base = Path(base)
    u.write_cache(base.with_suffix(".bin"))
    meta = {
        "n": u.domain.n,
        "resolution": u.domain.resolution,
        "h": u.domain.h,
        "shape": u.domain.shape.spec(),
        "report": _strip_runtimes(report.to_dict()) if report is not None else None,
    }
    write_json(base.with_suffix(".meta.json"), meta)
    return meta


def load_instance(base: Path) -> GridFunction:
    base = Path(base)
    meta = json.loads(base.with_suffix(".meta.json").read_text())
    n, resolution, h, values = read_cache(base.with_suffix(".bin"))
    dom = build_domain(meta["n"], meta["shape"], meta["resolution"])
    if dom.resolution != resolution or abs(dom.h - h) > 1e-12:
        raise CmalabError("cache and meta sidecar disagree")
    out = np.full_like(values, np.nan)
    out[dom.valued_mask] = values[dom.valued_mask]
    return GridFunction(dom, out)


# ---------------------------------------------------------------------------
# Pipeline


def _sample_base_points(dom: GridDomain, rng, count: int, radius: float = 0.45):
    pts = []
    tries = 0
    while len(pts) < count and tries < 100 * count:
        tries += 1
        p = rng.uniform(-radius, radius, size=dom.d)
        if np.linalg.norm(p) > radius:
            continue
        idx = dom.node_index(p)
        if dom.interior_mask[idx] and idx not in pts:
            pts.append(idx)
    return pts


def run_pipeline(cfg: ExperimentConfig, out_dir) -> dict:
    """Run solve -> chains -> engulf/cover -> badset -> w2p, writing all
    artifacts plus a hash manifest.  Stage failures are recorded in the
    manifest and re-raised with the stage name."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(cfg.seed)
    manifest = {
        "config": cfg.to_dict(),
        "config_hash": hashlib.sha256(
            _canonical_json(cfg.to_dict()).encode()).hexdigest(),
        "version": __version__,
        "stages": {},
        "files": {},
    }
    files: list[Path] = []
    stage = "init"
    try:
        stage = "solve"
        dom = build_domain(cfg.n, cfg.shape_spec(), cfg.resolution)
        scfg = SolveConfig(newton_tol=cfg.newton_tol)
        u, urep = solve_dirichlet(dom, cfg.f_function(), 0.0, scfg)
        v0, vrep = solve_dirichlet(dom, 1.0, 0.0, scfg)
        save_instance(u, out / "u", urep)
        save_instance(v0, out / "v0", vrep)
        u.write_csv(out / "u.csv")
        files += [out / "u.bin", out / "u.meta.json", out / "v0.bin",
                  out / "v0.meta.json", out / "u.csv"]
        manifest["stages"]["solve"] = "ok"

        stage = "certificates"
        cert = comparison_sandwich(u, v0, cfg.eps, cfg.n)
        pts_int = dom.coords(dom.interior_mask.ravel())
        qv = np.sum(pts_int ** 2, axis=1) - 1.0
        vv = v0.values[dom.interior_mask]
        barrier = {
            "gamma": cfg.gamma,
            "lower_violation": float(np.max((qv - 3 * cfg.gamma) - vv, initial=0.0)),
            "upper_violation": float(np.max(vv - (qv + 3 * cfg.gamma), initial=0.0)),
            "slack": 10.0 * dom.h ** 2,
        }
        barrier["passed"] = bool(
            barrier["lower_violation"] <= barrier["slack"]
            and barrier["upper_violation"] <= barrier["slack"])
        write_json(out / "certificates.json",
                   {"sandwich": cert.to_dict(), "barrier": barrier})
        files.append(out / "certificates.json")
        manifest["stages"]["certificates"] = "ok"

        stage = "sections"
        base_pts = _sample_base_points(dom, rng, cfg.chain_points)
        chains = []
        for idx in base_pts:
            chains.append(construct_section_chain(
                u, idx, sigma=cfg.sigma, k_max=cfg.chain_levels, cfg=scfg,
                mu0=cfg.mu0, chain_resolution=cfg.chain_resolution, v0=v0))
        write_json(out / "chains.json", [c.to_dict() for c in chains])
        files.append(out / "chains.json")
        manifest["stages"]["sections"] = "ok"

        stage = "engulf"
        verdicts = {"pass": 0, "fail": 0, "not-applicable": 0}
        pair_rows = []
        if len(chains) >= 2:
            for _ in range(cfg.engulf_pairs):
                i, j = rng.integers(0, len(chains), size=2)
                c1, c2 = chains[int(i)], chains[int(j)]
                mu2 = c2.mu_top * float(rng.uniform(0.4, 1.0))
                mu1 = min(float(rng.uniform(0.25, 4.0)) * mu2, c1.mu_top)
                try:
                    s1 = c1.section(u, mu1)
                    s2 = c2.section(u, mu2)
                except CmalabError:
                    continue
                v = engulfing_mod.check_engulfing(s1, s2)
                verdicts[v] += 1
                pair_rows.append({"i": int(i), "j": int(j), "mu1": mu1,
                                  "mu2": mu2, "verdict": v})
        write_json(out / "engulf.json", {"counts": verdicts, "pairs": pair_rows})
        files.append(out / "engulf.json")
        manifest["stages"]["engulf"] = "ok"

        stage = "cover"
        cover_out = []
        w11_rows = None
        for fam_id in range(cfg.cover_families):
            fam, X = _random_ball_family(dom, rng)
            sel = covering_mod.vitali_select(fam, X)
            fvals = np.where(dom.interior_mask,
                             np.abs(rng.standard_normal(dom.interior_mask.shape)), 0.0)
            w11 = covering_mod.weak_11_certificate(fvals, fam)
            if w11_rows is None:
                w11_rows = w11["rows"]
            cover_out.append({
                "family": fam_id,
                "selected": sel.indices,
                "disjoint": sel.disjoint,
                "covered": sel.covered,
                "weak11_ok": w11["ok"],
            })
        write_json(out / "cover.json", cover_out)
        files.append(out / "cover.json")
        if w11_rows:
            _write_two_column_csv(out / "plot_weak11.csv", "t", "level_measure",
                                  [(r["t"], r["level_measure"]) for r in w11_rows])
            files.append(out / "plot_weak11.csv")
        manifest["stages"]["cover"] = "ok"

        stage = "badset"
        p0 = cfg.p_list[0]
        eps_bar = cfg.eps_bar_value(p0)
        node_sections = badset_mod.sample_badset_chains(
            u, v0, stride=cfg.stride, levels=cfg.chain_levels,
            sigma=cfg.sigma, mu0=cfg.mu0,
            chain_resolution=cfg.chain_resolution, cfg=scfg)
        report = badset_mod.badset_decay_experiment(
            u, node_sections, eps_bar, cfg.k_max, stride=cfg.stride,
            params={"eps": cfg.eps, "gamma": cfg.gamma, "sigma": cfg.sigma})
        write_json(out / "badset.json", report.to_dict())
        _write_badset_csv(out / "badset.csv", report)
        _write_two_column_csv(out / "plot_decay.csv", "k", "measure",
                              [(r.k, r.measure) for r in report.rows])
        files += [out / "badset.json", out / "badset.csv", out / "plot_decay.csv"]
        manifest["stages"]["badset"] = "ok"

        stage = "w2p"
        norm_out = {}
        for p in cfg.p_list:
            nr = w2p_mod.norm_report(u, report, p)
            norm_out[str(p)] = nr.to_dict()
        write_json(out / "w2p.json", norm_out)
        files.append(out / "w2p.json")
        manifest["stages"]["w2p"] = "ok"
    except Exception as exc:
        manifest["stages"][stage] = f"error: {exc}"
        manifest["files"] = {f.name: sha256_file(f) for f in files if f.exists()}
        write_json(out / "manifest.json", manifest)
        raise CmalabError(f"pipeline stage {stage!r} failed: {exc}") from exc

    manifest["files"] = {f.name: sha256_file(f) for f in files}
    write_json(out / "manifest.json", manifest)
    return manifest


def _random_ball_family(dom: GridDomain, rng, members: int = 24):
    pts = dom.coords()
    r = np.linalg.norm(pts, axis=1).reshape(dom.interior_mask.shape)
    rad_lo = 2.5 * dom.h
    rad_hi = max(4.5 * dom.h, 0.3)
    ctr_range = max(0.1, 0.9 - rad_hi - 2 * dom.h)
    fam_members = []
    tries = 0
    while len(fam_members) < members and tries < 100 * members:
        tries += 1
        ctr = rng.uniform(-ctr_range, ctr_range, size=dom.d)
        rad = float(rng.uniform(rad_lo, rad_hi))
        idx = dom.node_index(ctr)
        if not dom.interior_mask[idx]:
            continue
        dist = np.linalg.norm(pts - dom.coords(idx), axis=1).reshape(r.shape)
        mask = (dist <= rad) & dom.interior_mask
        if not mask[idx]:
            continue
        try:
            fam_members.append(engulfing_mod.PointedSet.from_mask(
                dom, idx, mask, mu=rad * rad))
        except ValueError:
            continue
    fam = covering_mod.SectionFamily(fam_members, comparability=8.0)
    k = max(2, len(fam_members) // 3)
    X = np.zeros_like(dom.interior_mask)
    for i in rng.choice(len(fam_members), size=k, replace=False):
        X |= fam_members[int(i)].mask
    return fam, X


def _write_badset_csv(path: Path, report) -> None:
    import csv as _csv

    with open(path, "w", newline="") as fh:
        w = _csv.writer(fh)
        w.writerow(["k", "r_k", "measure", "measure_b06", "bound", "ratio",
                    "passed", "vacuous"])
        for r in report.rows:
            w.writerow([r.k, f"{r.r_k:.10g}", f"{r.measure:.10g}",
                        f"{r.measure_b06:.10g}", f"{r.bound:.10g}",
                        f"{r.ratio:.10g}", int(r.passed), int(r.vacuous)])


def _write_two_column_csv(path: Path, col_a: str, col_b: str, rows) -> None:
    import csv as _csv

    with open(path, "w", newline="") as fh:
        w = _csv.writer(fh)
        w.writerow([col_a, col_b])
        for a, b in rows:
            w.writerow([f"{a:.10g}", f"{b:.10g}"])


# ---------------------------------------------------------------------------
# Subcommands


def _add_instance_args(sp):
    sp.add_argument("--instance", required=True,
                    help="base path of a solver cache (without extension)")


def _cmd_solve(args) -> int:
    dom = build_domain(args.n, _shape_from_args(args), args.resolution)
    f = compile_expression(args.f_expr, dom.d) if args.f_expr else 1.0
    cfg = SolveConfig(newton_tol=args.newton_tol)
    u, rep = solve_dirichlet(dom, f, 0.0, cfg)
    if args.out:
        save_instance(u, Path(args.out), rep)
        if args.csv:
            u.write_csv(Path(args.out).with_suffix(".csv"))
    if args.report:
        write_json(Path(args.report), rep.to_dict())
    print(f"solved: iterations={rep.iterations} residual={rep.residual:.3e} "
          f"min_eig={rep.min_eigenvalue:.3e}")
    return 0


def _shape_from_args(args) -> str:
    if args.gamma and args.gamma > 0:
        return f"perturbed:{args.gamma}:{args.profile}"
    return f"ball:{args.radius}"


def _cmd_sections(args) -> int:
    u = load_instance(Path(args.instance))
    v0 = (load_instance(Path(args.v0)) if args.v0
          else solve_dirichlet(u.domain, 1.0, 0.0)[0])
    chains = []
    for spec in args.center:
        pt = np.array([float(x) for x in spec.split(",")])
        idx = u.domain.node_index(pt)
        chains.append(construct_section_chain(
            u, idx, sigma=args.sigma, k_max=args.levels, mu0=args.mu0,
            chain_resolution=args.chain_resolution, v0=v0))
    write_json(Path(args.out_chain), [c.to_dict() for c in chains])
    print(f"built {len(chains)} chains -> {args.out_chain}")
    return 0


def _cmd_engulf(args) -> int:
    u = load_instance(Path(args.instance))
    chain_data = json.loads(Path(args.chains).read_text())
    rng = np.random.default_rng(args.seed)
    rebuilt = []
    for cd in chain_data:
        idx = u.domain.node_index(np.array(cd["center"]))
        rebuilt.append(construct_section_chain(
            u, idx, sigma=cd["sigma"], k_max=len(cd["levels"]),
            mu0=cd["mu0"], mu_top=cd["mu_top"]))
    verdicts = {"pass": 0, "fail": 0, "not-applicable": 0}
    for _ in range(args.pairs):
        i, j = rng.integers(0, len(rebuilt), size=2)
        c1, c2 = rebuilt[int(i)], rebuilt[int(j)]
        mu2 = c2.mu_top * float(rng.uniform(0.4, 1.0))
        mu1 = min(float(rng.uniform(0.25, 4.0)) * mu2, c1.mu_top)
        try:
            v = engulfing_mod.check_engulfing(c1.section(u, mu1), c2.section(u, mu2))
        except CmalabError:
            continue
        verdicts[v] += 1
    if args.report:
        write_json(Path(args.report), verdicts)
    print(f"engulfing verdicts: {verdicts}")
    return 0 if verdicts["fail"] == 0 else 1


def _cmd_cover(args) -> int:
    data = json.loads(Path(args.family).read_text())
    shape = tuple(data["shape"])
    members = []
    for m in data["members"]:
        mask = np.zeros(shape, dtype=bool)
        idx = np.array(m["nodes"], dtype=int)
        mask[tuple(idx.T)] = True
        members.append(engulfing_mod.PointedSet(
            tuple(m["center"]), mask, np.array(data["lo"]), data["h"], mu=m["mu"]))
    fam = covering_mod.SectionFamily(members)
    target = np.zeros(shape, dtype=bool)
    tgt = np.loadtxt(Path(args.target_set), delimiter=",", dtype=int, ndmin=2)
    target[tuple(tgt.T)] = True
    sel = covering_mod.vitali_select(fam, target)
    result = {"selected": sel.indices, "disjoint": sel.disjoint,
              "covered": sel.covered,
              "witnesses": [list(wit) for wit in sel.witnesses]}
    if args.report:
        write_json(Path(args.report), result)
    print(f"selected {len(sel.indices)} members; disjoint={sel.disjoint} "
          f"covered={sel.covered}")
    return 0 if sel.disjoint and sel.covered else 1


def _cmd_badset(args) -> int:
    u = load_instance(Path(args.instance))
    v0 = (load_instance(Path(args.v0)) if args.v0
          else solve_dirichlet(u.domain, 1.0, 0.0)[0])
    eps_bar = (w2p_mod.eps_bar_recipe(args.recipe_p, u.domain.n)
               if args.eps_bar is None else args.eps_bar)
    ns = badset_mod.sample_badset_chains(u, v0, stride=args.stride,
                                         levels=args.levels)
    report = badset_mod.badset_decay_experiment(u, ns, eps_bar, args.k_max,
                                                stride=args.stride)
    if args.report:
        write_json(Path(args.report), report.to_dict())
        _write_badset_csv(Path(args.report).with_suffix(".csv"), report)
    for r in report.rows:
        print(f"k={r.k} r_k={r.r_k:.4f} m={r.measure:.5f} bound={r.bound:.5f} "
              f"passed={r.passed} vacuous={r.vacuous}")
    return 0 if report.all_passed() else 1


def _cmd_w2p(args) -> int:
    u = load_instance(Path(args.instance))
    v0 = (load_instance(Path(args.v0)) if args.v0
          else solve_dirichlet(u.domain, 1.0, 0.0)[0])
    eps_bar = w2p_mod.eps_bar_recipe(args.p, u.domain.n)
    ns = badset_mod.sample_badset_chains(u, v0, stride=args.stride)
    report = badset_mod.badset_decay_experiment(u, ns, eps_bar, args.k_max,
                                                stride=args.stride)
    nr = w2p_mod.norm_report(u, report, args.p)
    if args.report:
        write_json(Path(args.report), nr.to_dict())
    print(f"p={args.p}: direct={nr.direct_trace:.4f} "
          f"dyadic={nr.dyadic_trace.total:.4f} dominated={nr.dominated}")
    return 0


def _cmd_pipeline(args) -> int:
    if args.config:
        cfg = ExperimentConfig(**json.loads(Path(args.config).read_text()))
    else:
        cfg = ExperimentConfig(
            n=args.n, resolution=args.resolution, gamma=args.gamma,
            eps=args.eps, sigma=args.sigma, k_max=args.k_max,
            stride=args.stride, seed=args.seed)
    manifest = run_pipeline(cfg, args.out_dir)
    print(f"pipeline complete: {len(manifest['files'])} artifacts in {args.out_dir}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="cmalab",
        description="Numerical laboratory for complex Monge-Ampere "
                    "interior estimates")
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("solve", help="Dirichlet solve on a near-ball domain")
    sp.add_argument("--n", type=int, default=1)
    sp.add_argument("--resolution", type=int, default=65)
    sp.add_argument("--gamma", type=float, default=0.0)
    sp.add_argument("--profile", default="cos3")
    sp.add_argument("--radius", type=float, default=1.0)
    sp.add_argument("--f-expr", dest="f_expr", default=None)
    sp.add_argument("--newton-tol", dest="newton_tol", type=float, default=1e-8)
    sp.add_argument("--out", default=None)
    sp.add_argument("--csv", action="store_true")
    sp.add_argument("--report", default=None)
    sp.set_defaults(func=_cmd_solve)

    sp = sub.add_parser("sections", help="build section chains")
    _add_instance_args(sp)
    sp.add_argument("--v0", default=None)
    sp.add_argument("--center", action="append", required=True,
                    help="comma-separated coordinates; repeatable")
    sp.add_argument("--sigma", type=float, default=0.2)
    sp.add_argument("--mu0", type=float, default=0.1)
    sp.add_argument("--levels", type=int, default=3)
    sp.add_argument("--chain-resolution", dest="chain_resolution", type=int, default=49)
    sp.add_argument("--out-chain", dest="out_chain", required=True)
    sp.set_defaults(func=_cmd_sections)

    sp = sub.add_parser("engulf", help="engulfing verdict sweep")
    _add_instance_args(sp)
    sp.add_argument("--chains", required=True)
    sp.add_argument("--pairs", type=int, default=100)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--report", default=None)
    sp.set_defaults(func=_cmd_engulf)

    sp = sub.add_parser("cover", help="Vitali selection on a family")
    sp.add_argument("--family", required=True)
    sp.add_argument("--target-set", dest="target_set", required=True)
    sp.add_argument("--report", default=None)
    sp.set_defaults(func=_cmd_cover)

    sp = sub.add_parser("badset", help="bad-set decay experiment")
    _add_instance_args(sp)
    sp.add_argument("--v0", default=None)
    sp.add_argument("--eps-bar", dest="eps_bar", type=float, default=None)
    sp.add_argument("--recipe-p", dest="recipe_p", type=float, default=2.0)
    sp.add_argument("--k-max", dest="k_max", type=int, default=4)
    sp.add_argument("--stride", type=int, default=2)
    sp.add_argument("--levels", type=int, default=2)
    sp.add_argument("--report", default=None)
    sp.set_defaults(func=_cmd_badset)

    sp = sub.add_parser("w2p", help="norm accounting")
    _add_instance_args(sp)
    sp.add_argument("--v0", default=None)
    sp.add_argument("--p", type=float, default=2.0)
    sp.add_argument("--k-max", dest="k_max", type=int, default=4)
    sp.add_argument("--stride", type=int, default=4)
    sp.add_argument("--report", default=None)
    sp.set_defaults(func=_cmd_w2p)

    sp = sub.add_parser("pipeline", help="full experiment pipeline")
    sp.add_argument("--config", default=None)
    sp.add_argument("--out-dir", dest="out_dir", required=True)
    sp.add_argument("--n", type=int, default=1)
    sp.add_argument("--resolution", type=int, default=65)
    sp.add_argument("--gamma", type=float, default=0.05)
    sp.add_argument("--eps", type=float, default=0.01)
    sp.add_argument("--sigma", type=float, default=0.2)
    sp.add_argument("--k-max", dest="k_max", type=int, default=3)
    sp.add_argument("--stride", type=int, default=4)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=_cmd_pipeline)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
