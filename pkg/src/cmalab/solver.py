"""Dirichlet solver for det(u_{i jbar}) = f on near-ball domains.

Damped Newton on G(u) = log det u_{i jbar} - log f.  Each step solves the
linearized equation sum_ij u^{i jbar} d_{i jbar}(delta) = -G(u) over interior
nodes; boundary nodes are eliminated through their linear extrapolation
constraints (anchored at continuum cut points), which keeps the inner linear
system elliptic and interior-only.  A plurisubharmonicity guard halves the
step whenever the smallest complex-Hessian eigenvalue would drop below the
configured floor.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import (
    DegeneracyError,
    DomainMismatchError,
    NonConvergenceError,
)
from .grid import (
    GridDomain,
    GridFunction,
    hessian_det_field,
    hessian_eigen_fields,
    hessian_fields,
)


@dataclass
class SolveConfig:
    newton_tol: float = 1e-8
    max_iters: int = 30
    damping: float = 1.0
    psh_floor: float = 1e-6
    init_mode: str = "quadratic-plus-harmonic"
    init_values: np.ndarray | None = None

    def __post_init__(self):
        if self.newton_tol <= 0:
            raise ValueError("newton_tol must be positive")
        if not 0.0 < self.damping <= 1.0:
            raise ValueError("damping must lie in (0, 1]")
        if self.psh_floor <= 0:
            raise ValueError("psh_floor must be positive")
        if self.init_mode not in ("quadratic-plus-harmonic", "supplied"):
            raise ValueError(f"unknown init_mode {self.init_mode!r}")


@dataclass
class SolveReport:
    iterations: int
    residual: float
    min_eigenvalue: float
    boundary_max_error: float
    converged: bool
    runtime_seconds: float
    quad_distance: float = float("nan")

    def to_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "residual": self.residual,
            "min_eigenvalue": self.min_eigenvalue,
            "boundary_max_error": self.boundary_max_error,
            "converged": self.converged,
            "runtime_seconds": round(self.runtime_seconds, 3),
            "quad_distance": self.quad_distance,
        }


# ---------------------------------------------------------------------------
# Assembly machinery (cached per domain)


def _axis_offset(d, a, s):
    o = [0] * d
    o[a] = s
    return tuple(o)


def _get_assembly(dom: GridDomain) -> dict:
    if "assembly" in dom._cache:
        return dom._cache["assembly"]
    d = dom.d
    res = dom.resolution
    strides = np.array([res ** (d - 1 - a) for a in range(d)], dtype=np.int64)

    int_flat = np.flatnonzero(dom.interior_mask.ravel()).astype(np.int64)
    bnd_flat = dom.bc_table["flat"]
    n_int, n_bnd = int_flat.size, bnd_flat.size

    int_col = np.full(res ** d, -1, dtype=np.int64)
    int_col[int_flat] = np.arange(n_int)
    bnd_col = np.full(res ** d, -1, dtype=np.int64)
    bnd_col[bnd_flat] = np.arange(n_bnd)

    idx_nd = np.argwhere(dom.interior_mask)

    def split_cols(off):
        """Interior-column and boundary-column ids of neighbor off."""
        nb = (idx_nd + np.asarray(off, dtype=np.int64)) @ strides
        ic = int_col[nb]
        bcn = bnd_col[nb]
        if np.any((ic < 0) & (bcn < 0)):
            raise RuntimeError("interior stencil reaches an unvalued node")
        return ic, bcn

    ops = {}
    for a in range(d):
        entries = [(_axis_offset(d, a, 1), 1.0), (_axis_offset(d, a, -1), 1.0),
                   (tuple([0] * d), -2.0)]
        ops[("pure", a)] = [(c,) + split_cols(off) for off, c in entries]
    if dom.n == 2:
        for a, b in ((0, 2), (1, 3), (0, 3), (1, 2)):
            entries = []
            for sa, sb, sign in ((1, 1, 0.25), (1, -1, -0.25), (-1, 1, -0.25), (-1, -1, 0.25)):
                o = [0] * d
                o[a] = sa
                o[b] = sb
                entries.append((tuple(o), sign))
            ops[("mixed", a, b)] = [(c,) + split_cols(off) for off, c in entries]

    # Boundary substitution u_B = S u_I + E diag(coef_c) g_cut.  Supports sit
    # strictly deeper along the extrapolation ray, so the boundary-on-boundary
    # part is nilpotent and the Neumann closure below terminates.
    bc = dom.bc_table
    ri, ci, vi, rb, cb, vb = [], [], [], [], [], []
    for which in (1, 2):
        idx = bc[f"idx{which}"]
        coef = bc[f"coef_{which}"]
        use = idx >= 0
        tgt = np.maximum(idx, 0)
        is_int = use & (int_col[tgt] >= 0)
        is_bnd = use & (bnd_col[tgt] >= 0)
        ri.append(np.flatnonzero(is_int))
        ci.append(int_col[idx[is_int]])
        vi.append(coef[is_int])
        rb.append(np.flatnonzero(is_bnd))
        cb.append(bnd_col[idx[is_bnd]])
        vb.append(coef[is_bnd])
    C_I = sp.coo_matrix(
        (np.concatenate(vi), (np.concatenate(ri), np.concatenate(ci))),
        shape=(n_bnd, n_int)).tocsr()
    C_B = sp.coo_matrix(
        (np.concatenate(vb), (np.concatenate(rb), np.concatenate(cb))),
        shape=(n_bnd, n_bnd)).tocsr()
    E = sp.identity(n_bnd, format="csr")
    P = C_B.copy()
    k = 0
    while P.nnz and k < 64:
        E = (E + P).tocsr()
        P = (P @ C_B).tocsr()
        P.eliminate_zeros()
        k += 1
    if P.nnz:
        raise RuntimeError("boundary constraint graph has a cycle")
    S = (E @ C_I).tocsr()

    asm = {
        "int_flat": int_flat, "bnd_flat": bnd_flat,
        "n_int": n_int, "n_bnd": n_bnd,
        "ops": ops,
        "S": S, "E": E, "coef_c": bc["coef_c"],
    }
    dom._cache["assembly"] = asm
    return asm


def _g_offset(asm: dict, g_cut: np.ndarray) -> np.ndarray:
    """Boundary offset vector: E diag(coef_c) g_cut."""
    return asm["E"] @ (asm["coef_c"] * g_cut)


def _assemble(dom: GridDomain, weights: dict) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """Weighted difference operator restricted to interior unknowns.

    Returns (A_int, A_IB) with A_int = A_II + A_IB S already folded.
    """
    asm = _get_assembly(dom)
    n_int, n_bnd = asm["n_int"], asm["n_bnd"]
    inv_h2 = 1.0 / dom.h ** 2
    irow = np.arange(n_int)
    ri, ci, vi = [], [], []
    rb, cb, vb = [], [], []
    for key, entries in asm["ops"].items():
        w = weights.get(key)
        if w is None:
            continue
        for c, icol, bcol in entries:
            coef = w * (c * inv_h2)
            mi = icol >= 0
            ri.append(irow[mi])
            ci.append(icol[mi])
            vi.append(coef[mi] if isinstance(coef, np.ndarray) else np.full(mi.sum(), coef))
            mb = bcol >= 0
            if np.any(mb):
                rb.append(irow[mb])
                cb.append(bcol[mb])
                vb.append(coef[mb] if isinstance(coef, np.ndarray) else np.full(mb.sum(), coef))
    A_II = sp.coo_matrix(
        (np.concatenate(vi), (np.concatenate(ri), np.concatenate(ci))),
        shape=(n_int, n_int)).tocsr()
    if rb:
        A_IB = sp.coo_matrix(
            (np.concatenate(vb), (np.concatenate(rb), np.concatenate(cb))),
            shape=(n_int, n_bnd)).tocsr()
    else:
        A_IB = sp.csr_matrix((n_int, n_bnd))
    A_int = (A_II + A_IB @ asm["S"]).tocsr()
    return A_int, A_IB


def _linear_solve(A: sp.csr_matrix, rhs: np.ndarray, wide: bool = False) -> np.ndarray:
    """Solve the interior system.

    Planar (n = 1) grids factor cheaply and go direct; 4-dimensional grids
    (wide=True) use smoothed-aggregation AMG with ILU and direct solves as
    fallbacks.
    """
    n = A.shape[0]
    scale = float(np.max(np.abs(rhs))) or 1.0
    if not wide or n < 3000:
        return spla.spsolve(A.tocsc(), rhs)
    try:
        import pyamg

        neg = (-A).tocsr()
        ml = pyamg.smoothed_aggregation_solver(neg, symmetry="nonsymmetric",
                                               max_coarse=500)
        x = ml.solve(-rhs, tol=1e-13, accel="gmres", maxiter=300)
        if np.max(np.abs(A @ x - rhs)) <= 1e-10 * scale:
            return x
    except Exception:
        pass
    try:
        ilu = spla.spilu((-A).tocsc(), drop_tol=1e-4, fill_factor=15)
        M = spla.LinearOperator(A.shape, ilu.solve)
        x, info = spla.gmres((-A).tocsr(), -rhs, M=M, rtol=1e-13, atol=0.0,
                             maxiter=400, restart=80)
        if info == 0 and np.max(np.abs(A @ x - rhs)) <= 1e-10 * scale:
            return x
    except RuntimeError:
        pass
    return spla.spsolve(A.tocsc(), rhs)


def _hessian_weights(dom: GridDomain, fields: dict, int_flat) -> dict:
    """Per-operator coefficient arrays of the linearized operator
    tr(H^{-1} dH) over interior nodes."""
    if dom.n == 1:
        h11 = fields["h11"].ravel()[int_flat]
        w = 0.25 / h11
        return {("pure", 0): w, ("pure", 1): w}
    h11 = fields["h11"].ravel()[int_flat]
    h22 = fields["h22"].ravel()[int_flat]
    h12re = fields["h12re"].ravel()[int_flat]
    h12im = fields["h12im"].ravel()[int_flat]
    det = h11 * h22 - (h12re ** 2 + h12im ** 2)
    inv11 = h22 / det
    inv22 = h11 / det
    inv12re = -h12re / det
    inv12im = -h12im / det
    return {
        ("pure", 0): 0.25 * inv11, ("pure", 1): 0.25 * inv11,
        ("pure", 2): 0.25 * inv22, ("pure", 3): 0.25 * inv22,
        ("mixed", 0, 2): 0.5 * inv12re, ("mixed", 1, 3): 0.5 * inv12re,
        ("mixed", 0, 3): 0.5 * inv12im, ("mixed", 1, 2): -0.5 * inv12im,
    }


# ---------------------------------------------------------------------------
# Field/data plumbing


def _field_on_interior(dom: GridDomain, f) -> np.ndarray:
    if isinstance(f, GridFunction):
        vals = f.values.ravel()[np.flatnonzero(dom.interior_mask.ravel())]
    elif callable(f):
        pts = dom.coords(dom.interior_mask.ravel())
        vals = np.asarray(f(pts), dtype=float)
    else:
        vals = np.full(int(dom.interior_mask.sum()), float(f))
    return vals


def _g_at_cuts(dom: GridDomain, g) -> np.ndarray:
    cuts = dom.bc_table["cuts"]
    if isinstance(g, GridFunction):
        return g.interp(cuts)
    if callable(g):
        return np.asarray(g(cuts), dtype=float)
    return np.full(cuts.shape[0], float(g))


def _reference_quadratic(dom: GridDomain):
    r = getattr(dom.shape, "radius", 1.0)

    def q(pts):
        return np.sum(np.asarray(pts) ** 2, axis=-1) - r * r

    return q


def _set_boundary(dom: GridDomain, values_flat: np.ndarray, g_off: np.ndarray) -> None:
    asm = _get_assembly(dom)
    values_flat[asm["bnd_flat"]] = asm["S"] @ values_flat[asm["int_flat"]] + g_off


def _boundary_residual(dom: GridDomain, values_flat: np.ndarray, g_cut: np.ndarray) -> np.ndarray:
    bc = dom.bc_table
    v = bc["coef_c"] * g_cut
    for which in (1, 2):
        idx = bc[f"idx{which}"]
        use = idx >= 0
        v[use] += bc[f"coef_{which}"][use] * values_flat[idx[use]]
    return values_flat[bc["flat"]] - v


def harmonic_extension(dom: GridDomain, cut_values: np.ndarray) -> np.ndarray:
    """Discrete-harmonic extension of cut-point data; full-box flat array."""
    asm = _get_assembly(dom)
    weights = {("pure", a): np.ones(asm["n_int"]) for a in range(dom.d)}
    A_int, A_IB = _assemble(dom, weights)
    g_off = _g_offset(asm, cut_values)
    x = _linear_solve(A_int, -A_IB @ g_off, wide=dom.d == 4)
    out = np.full(dom.resolution ** dom.d, np.nan)
    out[asm["int_flat"]] = x
    out[asm["bnd_flat"]] = asm["S"] @ x + g_off
    return out


# ---------------------------------------------------------------------------
# The solver


def solve_dirichlet(domain: GridDomain, f, g, cfg: SolveConfig | None = None
                    ) -> tuple[GridFunction, SolveReport]:
    """Solve det(u_{i jbar}) = f in the domain with Dirichlet data g.

    f may be a GridFunction, callable, or scalar (positive on the interior);
    g a callable/scalar/GridFunction sampled at the continuum cut points.
    Returns the solution and a residual certificate.  Raises
    NonConvergenceError or DegeneracyError on failure.
    """
    cfg = cfg or SolveConfig()
    t0 = time.perf_counter()
    asm = _get_assembly(domain)
    n_int = asm["n_int"]
    int_flat = asm["int_flat"]

    f_int = _field_on_interior(domain, f)
    if np.any(~np.isfinite(f_int)) or np.any(f_int <= 0.0):
        raise ValueError("right side f must be finite and positive on the interior")
    log_f = np.log(f_int)
    g_cut = _g_at_cuts(domain, g)
    if np.any(~np.isfinite(g_cut)):
        raise ValueError("boundary data g must be finite at cut points")
    g_off = _g_offset(asm, g_cut)

    q = _reference_quadratic(domain)
    if cfg.init_mode == "supplied":
        if cfg.init_values is None:
            raise ValueError("init_mode 'supplied' needs init_values")
        u_flat = np.asarray(cfg.init_values, dtype=float).ravel().copy()
    else:
        pts = domain.coords()
        u_flat = np.full(pts.shape[0], np.nan)
        valued = domain.valued_mask.ravel()
        u_flat[valued] = q(pts[valued])
        gap = g_cut - q(domain.bc_table["cuts"])
        if np.max(np.abs(gap)) > 1e-13:
            ext = harmonic_extension(domain, gap)
            u_flat[valued] += ext[valued]
    _set_boundary(domain, u_flat, g_off)

    shape_nd = (domain.resolution,) * domain.d

    def interior_state(u_arr):
        gf = GridFunction(domain, u_arr.reshape(shape_nd))
        fields = hessian_fields(gf)
        lam_min, _ = hessian_eigen_fields(fields)
        det = hessian_det_field(fields)
        return fields, lam_min.ravel()[int_flat], det.ravel()[int_flat]

    fields, lam_min, det = interior_state(u_flat)
    if np.nanmin(lam_min) <= cfg.psh_floor:
        raise DegeneracyError(
            "initial guess is not strictly plurisubharmonic "
            f"(min eigenvalue {np.nanmin(lam_min):.3e})")

    residual = float(np.max(np.abs(np.log(det) - log_f)))
    iters = 0
    while residual > cfg.newton_tol:
        if iters >= cfg.max_iters:
            raise NonConvergenceError(
                f"Newton did not reach {cfg.newton_tol:.1e} in {cfg.max_iters} "
                f"iterations (last residual {residual:.3e})", residual, iters)
        weights = _hessian_weights(domain, fields, int_flat)
        A_int, _ = _assemble(domain, weights)
        delta = _linear_solve(A_int, -(np.log(det) - log_f), wide=domain.d == 4)

        step = cfg.damping
        halvings = 0
        while True:
            u_try = u_flat.copy()
            u_try[int_flat] += step * delta
            _set_boundary(domain, u_try, g_off)
            fields_try, lam_try, det_try = interior_state(u_try)
            if np.nanmin(lam_try) > cfg.psh_floor and np.all(det_try > 0.0):
                break
            halvings += 1
            if halvings > 5:
                raise DegeneracyError(
                    "plurisubharmonicity lost; damping could not repair it "
                    f"(min eigenvalue {np.nanmin(lam_try):.3e})")
            step *= 0.5
        u_flat, fields, lam_min, det = u_try, fields_try, lam_try, det_try
        residual = float(np.max(np.abs(np.log(det) - log_f)))
        iters += 1

    bmax = float(np.max(np.abs(_boundary_residual(domain, u_flat, g_cut)))) \
        if asm["n_bnd"] else 0.0
    u = GridFunction(domain, u_flat.reshape(shape_nd))
    pts_v = domain.coords(domain.valued_mask.ravel())
    quad_dist = float(np.max(np.abs(
        u_flat[np.flatnonzero(domain.valued_mask.ravel())] - q(pts_v))))
    report = SolveReport(
        iterations=iters,
        residual=residual,
        min_eigenvalue=float(np.nanmin(lam_min)),
        boundary_max_error=bmax,
        converged=True,
        runtime_seconds=time.perf_counter() - t0,
        quad_distance=quad_dist,
    )
    return u, report


# ---------------------------------------------------------------------------
# Comparison certificates


@dataclass
class SandwichCertificate:
    violation_lower: float
    violation_upper: float
    max_abs_diff: float
    bound: float
    slack: float
    passed: bool

    def to_dict(self) -> dict:
        return {
            "violation_lower": self.violation_lower,
            "violation_upper": self.violation_upper,
            "max_abs_diff": self.max_abs_diff,
            "bound": self.bound,
            "slack": self.slack,
            "passed": self.passed,
        }


def comparison_sandwich(u: GridFunction, v0: GridFunction, eps: float, n: int,
                        slack: float | None = None) -> SandwichCertificate:
    """Certify (1+eps)^{1/n} v0 <= u <= (1-eps)^{1/n} v0 and |u - v0| <= 4 eps.

    Both functions must share the lattice and vanish on the continuum
    boundary; violations are reported against the supplied slack (default
    10 h^2).
    """
    dom = u.domain
    if not dom.same_lattice(v0.domain):
        raise DomainMismatchError("u and v0 live on different lattices")
    if not 0.0 <= eps < 0.5:
        raise ValueError("eps must lie in [0, 0.5)")
    slack = 10.0 * dom.h ** 2 if slack is None else slack

    cuts = dom.bc_table["cuts"]
    for name, fn in (("u", u), ("v0", v0)):
        bvals = fn.interp(cuts)
        worst = float(np.nanmax(np.abs(bvals)))
        if worst > slack + 1e-8:
            raise ValueError(
                f"{name} does not vanish on the boundary (max {worst:.3e})")

    mask = dom.interior_mask
    uu = u.values[mask]
    vv = v0.values[mask]
    lo = (1.0 + eps) ** (1.0 / n) * vv
    hi = (1.0 - eps) ** (1.0 / n) * vv
    viol_lower = float(np.max(lo - uu, initial=0.0))
    viol_upper = float(np.max(uu - hi, initial=0.0))
    max_diff = float(np.max(np.abs(uu - vv), initial=0.0))
    bound = 4.0 * eps
    passed = viol_lower <= slack and viol_upper <= slack and max_diff <= bound + slack
    return SandwichCertificate(viol_lower, viol_upper, max_diff, bound, slack, passed)


def stability_gap(u: GridFunction, v: GridFunction, f, g, q: float
                  ) -> tuple[float, float]:
    """Left and right side of the perturbation stability estimate.

    lhs = sup_interior(v - u) - sup_boundary(v - u); rhs = ||f - g||_{L^q}^{1/n}.
    The proportionality constant is measured by the caller, never asserted.
    """
    dom = u.domain
    if not dom.same_lattice(v.domain):
        raise DomainMismatchError("u and v live on different lattices")
    if q <= 1:
        raise ValueError("q must exceed 1")
    diff = v.values - u.values
    lhs = float(np.nanmax(diff[dom.interior_mask]) - np.nanmax(diff[dom.boundary_mask]))
    f_int = _field_on_interior(dom, f)
    g_int = _field_on_interior(dom, g)
    lq = float(np.sum(np.abs(f_int - g_int) ** q) * dom.h ** dom.d) ** (1.0 / q)
    return lhs, lq ** (1.0 / dom.n)
