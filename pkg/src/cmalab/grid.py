"""Lattice discretization of near-ball domains in C^n (n = 1 or 2).

A domain is a uniform Cartesian grid on a symmetric box in R^{2n}.  Nodes
strictly inside the continuum shape with full stencil support are interior;
the value-carrying collar around them is the boundary set.  Dirichlet data
is tied to the continuum boundary through per-node extrapolation constraints
anchored at cut points, so that boundary imposition stays second-order
accurate (and exact on quadratics).

Complex derivatives follow d/dz_i = (d/dx_i - i d/dy_i)/2; real coordinate
axes are ordered (x_1, y_1, ..., x_n, y_n).
"""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateHessianError,
    MemoryCapError,
    StencilViolationError,
)

CACHE_MAGIC = b"CMAG"
CACHE_VERSION = 1

# Offsets the complex-Hessian stencil touches.  Pure second differences use
# axis steps; the mixed terms of u_{z_i zbar_j} (i != j) pair a real axis of
# z_i with one of z_j, so n = 1 needs no diagonals at all and n = 2 only
# cross-pair diagonals (never x_i with its own y_i).
def _stencil_offsets(d: int) -> list[tuple[int, ...]]:
    offs = []
    for a in range(d):
        for s in (-1, 1):
            o = [0] * d
            o[a] = s
            offs.append(tuple(o))
    n = d // 2
    for i in range(n):
        for j in range(i + 1, n):
            for a in (2 * i, 2 * i + 1):
                for b in (2 * j, 2 * j + 1):
                    for sa in (-1, 1):
                        for sb in (-1, 1):
                            o = [0] * d
                            o[a] = sa
                            o[b] = sb
                            offs.append(tuple(o))
    return offs


# ---------------------------------------------------------------------------
# Continuum shapes


class BallShape:
    """Exact ball of radius r centered at the origin."""

    kind = "ball"

    def __init__(self, radius: float = 1.0):
        if radius <= 0:
            raise ValueError("radius must be positive")
        self.radius = float(radius)
        self.gamma = 0.0

    def outer_radius(self) -> float:
        return self.radius

    def signed(self, pts: np.ndarray) -> np.ndarray:
        return np.linalg.norm(pts, axis=-1) - self.radius

    def spec(self) -> dict:
        return {"kind": self.kind, "radius": self.radius}


_PROFILES = {}


def _register_profile(name):
    def deco(fn):
        _PROFILES[name] = fn
        return fn
    return deco


@_register_profile("none")
def _profile_none(pts, r):
    return np.zeros(pts.shape[0])


@_register_profile("cos3")
def _profile_cos3(pts, r):
    # cos(3*theta) in the first complex plane; |.| <= 1 by construction.
    theta = np.arctan2(pts[:, 1], pts[:, 0])
    return np.cos(3.0 * theta)


@_register_profile("harmonic")
def _profile_harmonic(pts, r):
    # (x_1^2 - y_1^2)/|x|^2, a smooth direction function bounded by 1.
    r2 = np.maximum(r * r, 1e-300)
    return (pts[:, 0] ** 2 - pts[:, 1] ** 2) / r2


class PerturbedBallShape:
    """Radial graph r(omega) = 1 + gamma * profile(omega), |profile| <= 1."""

    kind = "perturbed_ball"

    def __init__(self, gamma: float, profile: str = "cos3"):
        if not 0.0 <= gamma < 0.5:
            raise ValueError("gamma must lie in [0, 0.5)")
        if profile not in _PROFILES:
            raise ValueError(f"unknown profile {profile!r}")
        self.gamma = float(gamma)
        self.profile = profile

    def outer_radius(self) -> float:
        return 1.0 + self.gamma

    def signed(self, pts: np.ndarray) -> np.ndarray:
        r = np.linalg.norm(pts, axis=-1)
        rho = _PROFILES[self.profile](pts, r)
        out = r - (1.0 + self.gamma * rho)
        # The origin is always deep inside.
        return np.where(r < 1e-14, -1.0, out)

    def spec(self) -> dict:
        return {"kind": self.kind, "gamma": self.gamma, "profile": self.profile}


class SublevelShape:
    """Implicit domain {w <= 0} for a multilinearly interpolated field w.

    Used when a section of a solved instance is re-discretized in normalized
    coordinates: the transported function itself is the level function.
    Points where w is unavailable count as outside.
    """

    kind = "sublevel"

    def __init__(self, axes: list[np.ndarray], values: np.ndarray):
        self.axes = axes
        self.values = values
        self.gamma = float("nan")

    def outer_radius(self) -> float:
        return float(self.axes[0][-1])

    def signed(self, pts: np.ndarray) -> np.ndarray:
        v = interp_multilinear(self.axes, self.values, pts)
        return np.where(np.isnan(v), 1.0, v)

    def spec(self) -> dict:
        return {"kind": self.kind}


def shape_from_spec(spec) -> "BallShape | PerturbedBallShape":
    """Build a shape from an object, a dict, or a compact string.

    Strings: "ball" / "ball:0.8" / "perturbed:0.05" / "perturbed:0.05:cos3".
    """
    if hasattr(spec, "signed"):
        return spec
    if isinstance(spec, dict):
        kind = spec["kind"]
        if kind == "ball":
            return BallShape(spec.get("radius", 1.0))
        if kind == "perturbed_ball":
            return PerturbedBallShape(spec["gamma"], spec.get("profile", "cos3"))
        raise ValueError(f"unknown shape kind {kind!r}")
    if isinstance(spec, str):
        parts = spec.split(":")
        if parts[0] == "ball":
            return BallShape(float(parts[1]) if len(parts) > 1 else 1.0)
        if parts[0] == "perturbed":
            gamma = float(parts[1]) if len(parts) > 1 else 0.0
            profile = parts[2] if len(parts) > 2 else "cos3"
            return PerturbedBallShape(gamma, profile)
    raise ValueError(f"cannot interpret shape spec {spec!r}")


# ---------------------------------------------------------------------------
# Multilinear interpolation on the full box


def interp_multilinear(axes: list[np.ndarray], values: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Multilinear interpolation; NaN wherever a cell corner is unvalued
    or the point leaves the box."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    d = len(axes)
    m = pts.shape[0]
    lo = np.array([ax[0] for ax in axes])
    h = axes[0][1] - axes[0][0]
    res = values.shape[0]

    t = (pts - lo) / h
    inside = np.all((t >= -1e-9) & (t <= res - 1 + 1e-9), axis=1)
    t = np.clip(t, 0.0, res - 1)
    base = np.minimum(t.astype(int), res - 2)
    frac = t - base

    out = np.zeros(m)
    for corner in range(1 << d):
        idx = []
        w = np.ones(m)
        for a in range(d):
            bit = (corner >> a) & 1
            idx.append(base[:, a] + bit)
            w = w * (frac[:, a] if bit else 1.0 - frac[:, a])
        out = out + w * values[tuple(idx)]
    out[~inside] = np.nan
    return out


# ---------------------------------------------------------------------------
# Grid domain


@dataclass(eq=False)
class GridDomain:
    """Uniform lattice covering a near-ball continuum domain."""

    n: int
    resolution: int
    h: float
    box: np.ndarray                 # (d, 2) lower/upper bounds
    shape: object
    interior_mask: np.ndarray       # bool, (res,)*d
    boundary_mask: np.ndarray       # bool, (res,)*d
    bc_table: dict = field(repr=False, default=None)
    _cache: dict = field(repr=False, default_factory=dict)

    @property
    def d(self) -> int:
        return 2 * self.n

    @property
    def axes(self) -> list[np.ndarray]:
        if "axes" not in self._cache:
            self._cache["axes"] = [
                np.linspace(self.box[a, 0], self.box[a, 1], self.resolution)
                for a in range(self.d)
            ]
        return self._cache["axes"]

    @property
    def valued_mask(self) -> np.ndarray:
        return self.interior_mask | self.boundary_mask

    def coords(self, mask_or_index=None) -> np.ndarray:
        """Physical coordinates; of all nodes matching a mask, or of one index."""
        if isinstance(mask_or_index, tuple):
            return np.array([self.axes[a][mask_or_index[a]] for a in range(self.d)])
        mesh = np.meshgrid(*self.axes, indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=1)
        if mask_or_index is None:
            return pts
        return pts[np.asarray(mask_or_index).ravel()]

    def node_index(self, point) -> tuple:
        """Index tuple of the lattice node nearest to a physical point."""
        point = np.asarray(point, dtype=float)
        idx = np.rint((point - self.box[:, 0]) / self.h).astype(int)
        idx = np.clip(idx, 0, self.resolution - 1)
        return tuple(int(i) for i in idx)

    def measure(self, mask_or_count) -> float:
        """Grid measure: node count times h^(2n)."""
        count = int(np.count_nonzero(mask_or_count)) if isinstance(
            mask_or_count, np.ndarray) else int(mask_or_count)
        return count * self.h ** self.d

    def interp(self, values: np.ndarray, pts: np.ndarray) -> np.ndarray:
        return interp_multilinear(self.axes, values, pts)

    def same_lattice(self, other: "GridDomain") -> bool:
        return (
            self.n == other.n
            and self.resolution == other.resolution
            and np.allclose(self.box, other.box)
        )


def build_domain(n: int, shape_spec, resolution: int,
                 memory_cap_bytes: int = 2 << 30) -> GridDomain:
    """Discretize a near-ball domain in C^n on a symmetric box.

    The box half-width is the shape's outer radius, so an exact unit ball at
    resolution R has h = 2/(R-1).  Interior nodes are strictly inside the
    shape with full stencil support; boundary nodes carry Dirichlet
    constraints anchored at continuum cut points.
    """
    if n not in (1, 2):
        raise ValueError("complex dimension must be 1 or 2")
    if resolution < 9:
        raise ValueError("resolution must be at least 9")
    shape = shape_from_spec(shape_spec)
    d = 2 * n
    # A handful of full-box float64 arrays are alive during a solve.
    footprint = 12 * 8 * resolution ** d
    if footprint > memory_cap_bytes:
        raise MemoryCapError(
            f"resolution {resolution} in {d} real dimensions needs about "
            f"{footprint / 1e9:.1f} GB (> cap {memory_cap_bytes / 1e9:.1f} GB)")

    L = shape.outer_radius()
    box = np.array([[-L, L]] * d)
    h = 2.0 * L / (resolution - 1)
    axes = [np.linspace(-L, L, resolution) for _ in range(d)]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    signed = shape.signed(pts).reshape((resolution,) * d)

    inside = signed < 0.0

    def shifted(mask, off):
        """mask evaluated at x + off, False outside the box."""
        out = np.zeros_like(mask)
        src = tuple(
            slice(o, None) if o > 0 else slice(None, o if o < 0 else None)
            for o in off
        )
        dst = tuple(
            slice(None, -o) if o > 0 else slice(-o if o < 0 else 0, None)
            for o in off
        )
        out[dst] = mask[src]
        return out

    axis_offsets = []
    for a in range(d):
        for s in (-1, 1):
            o = [0] * d
            o[a] = s
            axis_offsets.append(tuple(o))

    ring = np.zeros_like(inside)
    for off in axis_offsets:
        ring |= (~inside) & shifted(inside, off)

    ok = inside | ring
    good = inside.copy()
    offsets = _stencil_offsets(d)
    for off in offsets:
        good &= shifted(ok, off)
    interior = inside & good

    # Boundary nodes are exactly the stencil-referenced collar of the
    # interior; unreferenced ring nodes carry no information and are dropped.
    referenced = np.zeros_like(inside)
    for off in offsets:
        referenced |= shifted(interior, off)
    boundary = referenced & ~interior

    dom = GridDomain(
        n=n, resolution=resolution, h=h, box=box, shape=shape,
        interior_mask=interior, boundary_mask=boundary,
    )
    dom.bc_table = _build_bc_table(dom, signed)
    return dom


def _build_bc_table(dom: GridDomain, signed: np.ndarray) -> dict:
    """Per boundary node: a collinear extrapolation constraint through the
    continuum cut point and one or two interior values.

        u_b = c_cut * g(x_cut) + c_1 * u(x_1) + c_2 * u(x_2)

    The three-point (quadratic) form is exact on quadratic functions; it
    degrades to a two-point form when the second support node is missing or
    the cut point sits too close to x_1.  Every boundary node has an interior
    stencil neighbor by construction.
    """
    d = dom.d
    res = dom.resolution
    shape = dom.shape
    h = dom.h
    lo = dom.box[:, 0]
    interior_flat = dom.interior_mask.ravel()
    valued_flat = dom.valued_mask.ravel()
    signed_flat = signed.ravel()
    strides = np.array([res ** (d - 1 - a) for a in range(d)], dtype=np.int64)

    b_idx = np.argwhere(dom.boundary_mask).astype(np.int64)
    nb = b_idx.shape[0]
    # Candidate directions are richer than the stencil: any axis or two-axis
    # diagonal may carry the extrapolation line.
    steps = []
    for a in range(d):
        for s in (-1, 1):
            o = [0] * d
            o[a] = s
            steps.append(o)
    for a in range(d):
        for b in range(a + 1, d):
            for sa in (-1, 1):
                for sb in (-1, 1):
                    o = [0] * d
                    o[a] = sa
                    o[b] = sb
                    steps.append(o)
    steps = np.array(steps, dtype=np.int64)

    # Score each direction by the normalized depth of x_1, with a strong
    # bonus when x_2 is valued (making the three-point form available).
    best_score = np.full(nb, -np.inf)
    best_step = np.zeros((nb, d), dtype=np.int64)
    for st in steps:
        slen_st = math.sqrt(float(st @ st))
        n1 = b_idx + st
        n2 = b_idx + 2 * st
        valid = np.all((n1 >= 0) & (n1 < res), axis=1)
        score = np.full(nb, -np.inf)
        f1 = n1[valid] @ strides
        sub = interior_flat[f1]
        rows_v = np.flatnonzero(valid)[sub]
        score[rows_v] = -signed_flat[f1[sub]] / slen_st
        ok2 = np.all((n2 >= 0) & (n2 < res), axis=1)
        f2 = np.zeros(nb, dtype=np.int64)
        f2[ok2] = n2[ok2] @ strides
        ok2 &= valued_flat[f2]
        score[ok2] += 1e6
        better = score > best_score
        best_score[better] = score[better]
        best_step[better] = st
    if not np.all(np.isfinite(best_score)):
        raise RuntimeError("boundary node without an interior stencil neighbor")

    xb = lo + h * b_idx
    slen = h * np.sqrt((best_step ** 2).sum(axis=1).astype(float))
    dhat = best_step * h / slen[:, None]
    sb = signed_flat[b_idx @ strides]

    t_c = np.zeros(nb)
    ring = sb > 0.0
    if np.any(ring):
        t_c[ring] = _bisect_cut_batch(shape, xb[ring], xb[ring] + best_step[ring] * h)
    dem = sb < 0.0
    if np.any(dem):
        rows = np.flatnonzero(dem)
        for reach in (1.0, 2.0):
            if rows.size == 0:
                break
            x_out = xb[rows] - dhat[rows] * (reach * slen[rows])[:, None]
            s_out = shape.signed(x_out)
            hit = s_out > 0.0
            rr = rows[hit]
            if rr.size:
                t_c[rr] = -_bisect_cut_batch(shape, xb[rr], x_out[hit])
            rows = rows[~hit]
        # Unresolved leftovers anchor at the node itself (t_c stays 0).
    cuts = xb + dhat * t_c[:, None]

    def flat_of(nidx):
        ok = np.all((nidx >= 0) & (nidx < res), axis=1)
        f = np.full(nb, -1, dtype=np.int64)
        f[ok] = nidx[ok] @ strides
        have = ok.copy()
        have[ok] = valued_flat[f[ok]]
        return f, have

    f1, have1 = flat_of(b_idx + best_step)
    f2, have2 = flat_of(b_idx + 2 * best_step)
    f3, have3 = flat_of(b_idx + 3 * best_step)

    t1 = slen
    t2 = 2.0 * slen
    t3 = 3.0 * slen

    idx1 = np.full(nb, -1, dtype=np.int64)
    idx2 = np.full(nb, -1, dtype=np.int64)
    coef_c = np.zeros(nb)
    coef_1 = np.zeros(nb)
    coef_2 = np.zeros(nb)

    def quad_fill(mask, fa, ta, fb, tb):
        qc, qa, qb = t_c[mask], ta[mask], tb[mask]
        idx1[mask] = fa[mask]
        idx2[mask] = fb[mask]
        coef_c[mask] = (qa * qb) / ((t_c[mask] - qa) * (t_c[mask] - qb))
        coef_1[mask] = (qc * qb) / ((qa - qc) * (qa - qb))
        coef_2[mask] = (qc * qa) / ((qb - qc) * (qb - qa))

    def lin_fill(mask, fa, ta):
        lc, la = t_c[mask], ta[mask]
        idx1[mask] = fa[mask]
        coef_c[mask] = -la / (lc - la)
        coef_1[mask] = -lc / (la - lc)

    # Three-point extrapolation is exact on quadratics; the cut point only
    # disqualifies a support node when it nearly collides with it.
    clear1 = (t1 - t_c) > 1e-3 * slen
    quad12 = have1 & have2 & clear1
    quad23 = ~quad12 & have2 & have3
    lin2 = ~quad12 & ~quad23 & have2
    lin1 = ~quad12 & ~quad23 & ~lin2 & have1 & clear1
    anchor = ~(quad12 | quad23 | lin2 | lin1)

    quad_fill(quad12, f1, t1, f2, t2)
    quad_fill(quad23, f2, t2, f3, t3)
    lin_fill(lin2, f2, t2)
    lin_fill(lin1, f1, t1)
    coef_c[anchor] = 1.0

    return {
        "flat": b_idx @ strides,
        "idx1": idx1,
        "idx2": idx2,
        "coef_c": coef_c,
        "coef_1": coef_1,
        "coef_2": coef_2,
        "cuts": cuts,
    }


def _bisect_cut_batch(shape, p0: np.ndarray, p1: np.ndarray, iters: int = 60) -> np.ndarray:
    """Roots of the signed shape function on segments [p0_i, p1_i], returned
    as distances from p0_i.  Endpoints must have opposite signs."""
    a = np.atleast_2d(p0).astype(float)
    b = np.atleast_2d(p1).astype(float)
    fa = shape.signed(a)
    lo_t = np.zeros(a.shape[0])
    hi_t = np.ones(a.shape[0])
    for _ in range(iters):
        mid = 0.5 * (lo_t + hi_t)
        fm = shape.signed(a + mid[:, None] * (b - a))
        same = (fm > 0.0) == (fa > 0.0)
        lo_t = np.where(same, mid, lo_t)
        hi_t = np.where(same, hi_t, mid)
    t = 0.5 * (lo_t + hi_t)
    return t * np.linalg.norm(b - a, axis=1)


# ---------------------------------------------------------------------------
# Grid functions


@dataclass(eq=False)
class GridFunction:
    """Real scalar field on a GridDomain; NaN outside the valued node set."""

    domain: GridDomain
    values: np.ndarray

    @classmethod
    def from_callable(cls, domain: GridDomain, fn, where: str = "valued") -> "GridFunction":
        pts = domain.coords()
        vals = np.asarray(fn(pts), dtype=float).reshape((domain.resolution,) * domain.d)
        out = np.full_like(vals, np.nan)
        mask = domain.valued_mask if where == "valued" else np.ones_like(vals, dtype=bool)
        out[mask] = vals[mask]
        return cls(domain, out)

    @classmethod
    def constant(cls, domain: GridDomain, value: float) -> "GridFunction":
        vals = np.full((domain.resolution,) * domain.d, np.nan)
        vals[domain.valued_mask] = value
        return cls(domain, vals)

    def check_finite(self) -> None:
        if not np.all(np.isfinite(self.values[self.domain.valued_mask])):
            raise ValueError("grid function has non-finite values on valued nodes")

    def copy(self) -> "GridFunction":
        return GridFunction(self.domain, self.values.copy())

    def interp(self, pts: np.ndarray) -> np.ndarray:
        return self.domain.interp(self.values, pts)

    # -- persistence --------------------------------------------------------

    def write_csv(self, path) -> None:
        dom = self.domain
        valued = dom.valued_mask.ravel()
        pts = dom.coords()
        vals = self.values.ravel()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["index"] + [f"c{a}" for a in range(dom.d)] + ["value"])
            for i in np.flatnonzero(valued):
                w.writerow([int(i)] + [f"{c:.17g}" for c in pts[i]] + [f"{vals[i]:.17g}"])

    def write_cache(self, path) -> None:
        dom = self.domain
        with open(path, "wb") as fh:
            fh.write(CACHE_MAGIC)
            fh.write(struct.pack("<HHId", CACHE_VERSION, dom.n, dom.resolution, dom.h))
            fh.write(np.ascontiguousarray(self.values, dtype="<f8").tobytes())


def read_cache(path) -> tuple[int, int, float, np.ndarray]:
    """Read a binary cache; returns (n, resolution, h, values array)."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CACHE_MAGIC:
            raise ValueError("not a grid cache file")
        version, n, resolution, h = struct.unpack("<HHId", fh.read(16))
        if version != CACHE_VERSION:
            raise ValueError(f"unsupported cache version {version}")
        d = 2 * n
        raw = fh.read(8 * resolution ** d)
        values = np.frombuffer(raw, dtype="<f8").reshape((resolution,) * d).copy()
    return n, resolution, h, values


# ---------------------------------------------------------------------------
# Hermitian matrices and complex differential calculus


@dataclass(eq=False)
class HermitianMatrix:
    """n x n complex matrix stored exactly Hermitian."""

    entries: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.entries, dtype=complex)
        self.entries = 0.5 * (e + e.conj().T)

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.entries)

    def det(self) -> float:
        return float(np.linalg.det(self.entries).real)

    def is_positive_definite(self, floor: float = 0.0) -> bool:
        return bool(self.eigenvalues().min() > floor)

    def normalized(self) -> "HermitianMatrix":
        """Scale to unit determinant (requires positive determinant)."""
        det = self.det()
        if det <= 0:
            raise DegenerateHessianError(
                "cannot normalize a matrix with non-positive determinant",
                float(self.eigenvalues().min()))
        return HermitianMatrix(self.entries / det ** (1.0 / self.n))


def _second_diff_point(values: np.ndarray, idx: tuple, a: int, b: int, h: float) -> float:
    """Centered second difference at a node; a == b pure, else 4-point mixed."""
    idx = tuple(idx)
    if a == b:
        up = list(idx); up[a] += 1
        dn = list(idx); dn[a] -= 1
        vals = (values[tuple(up)], values[idx], values[tuple(dn)])
        if any(math.isnan(v) for v in vals):
            raise StencilViolationError(f"second-difference stencil leaves domain at {idx}")
        return (vals[0] - 2.0 * vals[1] + vals[2]) / h ** 2
    acc = 0.0
    for sa, sb, sign in ((1, 1, 1.0), (1, -1, -1.0), (-1, 1, -1.0), (-1, -1, 1.0)):
        p = list(idx); p[a] += sa; p[b] += sb
        v = values[tuple(p)]
        if math.isnan(v):
            raise StencilViolationError(f"mixed-difference stencil leaves domain at {idx}")
        acc += sign * v
    return acc / (4.0 * h ** 2)


def _first_diff_point(values: np.ndarray, idx: tuple, a: int, h: float) -> float:
    up = list(idx); up[a] += 1
    dn = list(idx); dn[a] -= 1
    v1, v2 = values[tuple(up)], values[tuple(dn)]
    if math.isnan(v1) or math.isnan(v2):
        raise StencilViolationError(f"first-difference stencil leaves domain at {idx}")
    return (v1 - v2) / (2.0 * h)


def complex_hessian(u: GridFunction, x: tuple) -> HermitianMatrix:
    """Mixed complex Hessian u_{z_i zbar_j} at an interior node.

    Entry (i, j) is ((u_{x_i x_j} + u_{y_i y_j}) + i (u_{x_i y_j} - u_{y_i x_j}))/4
    from centered differences; exact on quadratics.
    """
    dom = u.domain
    x = tuple(x)
    if not dom.interior_mask[x]:
        raise StencilViolationError(f"node {x} is not interior")
    n, h, vals = dom.n, dom.h, u.values
    H = np.zeros((n, n), dtype=complex)
    for i in range(n):
        for j in range(i, n):
            xi, yi = 2 * i, 2 * i + 1
            xj, yj = 2 * j, 2 * j + 1
            re = _second_diff_point(vals, x, xi, xj, h) + _second_diff_point(vals, x, yi, yj, h)
            if i == j:
                H[i, i] = 0.25 * re
            else:
                im = _second_diff_point(vals, x, xi, yj, h) - _second_diff_point(vals, x, yi, xj, h)
                H[i, j] = 0.25 * (re + 1j * im)
                H[j, i] = np.conj(H[i, j])
    return HermitianMatrix(H)


def complex_gradient(u: GridFunction, x: tuple) -> np.ndarray:
    """d/dz_i u at a node: (u_{x_i} - i u_{y_i})/2 by centered differences."""
    dom = u.domain
    h, vals = dom.h, u.values
    out = np.zeros(dom.n, dtype=complex)
    for i in range(dom.n):
        gx = _first_diff_point(vals, x, 2 * i, h)
        gy = _first_diff_point(vals, x, 2 * i + 1, h)
        out[i] = 0.5 * (gx - 1j * gy)
    return out


def holomorphic_hessian(u: GridFunction, x: tuple) -> np.ndarray:
    """(2,0) derivatives u_{z_i z_j}: ((u_{x_i x_j} - u_{y_i y_j}) - i (u_{x_i y_j} + u_{y_i x_j}))/4."""
    dom = u.domain
    h, vals = dom.h, u.values
    n = dom.n
    B = np.zeros((n, n), dtype=complex)
    for i in range(n):
        for j in range(i, n):
            xi, yi = 2 * i, 2 * i + 1
            xj, yj = 2 * j, 2 * j + 1
            re = _second_diff_point(vals, x, xi, xj, h) - _second_diff_point(vals, x, yi, yj, h)
            im = _second_diff_point(vals, x, xi, yj, h) + _second_diff_point(vals, x, yi, xj, h)
            B[i, j] = 0.25 * (re - 1j * im)
            B[j, i] = B[i, j]
    return B


def laplacian(u: GridFunction, x: tuple) -> float:
    """Delta u = 4 * trace of the complex Hessian."""
    return float(4.0 * complex_hessian(u, x).entries.trace().real)


def trace_inverse(u: GridFunction, x: tuple, floor: float = 0.0) -> float:
    """Trace of the inverse complex Hessian (sum of 1/eigenvalue)."""
    H = complex_hessian(u, x)
    lam = H.eigenvalues()
    if lam.min() <= floor:
        raise DegenerateHessianError(
            f"complex Hessian not positive definite at {tuple(x)}", float(lam.min()))
    return float(np.sum(1.0 / lam))


# Vectorized Hessian components over the whole box (NaN where unsupported).


def _shift(values: np.ndarray, off: tuple) -> np.ndarray:
    out = np.full_like(values, np.nan)
    src = tuple(
        slice(o, None) if o > 0 else slice(None, o if o < 0 else None)
        for o in off
    )
    dst = tuple(
        slice(None, -o) if o > 0 else slice(-o if o < 0 else 0, None)
        for o in off
    )
    out[dst] = values[src]
    return out


def second_diff_field(values: np.ndarray, a: int, b: int, h: float) -> np.ndarray:
    d = values.ndim
    if a == b:
        o = [0] * d
        o[a] = 1
        up = _shift(values, tuple(o))
        o[a] = -1
        dn = _shift(values, tuple(o))
        return (up - 2.0 * values + dn) / h ** 2
    acc = np.zeros_like(values)
    for sa, sb, sign in ((1, 1, 1.0), (1, -1, -1.0), (-1, 1, -1.0), (-1, -1, 1.0)):
        o = [0] * d
        o[a] = sa
        o[b] = sb
        acc = acc + sign * _shift(values, tuple(o))
    return acc / (4.0 * h ** 2)


def hessian_fields(u: GridFunction) -> dict:
    """Complex Hessian components as full-box arrays.

    n = 1: {"h11"}; n = 2: {"h11", "h22", "h12re", "h12im"}.
    """
    dom = u.domain
    v, h = u.values, dom.h
    if dom.n == 1:
        h11 = 0.25 * (second_diff_field(v, 0, 0, h) + second_diff_field(v, 1, 1, h))
        return {"h11": h11}
    h11 = 0.25 * (second_diff_field(v, 0, 0, h) + second_diff_field(v, 1, 1, h))
    h22 = 0.25 * (second_diff_field(v, 2, 2, h) + second_diff_field(v, 3, 3, h))
    h12re = 0.25 * (second_diff_field(v, 0, 2, h) + second_diff_field(v, 1, 3, h))
    h12im = 0.25 * (second_diff_field(v, 0, 3, h) - second_diff_field(v, 1, 2, h))
    return {"h11": h11, "h22": h22, "h12re": h12re, "h12im": h12im}


def hessian_eigen_fields(fields: dict) -> tuple[np.ndarray, np.ndarray]:
    """(min, max) eigenvalue arrays of the complex Hessian fields."""
    if "h22" not in fields:
        return fields["h11"], fields["h11"]
    tr = fields["h11"] + fields["h22"]
    det = fields["h11"] * fields["h22"] - (fields["h12re"] ** 2 + fields["h12im"] ** 2)
    disc = np.sqrt(np.maximum(tr * tr - 4.0 * det, 0.0))
    return 0.5 * (tr - disc), 0.5 * (tr + disc)


def hessian_det_field(fields: dict) -> np.ndarray:
    if "h22" not in fields:
        return fields["h11"]
    return fields["h11"] * fields["h22"] - (fields["h12re"] ** 2 + fields["h12im"] ** 2)


# ---------------------------------------------------------------------------
# Interpolation estimate check


def _deriv_tensor_max(u: GridFunction, x: tuple, order: int) -> float:
    """Max absolute entry of the order-th derivative tensor at a node,
    from nested centered differences."""
    dom = u.domain
    d, h, vals = dom.d, dom.h, u.values

    # Nested centered first differences realize each mixed partial.
    def diff_eval(axes_seq, ix):
        if not axes_seq:
            v = vals[tuple(ix)]
            if math.isnan(v):
                raise StencilViolationError("derivative stencil leaves domain")
            return v
        a = axes_seq[0]
        up = list(ix); up[a] += 1
        dn = list(ix); dn[a] -= 1
        return (diff_eval(axes_seq[1:], up) - diff_eval(axes_seq[1:], dn)) / (2.0 * h)

    best = 0.0
    from itertools import combinations_with_replacement
    for axes_seq in combinations_with_replacement(range(d), order):
        best = max(best, abs(diff_eval(list(axes_seq), list(x))))
    return best


def interpolation_check(u: GridFunction, mu: float, lam: float, C: float,
                        r0: float, slack: float = 2.0) -> dict:
    """Check |D^m u(0)| <= slack * C * (lam^(4-m) + mu/lam^m) for m = 1, 2, 3.

    mu bounds |u| and C bounds |D^4 u| on the ball of radius r0; lam is the
    free scale in (0, r0).  Pure report; never raises on failure.
    """
    if not 0.0 < lam < r0:
        raise ValueError("need 0 < lam < r0")
    dom = u.domain
    center = dom.node_index(np.zeros(dom.d))
    rows = []
    ok_all = True
    for m in (1, 2, 3):
        lhs = _deriv_tensor_max(u, center, m)
        rhs = slack * C * (lam ** (4 - m) + mu / lam ** m)
        ok = bool(lhs <= rhs)
        ok_all &= ok
        rows.append({"order": m, "lhs": float(lhs), "rhs": float(rhs), "ok": ok})
    return {"ok": ok_all, "rows": rows, "mu": mu, "lambda": lam, "C": C, "slack": slack}
