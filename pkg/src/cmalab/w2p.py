"""L^p accounting for second derivatives: direct quadrature over the grid
and the dyadic bound assembled from bad-set measures.

The integrand pair is (trace of the complex Hessian)^p and (trace of its
inverse)^p; the good-set bounds trace <= 2n 10^{(n-1)k} and inverse trace
<= n 10^k turn the decay report into a convergent series once
10^{(n-1)p} 12^{2n} eps_bar <= 1/2.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .badset import BadSetReport
from .grid import GridFunction, hessian_eigen_fields, hessian_fields, second_diff_field


def eps_bar_recipe(p: float, n: int) -> float:
    """Density threshold making the dyadic series geometric with ratio 1/2:
    10^{(n-1)p} 12^{2n} eps_bar = 1/2."""
    if p < 1:
        raise ValueError("p must be at least 1")
    return 0.5 / (10.0 ** ((n - 1) * p) * 12.0 ** (2 * n))


def lp_norm(values, p: float, region: np.ndarray, h: float, d: int) -> float:
    """Node-sum quadrature: (sum |f|^p h^d)^(1/p)."""
    if p < 1:
        raise ValueError("p must be at least 1")
    vals = values.values if isinstance(values, GridFunction) else np.asarray(values)
    picked = vals[region]
    if np.any(~np.isfinite(picked)):
        raise ValueError("field must be finite on the region")
    return float(np.sum(np.abs(picked) ** p) * h ** d) ** (1.0 / p)


def complex_trace_field(u: GridFunction) -> np.ndarray:
    """Trace of the complex Hessian (one quarter of the real Laplacian)."""
    fields = hessian_fields(u)
    out = fields["h11"].copy()
    if "h22" in fields:
        out = out + fields["h22"]
    return out


def inverse_trace_field(u: GridFunction, floor: float = 0.0) -> np.ndarray:
    """Trace of the inverse complex Hessian; NaN where not positive definite."""
    fields = hessian_fields(u)
    lam_min, lam_max = hessian_eigen_fields(fields)
    pd = lam_min > floor
    safe_min = np.where(pd, lam_min, 1.0)
    out = 1.0 / safe_min
    if "h22" in fields:
        out = out + 1.0 / np.where(pd, lam_max, 1.0)
    return np.where(pd, out, np.nan)


@dataclass
class DyadicBound:
    base: float
    series_terms: list[float]
    tail: float
    total: float
    ratio: float
    tail_valid: bool
    flag: str = ""

    def to_dict(self) -> dict:
        return self.__dict__.copy()


def dyadic_bound(report: BadSetReport, p: float, eps_bar: float,
                 kind: str = "trace") -> DyadicBound:
    """Truncated dyadic series with geometric tail closure.

    kind "trace": band height 2n 10^{(n-1)(k+1)}; kind "inverse-trace":
    band height n 10^{k+1}.  The tail uses the recipe ratio when every
    report row meets its geometric bound; a vacuous final row (A_k empty,
    hence all deeper A empty) closes the tail at zero.
    """
    if abs(eps_bar - report.eps_bar) > 1e-12:
        raise ValueError("eps_bar disagrees with the report")
    n = report.n
    if kind == "trace":
        def band(k):
            return 2.0 * n * 10.0 ** ((n - 1) * (k + 1))
        ratio = 10.0 ** ((n - 1) * p) * 12.0 ** (2 * n) * eps_bar
    elif kind == "inverse-trace":
        def band(k):
            return n * 10.0 ** (k + 1)
        ratio = 10.0 ** p * 12.0 ** (2 * n) * eps_bar
    else:
        raise ValueError(f"unknown kind {kind!r}")

    base = band(0) ** p * report.m_b06
    terms = [band(r.k) ** p * r.measure_b06 for r in report.rows]
    flag = ""
    if report.rows and report.rows[-1].vacuous:
        tail = 0.0
        tail_valid = True
        flag = "tail closed by empty final level"
    elif report.all_passed() and ratio < 1.0:
        k_next = report.rows[-1].k + 1 if report.rows else 1
        next_bound = band(k_next) ** p * report.m_b07 * (12.0 ** (2 * n) * eps_bar) ** (k_next - 1)
        tail = next_bound / (1.0 - ratio)
        tail_valid = True
    else:
        tail = float("nan")
        tail_valid = False
        flag = "geometric bound failed; tail estimate invalid"
    total = base + sum(terms) + (tail if tail_valid else 0.0)
    return DyadicBound(base, terms, tail, total, ratio, tail_valid, flag)


@dataclass
class NormReport:
    p: float
    region_label: str
    direct_trace: float
    direct_inverse_trace: float
    dyadic_trace: DyadicBound
    dyadic_inverse_trace: DyadicBound
    full_w2p: float
    classical_ratio: float
    dominated: bool

    def to_dict(self) -> dict:
        out = self.__dict__.copy()
        out["dyadic_trace"] = self.dyadic_trace.to_dict()
        out["dyadic_inverse_trace"] = self.dyadic_inverse_trace.to_dict()
        return out


def full_w2p(u: GridFunction, p: float, region: np.ndarray) -> tuple[float, float]:
    """L^p norm of all real second derivatives plus lower-order terms,
    and the measured constant of the classical Laplacian estimate.

    Returns (full_norm, full_norm / (||u||_p + ||real Laplacian||_p)).
    """
    dom = u.domain
    d = dom.d
    h = dom.h
    vals = u.values
    region = region & ~np.isnan(vals)

    total = 0.0
    lap = np.zeros_like(vals)
    ok = region.copy()
    for a in range(d):
        for b in range(a, d):
            fld = second_diff_field(vals, a, b, h)
            ok &= ~np.isnan(fld)
            if a == b:
                lap = lap + fld
    if not np.any(ok):
        raise ValueError("no region nodes with full second-difference stencils")
    for a in range(d):
        for b in range(a, d):
            fld = second_diff_field(vals, a, b, h)
            total += lp_norm(np.nan_to_num(fld), p, ok, h, d)
    grad_norm = 0.0
    for a in range(d):
        up = _shift(vals, a, 1)
        dn = _shift(vals, a, -1)
        gax = (up - dn) / (2.0 * h)
        gok = ok & ~np.isnan(gax)
        grad_norm += lp_norm(np.nan_to_num(gax), p, gok, h, d)
    u_norm = lp_norm(np.nan_to_num(vals), p, ok, h, d)
    full = total + grad_norm + u_norm
    lap_norm = lp_norm(np.nan_to_num(lap), p, ok, h, d)
    denom = u_norm + lap_norm
    return full, full / denom if denom > 0 else float("inf")


def _shift(values: np.ndarray, axis: int, step: int) -> np.ndarray:
    off = [0] * values.ndim
    off[axis] = step
    out = np.full_like(values, np.nan)
    src = tuple(slice(o, None) if o > 0 else slice(None, o if o < 0 else None)
                for o in off)
    dst = tuple(slice(None, -o) if o > 0 else slice(-o if o < 0 else 0, None)
                for o in off)
    out[dst] = values[src]
    return out


def norm_report(u: GridFunction, report: BadSetReport, p: float,
                radius: float = 0.6) -> NormReport:
    """Full accounting over B_radius: direct quadrature, dyadic bounds, and
    the classical-constant measurement."""
    dom = u.domain
    pts = dom.coords()
    dist = np.linalg.norm(pts, axis=1).reshape(u.values.shape)
    region = dom.interior_mask & (dist <= radius)

    tr = complex_trace_field(u)
    itr = inverse_trace_field(u)
    ok = region & ~np.isnan(tr) & ~np.isnan(itr)
    direct_tr = lp_norm(np.nan_to_num(tr), p, ok, dom.h, dom.d) ** p
    direct_itr = lp_norm(np.nan_to_num(itr), p, ok, dom.h, dom.d) ** p

    dy_tr = dyadic_bound(report, p, report.eps_bar, kind="trace")
    dy_itr = dyadic_bound(report, p, report.eps_bar, kind="inverse-trace")
    full, ratio = full_w2p(u, p, region)
    dominated = bool(
        dy_tr.tail_valid and direct_tr <= dy_tr.total + 1e-9
        and dy_itr.tail_valid and direct_itr <= dy_itr.total + 1e-9)
    return NormReport(
        p=p, region_label=f"B_{radius}",
        direct_trace=direct_tr, direct_inverse_trace=direct_itr,
        dyadic_trace=dy_tr, dyadic_inverse_trace=dy_itr,
        full_w2p=full, classical_ratio=ratio, dominated=dominated,
    )
