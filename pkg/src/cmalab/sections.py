"""Sections of near-quadratic plurisubharmonic functions.

A section at base point x0 and height mu is the sublevel set
{u - h <= u(x0) + mu} for a degree-2 pluriharmonic shift h.  Shifts come
from Taylor-splitting the solution of the unit-determinant Dirichlet
problem; the inductive chain re-solves that problem on each normalized
section, accumulating a transform and shift per level.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import (
    ChainBrokenError,
    DegenerateHessianError,
    SectionEscapeError,
)
from .grid import (
    GridDomain,
    GridFunction,
    HermitianMatrix,
    SublevelShape,
    build_domain,
    complex_gradient,
    complex_hessian,
    holomorphic_hessian,
)
from .solver import SolveConfig, solve_dirichlet


# ---------------------------------------------------------------------------
# Domain types


@dataclass(eq=False)
class PluriharmonicPoly:
    """h(z) = Re(sum l_i (z-c)_i) + Re(sum b_ij (z-c)_i (z-c)_j); h(c) = 0."""

    center: np.ndarray          # complex, (n,)
    linear: np.ndarray          # complex, (n,)
    quad: np.ndarray            # complex symmetric, (n, n)

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=complex)
        self.linear = np.asarray(self.linear, dtype=complex)
        q = np.asarray(self.quad, dtype=complex)
        self.quad = 0.5 * (q + q.T)

    @property
    def n(self) -> int:
        return self.center.size

    @classmethod
    def zero(cls, center) -> "PluriharmonicPoly":
        center = np.asarray(center, dtype=complex)
        n = center.size
        return cls(center, np.zeros(n, complex), np.zeros((n, n), complex))

    def evaluate(self, pts: np.ndarray) -> np.ndarray:
        """Values at real-coordinate points (m, 2n)."""
        pts = np.atleast_2d(pts)
        w = pts[:, 0::2] + 1j * pts[:, 1::2] - self.center
        lin = w @ self.linear
        quad = np.einsum("mi,ij,mj->m", w, self.quad, w)
        return (lin + quad).real

    def shifted_compose(self, scale: float, M: np.ndarray, new_center) -> "PluriharmonicPoly":
        """scale * h(M (z - new_center)) as a pluriharmonic polynomial in z."""
        M = np.asarray(M, dtype=complex)
        lin = scale * (M.T @ self.linear)
        quad = scale * (M.T @ self.quad @ M)
        return PluriharmonicPoly(np.asarray(new_center, dtype=complex), lin, quad)

    def add(self, other: "PluriharmonicPoly") -> "PluriharmonicPoly":
        if not np.allclose(self.center, other.center):
            raise ValueError("can only add shifts with a common center")
        return PluriharmonicPoly(self.center, self.linear + other.linear,
                                 self.quad + other.quad)

    def coefficients(self) -> dict:
        return {
            "center": _c2pairs(self.center),
            "linear": _c2pairs(self.linear),
            "quad": _c2pairs(self.quad.ravel()),
        }


def _c2pairs(arr: np.ndarray) -> list:
    return [[float(v.real), float(v.imag)] for v in np.asarray(arr).ravel()]


@dataclass(eq=False)
class Ellipsoid:
    """{z : sum A_ij (z-c)_i conj((z-c)_j) <= mu} with det A = 1."""

    center: np.ndarray          # complex, (n,)
    coeff: HermitianMatrix
    mu: float

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=complex)
        if self.mu <= 0:
            raise ValueError("height mu must be positive")

    def quadratic_form(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(pts)
        w = pts[:, 0::2] + 1j * pts[:, 1::2] - self.center
        return np.einsum("mi,ij,mj->m", w.conj(), self.coeff.entries, w).real

    def contains(self, pts: np.ndarray) -> np.ndarray:
        return self.quadratic_form(pts) <= self.mu

    def dilate(self, c: float) -> "Ellipsoid":
        """Dilation about the center: same coefficients, height c^2 mu."""
        if c <= 0:
            raise ValueError("dilation factor must be positive")
        return Ellipsoid(self.center, self.coeff, c * c * self.mu)


@dataclass(eq=False)
class HermitianTransform:
    """C-linear map with |det| = 1 sending round balls onto ellipsoids."""

    matrix: np.ndarray          # complex, (n, n)

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=complex)

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @classmethod
    def identity(cls, n: int) -> "HermitianTransform":
        return cls(np.eye(n, dtype=complex))

    def det_abs(self) -> float:
        return float(abs(np.linalg.det(self.matrix)))

    def op_norm(self) -> float:
        return float(np.linalg.svd(self.matrix, compute_uv=False)[0])

    def inverse(self) -> "HermitianTransform":
        return HermitianTransform(np.linalg.inv(self.matrix))

    def compose(self, other: "HermitianTransform") -> "HermitianTransform":
        return HermitianTransform(self.matrix @ other.matrix)

    def apply(self, pts: np.ndarray) -> np.ndarray:
        """Apply to real-coordinate points (m, 2n) -> (m, 2n)."""
        pts = np.atleast_2d(pts)
        z = pts[:, 0::2] + 1j * pts[:, 1::2]
        w = z @ self.matrix.T
        out = np.empty_like(pts)
        out[:, 0::2] = w.real
        out[:, 1::2] = w.imag
        return out

    def deviation_from_identity(self) -> float:
        return float(np.linalg.svd(self.matrix - np.eye(self.n), compute_uv=False)[0])

    def to_floats(self) -> list:
        return [float(v) for pair in
                ((x.real, x.imag) for x in self.matrix.ravel()) for v in pair]


@dataclass(eq=False)
class Section:
    """Connected sublevel component {u - h <= u(x0) + mu} on a grid."""

    domain: GridDomain
    center_idx: tuple
    mu: float
    shift: PluriharmonicPoly
    mask: np.ndarray
    fitted: Ellipsoid | None = None
    transform: HermitianTransform | None = None

    @property
    def center_point(self) -> np.ndarray:
        return self.domain.coords(self.center_idx)

    def node_count(self) -> int:
        return int(self.mask.sum())

    def measure(self) -> float:
        return self.domain.measure(self.mask)


@dataclass
class ChainLevel:
    k: int
    height: float
    transform: HermitianTransform          # level increment, normalized coords
    shift_increment: PluriharmonicPoly     # in level-(k-1) coordinates
    composite_transform: HermitianTransform
    composite_shift: PluriharmonicPoly     # in original coordinates
    fit_in: float
    fit_out: float
    omega_r_in: float
    omega_r_out: float
    solve_iterations: int
    solve_residual: float
    transform_deviation: float
    center_value_error: float


@dataclass(eq=False)
class SectionChain:
    domain: GridDomain
    center_idx: tuple
    sigma: float
    mu0: float
    mu_top: float
    levels: list[ChainLevel] = field(default_factory=list)
    paper_mu0: float = float("nan")

    @property
    def center_point(self) -> np.ndarray:
        return self.domain.coords(self.center_idx)

    def height_of_level(self, k: int) -> float:
        return self.mu_top * self.mu0 ** (k - 1)

    def level_for_height(self, mu: float) -> int:
        """Level whose shift cuts sections of height mu (clamped to built)."""
        if mu > self.mu_top:
            raise ValueError(f"height {mu} above the chain top {self.mu_top}")
        k = 1
        while k < len(self.levels) and mu <= self.height_of_level(k + 1):
            k += 1
        return k

    def shift_for_height(self, mu: float) -> PluriharmonicPoly:
        return self.levels[self.level_for_height(mu) - 1].composite_shift

    def section(self, u: GridFunction, mu: float) -> Section:
        return build_section(u, self.center_idx, mu, self.shift_for_height(mu))

    def measured_cprime(self) -> float:
        """max ||T_k - I|| / sigma^(1/2) over levels."""
        dev = max((lv.transform_deviation for lv in self.levels), default=0.0)
        return dev / math.sqrt(self.sigma)

    def to_dict(self) -> dict:
        return {
            "center": [float(c) for c in self.center_point],
            "sigma": self.sigma,
            "mu0": self.mu0,
            "mu_top": self.mu_top,
            "paper_mu0": self.paper_mu0,
            "levels": [
                {
                    "k": lv.k,
                    "height": lv.height,
                    "transform": lv.transform.to_floats(),
                    "composite_transform": lv.composite_transform.to_floats(),
                    "shift_increment": lv.shift_increment.coefficients(),
                    "composite_shift": lv.composite_shift.coefficients(),
                    "fit": [lv.fit_in, lv.fit_out],
                    "omega_radii": [lv.omega_r_in, lv.omega_r_out],
                    "solve": [lv.solve_iterations, lv.solve_residual],
                    "transform_deviation": lv.transform_deviation,
                    "center_value_error": lv.center_value_error,
                }
                for lv in self.levels
            ],
        }


# ---------------------------------------------------------------------------
# Elementary operations


def taylor_split(v: GridFunction, x0: tuple) -> tuple[PluriharmonicPoly, HermitianMatrix]:
    """Split v near a node into pluriharmonic part and Hermitian form.

    h collects the Re-linear and holomorphic-quadratic terms of the Taylor
    expansion; the returned matrix is the complex Hessian at the node.
    """
    dom = v.domain
    x0 = tuple(x0)
    pt = dom.coords(x0)
    center = pt[0::2] + 1j * pt[1::2]
    lin = 2.0 * complex_gradient(v, x0)
    quad = holomorphic_hessian(v, x0)
    A = complex_hessian(v, x0)
    return PluriharmonicPoly(center, lin, quad), A


def normalize_transform(A: HermitianMatrix, det_tol: float = 0.2) -> HermitianTransform:
    """Transform T = U diag(lambda^-1/2) U* mapping B_r onto {<Az,z> <= r^2}.

    A must be positive definite with determinant near 1; eigenvalues are
    rescaled to unit product so |det T| = 1 exactly up to roundoff.
    """
    lam, U = np.linalg.eigh(A.entries)
    if lam.min() <= 0:
        raise DegenerateHessianError(
            "cannot normalize a non-positive-definite form", float(lam.min()))
    det = float(np.prod(lam))
    if abs(det - 1.0) > det_tol:
        raise ValueError(f"determinant {det:.4f} too far from 1 to normalize")
    lam_hat = lam / det ** (1.0 / lam.size)
    T = U @ np.diag(lam_hat ** -0.5) @ U.conj().T
    return HermitianTransform(T)


def mu0_from_sigma(sigma: float, gamma_n: float) -> float:
    """Level ratio from the shape tolerance: 3^(3/2) mu0^(1/2) equals
    min(sigma, gamma_n)/20, capped below 0.009."""
    if not 0.0 < sigma < 1.0 or not 0.0 < gamma_n < 1.0:
        raise ValueError("sigma and gamma_n must lie in (0, 1)")
    root = min(sigma, gamma_n) / (20.0 * 3.0 ** 1.5)
    return min(root * root, 0.009 * (1.0 - 1e-12))


def _connected_component(mask: np.ndarray, seed: tuple) -> np.ndarray:
    structure = ndimage.generate_binary_structure(mask.ndim, 1)
    labels, _ = ndimage.label(mask, structure=structure)
    lab = labels[seed]
    if lab == 0:
        out = np.zeros_like(mask)
        out[seed] = True
        return out
    return labels == lab


def build_section(u: GridFunction, x0: tuple, mu: float,
                  h: PluriharmonicPoly) -> Section:
    """Connected component of {u - h <= u(x0) + mu} through x0.

    Raises SectionEscapeError when the sublevel set reaches the domain
    boundary collar.
    """
    if mu <= 0:
        raise ValueError("height mu must be positive")
    dom = u.domain
    x0 = tuple(x0)
    u0 = float(u.values[x0])
    if math.isnan(u0):
        raise ValueError(f"base node {x0} carries no value")
    pts = dom.coords()
    hvals = h.evaluate(pts).reshape(u.values.shape)
    sub = np.zeros_like(dom.interior_mask)
    np.less_equal(u.values - hvals, u0 + mu, out=sub,
                  where=~np.isnan(u.values))
    comp = _connected_component(sub & dom.interior_mask, x0)

    # Escape: a boundary-collar node satisfying the sublevel inequality and
    # touching the component means the section is not compactly contained.
    sub_bnd = sub & dom.boundary_mask
    if np.any(sub_bnd):
        structure = ndimage.generate_binary_structure(dom.d, 1)
        grown = ndimage.binary_dilation(comp, structure=structure)
        if np.any(grown & sub_bnd):
            raise SectionEscapeError(
                f"section at {x0} with height {mu} reaches the domain boundary")
    return Section(dom, x0, mu, h, comp)


def fit_ellipsoid(section: Section, A: HermitianMatrix) -> tuple[float, float]:
    """Inner/outer dilation factors of the section against the ellipsoid
    (A, mu) centered at the section's base point, by node enumeration.

    c_in is the largest factor whose dilated ellipsoid stays inside the
    section; c_out the smallest factor containing it.
    """
    dom = section.domain
    ell = Ellipsoid(_complex_center(dom, section.center_idx), A, section.mu)
    pts = dom.coords()
    q = ell.quadratic_form(pts).reshape(section.mask.shape)
    inside = section.mask
    c_out = float(np.sqrt(np.max(q[inside], initial=0.0) / section.mu))
    candidates = dom.valued_mask & ~inside
    if np.any(candidates):
        c_in = float(np.sqrt(np.min(q[candidates]) / section.mu))
    else:
        c_in = float("inf")
    return c_in, c_out


def _complex_center(dom: GridDomain, idx: tuple) -> np.ndarray:
    pt = dom.coords(tuple(idx))
    return pt[0::2] + 1j * pt[1::2]


def rescale_to_unit(u: GridFunction, x0: tuple, mu: float,
                    h: PluriharmonicPoly, T: HermitianTransform,
                    resolution: int = 49, box_halfwidth: float = 1.3
                    ) -> GridFunction:
    """Zoom the section (x0, mu, h) to unit scale.

        w(zeta) = (u - h - u(x0) - mu)(x0 + T(sqrt(mu) zeta)) / (mu |det T|^{2/n})

    The image lattice is a fresh grid whose domain is the sublevel set
    {w <= 0}; values come from multilinear interpolation of u.
    """
    dom = u.domain
    x0 = tuple(x0)
    u0 = float(u.values[x0])
    x0_pt = dom.coords(x0)
    n = dom.n
    d = dom.d

    axes_new = [np.linspace(-box_halfwidth, box_halfwidth, resolution)] * d
    mesh = np.meshgrid(*axes_new, indexing="ij")
    zeta = np.stack([m.ravel() for m in mesh], axis=1)
    p = x0_pt + T.apply(zeta * math.sqrt(mu))
    vals = u.interp(p)
    pref = mu * T.det_abs() ** (2.0 / n)
    w = (vals - h.evaluate(p) - u0 - mu) / pref
    w_nd = w.reshape((resolution,) * d)

    center = (resolution // 2,) * d
    if math.isnan(w_nd[center]):
        raise ChainBrokenError("rescaled center maps outside the source domain", -1)

    shape = SublevelShape(axes_new, np.where(np.isnan(w_nd), 1.0, w_nd))
    new_dom = build_domain(n, shape, resolution)
    out = np.full(w_nd.shape, np.nan)
    valued = new_dom.valued_mask
    if np.any(np.isnan(w_nd[valued])):
        raise ChainBrokenError("rescaled section image escapes the source domain", -1)
    out[valued] = w_nd[valued]
    return GridFunction(new_dom, out)


def allowed_top_height(dom: GridDomain, x0: tuple, cap: float = 0.25) -> float:
    """Largest safe first-level height at a node: the level-one section must
    stay well inside the domain."""
    pt = dom.coords(tuple(x0))
    depth = -float(dom.shape.signed(pt[None, :])[0])
    room = depth - 3.0 * dom.h
    if room <= 0:
        return 0.0
    return min(cap, (room / 1.15) ** 2)


# ---------------------------------------------------------------------------
# The inductive chain


def construct_section_chain(u: GridFunction, x0: tuple, sigma: float,
                            k_max: int, cfg: SolveConfig | None = None,
                            mu0: float = 0.1, mu_top: float | None = None,
                            chain_resolution: int = 49,
                            v0: GridFunction | None = None) -> SectionChain:
    """Build k_max levels of sections at x0 with shape tolerance sigma.

    Each level solves the unit-determinant Dirichlet problem on the current
    normalized section, Taylor-splits it at the center, updates the shift,
    normalizes the new ellipsoid, and re-grids.  mu0 is the practical level
    ratio (the shape-tolerance formula value is recorded alongside); mu_top
    the first-level height, defaulting to mu0 and validated against the
    distance to the boundary.
    """
    if k_max < 1:
        raise ValueError("k_max must be at least 1")
    if not 0.0 < sigma < 1.0:
        raise ValueError("sigma must lie in (0, 1)")
    if not 0.01 <= mu0 <= 0.25:
        raise ValueError("practical level ratio mu0 must lie in [0.01, 0.25]")
    if chain_resolution % 2 == 0:
        raise ValueError("chain_resolution must be odd (origin must be a node)")
    cfg = cfg or SolveConfig()
    dom = u.domain
    x0 = tuple(x0)
    if not dom.interior_mask[x0]:
        raise ValueError(f"base node {x0} is not interior")

    top_allowed = allowed_top_height(dom, x0)
    if mu_top is None:
        mu_top = min(mu0, top_allowed)
    if mu_top <= 0 or mu_top > top_allowed:
        raise ValueError(
            f"first-level height {mu_top} unsafe at {x0} (allowed {top_allowed:.4f})")

    chain = SectionChain(dom, x0, sigma, mu0, mu_top,
                         paper_mu0=mu0_from_sigma(sigma, sigma))

    if v0 is None:
        v0, _ = solve_dirichlet(dom, 1.0, 0.0, cfg)

    w = u
    w_dom = dom
    center = x0
    x0_complex = _complex_center(dom, x0)
    T_comp = HermitianTransform.identity(dom.n)
    H_comp = PluriharmonicPoly.zero(x0_complex)
    v_level = v0

    for k in range(1, k_max + 1):
        height_k = chain.height_of_level(k)
        level_mu = mu_top if k == 1 else mu0

        if k > 1:
            try:
                v_level, v_rep = solve_dirichlet(w_dom, 1.0, 0.0, cfg)
            except Exception as exc:
                raise ChainBrokenError(f"level {k} Dirichlet solve failed: {exc}", k) from exc
            solve_iters, solve_res = v_rep.iterations, v_rep.residual
        else:
            solve_iters, solve_res = 0, float("nan")

        try:
            h_inc, A = taylor_split(v_level, center)
            A_hat = A.normalized()
            T_tilde = normalize_transform(A_hat)
        except Exception as exc:
            raise ChainBrokenError(f"level {k} normalization failed: {exc}", k) from exc

        sec = build_section(w, center, level_mu, h_inc)
        c_in, c_out = fit_ellipsoid(sec, A_hat)
        grid_slack = 2.0 * w_dom.h / math.sqrt(level_mu)
        if c_out > 1.0 + 0.5 * sigma + grid_slack or c_in < 1.0 - 0.5 * sigma - grid_slack:
            raise ChainBrokenError(
                f"level {k} fit ({c_in:.3f}, {c_out:.3f}) leaves the "
                f"0.5-sigma window", k)

        # Composite shift in original coordinates, then composite transform.
        prev_height = mu_top * mu0 ** (k - 2) if k >= 2 else 1.0
        if k == 1:
            inc_global = PluriharmonicPoly(
                x0_complex, h_inc.linear, h_inc.quad)
        else:
            M = np.linalg.inv(T_comp.matrix) / math.sqrt(prev_height)
            inc_global = h_inc.shifted_compose(prev_height, M, x0_complex)
        H_comp = H_comp.add(inc_global)
        T_comp = T_comp.compose(T_tilde)

        w = rescale_to_unit(w, center, level_mu, h_inc, T_tilde,
                            resolution=chain_resolution,
                            box_halfwidth=1.0 + max(0.3, 0.5 * sigma))
        w_dom = w.domain
        center = (chain_resolution // 2,) * dom.d
        comp = _connected_component(w_dom.interior_mask, center)
        pts_new = w_dom.coords()
        rad = np.linalg.norm(pts_new, axis=1).reshape(comp.shape)
        r_out = float(np.max(rad[comp], initial=0.0))
        outside = w_dom.valued_mask & ~comp
        r_in = float(np.min(rad[outside])) if np.any(outside) else float("inf")
        center_err = abs(float(w.values[center]) + 1.0)

        chain.levels.append(ChainLevel(
            k=k, height=height_k,
            transform=T_tilde, shift_increment=h_inc,
            composite_transform=HermitianTransform(T_comp.matrix.copy()),
            composite_shift=H_comp,
            fit_in=c_in, fit_out=c_out,
            omega_r_in=r_in, omega_r_out=r_out,
            solve_iterations=solve_iters, solve_residual=solve_res,
            transform_deviation=T_tilde.deviation_from_identity(),
            center_value_error=center_err,
        ))
    return chain
