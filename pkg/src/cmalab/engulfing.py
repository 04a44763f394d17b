"""Dilation of pointed node sets, engulfing checks, shape compatibility.

All set inclusions are lattice statements "up to one-cell slack": an
offending node must lie within lattice (Chebyshev) distance 1 of the target
set.  Two sets intersect when they share a node or sit within lattice
distance 1, symmetric with the inclusion slack.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import CmalabError
from .grid import GridDomain, GridFunction, HermitianMatrix, interp_multilinear
from .sections import (
    HermitianTransform,
    PluriharmonicPoly,
    Section,
    build_section,
    fit_ellipsoid,
    normalize_transform,
)


@dataclass(eq=False)
class PointedSet:
    """Node mask on a uniform lattice with a distinguished center node."""

    center_idx: tuple
    mask: np.ndarray
    lo: np.ndarray              # lower corner coordinates per axis
    h: float
    mu: float | None = None     # section height, when the set is a section

    def __post_init__(self):
        self.lo = np.asarray(self.lo, dtype=float)
        if not self.mask[tuple(self.center_idx)]:
            raise ValueError("center node must belong to the set")

    @property
    def ndim(self) -> int:
        return self.mask.ndim

    @property
    def axes(self) -> list[np.ndarray]:
        return [self.lo[a] + self.h * np.arange(self.mask.shape[a])
                for a in range(self.ndim)]

    @property
    def center_point(self) -> np.ndarray:
        return self.lo + self.h * np.asarray(self.center_idx, dtype=float)

    @classmethod
    def from_section(cls, section: Section) -> "PointedSet":
        dom = section.domain
        return cls(section.center_idx, section.mask.copy(),
                   dom.box[:, 0].copy(), dom.h, mu=section.mu)

    @classmethod
    def from_mask(cls, domain: GridDomain, center_idx: tuple, mask: np.ndarray,
                  mu: float | None = None) -> "PointedSet":
        return cls(tuple(center_idx), mask, domain.box[:, 0].copy(), domain.h, mu=mu)

    def node_count(self) -> int:
        return int(self.mask.sum())

    def measure(self) -> float:
        return self.node_count() * self.h ** self.ndim

    def coords(self) -> np.ndarray:
        idx = np.argwhere(self.mask)
        return self.lo + self.h * idx


def _moore(ndim: int) -> np.ndarray:
    return ndimage.generate_binary_structure(ndim, ndim)


def dilate_membership(ps: PointedSet, c: float, pts: np.ndarray) -> np.ndarray:
    """Whether points belong to the c-dilation of the set about its center,
    judged by the multilinearly interpolated indicator at threshold 1/2."""
    if c <= 0:
        raise ValueError("dilation factor must be positive")
    ctr = ps.center_point
    pre = ctr + (np.atleast_2d(pts) - ctr) / c
    ind = interp_multilinear(ps.axes, ps.mask.astype(float), pre)
    return np.nan_to_num(ind, nan=0.0) >= 0.5


def dilated_mask(ps: PointedSet, c: float) -> np.ndarray:
    """Lattice mask of the c-dilation (membership of every lattice node)."""
    mesh = np.meshgrid(*ps.axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    return dilate_membership(ps, c, pts).reshape(ps.mask.shape)


def dilate(ps: PointedSet, c: float) -> PointedSet:
    """Dilation about the center by factor c, as a new pointed set.

    Raises when the dilated continuum hull would leave the lattice box.
    """
    if c <= 0:
        raise ValueError("dilation factor must be positive")
    idx = np.argwhere(ps.mask)
    ctr = np.asarray(ps.center_idx, dtype=float)
    reach = ctr + c * (idx - ctr)
    if np.any(reach < -0.5) or np.any(reach > np.array(ps.mask.shape) - 0.5):
        raise CmalabError(
            f"dilation by {c} escapes the grid box")
    return PointedSet(ps.center_idx, dilated_mask(ps, c), ps.lo.copy(), ps.h, mu=ps.mu)


def inclusion_with_slack(inner: np.ndarray, outer: np.ndarray) -> bool:
    """inner subset of outer, up to one-cell slack."""
    grown = ndimage.binary_dilation(outer, structure=_moore(outer.ndim))
    return bool(np.all(grown[inner]))


def sets_intersect(a: PointedSet, b: PointedSet) -> bool:
    """Shared node, or within lattice distance 1."""
    grown = ndimage.binary_dilation(a.mask, structure=_moore(a.mask.ndim))
    return bool(np.any(grown & b.mask))


def check_engulfing(s1: PointedSet | Section, s2: PointedSet | Section) -> str:
    """Engulfing verdict for two sections with mu_1 <= 4 mu_2.

    "not-applicable" when disjoint; otherwise "pass" iff the first set lies
    in the 10-dilation of the second, up to one-cell slack.
    """
    p1 = PointedSet.from_section(s1) if isinstance(s1, Section) else s1
    p2 = PointedSet.from_section(s2) if isinstance(s2, Section) else s2
    if p1.mu is None or p2.mu is None:
        raise ValueError("engulfing check needs section heights")
    if p1.mu > 4.0 * p2.mu + 1e-12:
        raise ValueError(f"hypothesis mu1 <= 4 mu2 violated ({p1.mu} vs {p2.mu})")
    if p1.mask.shape != p2.mask.shape or p1.h != p2.h:
        raise ValueError("sections live on different lattices")
    if not sets_intersect(p1, p2):
        return "not-applicable"
    big = dilated_mask(p2, 10.0)
    return "pass" if inclusion_with_slack(p1.mask, big) else "fail"


def shape_compatibility(T1: HermitianTransform, T2: HermitianTransform,
                        gamma: float) -> dict:
    """Both composite operator norms against the (1+g)^2/(1-g)^2 bound."""
    if not 0.0 < gamma < 1.0:
        raise ValueError("gamma must lie in (0, 1)")
    if min(T1.det_abs(), T2.det_abs()) < 1e-12:
        raise ValueError("singular transform")
    n12 = T1.inverse().compose(T2).op_norm()
    n21 = T2.inverse().compose(T1).op_norm()
    bound = (1.0 + gamma) ** 2 / (1.0 - gamma) ** 2
    return {
        "norm_12": n12,
        "norm_21": n21,
        "bound": bound,
        "passed": bool(n12 <= bound and n21 <= bound),
    }


def shape_uniqueness_probe(u: GridFunction, x0: tuple, mu: float,
                           h1: PluriharmonicPoly, h2: PluriharmonicPoly,
                           A1: HermitianMatrix, A2: HermitianMatrix,
                           gamma: float) -> dict:
    """Two near-ellipsoid representations of one section must have
    compatible shapes.

    Each (h_p, A_p) pair must first pass the ellipsoid fit within
    (1 +- gamma) plus grid slack; the verdict then reduces to transform
    compatibility at tolerance gamma.
    """
    from .errors import SectionEscapeError

    fits = []
    slack = 2.0 * u.domain.h / np.sqrt(mu)
    for h, A in ((h1, A1), (h2, A2)):
        try:
            sec = build_section(u, x0, mu, h)
        except SectionEscapeError:
            # A candidate that cannot even close up fails the precondition.
            fits.append(None)
            return {
                "status": "precondition-unmet",
                "fits": fits,
                "gamma": gamma,
                "grid_slack": slack,
            }
        c_in, c_out = fit_ellipsoid(sec, A.normalized())
        fits.append((c_in, c_out))
        if c_in < 1.0 - gamma - slack or c_out > 1.0 + gamma + slack:
            return {
                "status": "precondition-unmet",
                "fits": fits,
                "gamma": gamma,
                "grid_slack": slack,
            }
    comp = shape_compatibility(normalize_transform(A1.normalized()),
                               normalize_transform(A2.normalized()), gamma)
    return {
        "status": "pass" if comp["passed"] else "fail",
        "fits": fits,
        "gamma": gamma,
        "grid_slack": slack,
        "norms": [comp["norm_12"], comp["norm_21"]],
        "bound": comp["bound"],
    }
