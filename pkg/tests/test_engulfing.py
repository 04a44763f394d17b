"""Dilation, engulfing verdicts, shape compatibility and uniqueness."""

import math

import numpy as np
import pytest

from cmalab import engulfing, grid, sections
from cmalab.errors import CmalabError


@pytest.fixture(scope="module")
def disc129():
    dom = grid.build_domain(1, "ball:1.0", 129)
    pts = dom.coords()
    r = np.linalg.norm(pts, axis=1).reshape(dom.interior_mask.shape)
    return dom, pts, r


def ball_set(dom, r, center, radius, mu=None):
    ci = dom.node_index(center)
    dist = np.linalg.norm(dom.coords() - dom.coords(ci), axis=1).reshape(r.shape)
    mask = (dist <= radius) & dom.interior_mask
    return engulfing.PointedSet.from_mask(dom, ci, mask,
                                          mu=mu if mu is not None else radius ** 2)


def test_dilate_identity(disc129):
    dom, _, r = disc129
    ps = ball_set(dom, r, (0.1, 0.0), 0.25)
    out = engulfing.dilate(ps, 1.0)
    assert np.array_equal(out.mask, ps.mask)


def test_dilate_balls_double(disc129):
    dom, _, r = disc129
    ps = ball_set(dom, r, (0.0, 0.0), 0.3)
    out = engulfing.dilate(ps, 2.0)
    big = ball_set(dom, r, (0.0, 0.0), 0.6)
    assert engulfing.inclusion_with_slack(out.mask, big.mask)
    assert engulfing.inclusion_with_slack(big.mask, out.mask)


def test_dilate_measure_scaling_anisotropic():
    # Ellipse 4x^2 + y^2/4 <= mu in the plane: measure scales by c^2
    # within 3 percent at resolution 129.
    dom = grid.build_domain(1, "ball:2.6", 129)
    pts = dom.coords()
    mu = 0.36
    q = 4.0 * pts[:, 0] ** 2 + 0.25 * pts[:, 1] ** 2
    mask = (q <= mu).reshape(dom.interior_mask.shape) & dom.interior_mask
    ps = engulfing.PointedSet.from_mask(dom, dom.node_index((0.0, 0.0)), mask, mu=mu)
    for c in (1.5, 2.0):
        out = engulfing.dilate(ps, c)
        ratio = out.measure() / ps.measure()
        assert ratio == pytest.approx(c ** 2, rel=0.03)


def test_dilate_semigroup(disc129):
    dom, _, r = disc129
    ps = ball_set(dom, r, (0.05, -0.05), 0.2)
    for a, b in ((0.5, 2.0), (2.0, 0.5), (0.5, 3.0)):
        if a * b * 0.2 > 0.9:
            continue
        lhs = engulfing.dilate(engulfing.dilate(ps, a), b)
        rhs = engulfing.dilate(ps, a * b)
        assert engulfing.inclusion_with_slack(lhs.mask, rhs.mask)
        assert engulfing.inclusion_with_slack(rhs.mask, lhs.mask)


def test_dilate_escape_error(disc129):
    dom, _, r = disc129
    ps = ball_set(dom, r, (0.5, 0.0), 0.3)
    with pytest.raises(CmalabError):
        engulfing.dilate(ps, 10.0)


def test_engulfing_analytic_balls_strict(disc129):
    # Intersecting balls with mu1 <= 4 mu2: triangle inequality reaches
    # radius sqrt(mu1) + 2 sqrt(mu2) <= 4 sqrt(mu2) < 10 sqrt(mu2); the
    # inclusion holds without any slack beyond one cell.
    dom, _, r = disc129
    s1 = ball_set(dom, r, (0.2, 0.0), math.sqrt(0.04), mu=0.04)
    s2 = ball_set(dom, r, (0.0, 0.1), math.sqrt(0.02), mu=0.02)
    assert engulfing.sets_intersect(s1, s2)
    strict = engulfing.dilated_mask(s2, 10.0)
    assert bool(np.all(strict[s1.mask]))
    assert engulfing.check_engulfing(s1, s2) == "pass"


def test_engulfing_disjoint_not_applicable(disc129):
    dom, _, r = disc129
    s1 = ball_set(dom, r, (-0.6, 0.0), 0.05, mu=0.0025)
    s2 = ball_set(dom, r, (0.6, 0.0), 0.08, mu=0.0064)
    assert engulfing.check_engulfing(s1, s2) == "not-applicable"


def test_engulfing_hypothesis_violation_raises(disc129):
    dom, _, r = disc129
    s1 = ball_set(dom, r, (0.0, 0.0), 0.5, mu=0.25)
    s2 = ball_set(dom, r, (0.1, 0.0), 0.1, mu=0.01)
    with pytest.raises(ValueError):
        engulfing.check_engulfing(s1, s2)


def test_engulfing_symmetry_on_comparable_pairs(perturbed_n1):
    # Swapped roles with mu2 <= 4 mu1 pass on the same sampled pairs.
    dom, u, v0 = perturbed_n1
    rng = np.random.default_rng(5)
    chains = []
    for _ in range(6):
        p = rng.uniform(-0.35, 0.35, size=2)
        idx = dom.node_index(p)
        if not dom.interior_mask[idx]:
            continue
        chains.append(sections.construct_section_chain(
            u, idx, sigma=0.2, k_max=1, v0=v0))
    done = 0
    for i in range(len(chains)):
        for j in range(i + 1, len(chains)):
            c1, c2 = chains[i], chains[j]
            mu = 0.8 * min(c1.mu_top, c2.mu_top)
            s1 = c1.section(u, mu)
            s2 = c2.section(u, mu)
            v12 = engulfing.check_engulfing(s1, s2)
            v21 = engulfing.check_engulfing(s2, s1)
            if v12 == "not-applicable":
                assert v21 == "not-applicable"
            else:
                assert v12 == "pass" and v21 == "pass"
                done += 1
    assert done >= 3


def test_sandwich_dilation_between_heights(ball_n1):
    # 10 S_mu within S_{121 mu} within 12 S_mu where both heights exist.
    dom, u, _ = ball_n1
    chain = sections.construct_section_chain(
        u, dom.node_index((0.0, 0.0)), sigma=0.2, k_max=2, v0=u,
        mu0=0.24, mu_top=0.24)
    mu = chain.mu_top / 121.0
    assert math.sqrt(mu) >= 2 * dom.h
    s_small = engulfing.PointedSet.from_section(chain.section(u, mu))
    s_big = chain.section(u, 121.0 * mu)
    ten = engulfing.dilated_mask(s_small, 10.0)
    twelve = engulfing.dilated_mask(s_small, 12.0)
    assert engulfing.inclusion_with_slack(ten, s_big.mask)
    assert engulfing.inclusion_with_slack(s_big.mask, twelve)


# -- shape compatibility ------------------------------------------------------


def test_shape_compatibility_identical():
    T = sections.HermitianTransform(np.eye(2, dtype=complex))
    out = engulfing.shape_compatibility(T, T, 0.1)
    assert out["passed"]
    assert out["norm_12"] == pytest.approx(1.0)


def test_shape_compatibility_arithmetic():
    T1 = sections.HermitianTransform(np.eye(2, dtype=complex))
    T2 = sections.HermitianTransform(np.diag([1.1, 1 / 1.1]).astype(complex))
    out = engulfing.shape_compatibility(T1, T2, 0.1)
    assert out["bound"] == pytest.approx((1.1 / 0.9) ** 2)
    assert out["norm_12"] == pytest.approx(1.1)
    assert out["passed"]

    T3 = sections.HermitianTransform(np.diag([2.0, 0.5]).astype(complex))
    out = engulfing.shape_compatibility(T1, T3, 0.1)
    assert out["norm_12"] == pytest.approx(2.0)
    assert not out["passed"]


def test_shape_compatibility_rejects_singular():
    T1 = sections.HermitianTransform(np.eye(2, dtype=complex))
    T2 = sections.HermitianTransform(np.zeros((2, 2), dtype=complex))
    with pytest.raises(ValueError):
        engulfing.shape_compatibility(T1, T2, 0.1)


# -- shape uniqueness probe ---------------------------------------------------


def test_uniqueness_probe_identical(ball_n1):
    dom, u, _ = ball_n1
    x0 = dom.node_index((0.0, 0.0))
    h, A = sections.taylor_split(u, x0)
    out = engulfing.shape_uniqueness_probe(u, x0, 0.04, h, h, A, A, 0.05)
    assert out["status"] == "pass"


def test_uniqueness_probe_tiny_ripple(ball_n1):
    dom, u, _ = ball_n1
    x0 = dom.node_index((0.0, 0.0))
    h1, A = sections.taylor_split(u, x0)
    ripple = sections.PluriharmonicPoly(
        h1.center, h1.linear + np.array([1e-4 + 0j]), h1.quad + 1e-4)
    out = engulfing.shape_uniqueness_probe(u, x0, 0.04, h1, ripple, A, A, 0.05)
    assert out["status"] == "pass"


def test_uniqueness_probe_adversarial_precondition(ball_n1):
    # A strongly skewed candidate representation cannot satisfy the fit
    # precondition for a round section (n = 1 forms are scalar, so the
    # distortion enters through the shift).
    dom, u, _ = ball_n1
    x0 = dom.node_index((0.0, 0.0))
    h, A = sections.taylor_split(u, x0)
    skew = sections.PluriharmonicPoly(h.center, h.linear, h.quad + 0.8)
    out = engulfing.shape_uniqueness_probe(u, x0, 0.04, h, skew, A, A, 0.05)
    assert out["status"] == "precondition-unmet"

    escape = sections.PluriharmonicPoly(h.center, h.linear, h.quad + 12.0)
    out2 = engulfing.shape_uniqueness_probe(u, x0, 0.04, h, escape, A, A, 0.05)
    assert out2["status"] == "precondition-unmet"
