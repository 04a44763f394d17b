"""Grid discretization, complex differential calculus, persistence."""

import math

import numpy as np
import pytest
import sympy
from hypothesis import given, settings
from hypothesis import strategies as st

from cmalab import grid
from cmalab.errors import DegenerateHessianError, MemoryCapError, StencilViolationError


def test_exact_ball_res129_spacing_and_count():
    dom = grid.build_domain(1, "ball:1.0", 129)
    assert dom.h == pytest.approx(2.0 / 128, abs=1e-15)
    expected = math.pi / dom.h ** 2
    count = int(dom.interior_mask.sum())
    assert abs(count - expected) / expected < 0.01


def test_res9_center_is_interior():
    dom = grid.build_domain(1, "ball:1.0", 9)
    assert dom.interior_mask[dom.node_index((0.0, 0.0))]


def test_perturbed_ball_boundary_window_n2():
    dom = grid.build_domain(2, "perturbed:0.05:harmonic", 17)
    radii = np.linalg.norm(dom.coords(dom.boundary_mask.ravel()), axis=1)
    assert radii.min() >= 1.0 - 0.05 - dom.h - 1e-12
    assert radii.max() <= 1.0 + 0.05 + dom.h + 1e-12


def test_masks_disjoint_and_stencils_supported():
    dom = grid.build_domain(1, "perturbed:0.1:cos3", 65)
    assert not np.any(dom.interior_mask & dom.boundary_mask)
    valued = dom.valued_mask
    for idx in np.argwhere(dom.interior_mask)[:: 7]:
        for off in grid._stencil_offsets(dom.d):
            nb = tuple(idx + np.array(off))
            assert valued[nb]


def test_build_domain_validation():
    with pytest.raises(ValueError):
        grid.build_domain(3, "ball:1.0", 33)
    with pytest.raises(ValueError):
        grid.build_domain(1, "ball:1.0", 8)
    with pytest.raises(ValueError):
        grid.build_domain(1, "perturbed:0.6:cos3", 33)
    with pytest.raises(MemoryCapError):
        grid.build_domain(2, "ball:1.0", 129)


# -- complex Hessian ---------------------------------------------------------


def test_hessian_of_squared_modulus_is_identity():
    dom = grid.build_domain(2, "ball:1.2", 17)
    u = grid.GridFunction.from_callable(dom, lambda p: np.sum(p ** 2, axis=1))
    H = grid.complex_hessian(u, dom.node_index((0.1, -0.2, 0.3, 0.0)))
    assert np.allclose(H.entries, np.eye(2), atol=1e-12)


def test_hessian_of_pluriharmonic_is_zero_exactly():
    dom = grid.build_domain(1, "ball:1.0", 33)
    u = grid.GridFunction.from_callable(dom, lambda p: p[:, 0] ** 2 - p[:, 1] ** 2)
    H = grid.complex_hessian(u, dom.node_index((0.3, 0.4)))
    assert np.all(H.entries == 0.0)


def test_hessian_quartic_against_symbolic_oracle():
    # Sympy independently differentiates |z1|^4 at (1, 0).
    x1, y1 = sympy.symbols("x1 y1", real=True)
    expr = (x1 ** 2 + y1 ** 2) ** 2
    u11 = (sympy.diff(expr, x1, 2) + sympy.diff(expr, y1, 2)) / 4
    expected = float(u11.subs({x1: 1.0, y1: 0.0}))
    assert expected == 4.0

    dom = grid.build_domain(2, "ball:1.2", 25)
    u = grid.GridFunction.from_callable(
        dom, lambda p: (p[:, 0] ** 2 + p[:, 1] ** 2) ** 2)
    H = grid.complex_hessian(u, dom.node_index((1.0, 0.0, 0.0, 0.0)))
    assert H.entries[0, 0].real == pytest.approx(expected, abs=10 * dom.h ** 2)
    assert H.entries[1, 1].real == pytest.approx(0.0, abs=1e-12)


def test_hessian_order_of_accuracy():
    # Halving h cuts the max-node error on |z1|^4 by a factor in [3.5, 4.5].
    errs = {}
    for res in (13, 25):
        dom = grid.build_domain(2, "ball:1.2", res)
        u = grid.GridFunction.from_callable(
            dom, lambda p: (p[:, 0] ** 2 + p[:, 1] ** 2) ** 2)
        worst = 0.0
        for idx in np.argwhere(dom.interior_mask)[:: 17]:
            H = grid.complex_hessian(u, tuple(idx))
            pt = dom.coords(tuple(idx))
            exact = 4.0 * (pt[0] ** 2 + pt[1] ** 2)
            worst = max(worst, abs(H.entries[0, 0].real - exact))
        errs[res] = worst
    ratio = errs[13] / errs[25]
    assert 3.5 <= ratio <= 4.5


def test_hessian_hermitian_exactly():
    rng = np.random.default_rng(0)
    dom = grid.build_domain(2, "ball:1.0", 13)
    vals = rng.standard_normal((13,) * 4)
    u = grid.GridFunction(dom, np.where(dom.valued_mask, vals, np.nan))
    for idx in np.argwhere(dom.interior_mask)[:: 211]:
        H = grid.complex_hessian(u, tuple(idx)).entries
        assert np.array_equal(H, H.conj().T)


def test_stencil_violation_raises():
    dom = grid.build_domain(1, "ball:1.0", 33)
    u = grid.GridFunction.constant(dom, 1.0)
    bidx = tuple(np.argwhere(dom.boundary_mask)[0])
    with pytest.raises(StencilViolationError):
        grid.complex_hessian(u, bidx)


# -- Laplacian and inverse trace ---------------------------------------------


def test_laplacian_and_trace_inverse_diagonal_case():
    dom = grid.build_domain(2, "ball:1.2", 17)
    u = grid.GridFunction.from_callable(
        dom,
        lambda p: 2.0 * (p[:, 0] ** 2 + p[:, 1] ** 2)
        + 0.5 * (p[:, 2] ** 2 + p[:, 3] ** 2))
    x = dom.node_index((0.2, 0.0, -0.1, 0.3))
    assert grid.laplacian(u, x) == pytest.approx(10.0, abs=1e-10)
    assert grid.trace_inverse(u, x) == pytest.approx(2.5, abs=1e-10)


def test_laplacian_squared_modulus():
    dom = grid.build_domain(2, "ball:1.0", 17)
    u = grid.GridFunction.from_callable(dom, lambda p: np.sum(p ** 2, axis=1))
    x = dom.node_index((0.0,) * 4)
    assert grid.laplacian(u, x) == pytest.approx(8.0, abs=1e-10)
    assert grid.trace_inverse(u, x) == pytest.approx(2.0, abs=1e-10)


def test_trace_inverse_degenerate_raises_with_eigenvalue():
    dom = grid.build_domain(1, "ball:1.0", 33)
    u = grid.GridFunction.from_callable(dom, lambda p: p[:, 0] ** 2 - p[:, 1] ** 2)
    with pytest.raises(DegenerateHessianError) as err:
        grid.trace_inverse(u, dom.node_index((0.2, 0.1)))
    assert err.value.min_eigenvalue == pytest.approx(0.0, abs=1e-12)


@given(a=st.floats(0.2, 3.0), b=st.floats(0.2, 3.0), c=st.floats(-0.4, 0.4))
@settings(max_examples=20, deadline=None)
def test_laplacian_nonnegative_for_convex_quadratics(a, b, c):
    dom = grid.build_domain(1, "ball:1.0", 17)
    u = grid.GridFunction.from_callable(
        dom,
        lambda p: a * p[:, 0] ** 2 + b * p[:, 1] ** 2 + 2 * c * p[:, 0] * p[:, 1])
    if a * b - c * c <= 0:
        return
    x = dom.node_index((0.0, 0.0))
    assert grid.laplacian(u, x) >= -1e-12


# -- interpolation estimate ---------------------------------------------------


def test_interpolation_check_constant():
    dom = grid.build_domain(1, "ball:1.0", 33)
    mu = 0.7
    u = grid.GridFunction.constant(dom, mu)
    rep = grid.interpolation_check(u, mu=mu, lam=0.5, C=1.0, r0=0.9)
    assert rep["ok"]
    assert rep["rows"][0]["lhs"] == pytest.approx(0.0, abs=1e-12)


def test_interpolation_check_scaled_sine():
    # u = mu sin(x1 / lam): |u| <= mu, |D^4 u| <= mu / lam^4 =: C.
    dom = grid.build_domain(1, "ball:1.0", 129)
    mu, lam = 0.3, 0.5
    u = grid.GridFunction.from_callable(dom, lambda p: mu * np.sin(p[:, 0] / lam))
    C = mu / lam ** 4
    rep = grid.interpolation_check(u, mu=mu, lam=lam, C=C, r0=0.9, slack=2.0)
    assert rep["ok"]


def test_interpolation_check_quadratic_at_minimizing_lambda():
    # |D^2 u(0)| = 2 for u = |z|^2 with mu = sup|u| over B_r0 and C = 1.
    # With r0 = 1.5 the minimizing lambda = mu^(1/4) is interior and the
    # right side bottoms out at 2 r0 = 3 >= 2.
    dom = grid.build_domain(1, "ball:2.0", 65)
    u = grid.GridFunction.from_callable(dom, lambda p: np.sum(p ** 2, axis=1))
    r0 = 1.5
    mu = r0 ** 2
    lams = np.linspace(0.05, r0 * 0.999, 400)
    best = min(lams, key=lambda lam: lam ** 2 + mu / lam ** 2)
    assert float(best) ** 2 + mu / float(best) ** 2 == pytest.approx(2 * r0, rel=1e-4)
    rep = grid.interpolation_check(u, mu=mu, lam=float(best), C=1.0, r0=r0, slack=1.0)
    row2 = rep["rows"][1]
    assert row2["lhs"] == pytest.approx(2.0, abs=1e-9)
    assert row2["ok"]


# -- persistence ---------------------------------------------------------------


def test_csv_and_cache_roundtrip(tmp_path):
    dom = grid.build_domain(1, "ball:1.0", 17)
    u = grid.GridFunction.from_callable(dom, lambda p: np.sum(p ** 2, axis=1))
    cache = tmp_path / "u.bin"
    u.write_cache(cache)
    n, res, h, vals = grid.read_cache(cache)
    assert (n, res) == (1, 17)
    assert h == pytest.approx(dom.h)
    mask = dom.valued_mask
    assert np.allclose(vals[mask], u.values[mask])
    assert np.all(np.isnan(vals[~mask]))

    csvp = tmp_path / "u.csv"
    u.write_csv(csvp)
    lines = csvp.read_text().strip().splitlines()
    assert lines[0] == "index,c0,c1,value"
    assert len(lines) == 1 + int(mask.sum())


def test_cache_magic_guard(tmp_path):
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"NOPE" + b"\x00" * 32)
    with pytest.raises(ValueError):
        grid.read_cache(bad)


# -- measure -------------------------------------------------------------------


def test_measure_is_count_times_cell():
    dom = grid.build_domain(1, "ball:1.0", 33)
    assert dom.measure(10) == pytest.approx(10 * dom.h ** 2)
    assert dom.measure(dom.interior_mask) == pytest.approx(
        int(dom.interior_mask.sum()) * dom.h ** 2)
