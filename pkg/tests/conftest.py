"""Shared solved instances; session-scoped to amortize solver cost."""

import numpy as np
import pytest

from cmalab import grid, solver


@pytest.fixture(scope="session")
def ball_n1():
    dom = grid.build_domain(1, "ball:1.0", 129)
    u, rep = solver.solve_dirichlet(dom, 1.0, 0.0)
    return dom, u, rep


@pytest.fixture(scope="session")
def ball_n2():
    dom = grid.build_domain(2, "ball:1.0", 17)
    u, rep = solver.solve_dirichlet(dom, 1.0, 0.0)
    return dom, u, rep


def perturbed_f(eps):
    def f(pts):
        pts = np.atleast_2d(pts)
        return 1.0 + eps * np.cos(2.0 * np.pi * pts[:, 0]) * np.cos(2.0 * np.pi * pts[:, 1])
    return f


@pytest.fixture(scope="session")
def perturbed_n1():
    """n=1, gamma=0.05, eps=0.01: solution u, unit-rhs solution v0."""
    dom = grid.build_domain(1, "perturbed:0.05:cos3", 97)
    u, _ = solver.solve_dirichlet(dom, perturbed_f(0.01), 0.0)
    v0, _ = solver.solve_dirichlet(dom, 1.0, 0.0)
    return dom, u, v0


@pytest.fixture(scope="session")
def perturbed_n2():
    dom = grid.build_domain(2, "perturbed:0.05:harmonic", 17)
    v0, _ = solver.solve_dirichlet(dom, 1.0, 0.0)

    def f(pts):
        pts = np.atleast_2d(pts)
        return 1.0 + 0.01 * np.cos(np.pi * pts[:, 0]) * np.cos(np.pi * pts[:, 2])

    u, _ = solver.solve_dirichlet(dom, f, 0.0)
    return dom, u, v0
