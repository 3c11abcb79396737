from __future__ import annotations

import numpy as np
import pytest

from pengeo import (
    DiscretePath,
    energy,
    euclidean_structure,
    heisenberg_structure,
    martinet_structure,
)

_ACCEPTANCE_LINES: list = []


def record_criterion(name: str, passed: bool, detail: str = "") -> None:
    """Collect one acceptance verdict for the end-of-run summary."""
    verdict = "PASS" if passed else "FAIL"
    suffix = f"  ({detail})" if detail else ""
    _ACCEPTANCE_LINES.append(f"{verdict}  {name}{suffix}")


def pytest_terminal_summary(terminalreporter) -> None:
    if not _ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in _ACCEPTANCE_LINES:
        terminalreporter.write_line(line)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240911)


@pytest.fixture(scope="session")
def heisenberg():
    return heisenberg_structure()


@pytest.fixture(scope="session")
def martinet():
    return martinet_structure()


@pytest.fixture(scope="session")
def euclidean3():
    return euclidean_structure(3)


def random_path(
    structure,
    grid_size: int,
    rng: np.random.Generator,
    scale: float = 0.5,
    start=None,
    end=None,
) -> DiscretePath:
    """A chord between random (or given) endpoints with jittered interior."""
    n = structure.dimension
    if start is None:
        start = rng.normal(size=n)
    if end is None:
        end = rng.normal(size=n)
    base = DiscretePath.chord(start, end, grid_size)
    jitter = scale * rng.normal(size=(grid_size - 1, n))
    return base.with_interior(base.interior() + jitter)


def fd_energy_gradient(structure, q, path, step: float = 1e-6) -> np.ndarray:
    """Central finite differences of the energy over interior coordinates."""
    interior = path.interior()
    grad = np.zeros_like(interior)
    h = step * (1.0 + float(np.max(np.abs(interior), initial=0.0)))
    for i in range(interior.shape[0]):
        for j in range(interior.shape[1]):
            plus = interior.copy()
            plus[i, j] += h
            minus = interior.copy()
            minus[i, j] -= h
            e_plus = energy(structure, q, path.with_interior(plus))
            e_minus = energy(structure, q, path.with_interior(minus))
            grad[i, j] = (e_plus - e_minus) / (2.0 * h)
    return grad.ravel()


def heisenberg_lifted_circle(radius: float, grid_size: int) -> DiscretePath:
    """Discrete admissible lift of a planar circle through the origin.

    The z increments cancel the admissibility one-form at the segment
    midpoints, so the discrete defect is pure roundoff and the final height
    equals the polygon's enclosed (shoelace) area.
    """
    t = np.linspace(0.0, 1.0, grid_size + 1)
    x = radius * np.sin(2.0 * np.pi * t)
    y = radius * (1.0 - np.cos(2.0 * np.pi * t))
    z = np.zeros(grid_size + 1)
    for i in range(grid_size):
        xm = 0.5 * (x[i] + x[i + 1])
        ym = 0.5 * (y[i] + y[i + 1])
        z[i + 1] = z[i] + 0.5 * (xm * (y[i + 1] - y[i]) - ym * (x[i + 1] - x[i]))
    return DiscretePath.from_points(np.column_stack([x, y, z]))


def martinet_lifted_wave(amplitude: float, grid_size: int) -> DiscretePath:
    """Discrete admissible path for the flat-plane benchmark with one bend.

    Follows x = t with y a sine arch, accumulating z so that the one-form
    dz - y^2 dx vanishes at every segment midpoint.
    """
    t = np.linspace(0.0, 1.0, grid_size + 1)
    x = t.copy()
    y = amplitude * np.sin(2.0 * np.pi * t)
    z = np.zeros(grid_size + 1)
    for i in range(grid_size):
        ym = 0.5 * (y[i] + y[i + 1])
        z[i + 1] = z[i] + ym * ym * (x[i + 1] - x[i])
    return DiscretePath.from_points(np.column_stack([x, y, z]))
