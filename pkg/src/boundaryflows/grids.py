"""Deterministic compact evaluation grids.

Every sup-norm estimate in this package is taken over a fixed, seeded grid so
that runs are reproducible bit-for-bit.  The standard grid is a set of
concentric spherical shells inside the closed unit ball plus the origin,
200 points in total.
"""

import numpy as np

GRID_SEED = 7
GRID_SIZE = 200
SHELL_RADII = (0.25, 0.5, 0.75, 1.0)
SHELL_COUNTS = (24, 40, 60, 75)  # + origin = 200
R_MAX_FACTOR = 1e3  # safety radius for iteration = R_MAX_FACTOR * grid radius

_GOLDEN = np.pi * (3.0 - np.sqrt(5.0))


def circle_directions(count, phase=0.0):
    """`count` unit vectors in R^2 at equally spaced angles."""
    th = phase + 2.0 * np.pi * np.arange(count) / count
    return np.column_stack([np.cos(th), np.sin(th)])


def fibonacci_sphere(count):
    """Quasi-uniform unit vectors in R^3 (golden-angle spiral)."""
    k = np.arange(count)
    z = 1.0 - (2.0 * k + 1.0) / count
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    th = _GOLDEN * k
    return np.column_stack([r * np.cos(th), r * np.sin(th), z])


def sphere_directions(dim, count, seed=GRID_SEED):
    """Deterministic set of `count` unit vectors in R^dim.

    dim 2 and 3 use lattice constructions (no randomness); higher dimensions
    fall back to seeded Gaussian directions.
    """
    if dim < 1:
        raise ValueError("dimension must be >= 1")
    if dim == 1:
        return np.array([[1.0], [-1.0]] * ((count + 1) // 2))[:count]
    if dim == 2:
        return circle_directions(count)
    if dim == 3:
        return fibonacci_sphere(count)
    rng = np.random.default_rng(seed)
    v = rng.standard_normal((count, dim))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def unit_ball_grid(dim, size=GRID_SIZE, seed=GRID_SEED):
    """The standard compact evaluation grid: shells in the unit ball + origin.

    Returns an (size, dim) array.  Deterministic for fixed (dim, size, seed).
    """
    if size < len(SHELL_RADII) + 1:
        raise ValueError("grid size too small")
    # scale the reference shell counts to the requested size
    base = np.array(SHELL_COUNTS, dtype=float)
    counts = np.floor(base * (size - 1) / base.sum()).astype(int)
    counts[-1] += (size - 1) - counts.sum()
    pts = [np.zeros((1, dim))]
    for i, (r, c) in enumerate(zip(SHELL_RADII, counts)):
        dirs = sphere_directions(dim, c, seed=seed + i)
        if dim == 2:  # stagger rings so points do not align radially
            dirs = circle_directions(c, phase=0.5 * i)
        pts.append(r * dirs)
    return np.vstack(pts)


def grid_radius(grid):
    return float(np.linalg.norm(grid, axis=1).max())


def sup_norm(values):
    """Sup over the grid of the euclidean norm of rows."""
    return float(np.linalg.norm(np.atleast_2d(values), axis=-1).max())
