"""Angular quadrature, spatial mesh and time-step schedule."""

from dataclasses import dataclass, field

import numpy as np


def legendre_nodes(order: int):
    """Gauss-Legendre nodes and weights on [-1, 1].

    Newton iteration on P_n with Chebyshev initial guesses; dependency
    free so the result can be cross-checked against library quadrature.
    """
    if order < 1:
        raise ValueError("quadrature order must be >= 1")

    def eval_pn(x):
        # Legendre recurrence; returns P_n(x) and its derivative.
        p0 = np.ones_like(x)
        p1 = x.copy()
        for n in range(2, order + 1):
            p0, p1 = p1, ((2 * n - 1) * x * p1 - (n - 1) * p0) / n
        if order == 1:
            return p1, np.ones_like(x)
        return p1, order * (x * p1 - p0) / (x * x - 1.0)

    k = np.arange(1, order + 1)
    x = np.cos(np.pi * (k - 0.25) / (order + 0.5))
    for _ in range(100):
        pn, dpn = eval_pn(x)
        dx = pn / dpn
        x -= dx
        if np.max(np.abs(dx)) < 1e-15:
            break
    _, dpn = eval_pn(x)
    w = 2.0 / ((1.0 - x * x) * dpn * dpn)
    idx = np.argsort(x)
    return x[idx], w[idx]


@dataclass(frozen=True)
class AngularQuadrature:
    """Direction cosines and weights with sum(w) = 2 and no mu = 0.

    Directions are ordered by ascending mu: the negative block first
    (descending |mu|), then the positive block, so intensity arrays are
    reproducible bit for bit.
    """

    mu: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        mu = np.asarray(self.mu, float)
        w = np.asarray(self.w, float)
        if mu.shape != w.shape or mu.ndim != 1:
            raise ValueError("mu and w must be 1D arrays of equal length")
        if np.any(mu == 0.0) or np.any(np.abs(mu) >= 1.0):
            raise ValueError("direction cosines must lie in (-1,1) without 0")
        if np.any(w <= 0.0):
            raise ValueError("weights must be positive")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "w", w)

    @property
    def n_angles(self) -> int:
        return self.mu.size

    @property
    def negative(self) -> slice:
        """Index slice of the mu < 0 block."""
        return slice(0, self.mu.size // 2)

    @property
    def positive(self) -> slice:
        """Index slice of the mu > 0 block."""
        return slice(self.mu.size // 2, self.mu.size)


def build_double_gauss(order_per_half: int) -> AngularQuadrature:
    """Double Gauss-Legendre set: GL nodes mapped onto (0,1), mirrored.

    M = 2 * order_per_half directions; integrates mu^k exactly for
    k <= 2*order_per_half - 1 on each half range.
    """
    x, wx = legendre_nodes(order_per_half)
    mu_pos = 0.5 * (x + 1.0)
    w_pos = 0.5 * wx
    mu = np.concatenate((-mu_pos[::-1], mu_pos))
    w = np.concatenate((w_pos[::-1], w_pos))
    return AngularQuadrature(mu=mu, w=w)


@dataclass(frozen=True)
class SpatialMesh:
    """Cell widths dx and the edge coordinates they imply."""

    dx: np.ndarray
    edges: np.ndarray = field(init=False)

    def __post_init__(self):
        dx = np.asarray(self.dx, float)
        if dx.ndim != 1 or dx.size < 1 or np.any(dx <= 0.0):
            raise ValueError("cell widths must be a 1D positive array")
        object.__setattr__(self, "dx", dx)
        object.__setattr__(self, "edges", np.concatenate(([0.0], np.cumsum(dx))))

    @classmethod
    def uniform(cls, width: float, n_cells: int) -> "SpatialMesh":
        if width <= 0.0 or n_cells < 1:
            raise ValueError("need positive width and at least one cell")
        return cls(dx=np.full(n_cells, width / n_cells))

    @property
    def n_cells(self) -> int:
        return self.dx.size

    @property
    def width(self) -> float:
        return float(self.edges[-1])

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])


@dataclass(frozen=True)
class TimeGrid:
    """Uniform time-step schedule from t0 to t_end.

    t_end == t0 is allowed and means zero steps.
    """

    t_end: float
    dt: float
    t0: float = 0.0

    def __post_init__(self):
        if self.dt <= 0.0 or self.t_end < self.t0:
            raise ValueError("need dt > 0 and t_end >= t0")

    @property
    def n_steps(self) -> int:
        n = round((self.t_end - self.t0) / self.dt)
        if abs(self.t0 + n * self.dt - self.t_end) > 1e-9 * max(1.0, abs(self.t_end)):
            raise ValueError("t_end - t0 must be an integer number of steps")
        return n

    def times(self) -> np.ndarray:
        """Time level values t0, t0+dt, ..., t_end."""
        return self.t0 + self.dt * np.arange(self.n_steps + 1)
