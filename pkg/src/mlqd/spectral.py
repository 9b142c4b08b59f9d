"""Planck spectrum integrals, group emission and the test-problem opacity.

All photon energies and temperatures are in keV.  The dimensionless
Planck integral

    L(x) = integral_0^x t^3 / (e^t - 1) dt,   L(inf) = pi^4 / 15

is evaluated by two convergent series: a Bernoulli-number power series
below ``_X_SWITCH`` and the exponential tail series above it.  Both are
accurate to ~1e-15 absolute, well inside the 1e-12 budget.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .constants import PhysicalConstants

PLANCK_NORM = math.pi**4 / 15.0

# Switch point between the two series for L(x).  At 1.0 the power series
# needs ~12 Bernoulli terms and the tail series ~40 exponential terms for
# full double precision.
_X_SWITCH = 1.0
_N_TAIL = 40

# B_{2k} for k = 1..13; the power-series term is
# B_{2k} x^(2k+3) / ((2k+3) (2k)!).
_BERNOULLI = [
    1.0 / 6.0,
    -1.0 / 30.0,
    1.0 / 42.0,
    -1.0 / 30.0,
    5.0 / 66.0,
    -691.0 / 2730.0,
    7.0 / 6.0,
    -3617.0 / 510.0,
    43867.0 / 798.0,
    -174611.0 / 330.0,
    854513.0 / 138.0,
    -236364091.0 / 2730.0,
    8553103.0 / 6.0,
]
_SERIES_COEF = [
    b / ((2 * k + 3) * math.factorial(2 * k)) for k, b in enumerate(_BERNOULLI, start=1)
]


def _lower_series(x):
    """L(x) for x <= _X_SWITCH via the Bernoulli power series."""
    x = np.asarray(x, dtype=float)
    x2 = x * x
    acc = np.zeros_like(x)
    for c in reversed(_SERIES_COEF):
        acc = (acc + c) * x2
    # acc now holds sum_k c_k x^(2k); multiply by x^3 and add leading terms
    return x2 * x * (1.0 / 3.0 - x / 8.0 + acc)


# Term counts giving < 1e-16 relative truncation of the tail series on
# each argument range (the n-th term is ~e^(-(n-1)x) of the first).
_TAIL_BUCKETS = ((30.0, 2), (15.0, 4), (8.0, 6), (4.0, 11), (2.0, 20), (1.0, 40), (0.0, 60))


def _tail_sum(x, n_terms):
    n = np.arange(1, n_terms + 1).reshape((n_terms,) + (1,) * x.ndim)
    x2, x3 = x * x, x * x * x
    terms = np.exp(-n * x) * (x3 / n + 3.0 * x2 / n**2 + 6.0 * x / n**3 + 6.0 / n**4)
    return terms.sum(axis=0)


def _upper_series(x):
    """pi^4/15 - L(x) for x >= _X_SWITCH via the exponential tail series.

    Arguments are bucketed by size so large x (the common case for cold
    cells) use only the few terms they need.  Infinite entries map to 0;
    underflow of exp(-n x) is harmless.
    """
    x = np.asarray(x, dtype=float)
    shape = x.shape
    finite = np.isfinite(x)
    xf = np.where(finite, x, 1.0).reshape(-1)
    out = np.zeros_like(xf)
    done = np.zeros(xf.shape, dtype=bool)
    for lo, n_terms in _TAIL_BUCKETS:
        sel = (~done) & (xf >= lo)
        if np.any(sel):
            out[sel] = _tail_sum(xf[sel], n_terms)
            done |= sel
        if done.all():
            break
    return np.where(finite, out.reshape(shape), 0.0)


def _band_integral(x_lo, x_hi):
    """integral of t^3/(e^t - 1) over [x_lo, x_hi], elementwise.

    Branches so that bands lying entirely in the exponential tail are
    formed as a difference of tail values; subtracting from pi^4/15
    there would cancel catastrophically.
    """
    x_lo, x_hi = np.broadcast_arrays(np.asarray(x_lo, float), np.asarray(x_hi, float))
    lo_small = x_lo <= _X_SWITCH
    hi_small = x_hi <= _X_SWITCH

    ls_lo = _lower_series(np.minimum(x_lo, _X_SWITCH))
    ls_hi = _lower_series(np.minimum(x_hi, _X_SWITCH))
    up_lo = _upper_series(np.maximum(x_lo, _X_SWITCH))
    up_hi = _upper_series(np.maximum(x_hi, _X_SWITCH))

    both_small = ls_hi - ls_lo
    both_large = up_lo - up_hi
    straddle = (PLANCK_NORM - up_hi) - ls_lo
    out = np.where(hi_small, both_small, np.where(lo_small, straddle, both_large))
    return out


@dataclass(frozen=True)
class GroupStructure:
    """Photon-energy group boundaries in keV, strictly increasing.

    ``edges[0]`` may be 0 and ``edges[-1]`` may be ``inf`` (open top
    group).  There are ``len(edges) - 1`` groups.
    """

    edges: np.ndarray = field(default_factory=lambda: default_edges())

    def __post_init__(self):
        e = np.asarray(self.edges, dtype=float)
        if e.ndim != 1 or e.size < 2:
            raise ValueError("need at least two group edges")
        if e[0] < 0.0:
            raise ValueError("group edges must be nonnegative")
        if not np.all(np.diff(e) > 0.0):
            raise ValueError("group edges must be strictly increasing")
        object.__setattr__(self, "edges", e)

    @property
    def n_groups(self) -> int:
        return self.edges.size - 1

    def __len__(self) -> int:
        return self.n_groups


def default_edges(n_interior: int = 16, lo: float = 0.7075, hi: float = 20.0) -> np.ndarray:
    """Default 17-group structure: 0, then log-spaced edges, open top.

    16 logarithmically spaced boundaries from 0.7075 to 20 keV sit
    between a bottom group reaching down to 0 and a top group open to
    infinity.
    """
    return np.concatenate(([0.0], np.geomspace(lo, hi, n_interior), [np.inf]))


def _check_temperature(T):
    T = np.asarray(T, dtype=float)
    if np.any(T <= 0.0) or not np.all(np.isfinite(T)):
        raise ValueError("temperature must be positive and finite")
    return T


def planck_fraction(T, lo: float, hi: float):
    """Fraction of black-body emission between photon energies lo and hi.

    Returns (15/pi^4) * integral_{lo/T}^{hi/T} x^3/(e^x - 1) dx, a value
    in [0, 1].  ``T`` may be a scalar or an array; ``hi`` may be inf.
    """
    T = _check_temperature(T)
    if not 0.0 <= lo < hi:
        raise ValueError(f"need 0 <= lo < hi, got lo={lo}, hi={hi}")
    out = _band_integral(lo / T, hi / T) / PLANCK_NORM
    return float(out) if np.isscalar(out) or out.ndim == 0 else out


def group_emission(T, groups: GroupStructure, const: PhysicalConstants = PhysicalConstants()):
    """Group black-body emission B_g, normalized so sum_g 2 B_g = c a T^4.

    For scalar T the result has shape (G,), for an array of cell
    temperatures shape (G, ...).
    """
    T = _check_temperature(T)
    x = groups.edges[(...,) + (np.newaxis,) * T.ndim] / T
    frac = _band_integral(x[:-1], x[1:]) / PLANCK_NORM
    return 0.5 * const.c * const.a_rad * T**4 * frac


def spectral_opacity(hnu, T):
    """Opacity 27/(hnu)^3 * (1 - exp(-hnu/T)) of the benchmark material."""
    hnu = np.asarray(hnu, dtype=float)
    T = _check_temperature(T)
    if np.any(hnu <= 0.0):
        raise ValueError("photon energy must be positive")
    out = 27.0 / hnu**3 * (-np.expm1(-hnu / T))
    return float(out) if out.ndim == 0 else out


# Below this emission fraction a group is treated as empty and its
# opacity falls back to a midpoint evaluation.
_EMPTY_GROUP_FRACTION = 1e-300


def group_opacity(T, groups: GroupStructure, const: PhysicalConstants = PhysicalConstants()):
    """Planck- (emission-) weighted group opacities of the test material.

    The spectral shape 27/(hnu)^3 (1 - e^(-hnu/T)) integrates against
    the Planck weight to 27/T^3 * (e^(-x_lo) - e^(-x_hi)) for the
    numerator, so only the denominator needs the Planck integral.  Empty
    groups (emission fraction below 1e-300) fall back to the spectral
    opacity at the group midpoint, or at twice the lower edge for the
    open top group.
    """
    T = _check_temperature(T)
    edges = groups.edges
    x = edges[(...,) + (np.newaxis,) * T.ndim] / T
    band = _band_integral(x[:-1], x[1:])

    with np.errstate(under="ignore"):
        expx = np.exp(-np.where(np.isfinite(x), x, np.inf))
    numer = expx[:-1] - expx[1:]

    frac = band / PLANCK_NORM
    empty = frac < _EMPTY_GROUP_FRACTION
    safe_band = np.where(empty, 1.0, band)
    kappa = 27.0 / T**3 * numer / safe_band

    if np.any(empty):
        mid = 0.5 * (edges[:-1] + edges[1:])
        if not np.isfinite(edges[-1]):
            mid[-1] = 2.0 * edges[-2]
        mid = mid[(...,) + (np.newaxis,) * T.ndim]
        fallback = 27.0 / mid**3 * (-np.expm1(-mid / T))
        kappa = np.where(empty, fallback, kappa)
    return kappa


def group_tables(T, groups: GroupStructure, const: PhysicalConstants = PhysicalConstants()):
    """(kappa_g, B_g) for an array of cell temperatures, shapes (G, J).

    Shares the per-edge Planck integrals between the opacity and the
    emission, which halves the cost of the per-iteration coefficient
    update in the time stepper.
    """
    T = _check_temperature(T)
    edges = groups.edges
    x = edges[:, np.newaxis] / T[np.newaxis, :]
    band = _band_integral(x[:-1], x[1:])
    emission = 0.5 * const.c * const.a_rad * T**4 * (band / PLANCK_NORM)

    with np.errstate(under="ignore"):
        expx = np.exp(-np.where(np.isfinite(x), x, np.inf))
    numer = expx[:-1] - expx[1:]
    frac = band / PLANCK_NORM
    empty = frac < _EMPTY_GROUP_FRACTION
    kappa = 27.0 / T**3 * numer / np.where(empty, 1.0, band)
    if np.any(empty):
        mid = 0.5 * (edges[:-1] + edges[1:])
        if not np.isfinite(edges[-1]):
            mid[-1] = 2.0 * edges[-2]
        fallback = 27.0 / mid[:, None] ** 3 * (-np.expm1(-mid[:, None] / T[None, :]))
        kappa = np.where(empty, fallback, kappa)
    return kappa, emission
