"""Fill-distance and support-size estimation.

The attraction and repulsion weights need support radii that guarantee
enough neighbours for every reconstruction point.  Sizes are derived from
the fill-distance of the data (median nearest-neighbour distance, an
outlier-robust variant of the usual sup definition) scaled by the smallest
grid multiplier whose ball around every reconstruction point captures the
service-centre quota of nu = floor(J / I) data points.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import kernels
from .cloud import as_points
from .errors import ConfigError, UnreachableSupportError
from .rng import Rng
from .sketch import SketchMatrix

# Multiplicative search grid for the radius multiplier: the downstream
# Gaussian weight is insensitive to a 10% radius error, so an exact argmin
# over the continuum buys nothing.
C_GROWTH = 1.1
C_MAX = 64.0


@dataclass(frozen=True)
class SupportParams:
    """Neighbourhood geometry bundle.

    h0 is the fill-distance of the data; c1 the smallest grid multiplier
    covering the quota; h_hat0 = c1 * h0; h1/h2 the attraction/repulsion
    support sizes.  All radii are sketched-metric quantities.
    """

    h0: float
    nu: int
    c1: float
    h_hat0: float
    h1: float
    h2: float

    def __post_init__(self):
        values = (self.h0, self.c1, self.h_hat0, self.h1, self.h2)
        if not all(math.isfinite(v) and v > 0 for v in values):
            raise ValueError(f"support parameters must be finite and positive: {self}")
        if self.nu < 1:
            raise ValueError("nu must be at least 1")

    def to_dict(self) -> dict:
        return asdict(self)


def fill_distance(X, S: SketchMatrix) -> float:
    """Median over points of the sketched nearest-neighbour distance.

    The median of an even-length list is the mean of the two central values.
    """
    pts = as_points(X)
    if pts.shape[0] < 2:
        raise ValueError("fill distance requires at least 2 points")
    nn = kernels.self_nn_dists(S.project(pts))
    return float(np.median(nn))


def _quota_radii(P, Q, nu: int, S: SketchMatrix) -> np.ndarray:
    """Per reconstruction point, the nu-th smallest sketched distance to P.

    A point is not its own neighbour: when the centre coincides exactly with
    a data point (Q drawn from P), one zero distance is discarded.
    """
    D = kernels.pairwise_dists(S.project(Q), S.project(P))
    out = np.empty(D.shape[0])
    for i, row in enumerate(D):
        r = row
        if r.min() == 0.0:
            z = np.flatnonzero(r == 0.0)[:1]
            r = np.delete(r, z)
        if nu > r.size:
            raise UnreachableSupportError(
                f"point {i} has only {r.size} candidate neighbours, needs {nu}"
            )
        out[i] = np.partition(r, nu - 1)[nu - 1]
    return out


def guarantee_radius(P, Q, h0: float, nu: int, S: SketchMatrix,
                     c_max: float = C_MAX, growth: float = C_GROWTH) -> tuple[float, float]:
    """Smallest grid multiplier c1 whose closed ball of radius c1*h0 around
    every point of Q contains at least nu points of P.

    Returns:
        (c1, h_hat0) with h_hat0 = c1 * h0.

    Raises:
        UnreachableSupportError: no multiplier up to c_max works
            (pathological clustering).
    """
    if nu < 1:
        raise ConfigError("nu must be at least 1")
    if h0 <= 0:
        raise ConfigError("h0 must be positive")
    needed = float(_quota_radii(P, Q, nu, S).max())
    k = 0
    while True:
        c = growth ** k
        if c > c_max:
            raise UnreachableSupportError(
                f"no multiplier <= {c_max} reaches the quota; "
                f"worst point needs c >= {needed / h0:.3g}"
            )
        if c * h0 >= needed:
            return float(c), float(c * h0)
        k += 1


def estimate_supports(P, I: int, S: SketchMatrix, rng: Rng, q0=None) -> SupportParams:
    """Estimate the attraction/repulsion support sizes for a run.

    h1 comes from the quota radius of the actual reconstruction seed q0
    against the data.  The eventual reconstruction is expected to be
    quasi-uniform, which the seed is not, so h2 is instead computed from a
    fresh uniform subsample standing in for both sets.

    Args:
        P: data cloud (J points).
        I: reconstruction size, 1 <= I <= J.
        q0: optional seed cloud; defaults to a uniform subsample drawn from rng.
    """
    pts = as_points(P)
    J = pts.shape[0]
    if not 1 <= I <= J:
        raise ConfigError(
            f"reconstruction size must satisfy 1 <= I <= J, got I={I}, J={J}; "
            "runs with I > J are not supported"
        )
    nu = J // I
    h0 = fill_distance(pts, S)
    if q0 is None:
        q0 = pts[rng.subsample(J, I)]
    c1, h1 = guarantee_radius(pts, q0, h0, nu, S)
    rand_idx = rng.subsample(J, I)
    qr = pts[rand_idx]
    if I >= 2:
        h0_rand = fill_distance(qr, S)
        _, h2 = guarantee_radius(qr, qr, h0_rand, 1, S)
    else:
        h2 = h1
    return SupportParams(h0=h0, nu=nu, c1=c1, h_hat0=h1, h1=h1, h2=h2)


def predicted_support_count(d: int, nu: int) -> int:
    """Expected neighbour count at radius 2*sqrt(2)*h_hat0 on a d-dimensional
    structure: floor(2^(1.5 d) * nu).  Diagnostic only, never enforced."""
    if d < 1 or nu < 1:
        raise ValueError("d and nu must be at least 1")
    return int(math.floor(2.0 ** (1.5 * d) * nu))
