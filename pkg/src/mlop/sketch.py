"""Randomized linear sketching for robust high-dimensional norms.

All inter-point norms and distances in the pipeline are evaluated after
projecting onto a column-orthonormal basis S built once from the input data:
a Gaussian mix of the data rows, orthonormalized by QR.  ||S^t x|| never
exceeds ||x|| and equals it on the column span, so distances computed this
way contract ambient noise while preserving the data geometry.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cloud import as_points, load_cloud, write_matrix
from .errors import DegenerateSketchError
from .rng import Rng


@dataclass(frozen=True)
class SketchMatrix:
    """Column-orthonormal n-by-m projection basis."""

    s: np.ndarray

    def __post_init__(self):
        s = np.array(self.s, dtype=np.float64, copy=True)
        if s.ndim != 2:
            raise ValueError("sketch basis must be a 2-d array")
        gram_err = np.abs(s.T @ s - np.eye(s.shape[1])).max()
        if gram_err > 1e-10:
            raise ValueError(f"sketch columns not orthonormal (|S^tS - I| = {gram_err:.3e})")
        s.flags.writeable = False
        object.__setattr__(self, "s", s)

    @property
    def source_dims(self) -> tuple[int, int]:
        return self.s.shape

    @property
    def n(self) -> int:
        return self.s.shape[0]

    @property
    def m(self) -> int:
        return self.s.shape[1]

    @classmethod
    def identity(cls, n: int) -> "SketchMatrix":
        """Exact-norm sketch (m = n); lets low-dimensional tests bypass projection error."""
        return cls(np.eye(n))

    def project(self, points) -> np.ndarray:
        """Project points-as-rows into the sketch space: X @ S."""
        return as_points(points) @ self.s


def build_sketch(P, m: int, rng: Rng) -> SketchMatrix:
    """Build the projection basis from the data cloud.

    Draws a J-by-m standard-normal mixing matrix G, forms B = P^t G (columns
    are random combinations of the data rows, so they live in the data's row
    space), and orthonormalizes B by QR.

    Raises:
        DegenerateSketchError: B has rank < m (e.g. the data spans fewer than
            m directions).  The caller may retry with a smaller m; padding
            silently would corrupt every downstream norm.
    """
    pts = as_points(P)
    J, n = pts.shape
    if not 1 <= m <= n:
        raise ValueError(f"sketch dimension must be in [1, {n}], got {m}")
    g = rng.standard_normal((J, m))
    b = pts.T @ g
    q, r = np.linalg.qr(b)
    diag = np.abs(np.diag(r))
    tol = max(J, n) * np.finfo(np.float64).eps * (diag.max() if diag.size else 0.0)
    achieved = int(np.sum(diag > tol))
    if achieved < m:
        raise DegenerateSketchError(requested=m, achieved=achieved)
    return SketchMatrix(q)


def sketched_norm(S: SketchMatrix, x) -> float:
    """||S^t x||_2; at most ||x||_2, equal for x in the column span."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != S.n:
        raise ValueError(f"vector has length {x.shape[-1]}, sketch expects {S.n}")
    return float(np.linalg.norm(x @ S.s))


def sketched_dist(S: SketchMatrix, x, y) -> float:
    """Sketched distance ||S^t (x - y)||_2 (a seminorm distance)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    return sketched_norm(S, x - y)


def save_sketch(S: SketchMatrix, path) -> None:
    """Persist the basis as CSV (same layout as a point cloud, m columns)."""
    write_matrix(S.s, path)


def load_sketch(path) -> SketchMatrix:
    return SketchMatrix(load_cloud(path).points)
