"""Quantitative evaluation: reconstruction error, image SNR, local-PCA error.

All distances are sketched unless a test passes the identity sketch.  Every
metric is permutation-invariant in the evaluated cloud.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .cloud import as_points
from .sketch import SketchMatrix

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class NearestErrors:
    dists: np.ndarray
    rmse: float
    max: float
    variance: float


def nearest_reference_errors(Q, reference, S: SketchMatrix, threads: int = 1) -> NearestErrors:
    """Per-point sketched distance to the nearest reference point, with
    rmse, max, and population variance of the distances."""
    ref = as_points(reference)
    if ref.shape[0] == 0:
        raise ValueError("reference cloud is empty")
    d = kernels.min_dists(S.project(Q), S.project(ref), threads=threads)
    return NearestErrors(
        dists=d,
        rmse=float(np.sqrt(np.mean(d * d))),
        max=float(d.max()),
        variance=float(np.var(d)),
    )


def sketched_diameter(X, S: SketchMatrix) -> float:
    """Largest pairwise sketched distance.

    Exact for clouds up to 4096 points; larger clouds use an iterated
    farthest-point sweep (exact on elongated sets, deterministic always).
    """
    xs = S.project(X)
    K = xs.shape[0]
    if K < 2:
        return 0.0
    if K <= 4096:
        best = 0.0
        for i0, i1 in kernels._chunks(K):
            d2 = kernels._sq_dists_block(xs[i0:i1], xs)
            best = max(best, float(d2.max()))
        return math.sqrt(best)
    idx = int(np.argmax(np.linalg.norm(xs - xs.mean(axis=0), axis=1)))
    best = 0.0
    for _ in range(3):
        d2 = np.einsum("ij,ij->i", xs - xs[idx], xs - xs[idx])
        far = int(np.argmax(d2))
        if d2[far] <= best:
            break
        best = float(d2[far])
        idx = far
    return math.sqrt(best)


def relative_error(Q, reference, S: SketchMatrix, threads: int = 1) -> float:
    """Mean nearest-reference distance normalized by the reference diameter.

    The normalization makes the value scale-invariant; absolute comparisons
    against externally reported figures need a generous band because the
    normalizing scale is a convention.
    """
    diam = sketched_diameter(reference, S)
    if diam <= 0:
        raise ValueError("reference cloud has zero diameter")
    err = nearest_reference_errors(Q, reference, S, threads=threads)
    return float(np.mean(err.dists) / diam)


@dataclass(frozen=True)
class SnrResult:
    median: float
    per_image: np.ndarray
    excluded: int


def background_snr(images, masks) -> SnrResult:
    """Median over images of mean/std on each image's background pixels.

    Images with constant background (zero sample standard deviation) cannot
    produce a finite ratio; they are excluded from the median with a warning.
    """
    imgs = as_points(images)
    masks = np.asarray(masks, dtype=bool)
    if masks.shape != imgs.shape:
        raise ValueError(f"masks shape {masks.shape} does not match images {imgs.shape}")
    values = np.full(imgs.shape[0], np.inf)
    excluded = 0
    for k in range(imgs.shape[0]):
        bg = imgs[k, masks[k]]
        if bg.size < 2:
            raise ValueError(f"image {k} has fewer than 2 background pixels")
        mu = float(bg.mean())
        sd = float(bg.std(ddof=1))
        if sd == 0.0:
            excluded += 1
            continue
        values[k] = mu / sd
    if excluded:
        logger.warning("%d images had constant background; excluded from SNR median",
                       excluded)
    finite = values[np.isfinite(values)]
    if finite.size == 0:
        raise ValueError("no image produced a finite SNR")
    return SnrResult(median=float(np.median(finite)), per_image=values, excluded=excluded)


def erode_background(masks: np.ndarray, side: int | None = None,
                     iterations: int = 1) -> np.ndarray:
    """Shrink flattened background masks away from the foreground boundary.

    Smoothed reconstructions carry a thin ghost rim where blended shapes
    disagree; scoring noise statistics on the interior background (at least
    ``iterations`` pixels from the boundary) keeps that rim out of the
    background sample.  Applied to initial and final sets alike.
    """
    masks = np.asarray(masks, dtype=bool)
    if side is None:
        side = int(round(math.sqrt(masks.shape[1])))
    if side * side != masks.shape[1]:
        raise ValueError(f"mask length {masks.shape[1]} is not a square image")
    m = masks.reshape(-1, side, side).copy()
    for _ in range(iterations):
        inner = m.copy()
        inner[:, 1:, :] &= m[:, :-1, :]
        inner[:, :-1, :] &= m[:, 1:, :]
        inner[:, :, 1:] &= m[:, :, :-1]
        inner[:, :, :-1] &= m[:, :, 1:]
        m = inner
    return m.reshape(masks.shape[0], -1)


def principal_direction(points: np.ndarray) -> np.ndarray:
    """First eigenvector of the mean-centered covariance, canonicalized.

    Largest eigenvalue wins; between v and -v the lexicographically larger
    vector is returned so repeated runs agree bit for bit.
    """
    pts = np.asarray(points, dtype=np.float64)
    centered = pts - pts.mean(axis=0)
    cov = centered.T @ centered / pts.shape[0]
    vals, vecs = np.linalg.eigh(cov)
    if vals[-1] <= 0:
        raise ValueError("degenerate neighborhood: all points coincide")
    v = vecs[:, -1]
    nz = np.flatnonzero(v)
    if nz.size and v[nz[0]] < 0:
        v = -v
    return v


@dataclass(frozen=True)
class PcaAngleResult:
    median_deg: float
    per_point: np.ndarray
    skipped: int


def local_pca_angle_error(X, reference, h: float, S: SketchMatrix,
                          min_neighbors: int = 2) -> PcaAngleResult:
    """Median angle (degrees) between local tangent directions of X and of
    the clean reference.

    For each evaluated point: collect its neighbours within sketched radius
    h (the point itself is not its own neighbour), take the first PCA
    eigenvector of the neighbour set in full dimension, do the same around
    the nearest reference point on the reference set, and score
    arccos(|cos angle|), which is invariant to eigenvector sign.  Points
    with fewer than min_neighbors neighbours are skipped and counted.
    """
    xs_full = as_points(X)
    ref_full = as_points(reference)
    xs = S.project(xs_full)
    rs = S.project(ref_full)
    nearest_ref = np.empty(xs.shape[0], dtype=int)
    for i0, i1 in kernels._chunks(xs.shape[0]):
        d2 = kernels._sq_dists_block(xs[i0:i1], rs)
        nearest_ref[i0:i1] = np.argmin(d2, axis=1)
    errors = []
    skipped = 0
    per_point = np.full(xs.shape[0], np.nan)
    for i in range(xs.shape[0]):
        d2 = np.einsum("ij,ij->i", xs - xs[i], xs - xs[i])
        nbr = np.flatnonzero((d2 < h * h) & (np.arange(xs.shape[0]) != i))
        if nbr.size < min_neighbors:
            skipped += 1
            continue
        v_x = principal_direction(xs_full[nbr])
        j = nearest_ref[i]
        d2r = np.einsum("ij,ij->i", rs - rs[j], rs - rs[j])
        nbr_r = np.flatnonzero((d2r < h * h) & (np.arange(rs.shape[0]) != j))
        if nbr_r.size < min_neighbors:
            skipped += 1
            continue
        v_r = principal_direction(ref_full[nbr_r])
        cosang = min(1.0, abs(float(np.dot(v_x, v_r))))
        deg = math.degrees(math.acos(cosang))
        per_point[i] = deg
        errors.append(deg)
    if not errors:
        raise ValueError("every point was skipped; increase the radius h")
    if skipped:
        logger.info("local PCA skipped %d points with < %d neighbours", skipped,
                    min_neighbors)
    return PcaAngleResult(median_deg=float(np.median(errors)), per_point=per_point,
                          skipped=skipped)
