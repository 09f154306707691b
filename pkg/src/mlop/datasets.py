"""Synthetic manifold generators, noise injection, and dense references.

Every generator samples a parameter tensor grid ("equally distributed in
parameter space"), embeds it in the ambient space, and also produces a
noise-free reference sampled reference_density times denser per parameter
axis.  Generators are deterministic given their spec seed.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .cloud import PointCloud
from .errors import ConfigError
from .rng import Rng

KINDS = ("o2", "cone_segment", "cylinder2d", "cylinder6d", "ellipse_images", "grid_line")

_DEFAULT_AMBIENT = {
    "o2": 60,
    "cone_segment": 60,
    "cylinder2d": 60,
    "cylinder6d": 60,
    "ellipse_images": 400,
    "grid_line": 8,
}

# Per-axis multiplier for the reference grid.  The six-parameter cylinder
# gets a lower default because its reference size grows with the sixth power.
_DEFAULT_REF_DENSITY = {
    "o2": 3.0,
    "cone_segment": 3.0,
    "cylinder2d": 3.0,
    "cylinder6d": 2.0,
    "ellipse_images": 2.0,
    "grid_line": 3.0,
}

IMAGE_SIDE = 20
ELLIPSE_GRID = 30
ELLIPSE_RADIUS_RANGE = (3.0, 8.0)


@dataclass
class DatasetSpec:
    """Declarative description of one generated dataset."""

    kind: str
    sample_count: int
    noise: float = 0.0
    gaussian_sigma: float = 0.05
    ambient_dim: int | None = None
    seed: int = 0
    reference_density: float | None = None
    radius: float = 1.5

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown dataset kind {self.kind!r}; choose from {KINDS}")
        if self.sample_count < 2:
            raise ConfigError("sample_count must be at least 2")
        if self.noise < 0 or self.gaussian_sigma < 0:
            raise ConfigError("noise magnitudes must be non-negative")
        if self.radius <= 0:
            raise ConfigError("radius must be positive")
        if self.ambient_dim is None:
            self.ambient_dim = _DEFAULT_AMBIENT[self.kind]
        if self.reference_density is None:
            self.reference_density = _DEFAULT_REF_DENSITY[self.kind]
        if self.reference_density < 1:
            raise ConfigError("reference_density must be at least 1")
        min_dim = 7 if self.kind == "cylinder6d" else 4
        if self.kind == "ellipse_images":
            if self.ambient_dim != IMAGE_SIDE * IMAGE_SIDE:
                raise ConfigError("ellipse images are fixed at 20x20 pixels")
            if self.sample_count > ELLIPSE_GRID * ELLIPSE_GRID:
                raise ConfigError(
                    f"at most {ELLIPSE_GRID * ELLIPSE_GRID} ellipse samples available"
                )
        elif self.ambient_dim < min_dim:
            raise ConfigError(f"{self.kind} needs ambient_dim >= {min_dim}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetSpec":
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "DatasetSpec":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class Dataset:
    """Generated experiment inputs: noisy samples plus clean references.

    clean (the noise-free structure at the sample parameters) is populated by
    the generators but absent when a dataset is re-loaded from disk.
    """

    spec: DatasetSpec
    points: PointCloud
    reference: PointCloud
    clean: PointCloud | None = None
    masks: np.ndarray | None = None
    reference_masks: np.ndarray | None = None
    extras: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# parameter grids
# ---------------------------------------------------------------------------


def _axis_counts(target: int, axes: int) -> list[int]:
    """Per-axis sample counts whose product is the smallest value >= target.

    Two axes get an exact factorization when one exists near square; more
    axes use round-robin increments from the d-th root.
    """
    if axes == 1:
        return [target]
    if axes == 2:
        best = None
        for a in range(1, int(math.isqrt(target)) + 2):
            b = -(-target // a)
            excess = a * b - target
            key = (excess, abs(a - b))
            if best is None or key < best[0]:
                best = (key, [a, b])
        return best[1]
    counts = [max(2, int(math.floor(target ** (1.0 / axes))))] * axes
    i = 0
    while math.prod(counts) < target:
        counts[i % axes] += 1
        i += 1
    return counts


def _tensor_grid(ranges: list[tuple[float, float]], target: int,
                 endpoint: bool = True) -> np.ndarray:
    """Row-major tensor grid over the ranges, truncated to exactly target rows."""
    counts = _axis_counts(target, len(ranges))
    axes = [np.linspace(lo, hi, c, endpoint=endpoint) for (lo, hi), c in zip(ranges, counts)]
    mesh = np.meshgrid(*axes, indexing="ij")
    grid = np.stack([m.ravel() for m in mesh], axis=1)
    return grid[:target]


# ---------------------------------------------------------------------------
# generators (clean structures; noise is injected separately)
# ---------------------------------------------------------------------------


def _embed_rows(coords: np.ndarray, n: int) -> np.ndarray:
    out = np.zeros((coords.shape[0], n))
    out[:, : coords.shape[1]] = coords
    return out


def random_orthogonal(n: int, rng: Rng) -> np.ndarray:
    """Haar-ish orthogonal matrix: QR of a Gaussian with a fixed sign convention."""
    g = rng.standard_normal((n, n))
    q, r = np.linalg.qr(g)
    return q * np.sign(np.diag(r))


def _o2_embed(theta: np.ndarray, n: int) -> np.ndarray:
    coords = np.stack(
        [np.cos(theta), -np.sin(theta), np.sin(theta), np.cos(theta)], axis=1)
    return _embed_rows(coords, n)


def gen_o2(J: int, rng: Rng, n: int = 60, reference_density: float = 3.0):
    """Rotation-matrix circle: [cos t, -sin t, sin t, cos t, 0, ...] mixed by
    a random orthogonal map so the structure is spread over all coordinates.

    Returns (clean cloud, reference cloud, mixing matrix).  The angle grid
    drops the endpoint because -pi and pi embed to the same matrix.
    """
    A = random_orthogonal(n, rng)
    theta = np.linspace(-np.pi, np.pi, J, endpoint=False)
    pts = _o2_embed(theta, n) @ A.T
    ref_count = int(math.ceil(J * reference_density))
    theta_ref = np.linspace(-np.pi, np.pi, ref_count, endpoint=False)
    ref = _o2_embed(theta_ref, n) @ A.T
    return (
        PointCloud(pts, labels=theta[:, None]),
        PointCloud(ref, labels=theta_ref[:, None]),
        A,
    )


def _cone_embed(params: np.ndarray, n: int) -> np.ndarray:
    t, big_r, u = params[:, 0], params[:, 1], params[:, 2]
    v1 = np.zeros(n); v1[:4] = 1.0
    v2 = np.zeros(n); v2[1], v2[2] = 1.0, -1.0
    v3 = np.zeros(n); v3[0], v3[3] = 1.0, -1.0
    radial = np.exp(-big_r ** 2) / math.sqrt(2.0)
    return (t[:, None] * v1
            + (radial * np.cos(u))[:, None] * v2
            + (radial * np.sin(u))[:, None] * v3)


def gen_cone_segment(J: int, rng: Rng | None = None, n: int = 60,
                     reference_density: float = 3.0):
    """Cone melting into a line segment: the radial factor exp(-R^2) makes the
    circular part collapse as R grows, so the structure changes dimension."""
    ranges = [(0.0, 2.0), (0.0, 2.5), (0.1 * np.pi, 1.5 * np.pi)]
    params = _tensor_grid(ranges, J)
    ref_params = _tensor_grid(ranges, int(math.ceil(J * reference_density ** 3)))
    return (
        PointCloud(_cone_embed(params, n), labels=params),
        PointCloud(_cone_embed(ref_params, n), labels=ref_params),
    )


def _cylinder2d_embed(params: np.ndarray, n: int, radius: float) -> np.ndarray:
    t, u = params[:, 0], params[:, 1]
    v1 = np.ones(n)
    v2 = np.zeros(n); v2[1], v2[2] = 1.0, -1.0
    v3 = np.zeros(n); v3[0], v3[3] = 1.0, -1.0
    scale = radius / math.sqrt(2.0)
    return (t[:, None] * v1
            + (scale * np.cos(u))[:, None] * v2
            + (scale * np.sin(u))[:, None] * v3)


def gen_cylinder2d(J: int, rng: Rng | None = None, n: int = 60, radius: float = 1.5,
                   reference_density: float = 3.0):
    """Open cylinder: a circle of the given radius swept along the all-ones
    direction, t in [0, 2], u in [0.1 pi, 1.5 pi]."""
    ranges = [(0.0, 2.0), (0.1 * np.pi, 1.5 * np.pi)]
    params = _tensor_grid(ranges, J)
    ref_params = _tensor_grid(ranges, int(math.ceil(J * reference_density ** 2)))
    return (
        PointCloud(_cylinder2d_embed(params, n, radius), labels=params),
        PointCloud(_cylinder2d_embed(ref_params, n, radius), labels=ref_params),
    )


def sphere5_coords(u: np.ndarray, radius: float) -> np.ndarray:
    """Five-sphere coordinates in R^6 from 5 angles (last closes with sines);
    every row satisfies sum(x^2) == radius^2."""
    x = np.empty((u.shape[0], 6))
    running = np.full(u.shape[0], radius)
    for k in range(5):
        x[:, k] = running * np.cos(u[:, k])
        running = running * np.sin(u[:, k])
    x[:, 5] = running
    return x


def _cylinder6d_embed(params: np.ndarray, n: int, radius: float) -> np.ndarray:
    # The cross-section is the unit five-sphere: scaling it by the nominal
    # radius (or its square) produces fill-distances several times larger
    # than any value the reconstruction is benchmarked against.
    t, u = params[:, 0], params[:, 1:]
    x = sphere5_coords(u, 1.0)
    v0 = np.zeros(n); v0[:7] = 1.0
    out = t[:, None] * v0
    out[:, :6] += x
    return out


def gen_cylinder6d(J: int, rng: Rng, n: int = 60, radius: float = 1.5,
                   reference_density: float = 2.0):
    """Six-dimensional cylinder: a five-sphere cross-section (radius scaled by
    radius^2) swept along a direction with ones in the first seven slots.

    With six parameters a tensor grid at this budget is hopelessly coarse
    (3-4 samples per axis), so both the data and the reference are drawn
    uniformly at random in parameter space; the reference is
    reference_density^6 times larger.
    """
    ranges = [(0.0, 2.0)] + [(0.1 * np.pi, 0.6 * np.pi)] * 5
    lo = np.array([r[0] for r in ranges])
    hi = np.array([r[1] for r in ranges])
    params = lo + (hi - lo) * rng.random((J, 6))
    ref_count = int(math.ceil(J * reference_density ** 6))
    ref_rng = rng.stream("reference")
    ref_params = lo + (hi - lo) * ref_rng.random((ref_count, 6))
    return (
        PointCloud(_cylinder6d_embed(params, n, radius), labels=params),
        PointCloud(_cylinder6d_embed(ref_params, n, radius), labels=ref_params),
    )


def _ellipse_images(radii: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Binary 20x20 ellipse rasters (pixel-centre test) and background masks."""
    side = IMAGE_SIDE
    c = (side - 1) / 2.0
    rows, cols = np.mgrid[0:side, 0:side]
    imgs = np.empty((radii.shape[0], side * side))
    masks = np.empty((radii.shape[0], side * side), dtype=bool)
    for k, (a, b) in enumerate(radii):
        inside = ((cols - c) / a) ** 2 + ((rows - c) / b) ** 2 <= 1.0
        imgs[k] = inside.ravel().astype(np.float64)
        masks[k] = ~inside.ravel()
    return imgs, masks


def _ellipse_radii_grid(per_axis: int) -> np.ndarray:
    lo, hi = ELLIPSE_RADIUS_RANGE
    a = np.linspace(lo, hi, per_axis)
    mesh = np.meshgrid(a, a, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def gen_ellipse_images(J: int, rng: Rng | None = None, reference_density: float = 2.0):
    """Centered axis-aligned ellipses with radii on a uniform grid, flattened
    to R^400.  Returns (clean cloud, background masks, reference cloud,
    reference masks)."""
    grid = _ellipse_radii_grid(ELLIPSE_GRID)
    if J > grid.shape[0]:
        raise ConfigError(f"at most {grid.shape[0]} ellipse samples available")
    take = (np.arange(J) * grid.shape[0]) // J
    radii = grid[take]
    imgs, masks = _ellipse_images(radii)
    ref_radii = _ellipse_radii_grid(int(math.ceil(ELLIPSE_GRID * reference_density)))
    ref_imgs, ref_masks = _ellipse_images(ref_radii)
    return (
        PointCloud(imgs, labels=radii),
        masks,
        PointCloud(ref_imgs, labels=ref_radii),
        ref_masks,
    )


def gen_grid_line(J: int, n: int, rng: Rng | None = None, reference_density: float = 3.0):
    """Minimal one-dimensional structure: J equally spaced points on a fixed
    segment of length 2 along the normalized all-ones direction in R^n."""
    direction = np.ones(n) / math.sqrt(n)
    t = np.linspace(0.0, 2.0, J)
    t_ref = np.linspace(0.0, 2.0, int(math.ceil(J * reference_density)))
    return (
        PointCloud(t[:, None] * direction, labels=t[:, None]),
        PointCloud(t_ref[:, None] * direction, labels=t_ref[:, None]),
    )


# ---------------------------------------------------------------------------
# noise injection and assembly
# ---------------------------------------------------------------------------


def add_uniform_noise(P: PointCloud, sigma: float, rng: Rng) -> PointCloud:
    """Perturb every coordinate independently by U(-sigma, sigma)."""
    if sigma < 0:
        raise ConfigError("noise magnitude must be non-negative")
    noisy = P.points + rng.uniform(-sigma, sigma, P.points.shape)
    return PointCloud(noisy, labels=P.labels)


def add_image_noise(P: PointCloud, sigma: float, rng: Rng) -> PointCloud:
    """Per-pixel Gaussian noise, clipped to the valid intensity range [0, 1]."""
    noisy = P.points + sigma * rng.standard_normal(P.points.shape)
    return PointCloud(np.clip(noisy, 0.0, 1.0), labels=P.labels)


def make_dataset(spec: DatasetSpec) -> Dataset:
    """Generate the full dataset bundle described by the spec."""
    root = Rng(spec.seed)
    masks = ref_masks = None
    extras: dict = {}
    if spec.kind == "o2":
        clean, reference, A = gen_o2(
            spec.sample_count, root.stream("mixing"), n=spec.ambient_dim,
            reference_density=spec.reference_density)
        extras["mixing"] = A
    elif spec.kind == "cone_segment":
        clean, reference = gen_cone_segment(
            spec.sample_count, n=spec.ambient_dim,
            reference_density=spec.reference_density)
    elif spec.kind == "cylinder2d":
        clean, reference = gen_cylinder2d(
            spec.sample_count, n=spec.ambient_dim, radius=spec.radius,
            reference_density=spec.reference_density)
    elif spec.kind == "cylinder6d":
        clean, reference = gen_cylinder6d(
            spec.sample_count, root.stream("structure"), n=spec.ambient_dim,
            radius=spec.radius, reference_density=spec.reference_density)
    elif spec.kind == "ellipse_images":
        clean, masks, reference, ref_masks = gen_ellipse_images(
            spec.sample_count, reference_density=spec.reference_density)
    elif spec.kind == "grid_line":
        clean, reference = gen_grid_line(
            spec.sample_count, spec.ambient_dim,
            reference_density=spec.reference_density)
    else:  # pragma: no cover - spec validation rejects this earlier
        raise ConfigError(f"unknown dataset kind {spec.kind!r}")

    if spec.kind == "ellipse_images":
        noisy = add_image_noise(clean, spec.gaussian_sigma, root.stream("noise"))
    else:
        noisy = add_uniform_noise(clean, spec.noise, root.stream("noise"))
    return Dataset(spec=spec, points=noisy, clean=clean, reference=reference,
                   masks=masks, reference_masks=ref_masks, extras=extras)
