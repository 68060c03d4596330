"""Synthetic surface patch generation.

Patches are samplings of random bivariate polynomial height fields
z = f(x, y) over a disk centered at the origin.  Pairs of independent
samplings of the same polynomial are the raw material for contrastive
training; quadric families and interpolation sequences feed the
feature-space evaluations.

Coordinates are generated in float64 but rounded to float32-representable
values at creation time, so in-memory patches round-trip bitwise through
the float32 on-disk dataset format.
"""

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DatasetIOError, ShapeError

DATASET_VERSION = 1
BLOB_NAME = "points.f32le"
MANIFEST_NAME = "manifest.json"

QUADRIC_KINDS = ("spherical", "parabolic", "hyperbolic", "planar")


def _n_coeffs(degree):
    return (degree + 1) * (degree + 2) // 2


@dataclass
class Polynomial2D:
    """Bivariate polynomial f(x,y) = sum_{i+j<=d} a_ij x^i y^j.

    Coefficients are stored flat, ordered by ascending i then ascending j:
    (0,0),(0,1),...,(0,d),(1,0),...,(1,d-1),...,(d,0).
    """

    degree: int
    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=np.float64)
        if self.degree < 0:
            raise ConfigurationError(f"degree must be >= 0, got {self.degree}")
        if self.coeffs.shape != (_n_coeffs(self.degree),):
            raise ShapeError(
                f"degree-{self.degree} polynomial needs {_n_coeffs(self.degree)} "
                f"coefficients, got shape {self.coeffs.shape}"
            )
        if not np.all(np.isfinite(self.coeffs)):
            raise ConfigurationError("polynomial coefficients must be finite")

    def coeff_index(self, i, j):
        if i < 0 or j < 0 or i + j > self.degree:
            raise ConfigurationError(f"(i,j)=({i},{j}) outside degree-{self.degree} triangle")
        d = self.degree
        # offset of the i-block: sum of block sizes (d+1), d, ..., (d+2-i)
        return i * (d + 1) - i * (i - 1) // 2 + j

    def coeff(self, i, j):
        return float(self.coeffs[self.coeff_index(i, j)])


@dataclass
class PatchCloud:
    """One finite sampling of a surface patch: N points in 3D."""

    points: np.ndarray
    origin_index: int | None = None
    domain_radius: float = 1.0
    source_id: str | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[1] != 3:
            raise ShapeError(f"points must be (N,3), got {self.points.shape}")
        if len(self.points) < 16:
            raise ConfigurationError(f"patch needs >= 16 points, got {len(self.points)}")
        if not np.all(np.isfinite(self.points)):
            raise ConfigurationError("patch contains non-finite coordinates")
        if self.domain_radius <= 0:
            raise ConfigurationError("domain_radius must be positive")
        if self.origin_index is not None:
            x, y = self.points[self.origin_index, :2]
            if x != 0.0 or y != 0.0:
                raise ConfigurationError("origin_index point must sit exactly at (x,y)=(0,0)")

    def __len__(self):
        return len(self.points)


@dataclass
class PatchPair:
    """Two independent samplings of the same polynomial surface."""

    a: PatchCloud
    b: PatchCloud
    source_id: str | None = None

    def __post_init__(self):
        if self.a.source_id != self.b.source_id:
            raise ConfigurationError("pair members disagree on source_id")
        if self.source_id is None:
            self.source_id = self.a.source_id


@dataclass
class GenConfig:
    """Dataset generation parameters (persisted in the manifest)."""

    degree_min: int = 2
    degree_max: int = 4
    coeff_scale: float = 1.0
    n_min: int = 128
    n_max: int = 512
    domain_radius: float = 1.0

    def validate(self):
        if not (1 <= self.degree_min <= self.degree_max <= 6):
            raise ConfigurationError(
                f"degree range must satisfy 1 <= min <= max <= 6, got "
                f"[{self.degree_min}, {self.degree_max}]"
            )
        if self.coeff_scale <= 0:
            raise ConfigurationError("coeff_scale must be positive")
        if self.n_min < 16 or self.n_min > self.n_max:
            raise ConfigurationError(
                f"point count range must satisfy 16 <= n_min <= n_max, got "
                f"[{self.n_min}, {self.n_max}]"
            )
        if self.domain_radius <= 0:
            raise ConfigurationError("domain_radius must be positive")
        return self


@dataclass
class DatasetManifest:
    version: int
    seed: int
    config: GenConfig
    pairs: list = field(default_factory=list)  # dicts with offset/count/source_id


def _f32_exact(a):
    # round to float32-representable values, keep float64 dtype
    return np.asarray(a, dtype=np.float64).astype(np.float32).astype(np.float64)


def sample_polynomial(rng, degree_range, coeff_scale):
    """Draw a random polynomial: degree uniform in range, coefficients iid
    uniform in [-coeff_scale, coeff_scale]."""
    d_min, d_max = int(degree_range[0]), int(degree_range[1])
    if not (1 <= d_min <= d_max <= 6):
        raise ConfigurationError(f"degree range [{d_min},{d_max}] outside 1..6")
    if coeff_scale < 0:
        raise ConfigurationError("coeff_scale must be >= 0")
    degree = int(rng.integers(d_min, d_max + 1))
    coeffs = rng.uniform(-coeff_scale, coeff_scale, size=_n_coeffs(degree))
    return Polynomial2D(degree=degree, coeffs=coeffs)


def eval_polynomial(poly, x, y):
    """Evaluate f at (x, y); accepts scalars or broadcastable arrays.

    Horner-style nesting: inner Horner over y inside each x-power block,
    then Horner over x.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    d = poly.degree
    c = poly.coeffs
    result = None
    offset = _n_coeffs(d)
    for i in range(d, -1, -1):
        block = d + 1 - i  # number of j-coefficients for this i
        offset -= block
        gi = np.full(np.broadcast_shapes(x.shape, y.shape), c[offset + block - 1])
        for j in range(block - 2, -1, -1):
            gi = gi * y + c[offset + j]
        result = gi if result is None else result * x + gi
    return result if result.shape else float(result)


def sample_patch(poly, n, domain_radius, rng, include_origin=False, source_id=None):
    """Sample n points uniformly on the disk of given radius and lift by f.

    If include_origin, point 0 is forced to (0, 0, a_00) and origin_index
    is set to 0.
    """
    if n < 16:
        raise ConfigurationError(f"patch point count must be >= 16, got {n}")
    if domain_radius <= 0:
        raise ConfigurationError("domain_radius must be positive")
    theta = rng.uniform(0.0, 2.0 * np.pi, size=n)
    radius = domain_radius * np.sqrt(rng.uniform(0.0, 1.0, size=n))
    x = radius * np.cos(theta)
    y = radius * np.sin(theta)
    origin_index = None
    if include_origin:
        x[0] = 0.0
        y[0] = 0.0
        origin_index = 0
    z = eval_polynomial(poly, x, y)
    points = _f32_exact(np.column_stack([x, y, z]))
    return PatchCloud(
        points=points,
        origin_index=origin_index,
        domain_radius=float(domain_radius),
        source_id=source_id,
    )


def make_pair(poly, n1, n2, rng, domain_radius=1.0, source_id=None, include_origin=False):
    """Two independent samplings of the same polynomial."""
    a = sample_patch(poly, n1, domain_radius, rng, include_origin=include_origin,
                     source_id=source_id)
    b = sample_patch(poly, n2, domain_radius, rng, include_origin=include_origin,
                     source_id=source_id)
    return PatchPair(a=a, b=b, source_id=source_id)


def add_z_noise(patch, sigma, rng):
    """Gaussian noise on z only; x,y bitwise unchanged."""
    if sigma < 0:
        raise ConfigurationError(f"noise sigma must be >= 0, got {sigma}")
    points = patch.points.copy()
    if sigma > 0:
        points[:, 2] = _f32_exact(points[:, 2] + rng.normal(0.0, sigma, size=len(points)))
    return PatchCloud(
        points=points,
        origin_index=patch.origin_index,
        domain_radius=patch.domain_radius,
        source_id=patch.source_id,
    )


def quadric_family(kind, curvature_scale, rng):
    """Degree-2 polynomial z = k1 x^2 + k2 y^2 + small random linear tilt.

    Sign patterns: spherical k1=k2>0, parabolic exactly one zero,
    hyperbolic k1*k2<0, planar both zero.  Magnitudes are drawn from
    [0.3, 1.5]*curvature_scale so classes are not a single shape.
    """
    if kind not in QUADRIC_KINDS:
        raise ConfigurationError(f"unknown quadric kind {kind!r}, expected one of {QUADRIC_KINDS}")
    if curvature_scale <= 0:
        raise ConfigurationError("curvature_scale must be positive")
    lo, hi = 0.3 * curvature_scale, 1.5 * curvature_scale
    if kind == "spherical":
        k = rng.uniform(lo, hi)
        k1, k2 = k, k
    elif kind == "parabolic":
        zero_first = bool(rng.integers(0, 2))
        mag = rng.uniform(lo, hi)
        sign = 1.0 if rng.integers(0, 2) else -1.0
        k1, k2 = (0.0, sign * mag) if zero_first else (sign * mag, 0.0)
    elif kind == "hyperbolic":
        neg_first = bool(rng.integers(0, 2))
        m1 = rng.uniform(lo, hi)
        m2 = rng.uniform(lo, hi)
        k1, k2 = (-m1, m2) if neg_first else (m1, -m2)
    else:  # planar
        k1, k2 = 0.0, 0.0
    a10, a01 = rng.uniform(-0.1, 0.1, size=2)
    # flat order for degree 2: a00,a01,a02,a10,a11,a20
    coeffs = np.array([0.0, a01, k2, a10, 0.0, k1])
    return Polynomial2D(degree=2, coeffs=coeffs)


def interpolate_polys(p_a, p_b, t):
    """Coefficient-wise linear interpolation (1-t)*p_a + t*p_b."""
    if p_a.degree != p_b.degree:
        raise ShapeError(
            f"cannot interpolate polynomials of degrees {p_a.degree} and {p_b.degree}"
        )
    coeffs = (1.0 - t) * p_a.coeffs + t * p_b.coeffs
    return Polynomial2D(degree=p_a.degree, coeffs=coeffs)


def _generate_one_pair(seed, index, config):
    rng = np.random.default_rng([seed, index])
    poly = sample_polynomial(rng, (config.degree_min, config.degree_max), config.coeff_scale)
    n1 = int(rng.integers(config.n_min, config.n_max + 1))
    n2 = int(rng.integers(config.n_min, config.n_max + 1))
    return make_pair(poly, n1, n2, rng, domain_radius=config.domain_radius,
                     source_id=f"poly{index:06d}")


def generate_dataset(seed, n_pairs, config, threads=1):
    """Generate n_pairs patch pairs.

    Each pair derives its RNG stream from (seed, pair index), so serial and
    parallel generation produce identical results.
    """
    config.validate()
    if n_pairs <= 0:
        raise ConfigurationError(f"n_pairs must be positive, got {n_pairs}")
    seed = int(seed)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            pairs = list(pool.map(lambda i: _generate_one_pair(seed, i, config),
                                  range(n_pairs)))
    else:
        pairs = [_generate_one_pair(seed, i, config) for i in range(n_pairs)]
    return pairs


def write_dataset(pairs, path, seed, config):
    """Write manifest.json + points.f32le into directory `path`."""
    os.makedirs(path, exist_ok=True)
    records = []
    chunks = []
    offset = 0
    for pair in pairs:
        ca, cb = len(pair.a), len(pair.b)
        records.append({
            "offset_a": offset, "count_a": ca,
            "offset_b": offset + ca, "count_b": cb,
            "source_id": pair.source_id,
        })
        chunks.append(pair.a.points.astype("<f4"))
        chunks.append(pair.b.points.astype("<f4"))
        offset += ca + cb
    blob = np.concatenate(chunks, axis=0) if chunks else np.zeros((0, 3), dtype="<f4")
    manifest = {
        "version": DATASET_VERSION,
        "seed": int(seed),
        "config": {
            "degree_min": config.degree_min,
            "degree_max": config.degree_max,
            "coeff_scale": config.coeff_scale,
            "n_min": config.n_min,
            "n_max": config.n_max,
            "domain_radius": config.domain_radius,
        },
        "pairs": records,
    }
    try:
        with open(os.path.join(path, MANIFEST_NAME), "w") as fh:
            json.dump(manifest, fh, indent=1)
        blob.tofile(os.path.join(path, BLOB_NAME))
    except OSError as exc:
        raise DatasetIOError(f"cannot write dataset to {path}: {exc}") from exc
    return DatasetManifest(version=DATASET_VERSION, seed=int(seed), config=config,
                           pairs=records)


def read_dataset(path):
    """Read a dataset directory; returns (manifest, list of PatchPair).

    Rejects version mismatches, overlapping or unordered offsets, and
    truncated blobs, naming the first bad record.
    """
    try:
        with open(os.path.join(path, MANIFEST_NAME)) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise DatasetIOError(f"cannot read manifest in {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DatasetIOError(f"malformed manifest in {path}: {exc}") from exc
    if raw.get("version") != DATASET_VERSION:
        raise DatasetIOError(
            f"dataset version mismatch: expected {DATASET_VERSION}, found {raw.get('version')}"
        )
    cfg = raw["config"]
    config = GenConfig(
        degree_min=int(cfg["degree_min"]), degree_max=int(cfg["degree_max"]),
        coeff_scale=float(cfg["coeff_scale"]), n_min=int(cfg["n_min"]),
        n_max=int(cfg["n_max"]), domain_radius=float(cfg["domain_radius"]),
    )
    try:
        blob = np.fromfile(os.path.join(path, BLOB_NAME), dtype="<f4")
    except OSError as exc:
        raise DatasetIOError(f"cannot read blob in {path}: {exc}") from exc
    ragged = blob.size % 3 != 0
    n_points = blob.size // 3
    blob = blob[: 3 * n_points].reshape(-1, 3).astype(np.float64)

    pairs = []
    expected_offset = 0
    for idx, rec in enumerate(raw["pairs"]):
        oa, ca = int(rec["offset_a"]), int(rec["count_a"])
        ob, cb = int(rec["offset_b"]), int(rec["count_b"])
        if oa != expected_offset or ob != oa + ca:
            raise DatasetIOError(f"record {idx}: offsets overlap or are out of order")
        if ob + cb > n_points:
            raise DatasetIOError(
                f"record {idx}: blob truncated (needs {ob + cb} points, has {n_points})"
            )
        expected_offset = ob + cb
        sid = rec.get("source_id")
        a = PatchCloud(points=blob[oa:oa + ca], domain_radius=config.domain_radius,
                       source_id=sid)
        b = PatchCloud(points=blob[ob:ob + cb], domain_radius=config.domain_radius,
                       source_id=sid)
        pairs.append(PatchPair(a=a, b=b, source_id=sid))
    if expected_offset != n_points or ragged:
        raise DatasetIOError(
            f"manifest covers {expected_offset} points but blob holds {n_points}"
            + (" plus a partial point" if ragged else "")
        )
    manifest = DatasetManifest(version=DATASET_VERSION, seed=int(raw["seed"]),
                               config=config, pairs=raw["pairs"])
    return manifest, pairs
