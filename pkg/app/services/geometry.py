"""
Anchor-based relative and robust relative transforms, Gaussian batch
normalization, and the scaled-permutation group action.

Every function accepts a single vector or a row-major batch and returns the
same rank it was given. Rows are processed independently, so results do not
depend on how a batch is split.
"""
import logging
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from scipy import linalg

from app.exceptions import DegenerateBatch, DimensionMismatch, InputError, ZeroVector
from app.models.latent import AnchorSet, BatchStats, LatentBatch, ScaledPermutation

logger = logging.getLogger(__name__)

ZERO_NORM = 1e-300
STD_FLOOR = 1e-12

ArrayLike = Union[np.ndarray, LatentBatch, Sequence[float]]


def as_array(x: ArrayLike) -> np.ndarray:
    if isinstance(x, LatentBatch):
        return x.data
    return np.asarray(x, dtype=np.float64)


def _anchor_matrix(anchors: Union[AnchorSet, np.ndarray]) -> np.ndarray:
    return anchors.anchors if isinstance(anchors, AnchorSet) else np.asarray(anchors, dtype=np.float64)


def unit_rows(x: np.ndarray, what: str, allow_zero: bool = False) -> Tuple[np.ndarray, np.ndarray]:
    """Rows scaled to unit length and their norms. With allow_zero, zero rows stay zero and report norm 1."""
    norms = np.linalg.norm(x, axis=-1)
    bad = np.flatnonzero(np.atleast_1d(norms) < ZERO_NORM)
    if bad.size and allow_zero:
        zero = norms < ZERO_NORM
        norms = np.where(zero, 1.0, norms)
        return np.where(zero[..., None], 0.0, x / norms[..., None]), norms
    if bad.size:
        raise ZeroVector(f"{what} has zero norm at rows {bad[:10].tolist()}")
    return x / norms[..., None], norms


def cosine_similarity(z: ArrayLike, w: ArrayLike) -> float:
    z, w = as_array(z), as_array(w)
    if z.shape != w.shape or z.ndim != 1:
        raise DimensionMismatch(f"cosine similarity needs two vectors of equal length, got {z.shape} and {w.shape}")
    nz, nw = np.linalg.norm(z), np.linalg.norm(w)
    if nz < ZERO_NORM or nw < ZERO_NORM:
        raise ZeroVector("cosine similarity is undefined for a zero vector")
    return float(np.clip(np.dot(z, w) / (nz * nw), -1.0, 1.0))


def cosine_matrix(z: np.ndarray, anchors: np.ndarray) -> np.ndarray:
    """Cosine similarity of every row of z against every anchor row."""
    if z.shape[-1] != anchors.shape[-1]:
        raise DimensionMismatch(f"latent width {z.shape[-1]} != anchor width {anchors.shape[-1]}")
    z_unit, _ = unit_rows(z, "latent vector")
    a_unit, _ = unit_rows(anchors, "anchor")
    return np.clip(z_unit @ a_unit.T, -1.0, 1.0)


def relative_transform(z: ArrayLike, anchors: Union[AnchorSet, np.ndarray]) -> np.ndarray:
    """Coordinates of z given by its cosine similarity to each anchor, in anchor order."""
    return cosine_matrix(as_array(z), _anchor_matrix(anchors))


def batch_stats(batch: ArrayLike, epsilon: float = 0.0) -> BatchStats:
    """Population mean and standard deviation per column; epsilon is added to the variance."""
    data = as_array(batch)
    if data.ndim != 2 or data.shape[0] < 2:
        raise InputError(f"batch statistics need at least 2 rows, got shape {data.shape}")
    mean = data.mean(axis=0)
    std = np.sqrt(np.mean((data - mean) ** 2, axis=0) + epsilon)
    flat = np.flatnonzero(std < STD_FLOOR)
    if flat.size:
        raise DegenerateBatch(f"columns {flat[:10].tolist()} have vanishing standard deviation")
    return BatchStats(mean=mean, std=std)


def _check_stats(x: np.ndarray, stats: BatchStats) -> None:
    if x.shape[-1] != stats.dim:
        raise DimensionMismatch(f"vector width {x.shape[-1]} != stats width {stats.dim}")


def gaussian_normalize(z: ArrayLike, stats: BatchStats) -> np.ndarray:
    z = as_array(z)
    _check_stats(z, stats)
    return (z - stats.mean) / stats.std


def gaussian_denormalize(z: ArrayLike, stats: BatchStats) -> np.ndarray:
    z = as_array(z)
    _check_stats(z, stats)
    return z * stats.std + stats.mean


def robust_relative_transform(z: ArrayLike, anchors: Union[AnchorSet, np.ndarray], stats: BatchStats) -> np.ndarray:
    """Relative transform of the normalized vector against the normalized anchors, both under the same stats."""
    z_hat = gaussian_normalize(z, stats)
    a_hat = gaussian_normalize(_anchor_matrix(anchors), stats)
    return cosine_matrix(z_hat, a_hat)


def apply_scaled_permutation(x: ArrayLike, g: ScaledPermutation):
    """Row-wise z -> D P z + h; returns a LatentBatch when given one."""
    data = as_array(x)
    if data.shape[-1] != g.dim:
        raise DimensionMismatch(f"vector width {data.shape[-1]} != transform width {g.dim}")
    out = data[..., g.perm] * g.scale + g.shift
    return LatentBatch(data=out) if isinstance(x, LatentBatch) else out


def random_scaled_permutation(
        m: int,
        rng: np.random.Generator,
        scale_range: Tuple[float, float] = (0.1, 10.0),
        shift_scale: float = 1.0,
        signed: bool = False
) -> ScaledPermutation:
    """Log-uniform scales in scale_range, optionally with random signs."""
    low, high = scale_range
    scale = np.exp(rng.uniform(np.log(low), np.log(high), size=m))
    if signed:
        scale *= rng.choice([-1.0, 1.0], size=m)
    return ScaledPermutation(perm=rng.permutation(m), scale=scale, shift=rng.normal(scale=shift_scale, size=m))


def random_orthogonal(m: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed orthogonal matrix from the QR factorization of a Gaussian matrix."""
    q, r = linalg.qr(rng.normal(size=(m, m)))
    return q * np.sign(np.diag(r))


def cluster_collapse_ratio(clusters: Sequence[np.ndarray]) -> float:
    """
    Distance between the first two cluster centroids divided by the mean
    cluster radius (mean distance of points to their centroid).
    """
    centroids = [c.mean(axis=0) for c in clusters]
    radii = [np.mean(np.linalg.norm(c - mu, axis=1)) for c, mu in zip(clusters, centroids)]
    return float(np.linalg.norm(centroids[0] - centroids[1]) / np.mean(radii))


def rotation_deviation(m: int, rng: np.random.Generator, k: Optional[int] = None, batch: int = 64) -> float:
    """
    Mean absolute change of the robust transform when z, the anchors and the
    reference batch are all rotated by one random orthogonal matrix.
    """
    k = k or max(2, m // 2)
    z = rng.standard_normal((batch, m))
    anchors = rng.standard_normal((k, m))
    u = random_orthogonal(m, rng)
    before = robust_relative_transform(z, anchors, batch_stats(z))
    z_rot, anchors_rot = z @ u.T, anchors @ u.T
    after = robust_relative_transform(z_rot, anchors_rot, batch_stats(z_rot))
    return float(np.mean(np.abs(after - before)))
