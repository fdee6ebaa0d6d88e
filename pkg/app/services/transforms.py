"""
Differentiable latent transforms sitting between the encoder phi and the
head gamma: identity (absolute), relative and robust relative.

Anchors are constants: no gradient is ever returned for them. The robust
transform either uses fixed statistics (inference) or statistics of a
reference subset of the batch (training), in which case the gradient also
flows through the batch mean and standard deviation.
"""
import logging
from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np

from app.config import Mode
from app.exceptions import DimensionMismatch
from app.models.latent import AnchorSet, BatchStats
from app.services.geometry import unit_rows, batch_stats, gaussian_normalize

logger = logging.getLogger(__name__)

RowSelector = Union[slice, np.ndarray, None]


@dataclass
class CosineCache:
    u_unit: np.ndarray
    u_norm: np.ndarray
    v_unit: np.ndarray
    v_norm: np.ndarray
    cosines: np.ndarray
    live: Optional[np.ndarray] = None


@dataclass
class RobustCache:
    cosine: CosineCache
    z: np.ndarray
    u: np.ndarray
    v: np.ndarray
    stats: BatchStats
    rows: Optional[np.ndarray]


def _cosine_forward(u: np.ndarray, v: np.ndarray, allow_zero: bool = False) -> CosineCache:
    if u.shape[1] != v.shape[1]:
        raise DimensionMismatch(f"latent width {u.shape[1]} != anchor width {v.shape[1]}")
    u_unit, u_norm = unit_rows(u, "latent vector", allow_zero=allow_zero)
    v_unit, v_norm = unit_rows(v, "anchor")
    live = np.any(u_unit != 0, axis=1) if allow_zero else None
    return CosineCache(u_unit, u_norm, v_unit, v_norm, np.clip(u_unit @ v_unit.T, -1.0, 1.0), live)


def _cosine_backward(cache: CosineCache, grad: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    weighted = grad * cache.cosines
    du = (grad @ cache.v_unit - weighted.sum(axis=1)[:, None] * cache.u_unit) / cache.u_norm[:, None]
    if cache.live is not None:
        du = du * cache.live[:, None]
    dv = (grad.T @ cache.u_unit - weighted.sum(axis=0)[:, None] * cache.v_unit) / cache.v_norm[:, None]
    return du, dv


class LatentTransform:
    mode: Mode = Mode.ABSOLUTE

    def output_dim(self, latent_dim: int) -> int:
        return latent_dim

    def forward(self, z: np.ndarray):
        return z, None

    def backward(self, cache, grad: np.ndarray) -> np.ndarray:
        return grad


class IdentityTransform(LatentTransform):
    pass


class RelativeTransform(LatentTransform):
    mode = Mode.RELATIVE_VANILLA

    def __init__(self, anchors: AnchorSet, allow_zero: bool = False):
        self.anchors = anchors
        self.allow_zero = allow_zero

    def output_dim(self, latent_dim: int) -> int:
        return self.anchors.k

    def forward(self, z: np.ndarray):
        cache = _cosine_forward(z, self.anchors.anchors, self.allow_zero)
        return cache.cosines, cache

    def backward(self, cache: CosineCache, grad: np.ndarray) -> np.ndarray:
        du, _ = _cosine_backward(cache, grad)
        return du


class RobustTransform(LatentTransform):
    """
    T_rob(z) = T_rel against normalized anchors of the normalized z.

    With `stats` given the statistics are constants; otherwise they are the
    population mean/std of the rows selected by `reference` (all rows when
    None) and take part in the gradient. epsilon is added to their variance.
    """

    mode = Mode.RELATIVE_ROBUST

    def __init__(
            self,
            anchors: AnchorSet,
            stats: Optional[BatchStats] = None,
            reference: RowSelector = None,
            epsilon: float = 0.0,
            allow_zero: bool = False
    ):
        self.anchors = anchors
        self.stats = stats
        self.reference = reference
        self.epsilon = epsilon
        self.allow_zero = allow_zero

    def output_dim(self, latent_dim: int) -> int:
        return self.anchors.k

    def _rows(self, n: int) -> Optional[np.ndarray]:
        if self.stats is not None:
            return None
        if self.reference is None:
            return np.arange(n)
        return np.arange(n)[self.reference]

    def forward(self, z: np.ndarray):
        rows = self._rows(z.shape[0])
        stats = self.stats if rows is None else batch_stats(z[rows], self.epsilon)
        u = gaussian_normalize(z, stats)
        v = gaussian_normalize(self.anchors.anchors, stats)
        cosine = _cosine_forward(u, v, self.allow_zero)
        return cosine.cosines, RobustCache(cosine, z, u, v, stats, rows)

    def backward(self, cache: RobustCache, grad: np.ndarray) -> np.ndarray:
        du, dv = _cosine_backward(cache.cosine, grad)
        sigma = cache.stats.std
        dz = du / sigma
        if cache.rows is None:
            return dz

        n_ref = cache.rows.shape[0]
        d_mean = -(du.sum(axis=0) + dv.sum(axis=0)) / sigma
        d_std = -((du * cache.u).sum(axis=0) + (dv * cache.v).sum(axis=0)) / sigma
        centered = cache.z[cache.rows] - cache.stats.mean
        np.add.at(dz, cache.rows, d_mean / n_ref + d_std * centered / (n_ref * sigma))
        return dz


def make_transform(
        mode: Mode,
        anchors: Optional[AnchorSet] = None,
        stats: Optional[BatchStats] = None,
        reference: RowSelector = None,
        epsilon: float = 0.0,
        allow_zero: bool = False
) -> LatentTransform:
    if mode is Mode.ABSOLUTE:
        return IdentityTransform()
    if anchors is None:
        raise DimensionMismatch(f"mode {mode.value} needs anchors")
    if mode is Mode.RELATIVE_VANILLA:
        return RelativeTransform(anchors, allow_zero=allow_zero)
    return RobustTransform(anchors, stats=stats, reference=reference, epsilon=epsilon, allow_zero=allow_zero)
