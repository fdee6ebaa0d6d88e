from typing import List

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator, model_validator


def frozen_array(value, dtype=np.float64) -> np.ndarray:
    array = np.array(value, dtype=dtype, copy=True)
    array.flags.writeable = False
    return array


class _ArrayModel(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)


class LatentBatch(_ArrayModel):
    """Rows are samples, columns the latent coordinates."""

    data: np.ndarray

    @field_validator("data", mode="before")
    @classmethod
    def _as_matrix(cls, value):
        array = frozen_array(value)
        if array.ndim == 1:
            array = frozen_array(array.reshape(1, -1))
        if array.ndim != 2 or array.shape[0] < 1 or array.shape[1] < 1:
            raise ValueError(f"latent batch must be a non-empty matrix, got shape {array.shape}")
        if not np.all(np.isfinite(array)):
            raise ValueError("latent batch contains NaN or Inf")
        return array

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]


class AnchorSet(_ArrayModel):
    """
    Ordered anchors. Relative coordinates are positional, so the order of
    `anchors` is part of the identity and cross-domain correspondence is by
    index.
    """

    anchors: np.ndarray
    ids: List[int]

    @field_validator("anchors", mode="before")
    @classmethod
    def _as_matrix(cls, value):
        array = frozen_array(value)
        if array.ndim != 2 or array.shape[0] < 1 or array.shape[1] < 1:
            raise ValueError(f"anchors must be a non-empty k x m matrix, got shape {array.shape}")
        if not np.all(np.isfinite(array)):
            raise ValueError("anchors contain NaN or Inf")
        return array

    @model_validator(mode="after")
    def _check(self) -> "AnchorSet":
        if len(self.ids) != self.anchors.shape[0]:
            raise ValueError(f"{len(self.ids)} ids for {self.anchors.shape[0]} anchors")
        if len(set(self.ids)) != len(self.ids):
            raise ValueError("anchor ids must be unique")
        norms = np.linalg.norm(self.anchors, axis=1)
        if np.any(norms < 1e-300):
            raise ValueError(f"zero anchor vector at positions {np.flatnonzero(norms < 1e-300).tolist()}")
        return self

    @property
    def k(self) -> int:
        return self.anchors.shape[0]

    @property
    def dim(self) -> int:
        return self.anchors.shape[1]


class BatchStats(_ArrayModel):
    mean: np.ndarray
    std: np.ndarray

    @field_validator("mean", "std", mode="before")
    @classmethod
    def _as_vector(cls, value):
        array = frozen_array(value)
        if array.ndim != 1:
            raise ValueError(f"expected a vector, got shape {array.shape}")
        return array

    @model_validator(mode="after")
    def _check(self) -> "BatchStats":
        if self.mean.shape != self.std.shape:
            raise ValueError(f"mean {self.mean.shape} and std {self.std.shape} differ in shape")
        if not np.all(self.std > 0):
            raise ValueError("standard deviations must be strictly positive")
        return self

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


class ScaledPermutation(_ArrayModel):
    """
    The affine map z -> D P z + h, i.e. out[i] = scale[i] * z[perm[i]] + shift[i].
    """

    perm: np.ndarray
    scale: np.ndarray
    shift: np.ndarray

    @field_validator("perm", mode="before")
    @classmethod
    def _as_perm(cls, value):
        return frozen_array(value, dtype=np.int64)

    @field_validator("scale", "shift", mode="before")
    @classmethod
    def _as_vector(cls, value):
        return frozen_array(value)

    @model_validator(mode="after")
    def _check(self) -> "ScaledPermutation":
        m = self.perm.shape[0]
        if self.perm.ndim != 1 or m < 1:
            raise ValueError("perm must be a non-empty vector")
        if self.scale.shape != (m,) or self.shift.shape != (m,):
            raise ValueError(f"scale {self.scale.shape} / shift {self.shift.shape} do not match perm ({m},)")
        if not np.array_equal(np.sort(self.perm), np.arange(m)):
            raise ValueError(f"perm is not a bijection of 0..{m - 1}")
        if np.any(self.scale == 0) or not np.all(np.isfinite(self.scale)):
            raise ValueError("scale entries must be finite and non-zero")
        if not np.all(np.isfinite(self.shift)):
            raise ValueError("shift entries must be finite")
        return self

    @classmethod
    def identity(cls, m: int) -> "ScaledPermutation":
        return cls(perm=np.arange(m), scale=np.ones(m), shift=np.zeros(m))

    @property
    def dim(self) -> int:
        return self.perm.shape[0]

    def matrix(self) -> np.ndarray:
        """The linear part D P as a dense matrix."""
        m = self.dim
        out = np.zeros((m, m))
        out[np.arange(m), self.perm] = self.scale
        return out

    def compose(self, first: "ScaledPermutation") -> "ScaledPermutation":
        """self after first: z -> self(first(z))."""
        return ScaledPermutation(
            perm=first.perm[self.perm],
            scale=self.scale * first.scale[self.perm],
            shift=self.scale * first.shift[self.perm] + self.shift,
        )

    def inverse(self) -> "ScaledPermutation":
        inv = np.argsort(self.perm)
        return ScaledPermutation(
            perm=inv,
            scale=1.0 / self.scale[inv],
            shift=-self.shift[inv] / self.scale[inv],
        )
