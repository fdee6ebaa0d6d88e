from typing import List, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from app.exceptions import NonMonotoneTable
from app.models.latent import frozen_array


class MSTEdge(BaseModel):
    model_config = ConfigDict(frozen=True)

    i: int
    j: int
    length: float

    @model_validator(mode="after")
    def _ordered(self) -> "MSTEdge":
        if not 0 <= self.i < self.j:
            raise ValueError(f"edge endpoints must satisfy 0 <= i < j, got ({self.i}, {self.j})")
        if self.length < 0:
            raise ValueError("edge length must be non-negative")
        return self


class PersistenceDiagram0(BaseModel):
    """Death times of 0-dimensional Vietoris-Rips persistence, ascending."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    deaths: np.ndarray

    @field_validator("deaths", mode="before")
    @classmethod
    def _sorted(cls, value):
        array = np.asarray(value, dtype=np.float64).reshape(-1)
        if np.any(array < 0):
            raise ValueError("death times must be non-negative")
        return frozen_array(np.sort(array))

    def __len__(self) -> int:
        return self.deaths.shape[0]

    @property
    def total(self) -> float:
        return float(np.sum(self.deaths))


class LifespanWeight(BaseModel):
    """
    Weight of a (birth, death) pair. `length` uses death - birth; `monotone`
    uses F(death) - F(birth) for a strictly increasing piecewise-linear F,
    extended linearly beyond its outer breakpoints.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    kind: Literal["length", "monotone"] = "length"
    xs: Optional[np.ndarray] = None
    ys: Optional[np.ndarray] = None

    @field_validator("xs", "ys", mode="before")
    @classmethod
    def _as_vector(cls, value):
        return None if value is None else frozen_array(np.asarray(value, dtype=np.float64).reshape(-1))

    @model_validator(mode="after")
    def _check(self) -> "LifespanWeight":
        if self.kind == "length":
            return self
        if self.xs is None or self.ys is None or self.xs.shape != self.ys.shape or self.xs.shape[0] < 2:
            raise NonMonotoneTable("monotone weight needs at least two breakpoints with matching x and y")
        if np.any(np.diff(self.xs) <= 0) or np.any(np.diff(self.ys) <= 0):
            raise NonMonotoneTable(f"table must be strictly increasing in both coordinates: {self.xs.tolist()} -> {self.ys.tolist()}")
        return self

    @classmethod
    def length(cls) -> "LifespanWeight":
        return cls(kind="length")

    @classmethod
    def monotone(cls, table: dict) -> "LifespanWeight":
        xs = sorted(table)
        return cls(kind="monotone", xs=xs, ys=[table[x] for x in xs])

    @classmethod
    def from_flat(cls, kind: str, flat: List[float]) -> "LifespanWeight":
        if kind == "length":
            return cls.length()
        return cls(kind="monotone", xs=flat[0::2], ys=flat[1::2])

    def _segment(self, x: np.ndarray) -> np.ndarray:
        return np.clip(np.searchsorted(self.xs, x, side="right") - 1, 0, self.xs.shape[0] - 2)

    def slope(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if self.kind == "length":
            return np.ones_like(x)
        seg = self._segment(x)
        return (self.ys[seg + 1] - self.ys[seg]) / (self.xs[seg + 1] - self.xs[seg])

    def transform(self, x: np.ndarray) -> np.ndarray:
        """F(x), or x itself for the length weight."""
        x = np.asarray(x, dtype=np.float64)
        if self.kind == "length":
            return x
        seg = self._segment(x)
        return self.ys[seg] + self.slope(x) * (x - self.xs[seg])

    def lifespan(self, deaths: np.ndarray) -> np.ndarray:
        """Weight of (0, death) pairs; births are 0 in dimension 0."""
        if self.kind == "length":
            return np.asarray(deaths, dtype=np.float64)
        return self.transform(deaths) - self.transform(np.zeros(1))[0]
