from typing import Dict, List

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

STANDARD_ROLE = "standard"


class ClassPartition(BaseModel):
    """Index-ordered sample lists per class label (D = D_1 u ... u D_K)."""

    model_config = ConfigDict(frozen=True)

    classes: Dict[int, List[int]]
    size: int

    @model_validator(mode="after")
    def _check(self) -> "ClassPartition":
        if not self.classes or any(not idx for idx in self.classes.values()):
            raise ValueError("every class must be non-empty")
        merged = sorted(i for idx in self.classes.values() for i in idx)
        if merged != list(range(self.size)):
            raise ValueError("class index lists must be disjoint and cover the dataset")
        return self

    @property
    def labels(self) -> List[int]:
        return sorted(self.classes)

    @property
    def k(self) -> int:
        return len(self.classes)


class SubBatch(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    role: str
    indices: np.ndarray
    inputs: np.ndarray
    labels: np.ndarray

    @property
    def size(self) -> int:
        return self.indices.shape[0]


def class_role(label: int) -> str:
    return f"class_{label}"


class TopoBatch(BaseModel):
    """K class-specific sub-batches followed by one standard sub-batch."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    sub_batches: List[SubBatch]
    n: int

    @model_validator(mode="after")
    def _check(self) -> "TopoBatch":
        if len(self.sub_batches) < 2 or self.sub_batches[-1].role != STANDARD_ROLE:
            raise ValueError("a topo batch is K class sub-batches plus a trailing standard one")
        for sub in self.class_batches:
            if sub.size != self.n:
                raise ValueError(f"sub-batch {sub.role} has {sub.size} samples, expected {self.n}")
            if sub.role != class_role(int(sub.labels[0])) or np.any(sub.labels != sub.labels[0]):
                raise ValueError(f"sub-batch {sub.role} is not class-pure")
        return self

    @property
    def class_batches(self) -> List[SubBatch]:
        return self.sub_batches[:-1]

    @property
    def standard(self) -> SubBatch:
        return self.sub_batches[-1]

    @property
    def k(self) -> int:
        return len(self.sub_batches) - 1

    @property
    def inputs(self) -> np.ndarray:
        return np.concatenate([sub.inputs for sub in self.sub_batches], axis=0)

    @property
    def labels(self) -> np.ndarray:
        return np.concatenate([sub.labels for sub in self.sub_batches])

    def slices(self) -> List[slice]:
        out, start = [], 0
        for sub in self.sub_batches:
            out.append(slice(start, start + sub.size))
            start += sub.size
        return out
