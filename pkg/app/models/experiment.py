from typing import List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.config import DomainKind, Mode
from app.models.latent import AnchorSet, ScaledPermutation
from app.models.network import MLPWeights


class DomainGenerator(BaseModel):
    """Hidden map producing domain B from domain A."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    kind: DomainKind
    transform: Optional[ScaledPermutation] = None
    rotation: Optional[np.ndarray] = None
    alpha: Optional[float] = None
    noise_std: Optional[float] = None
    noise_seed: Optional[int] = None

    @model_validator(mode="after")
    def _check(self) -> "DomainGenerator":
        required = {
            DomainKind.SCALED_PERMUTATION: ("transform",),
            DomainKind.ORTHOGONAL_MIX: ("rotation", "alpha"),
            DomainKind.INDEPENDENT_NOISE: ("noise_std", "noise_seed"),
        }[self.kind]
        missing = [name for name in required if getattr(self, name) is None]
        if missing:
            raise ValueError(f"{self.kind.value} generator is missing {missing}")
        return self


class DomainPair(BaseModel):
    """Two index-aligned datasets sharing labels: sample i of B corresponds to sample i of A."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    inputs_a: np.ndarray
    inputs_b: np.ndarray
    labels: np.ndarray
    class_means: np.ndarray
    generator: DomainGenerator

    @model_validator(mode="after")
    def _check(self) -> "DomainPair":
        if self.inputs_a.shape[0] != self.inputs_b.shape[0] or self.inputs_a.shape[0] != self.labels.shape[0]:
            raise ValueError("domains and labels must be index-aligned")
        return self

    @property
    def n_classes(self) -> int:
        return self.class_means.shape[0]

    def domain(self, name: str) -> np.ndarray:
        return {"a": self.inputs_a, "b": self.inputs_b}[name]


class DomainModel(BaseModel):
    """A trained network together with the transform it was trained with."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    weights: MLPWeights
    mode: Mode
    anchor_ids: List[int] = Field(default_factory=list)
    anchors: Optional[AnchorSet] = None

    @model_validator(mode="after")
    def _check(self) -> "DomainModel":
        if (self.mode is Mode.ABSOLUTE) != (self.anchors is None):
            raise ValueError("anchors are present exactly for relative modes")
        if self.anchors is not None and self.anchors.k != self.weights.head_input_dim:
            raise ValueError(f"{self.anchors.k} anchors for a head of width {self.weights.head_input_dim}")
        return self


class Metrics(BaseModel):
    """Scores multiplied by 100."""

    model_config = ConfigDict(frozen=True)

    acc: float = Field(ge=0, le=100)
    f1: float = Field(ge=0, le=100)
    mae: float = Field(ge=0)


class StitchCell(BaseModel):
    model_config = ConfigDict(frozen=True)

    mode: Mode
    gamma_domain: str
    phi_domain: str
    acc_mean: float
    acc_std: float
    f1_mean: float
    f1_std: float
    mae_mean: float
    mae_std: float


class StitchReport(BaseModel):
    cells: List[StitchCell] = Field(default_factory=list)

    def cell(self, mode: Mode, gamma_domain: str, phi_domain: str) -> StitchCell:
        for cell in self.cells:
            if cell.mode is mode and cell.gamma_domain == gamma_domain and cell.phi_domain == phi_domain:
                return cell
        raise KeyError((mode, gamma_domain, phi_domain))

    def cross_domain_accuracy(self, mode: Mode) -> float:
        cells = [c for c in self.cells if c.mode is mode and c.gamma_domain != c.phi_domain]
        return float(np.mean([c.acc_mean for c in cells]))


class TrainLogRow(BaseModel):
    model_config = ConfigDict(frozen=True)

    step: int
    task_loss: float
    r_pre: float
    r_post: float
    sched_weight: float
    total: float
    anchors_refreshed: bool
    skipped: bool = False
    reason: str = ""


class DatasetManifest(BaseModel):
    """What `gen-data` records next to the two domain CSVs; enough to replay domain B."""

    kind: DomainKind
    seed: int
    samples: int
    classes: int
    dim: int
    perm: Optional[List[int]] = None
    scale: Optional[List[float]] = None
    shift: Optional[List[float]] = None
    rotation: Optional[List[List[float]]] = None
    alpha: Optional[float] = None
    noise_std: Optional[float] = None
    noise_seed: Optional[int] = None

    @classmethod
    def from_pair(cls, pair: DomainPair, seed: int) -> "DatasetManifest":
        g = pair.generator
        return cls(
            kind=g.kind, seed=seed, samples=pair.labels.shape[0], classes=pair.n_classes, dim=pair.inputs_a.shape[1],
            perm=None if g.transform is None else g.transform.perm.tolist(),
            scale=None if g.transform is None else g.transform.scale.tolist(),
            shift=None if g.transform is None else g.transform.shift.tolist(),
            rotation=None if g.rotation is None else np.asarray(g.rotation).tolist(),
            alpha=g.alpha, noise_std=g.noise_std, noise_seed=g.noise_seed,
        )

    def generator(self) -> DomainGenerator:
        transform = None
        if self.perm is not None:
            transform = ScaledPermutation(perm=self.perm, scale=self.scale, shift=self.shift)
        return DomainGenerator(
            kind=self.kind, transform=transform,
            rotation=None if self.rotation is None else np.array(self.rotation, dtype=np.float64),
            alpha=self.alpha, noise_std=self.noise_std, noise_seed=self.noise_seed,
        )


class ModelManifest(BaseModel):
    mode: Mode
    anchor_ids: List[int] = Field(default_factory=list)
