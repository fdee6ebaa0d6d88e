from enum import Enum
from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from app.models.latent import BatchStats, ScaledPermutation


class Activation(str, Enum):
    RELU = "relu"
    GELU = "gelu"
    SIGMOID = "sigmoid"
    IDENTITY = "identity"


# numeric tags of the binary weight format
ACTIVATION_CODES = {Activation.RELU: 0, Activation.GELU: 1, Activation.SIGMOID: 2, Activation.IDENTITY: 3}


class IntertwinerElement(BaseModel):
    """
    A = D P acting on a hidden layer, checked to satisfy
    sigma(A x) = lambda_sigma(A) sigma(x) when constructed.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    transform: ScaledPermutation
    activation: Activation

    @model_validator(mode="after")
    def _check(self) -> "IntertwinerElement":
        if np.any(self.transform.shift != 0):
            raise ValueError("intertwiner elements are linear, shift must be zero")
        if self.activation is Activation.RELU and np.any(self.transform.scale <= 0):
            raise ValueError("relu elements need strictly positive scales")
        if self.activation in (Activation.GELU, Activation.SIGMOID) and np.any(self.transform.scale != 1):
            raise ValueError(f"{self.activation.value} elements are pure permutations")

        from app.services.symmetry import check_membership

        check_membership(self.activation, self.transform.matrix())
        return self

    @property
    def dim(self) -> int:
        return self.transform.dim

    def matrix(self) -> np.ndarray:
        return self.transform.matrix()

    def inverse_matrix(self) -> np.ndarray:
        return self.transform.inverse().matrix()


class MLPWeights(BaseModel):
    """
    Layer-wise weights W_i (n_i x n_{i-1}) and biases b_i.

    Layers 1..latent_layer form the encoder phi, the remaining layers the
    head gamma. The head input width equals the latent width for absolute
    models and the anchor count for relative ones.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True)

    weights: List[np.ndarray]
    biases: List[np.ndarray]
    activation: Activation
    latent_layer: int
    running_mean: Optional[np.ndarray] = None
    running_std: Optional[np.ndarray] = None

    @field_validator("weights", "biases", mode="before")
    @classmethod
    def _as_arrays(cls, value):
        return [np.array(v, dtype=np.float64) for v in value]

    @field_validator("running_mean", "running_std", mode="before")
    @classmethod
    def _as_optional_vector(cls, value):
        return None if value is None else np.array(value, dtype=np.float64)

    @model_validator(mode="after")
    def _check(self) -> "MLPWeights":
        n_layers = len(self.weights)
        if n_layers < 2 or len(self.biases) != n_layers:
            raise ValueError(f"need at least 2 layers with one bias each, got {n_layers} / {len(self.biases)}")
        if not 1 <= self.latent_layer < n_layers:
            raise ValueError(f"latent_layer must lie in [1, {n_layers - 1}], got {self.latent_layer}")
        for i, (w, b) in enumerate(zip(self.weights, self.biases), start=1):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ValueError(f"layer {i}: weight {w.shape} and bias {b.shape} do not fit")
            if i > 1 and i != self.latent_layer + 1 and w.shape[1] != self.weights[i - 2].shape[0]:
                raise ValueError(f"layer {i} expects width {w.shape[1]}, previous layer gives {self.weights[i - 2].shape[0]}")
        if (self.running_mean is None) != (self.running_std is None):
            raise ValueError("running mean and std must be given together")
        if self.running_mean is not None and self.running_mean.shape != (self.latent_dim,):
            raise ValueError(f"running stats shape {self.running_mean.shape} != latent width {self.latent_dim}")
        return self

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def latent_dim(self) -> int:
        return self.weights[self.latent_layer - 1].shape[0]

    @property
    def head_input_dim(self) -> int:
        return self.weights[self.latent_layer].shape[1]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[0]

    def shapes(self) -> List[Tuple[int, int]]:
        return [w.shape for w in self.weights]

    def running_stats(self) -> Optional[BatchStats]:
        if self.running_mean is None:
            return None
        return BatchStats(mean=self.running_mean, std=self.running_std)
