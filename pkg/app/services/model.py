"""
A small multilayer perceptron with explicit forward and reverse passes.

Layers 1..m (m = latent_layer) form the encoder phi and are all activated;
the remaining layers form the head gamma whose last layer is affine only.
A latent transform (identity, relative or robust relative) sits between
the two and takes part in the reverse pass.
"""
import logging
from dataclasses import dataclass, field
from typing import Any, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import log_softmax, softmax

from app.exceptions import BadArchitecture, CacheMismatch, DimensionMismatch, LabelOutOfRange
from app.models.latent import LatentBatch
from app.models.network import Activation, MLPWeights
from app.services.geometry import ArrayLike, as_array
from app.services.symmetry import activation_apply, activation_derivative
from app.services.transforms import IdentityTransform, LatentTransform

logger = logging.getLogger(__name__)


@dataclass
class ForwardCache:
    """Everything the reverse pass needs: the input and pre-activation of every layer."""

    shapes: List[Tuple[int, int]]
    latent_layer: int
    inputs: List[np.ndarray] = field(default_factory=list)
    pre: List[np.ndarray] = field(default_factory=list)
    latent: Optional[np.ndarray] = None
    transformed: Optional[np.ndarray] = None
    transform: LatentTransform = field(default_factory=IdentityTransform)
    transform_cache: Any = None
    logits: Optional[np.ndarray] = None


@dataclass
class Gradients:
    weights: List[np.ndarray]
    biases: List[np.ndarray]

    def max_abs(self) -> float:
        return float(max(np.max(np.abs(g)) for g in self.weights + self.biases))


def init_mlp(
        layer_sizes: Sequence[int],
        activation: Activation,
        seed: int,
        latent_layer: Optional[int] = None,
        head_input_dim: Optional[int] = None
) -> MLPWeights:
    """
    Uniform Glorot initialization, zero biases.

    layer_sizes = (n_0, ..., n_l). The latent layer defaults to l - 1 so the
    head is a single affine layer; head_input_dim overrides the width the
    first head layer reads (the anchor count of relative models).
    """
    sizes = list(layer_sizes)
    if len(sizes) < 3:
        raise BadArchitecture(f"need input, at least one hidden and an output width, got {sizes}")
    if any(int(n) <= 0 for n in sizes):
        raise BadArchitecture(f"layer widths must be positive, got {sizes}")
    n_layers = len(sizes) - 1
    latent_layer = n_layers - 1 if latent_layer is None else latent_layer
    if not 1 <= latent_layer < n_layers:
        raise BadArchitecture(f"latent layer must lie in [1, {n_layers - 1}], got {latent_layer}")

    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for i in range(1, n_layers + 1):
        n_in = sizes[i - 1]
        if i == latent_layer + 1 and head_input_dim is not None:
            n_in = head_input_dim
        n_out = sizes[i]
        bound = np.sqrt(6.0 / (n_in + n_out))
        weights.append(rng.uniform(-bound, bound, size=(n_out, n_in)))
        biases.append(np.zeros(n_out))
    return MLPWeights(weights=weights, biases=biases, activation=activation, latent_layer=latent_layer)


def _run_layers(
        weights: MLPWeights,
        start: int,
        stop: int,
        h: np.ndarray,
        cache: Optional[ForwardCache],
        activate_last: bool
) -> np.ndarray:
    for i in range(start, stop):
        w, b = weights.weights[i], weights.biases[i]
        if h.shape[1] != w.shape[1]:
            raise DimensionMismatch(f"layer {i + 1} expects width {w.shape[1]}, got {h.shape[1]}")
        pre = h @ w.T + b
        if cache is not None:
            cache.inputs.append(h)
            cache.pre.append(pre)
        h = activation_apply(weights.activation, pre) if (i < stop - 1 or activate_last) else pre
    return h


def _batch(x: ArrayLike) -> np.ndarray:
    data = as_array(x)
    if data.ndim == 1:
        data = data[None, :]
    if data.ndim != 2:
        raise DimensionMismatch(f"expected a batch of vectors, got shape {data.shape}")
    return data


def encode(weights: MLPWeights, x: ArrayLike) -> LatentBatch:
    """phi_m(x): the activated output of layer latent_layer."""
    return LatentBatch(data=_run_layers(weights, 0, weights.latent_layer, _batch(x), None, True))


def head(weights: MLPWeights, z: ArrayLike) -> np.ndarray:
    """gamma_m(z): the layers after latent_layer, last one affine."""
    return _run_layers(weights, weights.latent_layer, weights.n_layers, _batch(z), None, False)


def forward(weights: MLPWeights, x: ArrayLike, transform: Optional[LatentTransform] = None) -> Tuple[np.ndarray, ForwardCache]:
    """Logits of head(T(encode(x))) together with the cache for `backward`."""
    transform = transform or IdentityTransform()
    cache = ForwardCache(shapes=weights.shapes(), latent_layer=weights.latent_layer, transform=transform)
    x = _batch(x)
    if x.shape[1] != weights.input_dim:
        raise DimensionMismatch(f"input width {x.shape[1]} != network input width {weights.input_dim}")

    cache.latent = _run_layers(weights, 0, weights.latent_layer, x, cache, True)
    cache.transformed, cache.transform_cache = transform.forward(cache.latent)
    cache.logits = _run_layers(weights, weights.latent_layer, weights.n_layers, cache.transformed, cache, False)
    return cache.logits, cache


def softmax_cross_entropy(logits: np.ndarray, labels: ArrayLike) -> Tuple[float, np.ndarray]:
    """Mean negative log-likelihood and its gradient (softmax - onehot) / N."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n, n_classes = logits.shape
    if labels.shape != (n,):
        raise DimensionMismatch(f"{labels.shape[0]} labels for {n} logit rows")
    if np.any(labels < 0) or np.any(labels >= n_classes):
        raise LabelOutOfRange(f"labels must lie in [0, {n_classes})")

    rows = np.arange(n)
    loss = float(-np.mean(log_softmax(logits, axis=1)[rows, labels]))
    grad = softmax(logits, axis=1)
    grad[rows, labels] -= 1.0
    return loss, grad / n


def backward(
        weights: MLPWeights,
        cache: ForwardCache,
        dlogits: np.ndarray,
        extra_latent_grad: Optional[np.ndarray] = None,
        extra_transformed_grad: Optional[np.ndarray] = None
) -> Gradients:
    """
    Reverse pass of forward(). extra_latent_grad is added to the gradient of
    phi_m(x), extra_transformed_grad to the gradient of T(phi_m(x)); anchors
    receive no gradient.
    """
    if cache.shapes != weights.shapes() or cache.latent_layer != weights.latent_layer:
        raise CacheMismatch(f"cache built for {cache.shapes}, weights are {weights.shapes()}")
    dlogits = np.asarray(dlogits, dtype=np.float64)
    if cache.logits is None or dlogits.shape != cache.logits.shape:
        raise CacheMismatch(f"logit gradient shape {dlogits.shape} does not match the cached forward pass")
    for name, extra, target in (
            ("latent", extra_latent_grad, cache.latent),
            ("transformed", extra_transformed_grad, cache.transformed),
    ):
        if extra is not None and np.shape(extra) != target.shape:
            raise CacheMismatch(f"{name} gradient shape {np.shape(extra)} != {target.shape}")

    m, n_layers = weights.latent_layer, weights.n_layers
    d_w: List[np.ndarray] = [np.empty(0)] * n_layers
    d_b: List[np.ndarray] = [np.empty(0)] * n_layers
    grad = dlogits
    for i in reversed(range(n_layers)):
        if i < n_layers - 1:
            grad = grad * activation_derivative(weights.activation, cache.pre[i])
        d_w[i] = grad.T @ cache.inputs[i]
        d_b[i] = grad.sum(axis=0)
        if i == 0:
            break
        grad = grad @ weights.weights[i]
        if i == m:
            if extra_transformed_grad is not None:
                grad = grad + extra_transformed_grad
            grad = cache.transform.backward(cache.transform_cache, grad)
            if extra_latent_grad is not None:
                grad = grad + extra_latent_grad
    return Gradients(weights=d_w, biases=d_b)


def predict(weights: MLPWeights, x: ArrayLike, transform: Optional[LatentTransform] = None) -> np.ndarray:
    logits, _ = forward(weights, x, transform)
    return np.argmax(logits, axis=1)
