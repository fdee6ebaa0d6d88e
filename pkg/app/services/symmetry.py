"""
Intertwiner groups of coordinate-wise activations and the weight-space
transformation that leaves a network function unchanged while mapping each
hidden representation by lambda_sigma(A).
"""
import logging
from typing import List, Optional, Sequence

import numpy as np
from scipy.special import ndtr

from app.exceptions import ArchitectureMismatch, DimensionMismatch, MembershipViolation, SingularSigmaIdentity
from app.models.latent import ScaledPermutation
from app.models.network import Activation, IntertwinerElement, MLPWeights

logger = logging.getLogger(__name__)

MEMBERSHIP_TOL = 1e-8
MEMBERSHIP_SAMPLES = 32
MAX_CONDITION = 1e12


def activation_apply(activation: Activation, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if activation is Activation.RELU:
        return np.maximum(x, 0.0)
    if activation is Activation.GELU:
        return x * ndtr(x)
    if activation is Activation.SIGMOID:
        return 0.5 * (1.0 + np.tanh(0.5 * x))
    return x.copy()


def activation_derivative(activation: Activation, x: np.ndarray) -> np.ndarray:
    """Derivative with respect to the pre-activation; relu uses 0 at the kink."""
    x = np.asarray(x, dtype=np.float64)
    if activation is Activation.RELU:
        return (x > 0).astype(np.float64)
    if activation is Activation.GELU:
        return ndtr(x) + x * np.exp(-0.5 * x * x) / np.sqrt(2.0 * np.pi)
    if activation is Activation.SIGMOID:
        s = activation_apply(activation, x)
        return s * (1.0 - s)
    return np.ones_like(x)


def lambda_sigma(activation: Activation, a: np.ndarray) -> np.ndarray:
    """sigma(A) sigma(I_n)^-1, evaluated literally with a dense solve."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionMismatch(f"lambda_sigma needs a square matrix, got {a.shape}")
    sigma_identity = activation_apply(activation, np.eye(a.shape[0]))
    if np.linalg.cond(sigma_identity) >= MAX_CONDITION:
        raise SingularSigmaIdentity(f"{activation.value}(I_{a.shape[0]}) is not numerically invertible")
    # X sigma(I) = sigma(A)  <=>  sigma(I)^T X^T = sigma(A)^T
    return np.linalg.solve(sigma_identity.T, activation_apply(activation, a).T).T


def lambda_sigma_relu_fast(a: np.ndarray) -> np.ndarray:
    """Closed form for relu: lambda(A) = A whenever A has no negative entries."""
    a = np.asarray(a, dtype=np.float64)
    if np.any(a < 0):
        raise MembershipViolation("closed-form relu lambda needs non-negative entries")
    return a.copy()


def check_membership(activation: Activation, a: np.ndarray, seed: int = 0) -> float:
    """
    Worst deviation of sigma(A x) from lambda_sigma(A) sigma(x) on random x.

    Raises MembershipViolation above MEMBERSHIP_TOL.
    """
    lam = lambda_sigma(activation, a)
    xs = np.random.default_rng(seed).normal(scale=2.0, size=(MEMBERSHIP_SAMPLES, a.shape[0]))
    lhs = activation_apply(activation, xs @ a.T)
    rhs = activation_apply(activation, xs) @ lam.T
    worst = float(np.max(np.abs(lhs - rhs)))
    if worst > MEMBERSHIP_TOL:
        raise MembershipViolation(
            f"matrix is not in the intertwiner group of {activation.value}: deviation {worst:.3e}"
        )
    return worst


def make_element(activation: Activation, perm: Sequence[int], scale: Optional[Sequence[float]] = None) -> IntertwinerElement:
    n = len(perm)
    transform = ScaledPermutation(
        perm=perm,
        scale=np.ones(n) if scale is None else scale,
        shift=np.zeros(n),
    )
    return IntertwinerElement(transform=transform, activation=activation)


def sample_element(activation: Activation, n: int, rng: np.random.Generator, scale_range=(0.5, 2.0)) -> IntertwinerElement:
    """
    Random element of the family each activation supports: positive scaled
    permutations for relu, any non-zero scaled permutation for identity,
    pure permutations for gelu and sigmoid.
    """
    perm = rng.permutation(n)
    low, high = scale_range
    if activation is Activation.RELU:
        scale = np.exp(rng.uniform(np.log(low), np.log(high), size=n))
    elif activation is Activation.IDENTITY:
        scale = np.exp(rng.uniform(np.log(low), np.log(high), size=n)) * rng.choice([-1.0, 1.0], size=n)
    else:
        scale = None
    return make_element(activation, perm, scale)


def _check_elements(weights: MLPWeights, elements: Sequence[IntertwinerElement], count: int) -> None:
    if len(elements) != count:
        raise DimensionMismatch(f"expected {count} intertwiner elements, got {len(elements)}")
    for i, element in enumerate(elements):
        width = weights.weights[i].shape[0]
        if element.dim != width:
            raise DimensionMismatch(f"element {i + 1} has dimension {element.dim}, layer {i + 1} has width {width}")


def _transform_layers(ws: Sequence[np.ndarray], bs: Sequence[np.ndarray], elements: Sequence[IntertwinerElement], activation: Activation):
    new_w: List[np.ndarray] = []
    new_b: List[np.ndarray] = []
    correction = None  # lambda(A_{i-1}^-1)
    for i, (w, b) in enumerate(zip(ws, bs)):
        w_new = w if correction is None else w @ correction
        if i < len(elements):
            a = elements[i].matrix()
            new_w.append(a @ w_new)
            new_b.append(a @ b)
            correction = lambda_sigma(activation, elements[i].inverse_matrix())
        else:
            new_w.append(w_new.copy())
            new_b.append(b.copy())
            correction = None
    return new_w, new_b


def intertwiner_transform_weights(
        weights: MLPWeights,
        elements: Sequence[IntertwinerElement],
        activation: Optional[Activation] = None
) -> MLPWeights:
    """
    Weights W~ with f(x, W~) = f(x, W) and phi_m(x, W~) = lambda_sigma(A_m) phi_m(x, W).

    One element per hidden layer (l - 1 elements for l layers):
    W~_1 = A_1 W_1, W~_i = A_i W_i lambda(A_{i-1}^-1), b~_i = A_i b_i, and the
    output layer W~_l = W_l lambda(A_{l-1}^-1) with an unchanged bias.
    """
    activation = activation or weights.activation
    _check_elements(weights, elements, weights.n_layers - 1)
    if weights.head_input_dim != weights.latent_dim:
        raise ArchitectureMismatch("full-network transform needs a chained network; use transform_encoder_weights")
    for element in elements:
        if element.activation is not activation:
            raise MembershipViolation(f"element built for {element.activation.value}, network uses {activation.value}")

    new_w, new_b = _transform_layers(weights.weights, weights.biases, elements, activation)
    logger.debug(f"Applied {len(elements)} intertwiner elements to a {weights.n_layers}-layer network")
    return weights.model_copy(update={"weights": new_w, "biases": new_b})


def transform_encoder_weights(weights: MLPWeights, elements: Sequence[IntertwinerElement]) -> MLPWeights:
    """
    Transform only the encoder layers 1..m, leaving the head untouched. The
    latent output becomes lambda_sigma(A_m) phi_m(x, W); heads reading a
    transform that is invariant to that map keep computing the same function.
    """
    _check_elements(weights, elements, weights.latent_layer)
    m = weights.latent_layer
    new_w, new_b = _transform_layers(weights.weights[:m], weights.biases[:m], elements, weights.activation)
    return weights.model_copy(update={
        "weights": new_w + [w.copy() for w in weights.weights[m:]],
        "biases": new_b + [b.copy() for b in weights.biases[m:]],
    })


def verify_network_invariance(weights: MLPWeights, transformed: MLPWeights, samples) -> float:
    """Max absolute output deviation between the two networks over the samples."""
    from app.services.model import forward

    if weights.shapes() != transformed.shapes() or weights.latent_layer != transformed.latent_layer:
        raise ArchitectureMismatch(f"architectures differ: {weights.shapes()} vs {transformed.shapes()}")
    original, _ = forward(weights, samples)
    changed, _ = forward(transformed, samples)
    return float(np.max(np.abs(changed - original)))
