"""
Binary weight files.

Layout (little-endian): magic b"MLPW", u32 version, u32 layer count, per
layer u32 (out, in), u32 activation code, u32 latent layer, u32 running-stats
flag, then float64 W_i (row-major) and b_i per layer, then running mean and
std when the flag is set.
"""
import logging
import struct
from pathlib import Path

import numpy as np

from app.exceptions import InputError
from app.models.network import ACTIVATION_CODES, MLPWeights
from app.repositories.storage import atomic_write

logger = logging.getLogger(__name__)

MAGIC = b"MLPW"
VERSION = 1
_CODES_TO_ACTIVATION = {code: activation for activation, code in ACTIVATION_CODES.items()}


class WeightsRepository:
    def to_bytes(self, weights: MLPWeights) -> bytes:
        has_stats = weights.running_mean is not None
        parts = [MAGIC, struct.pack("<II", VERSION, weights.n_layers)]
        parts += [struct.pack("<II", *w.shape) for w in weights.weights]
        parts.append(struct.pack("<III", ACTIVATION_CODES[weights.activation], weights.latent_layer, int(has_stats)))
        for w, b in zip(weights.weights, weights.biases):
            parts.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
            parts.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
        if has_stats:
            parts.append(np.ascontiguousarray(weights.running_mean, dtype="<f8").tobytes())
            parts.append(np.ascontiguousarray(weights.running_std, dtype="<f8").tobytes())
        return b"".join(parts)

    def from_bytes(self, payload: bytes, source: str = "<bytes>") -> MLPWeights:
        if payload[:4] != MAGIC:
            raise InputError(f"{source}: not a weight file (bad magic)")
        try:
            version, n_layers = struct.unpack_from("<II", payload, 4)
            if version != VERSION:
                raise InputError(f"{source}: unsupported weight format version {version}")
            offset = 12
            shapes = []
            for _ in range(n_layers):
                shapes.append(struct.unpack_from("<II", payload, offset))
                offset += 8
            code, latent_layer, has_stats = struct.unpack_from("<III", payload, offset)
            offset += 12

            def take(count: int) -> np.ndarray:
                nonlocal offset
                values = np.frombuffer(payload, dtype="<f8", count=count, offset=offset).astype(np.float64)
                offset += 8 * count
                return values

            weights, biases = [], []
            for rows, cols in shapes:
                weights.append(take(rows * cols).reshape(rows, cols))
                biases.append(take(rows))
            stats = {}
            if has_stats:
                latent_dim = shapes[latent_layer - 1][0]
                stats = {"running_mean": take(latent_dim), "running_std": take(latent_dim)}
        except (struct.error, ValueError) as e:
            raise InputError(f"{source}: truncated or corrupt weight file: {e}") from e
        if offset != len(payload):
            raise InputError(f"{source}: {len(payload) - offset} trailing bytes")
        if code not in _CODES_TO_ACTIVATION:
            raise InputError(f"{source}: unknown activation code {code}")
        return MLPWeights(
            weights=weights, biases=biases, activation=_CODES_TO_ACTIVATION[code], latent_layer=latent_layer, **stats
        )

    def save(self, path: Path, weights: MLPWeights) -> Path:
        logger.info(f"Saving {weights.n_layers}-layer weights to {path}")
        return atomic_write(path, self.to_bytes(weights))

    def load(self, path: Path) -> MLPWeights:
        try:
            payload = Path(path).read_bytes()
        except OSError as e:
            raise OSError(f"cannot read {path}: {e}") from e
        return self.from_bytes(payload, str(path))


weights_repository = WeightsRepository()
