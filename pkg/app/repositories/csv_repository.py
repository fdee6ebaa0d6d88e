import csv
import io
import logging
from pathlib import Path
from typing import Iterable, List, Sequence, Tuple

import numpy as np

from app.exceptions import DimensionMismatch, InputError
from app.models.latent import AnchorSet, LatentBatch
from app.repositories.storage import atomic_write, format_float, read_text

logger = logging.getLogger(__name__)


def _cell(value) -> str:
    if isinstance(value, (float, np.floating)):
        return format_float(float(value))
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    return str(value)


class CsvRepository:
    """Headered CSV files with floats at 17 significant digits."""

    def render(self, header: Sequence[str], rows: Iterable[Sequence]) -> str:
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(v) for v in row])
        return buffer.getvalue()

    def write_rows(self, path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
        return atomic_write(path, self.render(header, rows))

    def read_rows(self, path: Path) -> Tuple[List[str], List[List[str]]]:
        reader = csv.reader(io.StringIO(read_text(path)))
        try:
            header = next(reader)
        except StopIteration:
            raise InputError(f"{path} is empty")
        return header, [row for row in reader if row]

    def write_dataset(self, path: Path, inputs: np.ndarray, labels: np.ndarray) -> Path:
        header = ["label", *(f"x{i}" for i in range(inputs.shape[1]))]
        return self.write_rows(path, header, ([int(y), *x] for x, y in zip(inputs, labels)))

    def read_dataset(self, path: Path) -> Tuple[np.ndarray, np.ndarray]:
        header, rows = self.read_rows(path)
        if not header or header[0] != "label":
            raise InputError(f"{path}: first column must be 'label', got {header[:1]}")
        try:
            labels = np.array([int(row[0]) for row in rows], dtype=np.int64)
            inputs = np.array([[float(v) for v in row[1:]] for row in rows], dtype=np.float64)
        except ValueError as e:
            raise InputError(f"{path}: {e}") from e
        if inputs.ndim != 2 or inputs.shape[1] != len(header) - 1:
            raise DimensionMismatch(f"{path}: rows do not match the {len(header) - 1} feature columns")
        return inputs, labels

    def write_latent(self, path: Path, batch: LatentBatch) -> Path:
        return self.write_rows(path, [f"dim={batch.dim}"], batch.data)

    def read_latent(self, path: Path) -> LatentBatch:
        header, rows = self.read_rows(path)
        dim = self._dim(path, header)
        data = np.array([[float(v) for v in row] for row in rows], dtype=np.float64)
        if data.ndim != 2 or data.shape[1] != dim:
            raise DimensionMismatch(f"{path}: header says dim={dim}, rows have shape {data.shape}")
        return LatentBatch(data=data)

    def write_anchors(self, path: Path, anchors: AnchorSet) -> Path:
        rows = ([anchor_id, *vector] for anchor_id, vector in zip(anchors.ids, anchors.anchors))
        return self.write_rows(path, [f"dim={anchors.dim}", "id"], rows)

    def read_anchors(self, path: Path) -> AnchorSet:
        header, rows = self.read_rows(path)
        dim = self._dim(path, header)
        ids = [int(row[0]) for row in rows]
        data = np.array([[float(v) for v in row[1:]] for row in rows], dtype=np.float64)
        if data.ndim != 2 or data.shape[1] != dim:
            raise DimensionMismatch(f"{path}: header says dim={dim}, rows have shape {data.shape}")
        return AnchorSet(anchors=data, ids=ids)

    def _dim(self, path: Path, header: List[str]) -> int:
        if not header or not header[0].startswith("dim="):
            raise InputError(f"{path}: first header cell must be 'dim=<m>'")
        return int(header[0][4:])


csv_repository = CsvRepository()
