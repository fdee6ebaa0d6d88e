import logging
import os
import tempfile
from pathlib import Path
from typing import Union

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"


def format_float(value: float) -> str:
    return FLOAT_FORMAT % value


def atomic_write(path: Union[str, Path], payload: Union[str, bytes]) -> Path:
    """Write to a temporary file next to `path`, then rename it into place."""
    path = Path(path)
    data = payload.encode("utf-8") if isinstance(payload, str) else payload
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
        try:
            with os.fdopen(fd, "wb") as handle:
                handle.write(data)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.remove(tmp)
            raise
    except OSError as e:
        raise OSError(f"cannot write {path}: {e}") from e
    logger.debug(f"Wrote {len(data)} bytes to {path}")
    return path


def read_text(path: Union[str, Path]) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise OSError(f"cannot read {path}: {e}") from e
