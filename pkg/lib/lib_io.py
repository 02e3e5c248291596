import json
import logging
import struct
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional, Union

import numpy as np
import pandas as pd

from lib.errors import MatrixFormatError
from lib.linalg import as_matrix, dft2_magnitude
from lib.signal_models import DataModelSpec, LabeledBatch

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

MAGIC = b"DKMX"
HEADER = struct.Struct("<4sIII")   # magic, rows, cols, reserved
FORMAT_VERSION = 1


# -------------------------
# Matrix files
# -------------------------
def write_matrix_bin(A, path: PathLike) -> Path:
    A = as_matrix(A)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(MAGIC, A.shape[0], A.shape[1], 0))
        fh.write(np.ascontiguousarray(A, dtype="<f8").tobytes())
    return path


def read_matrix_bin(path: PathLike) -> np.ndarray:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except FileNotFoundError as e:
        raise MatrixFormatError(f"{path}: file not found") from e
    if len(raw) < HEADER.size:
        raise MatrixFormatError(f"{path}: truncated header ({len(raw)} bytes)")
    magic, rows, cols, _ = HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise MatrixFormatError(f"{path}: bad magic {magic!r}")
    if rows < 1 or cols < 1:
        raise MatrixFormatError(f"{path}: bad size {rows}x{cols}")
    expected = HEADER.size + 8 * rows * cols
    if len(raw) != expected:
        raise MatrixFormatError(f"{path}: expected {expected} bytes for {rows}x{cols}, found {len(raw)}")
    return np.frombuffer(raw, dtype="<f8", offset=HEADER.size).reshape(rows, cols).astype(float)


def write_matrix_csv(A, path: PathLike) -> Path:
    A = as_matrix(A)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(f"# {A.shape[0]} {A.shape[1]}\n")
        pd.DataFrame(A).to_csv(fh, header=False, index=False, float_format="%.17g")
    return path


def read_matrix_csv(path: PathLike) -> np.ndarray:
    path = Path(path)
    try:
        with open(path) as fh:
            first = fh.readline()
            parts = first.lstrip("#").split()
            if not first.startswith("#") or len(parts) != 2:
                raise MatrixFormatError(f"{path}: missing '# rows cols' header")
            rows, cols = int(parts[0]), int(parts[1])
            df = pd.read_csv(fh, header=None, dtype=float, float_precision="round_trip")
    except FileNotFoundError as e:
        raise MatrixFormatError(f"{path}: file not found") from e
    except (ValueError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        if isinstance(e, MatrixFormatError):
            raise
        raise MatrixFormatError(f"{path}: {e}") from e
    A = df.to_numpy()
    if A.shape != (rows, cols):
        raise MatrixFormatError(f"{path}: header says {rows}x{cols}, body is {A.shape[0]}x{A.shape[1]}")
    return A


def save_matrix(A, path: PathLike) -> Path:
    if Path(path).suffix.lower() == ".csv":
        return write_matrix_csv(A, path)
    return write_matrix_bin(A, path)


def load_matrix(path: PathLike) -> np.ndarray:
    if Path(path).suffix.lower() == ".csv":
        return read_matrix_csv(path)
    return read_matrix_bin(path)


# -------------------------
# JSON sidecars
# -------------------------
def _jsonable(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def write_json(data: dict, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, default=_jsonable, allow_nan=True))
    return path


def read_json(path: PathLike) -> dict:
    path = Path(path)
    try:
        return json.loads(path.read_text())
    except FileNotFoundError as e:
        raise MatrixFormatError(f"{path}: file not found") from e
    except json.JSONDecodeError as e:
        raise MatrixFormatError(f"{path}: bad JSON ({e})") from e


def utc_now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


# -------------------------
# Batches
# -------------------------
def save_batch(batch, out_dir: PathLike) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_matrix_bin(batch.inputs, out / "inputs.bin")
    write_matrix_bin(batch.targets, out / "targets.bin")
    write_json({
        "format": "descrambler-kit-batch",
        "version": FORMAT_VERSION,
        "spec": batch.spec.to_dict(),
        "seed": batch.seed,
        "created": utc_now(),
        "n": batch.n,
    }, out / "manifest.json")
    logger.info("Saved batch (%d columns) to %s", batch.n, out)
    return out


def load_batch(in_dir: PathLike) -> LabeledBatch:
    src = Path(in_dir)
    manifest = read_json(src / "manifest.json")
    if manifest.get("version") != FORMAT_VERSION:
        raise MatrixFormatError(f"{src}: unsupported batch version {manifest.get('version')}")
    return LabeledBatch(
        inputs=read_matrix_bin(src / "inputs.bin"),
        targets=read_matrix_bin(src / "targets.bin"),
        seed=manifest.get("seed"),
        spec=DataModelSpec.from_mapping(manifest["spec"]),
    )


# -------------------------
# Descramble reports
# -------------------------
def save_report(report, out_dir: PathLike, weight: Optional[np.ndarray] = None) -> Path:
    """Write P.bin, report.json and, given the layer weight, descrambled_W.bin + fourier_view.csv."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_matrix_bin(report.P, out / "P.bin")
    meta = report.to_dict()
    meta["created"] = utc_now()
    meta["version"] = FORMAT_VERSION
    if weight is not None:
        PW = report.P @ as_matrix(weight, "W")
        write_matrix_bin(PW, out / "descrambled_W.bin")
        pd.DataFrame(dft2_magnitude(PW)).to_csv(out / "fourier_view.csv", index=False, header=False,
                                                float_format="%.17g")
        meta["files"] = ["P.bin", "descrambled_W.bin", "fourier_view.csv"]
    else:
        meta["files"] = ["P.bin"]
    write_json(meta, out / "report.json")
    logger.info("Saved %s report to %s", report.method, out)
    return out
