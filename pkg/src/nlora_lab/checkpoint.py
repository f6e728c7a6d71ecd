"""MATX v1 matrix files and chain checkpoint directories.

Matrix file layout (little-endian)::

    4D 41 54 58   magic "MATX"
    u8            version (1)
    u8            dtype code (0x01 = float64)
    u32 rows, u32 cols
    rows*cols f64 values, row-major

A chain directory holds ``base.matx``, ``adapter_<id>_A.matx`` /
``adapter_<id>_B.matx`` for every adapter (history and active), and
``manifest.json``. ``merged`` is rebuilt on load by replaying the history
in order, which reproduces the in-memory value bit for bit.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .adapters import AdapterChain, LoraAdapter

MAGIC = b"MATX"
VERSION = 1
DTYPE_F64 = 0x01
_HEADER = struct.Struct("<4sBBII")
MANIFEST = "manifest.json"
FORMAT_NAME = "nlora-lab-chain"


class CheckpointError(Exception):
    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = Path(path)


class MagicBytesError(CheckpointError):
    pass


class UnsupportedFormatError(CheckpointError):
    pass


class TruncatedPayloadError(CheckpointError):
    pass


class DimensionMismatchError(CheckpointError):
    pass


class ManifestError(CheckpointError):
    pass


def write_matx(path, m: np.ndarray):
    m = np.ascontiguousarray(m, dtype="<f8")
    rows, cols = m.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, DTYPE_F64, rows, cols))
        fh.write(m.tobytes(order="C"))


def read_matx(path) -> np.ndarray:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(path, f"cannot read matrix file: {exc.strerror or exc}") from None
    if len(data) < 4 or data[:4] != MAGIC:
        raise MagicBytesError(path, f"bad magic bytes {data[:4]!r}, expected {MAGIC!r}")
    if len(data) < _HEADER.size:
        raise TruncatedPayloadError(path, f"header truncated at {len(data)} bytes")
    _, version, dtype, rows, cols = _HEADER.unpack_from(data)
    if version != VERSION:
        raise UnsupportedFormatError(path, f"unsupported version {version}")
    if dtype != DTYPE_F64:
        raise UnsupportedFormatError(path, f"unsupported dtype code {dtype:#04x}")
    if rows < 1 or cols < 1:
        raise DimensionMismatchError(path, f"declared shape {rows}x{cols} is empty")
    payload = len(data) - _HEADER.size
    expected = rows * cols * 8
    if payload < expected:
        raise TruncatedPayloadError(
            path, f"declared {rows}x{cols} needs {rows * cols} values, found {payload / 8:g}"
        )
    if payload > expected:
        raise DimensionMismatchError(
            path, f"declared {rows}x{cols} but payload holds {payload / 8:g} values"
        )
    m = np.frombuffer(data, dtype="<f8", offset=_HEADER.size).reshape(rows, cols)
    if not np.all(np.isfinite(m)):
        raise CheckpointError(path, "non-finite values in payload")
    return m.astype(np.float64)


def _adapter_entry(ad: LoraAdapter) -> dict:
    return {
        "task_id": ad.task_id,
        "rank": ad.rank,
        "frozen": ad.frozen,
        "seed": ad.seed,
        "lambda": ad.lam,
        "a": f"adapter_{ad.task_id}_A.matx",
        "b": f"adapter_{ad.task_id}_B.matx",
    }


def save_checkpoint(chain: AdapterChain, path, extra: dict | None = None):
    path = Path(path)
    if not path.parent.exists():
        raise FileNotFoundError(f"parent directory {path.parent} does not exist")
    path.mkdir(exist_ok=True)
    write_matx(path / "base.matx", chain.base)
    adapters = list(chain.history) + ([chain.active] if chain.active is not None else [])
    for ad in adapters:
        entry = _adapter_entry(ad)
        write_matx(path / entry["a"], ad.a)
        write_matx(path / entry["b"], ad.b)
    manifest = {
        "format": FORMAT_NAME,
        "version": VERSION,
        "shape": list(chain.shape),
        "base": "base.matx",
        "history": [_adapter_entry(h) for h in chain.history],
        "active": _adapter_entry(chain.active) if chain.active is not None else None,
    }
    if extra:
        manifest["extra"] = extra
    (path / MANIFEST).write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")


def _load_adapter(root: Path, entry: dict, manifest_path: Path) -> LoraAdapter:
    try:
        a = read_matx(root / entry["a"])
        b = read_matx(root / entry["b"])
        task_id, rank, frozen = int(entry["task_id"]), int(entry["rank"]), bool(entry["frozen"])
    except (KeyError, TypeError) as exc:
        raise ManifestError(manifest_path, f"bad adapter entry {entry!r}: {exc}") from None
    if a.shape[1] != rank or b.shape[0] != rank:
        raise DimensionMismatchError(
            root / entry["a"], f"factors {a.shape}/{b.shape} disagree with rank {rank}"
        )
    return LoraAdapter(task_id, a, b, frozen=frozen, seed=entry.get("seed"), lam=entry.get("lambda"))


def load_manifest(path) -> dict:
    manifest_path = Path(path) / MANIFEST
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ManifestError(manifest_path, "manifest missing") from None
    except json.JSONDecodeError as exc:
        raise ManifestError(manifest_path, f"invalid JSON: {exc}") from None
    if manifest.get("format") != FORMAT_NAME:
        raise ManifestError(manifest_path, f"not a chain manifest (format={manifest.get('format')!r})")
    return manifest


def load_checkpoint(path) -> AdapterChain:
    root = Path(path)
    manifest = load_manifest(root)
    manifest_path = root / MANIFEST
    base = read_matx(root / manifest.get("base", "base.matx"))
    if list(base.shape) != list(manifest.get("shape", base.shape)):
        raise DimensionMismatchError(root / "base.matx", f"shape {base.shape} != manifest {manifest['shape']}")
    history = [_load_adapter(root, e, manifest_path) for e in manifest.get("history", [])]
    for h in history:
        if h.shape != base.shape:
            raise DimensionMismatchError(root / f"adapter_{h.task_id}_A.matx", f"adapter shape {h.shape} != base {base.shape}")
    chain = AdapterChain(base=base, history=history)
    if manifest.get("active") is not None:
        chain.attach(_load_adapter(root, manifest["active"], manifest_path))
    return chain


ACCURACY_FILE = "accuracy.json"


def save_accuracy(path, rows):
    """Store an accuracy matrix (``None`` = not evaluated) beside a chain."""
    p = Path(path) / ACCURACY_FILE
    p.write_text(json.dumps({"accuracy": rows}, indent=2) + "\n", encoding="utf-8")


def load_accuracy(path):
    """Rows saved by :func:`save_accuracy`, or ``None`` when the file is absent."""
    p = Path(path) / ACCURACY_FILE
    if not p.exists():
        return None
    try:
        rows = json.loads(p.read_text(encoding="utf-8"))["accuracy"]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise CheckpointError(p, f"bad accuracy matrix: {exc}") from None
    if not isinstance(rows, list) or not all(isinstance(r, list) for r in rows):
        raise CheckpointError(p, "accuracy must be a list of rows")
    return rows
