"""Checkpoint and ledger I/O.

Arrays are stored as JSON objects {dtype, shape, data} with the raw bytes
base64-encoded, so a save/load round trip is bit-exact (no decimal text
round-off). All writes go through a temp file + os.replace so a crash
mid-write never leaves a truncated checkpoint behind.

JSON is always dumped with sort_keys and fixed separators: the same state
serializes to the same bytes, which lets determinism tests compare file
digests directly.
"""

from __future__ import annotations

import base64
import hashlib
import json
import os
import tempfile
from typing import Any

import numpy as np

from .errors import IngestError


def encode_array(a: np.ndarray) -> dict:
    a = np.ascontiguousarray(a)
    return {
        "dtype": str(a.dtype),
        "shape": list(a.shape),
        "data": base64.b64encode(a.tobytes()).decode("ascii"),
    }


def decode_array(doc: dict) -> np.ndarray:
    try:
        dtype = np.dtype(doc["dtype"])
        shape = tuple(int(s) for s in doc["shape"])
        raw = base64.b64decode(doc["data"])
    except (KeyError, TypeError, ValueError) as exc:
        raise IngestError(f"malformed array document: {exc}") from exc
    a = np.frombuffer(raw, dtype=dtype)
    expected = int(np.prod(shape)) if shape else 1
    if a.size != expected:
        raise IngestError(
            f"array payload has {a.size} elements, shape {shape} needs {expected}"
        )
    return a.reshape(shape).copy()


def dumps_canonical(doc: Any) -> str:
    """Deterministic JSON text for digest-stable artifacts."""
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def atomic_write_text(path: str, text: str) -> None:
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp_", suffix=".part")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_json(path: str, doc: Any) -> None:
    atomic_write_text(path, dumps_canonical(doc) + "\n")


def load_json(path: str) -> Any:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise IngestError(f"{path}: invalid JSON: {exc}") from exc


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def sha256_file(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()
