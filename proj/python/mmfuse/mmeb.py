"""Pure-Python writer and reader for MMEB records and dataset manifests.

Used by feature extractors that produce embeddings outside the C++ core.
"""

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

MAGIC = b"MMEB"
VERSION = 1
MANIFEST_VERSION = 1
LABELS = {"hc": 0, "control": 0, "mci": 1, "ad": 1, "dementia": 1, "impaired": 1}


def map_label(name):
    """Diagnostic group name to binary label; MCI and AD both count as impaired."""
    key = str(name).strip().lower()
    if key not in LABELS:
        raise ValueError(f"unknown label {name!r}")
    return LABELS[key]


def encode(label, text, chunks):
    """Bytes of one record. text has shape (d_t,), each chunk (L_i, d_a)."""
    if label not in (-1, 0, 1):
        raise ValueError(f"label must be -1, 0 or 1, got {label}")
    text = np.ascontiguousarray(text, dtype="<f4").reshape(-1)
    chunks = [np.ascontiguousarray(c, dtype="<f4") for c in chunks]
    if text.size == 0 or not chunks:
        raise ValueError("record needs a text embedding and at least one chunk")
    d_a = chunks[0].shape[1] if chunks[0].ndim == 2 else 0
    for c in chunks:
        if c.ndim != 2 or c.shape[0] < 1 or c.shape[1] != d_a or d_a == 0:
            raise ValueError("chunks must be non-empty (L, d_a) matrices of one width")
    if not np.isfinite(text).all() or not all(np.isfinite(c).all() for c in chunks):
        raise ValueError("record contains non-finite values")
    parts = [struct.pack("<4sHHiIII", MAGIC, VERSION, 0, label, text.size, d_a, len(chunks)), text.tobytes()]
    for c in chunks:
        parts.append(struct.pack("<I", c.shape[0]))
        parts.append(c.tobytes())
    return b"".join(parts)


def decode(data):
    """(label, text, chunks) from record bytes."""
    header = struct.calcsize("<4sHHiIII")
    if len(data) < header:
        raise ValueError("truncated record")
    magic, version, _flags, label, d_t, d_a, n = struct.unpack_from("<4sHHiIII", data)
    if magic != MAGIC:
        raise ValueError("bad magic")
    if version != VERSION:
        raise ValueError(f"unsupported version {version}")
    offset = header
    text = np.frombuffer(data, dtype="<f4", count=d_t, offset=offset).copy()
    offset += 4 * d_t
    chunks = []
    for _ in range(n):
        (rows,) = struct.unpack_from("<I", data, offset)
        offset += 4
        chunks.append(np.frombuffer(data, dtype="<f4", count=rows * d_a, offset=offset).reshape(rows, d_a).copy())
        offset += 4 * rows * d_a
    if offset != len(data):
        raise ValueError("trailing bytes after record")
    return label, text, chunks


def _atomic_write(path, data):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def write_record(path, label, text, chunks):
    _atomic_write(path, encode(label, text, chunks))


def read_record(path):
    return decode(Path(path).read_bytes())


def write_manifest(path, text_dim, audio_dim, utterances):
    """utterances: iterable of dicts with id, file (relative to the manifest), label, split."""
    entries = []
    for u in utterances:
        if u["split"] not in ("train", "test"):
            raise ValueError(f"split must be train or test, got {u['split']!r}")
        entries.append({"id": u["id"], "file": str(u["file"]), "label": int(u["label"]), "split": u["split"]})
    doc = {"version": MANIFEST_VERSION, "d_t": int(text_dim), "d_a": int(audio_dim), "utterances": entries}
    _atomic_write(path, (json.dumps(doc, indent=2) + "\n").encode())
