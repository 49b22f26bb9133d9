"""Small file helpers: atomic writes and 17-significant-digit CSV."""

import hashlib
import json
import os
import tempfile

import numpy as np

FLOAT_FMT = "%.17g"


def atomic_write_text(path, text):
    """Write ``text`` to ``path`` via a temp file in the same directory + rename."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def format_row(values):
    return ",".join(FLOAT_FMT % v for v in values)


def csv_text(header, rows, comments=()):
    """Render a float matrix as CSV text with optional ``#`` comment lines on top."""
    lines = [f"# {c}" for c in comments]
    lines.append(",".join(header))
    rows = np.asarray(rows, dtype=float)
    if rows.ndim == 1:
        rows = rows[:, None]
    lines.extend(format_row(r) for r in rows)
    return "\n".join(lines) + "\n"


def write_csv(path, header, rows, comments=()):
    atomic_write_text(path, csv_text(header, rows, comments))


def read_csv(path):
    """Read a CSV written by :func:`write_csv`. Returns ``(header, matrix, comments)``."""
    comments = []
    header = None
    data = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                comments.append(line[1:].strip())
                continue
            if header is None:
                header = [h.strip() for h in line.split(",")]
                continue
            data.append([float(v) for v in line.split(",")])
    if header is None:
        raise ValueError(f"{path}: no header row")
    matrix = np.array(data, dtype=float).reshape(len(data), len(header))
    return header, matrix, comments


def _finite_or_none(obj):
    if isinstance(obj, float):
        return obj if np.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _finite_or_none(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite_or_none(v) for v in obj]
    if isinstance(obj, np.generic):
        return _finite_or_none(obj.item())
    return obj


def write_json(path, obj):
    """Strict JSON: non-finite floats are written as ``null``."""
    atomic_write_text(path, json.dumps(_finite_or_none(obj), indent=2, sort_keys=True, allow_nan=False) + "\n")


def sha256_of(obj):
    payload = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(payload).hexdigest()


def file_sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()
