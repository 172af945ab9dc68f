"""Binary and text file formats.

``.ctvol``  magic ``CTV1``; little-endian u32 nx, ny, nz; f64 sx, sy, sz; u8 dtype
            code (0 = f32); then nx*ny*nz f32 voxels, x-fastest.
``.tkg``    magic ``TKG1``; u32 gx, gy, gz, d; then f32 tokens, token-major.
"""
import csv
import json
import struct
from pathlib import Path

import numpy as np

from .exceptions import BadMagicError, FormatError, PayloadMismatchError, TruncatedFileError
from .tokens import MaskSet, TokenGrid
from .volume import Volume

CTVOL_MAGIC = b"CTV1"
TKG_MAGIC = b"TKG1"
_CTVOL_HEADER = struct.Struct("<3I3dB")
_TKG_HEADER = struct.Struct("<4I")
DTYPE_F32 = 0


def _check_magic(buf, magic, path):
    if len(buf) < len(magic) or buf[: len(magic)] != magic:
        raise BadMagicError(f"{path}: bad magic (expected {magic!r})")


def _f32_payload(payload, expected, path):
    if len(payload) % 4:
        raise TruncatedFileError(f"{path}: truncated payload ({len(payload)} bytes is not a whole number of f32)")
    count = len(payload) // 4
    if count != expected:
        raise PayloadMismatchError(f"{path}: payload mismatch: header declares {expected} values, found {count}")
    return np.frombuffer(payload, dtype="<f4").astype(np.float32)


def write_ctvol(v, path):
    nx, ny, nz = v.dims
    with open(path, "wb") as fh:
        fh.write(CTVOL_MAGIC)
        fh.write(_CTVOL_HEADER.pack(nx, ny, nz, *v.spacing, DTYPE_F32))
        fh.write(v.flat().astype("<f4").tobytes())


def read_ctvol(path):
    buf = Path(path).read_bytes()
    _check_magic(buf, CTVOL_MAGIC, path)
    start = len(CTVOL_MAGIC)
    end = start + _CTVOL_HEADER.size
    if len(buf) < end:
        raise TruncatedFileError(f"{path}: truncated header")
    nx, ny, nz, sx, sy, sz, code = _CTVOL_HEADER.unpack(buf[start:end])
    if code != DTYPE_F32:
        raise FormatError(f"{path}: unsupported dtype code {code}")
    flat = _f32_payload(buf[end:], nx * ny * nz, path)
    return Volume.from_flat(flat, (nx, ny, nz), (sx, sy, sz))


def read_raw_volume(raw_path, descriptor_path=None):
    """Read a headerless little-endian f32 array described by a JSON sidecar ``{dims, spacing}``."""
    raw_path = Path(raw_path)
    descriptor_path = Path(descriptor_path) if descriptor_path else raw_path.with_suffix(".json")
    try:
        desc = json.loads(descriptor_path.read_text())
        dims, spacing = desc["dims"], desc["spacing"]
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{descriptor_path}: malformed descriptor ({exc})") from exc
    n = int(np.prod(dims))
    flat = _f32_payload(raw_path.read_bytes(), n, raw_path)
    return Volume.from_flat(flat, dims, spacing)


def load_volume(path):
    path = Path(path)
    if path.suffix == ".ctvol":
        return read_ctvol(path)
    return read_raw_volume(path)


def write_tkg(g, path):
    with open(path, "wb") as fh:
        fh.write(TKG_MAGIC)
        fh.write(_TKG_HEADER.pack(*g.grid_dims, g.token_dim))
        fh.write(np.ascontiguousarray(g.data, dtype="<f4").tobytes())


def read_tkg(path):
    buf = Path(path).read_bytes()
    _check_magic(buf, TKG_MAGIC, path)
    start = len(TKG_MAGIC)
    end = start + _TKG_HEADER.size
    if len(buf) < end:
        raise TruncatedFileError(f"{path}: truncated header")
    gx, gy, gz, d = _TKG_HEADER.unpack(buf[start:end])
    n = gx * gy * gz
    flat = _f32_payload(buf[end:], n * d, path)
    return TokenGrid((gx, gy, gz), flat.reshape(n, d))


def write_mask(mask, path):
    Path(path).write_text(json.dumps({"n_tokens": mask.n_tokens, "masked_indices": mask.masked_indices.tolist()}))


def read_mask(path, n_tokens=None):
    """Read a mask written by :func:`write_mask`, or a bare JSON index array plus ``n_tokens``."""
    obj = json.loads(Path(path).read_text())
    if isinstance(obj, list):
        if n_tokens is None:
            raise FormatError(f"{path}: bare index array needs n_tokens")
        return MaskSet(int(n_tokens), obj)
    return MaskSet(int(obj["n_tokens"]), obj["masked_indices"])


def dumps_json(obj):
    """Deterministic JSON text (sorted keys, trailing newline)."""
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def read_jsonl(path):
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
    return rows


def write_jsonl(rows, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def write_csv(rows, path, fieldnames):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _fmt(row.get(k)) for k in fieldnames})


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return value
