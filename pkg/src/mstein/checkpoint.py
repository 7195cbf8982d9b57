"""Binary checkpoint files: named flat arrays behind a fingerprint header.

Layout: a magic line, the config fingerprint line, an array-count line,
then per array a name line, a "dtype ndim dims..." line, and the raw
little-endian values. Round-trips are bitwise.
"""

from __future__ import annotations

import numpy as np

from .errors import InputError

MAGIC = b"wdm-ckpt v1\n"

_DTYPE_TAGS = {"f8": "<f8", "i8": "<i8"}


def _tag_for(arr):
    if arr.dtype == np.float64:
        return "f8"
    if arr.dtype == np.int64:
        return "i8"
    raise ValueError(f"unsupported checkpoint dtype {arr.dtype}")


def save_arrays(path, fingerprint: str, arrays: dict[str, np.ndarray]):
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(fingerprint.encode() + b"\n")
        fh.write(f"{len(arrays)}\n".encode())
        for name in sorted(arrays):
            arr = np.ascontiguousarray(arrays[name])
            tag = _tag_for(arr)
            dims = " ".join(str(s) for s in arr.shape)
            fh.write(name.encode() + b"\n")
            fh.write(f"{tag} {arr.ndim}{' ' + dims if dims else ''}\n".encode())
            fh.write(arr.astype(_DTYPE_TAGS[tag], copy=False).tobytes())


def load_arrays(path):
    """Returns (fingerprint, {name: array})."""
    try:
        with open(path, "rb") as fh:
            if fh.readline() != MAGIC:
                raise InputError(f"{path} is not a {MAGIC.strip().decode()!r} checkpoint")
            fingerprint = fh.readline().strip().decode()
            count = int(fh.readline())
            arrays = {}
            for _ in range(count):
                name = fh.readline().strip().decode()
                header = fh.readline().split()
                tag, ndim = header[0].decode(), int(header[1])
                if tag not in _DTYPE_TAGS:
                    raise InputError(f"unknown dtype tag {tag!r} in {path}")
                shape = tuple(int(x) for x in header[2 : 2 + ndim])
                dtype = np.dtype(_DTYPE_TAGS[tag])
                n_bytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
                raw = fh.read(n_bytes)
                if len(raw) != n_bytes:
                    raise InputError(f"truncated checkpoint {path} at array {name!r}")
                arrays[name] = np.frombuffer(raw, dtype=dtype).reshape(shape).copy()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    return fingerprint, arrays
