"""Single-file weights format.

Layout::

    UNCTRACK-WEIGHTS 1
    <n_arrays>
    <name> <d0>x<d1>x... <count>      (one line per array, names sorted)
    END
    <little-endian float64 payload, arrays concatenated in header order>

A scalar array has the shape token ``scalar``.
"""

from __future__ import annotations

import numpy as np

from ..exceptions import InputError
from ..numerics.params import ParamStore

MAGIC = "UNCTRACK-WEIGHTS 1"


def dumps(params: ParamStore) -> bytes:
    lines = [MAGIC, str(len(params))]
    payload = []
    for name in params:
        arr = params[name].data
        shape = "x".join(str(d) for d in arr.shape) or "scalar"
        lines.append(f"{name} {shape} {arr.size}")
        payload.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    lines.append("END")
    return ("\n".join(lines) + "\n").encode("ascii") + b"".join(payload)


def loads(blob: bytes) -> ParamStore:
    header_end = blob.find(b"\nEND\n")
    if not blob.startswith(MAGIC.encode()) or header_end < 0:
        raise InputError("not an UNCTRACK weights file")
    lines = blob[:header_end].decode("ascii").split("\n")
    count = int(lines[1])
    entries = lines[2:]
    if len(entries) != count:
        raise InputError(f"header lists {len(entries)} arrays, expected {count}")
    offset = header_end + len(b"\nEND\n")
    store = ParamStore()
    for line in entries:
        name, shape_tok, n = line.split(" ")
        n = int(n)
        shape = () if shape_tok == "scalar" else tuple(int(d) for d in shape_tok.split("x"))
        end = offset + 8 * n
        if end > len(blob):
            raise InputError(f"weights payload truncated at {name}")
        store[name] = np.frombuffer(blob[offset:end], dtype="<f8").reshape(shape).astype(np.float64)
        offset = end
    if offset != len(blob):
        raise InputError("trailing bytes after weights payload")
    return store


def save(params: ParamStore, path):
    with open(path, "wb") as fh:
        fh.write(dumps(params))


def load(path) -> ParamStore:
    try:
        with open(path, "rb") as fh:
            return loads(fh.read())
    except OSError as err:
        raise InputError(f"cannot read weights file {path}: {err}") from err
