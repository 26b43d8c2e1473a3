"""Binary value-function files.

Layout (all little-endian)::

    b"FTVF" | u32 version | u64 header length | header JSON (sorted keys, UTF-8)
    | K x N float64 node values, row-major | 32-byte SHA-256 of everything before it

The header binds the file to the model parameters that produced it through
``param_hash``.
"""
import hashlib
import json
import struct

import numpy as np

from .errors import CorruptFile, HashMismatch
from .grid import Grid
from .hjsolver import ValueFunction, trusted_mask

MAGIC = b"FTVF"
VERSION = 1
_PREFIX = struct.Struct("<4sIQ")
_DIGEST = 32
_CHUNK = 1 << 20


def canonical_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def param_hash(model, params, subsystem):
    """SHA-256 over the canonical JSON of model name, parameters and subsystem name."""
    doc = {"model": model, "params": {k: params[k] for k in sorted(params)},
           "subsystem": subsystem}
    return hashlib.sha256(canonical_json(doc).encode()).hexdigest()


def _header(vf, model, params, subsystem, eps, untrusted_cells):
    return {
        "model": model,
        "subsystem": subsystem,
        "param_hash": param_hash(model, params, subsystem),
        "params": {k: params[k] for k in sorted(params)},
        "grid": vf.grid.spec(),
        "times": [float(t) for t in vf.times],
        "converged": bool(vf.converged),
        "vmin": float(vf.vmin),
        "eps": None if eps is None else float(eps),
        "rel_name": vf.rel_name,
        "error_name": vf.error_name,
        "untrusted_cells": int(untrusted_cells),
        "steps": int(vf.steps),
        "wall_time": float(vf.wall_time),
        "meta": vf.meta,
    }


def dumps(vf, model, params, subsystem, eps=None, untrusted_cells=2):
    head = canonical_json(_header(vf, model, params, subsystem, eps, untrusted_cells)).encode()
    body = _PREFIX.pack(MAGIC, VERSION, len(head)) + head
    body += np.ascontiguousarray(vf.values, dtype="<f8").tobytes()
    return body + hashlib.sha256(body).digest()


def save(path, vf, model, params, subsystem, eps=None, untrusted_cells=2):
    data = dumps(vf, model, params, subsystem, eps, untrusted_cells)
    with open(path, "wb") as fh:
        fh.write(data)
    return len(data)


def _read_prefix(fh):
    raw = fh.read(_PREFIX.size)
    if len(raw) < _PREFIX.size:
        raise CorruptFile("file is shorter than its fixed prefix")
    magic, version, hlen = _PREFIX.unpack(raw)
    if magic != MAGIC:
        raise CorruptFile(f"bad magic {magic!r}")
    if version != VERSION:
        raise CorruptFile(f"unsupported format version {version}")
    raw = fh.read(hlen)
    if len(raw) != hlen:
        raise CorruptFile("truncated header")
    try:
        header = json.loads(raw.decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptFile(f"unreadable header: {exc}") from None
    return header, _PREFIX.size + hlen


def _sizes(header):
    n = int(np.prod(header["grid"]["n"]))
    return len(header["times"]), n


def verify(path):
    """Stream the file once, checking length and checksum; returns the header."""
    with open(path, "rb") as fh:
        header, offset = _read_prefix(fh)
        k, n = _sizes(header)
        expected = offset + 8 * k * n + _DIGEST
        fh.seek(0, 2)
        size = fh.tell()
        if size != expected:
            raise CorruptFile(f"file has {size} bytes, expected {expected}")
        fh.seek(0)
        h = hashlib.sha256()
        remaining = size - _DIGEST
        while remaining > 0:
            chunk = fh.read(min(_CHUNK, remaining))
            h.update(chunk)
            remaining -= len(chunk)
        if fh.read(_DIGEST) != h.digest():
            raise CorruptFile("checksum mismatch")
    return header


def read_header(path):
    with open(path, "rb") as fh:
        return _read_prefix(fh)[0]


def iter_snapshots(path):
    """Yield ``(time, values)`` one snapshot at a time after verifying the file."""
    header = verify(path)
    shape = tuple(header["grid"]["n"])
    with open(path, "rb") as fh:
        _, offset = _read_prefix(fh)
        k, n = _sizes(header)
        for i in range(k):
            fh.seek(offset + 8 * n * i)
            vals = np.frombuffer(fh.read(8 * n), dtype="<f8").reshape(shape)
            yield header["times"][i], vals


def _grid(spec):
    return Grid(tuple(spec["lo"]), tuple(spec["hi"]), tuple(spec["n"]), tuple(spec["periodic"]))


def load(path, expect_hash=None):
    """Return ``(ValueFunction, header)``; refuses files bound to other parameters."""
    header = verify(path)
    if expect_hash is not None and header["param_hash"] != expect_hash:
        raise HashMismatch(
            f"{path}: value function was computed for parameters {header['param_hash'][:12]}..., "
            f"scenario needs {expect_hash[:12]}...")
    grid = _grid(header["grid"])
    k, n = _sizes(header)
    with open(path, "rb") as fh:
        _, offset = _read_prefix(fh)
        fh.seek(offset)
        vals = np.frombuffer(fh.read(8 * k * n), dtype="<f8").astype(float)
    vf = ValueFunction(grid, np.array(header["times"]), vals, header["converged"], header["vmin"],
                       header["rel_name"], header["error_name"],
                       trusted_mask(grid, header["untrusted_cells"]), header["steps"],
                       header["wall_time"], header["meta"])
    return vf, header


def resave(path_in, path_out):
    """Load and write again; used to check that the format round-trips byte for byte."""
    vf, h = load(path_in)
    return save(path_out, vf, h["model"], h["params"], h["subsystem"], h["eps"],
                h["untrusted_cells"])
