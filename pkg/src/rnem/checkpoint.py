"""Checkpoint files: named float64 arrays with bit-exact round-trips.

Layout (all integers unsigned 64-bit little-endian):

    magic "RNEMCK1\\0"
    entry count
    per entry: name length, UTF-8 name, rank, dims, raw little-endian
               float64 payload

Text metadata (model configuration, provenance) rides along as entries whose
payload is the UTF-8 text zero-padded to a multiple of 8 bytes and
reinterpreted as float64 words; a companion "<name>#bytes" scalar entry
records the true byte length. `save`/`load` handle the encoding.
"""

import struct

import numpy as np

MAGIC = b"RNEMCK1\x00"
_TEXT_SUFFIX = "#bytes"


class CheckpointFormatError(ValueError):
    """Malformed checkpoint file."""


def _write_entry(fh, name, arr):
    nb = name.encode("utf-8")
    fh.write(struct.pack("<Q", len(nb)))
    fh.write(nb)
    fh.write(struct.pack("<Q", arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
    fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def save(path, arrays, text=None):
    """Write named arrays (and optional {name: str} text entries)."""
    entries = [(k, np.asarray(v, dtype=np.float64)) for k, v in arrays.items()]
    for name, s in (text or {}).items():
        raw = s.encode("utf-8")
        padded = raw + b"\x00" * (-len(raw) % 8)
        entries.append((name, np.frombuffer(padded, dtype="<f8")))
        entries.append((name + _TEXT_SUFFIX, np.array(float(len(raw)))))
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(entries)))
        for name, arr in entries:
            _write_entry(fh, name, arr)


def load(path):
    """Read a checkpoint; returns (arrays, text) dicts."""
    with open(path, "rb") as fh:
        head = fh.read(8)
        if head != MAGIC:
            raise CheckpointFormatError(f"bad checkpoint magic in {path}")
        (count,) = struct.unpack("<Q", _take(fh, 8))
        raw = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<Q", _take(fh, 8))
            name = _take(fh, nlen).decode("utf-8")
            (rank,) = struct.unpack("<Q", _take(fh, 8))
            dims = struct.unpack(f"<{rank}Q", _take(fh, 8 * rank)) if rank else ()
            n = 1
            for d in dims:
                n *= d
            arr = np.frombuffer(_take(fh, 8 * n), dtype="<f8").reshape(dims)
            raw[name] = arr.astype(np.float64)
        if fh.read(1):
            raise CheckpointFormatError(f"trailing bytes after {count} entries in {path}")
    arrays, text = {}, {}
    for name, arr in raw.items():
        if name.endswith(_TEXT_SUFFIX):
            continue
        if name + _TEXT_SUFFIX in raw:
            nbytes = int(raw[name + _TEXT_SUFFIX])
            text[name] = arr.tobytes()[:nbytes].decode("utf-8")
        else:
            arrays[name] = arr
    return arrays, text


def _take(fh, n):
    data = fh.read(n)
    if len(data) != n:
        raise CheckpointFormatError("truncated checkpoint file")
    return data
