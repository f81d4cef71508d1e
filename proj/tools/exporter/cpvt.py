"""Reader and writer for CPVT tensor archives (see docs/formats.md)."""

import struct
from pathlib import Path

import numpy as np

MAGIC = b"CPVT"
VERSION = 1
DTYPE_F64 = 1


def encode(entries):
    """entries: iterable of (name, array). Written in sorted name order."""
    entries = sorted(((n, np.ascontiguousarray(a, dtype="<f8")) for n, a in entries), key=lambda e: e[0])
    names = [n for n, _ in entries]
    if len(set(names)) != len(names):
        raise ValueError("duplicate archive entry names")
    header = bytearray(MAGIC)
    header += struct.pack("<HHI", VERSION, 0, len(entries))
    payload = bytearray()
    for name, array in entries:
        raw = name.encode("utf-8")
        if not raw:
            raise ValueError("empty archive entry name")
        header += struct.pack("<H", len(raw)) + raw
        header += struct.pack("<BB", DTYPE_F64, array.ndim)
        header += struct.pack("<%dQ" % array.ndim, *array.shape)
        header += struct.pack("<Q", len(payload))
        payload += array.tobytes()
    header += struct.pack("<Q", len(payload))
    return bytes(header + payload)


def decode(data):
    if data[:4] != MAGIC:
        raise ValueError("bad magic")
    version, _, count = struct.unpack_from("<HHI", data, 4)
    if version != VERSION:
        raise ValueError(f"unsupported version {version}")
    pos = 12
    table = []
    for _ in range(count):
        (length,) = struct.unpack_from("<H", data, pos)
        pos += 2
        name = data[pos:pos + length].decode("utf-8")
        pos += length
        _, rank = struct.unpack_from("<BB", data, pos)
        pos += 2
        shape = struct.unpack_from("<%dQ" % rank, data, pos)
        pos += 8 * rank
        (offset,) = struct.unpack_from("<Q", data, pos)
        pos += 8
        table.append((name, shape, offset))
    (size,) = struct.unpack_from("<Q", data, pos)
    payload = data[pos + 8:pos + 8 + size]
    out = {}
    for name, shape, offset in table:
        n = int(np.prod(shape)) if shape else 1
        out[name] = np.frombuffer(payload, dtype="<f8", count=n, offset=offset).reshape(shape).copy()
    return out


def write(path, entries):
    data = encode(entries)
    Path(path).write_bytes(data)
    return data


def read(path):
    return decode(Path(path).read_bytes())
