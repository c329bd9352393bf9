"""Flat binary and CSV serialisation of kernel and replica tables.

Binary layout: an 8-byte magic, a format version, an endianness tag word
(0x01020304 written natively; a byte-swapped tag on read means the file
came from a foreign-endian writer and is rejected), then ``N`` and
``radius`` as 64-bit words, the replica extension (beta, sigma) where
applicable, and the body as one row-major double array per time slice.
"""

from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np

from .kernels import KernelTable
from .replica import ReplicaTable, replica_marginals

KERNEL_MAGIC = b"CWALKTB\x00"
REPLICA_MAGIC = b"CWALKRT\x00"
ENDIAN_TAG = 0x01020304
VERSION = 1


def save_kernel_table(table: KernelTable, path) -> None:
    with open(path, "wb") as f:
        f.write(KERNEL_MAGIC)
        f.write(struct.pack("=IIQQ", VERSION, ENDIAN_TAG, table.N, table.radius))
        f.write(np.ascontiguousarray(table.values, dtype=np.float64).tobytes())


def _read_header(f, magic: bytes, extra_fmt: str = ""):
    got = f.read(len(magic))
    if got != magic:
        raise ValueError(f"bad magic {got!r}; expected {magic!r}")
    version, tag = struct.unpack("=II", f.read(8))
    if tag != ENDIAN_TAG:
        swapped = int.from_bytes(struct.pack("=I", ENDIAN_TAG)[::-1], "little")
        if tag == swapped or tag == int.from_bytes(b"\x04\x03\x02\x01", "little"):
            raise ValueError("file written with foreign endianness")
        raise ValueError(f"unrecognised endianness tag 0x{tag:08x}")
    if version != VERSION:
        raise ValueError(f"unsupported format version {version}")
    n, radius = struct.unpack("=QQ", f.read(16))
    extra = struct.unpack("=" + extra_fmt, f.read(struct.calcsize("=" + extra_fmt))) if extra_fmt else ()
    return int(n), int(radius), extra


def load_kernel_table(path) -> KernelTable:
    with open(path, "rb") as f:
        n, radius, _ = _read_header(f, KERNEL_MAGIC)
        side = 2 * radius + 1
        body = np.frombuffer(f.read(), dtype=np.float64)
    expected = (n + 1) * side * side
    if body.size != expected:
        raise ValueError(f"body has {body.size} doubles, expected {expected}")
    values = body.reshape(n + 1, side, side).copy()
    deficit = 1.0 - values.reshape(n + 1, -1).sum(axis=1)
    return KernelTable(N=n, radius=radius, values=values, truncation_deficit=deficit)


def save_replica_table(table: ReplicaTable, path) -> None:
    with open(path, "wb") as f:
        f.write(REPLICA_MAGIC)
        f.write(
            struct.pack(
                "=IIQQdd", VERSION, ENDIAN_TAG, table.N, table.radius, table.beta, table.sigma
            )
        )
        f.write(np.ascontiguousarray(table.spatial, dtype=np.float64).tobytes())


def load_replica_table(path) -> ReplicaTable:
    with open(path, "rb") as f:
        n, radius, (beta, sig) = _read_header(f, REPLICA_MAGIC, "dd")
        side = 2 * radius + 1
        body = np.frombuffer(f.read(), dtype=np.float64)
    expected = (n + 1) * side * side
    if body.size != expected:
        raise ValueError(f"body has {body.size} doubles, expected {expected}")
    spatial = body.reshape(n + 1, side, side).copy()
    marginal = replica_marginals(n, beta)
    deficit = marginal - spatial.reshape(n + 1, -1).sum(axis=1)
    return ReplicaTable(
        N=n,
        beta=beta,
        sigma=sig,
        radius=radius,
        spatial=spatial,
        marginal=marginal,
        truncation_deficit=deficit,
    )


def kernel_table_to_csv(table: KernelTable, path) -> None:
    """Long-format dump of the nonzero entries, for eyeballing."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["n", "x1", "x2", "value"])
        r = table.radius
        for n in range(table.N + 1):
            sl = table.values[n]
            for i, j in zip(*np.nonzero(sl)):
                w.writerow([n, int(i) - r, int(j) - r, repr(float(sl[i, j]))])


def replica_marginals_to_csv(table: ReplicaTable, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["n", "marginal", "truncation_deficit"])
        for n in range(table.N + 1):
            w.writerow([n, repr(float(table.marginal[n])), repr(float(table.truncation_deficit[n]))])


def ensure_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p
