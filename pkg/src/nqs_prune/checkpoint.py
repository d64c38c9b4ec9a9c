"""Binary checkpoint format ("NQSP", version 1).

Layout, all integers little-endian:

    magic b"NQSP" | uint32 version | uint32 header_len | header JSON
    | theta as little-endian float64 in layout order
    | mask bit-packed LSB-first
    | uint32 extra_len | extra JSON

The header carries the architecture descriptor, lattice descriptor,
n_init and the unmasked count; `extra` holds run bookkeeping such as
stream counters and the config hash.  Writes are atomic (tmp + rename)
and byte-stable for identical contents.
"""

from __future__ import annotations

import json
import os
import struct

import numpy as np

from .ansatz import ArchitectureSpec, FeedForward, MaskedAnsatz, ShallowConv
from .lattice import SquareLattice, ToricLattice

MAGIC = b"NQSP"
VERSION = 1


def lattice_descriptor(lattice) -> dict:
    if isinstance(lattice, ToricLattice):
        return {"kind": "toric", "L": lattice.L}
    return {"kind": "square", "L": lattice.L, "boundary": lattice.boundary}


def lattice_from_descriptor(d: dict):
    if d["kind"] == "toric":
        return ToricLattice(d["L"])
    if d["kind"] == "square":
        return SquareLattice(d["L"], d.get("boundary", "open"))
    raise ValueError(f"unknown lattice kind {d.get('kind')!r}")


def arch_descriptor(arch: ArchitectureSpec) -> dict:
    if isinstance(arch, FeedForward):
        return {"kind": "ffnn", "alpha": arch.alpha}
    return {"kind": "cnn", "n_f": arch.n_f, "k_d": arch.k_d}


def arch_from_descriptor(d: dict, lattice) -> ArchitectureSpec:
    if d["kind"] == "ffnn":
        return FeedForward(lattice, d["alpha"])
    if d["kind"] == "cnn":
        return ShallowConv(lattice, d["n_f"], d.get("k_d", 3))
    raise ValueError(f"unknown architecture kind {d.get('kind')!r}")


def save_checkpoint(path, ansatz: MaskedAnsatz, extra: dict | None = None) -> None:
    header = {
        "architecture": arch_descriptor(ansatz.arch),
        "lattice": lattice_descriptor(ansatz.arch.lattice),
        "n_init": ansatz.n_init,
        "ones": ansatz.ones,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    extra_bytes = json.dumps(extra or {}, sort_keys=True).encode("utf-8")
    payload = b"".join(
        [
            MAGIC,
            struct.pack("<II", VERSION, len(header_bytes)),
            header_bytes,
            ansatz.theta.astype("<f8").tobytes(),
            np.packbits(ansatz.mask, bitorder="little").tobytes(),
            struct.pack("<I", len(extra_bytes)),
            extra_bytes,
        ]
    )
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as f:
        f.write(payload)
        f.flush()
        os.fsync(f.fileno())
    os.replace(tmp, path)


def load_checkpoint(path) -> tuple[MaskedAnsatz, dict]:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != MAGIC:
        raise ValueError(f"{path}: not an NQSP checkpoint")
    version, header_len = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    off = 12
    header = json.loads(blob[off : off + header_len].decode("utf-8"))
    off += header_len
    n_init = header["n_init"]
    theta = np.frombuffer(blob, dtype="<f8", count=n_init, offset=off).astype(np.float64)
    off += 8 * n_init
    n_mask_bytes = (n_init + 7) // 8
    mask = np.unpackbits(np.frombuffer(blob, dtype=np.uint8, count=n_mask_bytes, offset=off), bitorder="little")[:n_init].astype(bool)
    off += n_mask_bytes
    (extra_len,) = struct.unpack_from("<I", blob, off)
    extra = json.loads(blob[off + 4 : off + 4 + extra_len].decode("utf-8"))
    lattice = lattice_from_descriptor(header["lattice"])
    arch = arch_from_descriptor(header["architecture"], lattice)
    ansatz = MaskedAnsatz(arch, theta, mask)
    if ansatz.ones != header["ones"]:
        raise ValueError(f"{path}: mask popcount {ansatz.ones} != header ones {header['ones']}")
    return ansatz, extra
