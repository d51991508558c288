"""PWPS binary dumps for grid fields, phase-space functions and particles.

Layout (little-endian)::

    b"PWPS"  uint32 version  uint32 d  uint32 n[d]  float64 L[d]
    uint32 components  uint32 flags
    [flags & ORIGIN]  float64 origin[d]
    [flags & PHASE]   uint32 n_xi[d]  float64 xi_origin[d]  float64 xi_L[d]  float64 hbar
    [flags & META]    uint32 length  UTF-8 JSON metadata (tool version, config hash)
    payload: float64, row-major (last axis fastest), re/im interleaved when complex

Particle files use the magic ``b"PWPP"`` followed by ``uint32 version,
uint32 d, uint64 N, uint32 flags``, then ``L[d]`` and ``origin[d]`` when
periodic (flag 1), the metadata block when flag 2 is set, then the ``x``,
``p`` and ``w`` arrays as float64.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .spectral import Grid, make_grid

MAGIC = b"PWPS"
PARTICLE_MAGIC = b"PWPP"
VERSION = 1

COMPLEX = 1
PHASE = 2
ORIGIN = 4
META = 8


class FormatError(ValueError):
    """Malformed dump file."""


@dataclass
class Dump:
    """Contents of a PWPS file."""

    grid: Grid
    values: np.ndarray
    xi_grid: Optional[Grid] = None
    hbar: Optional[float] = None
    meta: Optional[dict] = None


def _meta_block(meta: Optional[dict]) -> bytes:
    if meta is None:
        return b""
    blob = json.dumps(meta, sort_keys=True).encode()
    return struct.pack("<I", len(blob)) + blob


def _read_meta(data: bytes, off: int):
    (size,) = struct.unpack_from("<I", data, off)
    off += 4
    return json.loads(data[off : off + size].decode()), off + size


def _header(grid: Grid, components: int, flags: int, xi_grid: Optional[Grid], hbar: Optional[float]) -> bytes:
    d = grid.d
    out = [MAGIC, struct.pack("<II", VERSION, d), struct.pack(f"<{d}I", *grid.n),
           struct.pack(f"<{d}d", *grid.L), struct.pack("<II", components, flags),
           struct.pack(f"<{d}d", *grid.origin)]
    if xi_grid is not None:
        out += [struct.pack(f"<{d}I", *xi_grid.n), struct.pack(f"<{d}d", *xi_grid.origin),
                struct.pack(f"<{d}d", *xi_grid.L), struct.pack("<d", float(hbar))]
    return b"".join(out)


def write_field(path, grid: Grid, values, xi_grid: Optional[Grid] = None, hbar: Optional[float] = None,
                meta: Optional[dict] = None) -> None:
    """Write ``values`` of shape ``(components..., *grid.shape[, *xi_grid.shape])``.

    Leading axes are flattened into the component count; ``meta`` is stored
    as a JSON block in the header.
    """
    values = np.asarray(values)
    spatial = grid.shape + (xi_grid.shape if xi_grid is not None else ())
    if values.shape[values.ndim - len(spatial):] != spatial:
        raise FormatError(f"values shape {values.shape} does not end with grid shape {spatial}")
    comps = int(np.prod(values.shape[: values.ndim - len(spatial)], dtype=int))
    is_complex = np.iscomplexobj(values)
    flags = ORIGIN | (COMPLEX if is_complex else 0) | (PHASE if xi_grid is not None else 0)
    flags |= META if meta is not None else 0
    head = _header(grid, comps, flags, xi_grid, hbar) + _meta_block(meta)
    if is_complex:
        payload = np.ascontiguousarray(values.astype("<c16")).view("<f8")
    else:
        payload = np.ascontiguousarray(values, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(head)
        fh.write(payload.tobytes())


def read_field(path) -> Dump:
    """Read a PWPS file written by :func:`write_field`."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != MAGIC:
        raise FormatError("not a PWPS file")
    off = 4
    version, d = struct.unpack_from("<II", data, off)
    off += 8
    if version != VERSION:
        raise FormatError(f"unsupported PWPS version {version}")
    n = struct.unpack_from(f"<{d}I", data, off)
    off += 4 * d
    L = struct.unpack_from(f"<{d}d", data, off)
    off += 8 * d
    comps, flags = struct.unpack_from("<II", data, off)
    off += 8
    origin = None
    if flags & ORIGIN:
        origin = struct.unpack_from(f"<{d}d", data, off)
        off += 8 * d
    grid = make_grid(d, n, L, origin)
    xi_grid, hbar = None, None
    if flags & PHASE:
        nx = struct.unpack_from(f"<{d}I", data, off)
        off += 4 * d
        xo = struct.unpack_from(f"<{d}d", data, off)
        off += 8 * d
        xl = struct.unpack_from(f"<{d}d", data, off)
        off += 8 * d
        (hbar,) = struct.unpack_from("<d", data, off)
        off += 8
        xi_grid = make_grid(d, nx, xl, xo)
    meta = None
    if flags & META:
        meta, off = _read_meta(data, off)
    spatial = grid.shape + (xi_grid.shape if xi_grid is not None else ())
    arr = np.frombuffer(data, dtype="<f8", offset=off)
    if flags & COMPLEX:
        arr = arr.view("<c16")
    expected = comps * int(np.prod(spatial))
    if arr.size != expected:
        raise FormatError(f"payload has {arr.size} values, expected {expected}")
    shape = spatial if comps == 1 else (comps,) + spatial
    return Dump(grid, arr.reshape(shape).copy(), xi_grid, hbar, meta)


def write_particles(path, particles, meta: Optional[dict] = None) -> None:
    """Write a :class:`~paulilab.kinetic.ParticleEnsemble`."""
    d = particles.d
    periodic = particles.box is not None
    flags = (1 if periodic else 0) | (2 if meta is not None else 0)
    parts = [PARTICLE_MAGIC, struct.pack("<IIQI", VERSION, d, particles.N, flags)]
    if periodic:
        parts += [struct.pack(f"<{d}d", *particles.box), struct.pack(f"<{d}d", *particles.origin)]
    parts.append(_meta_block(meta))
    for arr in (particles.x, particles.p, particles.w):
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def read_particles(path, with_meta: bool = False):
    """Read a particle file written by :func:`write_particles`.

    Returns the ensemble, or ``(ensemble, meta)`` when ``with_meta`` is set.
    """
    from .kinetic import ParticleEnsemble

    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != PARTICLE_MAGIC:
        raise FormatError("not a PWPS particle file")
    version, d, N, flags = struct.unpack_from("<IIQI", data, 4)
    periodic = flags & 1
    if version != VERSION:
        raise FormatError(f"unsupported particle file version {version}")
    off = 4 + struct.calcsize("<IIQI")
    box = origin = None
    if periodic:
        box = struct.unpack_from(f"<{d}d", data, off)
        off += 8 * d
        origin = struct.unpack_from(f"<{d}d", data, off)
        off += 8 * d
    meta = None
    if flags & 2:
        meta, off = _read_meta(data, off)
    arr = np.frombuffer(data, dtype="<f8", offset=off)
    if arr.size != N * (2 * d + 1):
        raise FormatError("particle payload size mismatch")
    x = arr[: N * d].reshape(N, d).copy()
    p = arr[N * d : 2 * N * d].reshape(N, d).copy()
    w = arr[2 * N * d :].copy()
    ens = ParticleEnsemble(x, p, w, box, origin)
    return (ens, meta) if with_meta else ens
