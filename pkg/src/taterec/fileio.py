"""Little-endian binary formats for fields, sinograms and cached bases.

Layouts (all integers unsigned, all reals f64):

* ``TATF``: magic, version u16, dim u16, counts u32[dim], origin f64[dim],
  spacing f64[dim], row-major payload, CRC32 of the payload bytes.
* ``TATS``: magic, version u16, dim u16, detectors u32, steps u32, dt f64,
  per detector (position[dim], normal[dim], weight), detector-major payload,
  CRC32 of everything between the magic and the checksum.
* ``TATB``: magic, version u16, dim u16, trace-scheme u16, reserved u16,
  domain lower/upper f64[dim], grid counts u32[dim], origin f64[dim], spacing
  f64[dim], speed CRC32 u32, K u32, detectors u32, detector block as in TATS,
  sound speed on B's nodes f64[nodes], then per mode (lambda, psi[nodes], trace[detectors]);
  trailing CRC32 of everything between the magic and the checksum.

Readers raise :class:`FormatError` on any structural problem.
"""

from __future__ import annotations

import os
import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError
from .fields import DomainSpec, Grid, ObservationSurface, ScalarField, Sinogram

__all__ = [
    "write_field",
    "read_field",
    "write_sinogram",
    "read_sinogram",
    "write_basis_file",
    "read_basis_file",
    "crc32",
    "sha256_file",
]

VERSION = 1
_F64 = np.dtype("<f8")


def crc32(data: bytes) -> int:
    return zlib.crc32(data) & 0xFFFFFFFF


def sha256_file(path: str | os.PathLike) -> str:
    import hashlib

    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _f64_bytes(a: np.ndarray) -> bytes:
    a = np.ascontiguousarray(a, dtype=np.float64)
    if not np.all(np.isfinite(a)):
        raise ConfigError("refusing to write non-finite values")
    return a.astype(_F64, copy=False).tobytes()


class _Reader:
    def __init__(self, data: bytes, what: str) -> None:
        self.data, self.pos, self.what = data, 0, what

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self.data):
            raise FormatError(f"malformed payload: {self.what} truncated at byte {self.pos}")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        size = struct.calcsize(fmt)
        return struct.unpack(fmt, self.take(size))

    def f64(self, n: int) -> np.ndarray:
        return np.frombuffer(self.take(8 * n), dtype=_F64).astype(np.float64)

    def done(self) -> None:
        if self.pos != len(self.data):
            raise FormatError(f"malformed payload: {len(self.data) - self.pos} trailing bytes in {self.what}")


def _open(path, magic: bytes) -> _Reader:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from exc
    r = _Reader(data, str(path))
    if r.take(4) != magic:
        raise FormatError(f"malformed header: {path} is not a {magic.decode()} file")
    (version,) = r.unpack("<H")
    if version != VERSION:
        raise FormatError(f"unsupported {magic.decode()} version {version}")
    return r


def _write(path, blob: bytes) -> None:
    try:
        Path(path).write_bytes(blob)
    except OSError as exc:
        raise FormatError(f"cannot write {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# fields
# ---------------------------------------------------------------------------


def write_field(path, field: ScalarField) -> None:
    g = field.grid
    payload = _f64_bytes(field.values)
    head = b"TATF" + struct.pack("<HH", VERSION, g.dim)
    head += struct.pack(f"<{g.dim}I", *g.counts)
    head += struct.pack(f"<{g.dim}d", *g.origin) + struct.pack(f"<{g.dim}d", *g.spacing)
    _write(path, head + payload + struct.pack("<I", crc32(payload)))


def read_field(path) -> ScalarField:
    r = _open(path, b"TATF")
    (dim,) = r.unpack("<H")
    if dim not in (1, 2):
        raise FormatError(f"malformed header: dimension {dim}")
    counts = r.unpack(f"<{dim}I")
    origin = r.unpack(f"<{dim}d")
    spacing = r.unpack(f"<{dim}d")
    n = int(np.prod(counts))
    expected = 8 * n + 4
    if len(r.data) - r.pos != expected:
        raise FormatError(
            f"malformed payload: header declares {n} values, file holds {(len(r.data) - r.pos - 4) / 8:g}"
        )
    raw = r.take(8 * n)
    (crc,) = r.unpack("<I")
    r.done()
    if crc != crc32(raw):
        raise FormatError(f"checksum mismatch in {path}")
    try:
        grid = Grid(origin, spacing, counts)
    except ConfigError as exc:
        raise FormatError(f"malformed header: {exc}") from exc
    return ScalarField(grid, np.frombuffer(raw, dtype=_F64).astype(np.float64).reshape(counts))


# ---------------------------------------------------------------------------
# sinograms
# ---------------------------------------------------------------------------


def _detector_block(surface: ObservationSurface) -> bytes:
    block = np.column_stack([surface.positions, surface.normals, surface.weights[:, None]])
    return _f64_bytes(block)


def _surface_from_block(block: np.ndarray, dim: int) -> ObservationSurface:
    pos, nrm, w = block[:, :dim], block[:, dim : 2 * dim], block[:, 2 * dim]
    if dim == 1:
        domain = DomainSpec((pos[:, 0].min(),), (pos[:, 0].max(),))
    else:
        lo = [pos[np.abs(nrm[:, a] + 1) < 1e-12, a] for a in range(2)]
        hi = [pos[np.abs(nrm[:, a] - 1) < 1e-12, a] for a in range(2)]
        if any(len(v) == 0 for v in lo + hi):
            raise FormatError("malformed payload: detector block does not describe a rectangle")
        domain = DomainSpec((lo[0][0], lo[1][0]), (hi[0][0], hi[1][0]))
    try:
        return ObservationSurface(domain, pos, nrm, w)
    except ConfigError as exc:
        raise FormatError(f"malformed payload: {exc}") from exc


def write_sinogram(path, sino: Sinogram) -> None:
    s = sino.surface
    dim = s.domain.dim
    body = struct.pack("<HIId", dim, s.count, sino.steps, sino.dt)
    body += _detector_block(s) + _f64_bytes(sino.values)
    _write(path, b"TATS" + struct.pack("<H", VERSION) + body + struct.pack("<I", crc32(struct.pack("<H", VERSION) + body)))


def read_sinogram(path) -> Sinogram:
    r = _open(path, b"TATS")
    dim, n_det, n_steps, dt = r.unpack("<HIId")
    if dim not in (1, 2):
        raise FormatError(f"malformed header: dimension {dim}")
    need = 8 * n_det * (2 * dim + 1) + 8 * n_det * n_steps + 4
    if len(r.data) - r.pos != need:
        raise FormatError("malformed payload: header counts do not match payload length")
    block = r.f64(n_det * (2 * dim + 1)).reshape(n_det, 2 * dim + 1)
    values = r.f64(n_det * n_steps).reshape(n_det, n_steps)
    end = r.pos
    (crc,) = r.unpack("<I")
    r.done()
    if crc != crc32(r.data[4:end]):
        raise FormatError(f"checksum mismatch in {path}")
    surface = _surface_from_block(block, dim)
    try:
        return Sinogram(surface, dt, values)
    except ConfigError as exc:
        raise FormatError(f"malformed payload: {exc}") from exc


# ---------------------------------------------------------------------------
# basis cache (raw arrays; spectral builds the SpectralBasis around them)
# ---------------------------------------------------------------------------

TRACE_CODES = {"exact": 0, "green": 1, "second_order": 2}


def write_basis_file(
    path,
    *,
    domain: DomainSpec,
    grid: Grid,
    surface: ObservationSurface,
    speed_crc: int,
    scheme: str,
    speed_values: np.ndarray,
    lam: np.ndarray,
    modes: np.ndarray,
    traces: np.ndarray,
) -> None:
    d = grid.dim
    K = len(lam)
    body = struct.pack("<HHHH", VERSION, d, TRACE_CODES[scheme], 0)
    body += struct.pack(f"<{d}d", *domain.lower) + struct.pack(f"<{d}d", *domain.upper)
    body += struct.pack(f"<{d}I", *grid.counts)
    body += struct.pack(f"<{d}d", *grid.origin) + struct.pack(f"<{d}d", *grid.spacing)
    body += struct.pack("<III", speed_crc & 0xFFFFFFFF, K, surface.count)
    body += _detector_block(surface) + _f64_bytes(speed_values)
    modes = modes.reshape(K, -1)
    for k in range(K):
        body += _f64_bytes(np.array([lam[k]])) + _f64_bytes(modes[k]) + _f64_bytes(traces[k])
    _write(path, b"TATB" + body + struct.pack("<I", crc32(body)))


def read_basis_file(path) -> dict:
    r = _open(path, b"TATB")
    d, code, _ = r.unpack("<HHH")
    if d not in (1, 2):
        raise FormatError(f"malformed header: dimension {d}")
    lower, upper = r.unpack(f"<{d}d"), r.unpack(f"<{d}d")
    counts = r.unpack(f"<{d}I")
    origin, spacing = r.unpack(f"<{d}d"), r.unpack(f"<{d}d")
    speed_crc, K, n_det = r.unpack("<III")
    n = int(np.prod(counts))
    need = 8 * n_det * (2 * d + 1) + 8 * n + K * 8 * (1 + n + n_det) + 4
    if len(r.data) - r.pos != need:
        raise FormatError("malformed payload: header counts do not match payload length")
    block = r.f64(n_det * (2 * d + 1)).reshape(n_det, 2 * d + 1)
    speed_values = r.f64(n).reshape(counts)
    lam = np.empty(K)
    modes = np.empty((K, *counts))
    traces = np.empty((K, n_det))
    for k in range(K):
        lam[k] = r.f64(1)[0]
        modes[k] = r.f64(n).reshape(counts)
        traces[k] = r.f64(n_det)
    end = r.pos
    (crc,) = r.unpack("<I")
    r.done()
    if crc != crc32(r.data[4:end]):
        raise FormatError(f"checksum mismatch in {path}")
    scheme = {v: k for k, v in TRACE_CODES.items()}.get(code)
    if scheme is None:
        raise FormatError(f"malformed header: unknown trace scheme code {code}")
    try:
        domain = DomainSpec(lower, upper)
        grid = Grid(origin, spacing, counts)
    except ConfigError as exc:
        raise FormatError(f"malformed header: {exc}") from exc
    return dict(
        domain=domain, grid=grid, surface=_surface_from_block(block, d), speed_crc=speed_crc,
        scheme=scheme, speed_values=speed_values, lam=lam, modes=modes, traces=traces,
    )
