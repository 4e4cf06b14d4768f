"""Z-spectrum volume data model: offset schedules, coordinate grids, seeded
Gaussian noise injection, and bit-exact CSTV file I/O.

A volume is an M x N spatial grid of z-spectra sampled at C chemical-shift
offsets, stored as an (M*N) x C float64 matrix in row-major voxel order
(voxel p = i*N + j), with offset index aligned to the schedule.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .rng import SplitMix64

CSTV_MAGIC = b"CSTV"
CSTV_VERSION = 1

# refuse to allocate volumes beyond this many samples when reading
_MAX_READ_SAMPLES = 2**32


class VolumeFormatError(ValueError):
    """A CSTV file violates the format contract."""


def _frozen(a, dtype=np.float64) -> np.ndarray:
    out = np.array(a, dtype=dtype)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class OffsetSchedule:
    """Ordered chemical-shift offsets in ppm, strictly increasing."""

    offsets: np.ndarray

    def __post_init__(self):
        off = _frozen(self.offsets)
        if off.ndim != 1 or off.size < 2:
            raise ValueError("schedule needs at least 2 offsets")
        if not np.all(np.isfinite(off)):
            raise ValueError("offsets must be finite")
        if not np.all(np.diff(off) > 0):
            raise ValueError("offsets must be strictly increasing")
        object.__setattr__(self, "offsets", off)

    @property
    def num_offsets(self) -> int:
        return self.offsets.size

    def __eq__(self, other) -> bool:
        return isinstance(other, OffsetSchedule) and np.array_equal(
            self.offsets, other.offsets
        )


def make_default_schedule() -> OffsetSchedule:
    """Saturation offsets -15..15 ppm: 0.2 ppm steps inside +-7, 2 ppm outside."""
    inner = np.arange(-35, 36, dtype=np.float64) * 0.2
    outer_lo = np.array([-15.0, -13.0, -11.0, -9.0])
    outer_hi = np.array([9.0, 11.0, 13.0, 15.0])
    return OffsetSchedule(np.concatenate([outer_lo, inner, outer_hi]))


@dataclass(frozen=True, eq=False)
class ZSpectrumVolume:
    """M x N grid of z-spectra; data is (M*N) x C, voxel p = i*N + j."""

    M: int
    N: int
    schedule: OffsetSchedule
    data: np.ndarray

    def __post_init__(self):
        if self.M < 1 or self.N < 1:
            raise ValueError(f"spatial dims must be >= 1, got {self.M}x{self.N}")
        d = _frozen(self.data)
        if d.shape != (self.M * self.N, self.schedule.num_offsets):
            raise ValueError(
                f"data shape {d.shape} does not match "
                f"{self.M}*{self.N} voxels x {self.schedule.num_offsets} offsets"
            )
        if not np.all(np.isfinite(d)):
            raise ValueError("volume data must be finite")
        object.__setattr__(self, "data", d)

    @property
    def C(self) -> int:
        return self.schedule.num_offsets

    def image(self, q: int) -> np.ndarray:
        """Spatial M x N image at offset index q."""
        return self.data[:, q].reshape(self.M, self.N)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, ZSpectrumVolume)
            and self.M == other.M
            and self.N == other.N
            and self.schedule == other.schedule
            and np.array_equal(self.data, other.data)
        )


@dataclass(frozen=True, eq=False)
class CoordinateGrid:
    """Normalized voxel coordinates in [-1, 1]^2, same row order as the volume."""

    M: int
    N: int
    points: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "points", _frozen(self.points))


def coordinate_grid(M: int, N: int) -> CoordinateGrid:
    """Grid point for voxel (i, j): ((2i-(M-1))/(M-1), (2j-(N-1))/(N-1))."""
    if M < 2 or N < 2:
        raise ValueError(f"grid needs M, N >= 2, got {M}x{N}")
    a = (2.0 * np.arange(M) - (M - 1)) / (M - 1)
    b = (2.0 * np.arange(N) - (N - 1)) / (N - 1)
    pts = np.empty((M * N, 2))
    pts[:, 0] = np.repeat(a, N)
    pts[:, 1] = np.tile(b, M)
    return CoordinateGrid(M, N, pts)


@dataclass(frozen=True)
class NoiseSpec:
    """Additive Gaussian noise level (z-spectrum units) and generator seed."""

    sigma: float
    seed: int = 0

    def __post_init__(self):
        if not (np.isfinite(self.sigma) and self.sigma >= 0):
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")


def add_gaussian_noise(vol: ZSpectrumVolume, spec: NoiseSpec) -> ZSpectrumVolume:
    """Return vol + n with n i.i.d. N(0, sigma^2); deterministic given the seed."""
    if spec.sigma == 0:
        return vol
    rng = SplitMix64(spec.seed)
    noise = spec.sigma * rng.normal(vol.data.size)
    return ZSpectrumVolume(
        vol.M, vol.N, vol.schedule, vol.data + noise.reshape(vol.data.shape)
    )


def write_volume(vol: ZSpectrumVolume, path) -> None:
    """Write a volume in CSTV format (little-endian, no padding)."""
    with open(path, "wb") as f:
        f.write(CSTV_MAGIC)
        f.write(struct.pack("<IIII", CSTV_VERSION, vol.M, vol.N, vol.C))
        f.write(np.ascontiguousarray(vol.schedule.offsets, dtype="<f8").tobytes())
        f.write(np.ascontiguousarray(vol.data, dtype="<f8").tobytes())


def read_volume(path) -> ZSpectrumVolume:
    """Read a CSTV file; round-trips bit-exactly with :func:`write_volume`."""
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 20:
        raise VolumeFormatError(f"truncated header: {len(blob)} bytes")
    if blob[:4] != CSTV_MAGIC:
        raise VolumeFormatError(f"bad magic {blob[:4]!r}, expected {CSTV_MAGIC!r}")
    version, M, N, C = struct.unpack("<IIII", blob[4:20])
    if version != CSTV_VERSION:
        raise VolumeFormatError(f"unsupported version {version}")
    if M < 1 or N < 1 or C < 2:
        raise VolumeFormatError(f"bad dimensions M={M} N={N} C={C}")
    if M * N * C > _MAX_READ_SAMPLES:
        raise VolumeFormatError(f"dimension overflow: M*N*C = {M * N * C}")
    expect = 20 + 8 * C + 8 * M * N * C
    if len(blob) < expect:
        raise VolumeFormatError(f"truncated payload: {len(blob)} < {expect} bytes")
    if len(blob) > expect:
        raise VolumeFormatError(f"trailing bytes: {len(blob)} > {expect}")
    offsets = np.frombuffer(blob, dtype="<f8", count=C, offset=20)
    data = np.frombuffer(blob, dtype="<f8", count=M * N * C, offset=20 + 8 * C)
    if not np.all(np.isfinite(offsets)) or not np.all(np.isfinite(data)):
        raise VolumeFormatError("non-finite values in file")
    if not np.all(np.diff(offsets) > 0):
        raise VolumeFormatError("offsets not strictly increasing")
    return ZSpectrumVolume(
        M, N, OffsetSchedule(offsets), data.reshape(M * N, C)
    )
