"""Multi-pool Lorentzian phantom synthesis.

Three shape regions carry increasing numbers of saturation pools: a square
(direct water saturation + MT), a circle (+ rNOE), and an octagon (+ APT).
Pool amplitude and width vary smoothly in space via Gaussian-filtered uniform
random maps; pool centers are spatially constant. Background voxels carry a
flat all-ones spectrum.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from numpy.lib.stride_tricks import sliding_window_view

import numpy as np

from .rng import SplitMix64
from .volume import OffsetSchedule, ZSpectrumVolume, make_default_schedule

POOL_NAMES = ("water", "mt", "rnoe", "apt")

# which pools saturate each region
REGION_POOLS = {
    "square": ("water", "mt"),
    "circle": ("water", "mt", "rnoe"),
    "octagon": ("water", "mt", "rnoe", "apt"),
}


class ConfigError(ValueError):
    """A phantom configuration file or value is invalid."""


@dataclass(frozen=True)
class PoolParams:
    """One Lorentzian pool: amplitude in [0,1], FWHM in ppm, center in ppm."""

    amplitude: float
    fwhm: float
    center: float

    def __post_init__(self):
        if not 0.0 <= self.amplitude <= 1.0:
            raise ValueError(f"amplitude must be in [0,1], got {self.amplitude}")
        if not self.fwhm > 0:
            raise ValueError(f"fwhm must be > 0, got {self.fwhm}")
        if not math.isfinite(self.center):
            raise ValueError(f"center must be finite, got {self.center}")


def lorentzian(offset, pool: PoolParams):
    """A * (G/2)^2 / ((G/2)^2 + (offset - center)^2); peak A, FWHM G."""
    h2 = (0.5 * pool.fwhm) ** 2
    d = np.asarray(offset, dtype=np.float64) - pool.center
    return pool.amplitude * h2 / (h2 + d * d)


def zspectrum(pools, schedule: OffsetSchedule) -> np.ndarray:
    """Z(off) = 1 - sum of pool Lorentzians, clamped to [0,1]."""
    z = np.ones(schedule.num_offsets)
    for pool in pools:
        z -= lorentzian(schedule.offsets, pool)
    return np.clip(z, 0.0, 1.0)


def _gauss_kernel(sigma: float) -> np.ndarray:
    radius = math.ceil(3.0 * sigma)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_smooth(field_map: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur, kernel radius ceil(3*sigma), reflect boundary."""
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    field_map = np.asarray(field_map, dtype=np.float64)
    if sigma == 0:
        return field_map.copy()
    k = _gauss_kernel(sigma)
    r = k.size // 2
    out = field_map
    for axis in (0, 1):
        pad = [(0, 0), (0, 0)]
        pad[axis] = (r, r)
        padded = np.pad(out, pad, mode="symmetric")
        out = sliding_window_view(padded, k.size, axis=axis) @ k
    return out


@dataclass(frozen=True, eq=False)
class ShapeMasks:
    """Pairwise-disjoint boolean masks for the three phantom regions."""

    square: np.ndarray
    circle: np.ndarray
    octagon: np.ndarray

    def region(self, name: str) -> np.ndarray:
        if name not in ("square", "circle", "octagon"):
            raise KeyError(name)
        return getattr(self, name)


def make_shape_masks(M: int, N: int) -> ShapeMasks:
    """Square, circle, octagon laid out left to right, each inscribed in a
    third of the width with 10% margins."""
    if M < 32 or N < 32:
        raise ValueError(f"masks need M, N >= 32, got {M}x{N}")
    edges = [round(k * N / 3) for k in range(4)]
    ii, jj = np.indices((M, N))
    cy = (M - 1) / 2.0
    masks = []
    for k, name in enumerate(("square", "circle", "octagon")):
        c0, c1 = edges[k], edges[k + 1]
        cx = (c0 + c1 - 1) / 2.0
        r = 0.4 * min(M, c1 - c0)
        dy = ii - cy
        dx = jj - cx
        if name == "square":
            m = (np.abs(dy) <= r) & (np.abs(dx) <= r)
        elif name == "circle":
            m = dy * dy + dx * dx <= r * r
        else:
            a = r * math.cos(math.pi / 8.0)
            m = (np.maximum(np.abs(dx), np.abs(dy)) <= a) & (
                np.abs(dx) + np.abs(dy) <= a * math.sqrt(2.0)
            )
        masks.append(m)
    return ShapeMasks(*masks)


@dataclass(frozen=True)
class PoolRange:
    """Uniform draw ranges for one pool's amplitude and width; fixed center."""

    amp_min: float
    amp_max: float
    width_min: float
    width_max: float
    center: float


def default_pool_ranges() -> dict[str, PoolRange]:
    return {
        "water": PoolRange(0.5, 0.9, 1.0, 3.0, 0.0),
        "mt": PoolRange(0.05, 0.15, 20.0, 60.0, -2.5),
        "rnoe": PoolRange(0.02, 0.10, 3.0, 6.0, -3.5),
        "apt": PoolRange(0.01, 0.06, 1.0, 3.0, 3.5),
    }


@dataclass(frozen=True)
class PhantomConfig:
    M: int = 96
    N: int = 96
    schedule: OffsetSchedule = field(default_factory=make_default_schedule)
    pools: dict[str, PoolRange] = field(default_factory=default_pool_ranges)
    smooth_sigma: float = 2.0
    seed: int = 1

    def __post_init__(self):
        if self.M < 32 or self.N < 32:
            raise ValueError(f"phantom needs M, N >= 32, got {self.M}x{self.N}")
        if not self.smooth_sigma >= 0:
            raise ValueError(f"smooth_sigma must be >= 0, got {self.smooth_sigma}")
        if set(self.pools) != set(POOL_NAMES):
            raise ValueError(f"pools must be exactly {POOL_NAMES}")
        for name in POOL_NAMES:
            p = self.pools[name]
            if not 0.0 <= p.amp_min <= p.amp_max <= 1.0:
                raise ValueError(
                    f"{name}_amp_min/{name}_amp_max must satisfy "
                    f"0 <= min <= max <= 1, got [{p.amp_min}, {p.amp_max}]"
                )
            if not 0.0 < p.width_min <= p.width_max:
                raise ValueError(
                    f"{name}_width_min/{name}_width_max must satisfy "
                    f"0 < min <= max, got [{p.width_min}, {p.width_max}]"
                )
            if not np.isfinite(p.center):
                raise ValueError(f"{name}_center must be finite")


def synthesize_phantom(config: PhantomConfig, return_params: bool = False):
    """Draw smoothed per-pool parameter maps and evaluate the region spectra.

    Returns (ground-truth volume, masks), or with ``return_params`` also a
    dict of the smoothed per-pool (amplitude map, width map) pairs — the
    effective per-voxel truth. Deterministic given config.seed; masks depend
    only on the dimensions.
    """
    M, N = config.M, config.N
    masks = make_shape_masks(M, N)
    rng = SplitMix64(config.seed)

    amp_maps = {}
    width_maps = {}
    for name in POOL_NAMES:
        pr = config.pools[name]
        amp = pr.amp_min + rng.uniform(M * N).reshape(M, N) * (pr.amp_max - pr.amp_min)
        wid = pr.width_min + rng.uniform(M * N).reshape(M, N) * (
            pr.width_max - pr.width_min
        )
        amp_maps[name] = gaussian_smooth(amp, config.smooth_sigma)
        width_maps[name] = gaussian_smooth(wid, config.smooth_sigma)

    active = {
        "water": masks.square | masks.circle | masks.octagon,
        "mt": masks.square | masks.circle | masks.octagon,
        "rnoe": masks.circle | masks.octagon,
        "apt": masks.octagon,
    }

    offs = config.schedule.offsets
    sat = np.zeros((M * N, offs.size))
    for name in POOL_NAMES:
        sel = active[name].ravel()
        pr = config.pools[name]
        amps = amp_maps[name].ravel()[sel, None]
        h2 = (0.5 * width_maps[name].ravel()[sel, None]) ** 2
        d2 = (offs[None, :] - pr.center) ** 2
        sat[sel] += amps * h2 / (h2 + d2)

    data = np.clip(1.0 - sat, 0.0, 1.0)
    vol = ZSpectrumVolume(M, N, config.schedule, data)
    if return_params:
        params = {name: (amp_maps[name], width_maps[name]) for name in POOL_NAMES}
        return vol, masks, params
    return vol, masks


# ---------------------------------------------------------------------------
# flat key=value configuration files

_INT_KEYS = ("m", "n", "seed")
_FLOAT_KEYS = ("smooth_sigma",)
_POOL_FIELDS = ("amp_min", "amp_max", "width_min", "width_max", "center")

PHANTOM_CONFIG_KEYS = tuple(
    list(_INT_KEYS)
    + list(_FLOAT_KEYS)
    + [f"{p}_{f}" for p in POOL_NAMES for f in _POOL_FIELDS]
)


def parse_phantom_config(text: str, base: PhantomConfig | None = None) -> PhantomConfig:
    """Parse 'key=value' lines ('#' comments allowed) onto base (or defaults)."""
    cfg = base if base is not None else PhantomConfig()
    simple: dict[str, float] = {}
    pools = {k: v for k, v in cfg.pools.items()}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, _, val = line.partition("=")
        key = key.strip().lower()
        val = val.strip()
        if key not in PHANTOM_CONFIG_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        try:
            num = int(val) if key in _INT_KEYS else float(val)
        except ValueError:
            raise ConfigError(f"line {lineno}: bad number {val!r} for {key}") from None
        if key in _INT_KEYS or key in _FLOAT_KEYS:
            simple[key] = num
        else:
            pool, fld = key.split("_", 1)
            pools[pool] = replace(pools[pool], **{fld: num})
    try:
        return replace(
            cfg,
            M=int(simple.get("m", cfg.M)),
            N=int(simple.get("n", cfg.N)),
            seed=int(simple.get("seed", cfg.seed)),
            smooth_sigma=simple.get("smooth_sigma", cfg.smooth_sigma),
            pools=pools,
        )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def load_phantom_config(path, base: PhantomConfig | None = None) -> PhantomConfig:
    with open(path, "r", encoding="utf-8") as f:
        return parse_phantom_config(f.read(), base=base)
