"""Per-voxel 4-pool Lorentzian fitting for APT / rNOE amplitude maps.

The model is Z(dw) = 1 - sum_i A_i * (G_i/2)^2 / ((G_i/2)^2 + (dw - d_i)^2)
with fixed pool centers except a small free water shift. Fitting is damped
Gauss-Newton (Levenberg-Marquardt with Marquardt diagonal scaling) with box
clamping after each trial step; only improving steps are accepted, so the
residual norm is non-increasing by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .phantom import PoolParams
from .volume import OffsetSchedule, ZSpectrumVolume

N_POOLS = 4
N_PARAMS = 2 * N_POOLS + 1  # (A, fwhm) per pool + water shift

STATUS_CONVERGED = 1
STATUS_FAILED = 0


@dataclass(frozen=True)
class PoolSpec:
    """Search box and starting point for one pool of the fit model."""

    name: str
    center: float
    amplitude_bounds: tuple[float, float]
    fwhm_bounds: tuple[float, float]
    amplitude_init: float
    fwhm_init: float

    def __post_init__(self):
        alo, ahi = self.amplitude_bounds
        flo, fhi = self.fwhm_bounds
        vals = (self.center, alo, ahi, flo, fhi, self.amplitude_init, self.fwhm_init)
        if not all(np.isfinite(v) for v in vals):
            raise ValueError(f"pool {self.name!r}: non-finite spec values")
        if not (0.0 <= alo < ahi <= 1.0):
            raise ValueError(f"pool {self.name!r}: amplitude bounds must nest in [0, 1]")
        if not (0.0 < flo < fhi):
            raise ValueError(f"pool {self.name!r}: width bounds must be positive")
        if not (alo <= self.amplitude_init <= ahi and flo <= self.fwhm_init <= fhi):
            raise ValueError(f"pool {self.name!r}: initial values outside bounds")


def _midpoint_spec(name, center, amplitude_bounds, fwhm_bounds):
    return PoolSpec(
        name=name,
        center=center,
        amplitude_bounds=amplitude_bounds,
        fwhm_bounds=fwhm_bounds,
        amplitude_init=0.5 * (amplitude_bounds[0] + amplitude_bounds[1]),
        fwhm_init=0.5 * (fwhm_bounds[0] + fwhm_bounds[1]),
    )


@dataclass(frozen=True)
class FitConfig:
    """Pool specs (water first) plus Levenberg-Marquardt controls."""

    pools: tuple[PoolSpec, ...]
    water_shift_bound: float = 0.3
    initial_damping: float = 1e-3
    damping_factor: float = 10.0
    max_iterations: int = 200
    tolerance: float = 1e-8

    def __post_init__(self):
        if len(self.pools) != N_POOLS:
            raise ValueError(f"expected {N_POOLS} pools, got {len(self.pools)}")
        centers = [p.center for p in self.pools]
        if len(set(centers)) != N_POOLS:
            raise ValueError("pool centers must be distinct")
        if not (np.isfinite(self.water_shift_bound) and self.water_shift_bound >= 0):
            raise ValueError("water_shift_bound must be finite and >= 0")
        if not self.initial_damping > 0:
            raise ValueError("initial_damping must be > 0")
        if not self.damping_factor > 1:
            raise ValueError("damping_factor must be > 1")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not self.tolerance >= 0:
            raise ValueError("tolerance must be >= 0")

    @property
    def pool_names(self) -> tuple:
        return tuple(p.name for p in self.pools)


def default_fit_config() -> FitConfig:
    """Water / MT / rNOE / APT with generous boxes around literature values.

    The MT and rNOE width boxes are kept disjoint (15+ vs <=8 ppm); letting
    them overlap admits a local minimum where the two negative-offset pools
    trade roles (rNOE pinned wide, MT pinned narrow) and the fit stalls.
    """
    return FitConfig(
        pools=(
            _midpoint_spec("water", 0.0, (0.0, 1.0), (0.3, 10.0)),
            _midpoint_spec("mt", -2.5, (0.0, 0.5), (15.0, 100.0)),
            _midpoint_spec("rnoe", -3.5, (0.0, 0.3), (1.0, 8.0)),
            _midpoint_spec("apt", 3.5, (0.0, 0.3), (0.3, 8.0)),
        )
    )


def _bounds(cfg: FitConfig):
    lo = np.empty(N_PARAMS)
    hi = np.empty(N_PARAMS)
    for i, pool in enumerate(cfg.pools):
        lo[2 * i], hi[2 * i] = pool.amplitude_bounds
        lo[2 * i + 1], hi[2 * i + 1] = pool.fwhm_bounds
    lo[-1] = -cfg.water_shift_bound
    hi[-1] = cfg.water_shift_bound
    return lo, hi


def _model(params, offsets, cfg):
    z = np.ones_like(offsets)
    for i, pool in enumerate(cfg.pools):
        amp = params[2 * i]
        half = 0.5 * params[2 * i + 1]
        delta = params[-1] if i == 0 else pool.center
        d = offsets - delta
        z -= amp * half * half / (half * half + d * d)
    return z


def model_and_jacobian(params, schedule: OffsetSchedule, cfg: FitConfig):
    """Model spectrum and its C x 9 Jacobian.

    Parameter order: (A, fwhm) for each configured pool, then the water
    center shift. Fixed-center pools have no shift column.
    """
    params = np.asarray(params, dtype=np.float64)
    if params.shape != (N_PARAMS,):
        raise ValueError(f"expected {N_PARAMS} parameters, got shape {params.shape}")
    offsets = schedule.offsets
    z = np.ones_like(offsets)
    jac = np.zeros((offsets.size, N_PARAMS))
    for i, pool in enumerate(cfg.pools):
        amp = params[2 * i]
        half = 0.5 * params[2 * i + 1]
        delta = params[-1] if i == 0 else pool.center
        d = offsets - delta
        denom = half * half + d * d
        shape = half * half / denom
        z -= amp * shape
        jac[:, 2 * i] = -shape
        # d/dG folds in dh/dG = 1/2: -A * h * d^2 / denom^2
        jac[:, 2 * i + 1] = -amp * half * d * d / (denom * denom)
        if i == 0:
            jac[:, -1] = -2.0 * amp * half * half * d / (denom * denom)
    return z, jac


@dataclass(eq=False)
class FitResult:
    """One voxel's fitted pools (water carries the fitted center)."""

    pools: tuple
    water_shift: float
    residual_norm: float
    iterations: int
    converged: bool


def fit_voxel(zspec, schedule: OffsetSchedule, cfg: FitConfig) -> FitResult:
    """Levenberg-Marquardt fit of one spectrum.

    Trial steps are clamped to the parameter box before evaluation and
    accepted only when they lower the residual norm. Convergence is declared
    when an accepted step improves the residual by no more than
    tolerance * residual while the damping has relaxed back to its initial
    value or below, or when the residual hits the 1e-14 floor.
    """
    zspec = np.asarray(zspec, dtype=np.float64)
    if zspec.shape != (schedule.num_offsets,):
        raise ValueError(f"spectrum shape {zspec.shape} does not match schedule")
    if not np.all(np.isfinite(zspec)):
        raise ValueError("spectrum must be finite")

    lo, hi = _bounds(cfg)
    p = np.empty(N_PARAMS)
    for i, pool in enumerate(cfg.pools):
        p[2 * i] = pool.amplitude_init
        p[2 * i + 1] = pool.fwhm_init
    shift0 = schedule.offsets[int(np.argmin(zspec))]
    p[-1] = min(max(shift0, lo[-1]), hi[-1])

    offsets = schedule.offsets
    z, jac = model_and_jacobian(p, schedule, cfg)
    r = z - zspec
    rn = float(np.sqrt(r @ r))
    lam = cfg.initial_damping
    converged = False
    iterations = 0
    fresh_jac = True

    for it in range(cfg.max_iterations):
        iterations = it + 1
        if rn <= 1e-14:
            converged = True
            break
        if not fresh_jac:
            z, jac = model_and_jacobian(p, schedule, cfg)
            fresh_jac = True
        hess = jac.T @ jac
        grad = jac.T @ r
        scale = np.maximum(np.diag(hess), 1e-12)
        try:
            step = np.linalg.solve(hess + lam * np.diag(scale), -grad)
        except np.linalg.LinAlgError:
            step = None
        accepted = False
        if step is not None and np.all(np.isfinite(step)):
            p_try = np.clip(p + step, lo, hi)
            r_try = _model(p_try, offsets, cfg) - zspec
            rn_try = float(np.sqrt(r_try @ r_try))
            accepted = np.isfinite(rn_try) and rn_try < rn
        if accepted:
            gain = rn - rn_try
            p, r, rn = p_try, r_try, rn_try
            fresh_jac = False
            lam = max(lam / cfg.damping_factor, 1e-15)
            if rn <= 1e-14 or (
                gain <= cfg.tolerance * rn and lam <= cfg.initial_damping
            ):
                converged = True
                break
        else:
            lam *= cfg.damping_factor
            if lam > 1e14:
                break

    fitted = []
    for i, pool in enumerate(cfg.pools):
        center = p[-1] if i == 0 else pool.center
        fitted.append(
            PoolParams(amplitude=p[2 * i], fwhm=p[2 * i + 1], center=center)
        )
    return FitResult(
        pools=tuple(fitted),
        water_shift=float(p[-1]),
        residual_norm=rn,
        iterations=iterations,
        converged=converged,
    )


@dataclass(eq=False)
class FitMaps:
    """Volume-level fit output: per-pool amplitude maps plus diagnostics.

    status is 1 where the voxel fit converged and 0 where it stopped at the
    iteration cap or failed; failed voxels keep best-so-far values.
    """

    M: int
    N: int
    pool_names: tuple
    amplitude: dict
    water_shift: np.ndarray
    residual: np.ndarray
    status: np.ndarray

    def amplitude_map(self, name: str) -> np.ndarray:
        if name not in self.amplitude:
            raise KeyError(f"unknown pool {name!r}")
        return self.amplitude[name]


def fit_volume(vol: ZSpectrumVolume, cfg: FitConfig) -> FitMaps:
    """Independent fit_voxel over every voxel, assembled into maps."""
    M, N = vol.M, vol.N
    names = cfg.pool_names
    amps = {name: np.zeros((M, N)) for name in names}
    shift = np.zeros((M, N))
    resid = np.zeros((M, N))
    status = np.zeros((M, N), dtype=np.uint8)
    for idx in range(M * N):
        i, j = divmod(idx, N)
        try:
            res = fit_voxel(vol.data[idx], vol.schedule, cfg)
        except Exception:
            for k, name in enumerate(names):
                amps[name][i, j] = cfg.pools[k].amplitude_init
            resid[i, j] = np.inf
            continue
        for name, pool in zip(names, res.pools):
            amps[name][i, j] = pool.amplitude
        shift[i, j] = res.water_shift
        resid[i, j] = res.residual_norm
        status[i, j] = STATUS_CONVERGED if res.converged else STATUS_FAILED
    return FitMaps(
        M=M,
        N=N,
        pool_names=names,
        amplitude=amps,
        water_shift=shift,
        residual=resid,
        status=status,
    )
