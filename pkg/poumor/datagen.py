"""Synthetic datasets: disk Laplacian pairs, quarter-disk nonlinear Poisson
pairs, and a 1D Burgers DNS -> box filter -> coarse closure series.

Every sample i is drawn from its own generator seeded with seed + i, so
samples are reproducible individually and in any order.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import uniform_filter1d

from .config import DataConfig
from .errors import InstabilityError, NyquistError, ValidationError
from .extension import DomainMask, solve_smooth_extension
from .spectral import GridSpec, burgers_euler_array, truncate_modes

log = logging.getLogger(__name__)

SampleSpec = DataConfig
BLOWUP = 1e6


@dataclass
class PairSet:
    grid: GridSpec
    inputs: np.ndarray
    targets: np.ndarray
    masks: np.ndarray
    seeds: list
    angles: list = field(default_factory=list)

    def __len__(self):
        return self.inputs.shape[0]


@dataclass
class ClosureSeries:
    fine_grid: GridSpec
    coarse_grid: GridSpec
    fine: np.ndarray
    filtered: np.ndarray
    coarse: np.ndarray
    dt: float
    nu: float
    stride: int
    filter_width: int


# ---------------------------------------------------------------------------
# Gaussian processes


def periodic_distance(grid: GridSpec) -> np.ndarray:
    """Torus distance from the first grid point to every grid point."""
    offsets = [np.minimum(np.arange(n), n - np.arange(n)) * h for n, h in zip(grid.n, grid.spacing)]
    mesh = np.meshgrid(*offsets, indexing="ij")
    return np.sqrt(sum(m * m for m in mesh))


def kernel_values(r: np.ndarray, kind: str, length_scale: float, variance: float) -> np.ndarray:
    if kind == "se":
        return variance * np.exp(-0.5 * (r / length_scale) ** 2)
    if kind == "exp":
        return variance * np.exp(-r / length_scale)
    raise ValidationError(f"sample_gp: unknown kernel {kind!r}")


def sample_gp(grid: GridSpec, length_scale: float = 0.3, variance: float = 1.0, seed=0,
              kernel: str = "se") -> np.ndarray:
    """Zero-mean stationary GP draw on the torus by circulant embedding."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    c = kernel_values(periodic_distance(grid), kernel, length_scale, variance)
    lam = np.fft.fftn(c).real
    if lam.min() < -1e-8 * lam.max():
        raise ValidationError(f"sample_gp: kernel is not positive definite on this grid (min eigenvalue {lam.min():.3g})")
    lam = np.clip(lam, 0.0, None)
    z = np.fft.fftn(rng.standard_normal(grid.shape), norm="ortho")
    return np.fft.ifftn(np.sqrt(lam) * z, norm="ortho").real


# ---------------------------------------------------------------------------
# geometry and stencils


def disk_mask(grid: GridSpec, radius: float = 1.0) -> np.ndarray:
    return sum(x * x for x in grid.mesh()) <= radius * radius


def rotated_coords(grid: GridSpec, angle: float) -> tuple:
    """Grid coordinates expressed in a frame rotated by `angle`."""
    x1, x2 = grid.mesh()
    c, s = np.cos(angle), np.sin(angle)
    return c * x1 + s * x2, -s * x1 + c * x2


def quarter_disk_mask(grid: GridSpec, angle: float = 0.0) -> np.ndarray:
    y1, y2 = rotated_coords(grid, angle)
    return (y1 * y1 + y2 * y2 <= 1.0) & (y1 >= 0.0) & (y2 >= 0.0)


def fd_laplacian(u: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Second-order central-difference Laplacian, periodic."""
    out = np.zeros_like(u)
    for axis, h in enumerate(grid.spacing):
        out += (np.roll(u, 1, axis) + np.roll(u, -1, axis) - 2.0 * u) / (h * h)
    return out


def box_filter(u: np.ndarray, width: int, axes=None) -> np.ndarray:
    """Periodic moving average of `width` points along each spatial axis."""
    axes = range(u.ndim) if axes is None else axes
    out = np.asarray(u, dtype=np.float64)
    for axis in axes:
        out = uniform_filter1d(out, size=int(width), axis=axis, mode="wrap")
    return out


# ---------------------------------------------------------------------------
# disk exemplar


def gen_disk_pairs(spec: SampleSpec, count: int | None = None, offset: int = 0) -> PairSet:
    """u = GP (1 - |x|^2)_+, v = FD Laplacian of u^2, on the unit disk.

    The loss mask reaches out to radius 1 + exterior_band with v = 0 past the
    unit circle, so the exterior band is supervised toward zero.
    """
    grid = GridSpec.box(spec.n, spec.half_width)
    count = spec.count if count is None else count
    r2 = sum(x * x for x in grid.mesh())
    bump = np.clip(1.0 - r2, 0.0, None)
    mask = disk_mask(grid, 1.0 + spec.exterior_band)
    exterior = r2 > 1.0
    inputs, targets, seeds = [], [], []
    for i in range(count):
        seed = spec.seed + offset + i
        u = sample_gp(grid, spec.length_scale, spec.variance, seed) * bump
        inputs.append(u)
        targets.append(np.where(exterior, 0.0, fd_laplacian(u * u, grid)))
        seeds.append(seed)
    log.info("disk: %d pairs on a %s grid (seeds %d..%d)", count, grid.shape, spec.seed + offset,
             spec.seed + offset + count - 1)
    return PairSet(grid, np.stack(inputs)[..., None], np.stack(targets)[..., None],
                   np.broadcast_to(mask, (count,) + grid.shape).copy(), seeds)


# ---------------------------------------------------------------------------
# quarter-disk nonlinear Poisson exemplar


def poisson_fields(x1: np.ndarray, x2: np.ndarray, freqs: np.ndarray) -> tuple:
    """(v, u) with v = psi sum_m cos(f_m1 x1) cos(f_m2 x2) and u = div tanh(grad v).

    psi = (1 - |x|^2)_+; derivatives are analytic inside the unit disk.
    """
    freqs = np.atleast_2d(freqs)
    inside = x1 * x1 + x2 * x2 < 1.0
    psi = np.where(inside, 1.0 - x1 * x1 - x2 * x2, 0.0)
    p1, p2 = np.where(inside, -2.0 * x1, 0.0), np.where(inside, -2.0 * x2, 0.0)
    p11 = p22 = np.where(inside, -2.0, 0.0)
    a, b = freqs[:, 0], freqs[:, 1]
    ca, sa = np.cos(x1[..., None] * a), np.sin(x1[..., None] * a)
    cb, sb = np.cos(x2[..., None] * b), np.sin(x2[..., None] * b)
    s = np.sum(ca * cb, axis=-1)
    s1 = np.sum(-a * sa * cb, axis=-1)
    s2 = np.sum(-b * ca * sb, axis=-1)
    s11 = np.sum(-a * a * ca * cb, axis=-1)
    s22 = np.sum(-b * b * ca * cb, axis=-1)
    v = psi * s
    v1, v2 = p1 * s + psi * s1, p2 * s + psi * s2
    v11 = p11 * s + 2.0 * p1 * s1 + psi * s11
    v22 = p22 * s + 2.0 * p2 * s2 + psi * s22
    u = (1.0 - np.tanh(v1) ** 2) * v11 + (1.0 - np.tanh(v2) ** 2) * v22
    return v, u


def check_nyquist(grid: GridSpec, freq_max: float, points_per_wavelength: float = 4.0):
    h = max(grid.spacing)
    limit = 2.0 * np.pi / (freq_max * points_per_wavelength)
    if h > limit:
        raise NyquistError(f"grid spacing {h:.4g} too coarse for frequency {freq_max:g} "
                           f"({points_per_wavelength:g} points per wavelength need h <= {limit:.4g})")


def gen_poisson_pairs(spec: SampleSpec, count: int | None = None, offset: int = 0) -> PairSet:
    """Pairs (u, v) of div tanh(grad v) = u on randomly rotated quarter disks.

    Inputs are smoothly extended off the quarter disk when spec.extend_inputs
    is set; targets are left as generated (losses only see the mask).
    """
    grid = GridSpec.box(spec.n, spec.half_width)
    check_nyquist(grid, spec.freq_max, spec.points_per_wavelength)
    count = spec.count if count is None else count
    inputs, targets, masks, seeds, angles = [], [], [], [], []
    for i in range(count):
        seed = spec.seed + offset + i
        rng = np.random.default_rng(seed)
        angle = float(rng.uniform(0.0, 2.0 * np.pi))
        freqs = rng.uniform(0.0, spec.freq_max, size=(spec.n_cosines, 2))
        y1, y2 = rotated_coords(grid, angle)
        v, u = poisson_fields(y1, y2, freqs)
        mask = quarter_disk_mask(grid, angle)
        u = np.where(mask, u, 0.0)
        if spec.extend_inputs:
            u = solve_smooth_extension(u[mask], DomainMask(grid, mask), method=spec.extension_method).values
        inputs.append(u)
        targets.append(np.where(mask, v, 0.0))
        masks.append(mask)
        seeds.append(seed)
        angles.append(angle)
    log.info("poisson: %d pairs on a %s grid (seeds %d..%d)", count, grid.shape, spec.seed + offset,
             spec.seed + offset + count - 1)
    return PairSet(grid, np.stack(inputs)[..., None], np.stack(targets)[..., None], np.stack(masks),
                   seeds, angles)


# ---------------------------------------------------------------------------
# Burgers closure


def band_limited_ic(grid: GridSpec, modes: int, amplitude: float, seed=0) -> np.ndarray:
    """sum_k a_k sin(k x + phi_k), k = 1..modes, a_k ~ N(0, 1/k), scaled to max |u| = amplitude."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    x = grid.coords()[0]
    k0 = 2.0 * np.pi / grid.lengths[0]
    ks = np.arange(1, modes + 1)
    a = rng.standard_normal(modes) / ks
    phi = rng.uniform(0.0, 2.0 * np.pi, modes)
    u = np.sum(a * np.sin(k0 * ks * x[:, None] + phi), axis=1)
    return amplitude * u / np.max(np.abs(u))


def dealias(grid: GridSpec, u: np.ndarray) -> np.ndarray:
    """2/3-rule: keep |k| <= n/3 along every axis."""
    uh = np.fft.rfftn(u, axes=grid.axes, norm="ortho")
    uh = truncate_modes(uh, [n // 3 for n in grid.n], axes=grid.axes, half=True)
    return np.fft.irfftn(uh, s=grid.n, axes=grid.axes, norm="ortho")


def integrate_burgers(grid: GridSpec, u0: np.ndarray, nu: float, dt: float, snapshots: int,
                      save_every: int = 1, dealiased: bool = False) -> np.ndarray:
    """Explicit Euler pseudo-spectral Burgers; returns (snapshots, n..., 1) including u0."""
    u = np.asarray(u0, dtype=np.float64).reshape(grid.shape + (1,))
    out = [u]
    for t in range(1, snapshots):
        for _ in range(save_every):
            u = burgers_euler_array(grid, u, nu, dt)
            if dealiased:
                u = dealias(grid, u)
        peak = float(np.max(np.abs(u)))
        if not np.isfinite(peak) or peak > BLOWUP:
            raise InstabilityError(f"burgers: |u| reached {peak:.3g} at snapshot {t}")
        out.append(u)
    return np.stack(out)


def gen_burgers_closure(spec: SampleSpec) -> ClosureSeries:
    """Fine DNS series, its box-filtered version, and the filtered series subsampled by stride."""
    if spec.n_fine % spec.stride:
        raise ValidationError(f"burgers: stride {spec.stride} does not divide n_fine {spec.n_fine}")
    fine_grid = GridSpec((spec.n_fine,), (2.0 * np.pi,))
    coarse_grid = GridSpec((spec.n_fine // spec.stride,), (2.0 * np.pi,))
    u0 = band_limited_ic(fine_grid, spec.ic_modes, spec.amplitude, spec.seed)
    fine = integrate_burgers(fine_grid, u0, spec.nu, spec.dt, spec.snapshots, spec.save_every, spec.dealias)
    filtered = box_filter(fine, spec.filter_width, axes=(1,))
    coarse = filtered[:, ::spec.stride].copy()
    log.info("burgers: %d snapshots, %d -> %d points, box width %d", spec.snapshots, spec.n_fine,
             coarse_grid.n[0], spec.filter_width)
    return ClosureSeries(fine_grid, coarse_grid, fine, filtered, coarse, spec.dt * spec.save_every,
                         spec.nu, spec.stride, spec.filter_width)


def gen_ood_pair(closure: ClosureSeries, index: int = -1) -> tuple:
    """(filtered coarse IC, unfiltered subsampled IC) from the same DNS snapshot."""
    return closure.coarse[index].copy(), closure.fine[index, ::closure.stride].copy()
