"""Torus grids, wavenumbers, mode truncation and pseudo-spectral operators.

Fields are numpy arrays of shape (n_1, ..., n_d, m): spatial axes first, the
channel axis last. All transforms are unitary (norm="ortho"). Odd derivative
multipliers drop the Nyquist wavenumber so that real fields stay real; the
Laplacian keeps it.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import diffcore
from .errors import NonFiniteError, ShapeError, ValidationError


@dataclass(frozen=True)
class GridSpec:
    n: tuple
    lengths: tuple
    origin: tuple | None = None

    def __post_init__(self):
        n = tuple(int(v) for v in np.atleast_1d(self.n))
        lengths = tuple(float(v) for v in np.atleast_1d(self.lengths))
        if len(lengths) == 1 and len(n) > 1:
            lengths = lengths * len(n)
        origin = (0.0,) * len(n) if self.origin is None else tuple(float(v) for v in np.atleast_1d(self.origin))
        if not 1 <= len(n) <= 3:
            raise ValidationError(f"grid: dimension must be 1, 2 or 3, got {len(n)}")
        if len(lengths) != len(n) or len(origin) != len(n):
            raise ValidationError(f"grid: {len(n)} axes but {len(lengths)} periods and {len(origin)} origins")
        for v in n:
            if v < 4 or v % 2:
                raise ValidationError(f"grid: points per axis must be even and >= 4, got {v}")
        for v in lengths:
            if not v > 0:
                raise ValidationError(f"grid: periods must be positive, got {v}")
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "lengths", lengths)
        object.__setattr__(self, "origin", origin)

    @classmethod
    def box(cls, n, half_width: float, d: int = 2) -> GridSpec:
        """Square box [-half_width, half_width)^d."""
        n = (int(n),) * d if np.isscalar(n) else tuple(n)
        return cls(n, (2.0 * half_width,) * len(n), (-half_width,) * len(n))

    @property
    def d(self) -> int:
        return len(self.n)

    @property
    def shape(self) -> tuple:
        return self.n

    @property
    def size(self) -> int:
        return int(np.prod(self.n))

    @property
    def spacing(self) -> tuple:
        return tuple(L / n for L, n in zip(self.lengths, self.n))

    @property
    def axes(self) -> tuple:
        return tuple(range(self.d))

    def coords(self) -> list:
        return [o + L * np.arange(n) / n for o, L, n in zip(self.origin, self.lengths, self.n)]

    def mesh(self) -> list:
        return np.meshgrid(*self.coords(), indexing="ij")

    def angles(self) -> list:
        """Torus angles in [0, 2pi) of every grid point, one array per axis."""
        return [2.0 * np.pi * np.arange(n) / n for n in self.n]

    def half_shape(self) -> tuple:
        return self.n[:-1] + (self.n[-1] // 2 + 1,)

    def to_dict(self) -> dict:
        return {"n": list(self.n), "lengths": list(self.lengths), "origin": list(self.origin)}

    @classmethod
    def from_dict(cls, data: dict) -> GridSpec:
        return cls(tuple(data["n"]), tuple(data["lengths"]), tuple(data.get("origin") or (0.0,) * len(data["n"])))


@dataclass
class Field:
    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values)
        if np.iscomplexobj(values):
            raise ValidationError("field: values must be real in physical space")
        if values.shape == self.grid.shape:
            values = values[..., None]
        if values.shape[:-1] != self.grid.shape:
            raise ShapeError(f"field: shape mismatch {values.shape} vs grid {self.grid.shape}")
        self.values = np.asarray(values, dtype=np.float64)

    @property
    def channels(self) -> int:
        return self.values.shape[-1]

    def channel(self, c: int) -> np.ndarray:
        return self.values[..., c]


# ---------------------------------------------------------------------------
# wavenumbers and truncation


def wavenumbers(grid: GridSpec) -> list:
    """Per-axis wavenumbers in FFT order, in units of 2pi/L."""
    return [2.0 * np.pi / L * np.fft.fftfreq(n, 1.0 / n) for n, L in zip(grid.n, grid.lengths)]


def half_wavenumbers(grid: GridSpec) -> list:
    """Wavenumbers for the real-input (half) spectrum: last axis non-negative."""
    k = wavenumbers(grid)
    n, L = grid.n[-1], grid.lengths[-1]
    k[-1] = 2.0 * np.pi / L * np.fft.rfftfreq(n, 1.0 / n)
    return k


def wave_vector(grid: GridSpec, half: bool = True, zero_nyquist: bool = False) -> list:
    """Broadcastable per-axis kappa arrays over the spectral grid."""
    ks = half_wavenumbers(grid) if half else wavenumbers(grid)
    out = []
    for axis, (k, n) in enumerate(zip(ks, grid.n)):
        k = k.copy()
        if zero_nyquist:
            k[np.abs(np.round(k * grid.lengths[axis] / (2.0 * np.pi))) == n // 2] = 0.0
        shape = [1] * grid.d
        shape[axis] = k.size
        out.append(k.reshape(shape))
    return out


def kappa_squared(grid: GridSpec, half: bool = True, zero_nyquist: bool = False) -> np.ndarray:
    return sum(k * k for k in wave_vector(grid, half, zero_nyquist))


def mode_indices(n: int, k: int, half: bool = False) -> np.ndarray:
    """Indices of modes with |index| <= k on an axis of n points, in FFT order."""
    if k <= 0:
        raise ValidationError(f"truncate_modes: keep must be positive, got {k}")
    if k > n // 2:
        raise ValidationError(f"truncate_modes: keep {k} exceeds n/2 = {n // 2}")
    if half:
        return np.arange(min(k, n // 2) + 1)
    return np.unique(np.r_[0:k + 1, n - k:n] % n)


def retained_indices(shape: Sequence[int], keep, half: bool = True) -> list:
    """Per-axis retained indices; with half=True the last axis is the rfft axis."""
    keep = _per_axis(keep, len(shape))
    return [mode_indices(n, k, half and axis == len(shape) - 1) for axis, (n, k) in enumerate(zip(shape, keep))]


def _per_axis(keep, d):
    keep = [int(k) for k in np.atleast_1d(keep)]
    if len(keep) == 1:
        keep = keep * d
    if len(keep) != d:
        raise ValidationError(f"truncate_modes: {len(keep)} cutoffs for {d} axes")
    return keep


def truncate_modes(spectrum: np.ndarray, keep, axes: Sequence[int] | None = None, half: bool = False) -> np.ndarray:
    """Zero every mode with |index| > k_i on any axis (an orthogonal projection).

    `spectrum` is a full (or, with half=True, real-input) spectrum whose
    spectral axes are `axes` (default: all axes).
    """
    spectrum = np.asarray(spectrum)
    axes = tuple(range(spectrum.ndim)) if axes is None else tuple(axes)
    keep = _per_axis(keep, len(axes))
    out = np.zeros_like(spectrum)
    idx = []
    for i, (ax, k) in enumerate(zip(axes, keep)):
        n = spectrum.shape[ax]
        if half and i == len(axes) - 1:
            n = 2 * (n - 1)
        idx.append(mode_indices(n, k, half and i == len(axes) - 1))
    index = [np.arange(s) for s in spectrum.shape]
    for ax, ix in zip(axes, idx):
        index[ax] = ix
    sel = np.ix_(*index)
    out[sel] = spectrum[sel]
    return out


# ---------------------------------------------------------------------------
# differential operators (arrays of shape grid.shape + (m,))


def _fwd(grid, u):
    return np.fft.rfftn(u, axes=grid.axes, norm="ortho")


def _inv(grid, uh):
    return np.fft.irfftn(uh, s=grid.n, axes=grid.axes, norm="ortho")


def _deriv(grid, uh, axis):
    k = wave_vector(grid, zero_nyquist=True)[axis]
    return _inv(grid, 1j * k * uh)


def derivative(grid: GridSpec, u: np.ndarray, axis: int) -> np.ndarray:
    """d/dx_axis of a scalar array of shape grid.shape."""
    return _deriv(grid, _fwd(grid, u), axis)


def laplacian_array(grid: GridSpec, u: np.ndarray, zero_nyquist: bool = False) -> np.ndarray:
    """Spectral Laplacian. With zero_nyquist=True it drops Nyquist modes the way
    the first-derivative multipliers do, so it equals divergence of gradient
    on any field."""
    return _inv(grid, -kappa_squared(grid, zero_nyquist=zero_nyquist) * _fwd(grid, u))


def spectral_gradient(field: Field) -> Field:
    if field.channels != 1:
        raise ShapeError(f"spectral_gradient: expects one channel, got {field.channels}")
    uh = _fwd(field.grid, field.channel(0))
    return Field(field.grid, np.stack([_deriv(field.grid, uh, i) for i in field.grid.axes], axis=-1))


def spectral_divergence(field: Field) -> Field:
    grid = field.grid
    if field.channels != grid.d:
        raise ShapeError(f"spectral_divergence: expects {grid.d} channels, got {field.channels}")
    return Field(grid, sum(derivative(grid, field.channel(i), i) for i in grid.axes))


def spectral_laplacian(field: Field, zero_nyquist: bool = False) -> Field:
    grid = field.grid
    return Field(grid, np.stack([laplacian_array(grid, field.channel(c), zero_nyquist) for c in range(field.channels)], axis=-1))


# ---------------------------------------------------------------------------
# explicit Euler steps of the known physics


def _check_finite(name, u):
    if not np.all(np.isfinite(u)):
        raise NonFiniteError(f"{name}: non-finite values in input")


def burgers_euler_array(grid: GridSpec, u: np.ndarray, nu: float, dt: float) -> np.ndarray:
    """u - dt (u . grad u - nu lap u), channel by channel, scalar Burgers form."""
    _check_finite("burgers_euler_step", u)
    out = np.empty_like(u)
    for c in range(u.shape[-1]):
        uc = u[..., c]
        uh = _fwd(grid, uc)
        adv = sum(uc * _deriv(grid, uh, i) for i in grid.axes)
        lap = _inv(grid, -kappa_squared(grid) * uh)
        out[..., c] = uc - dt * (adv - nu * lap)
    return out


def burgers_euler_vjp(grid: GridSpec, u: np.ndarray, g: np.ndarray, nu: float, dt: float) -> np.ndarray:
    out = np.empty_like(u)
    for c in range(u.shape[-1]):
        uc, gc = u[..., c], g[..., c]
        uh = _fwd(grid, uc)
        du = sum(_deriv(grid, uh, i) for i in grid.axes)
        dug = sum(derivative(grid, uc * gc, i) for i in grid.axes)
        lap_g = laplacian_array(grid, gc)
        out[..., c] = gc - dt * (gc * du - dug - nu * lap_g)
    return out


def _project(grid, wh):
    """Leray projection of a list of half-spectra: w - k (k . w) / |k|^2, k=0 left alone."""
    ks = wave_vector(grid, zero_nyquist=True)
    k2 = sum(k * k for k in ks)
    safe = np.where(k2 == 0.0, 1.0, k2)
    kdotw = sum(k * w for k, w in zip(ks, wh))
    return [w - k * kdotw / safe for k, w in zip(ks, wh)]


def chorin_euler_array(grid: GridSpec, v: np.ndarray, nu: float, dt: float) -> np.ndarray:
    """One explicit Euler step of incompressible Navier-Stokes with Chorin projection.

    The whole provisional velocity is projected, so the output is divergence
    free for any input. With dt=0 the step is the identity only on solenoidal
    fields; other inputs come back as their Leray projection.
    """
    if grid.d == 1:
        return burgers_euler_array(grid, v, nu, dt)
    if v.shape[-1] != grid.d:
        raise ShapeError(f"chorin_euler_step: expects {grid.d} velocity channels, got {v.shape[-1]}")
    _check_finite("chorin_euler_step", v)
    d = grid.d
    ks = wave_vector(grid, zero_nyquist=True)
    k2 = kappa_squared(grid)
    vh = [_fwd(grid, v[..., j]) for j in range(d)]
    wh = []
    for j in range(d):
        nonlinear = sum(1j * ks[l] * _fwd(grid, v[..., j] * v[..., l]) for l in range(d))
        wh.append(vh[j] - dt * (nonlinear + nu * k2 * vh[j]))
    return np.stack([_inv(grid, w) for w in _project(grid, wh)], axis=-1)


def chorin_euler_vjp(grid: GridSpec, v: np.ndarray, g: np.ndarray, nu: float, dt: float) -> np.ndarray:
    if grid.d == 1:
        return burgers_euler_vjp(grid, v, g, nu, dt)
    d = grid.d
    h = [_inv(grid, w) for w in _project(grid, [_fwd(grid, g[..., j]) for j in range(d)])]
    hh = [_fwd(grid, hj) for hj in h]
    dh = [[_deriv(grid, hh[m], l) for l in range(d)] for m in range(d)]  # dh[m][l] = D_l h_m
    out = np.empty_like(v)
    for m in range(d):
        transport = sum(v[..., l] * dh[m][l] for l in range(d))
        stretch = sum(v[..., j] * dh[j][m] for j in range(d))
        out[..., m] = h[m] + dt * (transport + stretch) + dt * nu * laplacian_array(grid, h[m])
    return out


def burgers_euler_step(field: Field, nu: float, dt: float) -> Field:
    return Field(field.grid, burgers_euler_array(field.grid, field.values, nu, dt))


def chorin_euler_step(field: Field, nu: float, dt: float) -> Field:
    """v_{n+1} = Q(v - dt (div(v (x) v) - nu lap v)); plain Burgers step when d == 1."""
    return Field(field.grid, chorin_euler_array(field.grid, field.values, nu, dt))


# ---------------------------------------------------------------------------
# diagnostics


def shell_index(grid: GridSpec) -> np.ndarray:
    """Integer |kappa| shell of every full-spectrum mode, in fundamental units."""
    k0 = min(2.0 * np.pi / L for L in grid.lengths)
    ks = wave_vector(grid, half=False)
    return np.rint(np.sqrt(sum((k / k0) ** 2 for k in ks))).astype(np.int64)


def energy_spectrum(field: Field) -> tuple:
    """Shell-binned energy; the shells sum to the grid mean of sum_c u_c^2."""
    grid = field.grid
    uh = np.fft.fftn(field.values, axes=grid.axes, norm="ortho")
    density = np.sum(np.abs(uh) ** 2, axis=-1) / grid.size
    shells = shell_index(grid)
    energy = np.bincount(shells.ravel(), weights=density.ravel())
    return np.arange(energy.size), energy


def _series_array(series) -> np.ndarray:
    if isinstance(series, np.ndarray):
        return series
    return np.stack([f.values if isinstance(f, Field) else np.asarray(f) for f in series])


def _bin_axis(arr, axis):
    d = arr.ndim - 2
    if axis is None:
        axis = 0 if d == 1 else 1
    if not 0 <= axis < d:
        raise ValidationError(f"rms_fluctuations: bin axis {axis} out of range for {d} dims")
    return axis


def rms_fluctuations(series, axis: int | None = None) -> np.ndarray:
    """RMS of (value - time mean) per wall-normal bin and channel, shape (bins, m).

    `series` is a (T, n_1, ..., n_d, m) array or a list of Fields; the
    wall-normal axis defaults to y (axis 1) in 2D/3D and x in 1D.
    """
    arr = _series_array(series)
    if arr.shape[0] < 2:
        raise ValidationError("rms_fluctuations: needs at least two snapshots")
    axis = _bin_axis(arr, axis)
    fluct = arr - arr.mean(axis=0, keepdims=True)
    others = tuple(a + 1 for a in range(arr.ndim - 2) if a != axis)
    return np.sqrt(np.mean(fluct ** 2, axis=(0,) + others))


def mean_profile(series, axis: int | None = None) -> np.ndarray:
    """Time and cross-plane mean per wall-normal bin and channel."""
    arr = _series_array(series)
    axis = _bin_axis(arr, axis)
    others = tuple(a + 1 for a in range(arr.ndim - 2) if a != axis)
    return arr.mean(axis=(0,) + others)


def write_spectrum_csv(path, shells, energy):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["shell", "energy"])
        for s, e in zip(shells, energy):
            w.writerow([int(s), repr(float(e))])


def write_rms_csv(path, rms: np.ndarray):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["bin", "channel", "rms"])
        for b in range(rms.shape[0]):
            for c in range(rms.shape[1]):
                w.writerow([b, c, repr(float(rms[b, c]))])


# ---------------------------------------------------------------------------
# known-physics step as a tape primitive


def euler_step_op(x, grid: GridSpec, nu: float, dt: float, solver: str = "chorin"):
    """Batched explicit Euler step on a tape Var of shape (B, n_1, ..., n_d, m).

    Each sample goes through exactly the array routine used by
    `chorin_euler_step` / `burgers_euler_step`, so values agree bitwise.
    """
    diffcore._real("known-solver", x)
    if x.shape[1:-1] != grid.shape:
        raise ShapeError(f"known-solver: shape mismatch {x.shape} vs grid {grid.shape}")
    step, vjp = {
        "chorin": (chorin_euler_array, chorin_euler_vjp),
        "burgers": (burgers_euler_array, burgers_euler_vjp),
    }[solver]
    xv = x.value
    out = np.stack([step(grid, sample, nu, dt) for sample in xv])
    return x.tape.record("known-solver", (x,), out,
                         lambda g: (np.stack([vjp(grid, s, gs, nu, dt) for s, gs in zip(xv, g)]),))
