#!/usr/bin/env python3
"""Tests for the synthetic dataset generators."""

import numpy as np
import pytest

from poumor.config import DataConfig
from poumor.datagen import (band_limited_ic, box_filter, check_nyquist, dealias, disk_mask, fd_laplacian,
                            gen_burgers_closure, gen_disk_pairs, gen_ood_pair, gen_poisson_pairs,
                            integrate_burgers, poisson_fields, quarter_disk_mask, sample_gp)
from poumor.errors import ConfigError, InstabilityError, NyquistError, ValidationError
from poumor.spectral import GridSpec

def test_gp_sample_is_seeded():
    """The same seed gives the same draw; different seeds differ."""
    grid = GridSpec.box(16, 1.25)
    a = sample_gp(grid, 0.3, 1.0, seed=4)
    assert a.shape == (16, 16)
    assert np.array_equal(a, sample_gp(grid, 0.3, 1.0, seed=4))
    assert not np.array_equal(a, sample_gp(grid, 0.3, 1.0, seed=5))
    assert np.all(np.isfinite(sample_gp(grid, 0.3, 1.0, seed=4, kernel="exp")))
    with pytest.raises(ValidationError, match="unknown kernel"):
        sample_gp(grid, kernel="matern")

def test_gp_variance():
    """Pointwise variance over many draws matches the kernel variance."""
    grid = GridSpec.box(8, 1.25, d=1)
    draws = np.stack([sample_gp(grid, 0.3, 2.0, seed=s) for s in range(4000)])
    assert np.mean(draws.var(axis=0)) == pytest.approx(2.0, rel=0.1)

def test_disk_pairs():
    """Inputs vanish off the unit disk; targets are the FD Laplacian of u^2 inside and zero past it."""
    spec = DataConfig(n=16, count=3, seed=10)
    pairs = gen_disk_pairs(spec)
    assert len(pairs) == 3 and pairs.seeds == [10, 11, 12]
    assert pairs.inputs.shape == (3, 16, 16, 1)
    r2 = sum(x * x for x in pairs.grid.mesh())
    assert not np.any(pairs.inputs[:, r2 >= 1.0])
    u = pairs.inputs[1, ..., 0]
    inside = r2 <= 1.0
    assert np.array_equal(pairs.targets[1, ..., 0][inside], fd_laplacian(u * u, pairs.grid)[inside])
    assert not np.any(pairs.targets[:, ~inside])
    assert np.array_equal(pairs.masks[0], disk_mask(pairs.grid, 1.1))

def test_disk_pairs_supervise_exterior_band():
    """The loss mask covers the band 1 < r <= 1 + exterior_band and nothing beyond."""
    spec = DataConfig(n=32, count=1, exterior_band=0.1)
    pairs = gen_disk_pairs(spec)
    r = np.sqrt(sum(x * x for x in pairs.grid.mesh()))
    band = (r > 1.0) & (r <= 1.1)
    assert band.any() and pairs.masks[0][band].all()
    assert not pairs.masks[0][r > 1.1].any()
    assert not np.any(pairs.targets[0, band])
    bare = gen_disk_pairs(DataConfig(n=32, count=1, exterior_band=0.0))
    assert np.array_equal(bare.masks[0], disk_mask(bare.grid))
    with pytest.raises(ConfigError, match="exterior_band"):
        DataConfig(exterior_band=0.5)

def test_disk_pairs_offset_reproduces_samples():
    """Sample i depends only on seed + offset + i."""
    spec = DataConfig(n=16, count=3, seed=0)
    full = gen_disk_pairs(spec)
    tail = gen_disk_pairs(spec, count=1, offset=2)
    assert np.array_equal(full.inputs[2], tail.inputs[0])

def test_fd_laplacian_eigenvalue():
    """The 3-point stencil has eigenvalue (2 cos(kh) - 2) / h^2."""
    grid = GridSpec.box(16, 1.0, d=1)
    (x,) = grid.mesh()
    u = np.sin(np.pi * x)
    h = grid.spacing[0]
    expected = (2 * np.cos(np.pi * h) - 2) / h ** 2 * u
    assert np.max(np.abs(fd_laplacian(u, grid) - expected)) < 1e-10

def test_box_filter():
    """A width-3 periodic box filter spreads a spike over three points."""
    u = np.zeros(8)
    u[0] = 3.0
    out = box_filter(u, 3)
    assert out.tolist() == pytest.approx([1.0, 1.0, 0, 0, 0, 0, 0, 1.0])
    assert out.sum() == pytest.approx(3.0)

def test_nyquist_check():
    """Too few points per wavelength is an error."""
    check_nyquist(GridSpec.box(16, 1.25), 10.0, 4.0)
    with pytest.raises(NyquistError, match="too coarse"):
        check_nyquist(GridSpec.box(8, 1.25), 10.0, 4.0)
    with pytest.raises(NyquistError):
        gen_poisson_pairs(DataConfig(kind="poisson", n=8, count=1))

def test_quarter_disk_mask():
    """The unrotated quarter disk is the first quadrant of the unit disk."""
    grid = GridSpec.box(8, 1.0)
    mask = quarter_disk_mask(grid)
    x, y = grid.mesh()
    assert np.array_equal(mask, (x * x + y * y <= 1.0) & (x >= 0) & (y >= 0))
    rotated = quarter_disk_mask(grid, np.pi)
    assert rotated[2, 2] and not rotated[6, 6]

def test_quarter_disk_area():
    """Rotated quarter-disk masks cover pi/4 of the plane."""
    grid = GridSpec.box(128, 1.25)
    for angle in (0.3, 1.1, 2.5, 4.0):
        area = quarter_disk_mask(grid, angle).sum() * np.prod(grid.spacing)
        assert area == pytest.approx(np.pi / 4, rel=0.02)

def test_poisson_fields_solve_the_pde():
    """u = div tanh(grad v) agrees with nested finite differences."""
    freqs = np.array([[2.0, 3.0], [1.5, 0.5]])
    p = np.array([0.3]), np.array([0.2])
    h = 1e-4

    def v(a, b):
        return poisson_fields(np.array([a]), np.array([b]), freqs)[0][0]

    def flux(a, b, axis):
        if axis == 0:
            return np.tanh((v(a + h, b) - v(a - h, b)) / (2 * h))
        return np.tanh((v(a, b + h) - v(a, b - h)) / (2 * h))

    a, b = p[0][0], p[1][0]
    numeric = ((flux(a + h, b, 0) - flux(a - h, b, 0)) + (flux(a, b + h, 1) - flux(a, b - h, 1))) / (2 * h)
    assert poisson_fields(*p, freqs)[1][0] == pytest.approx(numeric, abs=1e-3)

def test_poisson_pairs():
    """Targets vanish off the rotated quarter disk; inputs are extended smoothly."""
    spec = DataConfig(kind="poisson", n=32, count=2, freq_max=5.0, n_cosines=3, extend_inputs=False)
    raw = gen_poisson_pairs(spec)
    assert raw.masks.shape == (2, 32, 32)
    assert not np.any(raw.targets[~raw.masks])
    assert not np.any(raw.inputs[~raw.masks])
    assert all(0.0 <= a < 2 * np.pi for a in raw.angles)
    ext = gen_poisson_pairs(DataConfig(kind="poisson", n=32, count=2, freq_max=5.0, n_cosines=3))
    assert np.array_equal(ext.inputs[raw.masks], raw.inputs[raw.masks])
    assert np.any(ext.inputs[~ext.masks])

def test_band_limited_ic():
    """The initial condition is scaled to the requested amplitude."""
    grid = GridSpec((64,), 2 * np.pi)
    u = band_limited_ic(grid, 4, 0.5, seed=1)
    assert np.max(np.abs(u)) == pytest.approx(0.5)
    spec = np.abs(np.fft.rfft(u))
    assert np.all(spec[5:] < 1e-10)

def test_dealias():
    """Modes above n/3 are removed."""
    grid = GridSpec((24,), 2 * np.pi)
    u = np.random.default_rng(0).normal(size=(24, 1))
    out = dealias(grid, u)
    spec = np.abs(np.fft.rfft(out[:, 0]))
    assert np.all(spec[9:] < 1e-12)
    assert np.allclose(spec[:9], np.abs(np.fft.rfft(u[:, 0]))[:9])

def test_integrate_burgers_conserves_mean():
    """Burgers conserves the mean; the first snapshot is the initial condition."""
    grid = GridSpec((64,), 2 * np.pi)
    u0 = 0.2 + band_limited_ic(grid, 4, 0.5, seed=2)
    series = integrate_burgers(grid, u0, 0.02, 1e-3, 20, save_every=2)
    assert series.shape == (20, 64, 1)
    assert np.array_equal(series[0, :, 0], u0)
    assert np.allclose(series.mean(axis=(1, 2)), u0.mean(), atol=1e-12)

def test_integrate_burgers_blowup():
    """An unstable time step raises InstabilityError."""
    grid = GridSpec((16,), 2 * np.pi)
    with pytest.raises(InstabilityError, match="reached"):
        integrate_burgers(grid, band_limited_ic(grid, 4, 0.5), 0.1, 10.0, 20)

def test_burgers_closure():
    """The closure series filters then subsamples the DNS."""
    spec = DataConfig(kind="burgers", n_fine=64, stride=4, snapshots=5, nu=0.01, dt=1e-3, save_every=2)
    closure = gen_burgers_closure(spec)
    assert closure.fine.shape == (5, 64, 1)
    assert closure.coarse.shape == (5, 16, 1)
    assert closure.filter_width == 4 and closure.dt == pytest.approx(2e-3)
    assert np.array_equal(closure.coarse, closure.filtered[:, ::4])
    filtered_ic, raw_ic = gen_ood_pair(closure)
    assert np.array_equal(filtered_ic, closure.coarse[-1])
    assert np.array_equal(raw_ic, closure.fine[-1, ::4])

if __name__ == "__main__":
    pytest.main([__file__, "-v"])
