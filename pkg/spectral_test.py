#!/usr/bin/env python3
"""Tests for grids, mode truncation and the pseudo-spectral operators."""

import csv

import numpy as np
import pytest

from poumor import diffcore as dc
from poumor import spectral as sp
from poumor.errors import NonFiniteError, ShapeError, ValidationError

def torus(n=32, d=2):
    return sp.GridSpec((n,) * d, 2 * np.pi)

def taylor_green(grid):
    x, y = grid.mesh()
    return np.stack([np.sin(x) * np.cos(y), -np.cos(x) * np.sin(y)], axis=-1)

def random_velocity(grid, seed=0):
    return np.random.default_rng(seed).normal(size=grid.shape + (grid.d,))

def test_grid_validation():
    """Odd, tiny or non-positive grids are rejected."""
    with pytest.raises(ValidationError, match="even"):
        sp.GridSpec((7, 8), 1.0)
    with pytest.raises(ValidationError, match="even"):
        sp.GridSpec((2,), 1.0)
    with pytest.raises(ValidationError, match="positive"):
        sp.GridSpec((8,), 0.0)
    with pytest.raises(ValidationError, match="dimension"):
        sp.GridSpec((4, 4, 4, 4), 1.0)

def test_grid_box_and_dict():
    """A box grid covers [-a, a) and survives a dict round trip."""
    grid = sp.GridSpec.box(8, 1.25)
    assert grid.shape == (8, 8)
    assert grid.coords()[0][0] == -1.25
    assert grid.spacing == (0.3125, 0.3125)
    assert sp.GridSpec.from_dict(grid.to_dict()) == grid

def test_field_channel_axis():
    """Grid-shaped values gain a channel axis; complex values are rejected."""
    grid = torus(8)
    assert sp.Field(grid, np.zeros((8, 8))).channels == 1
    with pytest.raises(ShapeError):
        sp.Field(grid, np.zeros((8, 6, 1)))
    with pytest.raises(ValidationError, match="real"):
        sp.Field(grid, np.zeros((8, 8), dtype=complex))

def test_mode_indices():
    """Retained indices are |index| <= k in FFT order."""
    assert sp.mode_indices(8, 2).tolist() == [0, 1, 2, 6, 7]
    assert sp.mode_indices(8, 2, half=True).tolist() == [0, 1, 2]
    assert sp.mode_indices(8, 4).tolist() == list(range(8))
    with pytest.raises(ValidationError, match="exceeds n/2"):
        sp.mode_indices(8, 5)
    with pytest.raises(ValidationError, match="positive"):
        sp.mode_indices(8, 0)

def test_truncate_modes_is_a_projection():
    """Truncation is idempotent and keeps exactly the low block."""
    rng = np.random.default_rng(1)
    spec = rng.normal(size=(8, 8)) + 1j * rng.normal(size=(8, 8))
    once = sp.truncate_modes(spec, 2)
    assert np.array_equal(sp.truncate_modes(once, 2), once)
    assert np.count_nonzero(once) == 25
    assert once[3, 0] == 0 and once[6, 7] == spec[6, 7]
    assert np.array_equal(sp.truncate_modes(spec, 4), spec)

def test_derivative_of_sine():
    """d/dx sin(x) = cos(x) to machine precision."""
    grid = torus(16, 1)
    (x,) = grid.mesh()
    assert np.max(np.abs(sp.derivative(grid, np.sin(x), 0) - np.cos(x))) < 1e-12

def test_laplacian_of_mode():
    """The Laplacian of sin(2x)cos(3y) is -13 times itself."""
    grid = torus(16)
    x, y = grid.mesh()
    u = np.sin(2 * x) * np.cos(3 * y)
    lap = sp.spectral_laplacian(sp.Field(grid, u)).channel(0)
    assert np.max(np.abs(lap + 13 * u)) < 1e-11

def test_divergence_of_gradient_on_random_field():
    """div(grad f) is the Nyquist-free Laplacian for any f, and the plain one without Nyquist content."""
    grid = torus(16)
    f = sp.Field(grid, np.random.default_rng(5).normal(size=grid.shape))
    div_grad = sp.spectral_divergence(sp.spectral_gradient(f)).channel(0)
    lap = sp.spectral_laplacian(f, zero_nyquist=True).channel(0)
    assert np.max(np.abs(div_grad - lap)) < 1e-10 * np.max(np.abs(lap))

    fh = np.fft.rfftn(f.channel(0), norm="ortho")
    smooth = sp.Field(grid, np.fft.irfftn(sp.truncate_modes(fh, 7, half=True), s=grid.n, norm="ortho"))
    div_grad = sp.spectral_divergence(sp.spectral_gradient(smooth)).channel(0)
    lap = sp.spectral_laplacian(smooth).channel(0)
    assert np.max(np.abs(div_grad - lap)) < 1e-10 * np.max(np.abs(lap))

def test_wavenumbers_ordering():
    """FFT order with the Nyquist entry negative; the half spectrum keeps it positive."""
    assert np.array_equal(sp.wavenumbers(sp.GridSpec((4,), 2 * np.pi))[0], [0.0, 1.0, -2.0, -1.0])
    assert np.array_equal(sp.wavenumbers(sp.GridSpec((4,), np.pi))[0], [0.0, 2.0, -4.0, -2.0])
    assert np.array_equal(sp.half_wavenumbers(sp.GridSpec((4,), 2 * np.pi))[0], [0.0, 1.0, 2.0])

def test_truncate_modes_is_non_expansive():
    """Truncation never adds energy, and keeping every mode keeps all of it."""
    rng = np.random.default_rng(6)
    uh = np.fft.fftn(rng.normal(size=(16, 16)), norm="ortho")
    total = np.sum(np.abs(uh) ** 2)
    for k in (1, 3, 7):
        kept = sp.truncate_modes(uh, k)
        energy = np.sum(np.abs(np.fft.ifftn(kept, norm="ortho")) ** 2)
        assert energy == pytest.approx(np.sum(np.abs(kept) ** 2), rel=1e-12)
        assert energy < total
    assert np.sum(np.abs(sp.truncate_modes(uh, 8)) ** 2) == pytest.approx(total, rel=1e-14)

def test_gradient_and_divergence_shapes():
    """Gradient maps one channel to d; divergence maps d channels to one."""
    grid = torus(8)
    grad = sp.spectral_gradient(sp.Field(grid, np.ones((8, 8))))
    assert grad.channels == 2 and not np.any(np.abs(grad.values) > 1e-14)
    assert sp.spectral_divergence(grad).channels == 1
    with pytest.raises(ShapeError):
        sp.spectral_divergence(sp.Field(grid, np.ones((8, 8))))

def test_taylor_green_decays():
    """One Chorin step of Taylor-Green only decays it by (1 - 2 nu dt)."""
    grid = torus(32)
    v = taylor_green(grid)
    nu, dt = 0.05, 1e-3
    out = sp.chorin_euler_step(sp.Field(grid, v), nu, dt).values
    assert np.max(np.abs(out - (1 - 2 * nu * dt) * v)) < 1e-10

def test_chorin_zero_dt_is_identity_on_solenoidal_fields():
    """dt = 0 leaves a divergence-free velocity alone and projects any other."""
    grid = torus(16)
    v = taylor_green(grid)
    assert np.max(np.abs(sp.chorin_euler_array(grid, v, 0.1, 0.0) - v)) < 1e-13
    out = sp.chorin_euler_step(sp.Field(grid, random_velocity(grid, 7)), 0.1, 0.0)
    assert np.max(np.abs(sp.spectral_divergence(out).values)) < 1e-8

def test_chorin_shear_mode_decays_like_heat():
    """A shear mode has no advection, so it decays at rate nu |k|^2."""
    grid = torus(16)
    _, y = grid.mesh()
    v = np.stack([np.sin(3 * y), np.zeros_like(y)], axis=-1)
    nu, dt = 0.02, 1e-2
    out = sp.chorin_euler_array(grid, v, nu, dt)
    assert np.max(np.abs(out - (1 - 9 * nu * dt) * v)) < 1e-12

def test_chorin_output_is_divergence_free():
    """Any velocity becomes discretely divergence free after a step."""
    grid = torus(16)
    out = sp.chorin_euler_step(sp.Field(grid, random_velocity(grid)), 1e-2, 1e-2)
    div = sp.spectral_divergence(out).values
    assert np.max(np.abs(div)) < 1e-8

def test_chorin_rejects_wrong_channels_and_nan():
    """Chorin needs d channels and finite input."""
    grid = torus(8)
    with pytest.raises(ShapeError, match="velocity channels"):
        sp.chorin_euler_array(grid, np.zeros((8, 8, 1)), 0.1, 0.1)
    v = random_velocity(grid)
    v[0, 0, 0] = np.nan
    with pytest.raises(NonFiniteError):
        sp.chorin_euler_step(sp.Field(grid, v), 0.1, 0.1)

def test_chorin_in_1d_is_burgers():
    """With d = 1 the Chorin step is the Burgers step."""
    grid = torus(16, 1)
    (x,) = grid.mesh()
    field = sp.Field(grid, np.sin(x))
    a = sp.chorin_euler_step(field, 0.01, 0.01).values
    b = sp.burgers_euler_step(field, 0.01, 0.01).values
    assert np.array_equal(a, b)

def test_burgers_step_of_constant():
    """A constant state is a fixed point of Burgers."""
    grid = torus(8, 1)
    out = sp.burgers_euler_step(sp.Field(grid, np.full(8, 0.7)), 0.1, 0.1).values
    assert np.allclose(out, 0.7, atol=1e-14)

@pytest.mark.parametrize("solver,d,m", [("chorin", 2, 2), ("burgers", 1, 1), ("burgers", 2, 1)])
def test_known_solver_gradient(solver, d, m):
    """The solver primitive's adjoint matches finite differences."""
    grid = torus(8, d)
    rng = np.random.default_rng(2)
    w = rng.normal(size=(2,) + grid.shape + (m,))

    def f(tape, p):
        return dc.total(dc.scale(sp.euler_step_op(p["x"], grid, 0.1, 0.05, solver), w))

    report = dc.grad_check(f, rng.normal(size=(2,) + grid.shape + (m,)) * 0.5)
    assert report.passed, report.max_rel_error

def test_known_solver_primitive_matches_field_step():
    """The tape primitive gives bitwise the same values as the field step."""
    grid = torus(8)
    v = random_velocity(grid, 3)
    tape = dc.Tape()
    out = sp.euler_step_op(tape.constant(v[None]), grid, 0.1, 0.05).value[0]
    assert np.array_equal(out, sp.chorin_euler_step(sp.Field(grid, v), 0.1, 0.05).values)

def test_energy_spectrum_parseval():
    """Shell energies sum to the grid mean of |u|^2."""
    grid = torus(16)
    v = random_velocity(grid, 4)
    shells, energy = sp.energy_spectrum(sp.Field(grid, v))
    assert shells[0] == 0
    assert energy.sum() == pytest.approx(np.mean(np.sum(v ** 2, axis=-1)), rel=1e-12)

def test_energy_spectrum_single_mode():
    """A single Fourier mode lands in its own shell."""
    grid = torus(16)
    x, _ = grid.mesh()
    _, energy = sp.energy_spectrum(sp.Field(grid, np.cos(3 * x)))
    assert energy[3] == pytest.approx(0.5)
    assert energy.sum() == pytest.approx(0.5)

def test_rms_fluctuations():
    """RMS about the time mean, binned along the chosen axis."""
    grid = torus(8, 1)
    a = np.linspace(0.0, 1.0, 8)[:, None]
    series = np.stack([a, -a, a, -a])
    rms = sp.rms_fluctuations(series)
    assert rms.shape == (8, 1)
    assert np.allclose(rms[:, 0], a[:, 0])
    assert np.allclose(sp.mean_profile(series), 0.0)
    with pytest.raises(ValidationError, match="two snapshots"):
        sp.rms_fluctuations(series[:1])
    assert grid.d == 1

def test_rms_default_axis_in_2d():
    """In 2D the bins run along y."""
    series = np.zeros((3, 8, 6, 2))
    series[1, :, 2, 0] = 3.0
    rms = sp.rms_fluctuations(series)
    assert rms.shape == (6, 2)
    assert rms[2, 0] > 0 and rms[3, 0] == 0

def test_csv_writers(tmp_path):
    """Spectrum and rms CSVs have the expected headers and rows."""
    sp.write_spectrum_csv(tmp_path / "s.csv", [0, 1], [1.5, 0.25])
    sp.write_rms_csv(tmp_path / "r.csv", np.array([[1.0, 2.0]]))
    with open(tmp_path / "s.csv") as f:
        rows = list(csv.reader(f))
    assert rows == [["shell", "energy"], ["0", "1.5"], ["1", "0.25"]]
    with open(tmp_path / "r.csv") as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["bin", "channel", "rms"] and len(rows) == 3

if __name__ == "__main__":
    pytest.main([__file__, "-v"])
