#!/usr/bin/env python3
"""Tests for the partition-of-unity gates."""

import numpy as np
import pytest

from poumor import diffcore as dc
from poumor.errors import ShapeError, ValidationError
from poumor.gating import (DomainGates, FixedGates, GatingNetwork, check_partition, embed_coords, fixed_gates,
                           gate_weights, grid_angles)
from poumor.spectral import GridSpec

GRID = GridSpec.box(8, 1.0)

def test_embed_coords():
    """The embedding is [sin, cos] of each angle."""
    out = embed_coords([0.0, np.pi / 2])
    assert out == pytest.approx([0.0, 1.0, 1.0, 0.0], abs=1e-15)
    assert embed_coords(0.0).tolist() == [0.0, 1.0]

def test_grid_angles_shape():
    """Angles run from 0 at the origin and stack the axes last."""
    theta = grid_angles(GRID)
    assert theta.shape == (8, 8, 2)
    assert theta[0, 0].tolist() == [0.0, 0.0]
    assert theta[4, 2, 0] == pytest.approx(np.pi)

def test_network_gates_start_uniform():
    """A zero output layer gives equal weights everywhere."""
    gating = GatingNetwork(GRID, 3, hidden=(5,))
    w = gate_weights(gating, gating.init(np.random.default_rng(0)))
    assert w.shape == (8, 8, 3)
    assert np.allclose(w, 1 / 3)

def test_network_gates_partition_unity():
    """Randomized gate parameters still form a partition of unity."""
    gating = GatingNetwork(GRID, 4, hidden=(6, 6))
    rng = np.random.default_rng(1)
    params = {k: rng.normal(size=v.shape) for k, v in gating.init(rng).items()}
    w = gate_weights(gating, params)
    check_partition(w)
    assert w.min() > 0.0

def test_network_gates_are_periodic_in_position():
    """Gates depend only on the torus angles, not on the box origin."""
    shifted = GridSpec((8, 8), 2.0, (5.0, -3.0))
    a, b = GatingNetwork(GRID, 2), GatingNetwork(shifted, 2)
    rng = np.random.default_rng(2)
    params = {k: rng.normal(size=v.shape) for k, v in a.init(rng).items()}
    assert np.array_equal(gate_weights(a, params), gate_weights(b, params))

def test_gating_gradient():
    """Gate parameter gradients pass the finite-difference check."""
    grid = GridSpec.box(4, 1.0, d=1)
    gating = GatingNetwork(grid, 2, hidden=(3,))
    rng = np.random.default_rng(3)
    theta = {k: rng.normal(size=v.shape) for k, v in gating.init(rng).items()}
    target = rng.uniform(size=(4, 2))

    def f(tape, p):
        return dc.total(dc.square(gating.forward(tape, p) - tape.constant(target)))

    assert dc.grad_check(f, theta).passed

def test_fixed_gates_validate():
    """Fixed gates must be nonnegative and sum to one."""
    m = np.zeros((8, 8))
    m[:4] = 1.0
    gates = fixed_gates([m, 1.0 - m])
    assert gates.n_experts == 2
    assert gate_weights(gates).shape == (8, 8, 2)
    with pytest.raises(ValidationError, match="deviates"):
        FixedGates(np.stack([m, m]))
    with pytest.raises(ValidationError, match="nonnegative"):
        FixedGates(np.stack([2.0 - m, m - 1.0]))

def test_domain_gates_follow_masks():
    """Domain gates put expert 0 inside each sample's mask."""
    masks = np.zeros((2, 8, 8), dtype=bool)
    masks[0, :2] = True
    masks[1, :, :3] = True
    w = gate_weights(DomainGates(), masks=masks)
    assert w.shape == (2, 8, 8, 2)
    assert np.array_equal(w[..., 0], masks.astype(float))
    check_partition(w)
    with pytest.raises(ValidationError, match="masks are required"):
        gate_weights(DomainGates())
    with pytest.raises(ValidationError, match="two experts"):
        DomainGates(3)

def test_check_partition_rejects():
    """A weight field that does not sum to one fails the check."""
    with pytest.raises(ValidationError, match="partition of unity"):
        check_partition(np.full((4, 2), 0.6))
    with pytest.raises(ShapeError):
        check_partition(np.ones(3))

if __name__ == "__main__":
    pytest.main([__file__, "-v"])
