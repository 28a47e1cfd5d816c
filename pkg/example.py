#!/usr/bin/env python3
"""Example usage of the poumor library."""

import logging

import numpy as np

import poumor
from poumor.config import DataConfig, ModelConfig, TrainConfig
from poumor.datagen import disk_mask, gen_burgers_closure, gen_disk_pairs
from poumor.extension import compare_extensions
from poumor.model import rollout
from poumor.spectral import chorin_euler_step, energy_spectrum, spectral_divergence
from poumor.training import evaluate, fit, pairs_to_windows


def basic():
    print("=== Fields and the Known Solver ===\n")

    # 32x32 periodic box on [-pi, pi)^2
    grid = poumor.GridSpec.box(32, np.pi)
    x, y = grid.mesh()

    # Taylor-Green vortex: divergence free, decays at rate 2*nu
    v = poumor.Field(grid, np.stack([np.sin(x) * np.cos(y), -np.cos(x) * np.sin(y)], axis=-1))
    nu, dt = 0.1, 0.01
    out = chorin_euler_step(v, nu, dt)
    ratio = out.values[..., 0].max() / v.values[..., 0].max()
    print(f"Grid: {grid.shape}, spacing {grid.spacing[0]:.4f}")
    print(f"Amplitude ratio after one step: {ratio:.6f} (expect {1 - 2 * nu * dt:.6f})")
    div = spectral_divergence(out).values
    print(f"Max |div| after projection: {np.abs(div).max():.2e}")

    shells, energy = energy_spectrum(poumor.Field(grid, v.values[..., 0]))
    print(f"Energy spectrum peaks at shell {shells[np.argmax(energy)]}\n")


def smooth_extension():
    print("=== Smooth Extension off an Irregular Domain ===\n")

    grid = poumor.GridSpec.box(32, 1.25)
    x, y = grid.mesh()
    mask = poumor.DomainMask(grid, disk_mask(grid, 1.0))
    u = np.exp(x) * np.sin(2 * y)

    result = poumor.solve_smooth_extension(u, mask, method="reduced")
    print(f"Points in domain: {mask.count} of {grid.size}")
    print(f"CG iterations: {result.iterations}, constraint residual {result.constraint_residual:.2e}")
    print(f"H1 seminorm: {result.seminorm:.4f}")

    # Compare high-frequency content against plain zero padding
    report, _ = compare_extensions(u[mask.indicator], mask, method="reduced")
    print(f"Gibbs metric: smooth {report['gibbs_smooth']:.3e}, padded {report['gibbs_padded']:.3e}\n")


def train_disk_operator():
    print("=== Training a POU Mixture (disk Laplacian) ===\n")

    spec = DataConfig(n=32, count=32, val_count=8, seed=0)
    train = gen_disk_pairs(spec, spec.count, 0)
    val = gen_disk_pairs(spec, spec.val_count, spec.count)
    print(f"Generated {len(train)} training pairs on {train.grid.shape}")

    model = poumor.build_model(train.grid, 1, ModelConfig(experts=2, width=8, hidden=[16]))
    print(f"Experts: {model.n_experts} (last one is the zero expert)")

    cfg = TrainConfig(lr=1e-3, batch_size=8, warmup_steps=4, epochs=3)
    result = fit(model, pairs_to_windows(train.inputs, train.targets, train.masks), cfg)
    for row in result.history:
        print(f"  epoch {row['epoch']} step {row['step']}: loss {row['loss']:.4g} r2 {row['r2']:.3f}")

    scores = evaluate(model, result.params, pairs_to_windows(val.inputs, val.targets, val.masks))
    print(f"Validation: r2 {scores['r2']:.3f}, wmape {scores['wmape']:.3f}\n")


def burgers_rollout():
    print("=== Autoregressive Rollout (Burgers closure) ===\n")

    closure = gen_burgers_closure(DataConfig(kind="burgers", n_fine=128, stride=4, snapshots=64,
                                             nu=1e-2, dt=1e-3))
    grid = closure.coarse_grid
    model = poumor.build_model(grid, 1, ModelConfig(experts=1, width=8, hidden=[16], solver="burgers1d"),
                               solver_dt=closure.dt, solver_nu=closure.nu)
    params = model.init(np.random.default_rng(0))

    # Untrained experts plus the known solver step
    states = rollout(poumor.Field(grid, closure.coarse[0]), 10, model, params)
    for k, state in enumerate(states[::5]):
        print(f"  step {5 * k}: max |u| = {np.abs(state.values).max():.4f}")
    print()


def main():
    logging.basicConfig(level=logging.WARNING)
    basic()
    smooth_extension()
    train_disk_operator()
    burgers_rollout()

if __name__ == "__main__":
    main()
