import json
import logging
import time

import numpy as np
from scipy.stats import spearmanr

from poumor.config import DataConfig, ModelConfig, TrainConfig
from poumor.datagen import gen_burgers_closure, gen_ood_pair
from poumor.model import ProbabilisticField, autoregressive_step, build_model, make_windows, rollout
from poumor.spectral import Field, energy_spectrum
from poumor.training import fit, sample_weights

WINDOW = 8
HORIZON = 5 * WINDOW
POSTERIOR_SAMPLES = 10

def mean_sigma(model, params, ic):
    state = autoregressive_step(ProbabilisticField.deterministic(Field(model.grid, ic)), model, params)
    return float(np.mean(np.sqrt(state.var.values)))

def run_bench(n_fine, stride=8, snapshots=1000, epochs=20):
    spec = DataConfig(kind="burgers", n_fine=n_fine, stride=stride, snapshots=snapshots, nu=1e-3, dt=1e-3)
    closure = gen_burgers_closure(spec)
    grid = closure.coarse_grid
    mcfg = ModelConfig(experts=2, head="probabilistic", solver="burgers1d")
    model = build_model(grid, 1, mcfg, solver_dt=closure.dt, solver_nu=closure.nu)
    cfg = TrainConfig(objective="elbo", lr=1e-3, batch_size=8, warmup_steps=100, window=WINDOW, epochs=epochs)

    start = time.perf_counter()
    result = fit(model, make_windows(closure.coarse, WINDOW), cfg)
    ms = (time.perf_counter() - start) * 1000

    ic = closure.coarse[0]
    reference = energy_spectrum(Field(grid, closure.coarse[HORIZON]))[1]
    retained = model.experts[0].layers[0].keep[0]
    shells = slice(1, retained // 2 + 1)
    within, sigma_curves = 0, []
    for s in range(POSTERIOR_SAMPLES):
        theta = sample_weights(result.vp, s)
        states = rollout(Field(grid, ic), HORIZON, model, theta)
        energy = energy_spectrum(states[-1].mu)[1]
        ratio = energy[shells] / reference[shells]
        within += bool(np.all((ratio > 1 / 3) & (ratio < 3)))
        sigma_curves.append([np.mean(np.sqrt(st.var.values)) for st in states[1:]])
    trend = float(spearmanr(np.arange(HORIZON), np.mean(sigma_curves, axis=0))[0])

    filtered_ic, raw_ic = gen_ood_pair(closure)
    ood_ratio = mean_sigma(model, result.vp.mu, raw_ic) / mean_sigma(model, result.vp.mu, filtered_ic)

    base = {"test": "Burgers Closure", "implementation": "ELBO + Burgers step", "n": grid.n[0], "time_ms": ms,
            "iters": result.step}
    return [
        {**base, "metric": "spectrum_within_3x", "value": within},
        {**base, "test": "Burgers Sigma Trend", "metric": "spearman", "value": trend},
        {**base, "test": "Burgers OOD Ratio", "metric": "sigma_ood/sigma_ic", "value": ood_ratio},
    ]

if __name__ == "__main__":
    logging.basicConfig(level=logging.WARNING)
    print(json.dumps(run_bench(1024), indent=2))
