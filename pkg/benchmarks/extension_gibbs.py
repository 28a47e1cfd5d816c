import json
import time

import numpy as np

from poumor.config import DataConfig
from poumor.datagen import gen_poisson_pairs
from poumor.extension import DomainMask, compare_extensions, neg_laplacian, solve_smooth_extension
from poumor.spectral import GridSpec

SAMPLES = 20

def dense_oracle_error():
    """Max deviation of the CG extension from a dense KKT solve on an 8x8 grid."""
    grid = GridSpec.box(8, 1.0)
    x, y = grid.mesh()
    mask = DomainMask(grid, x ** 2 + y ** 2 <= 0.36)
    u = np.random.default_rng(7).normal(size=mask.count)
    n, m = grid.size, mask.count
    lap = np.stack([neg_laplacian(grid, e.reshape(grid.shape)).ravel() for e in np.eye(n)], axis=1)
    R = np.eye(n)[mask.indicator.ravel()]
    A = np.block([[lap, R.T], [R, np.zeros((m, m))]])
    expected = np.linalg.solve(A, np.concatenate([np.zeros(n), u]))[:n].reshape(grid.shape)
    return {method: float(np.max(np.abs(solve_smooth_extension(u, mask, method=method).values - expected)))
            for method in ("normal", "reduced")}

def run_bench(n, method):
    pairs = gen_poisson_pairs(DataConfig(kind="poisson", n=n, count=SAMPLES, extend_inputs=False))
    wins = 0
    worst_constraint = 0.0
    iterations = 0
    start = time.perf_counter()
    for u, mask in zip(pairs.inputs[..., 0], pairs.masks):
        report, _ = compare_extensions(u[mask], DomainMask(pairs.grid, mask), method=method)
        wins += report["gibbs_smooth"] < report["gibbs_padded"]
        worst_constraint = max(worst_constraint, report["constraint_residual"])
        iterations += report["iterations"]
    ms = (time.perf_counter() - start) * 1000
    base = {"test": "Smooth Extension", "implementation": method, "n": n, "time_ms": ms, "iters": iterations}
    return [
        {**base, "metric": "gibbs_wins", "value": wins},
        {**base, "test": "Extension Constraint", "metric": "max_constraint", "value": worst_constraint},
    ]

if __name__ == "__main__":
    all_results = []
    for n in [32, 64]:
        all_results.extend(run_bench(n, "reduced"))
    all_results.extend(run_bench(32, "normal"))
    for method, err in dense_oracle_error().items():
        all_results.append({"test": "Dense KKT Oracle", "implementation": method, "n": 8, "time_ms": 0.0,
                            "iters": 1, "metric": "max_abs_error", "value": err})
    print(json.dumps(all_results, indent=2))
