import json
import time

import numpy as np

from poumor import diffcore as dc
from poumor.experts import MorLayer
from poumor.spectral import Field, GridSpec, chorin_euler_step

def timed(fn, iters):
    start = time.perf_counter()
    for _ in range(iters):
        fn()
    return (time.perf_counter() - start) * 1000

def run_bench(n):
    rng = np.random.default_rng(42)
    grid = GridSpec((n, n), 2 * np.pi)
    field = Field(grid, rng.normal(size=(n, n, 2)))
    results = []

    iters = 20
    ms = timed(lambda: chorin_euler_step(field, 1e-3, 1e-3), iters)
    results.append({"test": "Chorin Step", "implementation": "numpy rfftn", "n": n, "time_ms": ms, "iters": iters})

    layer = MorLayer(grid, 2, 2, hidden=(16,))
    params = layer.init(rng)
    x = rng.normal(size=(4, n, n, 2))

    def forward_backward():
        tape = dc.Tape()
        leaves = tape.leaves(params)
        out = layer.forward(tape, leaves, tape.constant(x))
        tape.backward(dc.total(dc.square(out)))

    iters = 5
    ms = timed(forward_backward, iters)
    results.append({"test": "MOR Layer Grad (B=4)", "implementation": "tape", "n": n, "time_ms": ms, "iters": iters})
    return results

if __name__ == "__main__":
    sizes = [32, 64, 128, 256]
    all_results = []
    for n in sizes:
        all_results.extend(run_bench(n))
    print(json.dumps(all_results, indent=2))
