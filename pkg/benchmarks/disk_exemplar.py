import json
import logging
import time

import numpy as np

from poumor.config import DataConfig, ModelConfig, TrainConfig
from poumor.datagen import gen_disk_pairs
from poumor.gating import gate_weights
from poumor.model import build_model
from poumor.training import evaluate, fit, pairs_to_windows

def run_bench(n, count=500, val_count=100, epochs=40):
    spec = DataConfig(n=n, count=count, val_count=val_count, seed=0)
    train = gen_disk_pairs(spec, count, 0)
    val = gen_disk_pairs(spec, val_count, count)
    model = build_model(train.grid, 1, ModelConfig(experts=2, zero_expert=True))
    cfg = TrainConfig(lr=1e-3, batch_size=8, warmup_steps=100, epochs=epochs)

    start = time.perf_counter()
    result = fit(model, pairs_to_windows(train.inputs, train.targets, train.masks), cfg)
    ms = (time.perf_counter() - start) * 1000
    scores = evaluate(model, result.params, pairs_to_windows(val.inputs, val.targets, val.masks))

    r = np.sqrt(sum(x * x for x in train.grid.mesh()))
    band = (r > 1.0) & (r < 1.1)
    zero_share = float(gate_weights(model.gating, result.params)[band, -1].mean())

    base = {"test": "Disk Exemplar", "implementation": "2 experts + zero", "n": n, "time_ms": ms,
            "iters": result.step}
    return [
        {**base, "metric": "val_r2", "value": scores["r2"]},
        {**base, "test": "Disk Zero-Expert Band", "metric": "zero_gate", "value": zero_share},
    ]

if __name__ == "__main__":
    logging.basicConfig(level=logging.WARNING)
    sizes = [32, 64]
    all_results = []
    for n in sizes:
        all_results.extend(run_bench(n))
    print(json.dumps(all_results, indent=2))
