import json
import logging
import time

from poumor.config import DataConfig, ModelConfig, TrainConfig
from poumor.datagen import gen_poisson_pairs
from poumor.model import build_model
from poumor.training import evaluate, fit, pairs_to_windows

def run_bench(n, count=1000, val_count=100, epochs=20):
    spec = DataConfig(kind="poisson", n=n, count=count, val_count=val_count, seed=0)
    train = gen_poisson_pairs(spec, count, 0)
    val = gen_poisson_pairs(spec, val_count, count)
    # predefined gates: expert 0 on the quarter disk, the zero expert off it
    model = build_model(train.grid, 1, ModelConfig(experts=1, zero_expert=True, gating="domain"))
    cfg = TrainConfig(lr=1e-3, batch_size=8, warmup_steps=100, epochs=epochs)

    start = time.perf_counter()
    result = fit(model, pairs_to_windows(train.inputs, train.targets, train.masks), cfg)
    ms = (time.perf_counter() - start) * 1000
    scores = evaluate(model, result.params, pairs_to_windows(val.inputs, val.targets, val.masks))
    return [{"test": "Quarter-Disk Poisson", "implementation": "domain gates", "n": n, "time_ms": ms,
             "iters": result.step, "metric": "val_relative_rmse", "value": scores["relative_rmse"]}]

if __name__ == "__main__":
    logging.basicConfig(level=logging.WARNING)
    print(json.dumps(run_bench(64), indent=2))
