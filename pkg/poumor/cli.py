"""poumor command line: gen-data, train, eval, rollout, extend.

Exit codes: 0 success, 2 validation, 3 numerical failure, 4 IO.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import datagen, fieldio
from .config import Config, load_config
from .errors import ConvergenceError, NonFiniteError, PouMorError, ValidationError
from .extension import DomainMask, compare_extensions, zero_extension
from .gating import check_partition, gate_weights
from .model import ProbabilisticField, autoregressive_step, build_model, make_windows, rollout
from .spectral import (Field, GridSpec, energy_spectrum, mean_profile, rms_fluctuations,
                       write_rms_csv, write_spectrum_csv)
from .training import (Adam, VariationalParams, evaluate, fit, pairs_to_windows, sample_weights)

log = logging.getLogger("poumor")

CHECKPOINT = "checkpoint.pouf"
METRICS = "metrics.csv"


def setup_logging(verbose: int = 0, quiet: bool = False):
    level = logging.WARNING if quiet else (logging.DEBUG if verbose else logging.INFO)
    logging.basicConfig(level=level, format="%(asctime)s | %(levelname)s | %(message)s",
                        datefmt="%Y-%m-%d %H:%M:%S", force=True)


# ---------------------------------------------------------------------------
# helpers


def _config(args) -> Config:
    return load_config(args.config, args.set)


def _dataset_windows(data_dir, cfg: Config, split: str):
    """(grid, channels, windows, manifest) for a dataset directory."""
    manifest = fieldio.read_manifest(data_dir)
    if manifest.get("kind") == "burgers":
        closure = fieldio.load_closure(data_dir)
        return closure.coarse_grid, closure.coarse.shape[-1], make_windows(closure.coarse, cfg.train.window), manifest
    pairs = fieldio.load_pairs(data_dir, split)
    if len(pairs) == 0:
        raise ValidationError(f"{data_dir}: split {split!r} is empty")
    return pairs.grid, pairs.inputs.shape[-1], pairs_to_windows(pairs.inputs, pairs.targets, pairs.masks), manifest


def _model(cfg: Config, grid: GridSpec, channels: int, manifest: dict):
    return build_model(grid, channels, cfg.model, solver_dt=manifest.get("dt"), solver_nu=manifest.get("nu"))


def _checkpoint_params(table: dict, meta: dict):
    """(params used for prediction, VariationalParams or None)."""
    if meta["objective"] == "elbo":
        vp = VariationalParams.from_table(table)
        return vp.mu, vp
    return {k[6:]: v for k, v in table.items() if k.startswith("param/")}, None


def _save(path, result, cfg: Config, grid: GridSpec, channels: int, manifest: dict):
    table = result.vp.table() if result.vp is not None else {f"param/{k}": v for k, v in result.params.items()}
    table.update(result.adam.state())
    meta = {
        "objective": cfg.train.objective, "step": result.step, "epoch": result.epoch,
        "adam_t": result.adam.t, "config": cfg.to_dict(), "grid": grid.to_dict(), "channels": channels,
        "dataset": {k: manifest.get(k) for k in ("kind", "dt", "nu")},
    }
    fieldio.save_checkpoint(path, table, meta)


def _load_model(checkpoint):
    table, meta = fieldio.load_checkpoint(checkpoint)
    cfg = Config.from_dict(meta["config"])
    grid = GridSpec.from_dict(meta["grid"])
    model = _model(cfg, grid, meta["channels"], meta["dataset"])
    params, vp = _checkpoint_params(table, meta)
    return model, params, vp, cfg, meta


# ---------------------------------------------------------------------------
# commands


def cmd_gen_data(args) -> int:
    cfg = _config(args)
    spec = cfg.data
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {"kind": spec.kind, "config": cfg.to_dict()}
    if spec.kind == "burgers":
        closure = datagen.gen_burgers_closure(spec)
        manifest.update(fieldio.save_closure(out, closure))
        manifest["seeds"] = [spec.seed]
        ic, ood = datagen.gen_ood_pair(closure)
        fieldio.write_tensor(out / "ic_filtered.pouf", ic)
        fieldio.write_tensor(out / "ic_unfiltered.pouf", ood)
        print(f"burgers: {spec.snapshots} snapshots, fine {spec.n_fine} -> coarse {closure.coarse_grid.n[0]}, seed {spec.seed}")
    else:
        gen = datagen.gen_disk_pairs if spec.kind == "disk" else datagen.gen_poisson_pairs
        train = gen(spec, spec.count, 0)
        manifest["grid"] = train.grid.to_dict()
        manifest["splits"] = {"train": fieldio.save_pairs(out, "train", train)}
        if spec.val_count:
            manifest["splits"]["val"] = fieldio.save_pairs(out, "val", gen(spec, spec.val_count, spec.count))
        print(f"{spec.kind}: {len(train)} train / {spec.val_count} val pairs, seeds from {spec.seed}")
    fieldio.write_manifest(out, manifest)
    print(f"wrote {out}")
    return 0


def cmd_train(args) -> int:
    cfg = _config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    grid, channels, windows, manifest = _dataset_windows(args.data, cfg, "train")
    model = _model(cfg, grid, channels, manifest)
    params = vp = adam = None
    start_step = start_epoch = 0
    if args.resume:
        table, meta = fieldio.load_checkpoint(args.resume)
        params, vp = _checkpoint_params(table, meta)
        adam = Adam(cfg.train.beta1, cfg.train.beta2, cfg.train.eps)
        adam.load(table, meta["adam_t"])
        start_step, start_epoch = meta["step"], meta["epoch"]
        log.info("resuming from %s at step %d", args.resume, start_step)
    try:
        result = fit(model, windows, cfg.train, params=params, vp=vp, adam=adam, start_step=start_step,
                     start_epoch=start_epoch, metrics_path=out / METRICS)
    except NonFiniteError as e:
        if e.last_good is not None:
            good = e.last_good
            if cfg.train.objective != "elbo":
                good = {f"param/{k}": v for k, v in good.items()}
            fieldio.save_checkpoint(out / "last_good.pouf", good,
                                    {"objective": cfg.train.objective, "config": cfg.to_dict()})
            log.error("saved last good parameters to %s", out / "last_good.pouf")
        raise
    _save(out / CHECKPOINT, result, cfg, grid, channels, manifest)
    last = result.history[-1]
    print(f"trained {len(windows)} windows to step {result.step}: loss {last['loss']:.6g}, r2 {last['r2']:.6f}")
    print(f"wrote {out / CHECKPOINT} and {out / METRICS}")
    return 0


def cmd_eval(args) -> int:
    model, params, vp, cfg, meta = _load_model(args.checkpoint)
    grid, channels, windows, manifest = _dataset_windows(args.data, cfg, args.split)
    if grid != model.grid or channels != model.channels:
        raise ValidationError(f"eval: dataset grid {grid.shape}x{channels} does not match checkpoint "
                              f"{model.grid.shape}x{model.channels}")
    scores = evaluate(model, params, windows, cfg.train.batch_size)
    if args.gates_dir:
        gates_dir = Path(args.gates_dir)
        gates_dir.mkdir(parents=True, exist_ok=True)
        masks = None if windows[0].mask is None else windows[0].mask[None]
        weights = gate_weights(model.gating, params, masks)
        if weights.ndim == model.grid.d + 2:
            weights = weights[0]
        check_partition(weights)
        for i in range(weights.shape[-1]):
            fieldio.write_tensor(gates_dir / f"gate_{i}.pouf", weights[..., i])
        scores["gates"] = weights.shape[-1]
    text = json.dumps(scores, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return 0


def _read_ic(path, grid: GridSpec) -> np.ndarray:
    ic = fieldio.read_tensor(path).astype(np.float64)
    if ic.shape == grid.shape:
        ic = ic[..., None]
    if ic.shape[:-1] != grid.shape:
        raise ValidationError(f"rollout: initial condition shape {ic.shape} does not match grid {grid.shape}")
    return ic


def _mean_sigma(model, params, ic: np.ndarray) -> float:
    state = autoregressive_step(ProbabilisticField.deterministic(Field(model.grid, ic)), model, params)
    return float(np.mean(np.sqrt(state.var.values)))


def cmd_rollout(args) -> int:
    model, params, vp, cfg, meta = _load_model(args.checkpoint)
    steps = args.steps or cfg.rollout.steps
    samples = args.samples or cfg.rollout.samples
    if samples > 1 and vp is None:
        raise ValidationError("rollout: more than one sample needs a probabilistic (elbo) checkpoint")
    grid = model.grid
    ic = _read_ic(args.ic, grid)
    ood = _read_ic(args.ood_ic, grid) if args.ood_ic else None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dt = model.solver.dt if model.solver.active else meta["dataset"].get("dt")
    sigmas = {"ic": [], "ood": []}
    for s in range(samples):
        theta = sample_weights(vp, cfg.rollout.seed + s) if samples > 1 else params
        states = rollout(Field(grid, ic), steps, model, theta)
        sample_dir = out / f"sample_{s:03d}"
        sample_dir.mkdir(exist_ok=True)
        means = []
        for t, state in enumerate(states):
            if model.probabilistic:
                fieldio.write_tensor(sample_dir / f"step_{t:05d}.pouf", state.mu.values)
                fieldio.write_tensor(sample_dir / f"var_{t:05d}.pouf", state.var.values)
                means.append(state.mu.values)
            else:
                fieldio.write_tensor(sample_dir / f"step_{t:05d}.pouf", state.values)
                means.append(state.values)
        series = np.stack(means)
        fieldio.write_manifest(sample_dir, {"dt": dt, "steps": steps, "channels": model.channels,
                                            "grid": grid.to_dict()})
        shells, energy = energy_spectrum(Field(grid, series[-1]))
        write_spectrum_csv(sample_dir / "spectrum.csv", shells, energy)
        write_rms_csv(sample_dir / "rms.csv", rms_fluctuations(series, cfg.rollout.bin_axis))
        write_rms_csv(sample_dir / "mean.csv", mean_profile(series, cfg.rollout.bin_axis))
        if model.probabilistic:
            with open(sample_dir / "sigma.csv", "w", newline="") as f:
                w = csv.writer(f)
                w.writerow(["step", "mean_sigma"])
                for t, state in enumerate(states):
                    w.writerow([t, repr(float(np.mean(np.sqrt(state.var.values))))])
            sigmas["ic"].append(_mean_sigma(model, theta, ic))
            if ood is not None:
                sigmas["ood"].append(_mean_sigma(model, theta, ood))
    if ood is not None:
        if not model.probabilistic:
            raise ValidationError("rollout: an OOD report needs a probabilistic head")
        report = {"mean_sigma_ic": float(np.mean(sigmas["ic"])), "mean_sigma_ood": float(np.mean(sigmas["ood"]))}
        report["ratio"] = report["mean_sigma_ood"] / report["mean_sigma_ic"] if report["mean_sigma_ic"] > 0 else None
        (out / "ood.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
        print(f"ood: mean sigma {report['mean_sigma_ood']:.4g} vs in-distribution {report['mean_sigma_ic']:.4g}")
    print(f"wrote {samples} trajectories of {steps} steps to {out}")
    return 0


def cmd_extend(args) -> int:
    cfg = _config(args)
    ext = cfg.extension
    u = fieldio.read_tensor(args.field).astype(np.float64)
    indicator = fieldio.read_tensor(args.mask).astype(bool)
    if u.ndim == indicator.ndim + 1 and u.shape[-1] == 1:
        u = u[..., 0]
    lengths = args.length if args.length else [2.0 * np.pi]
    grid = GridSpec(u.shape, tuple(lengths))
    mask = DomainMask(grid, indicator)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        report, result = compare_extensions(u[indicator], mask, ext.cutoff, tol=ext.tol, max_iters=ext.max_iters,
                                            method=ext.method, preconditioner=ext.preconditioner,
                                            constraint_tol=ext.constraint_tol)
    except ConvergenceError as e:
        with open(out / "residual_history.csv", "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["iteration", "residual"])
            for i, r in enumerate(e.residual_history, 1):
                w.writerow([i, repr(r)])
        raise
    fieldio.write_tensor(out / "extended.pouf", result.values)
    fieldio.write_tensor(out / "padded.pouf", zero_extension(u[indicator], mask))
    (out / "diagnostics.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    print(f"extended {mask.count} points: seminorm {result.seminorm:.6g}, {result.iterations} iterations, "
          f"gibbs {report['gibbs_smooth']:.4g} vs padded {report['gibbs_padded']:.4g}")
    return 0


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="poumor", description="POU mixtures of MOR-Physics operators")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    parser.add_argument("-q", "--quiet", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def configured(name, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", default=None, help="YAML config file")
        p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                       help="override a config key (repeatable)")
        return p

    p = configured("gen-data", "generate a dataset directory")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = configured("train", "train a model on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--resume", default=None, help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="masked metrics of a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="val")
    p.add_argument("--out", default=None, help="metrics JSON path")
    p.add_argument("--gates-dir", default=None, help="write per-expert gate weights here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("rollout", help="autoregressive rollouts from an initial condition")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--ic", required=True)
    p.add_argument("--ood-ic", default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--samples", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_rollout)

    p = configured("extend", "smooth extension of a field off a mask")
    p.add_argument("--field", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--length", type=float, nargs="+", default=None, help="torus period(s), default 2pi")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_extend)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(args.verbose, args.quiet)
    try:
        return args.func(args)
    except PouMorError as e:
        log.error("%s: %s", type(e).__name__, e)
        return e.exit_code
    except OSError as e:
        log.error("IO error: %s", e)
        return 4


if __name__ == "__main__":
    sys.exit(main())
