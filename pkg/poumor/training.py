"""Least-squares and mean-field variational training of POU models.

Parameters are a flat table name -> real ndarray. Under mean-field VI every
entry gets a Gaussian N(mu, softplus(rho)^2); a draw is assembled on the tape
as theta = mu + softplus(rho) * eps so gradients flow to (mu, rho).

Both objectives run over windows: an initial state and P targets. Plain
(u, v) pairs are windows with P = 1. The ELBO of a minibatch of B windows is

    sum_windows loglik(targets | rollout) - (B / n_windows) KL(q || p0)

so one epoch counts the KL term once.
"""

from __future__ import annotations

import csv
import logging
import os
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from . import diffcore as dc
from .config import TrainConfig
from .errors import NonFiniteError, ShapeError, ValidationError
from .model import POUModel, Window

log = logging.getLogger(__name__)

METRIC_COLUMNS = ("step", "epoch", "loss", "r2", "wmape", "kl", "loglik", "lr")
LOG_2PI = float(np.log(2.0 * np.pi))


# ---------------------------------------------------------------------------
# variational parameters


@dataclass
class VariationalParams:
    mu: dict
    rho: dict

    def __post_init__(self):
        if set(self.mu) != set(self.rho):
            raise ValidationError("variational params: mu and rho tables name different parameters")
        for k in self.mu:
            if np.shape(self.mu[k]) != np.shape(self.rho[k]):
                raise ShapeError(f"variational params: shape mismatch for {k}: {np.shape(self.mu[k])} vs {np.shape(self.rho[k])}")

    @classmethod
    def from_params(cls, params: Mapping[str, np.ndarray], rho_init: float = -7.0) -> VariationalParams:
        return cls({k: np.array(v, dtype=np.float64) for k, v in params.items()},
                   {k: np.full(np.shape(v), float(rho_init)) for k, v in params.items()})

    def sigma(self) -> dict:
        return {k: np.logaddexp(0.0, r) for k, r in self.rho.items()}

    @property
    def size(self) -> int:
        """Number of scalars in (mu, rho): twice the deterministic count."""
        return 2 * sum(int(np.size(v)) for v in self.mu.values())

    def table(self) -> dict:
        out = {f"mu/{k}": v for k, v in self.mu.items()}
        out.update({f"rho/{k}": v for k, v in self.rho.items()})
        return out

    @classmethod
    def from_table(cls, table: Mapping[str, np.ndarray]) -> VariationalParams:
        mu = {k[3:]: v for k, v in table.items() if k.startswith("mu/")}
        rho = {k[4:]: v for k, v in table.items() if k.startswith("rho/")}
        return cls(mu, rho)


def draw_eps(vp: VariationalParams, rng: np.random.Generator) -> dict:
    return {k: rng.standard_normal(np.shape(v)) for k, v in vp.mu.items()}


def sample_weights(vp: VariationalParams, seed) -> dict:
    """theta = mu + sigma * eps with eps ~ N(0, 1) from a seeded generator."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    sigma = vp.sigma()
    return {k: vp.mu[k] + sigma[k] * e for k, e in draw_eps(vp, rng).items()}


def kl_gaussian(vp: VariationalParams, prior_std: float = 1.0) -> float:
    if not prior_std > 0:
        raise ValidationError(f"kl_gaussian: prior std must be positive, got {prior_std}")
    s2 = prior_std ** 2
    total = 0.0
    for k, sig in vp.sigma().items():
        mu = vp.mu[k]
        total += float(np.sum(np.log(prior_std / sig) + (sig ** 2 + mu ** 2) / (2.0 * s2) - 0.5))
    return total


def _leaf_tables(tape: dc.Tape, vp: VariationalParams):
    mu = {k: tape.leaf(v, f"mu/{k}") for k, v in vp.mu.items()}
    rho = {k: tape.leaf(v, f"rho/{k}") for k, v in vp.rho.items()}
    return mu, rho


def _kl_tape(tape: dc.Tape, mu: Mapping[str, dc.Var], sig: Mapping[str, dc.Var], prior_std: float) -> dc.Var:
    inv = 1.0 / (2.0 * prior_std ** 2)
    const = 0.0
    total = tape.constant(0.0)
    for k in mu:
        term = -dc.log(sig[k]) + (dc.square(sig[k]) + dc.square(mu[k])) * inv
        total = total + dc.total(term)
        const += (np.log(prior_std) - 0.5) * mu[k].value.size
    return total + const


# ---------------------------------------------------------------------------
# likelihoods, losses and metrics


def _weights(mask, shape) -> np.ndarray:
    if mask is None:
        return np.ones(shape)
    m = np.asarray(mask, dtype=np.float64)[..., None]
    try:
        return np.broadcast_to(m, shape)
    except ValueError:
        raise ShapeError(f"mask: shape mismatch {np.shape(mask)} vs {shape}") from None


def gaussian_loglik(targets, mu, var, mask=None) -> float:
    """sum over masked points of -1/2 [log(2 pi var) + (target - mu)^2 / var]."""
    targets, mu, var = (np.asarray(a, dtype=np.float64) for a in (targets, mu, var))
    if not targets.shape == mu.shape == var.shape:
        raise ShapeError(f"gaussian_loglik: shape mismatch {targets.shape} vs {mu.shape} vs {var.shape}")
    w = _weights(mask, targets.shape) > 0
    if np.any(var[w] <= 0.0):
        raise ValidationError("gaussian_loglik: variance must be positive on masked points")
    r2 = (targets[w] - mu[w]) ** 2
    return float(-0.5 * np.sum(LOG_2PI + np.log(var[w]) + r2 / var[w]))


def _loglik_tape(target: np.ndarray, mu: dc.Var, var: dc.Var, w: np.ndarray) -> dc.Var:
    if np.any(var.value[w > 0] <= 0.0):
        raise ValidationError("gaussian_loglik: variance must be positive on masked points")
    tape = mu.tape
    resid = tape.constant(target) - mu
    inner = dc.log(var) + dc.square(resid) / var
    return dc.total(dc.scale(inner, -0.5 * w)) + (-0.5 * LOG_2PI * float(w.sum()))


def _sse_tape(target: np.ndarray, pred: dc.Var, w: np.ndarray) -> dc.Var:
    resid = pred - pred.tape.constant(target)
    return dc.total(dc.scale(dc.square(resid), w))


def masked_sse(pred, target, mask=None) -> float:
    pred, target = np.asarray(pred), np.asarray(target)
    if pred.shape != target.shape:
        raise ShapeError(f"least squares: shape mismatch {pred.shape} vs {target.shape}")
    return float(np.sum(_weights(mask, target.shape) * (pred - target) ** 2))


def loss_least_squares(model: POUModel, params, inputs, targets, mask=None) -> float:
    """sum over X of |P(u_i) - v_i|^2 for a batch of pairs (inputs, targets: (B, n..., m))."""
    inputs, targets = np.asarray(inputs), np.asarray(targets)
    if inputs.shape[0] != targets.shape[0]:
        raise ShapeError(f"least squares: shape mismatch {inputs.shape} vs {targets.shape}")
    tape = dc.Tape()
    leaves = {k: tape.constant(v) for k, v in params.items()}
    pred = model.mixture(tape, leaves, tape.constant(inputs), mask)
    return masked_sse(pred.value[..., :targets.shape[-1]], targets, mask)


def _masked(pred, target, mask):
    pred, target = np.asarray(pred, dtype=np.float64), np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"metrics: shape mismatch {pred.shape} vs {target.shape}")
    w = _weights(mask, target.shape) > 0
    if not np.any(w):
        raise ValidationError("metrics: mask selects no points")
    return pred[w], target[w]


def metrics_r2_wmape(pred, target, mask=None) -> tuple:
    """(R^2, wMAPE) over masked points; NaN where the denominator vanishes."""
    p, t = _masked(pred, target, mask)
    sse = float(np.sum((p - t) ** 2))
    sst = float(np.sum((t - t.mean()) ** 2))
    denom = float(np.sum(np.abs(t)))
    r2 = 1.0 - sse / sst if sst > 0 else float("nan")
    wmape = float(np.sum(np.abs(p - t))) / denom if denom > 0 else float("nan")
    return r2, wmape


def relative_rmse(pred, target, mask=None) -> float:
    p, t = _masked(pred, target, mask)
    norm = float(np.sum(t ** 2))
    return float(np.sqrt(np.sum((p - t) ** 2) / norm)) if norm > 0 else float("nan")


# ---------------------------------------------------------------------------
# windows and objectives


def pairs_to_windows(inputs, targets, masks=None) -> list:
    inputs, targets = np.asarray(inputs), np.asarray(targets)
    if inputs.shape[0] != targets.shape[0]:
        raise ShapeError(f"pairs: shape mismatch {inputs.shape} vs {targets.shape}")
    return [Window(i, inputs[i], targets[i][None], None if masks is None else np.asarray(masks[i]))
            for i in range(inputs.shape[0])]


def _stack(windows):
    lengths = {w.length for w in windows}
    if len(lengths) != 1:
        raise ShapeError(f"windows: mixed lengths {sorted(lengths)} in one batch")
    initial = np.stack([w.initial for w in windows])
    targets = np.stack([w.targets for w in windows], axis=1)  # (P, B, n..., m)
    has_mask = [w.mask is not None for w in windows]
    if any(has_mask) and not all(has_mask):
        raise ValidationError("windows: masks given for some windows only")
    masks = np.stack([w.mask for w in windows]) if all(has_mask) else None
    return initial, targets, masks


def _initial_state(tape, model, initial):
    if model.probabilistic:
        return tape.constant(initial), tape.constant(np.zeros_like(initial))
    return tape.constant(initial)


def _window_terms(tape, model, theta, windows, likelihood: bool):
    """Unroll a batch of windows; returns (sse Var, loglik Var or None)."""
    initial, targets, masks = _stack(windows)
    state = _initial_state(tape, model, initial)
    sse = tape.constant(0.0)
    ll = tape.constant(0.0) if likelihood else None
    for s in range(targets.shape[0]):
        state = model.step(tape, theta, state, masks)
        mu = state[0] if model.probabilistic else state
        w = _weights(masks, targets[s].shape)
        sse = sse + _sse_tape(targets[s], mu, w)
        if likelihood:
            ll = ll + _loglik_tape(targets[s], mu, state[1], w)
    return sse, ll


def elbo_terms(tape: dc.Tape, model: POUModel, mu: Mapping[str, dc.Var], rho: Mapping[str, dc.Var],
               eps: Mapping[str, np.ndarray], windows: list, prior_std: float, n_windows: int) -> tuple:
    """(elbo, loglik, kl) Vars for one reparameterized draw over a minibatch of windows.

    elbo = loglik - (B / n_windows) kl with theta = mu + softplus(rho) * eps.
    """
    sig = {k: dc.softplus(r) for k, r in rho.items()}
    theta = {k: mu[k] + dc.scale(sig[k], eps[k]) for k in mu}
    _, ll = _window_terms(tape, model, theta, windows, likelihood=True)
    kl = _kl_tape(tape, mu, sig, prior_std)
    return ll - kl * (len(windows) / n_windows), ll, kl


def elbo_window(model: POUModel, vp: VariationalParams, window, prior_std: float = 1.0,
                seed=0, n_windows: int = 1) -> float:
    """One-sample ELBO estimate for a window (or list of windows)."""
    windows = window if isinstance(window, list) else [window]
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    tape = dc.Tape()
    mu, rho = _leaf_tables(tape, vp)
    elbo, _, _ = elbo_terms(tape, model, mu, rho, draw_eps(vp, rng), windows, prior_std, n_windows)
    return float(elbo.value)


def predict_windows(model: POUModel, params, windows, batch_size: int = 16) -> np.ndarray:
    """Mean predictions for every window step, shape (N, P, n..., m)."""
    out = []
    for start in range(0, len(windows), batch_size):
        batch = windows[start:start + batch_size]
        initial, targets, masks = _stack(batch)
        tape = dc.Tape()
        leaves = {k: tape.constant(v) for k, v in params.items()}
        state = _initial_state(tape, model, initial)
        preds = []
        for _ in range(targets.shape[0]):
            state = model.step(tape, leaves, state, masks)
            preds.append((state[0] if model.probabilistic else state).value)
        out.append(np.stack(preds, axis=1))
    return np.concatenate(out)


def evaluate(model: POUModel, params, windows, batch_size: int = 16) -> dict:
    pred = predict_windows(model, params, windows, batch_size)
    target = np.stack([w.targets for w in windows])
    mask = None
    if windows[0].mask is not None:
        mask = np.stack([w.mask for w in windows])[:, None]
    r2, wmape = metrics_r2_wmape(pred, target, mask)
    return {"r2": r2, "wmape": wmape, "relative_rmse": relative_rmse(pred, target, mask),
            "count": len(windows)}


# ---------------------------------------------------------------------------
# optimizer


def global_norm(grads: Mapping[str, np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def clip_by_global_norm(grads: Mapping[str, np.ndarray], max_norm: float) -> tuple:
    norm = global_norm(grads)
    if norm <= max_norm or norm == 0.0:
        return dict(grads), norm
    factor = max_norm / norm
    return {k: g * factor for k, g in grads.items()}, norm


def warmup_lr(step: int, base: float, warmup_steps: int) -> float:
    """Linear ramp to `base` over warmup_steps, constant afterwards."""
    if warmup_steps <= 0:
        return base
    return base * min(1.0, (step + 1) / warmup_steps)


class Adam:
    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: dict = {}
        self.v: dict = {}

    def step(self, params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray], lr: float) -> dict:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        out = {}
        for k, p in params.items():
            g = grads[k]
            m = b1 * self.m.get(k, np.zeros_like(p)) + (1.0 - b1) * g
            v = b2 * self.v.get(k, np.zeros_like(p)) + (1.0 - b2) * g * g
            self.m[k], self.v[k] = m, v
            mhat = m / (1.0 - b1 ** self.t)
            vhat = v / (1.0 - b2 ** self.t)
            out[k] = p - lr * mhat / (np.sqrt(vhat) + self.eps)
        return out

    def state(self) -> dict:
        table = {f"adam_m/{k}": v for k, v in self.m.items()}
        table.update({f"adam_v/{k}": v for k, v in self.v.items()})
        return table

    def load(self, table: Mapping[str, np.ndarray], t: int):
        self.m = {k[7:]: v for k, v in table.items() if k.startswith("adam_m/")}
        self.v = {k[7:]: v for k, v in table.items() if k.startswith("adam_v/")}
        self.t = int(t)


# ---------------------------------------------------------------------------
# fit


@dataclass
class FitResult:
    params: dict
    vp: VariationalParams | None
    adam: Adam
    step: int
    epoch: int
    history: list = field(default_factory=list)


def _flat(objective, params, vp):
    return vp.table() if objective == "elbo" else dict(params)


def _unflat(objective, table):
    if objective == "elbo":
        vp = VariationalParams.from_table(table)
        return vp.mu, vp
    return dict(table), None


def fit(model: POUModel, windows: list, cfg: TrainConfig, params: Mapping[str, np.ndarray] | None = None,
        vp: VariationalParams | None = None, adam: Adam | None = None, start_step: int = 0,
        start_epoch: int = 0, metrics_path=None) -> FitResult:
    """Minibatch Adam with global-norm clipping and linear warmup.

    Resuming passes the stored params/vp, optimizer state and counters; the
    epoch shuffle and the weight noise are seeded from (seed, epoch).
    """
    if not windows:
        raise ValidationError("fit: empty dataset")
    objective = cfg.objective
    if objective == "elbo" and not model.probabilistic:
        raise ValidationError("fit: the elbo objective needs a probabilistic head")
    if params is None and vp is None:
        params = model.init(np.random.default_rng(cfg.seed))
    if objective == "elbo" and vp is None:
        vp = VariationalParams.from_params(params, cfg.rho_init)
    if objective == "elbo":
        params = vp.mu
    adam = adam or Adam(cfg.beta1, cfg.beta2, cfg.eps)
    table = _flat(objective, params, vp)
    n_windows = len(windows)
    step = start_step
    history = []

    writer_file = None
    if metrics_path is not None:
        fresh = not os.path.exists(metrics_path) or start_step == 0
        writer_file = open(metrics_path, "w" if fresh else "a", newline="")
        writer = csv.writer(writer_file)
        if fresh:
            writer.writerow(METRIC_COLUMNS)
    try:
        for epoch in range(start_epoch, start_epoch + cfg.epochs):
            rng = np.random.default_rng([cfg.seed, epoch])
            order = rng.permutation(n_windows)
            losses, kls, lls = [], [], []
            lr = warmup_lr(step, cfg.lr, cfg.warmup_steps)
            for start in range(0, n_windows, cfg.batch_size):
                batch = [windows[i] for i in order[start:start + cfg.batch_size]]
                lr = warmup_lr(step, cfg.lr, cfg.warmup_steps)
                tape = dc.Tape()
                if objective == "elbo":
                    cur = VariationalParams.from_table(table)
                    mu, rho = _leaf_tables(tape, cur)
                    elbo, ll, kl = elbo_terms(tape, model, mu, rho, draw_eps(cur, rng), batch,
                                              cfg.prior_std, n_windows)
                    loss = -elbo
                    kls.append(float(kl.value))
                    lls.append(float(ll.value))
                else:
                    theta = tape.leaves(table)
                    loss, _ = _window_terms(tape, model, theta, batch, likelihood=False)
                value = float(loss.value)
                grads = tape.backward(loss).named()
                if not np.isfinite(value) or not all(np.all(np.isfinite(g)) for g in grads.values()):
                    raise NonFiniteError(f"fit: non-finite loss at step {step}", last_good=dict(table))
                grads, _ = clip_by_global_norm({k: grads[k] for k in table}, cfg.clip_norm)
                table = adam.step(table, grads, lr)
                step += 1
                losses.append(value)

            current, _ = _unflat(objective, table)
            scores = evaluate(model, current, windows, cfg.batch_size)
            row = {
                "step": step, "epoch": epoch, "loss": float(np.mean(losses)),
                "r2": scores["r2"], "wmape": scores["wmape"],
                "kl": float(np.mean(kls)) if kls else "",
                "loglik": float(np.mean(lls)) if lls else "",
                "lr": lr,
            }
            history.append(row)
            log.info("epoch %d step %d loss %.6g r2 %.6f wmape %.4g lr %.3g",
                     epoch, step, row["loss"], row["r2"], row["wmape"], lr)
            if writer_file is not None:
                writer.writerow([_fmt(row[c]) for c in METRIC_COLUMNS])
                writer_file.flush()
    finally:
        if writer_file is not None:
            writer_file.close()

    params, vp = _unflat(objective, table)
    return FitResult(params, vp, adam, step, start_epoch + cfg.epochs, history)


def _fmt(value):
    if isinstance(value, float):
        return repr(value)
    return value
