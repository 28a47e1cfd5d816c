"""POU mixture of experts with an optional probabilistic head and known solver.

    P(u)(x) = sum_i G_i(x) N_i(u)(x)

The autoregressive update is u_{n+1} = P(M(u_n)) where M is one explicit
Euler step of the known physics. With the probabilistic head the experts see
(mu, sigma^2) channels and emit (mu, rho) channels, sigma^2 = softplus(rho)^2;
only mu goes through M.

Tape-level methods take batched Vars of shape (B, n_1..n_d, c). The
Field-level functions at the bottom wrap them for single samples.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import diffcore as dc
from .errors import InstabilityError, ShapeError, ValidationError
from .experts import MorExpert, ZeroExpert
from .gating import DomainGates, FixedGates, GatingNetwork
from .spectral import Field, GridSpec, burgers_euler_array, chorin_euler_array, euler_step_op

log = logging.getLogger(__name__)

BLOWUP = 1e6


@dataclass(frozen=True)
class KnownSolver:
    """Descriptor of the embedded physics step: none | burgers1d | chorin2d."""

    kind: str = "none"
    nu: float = 0.0
    dt: float = 0.0

    def __post_init__(self):
        if self.kind not in ("none", "burgers1d", "chorin2d"):
            raise ValidationError(f"known solver: unknown kind {self.kind!r}")

    @property
    def active(self) -> bool:
        return self.kind != "none"

    def _check(self, values):
        peak = float(np.max(np.abs(values))) if values.size else 0.0
        if not np.isfinite(peak) or peak > BLOWUP:
            raise InstabilityError(f"known solver: |u| reached {peak:.3g}, explicit step unstable")

    def apply(self, grid: GridSpec, values: np.ndarray) -> np.ndarray:
        if not self.active:
            return values
        step = burgers_euler_array if self.kind == "burgers1d" else chorin_euler_array
        out = step(grid, values, self.nu, self.dt)
        self._check(out)
        return out

    def op(self, grid: GridSpec, x: dc.Var) -> dc.Var:
        if not self.active:
            return x
        out = euler_step_op(x, grid, self.nu, self.dt, "burgers" if self.kind == "burgers1d" else "chorin")
        self._check(out.value)
        return out


@dataclass
class ProbabilisticField:
    mu: Field
    var: Field

    def __post_init__(self):
        if self.mu.values.shape != self.var.values.shape:
            raise ShapeError(f"probabilistic field: shape mismatch {self.mu.values.shape} vs {self.var.values.shape}")
        if np.any(self.var.values < 0.0):
            raise ValidationError("probabilistic field: negative variance")

    @classmethod
    def deterministic(cls, mu: Field) -> ProbabilisticField:
        return cls(mu, Field(mu.grid, np.zeros_like(mu.values)))


class POUModel:
    """Gates plus experts; `channels` is the physical channel count m."""

    def __init__(self, grid: GridSpec, channels: int, experts, gating,
                 head: str = "deterministic", solver: KnownSolver | None = None):
        if head not in ("deterministic", "probabilistic"):
            raise ValidationError(f"model: unknown head {head!r}")
        self.grid = grid
        self.channels = channels
        self.experts = list(experts)
        self.gating = gating
        self.head = head
        self.solver = solver or KnownSolver()
        if gating.n_experts != len(self.experts):
            raise ShapeError(f"model: {gating.n_experts} gates for {len(self.experts)} experts")
        if self.solver.kind == "chorin2d" and channels != grid.d:
            raise ShapeError(f"model: chorin2d needs {grid.d} velocity channels, got {channels}")

    @property
    def probabilistic(self) -> bool:
        return self.head == "probabilistic"

    @property
    def io_channels(self) -> int:
        return 2 * self.channels if self.probabilistic else self.channels

    @property
    def n_experts(self) -> int:
        return len(self.experts)

    def init(self, rng: np.random.Generator) -> dict:
        params = self.gating.init(rng)
        for expert in self.experts:
            params.update(expert.init(rng))
        return params

    # -- tape level ---------------------------------------------------------

    def gates(self, tape: dc.Tape, params: Mapping[str, dc.Var], masks=None) -> dc.Var:
        return self.gating.forward(tape, params, masks)

    def mixture(self, tape: dc.Tape, params: Mapping[str, dc.Var], x: dc.Var, masks=None) -> dc.Var:
        gates = self.gates(tape, params, masks)
        out_shape = x.shape[:-1] + (self.io_channels,)
        pieces = dc.split(gates, [1] * self.n_experts, axis=-1)
        total = None
        for gate, expert in zip(pieces, self.experts):
            term = dc.broadcast(gate, out_shape) * expert.forward(tape, params, x)
            total = term if total is None else total + term
        return total

    def step(self, tape: dc.Tape, params, state, masks=None):
        """One autoregressive update; state is a Var or a (mu, var) pair of Vars."""
        if not self.probabilistic:
            return self.mixture(tape, params, self.solver.op(self.grid, state), masks)
        mu, var = state
        advanced = self.solver.op(self.grid, mu)
        out = self.mixture(tape, params, dc.concat([advanced, var], axis=-1), masks)
        mu_next, rho = dc.split(out, [self.channels, self.channels], axis=-1)
        return mu_next, dc.square(dc.softplus(rho))

    def unroll(self, tape: dc.Tape, params, state, steps: int, masks=None) -> list:
        states = [state]
        for _ in range(steps):
            states.append(self.step(tape, params, states[-1], masks))
        return states


def sigma_squared(rho) -> np.ndarray:
    """(log(1 + e^rho))^2."""
    return np.square(np.logaddexp(0.0, rho))


# ---------------------------------------------------------------------------
# model construction from config


def build_model(grid: GridSpec, channels: int, cfg, solver_dt: float | None = None,
                solver_nu: float | None = None) -> POUModel:
    """Assemble a POUModel from a ModelConfig."""
    io = 2 * channels if cfg.head == "probabilistic" else channels
    experts = [
        MorExpert(grid, io, io, prefix=f"expert{i}.", n_layers=cfg.n_layers, width=cfg.width,
                  keep=cfg.keep, hidden=tuple(cfg.hidden), g_param=cfg.g_param, skip_last=cfg.skip_last)
        for i in range(cfg.experts)
    ]
    if cfg.zero_expert:
        experts.append(ZeroExpert(io, prefix=f"expert{len(experts)}."))
    if cfg.gating == "network":
        gating = GatingNetwork(grid, len(experts), hidden=tuple(cfg.gate_hidden))
    elif cfg.gating == "domain":
        gating = DomainGates(len(experts))
    else:
        if len(experts) != 1:
            raise ValidationError("model: fixed gates from config support a single expert; pass masks in code")
        gating = FixedGates(np.ones((1,) + grid.shape))
    solver = KnownSolver()
    if cfg.solver != "none":
        nu = cfg.nu if cfg.nu is not None else solver_nu
        dt = cfg.dt if cfg.dt is not None else solver_dt
        if nu is None or dt is None:
            raise ValidationError(f"model: solver {cfg.solver} needs nu and dt")
        solver = KnownSolver(cfg.solver, float(nu), float(dt))
    return POUModel(grid, channels, experts, gating, head=cfg.head, solver=solver)


# ---------------------------------------------------------------------------
# Field-level operations


def _consts(tape, params):
    return {k: tape.constant(v) for k, v in params.items()}


def _mask_batch(mask):
    return None if mask is None else np.asarray(mask)[None]


def apply_pou(u: Field, model: POUModel, params: Mapping[str, np.ndarray], mask=None) -> Field:
    tape = dc.Tape()
    out = model.mixture(tape, _consts(tape, params), tape.constant(u.values[None]), _mask_batch(mask))
    return Field(u.grid, out.value[0])


def predict_probabilistic(u: ProbabilisticField, model: POUModel, params, mask=None) -> ProbabilisticField:
    """Mixture output split into mu and rho, sigma^2 = softplus(rho)^2 (no solver step)."""
    if not model.probabilistic:
        raise ValidationError("predict_probabilistic: model has a deterministic head")
    tape = dc.Tape()
    x = np.concatenate([u.mu.values, u.var.values], axis=-1)[None]
    out = model.mixture(tape, _consts(tape, params), tape.constant(x), _mask_batch(mask)).value[0]
    m = model.channels
    return ProbabilisticField(Field(u.mu.grid, out[..., :m]), Field(u.mu.grid, sigma_squared(out[..., m:])))


def known_solver_step(u: Field, descriptor: KnownSolver) -> Field:
    if not descriptor.active:
        raise ValidationError("known_solver_step: descriptor is 'none'")
    return Field(u.grid, descriptor.apply(u.grid, u.values))


def autoregressive_step(u, model: POUModel, params, mask=None):
    """u_{n+1} = P(M(u_n)); u is a Field or, for probabilistic models, a ProbabilisticField."""
    tape = dc.Tape()
    leaves = _consts(tape, params)
    masks = _mask_batch(mask)
    if model.probabilistic:
        if isinstance(u, Field):
            u = ProbabilisticField.deterministic(u)
        mu, var = model.step(tape, leaves, (tape.constant(u.mu.values[None]), tape.constant(u.var.values[None])), masks)
        grid = u.mu.grid
        return ProbabilisticField(Field(grid, mu.value[0]), Field(grid, var.value[0]))
    out = model.step(tape, leaves, tape.constant(u.values[None]), masks)
    return Field(u.grid, out.value[0])


def rollout(u, p: int, model: POUModel, params, mask=None) -> list:
    """p + 1 states starting with u."""
    if p < 1:
        raise ValidationError(f"rollout: p must be >= 1, got {p}")
    if model.probabilistic and isinstance(u, Field):
        u = ProbabilisticField.deterministic(u)
    states = [u]
    for n in range(p):
        states.append(autoregressive_step(states[-1], model, params, mask))
        log.debug("rollout: step %d/%d", n + 1, p)
    return states


@dataclass
class Window:
    start: int
    initial: np.ndarray
    targets: np.ndarray
    mask: np.ndarray | None = None

    @property
    def length(self) -> int:
        return self.targets.shape[0]


def make_windows(series, window: int, stride: int | None = None, mask=None) -> list:
    """Windows m = 0, P, 2P, ... with m + P <= N - 1.

    Each window holds the initial state series[m] and the P targets
    series[m + 1 .. m + P]; the initial variance is zero by construction.
    """
    if window <= 0:
        raise ValidationError(f"make_windows: window must be positive, got {window}")
    stride = window if stride is None else stride
    if stride <= 0:
        raise ValidationError(f"make_windows: stride must be positive, got {stride}")
    series = np.asarray(series) if not isinstance(series, list) else np.stack(
        [s.values if isinstance(s, Field) else np.asarray(s) for s in series])
    n = series.shape[0]
    if n < window + 1:
        raise ValidationError(f"make_windows: series of length {n} is shorter than window + 1 = {window + 1}")
    return [Window(m, series[m], series[m + 1:m + window + 1], mask)
            for m in range(0, n - window, stride)]
