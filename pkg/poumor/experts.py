"""Neural operator experts: stacked MOR layers and fixed experts.

A MOR layer maps v (B, n_1..n_d, c_in) to

    skip(v) + irfft( g . truncate( rfft( h(v) ) ) )

where h is a pointwise MLP (c_in -> c_h), g is a per-wavenumber complex
(c_out x c_h) matrix over the retained modes of the half spectrum, and skip is
the identity, a learned channel map, or absent. Parameters live in a flat
table of real arrays named `<prefix>h.0.w`, `<prefix>g.re`, ...
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Mapping, Sequence

import numpy as np

from . import diffcore as dc
from .errors import NonFiniteError, ShapeError, ValidationError
from .spectral import Field, GridSpec, retained_indices, wave_vector

SKIP_MODES = ("auto", "identity", "linear", "none")
G_PARAMS = ("tensor", "mlp")


# ---------------------------------------------------------------------------
# pointwise MLPs (shared with the gating network)


def init_mlp(rng: np.random.Generator, prefix: str, sizes: Sequence[int], zero_last: bool = False) -> dict:
    """Weights N(0, 1/fan_in), zero biases."""
    params = {}
    for j, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        last = j == len(sizes) - 2
        if last and zero_last:
            w = np.zeros((fan_in, fan_out))
        else:
            w = rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(fan_in, fan_out))
        params[f"{prefix}{j}.w"] = w
        params[f"{prefix}{j}.b"] = np.zeros(fan_out)
    return params


def apply_mlp(params: Mapping[str, dc.Var], prefix: str, x: dc.Var, n_layers: int) -> dc.Var:
    """tanh hidden layers, linear output."""
    for j in range(n_layers):
        x = dc.bias(dc.matmul(x, params[f"{prefix}{j}.w"]), params[f"{prefix}{j}.b"])
        if j < n_layers - 1:
            x = dc.tanh(x)
    return x


# ---------------------------------------------------------------------------
# MOR layer


@dataclass
class MorLayer:
    grid: GridSpec
    in_channels: int
    out_channels: int
    prefix: str = ""
    keep: tuple | None = None
    hidden: tuple = (32, 32)
    h_channels: int | None = None
    g_param: str = "tensor"
    g_hidden: tuple = (32,)
    skip: str = "auto"

    def __post_init__(self):
        if self.g_param not in G_PARAMS:
            raise ValidationError(f"mor layer: g_param must be one of {G_PARAMS}, got {self.g_param!r}")
        if self.skip not in SKIP_MODES:
            raise ValidationError(f"mor layer: skip must be one of {SKIP_MODES}, got {self.skip!r}")
        if self.keep is None:
            self.keep = tuple(n // 4 for n in self.grid.n)
        self.keep = tuple(int(k) for k in np.broadcast_to(self.keep, (self.grid.d,)))
        if self.h_channels is None:
            self.h_channels = self.out_channels
        if self.skip == "auto":
            self.skip = "identity" if self.in_channels == self.out_channels else "linear"
        if self.skip == "identity" and self.in_channels != self.out_channels:
            raise ShapeError(f"mor layer: identity skip needs matching channels, got {self.in_channels} -> {self.out_channels}")
        self.hidden = tuple(self.hidden)
        self.indices = retained_indices(self.grid.n, self.keep, half=True)
        self.spatial_axes = tuple(range(1, self.grid.d + 1))

    @property
    def mode_shape(self) -> tuple:
        return tuple(len(ix) for ix in self.indices)

    @property
    def n_modes(self) -> int:
        return int(np.prod(self.mode_shape))

    def _h_sizes(self):
        return (self.in_channels, *self.hidden, self.h_channels)

    def _g_sizes(self):
        return (self.grid.d, *self.g_hidden, 2 * self.out_channels * self.h_channels)

    def init(self, rng: np.random.Generator) -> dict:
        p = self.prefix
        params = init_mlp(rng, f"{p}h.", self._h_sizes())
        gshape = self.mode_shape + (self.out_channels, self.h_channels)
        if self.g_param == "tensor":
            std = 1.0 / np.sqrt(self.n_modes)
            params[f"{p}g.re"] = rng.normal(0.0, std, size=gshape)
            params[f"{p}g.im"] = rng.normal(0.0, std, size=gshape)
        else:
            params.update(init_mlp(rng, f"{p}gnet.", self._g_sizes()))
        if self.skip == "linear":
            params[f"{p}skip.w"] = rng.normal(0.0, 1.0 / np.sqrt(self.in_channels),
                                              size=(self.in_channels, self.out_channels))
        return params

    def retained_wavenumbers(self) -> np.ndarray:
        """kappa over the retained half-spectrum modes, scaled to [-1, 1], shape (K..., d)."""
        ks = wave_vector(self.grid, half=True)
        grids = []
        for axis, (k, ix) in enumerate(zip(ks, self.indices)):
            kk = k.reshape(-1)[ix]
            kmax = np.max(np.abs(kk))
            grids.append(kk / kmax if kmax > 0 else kk)
        return np.stack(np.meshgrid(*grids, indexing="ij"), axis=-1)

    def weights(self, tape: dc.Tape, params: Mapping[str, dc.Var]) -> dc.Var:
        p = self.prefix
        if self.g_param == "tensor":
            return dc.complex_from_pair(params[f"{p}g.re"], params[f"{p}g.im"])
        kappa = tape.constant(self.retained_wavenumbers())
        flat = apply_mlp(params, f"{p}gnet.", kappa, len(self._g_sizes()) - 1)
        half = self.out_channels * self.h_channels
        re, im = dc.split(flat, (half, half), axis=-1)
        shape = self.mode_shape + (self.out_channels, self.h_channels)
        return dc.complex_from_pair(dc.reshape(re, shape), dc.reshape(im, shape))

    def forward(self, tape: dc.Tape, params: Mapping[str, dc.Var], v: dc.Var) -> dc.Var:
        if v.shape[-1] != self.in_channels or v.shape[1:-1] != self.grid.shape:
            raise ShapeError(f"mor layer: shape mismatch {v.shape} vs (B, {self.grid.shape}, {self.in_channels})")
        if not np.all(np.isfinite(v.value)):
            raise NonFiniteError("mor layer: non-finite input")
        p = self.prefix
        h = apply_mlp(params, f"{p}h.", v, len(self._h_sizes()) - 1)
        spectrum = dc.rfft(h, self.spatial_axes)
        kept = dc.mode_truncate(spectrum, self.spatial_axes, self.indices)
        mixed = dc.mode_matmul(self.weights(tape, params), kept)
        padded = dc.mode_pad(mixed, self.spatial_axes, self.indices,
                             spectrum.shape[:-1] + (self.out_channels,))
        out = dc.irfft(padded, self.spatial_axes, self.grid.n)
        if self.skip == "identity":
            out = out + v
        elif self.skip == "linear":
            out = out + dc.matmul(v, params[f"{p}skip.w"])
        return out


# ---------------------------------------------------------------------------
# experts


@dataclass
class MorExpert:
    """Composition of MOR layers: channels in -> width -> ... -> width -> out."""

    grid: GridSpec
    in_channels: int
    out_channels: int
    prefix: str = ""
    n_layers: int = 2
    width: int = 16
    keep: tuple | None = None
    hidden: tuple = (32, 32)
    g_param: str = "tensor"
    skip_last: bool = True
    layers: list = dc_field(default_factory=list)

    def __post_init__(self):
        if self.n_layers < 1:
            raise ValidationError(f"expert: n_layers must be >= 1, got {self.n_layers}")
        if not self.layers:
            chans = [self.in_channels] + [self.width] * (self.n_layers - 1) + [self.out_channels]
            for l in range(self.n_layers):
                last = l == self.n_layers - 1
                self.layers.append(MorLayer(
                    self.grid, chans[l], chans[l + 1], prefix=f"{self.prefix}layer{l}.",
                    keep=self.keep, hidden=self.hidden, g_param=self.g_param,
                    skip="none" if last and not self.skip_last else "auto"))
        for a, b in zip(self.layers[:-1], self.layers[1:]):
            if a.out_channels != b.in_channels:
                raise ShapeError(f"expert: layer channels {a.out_channels} -> {b.in_channels} do not chain")

    def init(self, rng: np.random.Generator) -> dict:
        params = {}
        for layer in self.layers:
            params.update(layer.init(rng))
        return params

    def forward(self, tape: dc.Tape, params: Mapping[str, dc.Var], u: dc.Var) -> dc.Var:
        if u.shape[-1] != self.in_channels:
            raise ShapeError(f"expert: shape mismatch {u.shape} vs {self.in_channels} input channels")
        for layer in self.layers:
            u = layer.forward(tape, params, u)
        return u


@dataclass
class ZeroExpert:
    out_channels: int
    prefix: str = ""

    def init(self, rng: np.random.Generator) -> dict:
        return {}

    def forward(self, tape: dc.Tape, params, u: dc.Var) -> dc.Var:
        return tape.constant(np.zeros(u.shape[:-1] + (self.out_channels,)))


# ---------------------------------------------------------------------------
# Field-level helpers


def _run(module, params: Mapping[str, np.ndarray], u: Field) -> Field:
    tape = dc.Tape()
    leaves = {k: tape.constant(v) for k, v in params.items()}
    out = module.forward(tape, leaves, tape.constant(u.values[None]))
    return Field(u.grid, out.value[0])


def mor_layer_forward(v: Field, layer: MorLayer, params: Mapping[str, np.ndarray]) -> Field:
    return _run(layer, params, v)


def expert_forward(u: Field, expert: MorExpert, params: Mapping[str, np.ndarray]) -> Field:
    return _run(expert, params, u)


def zero_expert(u: Field, out_channels: int | None = None) -> Field:
    m = u.channels if out_channels is None else out_channels
    return Field(u.grid, np.zeros(u.grid.shape + (m,)))
