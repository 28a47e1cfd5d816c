"""Smooth periodic extension of functions known on an embedded domain X.

The extension u_e minimizes the H1 seminorm over the torus subject to
R u_e = u, where R samples the grid points of X in C (row-major) order.
The KKT system

    [ -lap  R^T ] [u_e]   [0]
    [  R     0  ] [lam] = [u]

is symmetric indefinite; it is solved matrix-free through its normal
equations with conjugate gradients, or (method="reduced") by eliminating the
constraint and running CG on the complement of X, which is positive definite.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import LinearOperator, cg

from .errors import ConvergenceError, ShapeError, ValidationError
from .spectral import Field, GridSpec, derivative, kappa_squared, shell_index, wave_vector

log = logging.getLogger(__name__)

CONSTRAINT_TOL = 1e-6
CG_TOL = 1e-10
CONSTANT_TRACE_TOL = 1e-12


@dataclass(frozen=True)
class DomainMask:
    grid: GridSpec
    indicator: np.ndarray

    def __post_init__(self):
        ind = np.asarray(self.indicator, dtype=bool)
        if ind.shape != self.grid.shape:
            raise ShapeError(f"mask: shape mismatch {ind.shape} vs grid {self.grid.shape}")
        object.__setattr__(self, "indicator", ind)

    @property
    def count(self) -> int:
        return int(self.indicator.sum())

    @property
    def complement(self) -> np.ndarray:
        return ~self.indicator

    def boundary(self) -> np.ndarray:
        """Points of X with at least one grid neighbour outside X."""
        ind = self.indicator
        outside = np.zeros_like(ind)
        for axis in range(ind.ndim):
            for shift in (1, -1):
                outside |= ~np.roll(ind, shift, axis=axis)
        return ind & outside

    def interior(self) -> np.ndarray:
        return self.indicator & ~self.boundary()


def _scalar(u) -> np.ndarray:
    if isinstance(u, Field):
        if u.channels != 1:
            raise ShapeError(f"extension: expects one channel, got {u.channels}")
        return u.channel(0)
    return np.asarray(u, dtype=np.float64)


def restrict(u, mask: DomainMask) -> np.ndarray:
    """Values at the points of X in row-major scan order."""
    arr = _scalar(u)
    if arr.shape != mask.grid.shape:
        raise ShapeError(f"restrict: shape mismatch {arr.shape} vs {mask.grid.shape}")
    return arr[mask.indicator]


def extend_transpose(w, mask: DomainMask) -> np.ndarray:
    """R^T: scatter a length-|X| vector onto X, zero elsewhere."""
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (mask.count,):
        raise ShapeError(f"extend_transpose: shape mismatch {w.shape} vs ({mask.count},)")
    out = np.zeros(mask.grid.shape)
    out[mask.indicator] = w
    return out


def zero_extension(u, mask: DomainMask) -> np.ndarray:
    """The zero-padded extension R^T u."""
    return extend_transpose(u, mask)


def neg_laplacian(grid: GridSpec, u: np.ndarray) -> np.ndarray:
    uh = np.fft.rfftn(u, axes=grid.axes, norm="ortho")
    return np.fft.irfftn(kappa_squared(grid) * uh, s=grid.n, axes=grid.axes, norm="ortho")


def h1_seminorm(u, grid: GridSpec) -> float:
    """sqrt(integral |grad u|^2) on the torus, evaluated spectrally."""
    u = _scalar(u)
    cell = float(np.prod(grid.spacing))
    return float(np.sqrt(max(np.vdot(u, neg_laplacian(grid, u)).real, 0.0) * cell))


def apply_saddle_operator(q: np.ndarray, mask: DomainMask) -> np.ndarray:
    grid = mask.grid
    n = grid.size
    if q.shape != (n + mask.count,):
        raise ShapeError(f"saddle operator: shape mismatch {q.shape} vs ({n + mask.count},)")
    ue = q[:n].reshape(grid.shape)
    lam = q[n:]
    top = neg_laplacian(grid, ue) + extend_transpose(lam, mask)
    return np.concatenate([top.ravel(), ue[mask.indicator]])


def _normal_diagonal(mask: DomainMask) -> np.ndarray:
    """diag(A^T A) for the saddle matrix A, used by the Jacobi preconditioner."""
    grid = mask.grid
    k2 = sum(k * k for k in wave_vector(grid, half=False))
    row = np.sum(k2 ** 2) / grid.size
    top = np.full(grid.shape, row) + mask.indicator
    return np.concatenate([top.ravel(), np.ones(mask.count)])


@dataclass
class ExtensionResult:
    values: np.ndarray
    seminorm: float
    iterations: int
    residual: float
    constraint_residual: float
    method: str
    residual_history: list = field(default_factory=list, repr=False)

    def diagnostics(self) -> dict:
        return {
            "seminorm": self.seminorm,
            "iterations": self.iterations,
            "residual": self.residual,
            "constraint_residual": self.constraint_residual,
            "method": self.method,
        }


def _constant_trace(u_grid: np.ndarray, mask: DomainMask):
    trace = u_grid[mask.boundary()]
    if trace.size and np.ptp(trace) <= CONSTANT_TRACE_TOL:
        return float(trace[0])
    return None


def _run_cg(op, rhs, x0, tol, max_iters, M=None):
    history = []

    def track(xk):
        history.append(float(np.linalg.norm(op.matvec(xk) - rhs)))

    x, info = cg(op, rhs, x0=x0, rtol=tol, atol=0.0, maxiter=max_iters, M=M, callback=track)
    return x, info, history


def solve_smooth_extension(
    u,
    mask: DomainMask,
    tol: float = CG_TOL,
    max_iters: int | None = None,
    method: str = "normal",
    preconditioner: bool = False,
    constraint_tol: float = CONSTRAINT_TOL,
) -> ExtensionResult:
    """Minimum-H1-seminorm extension of the values `u` (length |X|) off X.

    `u` may also be a full-grid array, in which case it is restricted first.
    """
    if not tol > 0:
        raise ValidationError(f"solve_smooth_extension: tol must be positive, got {tol}")
    if method not in ("normal", "reduced"):
        raise ValidationError(f"solve_smooth_extension: unknown method {method!r}")
    grid = mask.grid
    u = np.asarray(u, dtype=np.float64)
    if u.shape == grid.shape:
        u = u[mask.indicator]
    if u.shape != (mask.count,):
        raise ShapeError(f"solve_smooth_extension: shape mismatch {u.shape} vs ({mask.count},)")
    if mask.count == 0:
        raise ValidationError("solve_smooth_extension: mask selects no points")
    padded = extend_transpose(u, mask)
    if mask.count == grid.size:
        return ExtensionResult(padded, h1_seminorm(padded, grid), 0, 0.0, 0.0, method)

    constant = _constant_trace(padded, mask)
    if constant is not None:
        values = np.where(mask.indicator, padded, constant)
        log.debug("extension: constant trace %.6g, filled complement", constant)
        return ExtensionResult(values, h1_seminorm(values, grid), 0, 0.0, 0.0, "constant-trace")

    max_iters = 10 * grid.size if max_iters is None else int(max_iters)
    if method == "normal":
        values, iters, residual, history = _solve_normal(u, mask, padded, tol, max_iters, preconditioner)
    else:
        values, iters, residual, history = _solve_reduced(u, mask, padded, tol, max_iters)

    constraint = float(np.max(np.abs(values[mask.indicator] - u)))
    if constraint > constraint_tol:
        raise ConvergenceError(
            f"solve_smooth_extension: constraint residual {constraint:.3g} exceeds {constraint_tol:.3g}",
            history)
    values[mask.indicator] = u
    log.debug("extension: %s solve, %d iterations, residual %.3g", method, iters, residual)
    return ExtensionResult(values, h1_seminorm(values, grid), iters, residual, constraint, method, history)


def _solve_normal(u, mask, padded, tol, max_iters, preconditioner):
    grid = mask.grid
    n = grid.size + mask.count

    def normal(q):
        return apply_saddle_operator(apply_saddle_operator(q, mask), mask)

    op = LinearOperator((n, n), matvec=normal, dtype=np.float64)
    b = np.concatenate([np.zeros(grid.size), u])
    rhs = apply_saddle_operator(b, mask)
    x0 = np.concatenate([padded.ravel(), np.zeros(mask.count)])
    M = None
    if preconditioner:
        inv = 1.0 / _normal_diagonal(mask)
        M = LinearOperator((n, n), matvec=lambda r: inv * r, dtype=np.float64)
    q, info, history = _run_cg(op, rhs, x0, tol, max_iters, M)
    residual = float(np.linalg.norm(normal(q) - rhs) / max(np.linalg.norm(rhs), np.finfo(float).tiny))
    if info != 0:
        raise ConvergenceError(
            f"solve_smooth_extension: CG did not converge in {max_iters} iterations (residual {residual:.3g})",
            history)
    return q[:grid.size].reshape(grid.shape).copy(), len(history), residual, history


def _solve_reduced(u, mask, padded, tol, max_iters):
    grid = mask.grid
    comp = mask.complement
    m = int(comp.sum())

    def lift(y):
        out = np.zeros(grid.shape)
        out[comp] = y
        return out

    def reduced(y):
        return neg_laplacian(grid, lift(y))[comp]

    op = LinearOperator((m, m), matvec=reduced, dtype=np.float64)
    rhs = -neg_laplacian(grid, padded)[comp]
    y, info, history = _run_cg(op, rhs, np.zeros(m), tol, max_iters)
    residual = float(np.linalg.norm(reduced(y) - rhs) / max(np.linalg.norm(rhs), np.finfo(float).tiny))
    if info != 0:
        raise ConvergenceError(
            f"solve_smooth_extension: CG did not converge in {max_iters} iterations (residual {residual:.3g})",
            history)
    return padded + lift(y), len(history), residual, history


def burgers_action(field_: Field) -> Field:
    """u . grad u in the scalar form sum_i u d_i u, pseudo-spectrally."""
    grid = field_.grid
    u = _scalar(field_)
    return Field(grid, u * sum(derivative(grid, u, i) for i in grid.axes))


def gibbs_metric(field_, mask: DomainMask | None = None, cutoff: int | None = None) -> float:
    """Share of energy carried by shells above `cutoff`, evaluated on the interior of X.

    The high-pass part of the field is formed globally; both it and the field
    are then summed over X-interior points only. Without a mask the whole
    grid is used (plain spectral energy fraction).
    """
    if isinstance(field_, Field):
        grid, u = field_.grid, _scalar(field_)
    else:
        if mask is None:
            raise ValidationError("gibbs_metric: a raw array needs a mask to supply the grid")
        grid, u = mask.grid, _scalar(field_)
    if cutoff is None:
        cutoff = min(grid.n) // 4
    uh = np.fft.fftn(u, norm="ortho")
    high = np.fft.ifftn(np.where(shell_index(grid) > cutoff, uh, 0.0), norm="ortho").real
    region = np.ones(grid.shape, dtype=bool) if mask is None else mask.interior()
    total = float(np.sum(u[region] ** 2))
    if total == 0.0:
        return 0.0
    return float(np.sum(high[region] ** 2) / total)


def compare_extensions(u, mask: DomainMask, cutoff: int | None = None, **solve_kw) -> tuple:
    """Gibbs metrics of the Burgers action for the smooth and zero-padded extensions.

    Returns (report, ExtensionResult of the smooth solve).
    """
    smooth = solve_smooth_extension(u, mask, **solve_kw)
    padded = zero_extension(np.asarray(u)[mask.indicator] if np.shape(u) == mask.grid.shape else u, mask)
    grid = mask.grid
    report = {
        "gibbs_smooth": gibbs_metric(burgers_action(Field(grid, smooth.values)), mask, cutoff),
        "gibbs_padded": gibbs_metric(burgers_action(Field(grid, padded)), mask, cutoff),
        "seminorm_smooth": smooth.seminorm,
        "seminorm_padded": h1_seminorm(padded, grid),
        **{k: v for k, v in smooth.diagnostics().items() if k != "seminorm"},
    }
    return report, smooth
