"""Fixed-point acceleration on a fixed auxiliary time grid.

The window iterate is flattened into one vector by evaluating the waveforms
of the accelerated fields on an auxiliary grid that is frozen from the
first iterate of each window.  Two families are implemented: constant
under-relaxation and interface quasi-Newton with an inverse least-squares
Jacobian model (IQN-ILS), the latter in a full variant that acts on every
grid value and a reduced variant that acts on the window-end values only.
Histories live for one window and are dropped when it is accepted.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from .errors import ConfigurationError
from .storage import Storage

log = logging.getLogger(__name__)

CONSTANT = "constant"
IQN_ILS_FULL = "iqn-ils-full"
IQN_ILS_REDUCED = "iqn-ils-reduced"
VARIANTS = (CONSTANT, IQN_ILS_FULL, IQN_ILS_REDUCED)


@dataclass
class AccelerationState:
    """Per-window iteration history of one acceleration configuration."""

    variant: str
    omega: float = 0.5
    filter_eps: float = 1e-10
    # auxiliary grid per accelerated field, frozen from the first iterate
    grid: dict[str, np.ndarray] | None = None
    prev_x: np.ndarray | None = None
    prev_residual: np.ndarray | None = None
    prev_xtilde: np.ndarray | None = None
    v_columns: list[np.ndarray] = field(default_factory=list)
    w_columns: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"unknown acceleration variant '{self.variant}'")
        if not 0.0 < self.omega <= 1.0:
            raise ConfigurationError(
                f"relaxation factor must be in (0, 1], got {self.omega}"
            )


def begin_window(state: AccelerationState) -> None:
    """Reset grid and histories at the start of a new time window."""
    state.grid = None
    state.prev_x = None
    state.prev_residual = None
    state.prev_xtilde = None
    state.v_columns.clear()
    state.w_columns.clear()


def capture_grid(state: AccelerationState, storages: dict[str, Storage],
                 fields: list[str]) -> None:
    """Freeze the auxiliary grid from the current (first) iterate.

    The grid excludes the window start: the start sample is not part of
    the unknowns.  Reusing the first iterate's grid for the whole window
    also covers the fixed-step case without any interpolation error.
    """
    if state.grid is not None:
        return
    state.grid = {
        name: np.asarray(storages[name].times()[1:], dtype=float)
        for name in fields
    }


def flatten(state: AccelerationState, storages: dict[str, Storage],
            fields: list[str]) -> np.ndarray:
    """Current iterate as one vector on the auxiliary grid.

    The full variant concatenates waveform evaluations at every grid time
    for every accelerated field (configuration order); the reduced variant
    uses the window-end evaluation only.
    """
    parts = []
    for name in fields:
        storage = storages[name]
        grid = state.grid[name]
        times = grid if state.variant != IQN_ILS_REDUCED else grid[-1:]
        parts.extend(storage.sample(t) for t in times)
    return np.concatenate(parts)


def flatten_start(state: AccelerationState, storages: dict[str, Storage],
                  fields: list[str]) -> np.ndarray:
    """The window's constant initial guess on the auxiliary grid."""
    parts = []
    for name in fields:
        start = storages[name].first.sample.values
        n = len(state.grid[name]) if state.variant != IQN_ILS_REDUCED else 1
        parts.extend([start] * n)
    return np.concatenate(parts)


def accelerate(state: AccelerationState, x_old: np.ndarray,
               x_tilde: np.ndarray) -> np.ndarray:
    """One acceleration update: accepted iterate from ``x_old`` and the
    un-accelerated new iterate ``x_tilde``."""
    if x_old.shape != x_tilde.shape:
        raise ConfigurationError("accelerate: iterate length changed mid-window")
    if state.variant == CONSTANT:
        return x_old + state.omega * (x_tilde - x_old)

    residual = x_tilde - x_old
    if state.prev_residual is None:
        x_new = x_old + state.omega * residual
    else:
        dv = residual - state.prev_residual
        dw = x_tilde - state.prev_xtilde
        # zero-norm degenerate columns are never inverted
        if np.linalg.norm(dv) > 0.0:
            state.v_columns.append(dv)
            state.w_columns.append(dw)
        alpha, cols = _filtered_least_squares(
            state.v_columns, residual, state.filter_eps
        )
        if alpha is None:
            x_new = x_old + state.omega * residual
        else:
            w = np.column_stack([state.w_columns[i] for i in cols])
            x_new = x_tilde + w @ alpha
    state.prev_residual = residual
    state.prev_xtilde = x_tilde.copy()
    state.prev_x = x_new
    return x_new


def _filtered_least_squares(columns: list[np.ndarray], residual: np.ndarray,
                            filter_eps: float):
    """Solve min ||V a + r||_2 by QR, dropping near-dependent columns.

    Columns whose R-diagonal magnitude falls below ``filter_eps * ||R||``
    are removed and the factorization is repeated.  Returns (alpha, kept
    column indices), or (None, ...) when nothing survives the filter.
    """
    cols = list(range(len(columns)))
    while cols:
        v = np.column_stack([columns[i] for i in cols])
        q, r = np.linalg.qr(v)
        diag = np.abs(np.diag(r))
        threshold = filter_eps * np.linalg.norm(r)
        bad = [i for i, d in enumerate(diag) if d < threshold]
        if not bad:
            rhs = -(q.T @ residual)
            return solve_triangular(r, rhs), cols
        for i in reversed(bad):
            del cols[i]
    log.debug("acceleration: all history columns filtered, falling back")
    return None, []


def resample_to_storage(state: AccelerationState, x_new: np.ndarray,
                        storages: dict[str, Storage], fields: list[str]) -> None:
    """Write an accelerated vector back into the field storages.

    Full variant: the storage becomes the window-start stample plus the
    accelerated values at the grid times.  Reduced variant: the interior
    stamples stay untouched and only the window-end sample is replaced.
    """
    from .storage import Sample

    offset = 0
    for name in fields:
        storage = storages[name]
        width = storage.value_length()
        grid = state.grid[name]
        if state.variant == IQN_ILS_REDUCED:
            values = x_new[offset : offset + width]
            storage.set_sample_at_time(grid[-1], Sample(values))
            offset += width
        else:
            start = storage.first
            storage.trim_after(start.time)
            for t in grid:
                values = x_new[offset : offset + width]
                storage.set_sample_at_time(t, Sample(values))
                offset += width
    if offset != x_new.size:
        raise ConfigurationError("resample: vector length does not match fields")
