"""B-spline waveforms: time-continuous interpolants of a window's stamples.

``build`` turns the stamples of a :class:`~couplib.storage.Storage` into an
interpolating spline of degree ``min(p, n)`` where ``n + 1`` is the number
of stamples; the degree is reduced automatically when too few data points
are available.  The knot vector is clamped with interior knots placed by
averaging consecutive stample times, which keeps the collocation problem
uniquely solvable for arbitrary non-uniform step sequences
(Schoenberg-Whitney).  The control points are found once per build through
a banded direct solve; evaluation runs de Boor's recurrence.  Degree 0 is a
step function that holds the nearest stample at or after the requested
time, matching step-end values exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_banded

from .errors import DomainError
from .storage import Storage, same_time

# Evaluation admits times this far (relative to the window size) outside
# [t_start, t_end] and clamps them onto the boundary.
DOMAIN_RTOL = 1e-12


@dataclass(frozen=True)
class Waveform:
    """Immutable spline interpolant of one data field over one window.

    For ``effective_degree == 0`` the knots are the stample times and the
    control points the stample values; evaluation holds the nearest stample
    at or after the requested time.
    """

    knots: np.ndarray            # non-decreasing, clamped for degree >= 1
    control_points: np.ndarray   # (n_basis, value_length)
    effective_degree: int
    t_start: float
    t_end: float

    def _check_domain(self, t: float) -> float:
        window = self.t_end - self.t_start
        tol = DOMAIN_RTOL * max(window, 1.0, abs(self.t_start), abs(self.t_end))
        if t < self.t_start - tol or t > self.t_end + tol:
            raise DomainError(
                f"t={t} outside waveform domain [{self.t_start}, {self.t_end}]"
            )
        return min(max(t, self.t_start), self.t_end)

    def evaluate(self, t: float) -> np.ndarray:
        """Value of the interpolant at absolute time ``t``."""
        t = self._check_domain(t)
        k = self.effective_degree
        if k == 0:
            idx = int(np.searchsorted(self.knots, t, side="left"))
            if idx > 0 and same_time(self.knots[idx - 1], t):
                idx -= 1
            idx = min(idx, len(self.control_points) - 1)
            return self.control_points[idx]
        span = _find_span(self.knots, k, len(self.control_points), t)
        return _de_boor(self.knots, self.control_points, k, span, t)

    def evaluate_many(self, ts) -> np.ndarray:
        return np.array([self.evaluate(t) for t in np.asarray(ts, dtype=float)])


def build(storage: Storage, degree: int | None = None) -> Waveform:
    """Interpolating waveform through all stamples of ``storage``.

    ``degree`` defaults to the storage's configured degree and is reduced
    to the number of stamples minus one when necessary; a single stample
    yields the constant function.
    """
    if degree is None:
        degree = storage.degree
    if degree < 0:
        raise DomainError(f"waveform degree must be >= 0, got {degree}")
    stamples = storage.stamples()
    times = np.array([st.time for st in stamples])
    values = np.array([st.sample.values for st in stamples])
    return build_points(times, values, degree)


def build_points(times: np.ndarray, values: np.ndarray, degree: int) -> Waveform:
    """``build`` on raw (time, value-row) arrays; times strictly increasing."""
    m = len(times)
    k = min(int(degree), m - 1)
    t_start, t_end = float(times[0]), float(times[-1])
    if k <= 0:
        return Waveform(times.copy(), values.copy(), 0, t_start, t_end)
    knots = _averaging_knots(times, k)
    control = _solve_collocation(knots, times, values, k)
    return Waveform(knots, control, k, t_start, t_end)


def cached(storage: Storage) -> Waveform:
    """Waveform for ``storage``, rebuilt only when the storage changed."""
    cache = getattr(storage, "_waveform_cache", None)
    if cache is not None and cache[0] == storage.version:
        return cache[1]
    wave = build(storage)
    storage._waveform_cache = (storage.version, wave)
    return wave


# -- spline internals -------------------------------------------------------


def _averaging_knots(x: np.ndarray, k: int) -> np.ndarray:
    """Clamped knot vector with interior knots averaged over k sites."""
    m = len(x)
    knots = np.empty(m + k + 1)
    knots[: k + 1] = x[0]
    knots[m:] = x[-1]
    for j in range(1, m - k):
        knots[k + j] = x[j : j + k].mean()
    return knots


def _find_span(knots: np.ndarray, k: int, n_basis: int, t: float) -> int:
    """Index j with knots[j] <= t < knots[j+1], clamped into [k, n_basis-1]."""
    span = int(np.searchsorted(knots, t, side="right")) - 1
    return min(max(span, k), n_basis - 1)


def _basis_row(knots: np.ndarray, k: int, span: int, t: float) -> np.ndarray:
    """The k+1 non-zero basis values B_{span-k..span}(t) (Cox-de Boor)."""
    out = np.empty(k + 1)
    left = np.empty(k + 1)
    right = np.empty(k + 1)
    out[0] = 1.0
    for j in range(1, k + 1):
        left[j] = t - knots[span + 1 - j]
        right[j] = knots[span + j] - t
        saved = 0.0
        for r in range(j):
            tmp = out[r] / (right[r + 1] + left[j - r])
            out[r] = saved + right[r + 1] * tmp
            saved = left[j - r] * tmp
        out[j] = saved
    return out


def _solve_collocation(
    knots: np.ndarray, sites: np.ndarray, values: np.ndarray, k: int
) -> np.ndarray:
    """Control points solving B(sites) @ c = values via a banded solve."""
    m = len(sites)
    ab = np.zeros((2 * k + 1, m))
    for i, t in enumerate(sites):
        span = _find_span(knots, k, m, t)
        row = _basis_row(knots, k, span, t)
        for r in range(k + 1):
            j = span - k + r
            # banded storage: ab[k + i - j, j] = B_j(sites[i])
            ab[k + i - j, j] = row[r]
    return solve_banded((k, k), ab, values)


def _de_boor(
    knots: np.ndarray, control: np.ndarray, k: int, span: int, t: float
) -> np.ndarray:
    pts = control[span - k : span + 1].copy()
    for r in range(1, k + 1):
        for j in range(k, r - 1, -1):
            i = span - k + j
            alpha = (t - knots[i]) / (knots[i + k - r + 1] - knots[i])
            pts[j] = (1.0 - alpha) * pts[j - 1] + alpha * pts[j]
    return pts[k]
