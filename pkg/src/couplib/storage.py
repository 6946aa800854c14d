"""Time-stamped sample storage for one coupling data field.

A :class:`Storage` keeps the samples of the current time window as a
strictly time-ordered list of :class:`Stample` objects.  Writers append to
it step by step, readers interpolate it through a waveform, and the window
life cycle is driven with ``trim_after`` (discard a failed iteration) and
``trim_before`` (move on to the next window, keeping the final stample as
the new starting data).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import StateError, ValidationError

# Windows are composed by repeated addition of step sizes, so exact float
# equality on time stamps is brittle.  Two stamps within this relative
# tolerance are treated as the same instant.
TIME_EQ_RTOL = 1e-14


def same_time(a: float, b: float) -> bool:
    """Whether two absolute time stamps refer to the same instant."""
    return abs(a - b) <= TIME_EQ_RTOL * max(1.0, abs(a), abs(b))


class Sample:
    """One snapshot of a coupling data field: a flat vector of finite reals.

    The length is ``vertex_count * data_dimension`` of the owning field and
    is immutable, as is the payload itself.
    """

    __slots__ = ("values",)

    def __init__(self, values):
        arr = np.array(values, dtype=float, copy=True).reshape(-1)
        if arr.size == 0:
            raise ValidationError("a sample must hold at least one value")
        if not np.all(np.isfinite(arr)):
            raise ValidationError("sample values must be finite (no NaN/Inf)")
        arr.setflags(write=False)
        self.values = arr

    def __len__(self) -> int:
        return self.values.size

    def __eq__(self, other) -> bool:
        return isinstance(other, Sample) and np.array_equal(self.values, other.values)

    def __repr__(self) -> str:
        return f"Sample({self.values.tolist()})"


@dataclass(frozen=True)
class Stample:
    """A :class:`Sample` paired with the absolute time it belongs to."""

    time: float
    sample: Sample

    def __post_init__(self):
        if not np.isfinite(self.time):
            raise ValidationError(f"stample time must be finite, got {self.time}")


class Storage:
    """Strictly time-ordered stamples of one data field in the current window.

    The storage is never empty: it is created with the window-start stample
    and only trimming can shrink it, never below one entry.
    """

    def __init__(self, degree: int, initial_time: float, initial_sample: Sample):
        if degree < 0:
            raise ValidationError(f"waveform degree must be >= 0, got {degree}")
        self.degree = int(degree)
        self._stamples: list[Stample] = [Stample(float(initial_time), initial_sample)]
        # bumped on every mutation; lets cached waveforms detect staleness
        self._version = 0

    # -- queries ----------------------------------------------------------

    @property
    def version(self) -> int:
        return self._version

    def stamples(self) -> tuple[Stample, ...]:
        return tuple(self._stamples)

    def times(self) -> list[float]:
        """Time stamps in ascending order (used by the auxiliary grid and
        by serialization)."""
        return [st.time for st in self._stamples]

    def __len__(self) -> int:
        return len(self._stamples)

    @property
    def first(self) -> Stample:
        return self._stamples[0]

    @property
    def last(self) -> Stample:
        return self._stamples[-1]

    def value_length(self) -> int:
        return len(self._stamples[0].sample)

    # -- mutation ---------------------------------------------------------

    def set_sample_at_time(self, t: float, sample: Sample) -> None:
        """Insert ``sample`` at absolute time ``t``, replacing an existing
        stample at the same instant (last write wins)."""
        if not np.isfinite(t):
            raise ValidationError(f"time stamp must be finite, got {t}")
        if len(sample) != self.value_length():
            raise ValidationError(
                f"sample length {len(sample)} does not match field length "
                f"{self.value_length()}"
            )
        start = self._stamples[0].time
        if t < start and not same_time(t, start):
            raise StateError(
                f"cannot write at t={t} before the window start {start}"
            )
        for i, st in enumerate(self._stamples):
            if same_time(st.time, t):
                self._stamples[i] = Stample(st.time, sample)
                self._version += 1
                return
            if st.time > t:
                self._stamples.insert(i, Stample(float(t), sample))
                self._version += 1
                return
        self._stamples.append(Stample(float(t), sample))
        self._version += 1

    def trim_after(self, t: float) -> None:
        """Drop all stamples strictly later than ``t`` (idempotent)."""
        kept = [st for st in self._stamples if st.time <= t or same_time(st.time, t)]
        if not kept:
            raise StateError(f"trim_after({t}) would empty the storage")
        if len(kept) != len(self._stamples):
            self._stamples = kept
            self._version += 1

    def trim_before(self, t: float) -> None:
        """Drop all stamples strictly earlier than ``t`` (idempotent)."""
        kept = [st for st in self._stamples if st.time >= t or same_time(st.time, t)]
        if not kept:
            raise StateError(f"trim_before({t}) would empty the storage")
        if len(kept) != len(self._stamples):
            self._stamples = kept
            self._version += 1

    # -- reading ----------------------------------------------------------

    def sample(self, t: float) -> np.ndarray:
        """Evaluate the field at absolute time ``t``.

        Inside the span of the stored stamples this evaluates the cached
        waveform interpolant.  Past the last stample the value is extended
        constantly: a freshly trimmed window holds only its start stample
        and must act as the constant initial guess over the whole window.
        """
        last = self._stamples[-1]
        if t >= last.time or same_time(t, last.time):
            return last.sample.values
        from . import waveform  # local import: waveform builds on storage

        return waveform.cached(self).evaluate(t)
