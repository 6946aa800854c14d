"""The two built-in coupled cases: a partitioned two-mass oscillator and a
partitioned 1D heat equation with a manufactured solution.

Each case contributes two participant-side solvers exposing the same small
interface consumed by the runner loop: ``initial_write`` (coupling value at
t=0), ``step`` (advance one solver step, reading the peer waveform at stage
times, returning the end-of-step coupling value), ``snapshot``/``restore``
(window checkpointing), and ``error_now`` (pointwise error at the current
step end against the case's reference solution).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigurationError
from . import integrators
from .integrators import (
    GENERALIZED_ALPHA,
    RK4,
    GeneralizedAlphaSecondOrder,
    LinearOdeIntegrator,
    Rk4SecondOrder,
)

TWO_PI_SQ = 4.0 * np.pi**2


# -- partitioned oscillator ---------------------------------------------------


@dataclass(frozen=True)
class OscillatorParams:
    """Two masses, each held by a ground spring and coupled by a third."""

    m_a: float = 1.0
    m_b: float = 1.0
    k_a: float = TWO_PI_SQ
    k_b: float = TWO_PI_SQ
    k_ab: float = 4.0 * TWO_PI_SQ
    u_a0: float = 1.0
    v_a0: float = 0.0
    u_b0: float = 0.0
    v_b0: float = 0.0
    t_end: float = 1.0

    def is_default(self) -> bool:
        return self == OscillatorParams()


def oscillator_analytical(t):
    """Closed-form displacements for the default parameter set.

    The default stiffnesses give mode frequencies 2*pi and 6*pi with the
    initial state exciting both modes equally.
    """
    u_a = 0.5 * (np.cos(2 * np.pi * t) + np.cos(6 * np.pi * t))
    u_b = 0.5 * (np.cos(2 * np.pi * t) - np.cos(6 * np.pi * t))
    return u_a, u_b


class _MonolithicReference:
    """Fine-step RK4 solution of the full 2-DOF system, used as the error
    oracle when the parameters have no closed form."""

    def __init__(self, p: OscillatorParams, dt: float = 1e-5):
        k = np.array(
            [
                [(p.k_a + p.k_ab) / p.m_a, -p.k_ab / p.m_a],
                [-p.k_ab / p.m_b, (p.k_b + p.k_ab) / p.m_b],
            ]
        )
        n = int(np.ceil(p.t_end / dt))
        self.dt = p.t_end / n
        states = np.empty((n + 1, 4))
        states[0] = [p.u_a0, p.u_b0, p.v_a0, p.v_b0]

        def deriv(y):
            return np.concatenate([y[2:], -k @ y[:2]])

        y = states[0].copy()
        for i in range(n):
            k1 = deriv(y)
            k2 = deriv(y + 0.5 * self.dt * k1)
            k3 = deriv(y + 0.5 * self.dt * k2)
            k4 = deriv(y + self.dt * k3)
            y = y + self.dt * (k1 + 2 * k2 + 2 * k3 + k4) / 6.0
            states[i + 1] = y
        self.states = states

    def displacements(self, t: float):
        pos = t / self.dt
        i = min(int(pos), len(self.states) - 2)
        frac = pos - i
        u = (1 - frac) * self.states[i, :2] + frac * self.states[i + 1, :2]
        return u[0], u[1]


class OscillatorSide:
    """One mass of the partitioned oscillator.

    Integrates m * u'' + (k + k_ab) * u = k_ab * u_peer(t) over one step,
    sampling the peer displacement waveform at the integrator's stage
    times, and writes its end-of-step displacement as coupling data.
    """

    def __init__(self, side: str, params: OscillatorParams,
                 integrator: str = RK4, rho_inf: float = 0.9):
        if side not in ("A", "B"):
            raise ConfigurationError(f"oscillator side must be 'A' or 'B', not '{side}'")
        self.side = side
        self.params = params
        self.kind = integrators.normalize_kind(integrator)
        if side == "A":
            m, k, u0, v0 = params.m_a, params.k_a, params.u_a0, params.v_a0
        else:
            m, k, u0, v0 = params.m_b, params.k_b, params.u_b0, params.v_b0
        self.m = m
        self.k_total = k + params.k_ab
        self.k_ab = params.k_ab
        if self.kind == RK4:
            self.core = Rk4SecondOrder(m, self.k_total, u0, v0)
        elif self.kind == GENERALIZED_ALPHA:
            self.core = GeneralizedAlphaSecondOrder(m, self.k_total, u0, v0, rho_inf)
        else:
            matrix = np.array([[0.0, 1.0], [-self.k_total / m, 0.0]])
            self.core = LinearOdeIntegrator(self.kind, matrix, np.array([u0, v0]))
        self._reference: _MonolithicReference | None = None

    @property
    def u(self) -> float:
        if isinstance(self.core, LinearOdeIntegrator):
            return float(self.core.u[0])
        return self.core.u

    def initial_write(self) -> np.ndarray:
        return np.array([self.u])

    def snapshot(self):
        return self.core.snapshot()

    def restore(self, state) -> None:
        self.core.restore(state)

    def step(self, t: float, dt: float, read) -> np.ndarray:
        def force(rel: float) -> float:
            return self.k_ab * float(read(rel)[0])

        if isinstance(self.core, LinearOdeIntegrator):
            self.core.step(dt, lambda rel: np.array([0.0, force(rel) / self.m]))
        else:
            self.core.step(dt, force)
        return np.array([self.u])

    def exact_u(self, t: float) -> float:
        if self.params.is_default():
            u_a, u_b = oscillator_analytical(t)
        else:
            if self._reference is None:
                self._reference = _MonolithicReference(self.params)
            u_a, u_b = self._reference.displacements(t)
        return u_a if self.side == "A" else u_b

    def error_now(self, t: float) -> float:
        return abs(self.u - self.exact_u(t))

    def observe(self) -> float:
        return self.u


# -- partitioned 1D heat equation ---------------------------------------------


@dataclass(frozen=True)
class HeatParams:
    """u_t = u_xx + f on [0, 2], split at x = 1 into a Dirichlet side
    (left, receives the interface temperature) and a Neumann side (right,
    receives the interface flux)."""

    h: float = 0.1
    t_end: float = 1.0


def heat_exact(x, t):
    return 1.0 + (np.sin(t) + np.cos(t)) * x**2 + 1.2 * t


def heat_source(x, t):
    # forcing of the manufactured solution: u_t - u_xx
    return (np.cos(t) - np.sin(t)) * x**2 + 1.2 - 2.0 * (np.sin(t) + np.cos(t))


def heat_exact_flux(t):
    # d/dx of the manufactured solution at the interface x = 1
    return 2.0 * (np.sin(t) + np.cos(t))


class HeatSide:
    """One subdomain of the partitioned heat equation.

    The Dirichlet side imposes the interface temperature read from the
    waveform directly at the stage times and returns the one-sided
    second-order flux; the Neumann side imposes the flux through a ghost
    node and returns the interface temperature.  Three-point stencils are
    exact on the quadratic-in-x manufactured solution, so the reported
    error is purely a time-discretization error.
    """

    def __init__(self, side: str, params: HeatParams,
                 integrator: str = integrators.IMPLICIT_EULER):
        if side not in ("dirichlet", "neumann"):
            raise ConfigurationError(f"heat side must be dirichlet|neumann, not '{side}'")
        self.side = side
        self.h = params.h
        n = int(round(1.0 / params.h))
        if abs(n * params.h - 1.0) > 1e-12 or n < 2:
            raise ConfigurationError(
                f"heat spacing {params.h} must divide the unit subdomain"
            )
        self.n = n
        h2 = self.h * self.h
        if side == "dirichlet":
            # nodes 0..n on [0, 1]; unknowns 1..n-1; u(0) exact, u(1) read
            self.nodes = np.linspace(0.0, 1.0, n + 1)
            m = n - 1
            matrix = self._tridiag(m) / h2
            u0 = heat_exact(self.nodes[1:-1], 0.0)
        else:
            # nodes 0..n on [1, 2]; unknowns 0..n-1 (ghost at the interface),
            # u(2) exact
            self.nodes = np.linspace(1.0, 2.0, n + 1)
            m = n
            matrix = self._tridiag(m) / h2
            matrix[0, 0] = -2.0 / h2
            matrix[0, 1] = 2.0 / h2
            u0 = heat_exact(self.nodes[:-1], 0.0)
        self.core = LinearOdeIntegrator(integrator, matrix, u0)
        self._last_interface = float(heat_exact(1.0, 0.0))

    @staticmethod
    def _tridiag(m: int) -> np.ndarray:
        a = -2.0 * np.eye(m)
        off = np.arange(m - 1)
        a[off, off + 1] = 1.0
        a[off + 1, off] = 1.0
        return a

    def snapshot(self):
        return (self.core.snapshot(), self._last_interface)

    def restore(self, state) -> None:
        core_state, self._last_interface = state
        self.core.restore(core_state)

    def initial_write(self) -> np.ndarray:
        if self.side == "dirichlet":
            return np.array([self.flux_at_interface(0.0, heat_exact(1.0, 0.0))])
        return np.array([heat_exact(1.0, 0.0)])

    def flux_at_interface(self, t: float, u_interface: float) -> float:
        """One-sided second-order approximation of du/dx at x = 1."""
        u = self.core.u
        return (3.0 * u_interface - 4.0 * u[-1] + u[-2]) / (2.0 * self.h)

    def step(self, t: float, dt: float, read) -> np.ndarray:
        h, h2 = self.h, self.h * self.h
        if self.side == "dirichlet":
            inner = self.nodes[1:-1]

            def rhs(rel: float) -> np.ndarray:
                tt = t + rel
                r = heat_source(inner, tt)
                r[0] += heat_exact(0.0, tt) / h2
                r[-1] += float(read(rel)[0]) / h2
                return r

            self.core.step(dt, rhs)
            self._last_interface = float(read(dt)[0])
            return np.array([self.flux_at_interface(t + dt, self._last_interface)])

        owned = self.nodes[:-1]

        def rhs(rel: float) -> np.ndarray:
            tt = t + rel
            r = heat_source(owned, tt)
            r[0] -= 2.0 * float(read(rel)[0]) / h
            r[-1] += heat_exact(2.0, tt) / h2
            return r

        self.core.step(dt, rhs)
        self._last_interface = float(self.core.u[0])
        return np.array([self._last_interface])

    def full_field(self, t: float) -> np.ndarray:
        if self.side == "dirichlet":
            return np.concatenate(
                [[heat_exact(0.0, t)], self.core.u, [self._last_interface]]
            )
        return np.concatenate([self.core.u, [heat_exact(2.0, t)]])

    def error_now(self, t: float) -> float:
        """Relative discrete L2 error over this subdomain at time t."""
        numeric = self.full_field(t)
        exact = heat_exact(self.nodes, t)
        return float(np.linalg.norm(numeric - exact) / np.linalg.norm(exact))

    def observe(self) -> float:
        return self._last_interface
