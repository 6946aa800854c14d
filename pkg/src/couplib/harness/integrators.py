"""Time integrators used by the benchmark participants.

All integrators consume interface data through a ``read`` callback that
evaluates the peer's waveform at a relative time within the current step,
so intermediate stages sample the interpolant at their native abscissae:
RK4 at {0, dt/2, dt/2, dt}, generalized-alpha at its shifted midpoint,
Gauss-Legendre(2) at the Gauss points, the implicit one-step methods at
the step boundaries.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from ..errors import ConfigurationError

RK4 = "rk4"
GENERALIZED_ALPHA = "generalized-alpha"
IMPLICIT_EULER = "implicit-euler"
CRANK_NICOLSON = "crank-nicolson"
GAUSS_LEGENDRE_2 = "gauss-legendre-2"

SQRT3 = np.sqrt(3.0)
GL2_C = (0.5 - SQRT3 / 6.0, 0.5 + SQRT3 / 6.0)
GL2_A = ((0.25, 0.25 - SQRT3 / 6.0), (0.25 + SQRT3 / 6.0, 0.25))
GL2_B = (0.5, 0.5)


def normalize_kind(kind: str) -> str:
    k = kind.strip().lower()
    aliases = {"rk4": RK4, "ga": GENERALIZED_ALPHA, "ie": IMPLICIT_EULER,
               "cn": CRANK_NICOLSON, "gl2": GAUSS_LEGENDRE_2}
    k = aliases.get(k, k)
    if k not in (RK4, GENERALIZED_ALPHA, IMPLICIT_EULER, CRANK_NICOLSON,
                 GAUSS_LEGENDRE_2):
        raise ConfigurationError(f"unknown integrator '{kind}'")
    return k


class Rk4SecondOrder:
    """Classical RK4 on m*u'' + k*u = force(t), run as a first-order system."""

    def __init__(self, mass: float, stiffness: float, u0: float, v0: float):
        self.m = mass
        self.k = stiffness
        self.u = float(u0)
        self.v = float(v0)

    def snapshot(self):
        return (self.u, self.v)

    def restore(self, state) -> None:
        self.u, self.v = state

    def step(self, dt: float, force) -> None:
        def accel(rel_t, u):
            return (force(rel_t) - self.k * u) / self.m

        u, v = self.u, self.v
        k1u = v
        k1v = accel(0.0, u)
        k2u = v + 0.5 * dt * k1v
        k2v = accel(0.5 * dt, u + 0.5 * dt * k1u)
        k3u = v + 0.5 * dt * k2v
        k3v = accel(0.5 * dt, u + 0.5 * dt * k2u)
        k4u = v + dt * k3v
        k4v = accel(dt, u + dt * k3u)
        self.u = u + dt * (k1u + 2 * k2u + 2 * k3u + k4u) / 6.0
        self.v = v + dt * (k1v + 2 * k2v + 2 * k3v + k4v) / 6.0


class GeneralizedAlphaSecondOrder:
    """Generalized-alpha (Chung-Hulbert) on m*u'' + k*u = force(t).

    Parametrized by the spectral radius at infinity; second-order accurate
    for any rho_inf in [0, 1].  The force is sampled at the shifted
    midpoint t_n + (1 - alpha_f) * dt.
    """

    def __init__(self, mass: float, stiffness: float, u0: float, v0: float,
                 rho_inf: float = 0.9):
        if not 0.0 <= rho_inf <= 1.0:
            raise ConfigurationError(f"rho_inf must be in [0, 1], got {rho_inf}")
        self.m = mass
        self.k = stiffness
        self.alpha_m = (2.0 * rho_inf - 1.0) / (rho_inf + 1.0)
        self.alpha_f = rho_inf / (rho_inf + 1.0)
        self.gamma = 0.5 - self.alpha_m + self.alpha_f
        self.beta = 0.25 * (1.0 - self.alpha_m + self.alpha_f) ** 2
        self.u = float(u0)
        self.v = float(v0)
        self.a: float | None = None  # set from the force on the first step

    def snapshot(self):
        return (self.u, self.v, self.a)

    def restore(self, state) -> None:
        self.u, self.v, self.a = state

    @property
    def stage_fraction(self) -> float:
        return 1.0 - self.alpha_f

    def step(self, dt: float, force) -> None:
        m, k = self.m, self.k
        am, af, beta, gamma = self.alpha_m, self.alpha_f, self.beta, self.gamma
        if self.a is None:
            self.a = (force(0.0) - k * self.u) / m
        u, v, a = self.u, self.v, self.a
        f_mid = force((1.0 - af) * dt)
        u_pred = u + dt * v + dt * dt * (0.5 - beta) * a
        lhs = m * (1.0 - am) + k * (1.0 - af) * beta * dt * dt
        rhs = f_mid - m * am * a - k * af * u - k * (1.0 - af) * u_pred
        a_new = rhs / lhs
        self.u = u_pred + beta * dt * dt * a_new
        self.v = v + dt * ((1.0 - gamma) * a + gamma * a_new)
        self.a = a_new


class LinearOdeIntegrator:
    """One-step methods for u' = A u + r(t) with a constant matrix A.

    ``rhs(rel_t)`` must return r at the given relative time; the factored
    stage systems are cached per step size.
    """

    def __init__(self, kind: str, matrix: np.ndarray, u0: np.ndarray):
        self.kind = normalize_kind(kind)
        if self.kind == RK4:
            raise ConfigurationError("RK4 is not offered for the linear-ODE form")
        self.A = np.asarray(matrix, dtype=float)
        self.u = np.asarray(u0, dtype=float).copy()
        self.n = self.u.size
        self._lu_cache: dict[float, tuple] = {}

    def snapshot(self):
        return self.u.copy()

    def restore(self, state) -> None:
        self.u = state.copy()

    def stage_fractions(self, dt_ignored: float = 0.0) -> tuple[float, ...]:
        if self.kind == IMPLICIT_EULER:
            return (1.0,)
        if self.kind == CRANK_NICOLSON:
            return (0.0, 1.0)
        return GL2_C

    def _factor(self, dt: float):
        cached = self._lu_cache.get(dt)
        if cached is not None:
            return cached
        eye = np.eye(self.n)
        if self.kind == IMPLICIT_EULER:
            lu = lu_factor(eye - dt * self.A)
        elif self.kind == CRANK_NICOLSON:
            lu = lu_factor(eye - 0.5 * dt * self.A)
        else:
            big = np.zeros((2 * self.n, 2 * self.n))
            for i in range(2):
                for j in range(2):
                    block = -dt * GL2_A[i][j] * self.A
                    if i == j:
                        block = block + eye
                    big[i * self.n:(i + 1) * self.n,
                        j * self.n:(j + 1) * self.n] = block
            lu = lu_factor(big)
        self._lu_cache[dt] = lu
        return lu

    def step(self, dt: float, rhs) -> None:
        lu = self._factor(dt)
        u = self.u
        if self.kind == IMPLICIT_EULER:
            self.u = lu_solve(lu, u + dt * rhs(dt))
        elif self.kind == CRANK_NICOLSON:
            b = u + 0.5 * dt * (self.A @ u + rhs(0.0) + rhs(dt))
            self.u = lu_solve(lu, b)
        else:
            au = self.A @ u
            b = np.concatenate([au + rhs(GL2_C[0] * dt), au + rhs(GL2_C[1] * dt)])
            stages = lu_solve(lu, b)
            k1, k2 = stages[: self.n], stages[self.n:]
            self.u = u + dt * (GL2_B[0] * k1 + GL2_B[1] * k2)
