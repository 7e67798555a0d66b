"""Benchmark optimal-control systems.

Each system defines continuous-time dynamics ``xdot = f(x, u, t)``, a
state-input equality constraint ``g(x, u, t) = 0``, optional inequality
constraints ``h(x, u, t) >= 0`` (enforced through a relaxed log barrier),
a quadratic tracking cost, and a phase signal that replaces absolute time
as the policy's clock input.

Three systems are provided:

* ``redundant-di``  -- double integrator with two redundant inputs coupled
  by a linear equality constraint.  Fully linear-quadratic, so direct
  KKT/Riccati oracles exist.
* ``cartpole``      -- cart-pole balance about the upright with an input
  bound handled by the barrier.  Nonlinear stressor.
* ``hopper1d``      -- 1-D hopping mass with an alternating stance/flight
  contact schedule.  The active equality constraint switches with the
  contact mode (stance pins the foot velocity, flight pins the contact
  force), which drives multimodal policy structure.
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

Array = np.ndarray


class InputError(ValueError):
    """Raised for malformed caller inputs (dimension or domain violations)."""


def _check_dim(name: str, v: Array, dim: int) -> Array:
    v = np.asarray(v, dtype=float)
    if v.shape != (dim,):
        raise InputError(f"{name} has shape {v.shape}, expected ({dim},)")
    return v


# ---------------------------------------------------------------------------
# barrier


@dataclass(frozen=True)
class BarrierConfig:
    """Relaxed logarithmic barrier for inequality constraints ``y >= 0``.

    For ``y >= epsilon`` the penalty is ``-mu * log(y)``.  Below the
    relaxation threshold it continues as the quadratic that matches value,
    slope and curvature at ``y = epsilon``, so the penalty is total (finite
    for every real ``y``), convex and twice continuously differentiable.
    """

    mu: float = 0.1
    epsilon: float = 0.01

    def __post_init__(self) -> None:
        if self.mu <= 0.0 or self.epsilon <= 0.0:
            raise InputError("barrier parameters mu and epsilon must be positive")

    def value(self, y):
        y = np.asarray(y, dtype=float)
        mu, eps = self.mu, self.epsilon
        safe = np.maximum(y, eps)
        quad = mu * (0.5 * (((y - 2.0 * eps) / eps) ** 2 - 1.0) - math.log(eps))
        return np.where(y >= eps, -mu * np.log(safe), quad)

    def derivative(self, y):
        y = np.asarray(y, dtype=float)
        mu, eps = self.mu, self.epsilon
        safe = np.maximum(y, eps)
        return np.where(y >= eps, -mu / safe, mu * (y - 2.0 * eps) / eps**2)

    def second_derivative(self, y):
        y = np.asarray(y, dtype=float)
        mu, eps = self.mu, self.epsilon
        safe = np.maximum(y, eps)
        return np.where(y >= eps, mu / safe**2, np.full_like(safe, mu / eps**2))


# ---------------------------------------------------------------------------
# cost


@dataclass
class QuadraticCost:
    """Quadratic tracking cost.

    Stage rate ``(x - x_ref(t))^T Q (x - x_ref(t)) + u^T R u`` and terminal
    cost ``(x - x_ref)^T Qf (x - x_ref)``.  ``x_ref`` may be a constant
    vector or a callable of time.
    """

    Q: Array
    R: Array
    Qf: Array
    x_ref: Array | Callable[[float], Array]

    def __post_init__(self) -> None:
        self.Q = np.asarray(self.Q, dtype=float)
        self.R = np.asarray(self.R, dtype=float)
        self.Qf = np.asarray(self.Qf, dtype=float)
        for name, M in (("Q", self.Q), ("Qf", self.Qf)):
            if not np.allclose(M, M.T):
                raise InputError(f"{name} must be symmetric")
            if np.linalg.eigvalsh(M).min() < -1e-12:
                raise InputError(f"{name} must be positive semidefinite")
        if not np.allclose(self.R, self.R.T):
            raise InputError("R must be symmetric")
        if np.linalg.eigvalsh(self.R).min() <= 0.0:
            raise InputError("R must be positive definite")
        if not callable(self.x_ref):
            self.x_ref = np.asarray(self.x_ref, dtype=float)

    def ref(self, t: float) -> Array:
        if callable(self.x_ref):
            return np.asarray(self.x_ref(t), dtype=float)
        return self.x_ref

    def ref_batch(self, ts: Array) -> Array:
        if callable(self.x_ref):
            return np.stack([np.asarray(self.x_ref(t), dtype=float) for t in ts])
        return np.broadcast_to(self.x_ref, (len(ts), self.x_ref.shape[0]))

    def stage(self, x: Array, u: Array, t: float = 0.0) -> float:
        xt = np.asarray(x, dtype=float) - self.ref(t)
        u = np.asarray(u, dtype=float)
        return float(xt @ self.Q @ xt + u @ self.R @ u)

    def terminal(self, x: Array, t: float = 0.0) -> float:
        xt = np.asarray(x, dtype=float) - self.ref(t)
        return float(xt @ self.Qf @ xt)

    def stage_batch(self, X: Array, U: Array, ts: Array) -> Array:
        Xt = X - self.ref_batch(ts)
        return np.einsum("ni,ij,nj->n", Xt, self.Q, Xt) + np.einsum(
            "ni,ij,nj->n", U, self.R, U
        )


# ---------------------------------------------------------------------------
# system models


class SystemModel(ABC):
    """Continuous-time control system with state-input constraints.

    Subclasses fill in dynamics, constraint and phase-signal evaluations.
    Instances are stateless after construction and safe to share between
    threads for read-only use.
    """

    name: str = "system"
    state_dim: int = 0
    control_dim: int = 0
    #: gait period in seconds for switched systems, None otherwise
    period: float | None = None
    #: (start, end, mode_id) intervals partitioning one period
    mode_schedule: list[tuple[float, float, str]] = []
    #: time scale used by the phase signal of non-periodic systems
    horizon_scale: float = 3.0
    #: per-state magnitude used for tube sampling and divergence checks
    state_scale: Array = np.array([])
    #: per-control magnitude used to scale policy outputs
    control_scale: Array = np.array([])

    # -- dynamics -----------------------------------------------------------

    @abstractmethod
    def dynamics(self, x: Array, u: Array, t: float = 0.0) -> Array:
        """State derivative ``f(x, u, t)``."""

    @abstractmethod
    def linearize(self, x: Array, u: Array, t: float = 0.0) -> tuple[Array, Array]:
        """Jacobians ``(df/dx, df/du)`` at ``(x, u, t)``."""

    def dynamics_batch(self, X: Array, U: Array, ts: Array) -> Array:
        return np.stack([self.dynamics(x, u, t) for x, u, t in zip(X, U, ts)])

    def linearize_batch(self, X: Array, U: Array, ts: Array) -> tuple[Array, Array]:
        out = [self.linearize(x, u, t) for x, u, t in zip(X, U, ts)]
        return np.stack([o[0] for o in out]), np.stack([o[1] for o in out])

    # -- equality constraints ----------------------------------------------

    def eq_constraint_dim(self, t: float = 0.0) -> int:
        return 0

    def eq_constraint(self, x: Array, u: Array, t: float = 0.0) -> Array:
        return np.zeros(0)

    def eq_jacobians(self, x: Array, u: Array, t: float = 0.0) -> tuple[Array, Array]:
        """Jacobians ``(dg/dx, dg/du)``."""
        return np.zeros((0, self.state_dim)), np.zeros((0, self.control_dim))

    def eq_batch(self, X: Array, U: Array, ts: Array) -> tuple[Array, Array, Array]:
        """Constraint values and Jacobians along a trajectory."""
        g = np.stack([self.eq_constraint(x, u, t) for x, u, t in zip(X, U, ts)])
        jac = [self.eq_jacobians(x, u, t) for x, u, t in zip(X, U, ts)]
        return g, np.stack([j[0] for j in jac]), np.stack([j[1] for j in jac])

    # -- inequality constraints (barrier-handled) ---------------------------

    def ineq_constraint_dim(self, t: float = 0.0) -> int:
        return 0

    def ineq_constraint(self, x: Array, u: Array, t: float = 0.0) -> Array:
        return np.zeros(0)

    def ineq_jacobians(self, x: Array, u: Array, t: float = 0.0) -> tuple[Array, Array]:
        return np.zeros((0, self.state_dim)), np.zeros((0, self.control_dim))

    def ineq_batch(self, X: Array, U: Array, ts: Array) -> tuple[Array, Array, Array]:
        h = np.stack([self.ineq_constraint(x, u, t) for x, u, t in zip(X, U, ts)])
        jac = [self.ineq_jacobians(x, u, t) for x, u, t in zip(X, U, ts)]
        return h, np.stack([j[0] for j in jac]), np.stack([j[1] for j in jac])

    # -- modes and phase -----------------------------------------------------

    def mode_id(self, t: float) -> str:
        if self.period is None:
            return "default"
        tm = t % self.period
        for start, end, mode in self.mode_schedule:
            if start <= tm < end:
                return mode
        return self.mode_schedule[-1][2]

    @property
    def phase_dim(self) -> int:
        return 1

    def phase_encode(self, t: float) -> Array:
        """Policy clock input.

        Non-periodic systems report the normalized remaining horizon,
        clamped to [0, 1].  Switched systems override this with their
        contact phase signal.
        """
        return np.array([max(0.0, 1.0 - t / self.horizon_scale)])

    # -- sampling, stepping, termination -------------------------------------

    @abstractmethod
    def sample_initial_state(self, rng: np.random.Generator) -> Array:
        """Feasible random starting state within the declared bounds."""

    def diverged(self, x: Array, t: float = 0.0, slack: float = 1.0) -> bool:
        """Divergence predicate; ``slack`` scales the thresholds."""
        return bool(np.any(~np.isfinite(x)))

    def check_dims(self, x: Array, u: Array) -> tuple[Array, Array]:
        return _check_dim("state", x, self.state_dim), _check_dim(
            "control", u, self.control_dim
        )


def step_integrate(
    system: SystemModel,
    x: Array,
    u: Array,
    dt: float,
    t: float = 0.0,
    method: str = "euler",
) -> Array:
    """Advance the state by one step of size ``dt``.

    Default is the explicit Euler update ``x + f(x, u, t) * dt``; ``rk4``
    selects a classical Runge-Kutta step for accuracy studies.  The control
    is held constant over the step.
    """
    if dt <= 0.0:
        raise InputError("dt must be positive")
    if method == "euler":
        x_next = x + system.dynamics(x, u, t) * dt
    elif method == "rk4":
        k1 = system.dynamics(x, u, t)
        k2 = system.dynamics(x + 0.5 * dt * k1, u, t + 0.5 * dt)
        k3 = system.dynamics(x + 0.5 * dt * k2, u, t + 0.5 * dt)
        k4 = system.dynamics(x + dt * k3, u, t + dt)
        x_next = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    else:
        raise InputError(f"unknown integration method {method!r}")
    if not np.all(np.isfinite(x_next)):
        raise FloatingPointError("state became non-finite during integration")
    return x_next


# ---------------------------------------------------------------------------
# redundant double integrator


class RedundantDoubleIntegrator(SystemModel):
    """Double integrator driven by two redundant force inputs.

    ``pdot = v``, ``vdot = u1 + u2`` with the input-allocation constraint
    ``u1 - u2 - k*v = 0``.  Linear dynamics, affine constraint and identity
    cost weights make every solver quantity available in closed form.
    """

    name = "redundant-di"
    state_dim = 2
    control_dim = 2

    def __init__(self, k: float = 0.5):
        self.k = float(k)
        self._A = np.array([[0.0, 1.0], [0.0, 0.0]])
        self._B = np.array([[0.0, 0.0], [1.0, 1.0]])
        self._C = np.array([[0.0, -self.k]])
        self._D = np.array([[1.0, -1.0]])
        self.state_scale = np.array([1.0, 1.0])
        self.control_scale = np.array([1.0, 1.0])

    def dynamics(self, x, u, t=0.0):
        x, u = self.check_dims(x, u)
        return self._A @ x + self._B @ u

    def linearize(self, x, u, t=0.0):
        return self._A.copy(), self._B.copy()

    def dynamics_batch(self, X, U, ts):
        return X @ self._A.T + U @ self._B.T

    def linearize_batch(self, X, U, ts):
        n = len(X)
        return (
            np.broadcast_to(self._A, (n, 2, 2)),
            np.broadcast_to(self._B, (n, 2, 2)),
        )

    def eq_constraint_dim(self, t=0.0):
        return 1

    def eq_constraint(self, x, u, t=0.0):
        x, u = self.check_dims(x, u)
        return np.array([u[0] - u[1] - self.k * x[1]])

    def eq_jacobians(self, x, u, t=0.0):
        return self._C.copy(), self._D.copy()

    def eq_batch(self, X, U, ts):
        n = len(X)
        g = (U[:, 0] - U[:, 1] - self.k * X[:, 1])[:, None]
        return (
            g,
            np.broadcast_to(self._C, (n, 1, 2)),
            np.broadcast_to(self._D, (n, 1, 2)),
        )

    def sample_initial_state(self, rng):
        return rng.uniform(-1.0, 1.0, size=2)

    def diverged(self, x, t=0.0, slack=1.0):
        return bool(np.any(~np.isfinite(x)) or np.linalg.norm(x) > 5.0 * slack)

    def default_cost(self) -> QuadraticCost:
        return QuadraticCost(np.eye(2), np.eye(2), np.eye(2), np.zeros(2))

    def default_barrier(self) -> BarrierConfig | None:
        return None


# ---------------------------------------------------------------------------
# cart-pole


class CartPole(SystemModel):
    """Cart-pole balancing about the upright equilibrium.

    State ``[cart position, pole angle, cart velocity, pole rate]`` with
    the angle measured from the upright.  The single force input is kept
    inside ``|u| <= u_max`` by two barrier-handled inequality constraints.
    """

    name = "cartpole"
    state_dim = 4
    control_dim = 1

    def __init__(
        self,
        cart_mass: float = 1.0,
        pole_mass: float = 0.1,
        pole_length: float = 0.5,
        gravity: float = 9.81,
        u_max: float = 10.0,
    ):
        self.mc = float(cart_mass)
        self.mp = float(pole_mass)
        self.length = float(pole_length)
        self.gravity = float(gravity)
        self.u_max = float(u_max)
        self.state_scale = np.array([0.5, 0.3, 1.0, 1.0])
        self.control_scale = np.array([5.0])

    def dynamics(self, x, u, t=0.0):
        x, u = self.check_dims(x, u)
        _, th, xd, thd = x
        s, c = math.sin(th), math.cos(th)
        mc, mp, length, grav = self.mc, self.mp, self.length, self.gravity
        den = mc + mp * s * s
        xdd = (u[0] + mp * s * (length * thd * thd - grav * c)) / den
        thdd = (-u[0] * c - mp * length * thd * thd * s * c + (mc + mp) * grav * s) / (
            length * den
        )
        return np.array([xd, thd, xdd, thdd])

    def linearize(self, x, u, t=0.0):
        x, u = self.check_dims(x, u)
        _, th, _, thd = x
        s, c = math.sin(th), math.cos(th)
        mc, mp, length, grav = self.mc, self.mp, self.length, self.gravity
        den = mc + mp * s * s
        dden = 2.0 * mp * s * c

        n1 = u[0] + mp * s * (length * thd * thd - grav * c)
        dn1_dth = mp * c * length * thd * thd - mp * grav * (c * c - s * s)
        dxdd_dth = (dn1_dth * den - n1 * dden) / den**2
        dxdd_dthd = 2.0 * mp * length * thd * s / den

        n2 = -u[0] * c - mp * length * thd * thd * s * c + (mc + mp) * grav * s
        dn2_dth = u[0] * s - mp * length * thd * thd * (c * c - s * s) + (
            mc + mp
        ) * grav * c
        dthdd_dth = (dn2_dth * den - n2 * dden) / (length * den**2)
        dthdd_dthd = -2.0 * mp * thd * s * c / den

        A = np.array(
            [
                [0.0, 0.0, 1.0, 0.0],
                [0.0, 0.0, 0.0, 1.0],
                [0.0, dxdd_dth, 0.0, dxdd_dthd],
                [0.0, dthdd_dth, 0.0, dthdd_dthd],
            ]
        )
        B = np.array([[0.0], [0.0], [1.0 / den], [-c / (length * den)]])
        return A, B

    def dynamics_batch(self, X, U, ts):
        th, xd, thd = X[:, 1], X[:, 2], X[:, 3]
        s, c = np.sin(th), np.cos(th)
        mc, mp, length, grav = self.mc, self.mp, self.length, self.gravity
        den = mc + mp * s * s
        u0 = U[:, 0]
        xdd = (u0 + mp * s * (length * thd**2 - grav * c)) / den
        thdd = (-u0 * c - mp * length * thd**2 * s * c + (mc + mp) * grav * s) / (
            length * den
        )
        return np.stack([xd, thd, xdd, thdd], axis=1)

    def linearize_batch(self, X, U, ts):
        n = len(X)
        th, thd = X[:, 1], X[:, 3]
        s, c = np.sin(th), np.cos(th)
        mc, mp, length, grav = self.mc, self.mp, self.length, self.gravity
        den = mc + mp * s * s
        dden = 2.0 * mp * s * c
        u0 = U[:, 0]

        n1 = u0 + mp * s * (length * thd**2 - grav * c)
        dn1_dth = mp * c * length * thd**2 - mp * grav * (c * c - s * s)
        dxdd_dth = (dn1_dth * den - n1 * dden) / den**2
        dxdd_dthd = 2.0 * mp * length * thd * s / den

        n2 = -u0 * c - mp * length * thd**2 * s * c + (mc + mp) * grav * s
        dn2_dth = u0 * s - mp * length * thd**2 * (c * c - s * s) + (mc + mp) * grav * c
        dthdd_dth = (dn2_dth * den - n2 * dden) / (length * den**2)
        dthdd_dthd = -2.0 * mp * thd * s * c / den

        A = np.zeros((n, 4, 4))
        A[:, 0, 2] = 1.0
        A[:, 1, 3] = 1.0
        A[:, 2, 1] = dxdd_dth
        A[:, 2, 3] = dxdd_dthd
        A[:, 3, 1] = dthdd_dth
        A[:, 3, 3] = dthdd_dthd
        B = np.zeros((n, 4, 1))
        B[:, 2, 0] = 1.0 / den
        B[:, 3, 0] = -c / (length * den)
        return A, B

    def ineq_constraint_dim(self, t=0.0):
        return 2

    def ineq_constraint(self, x, u, t=0.0):
        x, u = self.check_dims(x, u)
        return np.array([self.u_max - u[0], u[0] + self.u_max])

    def ineq_jacobians(self, x, u, t=0.0):
        Hx = np.zeros((2, 4))
        Hu = np.array([[-1.0], [1.0]])
        return Hx, Hu

    def ineq_batch(self, X, U, ts):
        n = len(X)
        h = np.stack([self.u_max - U[:, 0], U[:, 0] + self.u_max], axis=1)
        Hx = np.zeros((n, 2, 4))
        Hu = np.broadcast_to(np.array([[-1.0], [1.0]]), (n, 2, 1))
        return h, Hx, Hu

    def sample_initial_state(self, rng):
        lo = np.array([-0.5, -0.3, -0.5, -0.5])
        hi = -lo
        return rng.uniform(lo, hi)

    def diverged(self, x, t=0.0, slack=1.0):
        if np.any(~np.isfinite(x)):
            return True
        return bool(abs(x[1]) > math.radians(30.0) * slack or abs(x[0]) > 2.0 * slack)

    def default_cost(self) -> QuadraticCost:
        Q = np.diag([1.0, 5.0, 0.1, 0.5])
        return QuadraticCost(Q, np.array([[0.1]]), Q.copy(), np.zeros(4))

    def default_barrier(self) -> BarrierConfig:
        return BarrierConfig(mu=0.1, epsilon=0.01)


# ---------------------------------------------------------------------------
# 1-D hopper


class Hopper1D(SystemModel):
    """Vertically hopping point mass with a periodic contact schedule.

    State ``[height z, vertical velocity zdot]``; controls ``[contact
    force f, foot velocity w]``.  The contact force always enters the
    dynamics (``zdd = f/m - gravity``) but is pinned to zero during flight
    by the equality constraint, while stance pins the foot velocity to
    zero.  The schedule alternates fixed stance and flight intervals, so
    the active constraint row switches exactly at the mode boundaries.
    """

    name = "hopper1d"
    state_dim = 2
    control_dim = 2

    def __init__(
        self,
        mass: float = 1.0,
        gravity: float = 9.81,
        stance_duration: float = 0.35,
        flight_duration: float = 0.35,
        z_ref: float = 0.5,
    ):
        self.mass = float(mass)
        self.gravity = float(gravity)
        self.stance_duration = float(stance_duration)
        self.flight_duration = float(flight_duration)
        self.z_ref = float(z_ref)
        self.period = self.stance_duration + self.flight_duration
        self.mode_schedule = [
            (0.0, self.stance_duration, "stance"),
            (self.stance_duration, self.period, "flight"),
        ]
        self._A = np.array([[0.0, 1.0], [0.0, 0.0]])
        self._B = np.array([[0.0, 0.0], [1.0 / self.mass, 0.0]])
        self._drift = np.array([0.0, -self.gravity])
        self._D_stance = np.array([[0.0, 1.0]])
        self._D_flight = np.array([[1.0, 0.0]])
        self.state_scale = np.array([1.0, 2.0])
        self.control_scale = np.array([15.0, 1.0])

    def in_stance(self, t: float) -> bool:
        return (t % self.period) < self.stance_duration

    def dynamics(self, x, u, t=0.0):
        x, u = self.check_dims(x, u)
        return self._A @ x + self._B @ u + self._drift

    def linearize(self, x, u, t=0.0):
        return self._A.copy(), self._B.copy()

    def dynamics_batch(self, X, U, ts):
        return X @ self._A.T + U @ self._B.T + self._drift

    def linearize_batch(self, X, U, ts):
        n = len(X)
        return (
            np.broadcast_to(self._A, (n, 2, 2)),
            np.broadcast_to(self._B, (n, 2, 2)),
        )

    def eq_constraint_dim(self, t=0.0):
        return 1

    def eq_constraint(self, x, u, t=0.0):
        x, u = self.check_dims(x, u)
        if self.in_stance(t):
            return np.array([u[1]])
        return np.array([u[0]])

    def eq_jacobians(self, x, u, t=0.0):
        D = self._D_stance if self.in_stance(t) else self._D_flight
        return np.zeros((1, 2)), D.copy()

    def eq_batch(self, X, U, ts):
        n = len(X)
        stance = (np.asarray(ts) % self.period) < self.stance_duration
        g = np.where(stance, U[:, 1], U[:, 0])[:, None]
        D = np.where(stance[:, None, None], self._D_stance, self._D_flight)
        return g, np.zeros((n, 1, 2)), D

    @property
    def phase_dim(self) -> int:
        return 1

    def phase_encode(self, t: float) -> Array:
        tm = t % self.period
        if tm < self.stance_duration:
            return np.array([0.0])
        s = (tm - self.stance_duration) / self.flight_duration
        return np.array([math.sin(math.pi * s)])

    def sample_initial_state(self, rng):
        # bounds surround the touchdown state of the nominal hop cycle: a
        # fixed contact schedule is only sustainable from gait-compatible
        # states, so "feasible" start means entering stance with downward
        # momentum near the cycle's
        for _ in range(1000):
            x = rng.uniform(
                [self.z_ref - 0.04, -1.95], [self.z_ref + 0.05, -1.25]
            )
            if x[0] > 0.2:
                return x
        raise RuntimeError("could not sample a feasible hopper state")

    def diverged(self, x, t=0.0, slack=1.0):
        if np.any(~np.isfinite(x)):
            return True
        return bool(abs(x[0] - self.z_ref) > 0.2 * slack or abs(x[1]) > 5.0 * slack)

    def default_cost(self) -> QuadraticCost:
        Q = np.diag([100.0, 1.0])
        return QuadraticCost(
            Q, np.diag([0.01, 1.0]), Q.copy(), np.array([self.z_ref, 0.0])
        )

    def default_barrier(self) -> BarrierConfig | None:
        return None


# ---------------------------------------------------------------------------
# problem bundle and registry


@dataclass
class ControlProblem:
    """A system together with its cost weights and barrier settings."""

    system: SystemModel
    cost: QuadraticCost
    barrier: BarrierConfig | None = None

    def lagrangian(self, x: Array, u: Array, t: float, nu: Array) -> float:
        """Stage cost plus barrier penalties plus the constraint term ``nu^T g``."""
        sys = self.system
        nu = np.asarray(nu, dtype=float)
        m = sys.eq_constraint_dim(t)
        if nu.shape != (m,):
            raise InputError(f"nu has shape {nu.shape}, expected ({m},)")
        val = self.cost.stage(x, u, t)
        if self.barrier is not None and sys.ineq_constraint_dim(t) > 0:
            val += float(np.sum(self.barrier.value(sys.ineq_constraint(x, u, t))))
        if m > 0:
            val += float(nu @ sys.eq_constraint(x, u, t))
        return val


_SYSTEM_BUILDERS = {
    "redundant-di": RedundantDoubleIntegrator,
    "cartpole": CartPole,
    "hopper1d": Hopper1D,
}

SYSTEM_IDS = tuple(_SYSTEM_BUILDERS)


def make_system(system_id: str, **params) -> SystemModel:
    if system_id not in _SYSTEM_BUILDERS:
        raise InputError(
            f"unknown system {system_id!r}; choose from {sorted(_SYSTEM_BUILDERS)}"
        )
    return _SYSTEM_BUILDERS[system_id](**params)


def make_problem(system_id: str, **params) -> ControlProblem:
    """Build a benchmark problem with its default cost and barrier."""
    system = make_system(system_id, **params)
    return ControlProblem(system, system.default_cost(), system.default_barrier())
