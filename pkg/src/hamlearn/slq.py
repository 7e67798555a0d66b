"""Constrained sequential linear-quadratic trajectory optimizer.

Discrete-time iLQR variant over an explicit-Euler transcription of the
continuous problem.  Equality constraints are enforced per step by
projecting the affine control update onto the null space of the input
Jacobian, with Lagrange multipliers recovered from the stationarity
condition.  Inequality constraints enter through the relaxed log barrier
of the owning problem.  The backward pass produces, at every knot, a
quadratic approximation of the constrained cost-to-go

    V(t, x) ~ s0 + Sv^T dx + 0.5 dx^T Sm dx,    dx = x - x_nom(t),

linear feedback gains and a first-order model of the multipliers, which
together are everything downstream consumers (policy training, pointwise
Hamiltonian minimization) need.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .systems import Array, ControlProblem, InputError

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    """Raised when the backward pass or a KKT solve cannot proceed."""


@dataclass(frozen=True)
class SolverConfig:
    horizon: float = 1.0
    dt: float = 0.0025
    max_iterations: int = 60
    cost_tol: float = 1e-9
    ls_backtrack: float = 0.5
    ls_min_step: float = 1e-3
    constraint_tol: float = 1e-6
    reg_init: float = 1e-6
    reg_max: float = 1e8
    kkt_multipliers: bool = True

    def __post_init__(self) -> None:
        for name in (
            "horizon",
            "dt",
            "max_iterations",
            "cost_tol",
            "ls_backtrack",
            "ls_min_step",
            "constraint_tol",
        ):
            if getattr(self, name) <= 0:
                raise InputError(f"solver config field {name} must be positive")
        steps = self.horizon / self.dt
        if abs(steps - round(steps)) > 1e-9:
            raise InputError("dt must divide the horizon")

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.dt))


@dataclass
class SolutionBundle:
    """Everything one receding-horizon solve produces.

    Immutable after the solve; safe to share between threads.  ``Sv`` and
    ``Sm`` follow the convention ``V = s0 + Sv^T dx + 0.5 dx^T Sm dx``.
    """

    ts: Array
    xs: Array
    us: Array
    Ks: Array
    s0: Array
    Sv: Array
    Sm: Array
    nus: Array
    nu_gains: Array
    mode_ids: list[str]
    converged: bool
    total_cost: float
    g_max: float
    iterations: int
    cost_trace: list[float] = field(default_factory=list)

    @property
    def t0(self) -> float:
        return float(self.ts[0])

    @property
    def tf(self) -> float:
        return float(self.ts[-1])

    def _locate(self, t: float) -> tuple[int, float]:
        if not (self.t0 - 1e-9 <= t <= self.tf + 1e-9):
            raise InputError(f"time {t} outside bundle horizon [{self.t0}, {self.tf}]")
        dt = float(self.ts[1] - self.ts[0])
        pos = np.clip((t - self.t0) / dt, 0.0, len(self.ts) - 1.0)
        i = min(int(pos), len(self.ts) - 2)
        return i, float(pos - i)

    def _knot_weights(self, t: float) -> tuple[int, int, float]:
        """Interpolation pair for quantities tied to the active mode.

        Linear interpolation is invalid across a mode switch, where
        controls, gains and multipliers jump; there the knot on the same
        side of the boundary as ``t`` is used instead.
        """
        i, tau = self._locate(t)
        left, right = self.mode_ids[i], self.mode_ids[min(i + 1, len(self.us) - 1)]
        if left == right:
            return i, min(i + 1, len(self.us) - 1), tau
        here = self.mode_ids[i] if tau < 1.0 else right
        # pick the bracketing knot whose mode matches the query time
        if here == left:
            return i, i, 0.0
        return min(i + 1, len(self.us) - 1), min(i + 1, len(self.us) - 1), 0.0

    def state_nominal(self, t: float) -> Array:
        i, tau = self._locate(t)
        return (1.0 - tau) * self.xs[i] + tau * self.xs[i + 1]

    def mpc_policy(self, t: float, x: Array) -> Array:
        """Feedback law ``u_nom(t) + K(t) (x - x_nom(t))``."""
        i, j, tau = self._knot_weights(t)
        u = (1.0 - tau) * self.us[i] + tau * self.us[j]
        K = (1.0 - tau) * self.Ks[i] + tau * self.Ks[j]
        return u + K @ (np.asarray(x, dtype=float) - self.state_nominal(t))

    def value_derivative(self, t: float, x: Array) -> Array:
        """Gradient of the quadratic cost-to-go model at ``(t, x)``."""
        i, tau = self._locate(t)
        Sv = (1.0 - tau) * self.Sv[i] + tau * self.Sv[i + 1]
        Sm = (1.0 - tau) * self.Sm[i] + tau * self.Sm[i + 1]
        return Sv + Sm @ (np.asarray(x, dtype=float) - self.state_nominal(t))

    def multiplier_nominal(self, t: float, x: Array | None = None) -> Array:
        """First-order multiplier model ``nu_nom(t) + dnu/dx (x - x_nom)``."""
        if self.nus.shape[1] == 0:
            return np.zeros(0)
        i, j, tau = self._knot_weights(t)
        nu = (1.0 - tau) * self.nus[i] + tau * self.nus[j]
        if x is None:
            return nu
        gain = (1.0 - tau) * self.nu_gains[i] + tau * self.nu_gains[j]
        return nu + gain @ (np.asarray(x, dtype=float) - self.state_nominal(t))


@dataclass
class _Backward:
    ks: Array
    Ks: Array
    s0: Array
    Sv: Array
    Sm: Array
    nus: Array
    nu_gains: Array
    expected_decrease: float


def _min_eig_sym(M: Array) -> float:
    if M.shape[0] == 1:
        return float(M[0, 0])
    return float(np.linalg.eigvalsh(M)[0])


class SLQSolver:
    """Single-use-at-a-time solver instance for one control problem.

    Separate instances may run concurrently on independent problems;
    returned bundles are immutable.
    """

    def __init__(self, problem: ControlProblem, config: SolverConfig | None = None):
        self.problem = problem
        self.config = config or SolverConfig()
        self._null_cache: dict[bytes, tuple[Array, Array, Array]] = {}

    # -- public API ----------------------------------------------------------

    def solve(
        self,
        x0: Array,
        t0: float = 0.0,
        warm_start: SolutionBundle | None = None,
    ) -> SolutionBundle:
        cfg = self.config
        sys = self.problem.system
        x0 = np.asarray(x0, dtype=float)
        if x0.shape != (sys.state_dim,) or not np.all(np.isfinite(x0)):
            raise InputError("x0 must be a finite state vector")

        N = cfg.n_steps
        ts = t0 + cfg.dt * np.arange(N + 1)
        us = self._initial_controls(x0, ts, warm_start)
        xs, us, J, g_max = self._rollout_open_loop(x0, us, ts)

        cost_trace = [J]
        converged = False
        bw: _Backward | None = None
        it = 0
        for it in range(1, cfg.max_iterations + 1):
            try:
                bw = self._backward(xs, us, ts)
            except SolverError as err:
                log.warning("backward pass failed at iteration %d: %s", it, err)
                bw = None
                break
            if bw.expected_decrease <= cfg.cost_tol * (1.0 + abs(J)) and (
                g_max <= cfg.constraint_tol
            ):
                converged = True
                break
            accepted = False
            alpha = 1.0
            while alpha >= cfg.ls_min_step:
                xs2, us2, J2, g2 = self._rollout_feedback(x0, xs, us, ts, bw, alpha)
                if J2 <= J + 1e-12 * (1.0 + abs(J)):
                    xs, us, J, g_max = xs2, us2, J2, g2
                    cost_trace.append(J)
                    accepted = True
                    break
                alpha *= cfg.ls_backtrack
            if not accepted:
                log.debug("line search stalled at iteration %d (cost %.6g)", it, J)
                break

        if bw is None:
            bw = self._safe_backward(xs, us, ts)
        elif not converged and len(cost_trace) > 1:
            # gains must describe the final accepted trajectory
            bw = self._safe_backward(xs, us, ts)

        mode_ids = [sys.mode_id(float(t)) for t in ts[:-1]]
        bundle = SolutionBundle(
            ts=ts,
            xs=xs,
            us=us,
            Ks=bw.Ks,
            s0=bw.s0,
            Sv=bw.Sv,
            Sm=bw.Sm,
            nus=bw.nus,
            nu_gains=bw.nu_gains,
            mode_ids=mode_ids,
            converged=converged,
            total_cost=J,
            g_max=g_max,
            iterations=it,
            cost_trace=cost_trace,
        )
        log.debug(
            "solve t0=%.4f iters=%d cost=%.6g g_max=%.3g converged=%s",
            t0,
            it,
            J,
            g_max,
            converged,
        )
        return bundle

    def backward_pass(
        self, xs: Array, us: Array, ts: Array
    ) -> tuple[Array, tuple[Array, Array, Array], Array]:
        """Gains, quadratic value model and multipliers for a trajectory.

        Returns ``(K, (s0, Sv, Sm), nu_nom)``.
        """
        bw = self._backward(xs, us, ts)
        return bw.Ks, (bw.s0, bw.Sv, bw.Sm), bw.nus

    # -- internals -----------------------------------------------------------

    def _initial_controls(
        self, x0: Array, ts: Array, warm_start: SolutionBundle | None
    ) -> Array:
        """Time-shifted reuse of a previous solution as the initial guess."""
        sys = self.problem.system
        N = len(ts) - 1
        us = np.zeros((N, sys.control_dim))
        if warm_start is not None and len(warm_start.us):
            dt = float(ts[1] - ts[0])
            dt_w = float(warm_start.ts[1] - warm_start.ts[0])
            if abs(dt - dt_w) < 1e-12:
                shift = int(round((float(ts[0]) - warm_start.t0) / dt))
                n_old = len(warm_start.us)
                idx = np.clip(shift + np.arange(N), 0, n_old - 1)
                us = warm_start.us[idx].copy()
        return us

    def _project_feasible(self, x: Array, u: Array, t: float) -> Array:
        """Least-squares shift of ``u`` onto the constraint manifold."""
        sys = self.problem.system
        if sys.eq_constraint_dim(t) == 0:
            return u
        g = sys.eq_constraint(x, u, t)
        _, D = sys.eq_jacobians(x, u, t)
        _, Dp, _ = self._null_basis(D)
        return u - Dp @ g

    def _rollout_open_loop(
        self, x0: Array, us: Array, ts: Array
    ) -> tuple[Array, Array, float, float]:
        sys = self.problem.system
        dt = float(ts[1] - ts[0])
        N = len(ts) - 1
        xs = np.zeros((N + 1, sys.state_dim))
        us = us.copy()
        xs[0] = x0
        for i in range(N):
            t = float(ts[i])
            us[i] = self._project_feasible(xs[i], us[i], t)
            xs[i + 1] = xs[i] + sys.dynamics(xs[i], us[i], t) * dt
        if not np.all(np.isfinite(xs)):
            raise SolverError("initial rollout diverged")
        J, g_max = self._trajectory_cost(xs, us, ts)
        return xs, us, J, g_max

    def _rollout_feedback(
        self,
        x0: Array,
        xs_ref: Array,
        us_ref: Array,
        ts: Array,
        bw: _Backward,
        alpha: float,
    ) -> tuple[Array, Array, float, float]:
        sys = self.problem.system
        dt = float(ts[1] - ts[0])
        N = len(ts) - 1
        xs = np.zeros_like(xs_ref)
        us = np.zeros_like(us_ref)
        xs[0] = x0
        for i in range(N):
            dx = xs[i] - xs_ref[i]
            us[i] = us_ref[i] + alpha * bw.ks[i] + bw.Ks[i] @ dx
            xs[i + 1] = xs[i] + sys.dynamics(xs[i], us[i], float(ts[i])) * dt
            if not np.all(np.isfinite(xs[i + 1])):
                return xs, us, np.inf, np.inf
        J, g_max = self._trajectory_cost(xs, us, ts)
        return xs, us, J, g_max

    def _trajectory_cost(self, xs: Array, us: Array, ts: Array) -> tuple[float, float]:
        prob = self.problem
        sys = prob.system
        dt = float(ts[1] - ts[0])
        stage = prob.cost.stage_batch(xs[:-1], us, ts[:-1])
        if prob.barrier is not None and sys.ineq_constraint_dim(float(ts[0])) > 0:
            h, _, _ = sys.ineq_batch(xs[:-1], us, ts[:-1])
            stage = stage + prob.barrier.value(h).sum(axis=1)
        J = float(stage.sum() * dt + prob.cost.terminal(xs[-1], float(ts[-1])))
        if sys.eq_constraint_dim(float(ts[0])) > 0:
            g, _, _ = sys.eq_batch(xs[:-1], us, ts[:-1])
            g_max = float(np.linalg.norm(g, axis=1).max())
        else:
            g_max = 0.0
        if not np.isfinite(J):
            J = np.inf
        return J, g_max

    def _null_basis(self, D: Array) -> tuple[Array, Array, Array]:
        key = D.tobytes()
        cached = self._null_cache.get(key)
        if cached is not None:
            return cached
        m, nu = D.shape
        svals = np.linalg.svd(D, compute_uv=False)
        if svals[-1] < 1e-10 * max(1.0, svals[0]):
            raise SolverError("degenerate constraint")
        _, _, Vt = np.linalg.svd(D)
        Z = Vt[m:].T
        Dp = np.linalg.pinv(D)
        DDt_inv = np.linalg.inv(D @ D.T)
        self._null_cache[key] = (Z, Dp, DDt_inv)
        return Z, Dp, DDt_inv

    def _backward(self, xs: Array, us: Array, ts: Array) -> _Backward:
        cfg = self.config
        prob = self.problem
        sys = prob.system
        dt = float(ts[1] - ts[0])
        N = len(us)
        n, nu = sys.state_dim, sys.control_dim
        m = sys.eq_constraint_dim(float(ts[0]))

        A, B = sys.linearize_batch(xs[:-1], us, ts[:-1])
        Ad = np.eye(n) + A * dt
        Bd = B * dt

        refs = prob.cost.ref_batch(ts)
        xt = xs - refs
        Q2dt = 2.0 * prob.cost.Q * dt
        R2dt = 2.0 * prob.cost.R * dt
        cx = xt[:-1] @ Q2dt
        cu = us @ R2dt
        cxx = np.broadcast_to(Q2dt, (N, n, n)).copy()
        cuu = np.broadcast_to(R2dt, (N, nu, nu)).copy()
        cux = np.zeros((N, nu, n))
        c0 = prob.cost.stage_batch(xs[:-1], us, ts[:-1]) * dt

        if prob.barrier is not None and sys.ineq_constraint_dim(float(ts[0])) > 0:
            h, Hx, Hu = sys.ineq_batch(xs[:-1], us, ts[:-1])
            bp = prob.barrier.derivative(h) * dt
            bpp = prob.barrier.second_derivative(h) * dt
            cx += np.einsum("nk,nki->ni", bp, Hx)
            cu += np.einsum("nk,nkj->nj", bp, Hu)
            cxx += np.einsum("nk,nki,nkl->nil", bpp, Hx, Hx)
            cuu += np.einsum("nk,nkj,nkl->njl", bpp, Hu, Hu)
            cux += np.einsum("nk,nkj,nki->nji", bpp, Hu, Hx)
            c0 += prob.barrier.value(h).sum(axis=1) * dt

        if m > 0:
            g0, C, D = sys.eq_batch(xs[:-1], us, ts[:-1])

        ks = np.zeros((N, nu))
        Ks = np.zeros((N, nu, n))
        nus = np.zeros((N, m))
        nu_gains = np.zeros((N, m, n))
        s0 = np.zeros(N + 1)
        Sv = np.zeros((N + 1, n))
        Sm = np.zeros((N + 1, n, n))

        Sm[N] = 2.0 * prob.cost.Qf
        Sv[N] = 2.0 * prob.cost.Qf @ xt[N]
        s0[N] = float(xt[N] @ prob.cost.Qf @ xt[N])

        AdT = np.swapaxes(Ad, 1, 2)
        BdT = np.swapaxes(Bd, 1, 2)
        expected = 0.0
        for i in range(N - 1, -1, -1):
            Svn, Smn = Sv[i + 1], Sm[i + 1]
            AtS = AdT[i] @ Smn
            BtS = BdT[i] @ Smn
            Qx = cx[i] + AdT[i] @ Svn
            Qu = cu[i] + BdT[i] @ Svn
            Qxx = cxx[i] + AtS @ Ad[i]
            Quu = cuu[i] + BtS @ Bd[i]
            Qux = cux[i] + BtS @ Ad[i]

            if m > 0:
                Z, Dp, DDt_inv = self._null_basis(D[i])
                k_feas = -Dp @ g0[i]
                K_feas = -Dp @ C[i]
                Quu_z = self._regularize(Z.T @ Quu @ Z)
                rhs_k = Z.T @ (Qu + Quu @ k_feas)
                rhs_K = Z.T @ (Qux + Quu @ K_feas)
                if Quu_z.shape[0] == 1:
                    kz = -rhs_k / Quu_z[0, 0]
                    Kz = -rhs_K / Quu_z[0, 0]
                else:
                    kz = -np.linalg.solve(Quu_z, rhs_k)
                    Kz = -np.linalg.solve(Quu_z, rhs_K)
                k = k_feas + Z @ kz
                K = K_feas + Z @ Kz
                nus[i] = -DDt_inv @ (D[i] @ (Qu + Quu @ k)) / dt
                nu_gains[i] = -DDt_inv @ (D[i] @ (Qux + Quu @ K)) / dt
            else:
                Quu_r = self._regularize(Quu)
                if Quu_r.shape[0] == 1:
                    k = -Qu / Quu_r[0, 0]
                    K = -Qux / Quu_r[0, 0]
                else:
                    k = -np.linalg.solve(Quu_r, Qu)
                    K = -np.linalg.solve(Quu_r, Qux)

            ks[i] = k
            Ks[i] = K
            Quu_k = Quu @ k
            expected -= float(Qu @ k + 0.5 * k @ Quu_k)
            Sv[i] = Qx + K.T @ (Quu_k + Qu) + Qux.T @ k
            Smi = Qxx + K.T @ (Quu @ K + Qux) + Qux.T @ K
            Sm[i] = 0.5 * (Smi + Smi.T)
            s0[i] = c0[i] + s0[i + 1]

        return _Backward(ks, Ks, s0, Sv, Sm, nus, nu_gains, expected)

    def _regularize(self, M: Array) -> Array:
        """Levenberg-style shift keeping the control Hessian comfortably PD."""
        lo = _min_eig_sym(M)
        if lo >= 1e-6:
            return M
        reg = self.config.reg_init
        eye = np.eye(M.shape[0])
        while reg <= self.config.reg_max:
            shifted = M + (reg + max(0.0, -lo)) * eye
            if _min_eig_sym(shifted) >= 1e-6:
                return shifted
            reg *= 10.0
        raise SolverError("control Hessian could not be regularized")

    def _safe_backward(self, xs: Array, us: Array, ts: Array) -> _Backward:
        try:
            return self._backward(xs, us, ts)
        except SolverError:
            N, nu = us.shape
            n = xs.shape[1]
            m = self.problem.system.eq_constraint_dim(float(ts[0]))
            return _Backward(
                np.zeros((N, nu)),
                np.zeros((N, nu, n)),
                np.zeros(N + 1),
                np.zeros((N + 1, n)),
                np.zeros((N + 1, n, n)),
                np.zeros((N, m)),
                np.zeros((N, m, n)),
                0.0,
            )


def mpc_policy(bundle: SolutionBundle, t: float, x: Array) -> Array:
    return bundle.mpc_policy(t, x)


def value_derivative(bundle: SolutionBundle, t: float, x: Array) -> Array:
    return bundle.value_derivative(t, x)


def lagrange_multiplier(
    bundle: SolutionBundle,
    problem: ControlProblem,
    t: float,
    x: Array,
    kkt: bool | None = None,
) -> Array:
    """Constraint multiplier estimate at a query point.

    By default re-solves the pointwise stationarity system

        2 R u + barrier_u(u) + B^T dV/dx + D^T nu = 0,   g(x, u, t) = 0

    jointly for ``(u, nu)`` using the bundle's value-gradient model.  With
    ``kkt=False`` the first-order multiplier model stored along the nominal
    trajectory is evaluated instead.
    """
    sys = problem.system
    m = sys.eq_constraint_dim(t)
    if m == 0:
        return np.zeros(0)
    if kkt is False:
        return bundle.multiplier_nominal(t, x)

    x = np.asarray(x, dtype=float)
    dvdx = bundle.value_derivative(t, x)
    u = bundle.mpc_policy(t, x)
    _, Bmat = sys.linearize(x, u, t)
    R2 = 2.0 * problem.cost.R
    nu_dim = sys.control_dim
    nu = bundle.multiplier_nominal(t, x)
    has_barrier = problem.barrier is not None and sys.ineq_constraint_dim(t) > 0

    for _ in range(50):
        g = sys.eq_constraint(x, u, t)
        _, D = sys.eq_jacobians(x, u, t)
        grad = R2 @ u + Bmat.T @ dvdx + D.T @ nu
        hess = R2.copy()
        if has_barrier:
            h = sys.ineq_constraint(x, u, t)
            _, Hu = sys.ineq_jacobians(x, u, t)
            grad += Hu.T @ problem.barrier.derivative(h)
            hess += Hu.T @ (problem.barrier.second_derivative(h)[:, None] * Hu)
        resid = np.concatenate([grad, g])
        if np.linalg.norm(resid) <= 1e-11:
            break
        kkt_mat = np.zeros((nu_dim + m, nu_dim + m))
        kkt_mat[:nu_dim, :nu_dim] = hess
        kkt_mat[:nu_dim, nu_dim:] = D.T
        kkt_mat[nu_dim:, :nu_dim] = D
        try:
            step = np.linalg.solve(kkt_mat, -resid)
        except np.linalg.LinAlgError as err:
            raise SolverError("degenerate constraint") from err
        u = u + step[:nu_dim]
        nu = nu + step[nu_dim:]
    return nu
