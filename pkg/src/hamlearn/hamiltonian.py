"""Control Hamiltonian evaluation, minimization and gap certificates.

The control Hamiltonian at a sample ``(t, x, dV/dx, nu)`` is

    H(u) = l(x, u, t) + sum_i b(h_i(x, u, t)) + nu^T g(x, u, t)
           + (dV/dx)^T f(x, u, t),

i.e. the constraint-augmented stage cost plus the value-gradient-weighted
dynamics.  Its pointwise minimizer is the optimal control, and the gap
``H(pi) - H(u*)`` of any candidate control bounds the squared control
error through the local curvature of ``H`` in ``u``.  All functions here
are pure over immutable contexts and safe for data-parallel use.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from . import slq
from .systems import Array, ControlProblem, InputError

N_CURVATURE_PROBES = 16


@dataclass(frozen=True)
class HamiltonianContext:
    """One sample at which the Hamiltonian can be evaluated in ``u``."""

    problem: ControlProblem
    t: float
    x: Array
    dvdx: Array
    nu: Array

    def __post_init__(self) -> None:
        sys = self.problem.system
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float))
        object.__setattr__(self, "dvdx", np.asarray(self.dvdx, dtype=float))
        object.__setattr__(self, "nu", np.asarray(self.nu, dtype=float))
        if self.x.shape != (sys.state_dim,):
            raise InputError("context state dimension mismatch")
        if self.dvdx.shape != (sys.state_dim,):
            raise InputError("context value-gradient dimension mismatch")
        if self.nu.shape != (sys.eq_constraint_dim(self.t),):
            raise InputError("context multiplier dimension mismatch")


def evaluate(ctx: HamiltonianContext, u: Array) -> float:
    """Direct term-by-term Hamiltonian value."""
    u = np.asarray(u, dtype=float)
    sys = ctx.problem.system
    lag = ctx.problem.lagrangian(ctx.x, u, ctx.t, ctx.nu)
    return lag + float(ctx.dvdx @ sys.dynamics(ctx.x, u, ctx.t))


def u_gradient(ctx: HamiltonianContext, u: Array) -> Array:
    """Analytic control gradient (input-affine dynamics and constraints)."""
    u = np.asarray(u, dtype=float)
    prob, sys = ctx.problem, ctx.problem.system
    _, B = sys.linearize(ctx.x, u, ctx.t)
    grad = 2.0 * prob.cost.R @ u + B.T @ ctx.dvdx
    if ctx.nu.size:
        _, D = sys.eq_jacobians(ctx.x, u, ctx.t)
        grad += D.T @ ctx.nu
    if prob.barrier is not None and sys.ineq_constraint_dim(ctx.t) > 0:
        h = sys.ineq_constraint(ctx.x, u, ctx.t)
        _, Hu = sys.ineq_jacobians(ctx.x, u, ctx.t)
        grad += Hu.T @ prob.barrier.derivative(h)
    return grad


def u_hessian(ctx: HamiltonianContext, u: Array) -> Array:
    u = np.asarray(u, dtype=float)
    prob, sys = ctx.problem, ctx.problem.system
    hess = 2.0 * prob.cost.R.copy()
    if prob.barrier is not None and sys.ineq_constraint_dim(ctx.t) > 0:
        h = sys.ineq_constraint(ctx.x, u, ctx.t)
        _, Hu = sys.ineq_jacobians(ctx.x, u, ctx.t)
        hess += Hu.T @ (prob.barrier.second_derivative(h)[:, None] * Hu)
    return hess


def argmin(ctx: HamiltonianContext, tol: float = 1e-9, max_iter: int = 100) -> Array:
    """Pointwise minimizer of ``H`` in ``u``.

    Quadratic instances (no control-dependent barrier) are solved in
    closed form; otherwise Newton iterations start from the barrier-free
    solution and run until the gradient norm drops below ``tol``.
    """
    prob, sys = ctx.problem, ctx.problem.system
    _, B = sys.linearize(ctx.x, np.zeros(sys.control_dim), ctx.t)
    lin = B.T @ ctx.dvdx
    if ctx.nu.size:
        _, D = sys.eq_jacobians(ctx.x, np.zeros(sys.control_dim), ctx.t)
        lin = lin + D.T @ ctx.nu
    u = np.linalg.solve(2.0 * prob.cost.R, -lin)
    if prob.barrier is None or sys.ineq_constraint_dim(ctx.t) == 0:
        return u
    for _ in range(max_iter):
        grad = u_gradient(ctx, u)
        if np.linalg.norm(grad) <= tol:
            return u
        hess = u_hessian(ctx, u)
        if _min_eig(hess) <= 0.0:
            raise SolverStationarityError(
                "Weierstrass condition violated at sample: indefinite curvature"
            )
        u = u - np.linalg.solve(hess, grad)
    if np.linalg.norm(u_gradient(ctx, u)) > tol:
        raise SolverStationarityError("Newton minimization of H did not converge")
    return u


class SolverStationarityError(RuntimeError):
    """Raised when the Hamiltonian has no well-posed strong minimum."""


def _min_eig(M: Array) -> float:
    if M.shape[0] == 1:
        return float(M[0, 0])
    return float(np.linalg.eigvalsh(M)[0])


@dataclass(frozen=True)
class OptimalityGapCertificate:
    """Curvature-based bound linking the H-gap to the control error.

    With ``delta`` the smallest eigenvalue of the control Hessian of ``H``
    probed along the segment from the minimizer to the candidate control,
    a strong minimum guarantees

        ||pi - u*||^2  <=  (2 / delta) * (H(pi) - H(u*)).
    """

    delta: float
    gap: float
    bound: float
    lhs: float
    holds: bool
    reason: str = ""


def certificate(
    ctx: HamiltonianContext,
    pi_u: Array,
    u_star: Array | None = None,
    n_probes: int = N_CURVATURE_PROBES,
) -> OptimalityGapCertificate:
    """Evaluate the optimality-gap bound for a candidate control."""
    pi_u = np.asarray(pi_u, dtype=float)
    if u_star is None:
        u_star = argmin(ctx)
    p = pi_u - u_star
    lhs = float(p @ p)
    delta = min(
        _min_eig(u_hessian(ctx, u_star + beta * p))
        for beta in np.linspace(0.0, 1.0, n_probes)
    )
    gap = evaluate(ctx, pi_u) - evaluate(ctx, u_star)
    if delta <= 0.0:
        return OptimalityGapCertificate(
            delta, gap, np.nan, lhs, False, "nonpositive curvature along segment"
        )
    bound = (2.0 / delta) * gap
    return OptimalityGapCertificate(delta, gap, bound, lhs, lhs <= bound + 1e-10)


# ---------------------------------------------------------------------------
# batched evaluation for training


class HamiltonianBatch:
    """Vectorized Hamiltonian over a batch of samples.

    Exploits the input-affine structure shared by all benchmark systems:
    for each sample ``H(u) = const + lin^T u + u^T R u + sum_k b(h0_k +
    Hu_k u)``, so values and control gradients over many candidate
    controls reduce to dense array arithmetic.
    """

    def __init__(
        self,
        problem: ControlProblem,
        ts: Array,
        X: Array,
        DV: Array,
        NU: Array,
    ):
        sys = problem.system
        n_b = len(ts)
        U0 = np.zeros((n_b, sys.control_dim))
        a0 = sys.dynamics_batch(X, U0, ts)
        _, B = sys.linearize_batch(X, U0, ts)
        self.R = problem.cost.R
        self.lin = np.einsum("nij,ni->nj", B, DV)
        xt = X - problem.cost.ref_batch(ts)
        self.const = (
            np.einsum("ni,ij,nj->n", xt, problem.cost.Q, xt)
            + np.einsum("ni,ni->n", DV, a0)
        )
        if sys.eq_constraint_dim(float(ts[0])) > 0:
            g0, _, D = sys.eq_batch(X, U0, ts)
            self.lin += np.einsum("nij,ni->nj", D, NU)
            self.const += np.einsum("ni,ni->n", NU, g0)
        self.barrier = problem.barrier
        if self.barrier is not None and sys.ineq_constraint_dim(float(ts[0])) > 0:
            h0, _, Hu = sys.ineq_batch(X, U0, ts)
            self.h0 = h0
            self.Hu = Hu
        else:
            self.h0 = None
            self.Hu = None

    def values(self, U: Array) -> Array:
        """H at per-sample controls; ``U`` is [batch, nu] or [batch, k, nu]."""
        expand = U.ndim == 3
        lin = self.lin[:, None, :] if expand else self.lin
        const = self.const[:, None] if expand else self.const
        out = const + np.einsum("...j,...j->...", lin, U) + np.einsum(
            "...i,ij,...j->...", U, self.R, U
        )
        if self.h0 is not None:
            h0 = self.h0[:, None, :, None] if expand else self.h0[:, :, None]
            Hu = self.Hu[:, None, :, :] if expand else self.Hu
            h = (h0 + Hu @ U[..., :, None])[..., 0]
            out = out + self.barrier.value(h).sum(axis=-1)
        return out

    def gradients(self, U: Array) -> Array:
        """dH/du at per-sample controls, same leading shape as ``U``."""
        expand = U.ndim == 3
        lin = self.lin[:, None, :] if expand else self.lin
        out = lin + 2.0 * U @ self.R.T
        if self.h0 is not None:
            h0 = self.h0[:, None, :, None] if expand else self.h0[:, :, None]
            Hu = self.Hu[:, None, :, :] if expand else self.Hu
            h = (h0 + Hu @ U[..., :, None])[..., 0]
            bp = self.barrier.derivative(h)
            out = out + np.einsum("...k,...kj->...j", bp, Hu)
        return out


# ---------------------------------------------------------------------------
# comparison against the receding-horizon policy


@dataclass
class ComparisonRow:
    point_kind: str
    policy_kind: str
    g_norm: float
    rel_u_err: float


@dataclass
class ComparisonReport:
    """Per-probe metrics plus medians over the 2x2 (point, policy) grid."""

    rows: list[ComparisonRow]
    skipped: int = 0

    def median(self, point_kind: str, policy_kind: str, metric: str) -> float:
        vals = [
            getattr(r, metric)
            for r in self.rows
            if r.point_kind == point_kind and r.policy_kind == policy_kind
        ]
        return float(np.median(vals)) if vals else np.nan

    def summary(self) -> dict[str, float]:
        out: dict[str, float] = {"skipped": float(self.skipped)}
        for pk in ("on_trajectory", "near_trajectory"):
            for pol in ("mpc_policy", "argmin_h"):
                for metric in ("g_norm", "rel_u_err"):
                    out[f"{pk}.{pol}.{metric}"] = self.median(pk, pol, metric)
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["point_kind", "policy_kind", "g_norm", "rel_u_err"])
        for r in self.rows:
            writer.writerow([r.point_kind, r.policy_kind, repr(r.g_norm), repr(r.rel_u_err)])
        return buf.getvalue()


def _relative_error(u: Array, u_ref: Array) -> float:
    den = np.linalg.norm(u_ref)
    if den < 1e-9:
        return float(np.linalg.norm(u - u_ref))
    return float(np.linalg.norm(u - u_ref) / den)


def benchmark_vs_mpc(
    problem: ControlProblem,
    bundle: slq.SolutionBundle,
    n_points: int = 40,
    tube_std: Array | None = None,
    rng: np.random.Generator | None = None,
    solver_config: slq.SolverConfig | None = None,
) -> ComparisonReport:
    """Compare the feedback policy and pointwise H-minimization.

    Half the probes sit exactly on the nominal trajectory, half are drawn
    from a Gaussian tube around it.  For tube probes the reference optimal
    control is recomputed by re-solving the problem from the probe state
    over the remaining horizon (same terminal time as the bundle, so both
    share one value function and the comparison isolates the quality of
    the local approximations); probes whose re-solve fails to converge are
    skipped and counted.
    """
    if not bundle.converged:
        raise InputError("benchmark requires a converged solution bundle")
    rng = rng or np.random.default_rng(0)
    sys = problem.system
    if tube_std is None:
        tube_std = 0.05 * sys.state_scale
    n_on = n_points // 2
    n_near = n_points - n_on
    N = len(bundle.us)
    rows: list[ComparisonRow] = []
    skipped = 0

    def probe(kind: str, i: int, x: Array, u_ref: Array) -> None:
        t = float(bundle.ts[i])
        u_fb = bundle.mpc_policy(t, x)
        nu = slq.lagrange_multiplier(bundle, problem, t, x)
        ctx = HamiltonianContext(
            problem, t, x, bundle.value_derivative(t, x), nu
        )
        u_h = argmin(ctx)
        for name, u in (("mpc_policy", u_fb), ("argmin_h", u_h)):
            g = sys.eq_constraint(x, u, t)
            rows.append(
                ComparisonRow(
                    kind,
                    name,
                    float(np.linalg.norm(g)) if g.size else 0.0,
                    _relative_error(u, u_ref),
                )
            )

    idx_on = rng.integers(0, N, size=n_on)
    for i in idx_on:
        probe("on_trajectory", int(i), bundle.xs[i].copy(), bundle.us[i].copy())

    base = solver_config or _config_like(bundle)
    dt = float(bundle.ts[1] - bundle.ts[0])
    idx_near = rng.integers(0, N, size=n_near)
    for i in idx_near:
        i = int(i)
        x = bundle.xs[i] + tube_std * rng.standard_normal(sys.state_dim)
        remaining = float(bundle.tf) - float(bundle.ts[i])
        cfg = slq.SolverConfig(
            horizon=remaining,
            dt=dt,
            max_iterations=base.max_iterations,
            cost_tol=base.cost_tol,
            constraint_tol=base.constraint_tol,
        )
        fresh = slq.SLQSolver(problem, cfg).solve(
            x, float(bundle.ts[i]), warm_start=bundle
        )
        if not fresh.converged:
            skipped += 1
            continue
        probe("near_trajectory", i, x, fresh.us[0].copy())

    return ComparisonReport(rows, skipped)


def _config_like(bundle: slq.SolutionBundle) -> slq.SolverConfig:
    dt = float(bundle.ts[1] - bundle.ts[0])
    return slq.SolverConfig(horizon=float(bundle.tf - bundle.t0), dt=dt)
