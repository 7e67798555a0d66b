"""Guided policy training loop.

The trainer alternates two activities driven by a single iteration clock:
every ``mpc_decimation``-th iteration it rolls the system out under a mix
of the receding-horizon feedback law and the current policy, recording
``(t, phase, x, dV/dx, nu, u_mpc)`` tuples into the replay buffer along
the way; every iteration it draws a uniform batch from the buffer,
assembles a loss (Hamiltonian by default, control-matching as the
baseline) and takes one AMSGrad step.

The blending weight of the learned policy in the rollout control grows
linearly from zero to one over the course of training, so the state
distribution seen by the demonstrator gradually shifts toward the states
the learned policy visits.  The solver itself is never influenced by the
policy; mixing only affects which states it is queried from.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, fields

import numpy as np

from .buffer import Batch, ReplayBuffer, Sample
from .hamiltonian import HamiltonianBatch
from .policy import AMSGrad, MLPPolicy, MoEPolicy, Policy
from .slq import SLQSolver, SolutionBundle, SolverConfig, SolverError, lagrange_multiplier
from .systems import Array, ControlProblem, InputError

log = logging.getLogger(__name__)

METRIC_COLUMNS = [
    "iter",
    "demo_seconds_accumulated",
    "loss",
    "avg_cost",
    "survival_s",
    "g_median",
    "alpha",
    "expert_entropy",
]


@dataclass(frozen=True)
class TrainerConfig:
    max_iter: int = 100_000
    mpc_decimation: int = 500
    batch_size: int = 32
    learning_rate: float = 1e-3
    rollout_length: float = 3.0
    dt: float = 0.0025
    n_experts: int = 8
    buffer_capacity: int = 100_000
    tube_sampling: bool = True
    tube_scale: float = 0.05
    loss: str = "hamiltonian"
    eval_every: int = 1000
    eval_rollouts: int = 5
    eval_obs_noise: float = 0.0
    arch: str = "moe"
    latent_dim: int = 32
    gating: str = "sigmoid"
    # steps between receding-horizon re-solves inside a rollout; samples are
    # still recorded at every step from the most recent solution
    mpc_update_steps: int = 40
    # re-solve early once the state drifts this many state-scale norms away
    # from the current nominal trajectory
    resolve_deviation: float = 0.5
    # training rollouts stop once the state leaves the divergence envelope
    # scaled by this slack (a physically failed run cannot continue)
    rollout_divergence_slack: float = 1.2

    def __post_init__(self) -> None:
        if self.max_iter < 0:
            raise InputError("max_iter must be nonnegative")
        for name in (
            "mpc_decimation",
            "batch_size",
            "learning_rate",
            "rollout_length",
            "dt",
            "n_experts",
            "buffer_capacity",
            "eval_every",
            "eval_rollouts",
            "mpc_update_steps",
        ):
            if getattr(self, name) <= 0:
                raise InputError(f"trainer config field {name} must be positive")
        if self.loss not in ("hamiltonian", "bc"):
            raise InputError(f"unknown loss kind {self.loss!r}")
        if self.arch not in ("moe", "mlp"):
            raise InputError(f"unknown architecture {self.arch!r}")

    @property
    def rollout_steps(self) -> int:
        return int(round(self.rollout_length / self.dt))


@dataclass
class EvalReport:
    avg_cost: float
    survival_s: float
    g_median: float
    expert_usage: Array
    expert_entropy: float
    survival_times: list[float] = field(default_factory=list)

    @property
    def full_survival_fraction(self) -> float:
        if not self.survival_times:
            return 0.0
        cap = max(self.survival_times)
        return float(np.mean([abs(s - cap) < 1e-9 for s in self.survival_times]))


@dataclass
class RolloutStats:
    steps: int = 0
    samples: int = 0
    solves: int = 0
    truncated: bool = False


def alpha_schedule(iteration: int, max_iterations: int) -> float:
    """Learned-policy mixing weight, linear from 0 to 1 over training."""
    if max_iterations <= 0:
        return 0.0
    return min(1.0, max(0.0, iteration / max_iterations))


def mixing_policy(alpha: float, u_mpc: Array, u_learned: Array) -> Array:
    """Convex combination of demonstrator and learned controls."""
    return (1.0 - alpha) * u_mpc + alpha * u_learned


def tube_sample(x_nom: Array, sigma: Array, rng: np.random.Generator) -> Array:
    """Gaussian draw around the nominal state with per-state std ``sigma``."""
    return x_nom + np.asarray(sigma, float) * rng.standard_normal(len(x_nom))


# ---------------------------------------------------------------------------
# losses


def hamiltonian_batch_loss(
    policy: Policy, batch: Batch, problem: ControlProblem
) -> tuple[float, dict]:
    """Summed per-expert Hamiltonian loss over a batch.

    Every expert's output enters the Hamiltonian individually, weighted by
    its gating probability, which pushes each expert toward the pointwise
    minimizer on the samples it claims.  Returns the scalar loss and the
    upstream quantities (per-expert H values and control gradients) the
    policy backward pass consumes.
    """
    hb = HamiltonianBatch(problem, batch.t, batch.x, batch.dvdx, batch.nu)
    cache = policy.forward_batch(batch.phase, batch.x)
    if isinstance(policy, MoEPolicy):
        h_vals = hb.values(cache.experts)
        loss = float(np.einsum("be,be->", cache.p, h_vals))
        grads = hb.gradients(cache.experts)
    else:
        h_vals = hb.values(cache.u)
        loss = float(h_vals.sum())
        grads = hb.gradients(cache.u)
    return loss, {"cache": cache, "h_vals": h_vals, "du": grads, "hb": hb}


def hamiltonian_loss_grad(
    policy: Policy, batch: Batch, problem: ControlProblem
) -> tuple[float, Array]:
    loss, aux = hamiltonian_batch_loss(policy, batch, problem)
    if isinstance(policy, MoEPolicy):
        grad = policy.backward(aux["cache"], aux["du"], aux["h_vals"])
    else:
        grad = policy.backward_output(aux["cache"], aux["du"])
    return loss, grad


def bc_batch_loss(policy: Policy, batch: Batch, R: Array) -> tuple[float, dict]:
    """Mean control-matching loss ``(u_mpc - pi)^T R (u_mpc - pi)``."""
    cache = policy.forward_batch(batch.phase, batch.x)
    err = cache.u - batch.u_mpc
    loss = float(np.einsum("bi,ij,bj->", err, R, err)) / len(batch)
    return loss, {"cache": cache, "err": err}


def bc_loss_grad(policy: Policy, batch: Batch, R: Array) -> tuple[float, Array]:
    loss, aux = bc_batch_loss(policy, batch, R)
    du = 2.0 * aux["err"] @ R.T / len(batch)
    return loss, policy.backward_output(aux["cache"], du)


# ---------------------------------------------------------------------------
# rollouts


def mpc_rollout_and_record(
    problem: ControlProblem,
    solver: SLQSolver,
    policy: Policy,
    alpha: float,
    buf: ReplayBuffer,
    config: TrainerConfig,
    rng: np.random.Generator,
) -> RolloutStats:
    """One guided rollout that appends a sample at every control step.

    The receding-horizon problem is re-solved every ``mpc_update_steps``
    steps (or earlier if the state drifts from the nominal plan); between
    solves, value gradients, multipliers and demonstrator controls are
    queried from the most recent solution.  Solver failure truncates the
    rollout and keeps the samples collected so far.
    """
    sys = problem.system
    dt = config.dt
    sigma = config.tube_scale * sys.state_scale if config.tube_sampling else np.zeros(
        sys.state_dim
    )
    x = sys.sample_initial_state(rng)
    stats = RolloutStats()
    bundle: SolutionBundle | None = None
    dev_limit = config.resolve_deviation * float(np.linalg.norm(sys.state_scale))

    for i in range(config.rollout_steps):
        t = i * dt
        need_solve = bundle is None or (i % config.mpc_update_steps == 0)
        if bundle is not None and not need_solve:
            if np.linalg.norm(x - bundle.state_nominal(t)) > dev_limit:
                need_solve = True
        if need_solve:
            try:
                fresh = solver.solve(x, t, warm_start=bundle)
            except (SolverError, FloatingPointError) as err:
                log.debug("rollout truncated at t=%.3f: %s", t, err)
                stats.truncated = True
                break
            stats.solves += 1
            if not fresh.converged:
                stats.truncated = True
                break
            bundle = fresh

        x_sample = tube_sample(x, sigma, rng)
        try:
            dvdx = bundle.value_derivative(t, x_sample)
            nu = lagrange_multiplier(bundle, problem, t, x_sample)
            u_demo = bundle.mpc_policy(t, x_sample)
        except SolverError:
            stats.truncated = True
            break
        phase = sys.phase_encode(t)
        if buf.append(Sample(t, phase, x_sample, dvdx, nu, u_demo)):
            stats.samples += 1

        u_mpc = bundle.mpc_policy(t, x)
        u_pol = policy(phase, x)
        u = mixing_policy(alpha, u_mpc, u_pol)
        x = x + sys.dynamics(x, u, t) * dt
        stats.steps = i + 1
        if sys.diverged(x, t + dt, slack=config.rollout_divergence_slack):
            stats.truncated = True
            break
    return stats


def evaluate_policy(
    problem: ControlProblem,
    policy: Policy,
    n_rollouts: int,
    config: TrainerConfig,
    rng: np.random.Generator,
) -> EvalReport:
    """Closed-loop test rollouts with early termination on divergence.

    Reports the accumulated cost (stage rates plus the terminal cost at
    the last state reached), survival time, the median constraint
    violation along the way, and gating usage statistics.
    """
    sys = problem.system
    dt = config.dt
    n_steps = config.rollout_steps
    costs, survivals, g_norms = [], [], []
    usage = np.zeros(getattr(policy, "n_experts", 1))
    usage_steps = 0

    for _ in range(n_rollouts):
        x = sys.sample_initial_state(rng)
        cost = 0.0
        steps = 0
        for i in range(n_steps):
            t = i * dt
            phase = sys.phase_encode(t)
            x_obs = x
            if config.eval_obs_noise > 0.0:
                x_obs = x + config.eval_obs_noise * sys.state_scale * rng.standard_normal(
                    sys.state_dim
                )
            if isinstance(policy, MoEPolicy):
                u, p, _ = policy.forward(phase, x_obs)
                usage += p
                usage_steps += 1
            else:
                u = policy.forward(phase, x_obs)
            if sys.eq_constraint_dim(t) > 0:
                g_norms.append(float(np.linalg.norm(sys.eq_constraint(x, u, t))))
            cost += problem.cost.stage(x, u, t) * dt
            x = x + sys.dynamics(x, u, t) * dt
            steps = i + 1
            if sys.diverged(x, t):
                break
        cost += problem.cost.terminal(x, steps * dt)
        costs.append(cost)
        survivals.append(steps * dt)

    if usage_steps > 0:
        usage = usage / usage_steps
    else:
        usage = np.full(len(usage), 1.0 / len(usage))
    with np.errstate(divide="ignore", invalid="ignore"):
        ent = float(-np.sum(np.where(usage > 0, usage * np.log(usage), 0.0)))
    return EvalReport(
        avg_cost=float(np.mean(costs)),
        survival_s=float(np.mean(survivals)),
        g_median=float(np.median(g_norms)) if g_norms else 0.0,
        expert_usage=usage,
        expert_entropy=ent,
        survival_times=[float(s) for s in survivals],
    )


# ---------------------------------------------------------------------------
# the training loop


def make_policy(problem: ControlProblem, config: TrainerConfig,
                rng: np.random.Generator) -> Policy:
    sys = problem.system
    if config.arch == "moe":
        return MoEPolicy.init(
            sys.phase_dim, sys.state_dim, sys.control_dim, rng,
            n_experts=config.n_experts, latent_dim=config.latent_dim,
            gating=config.gating, control_scale=sys.control_scale,
        )
    return MLPPolicy.init(
        sys.phase_dim, sys.state_dim, sys.control_dim, rng,
        latent_dim=config.latent_dim, control_scale=sys.control_scale,
    )


def make_buffer(problem: ControlProblem, config: TrainerConfig) -> ReplayBuffer:
    sys = problem.system
    return ReplayBuffer(
        config.buffer_capacity,
        sys.phase_dim,
        sys.state_dim,
        sys.eq_constraint_dim(0.0),
        sys.control_dim,
    )


def run_training(
    problem: ControlProblem,
    config: TrainerConfig,
    solver_config: SolverConfig,
    seed: int = 0,
    policy: Policy | None = None,
    buf: ReplayBuffer | None = None,
) -> tuple[Policy, list[dict], ReplayBuffer]:
    """Run the full guided-learning loop; deterministic for a given seed."""
    seq = np.random.SeedSequence(seed)
    rng_init, rng_rollout, rng_batch, rng_eval = (
        np.random.default_rng(s) for s in seq.spawn(4)
    )
    if policy is None:
        policy = make_policy(problem, config, rng_init)
    if buf is None:
        buf = make_buffer(problem, config)
    solver = SLQSolver(problem, solver_config)
    opt = AMSGrad(policy.n_params)

    history: list[dict] = []
    loss_window: list[float] = []
    demo_seconds = 0.0
    alpha = 0.0

    for it in range(config.max_iter):
        if it % config.mpc_decimation == 0:
            alpha = alpha_schedule(it, config.max_iter)
            stats = mpc_rollout_and_record(
                problem, solver, policy, alpha, buf, config, rng_rollout
            )
            demo_seconds += stats.steps * config.dt
            log.debug(
                "iter %d rollout: %d samples, %d solves, truncated=%s",
                it, stats.samples, stats.solves, stats.truncated,
            )

        if len(buf) == 0:
            log.warning("iter %d: empty buffer, skipping update", it)
            continue
        batch = buf.draw_batch_arrays(config.batch_size, rng_batch)
        if config.loss == "hamiltonian":
            loss, grad = hamiltonian_loss_grad(policy, batch, problem)
        else:
            loss, grad = bc_loss_grad(policy, batch, problem.cost.R)
        policy.set_flat(opt.step(policy.get_flat(), grad, config.learning_rate))
        loss_window.append(loss)

        if (it + 1) % config.eval_every == 0 or it + 1 == config.max_iter:
            report = evaluate_policy(
                problem, policy, config.eval_rollouts, config, rng_eval
            )
            history.append(
                {
                    "iter": it + 1,
                    "demo_seconds_accumulated": demo_seconds,
                    "loss": float(np.mean(loss_window)) if loss_window else np.nan,
                    "avg_cost": report.avg_cost,
                    "survival_s": report.survival_s,
                    "g_median": report.g_median,
                    "alpha": alpha,
                    "expert_entropy": report.expert_entropy,
                }
            )
            loss_window.clear()
            log.info(
                "iter %d: survival %.2fs cost %.4g g_med %.3g",
                it + 1, report.survival_s, report.avg_cost, report.g_median,
            )
    return policy, history, buf


def write_metrics_csv(history: list[dict], path: str) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(METRIC_COLUMNS)
        for row in history:
            writer.writerow(
                [
                    row["iter"],
                    *(repr(float(row[c])) for c in METRIC_COLUMNS[1:]),
                ]
            )
