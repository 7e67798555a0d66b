"""Command-line entry points.

Commands
--------
train         run the guided-learning loop, writing metrics, policy and
              a buffer snapshot into the output directory
eval          closed-loop evaluation of a saved policy, report as JSON
verify        policy-vs-minimizer comparison grid plus a curvature-bound
              sweep, with pass/fail thresholds (usable as a CI gate)
gating-trace  per-timestep gating weights of a trained mixture policy
              over one gait period

Exit codes: 0 success / thresholds met, 1 runtime failure, 2 usage or
configuration error.  Every command is reproducible under a fixed seed.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys

import numpy as np

from . import hamiltonian as ham
from . import slq, training
from .buffer import ReplayBuffer
from .config import VERIFY_SOLVER_DT, RunConfig, SOLVER_DEFAULTS, apply_overrides
from .policy import MoEPolicy, load_policy, save_policy
from .systems import InputError, make_problem

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2

# verification thresholds for the pointwise-minimizer comparison
VERIFY_THRESHOLDS = {
    "on_rel_u_err": 5e-3,
    "near_rel_u_err": 5e-2,
    "g_norm": 1e-3,
}


def _build_config(args: argparse.Namespace) -> RunConfig:
    data: dict = {}
    if args.config:
        with open(args.config) as f:
            data = json.load(f)
    overrides = list(getattr(args, "set", []) or [])
    if getattr(args, "system", None):
        overrides.append(f"system={args.system}")
    if getattr(args, "seed", None) is not None:
        overrides.append(f"seed={args.seed}")
    if getattr(args, "out", None):
        overrides.append(f"out_dir={args.out}")
    if getattr(args, "loss", None):
        overrides.append(f"trainer.loss={args.loss}")
    if getattr(args, "arch", None):
        overrides.append(f"trainer.arch={args.arch}")
    if getattr(args, "tube", None):
        overrides.append(f"trainer.tube_sampling={'true' if args.tube == 'on' else 'false'}")
    if getattr(args, "max_iter", None) is not None:
        overrides.append(f"trainer.max_iter={args.max_iter}")
    apply_overrides(data, overrides)
    if "trainer" not in data:
        data["trainer"] = {}
    return RunConfig.from_dict(data)


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _build_config(args)
    problem = make_problem(cfg.system, **cfg.system_params)
    os.makedirs(cfg.out_dir, exist_ok=True)
    cfg.save(os.path.join(cfg.out_dir, "config.json"))

    buf = None
    if args.buffer_in:
        buf = ReplayBuffer.load(args.buffer_in)
    policy, history, buf = training.run_training(
        problem, cfg.trainer, cfg.solver, seed=cfg.seed, buf=buf
    )
    training.write_metrics_csv(history, os.path.join(cfg.out_dir, "metrics.csv"))
    save_policy(policy, os.path.join(cfg.out_dir, "policy.bin"))
    buffer_out = args.buffer_out or os.path.join(cfg.out_dir, "buffer.bin")
    buf.save(buffer_out)
    print(json.dumps({"out_dir": cfg.out_dir, "iterations": cfg.trainer.max_iter,
                      "final": history[-1] if history else None}))
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    if not os.path.exists(args.policy):
        print(f"policy file not found: {args.policy}", file=sys.stderr)
        return EXIT_USAGE
    policy = load_policy(args.policy)
    cfg = _build_config(args)
    problem = make_problem(cfg.system, **cfg.system_params)
    sys_model = problem.system
    if (policy.state_dim, policy.control_dim) != (
        sys_model.state_dim,
        sys_model.control_dim,
    ):
        print("policy dimensions do not match the selected system", file=sys.stderr)
        return EXIT_USAGE
    rng = np.random.default_rng(cfg.seed)
    report = training.evaluate_policy(problem, policy, args.episodes, cfg.trainer, rng)
    print(
        json.dumps(
            {
                "avg_cost": report.avg_cost,
                "survival_s": report.survival_s,
                "g_median": report.g_median,
                "expert_usage": list(report.expert_usage),
                "expert_entropy": report.expert_entropy,
                "survival_times": report.survival_times,
            }
        )
    )
    return EXIT_OK


def check_comparison_thresholds(report: ham.ComparisonReport) -> dict[str, bool]:
    """Pass/fail per verification threshold for a comparison report."""
    s = report.summary()
    return {
        "on_rel_u_err": s["on_trajectory.argmin_h.rel_u_err"]
        <= VERIFY_THRESHOLDS["on_rel_u_err"],
        "near_rel_u_err": s["near_trajectory.argmin_h.rel_u_err"]
        <= VERIFY_THRESHOLDS["near_rel_u_err"],
        "g_norm": max(
            s["on_trajectory.argmin_h.g_norm"], s["near_trajectory.argmin_h.g_norm"]
        )
        <= VERIFY_THRESHOLDS["g_norm"],
    }


def run_verification(
    system_id: str,
    seed: int = 0,
    n_points: int = 40,
    n_certificates: int = 1000,
    system_params: dict | None = None,
):
    """Comparison report plus curvature-bound sweep for one system."""
    problem = make_problem(system_id, **(system_params or {}))
    solver_cfg = slq.SolverConfig(
        horizon=SOLVER_DEFAULTS[system_id]["horizon"], dt=VERIFY_SOLVER_DT
    )
    rng = np.random.default_rng(seed)
    solver = slq.SLQSolver(problem, solver_cfg)
    bundle = solver.solve(problem.system.sample_initial_state(rng))
    if not bundle.converged:
        raise slq.SolverError("verification solve did not converge")
    report = ham.benchmark_vs_mpc(
        problem, bundle, n_points=n_points, rng=rng, solver_config=solver_cfg
    )

    sys_model = problem.system
    tube = 0.05 * sys_model.state_scale
    n_knots = len(bundle.us)
    held = 0
    min_delta = np.inf
    for _ in range(n_certificates):
        i = int(rng.integers(0, n_knots))
        t = float(bundle.ts[i])
        x = bundle.xs[i] + tube * rng.standard_normal(sys_model.state_dim)
        ctx = ham.HamiltonianContext(
            problem,
            t,
            x,
            bundle.value_derivative(t, x),
            slq.lagrange_multiplier(bundle, problem, t, x),
        )
        u_star = ham.argmin(ctx)
        pert = u_star + sys_model.control_scale * rng.standard_normal(
            sys_model.control_dim
        )
        cert = ham.certificate(ctx, pert, u_star=u_star)
        held += int(cert.holds)
        min_delta = min(min_delta, cert.delta)
    return report, {"held": held, "total": n_certificates, "min_delta": float(min_delta)}


def cmd_verify(args: argparse.Namespace) -> int:
    report, cert_stats = run_verification(
        args.system, seed=args.seed, n_points=args.points
    )
    checks = check_comparison_thresholds(report)
    checks["certificates"] = cert_stats["held"] == cert_stats["total"] and (
        cert_stats["min_delta"] > 0.0
    )
    out = {
        "system": args.system,
        "summary": report.summary(),
        "certificates": cert_stats,
        "checks": checks,
    }
    print(json.dumps(out, indent=2))
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, f"verify_{args.system}.csv"), "w") as f:
            f.write(report.to_csv())
    return EXIT_OK if all(checks.values()) else EXIT_RUNTIME


def cmd_gating_trace(args: argparse.Namespace) -> int:
    if not os.path.exists(args.policy):
        print(f"policy file not found: {args.policy}", file=sys.stderr)
        return EXIT_USAGE
    policy = load_policy(args.policy)
    if not isinstance(policy, MoEPolicy):
        print("gating traces require a mixture-of-experts policy", file=sys.stderr)
        return EXIT_USAGE
    cfg = _build_config(args)
    problem = make_problem(cfg.system, **cfg.system_params)
    sys_model = problem.system
    duration = sys_model.period or cfg.trainer.rollout_length
    dt = cfg.trainer.dt
    x = np.asarray(problem.cost.ref(0.0), dtype=float).copy()
    rows = []
    t = 0.0
    while t < duration - 1e-12:
        phase = sys_model.phase_encode(t)
        u, p, _ = policy.forward(phase, x)
        rows.append([t, *p])
        x = x + sys_model.dynamics(x, u, t) * dt
        t += dt
    path = args.out or "gating_trace.csv"
    with open(path, "w") as f:
        f.write(",".join(["t"] + [f"p{i}" for i in range(policy.n_experts)]) + "\n")
        for row in rows:
            f.write(",".join(repr(float(v)) for v in row) + "\n")
    print(json.dumps({"trace": path, "rows": len(rows)}))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hamlearn")
    parser.add_argument("--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--system", choices=sorted(SOLVER_DEFAULTS))
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory or file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="dotted-key config override, repeatable")

    p_train = sub.add_parser("train", help="run guided policy training")
    common(p_train)
    p_train.add_argument("--loss", choices=["hamiltonian", "bc"])
    p_train.add_argument("--arch", choices=["moe", "mlp"])
    p_train.add_argument("--tube", choices=["on", "off"])
    p_train.add_argument("--max-iter", type=int, dest="max_iter")
    p_train.add_argument("--buffer-in", dest="buffer_in")
    p_train.add_argument("--buffer-out", dest="buffer_out")
    p_train.set_defaults(fn=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a saved policy")
    p_eval.add_argument("policy")
    common(p_eval)
    p_eval.add_argument("--episodes", type=int, default=5)
    p_eval.set_defaults(fn=cmd_eval)

    p_verify = sub.add_parser("verify", help="threshold-checked solver diagnostics")
    p_verify.add_argument("--system", required=True, choices=sorted(SOLVER_DEFAULTS))
    p_verify.add_argument("--seed", type=int, default=0)
    p_verify.add_argument("--points", type=int, default=40)
    p_verify.add_argument("--out")
    p_verify.set_defaults(fn=cmd_verify)

    p_trace = sub.add_parser("gating-trace", help="per-timestep gating weights")
    p_trace.add_argument("policy")
    common(p_trace)
    p_trace.set_defaults(fn=cmd_gating_trace)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as err:
        return EXIT_USAGE if err.code not in (0, None) else EXIT_OK
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.fn(args)
    except InputError as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as err:
        print(str(err), file=sys.stderr)
        return EXIT_USAGE
    except Exception as err:  # noqa: BLE001 -- CLI boundary
        log.exception("command failed")
        print(f"runtime failure: {err}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
