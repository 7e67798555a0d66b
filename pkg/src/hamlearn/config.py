"""Run configuration: JSON schema, validation and dotted-key overrides."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from typing import Any

from .slq import SolverConfig
from .systems import SYSTEM_IDS, InputError
from .training import TrainerConfig

# per-system lookahead of the receding-horizon solver; the hopper horizon
# covers exactly one gait period so every solve sees the next flight
SOLVER_DEFAULTS: dict[str, dict[str, Any]] = {
    "redundant-di": {"horizon": 1.0},
    "cartpole": {"horizon": 1.0},
    "hopper1d": {"horizon": 0.7},
}

# cmd-verify solves at a finer step than training: the pointwise minimizer
# comparison is first-order accurate in dt, and the acceptance tolerance
# needs the finer grid
VERIFY_SOLVER_DT = 5e-4


def _build_dataclass(cls, data: dict, where: str):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise InputError(f"unknown {where} config keys: {sorted(unknown)}")
    try:
        return cls(**data)
    except TypeError as err:
        raise InputError(f"invalid {where} config: {err}") from err


@dataclass
class RunConfig:
    system: str = "redundant-di"
    system_params: dict = field(default_factory=dict)
    solver: SolverConfig = None  # type: ignore[assignment]
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    seed: int = 0
    out_dir: str = "runs/out"

    def __post_init__(self) -> None:
        if self.system not in SYSTEM_IDS:
            raise InputError(
                f"unknown system {self.system!r}; choose from {sorted(SYSTEM_IDS)}"
            )
        if self.solver is None:
            self.solver = SolverConfig(**SOLVER_DEFAULTS[self.system])

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        data = dict(data)
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise InputError(f"unknown config keys: {sorted(unknown)}")
        system = data.get("system", "redundant-di")
        solver = data.pop("solver", None)
        trainer = data.pop("trainer", None)
        if solver is not None:
            merged = dict(SOLVER_DEFAULTS.get(system, {}))
            merged.update(solver)
            data["solver"] = _build_dataclass(SolverConfig, merged, "solver")
        if trainer is not None:
            data["trainer"] = _build_dataclass(TrainerConfig, trainer, "trainer")
        return cls(**data)

    @classmethod
    def load(cls, path: str) -> "RunConfig":
        with open(path) as f:
            try:
                data = json.load(f)
            except json.JSONDecodeError as err:
                raise InputError(f"config file {path} is not valid JSON: {err}") from err
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return {
            "system": self.system,
            "system_params": dict(self.system_params),
            "solver": dataclasses.asdict(self.solver),
            "trainer": dataclasses.asdict(self.trainer),
            "seed": self.seed,
            "out_dir": self.out_dir,
        }

    def save(self, path: str) -> None:
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
            f.write("\n")


def _parse_value(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(data: dict, overrides: list[str]) -> dict:
    """Apply ``section.key=value`` strings onto a nested config dict."""
    for item in overrides:
        if "=" not in item:
            raise InputError(f"override {item!r} is not of the form key=value")
        dotted, raw = item.split("=", 1)
        keys = dotted.split(".")
        node = data
        for k in keys[:-1]:
            node = node.setdefault(k, {})
            if not isinstance(node, dict):
                raise InputError(f"override {dotted!r} does not address a section")
        node[keys[-1]] = _parse_value(raw)
    return data
