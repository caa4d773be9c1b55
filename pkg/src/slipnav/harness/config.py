"""Environment and run configuration (JSON files, CLI overrides)."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from ..errors import ConfigError

REWARD_A = 20.0
REWARD_B = 5.0
WEAK_HAZARD_PENALTY = -0.5


def _rects(value, name):
    out = []
    for r in value or []:
        if len(r) != 4 or not all(isinstance(v, int) for v in r):
            raise ConfigError(f"{name}: rectangles are [i0, j0, i1, j1] integer cell ranges, got {r!r}")
        i0, j0, i1, j1 = r
        if i1 < i0 or j1 < j0:
            raise ConfigError(f"{name}: empty rectangle {r!r}")
        out.append(tuple(r))
    return tuple(out)


def rect_cells(rect):
    i0, j0, i1, j1 = rect
    return [(i, j) for i in range(i0, i1 + 1) for j in range(j0, j1 + 1)]


@dataclass(frozen=True)
class PerturbationSpec:
    seed: int = 0
    lengthscale: float = 3.0
    amplitude: float = 0.3
    sigma: float = 0.1
    bound: float = 0.2


@dataclass(frozen=True)
class EnvironmentConfig:
    """Workspace, labels, rewards and disturbance of one world.

    Rectangles are inclusive cell-index ranges ``[i0, j0, i1, j1]`` with
    ``i`` along x and ``j`` along y.
    """

    name: str = "world"
    width: float = 15.0
    height: float = 15.0
    cell: float = 1.0
    start: tuple = (7, 1)
    start_heading: tuple = (0.0, 1.0)
    goal: tuple = ()
    hazard: tuple = ()
    reward_a: tuple = ()
    reward_b: tuple = ()
    weak_hazard: tuple = ()
    reward_values: tuple = (REWARD_A, REWARD_B, WEAK_HAZARD_PENALTY)
    perturbation: PerturbationSpec = PerturbationSpec()
    dra: str = "until"
    slip: tuple = (10.0, 16000.0, 1.0, 9.81)  # m, k, l0, g
    speed: float = 5.0
    model: Optional[str] = None  # hop model file; None uses the bundled model

    def __post_init__(self):
        for name in ("goal", "hazard", "reward_a", "reward_b", "weak_hazard"):
            object.__setattr__(self, name, _rects(getattr(self, name), name))
        object.__setattr__(self, "start", tuple(self.start))
        object.__setattr__(self, "start_heading", tuple(float(v) for v in self.start_heading))
        object.__setattr__(self, "reward_values", tuple(float(v) for v in self.reward_values))
        object.__setattr__(self, "slip", tuple(float(v) for v in self.slip))
        if isinstance(self.perturbation, dict):
            object.__setattr__(self, "perturbation", PerturbationSpec(**self.perturbation))
        self.validate()

    @property
    def nx(self) -> int:
        return round(self.width / self.cell)

    @property
    def ny(self) -> int:
        return round(self.height / self.cell)

    def cells(self, name: str) -> set:
        return {c for r in getattr(self, name) for c in rect_cells(r)}

    def validate(self):
        if self.cell <= 0 or self.width <= 0 or self.height <= 0:
            raise ConfigError("workspace sizes must be positive")
        if abs(self.nx * self.cell - self.width) > 1e-9 or abs(self.ny * self.cell - self.height) > 1e-9:
            raise ConfigError("workspace is not a whole number of cells")
        for name in ("goal", "hazard", "reward_a", "reward_b", "weak_hazard"):
            for (i, j) in self.cells(name):
                if not (0 <= i < self.nx and 0 <= j < self.ny):
                    raise ConfigError(f"{name} cell {(i, j)} lies outside the workspace")
        if self.cells("goal") & self.cells("hazard"):
            raise ConfigError("goal and hazard cells overlap")
        if not self.cells("goal"):
            raise ConfigError("at least one goal cell is required")
        si, sj = self.start
        if not (0 <= si < self.nx and 0 <= sj < self.ny):
            raise ConfigError("start cell lies outside the workspace")
        if self.start in self.cells("hazard") | self.cells("goal"):
            raise ConfigError("start cell must not be a goal or hazard cell")
        if self.speed <= 0:
            raise ConfigError("speed must be positive")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = [list(x) if isinstance(x, tuple) else x for x in v]
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "EnvironmentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown environment keys: {sorted(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    p_sat: float = 0.65
    batch: int = 50
    max_batches: int = 100
    p_rl_ee: float = 0.5
    c: float = 0.5
    eps: float = 0.005
    reward_mode: str = "known"
    runs: int = 1
    out: Optional[str] = None
    eta: int = 50
    ctrl_err: Optional[float] = None  # None measures it from the hop model
    gp_optimize: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.batch < 1:
            raise ConfigError("batch length must be >= 1")
        if self.max_batches < 1:
            raise ConfigError("max_batches must be >= 1")
        if not 0.0 <= self.p_sat < 1.0:
            raise ConfigError("P_sat must lie in [0, 1)")
        if not 0.0 <= self.p_rl_ee <= 1.0:
            raise ConfigError("P_RL,ee must lie in [0, 1]")
        if not 0.0 <= self.c < 1.0:
            raise ConfigError("C must lie in [0, 1)")
        if not 0.0 <= self.eps <= 1.0:
            raise ConfigError("epsilon must lie in [0, 1]")
        if self.reward_mode not in ("known", "unknown"):
            raise ConfigError("reward mode must be 'known' or 'unknown'")
        if self.runs < 1:
            raise ConfigError("runs must be >= 1")
        if self.eta < 1:
            raise ConfigError("eta must be >= 1")

    @property
    def step_cap(self) -> int:
        return self.batch * self.max_batches

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown run keys: {sorted(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None


def _read_json(path) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return data


def load_environment(path) -> EnvironmentConfig:
    return EnvironmentConfig.from_dict(_read_json(path))


def load_run(path) -> RunConfig:
    return RunConfig.from_dict(_read_json(path))


def builtin_environment(name: str) -> EnvironmentConfig:
    from importlib.resources import files
    res = files("slipnav.data").joinpath(f"{name}.json")
    if not res.is_file():
        raise ConfigError(f"no built-in environment named {name!r}")
    return EnvironmentConfig.from_dict(json.loads(res.read_text(encoding="utf-8")))
