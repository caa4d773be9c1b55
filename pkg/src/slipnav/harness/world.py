"""Everything derived once from an environment: grid, automaton, disturbance, controller."""
from __future__ import annotations

import functools
import json
from dataclasses import dataclass
from importlib.resources import files
from pathlib import Path
from typing import Optional

import numpy as np

from ..abstraction import GOAL, HAZARD, NoiseModel, Partition, build_partition
from ..automata import Dra, build_until_dra, parse_dra
from ..controller import Gait, HopModel, calibrate_ctrl_err, steady_gait
from ..dynamics import PerturbationField, SlipParams
from ..errors import ConfigError, ParseError
from .config import EnvironmentConfig

BUNDLED_MODEL = "hop_model.bin"


@dataclass
class World:
    env: EnvironmentConfig
    partition: Partition
    cell_reward: np.ndarray  # per IMDP state (cells plus out-of-bounds)
    dra: Dra
    perturbation: PerturbationField
    noise: NoiseModel
    params: SlipParams
    model: HopModel
    gait: Gait
    start_cell: int

    def start_position(self) -> np.ndarray:
        return self.partition.center(self.start_cell)


def bundled_model_path() -> Path:
    return Path(str(files("slipnav.data").joinpath(BUNDLED_MODEL)))


@functools.lru_cache(maxsize=8)
def _load_model(path: str) -> HopModel:
    try:
        return HopModel.load(path)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot load hop model {path}: {exc}") from None


@functools.lru_cache(maxsize=8)
def _gait(params: SlipParams, speed: float) -> Gait:
    return steady_gait(params, speed)


@functools.lru_cache(maxsize=8)
def measured_ctrl_err(model_path: str, params: SlipParams, speed: float) -> float:
    return calibrate_ctrl_err(_load_model(model_path), params, _gait(params, speed))


def model_path(env: EnvironmentConfig) -> str:
    return str(env.model) if env.model else str(bundled_model_path())


def _labels(env: EnvironmentConfig, partition: Partition) -> dict:
    labels: dict = {}
    for name, sym in (("goal", GOAL), ("hazard", HAZARD)):
        for i, j in env.cells(name):
            labels.setdefault(partition.index(i, j), set()).add(sym)
    return labels


def _rewards(env: EnvironmentConfig, partition: Partition) -> np.ndarray:
    reward = np.zeros(partition.n_cells + 1)
    a_val, b_val, weak_val = env.reward_values
    for name, val in (("weak_hazard", weak_val), ("reward_b", b_val), ("reward_a", a_val)):
        for i, j in env.cells(name):
            reward[partition.index(i, j)] = val
    return reward


def _dra(env: EnvironmentConfig) -> Dra:
    if env.dra == "until":
        return build_until_dra(GOAL, HAZARD)
    try:
        return parse_dra(Path(env.dra).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read automaton {env.dra}: {exc.strerror}") from None
    except ParseError as exc:
        raise ConfigError(f"automaton {env.dra}: {exc}") from None


def _build(env_json: str) -> World:
    env = EnvironmentConfig.from_dict(json.loads(env_json))
    partition = build_partition((env.width, env.height), env.cell, _labels(env, build_partition(
        (env.width, env.height), env.cell)))
    pert = env.perturbation
    field = PerturbationField.from_gp_prior(env.width, env.height, env.cell, pert.lengthscale,
                                            pert.amplitude, pert.sigma, pert.bound, pert.seed)
    params = SlipParams(*env.slip)
    return World(env, partition, _rewards(env, partition), _dra(env), field,
                 NoiseModel(pert.sigma, pert.bound), params, _load_model(model_path(env)),
                 _gait(params, env.speed), partition.index(*env.start))


@functools.lru_cache(maxsize=8)
def _build_cached(env_json: str) -> World:
    return _build(env_json)


def build_world(env: EnvironmentConfig) -> World:
    return _build_cached(json.dumps(env.to_dict(), sort_keys=True))
