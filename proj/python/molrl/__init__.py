"""Atom-by-atom 3D molecule construction with PPO.

Thin wrappers over the native core: chemistry utilities, the surrogate
energy model, GAE, and a training session driven by a run config.
"""

import json

from ._core import (
    CalculatorError,
    CheckpointError,
    ConfigError,
    agent_preset,
    atomization_transform,
    canonical_key,
    compute_gae,
    enumerate_isomers,
    formula_key,
    is_valid,
    relax,
    surrogate_energy,
)
from . import _core

__all__ = [
    "CalculatorError",
    "CheckpointError",
    "ConfigError",
    "Trainer",
    "agent_preset",
    "atomization_transform",
    "canonical_key",
    "compute_gae",
    "enumerate_isomers",
    "formula_key",
    "is_valid",
    "load_run_config",
    "relax",
    "sample",
    "surrogate_energy",
]


def load_run_config(path, overrides=()):
    """Resolved run config as a dict (bag paths made absolute)."""
    return json.loads(_core.load_run_config(str(path), list(overrides)))


class Trainer:
    """PPO training session for a run config file.

    >>> t = Trainer("data/configs/smoke.json")
    >>> row = t.step()
    >>> row["iter"]
    0
    """

    def __init__(self, config, overrides=()):
        self._session = _core._Session(str(config), list(overrides))

    def step(self):
        """Runs one collection + update iteration and returns its metrics row."""
        return json.loads(self._session.train_iteration())

    def train(self, iterations):
        return [self.step() for _ in range(iterations)]

    @property
    def iteration(self):
        return self._session.iteration

    @property
    def config_hash(self):
        return self._session.config_hash

    def save_checkpoint(self, path):
        self._session.save_checkpoint(str(path))

    def load_checkpoint(self, path):
        self._session.load_checkpoint(str(path))


def sample(config, checkpoint, formulas, count=1, seed=0, greedy=False):
    """Rolls out the checkpointed policy; one record dict per episode."""
    rows = _core._sample(str(config), str(checkpoint), list(formulas), int(count), int(seed), bool(greedy))
    return [json.loads(r) for r in rows]
