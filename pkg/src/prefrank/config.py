"""Experiment configuration: parsing, validation, and engine construction."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .engine import POLICY_BALANCED, POLICY_NAIVE, RankEngine, Target
from .stats import Accuracy


class ConfigError(ValueError):
    """A configuration that names its defect precisely."""


@dataclass
class ExperimentConfig:
    experiment_id: str
    epsilon: float
    delta: float
    budget: int
    targets: list[Target]
    initial_order: list[str]
    request_ttl: float = 600.0
    seed: int = 0
    policy: str = POLICY_BALANCED
    media_root: str | None = None

    def __post_init__(self) -> None:
        Accuracy(epsilon=self.epsilon, delta=self.delta)  # range checks
        if self.budget < 1:
            raise ConfigError(f"budget must be positive, got {self.budget}")
        if len(self.targets) < 2:
            raise ConfigError("need at least 2 targets")
        ids = [t.id for t in self.targets]
        if len(set(ids)) != len(ids):
            raise ConfigError("target ids must be unique")
        if sorted(self.initial_order) != sorted(ids):
            raise ConfigError("initial_order must be a permutation of target ids")
        if self.policy not in (POLICY_BALANCED, POLICY_NAIVE):
            raise ConfigError(f"unknown policy {self.policy!r}")
        if self.request_ttl <= 0:
            raise ConfigError("request_ttl must be positive")

    @property
    def accuracy(self) -> Accuracy:
        return Accuracy(epsilon=self.epsilon, delta=self.delta)

    def ordered_targets(self) -> list[Target]:
        by_id = {t.id: t for t in self.targets}
        return [by_id[i] for i in self.initial_order]

    def build_engine(self, sink=None) -> RankEngine:
        return RankEngine(
            targets=self.ordered_targets(),
            accuracy=self.accuracy,
            budget=self.budget,
            seed=self.seed,
            request_ttl=self.request_ttl,
            policy=self.policy,
            sink=sink,
        )

    def to_dict(self) -> dict:
        return {
            "experiment_id": self.experiment_id,
            "epsilon": self.epsilon,
            "delta": self.delta,
            "budget": self.budget,
            "request_ttl": self.request_ttl,
            "seed": self.seed,
            "policy": self.policy,
            "media_root": self.media_root,
            "targets": [
                {"id": t.id, "label": t.label, "stimuli": list(t.stimuli)}
                for t in self.targets
            ],
            "initial_order": list(self.initial_order),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("experiment config must be an object")
        for key in ("experiment_id", "epsilon", "delta", "budget", "targets"):
            if key not in data:
                raise ConfigError(f"experiment config missing required field {key!r}")
        targets = []
        for i, t in enumerate(data["targets"]):
            if "id" not in t:
                raise ConfigError(f"targets[{i}] missing 'id'")
            tid = str(t["id"])
            stimuli = t.get("stimuli") or [f"{tid}.sample"]
            targets.append(
                Target(id=tid, label=str(t.get("label", tid)), stimuli=tuple(stimuli))
            )
        initial_order = data.get("initial_order") or [t.id for t in targets]
        try:
            return cls(
                experiment_id=str(data["experiment_id"]),
                epsilon=float(data["epsilon"]),
                delta=float(data["delta"]),
                budget=int(data["budget"]),
                targets=targets,
                initial_order=[str(x) for x in initial_order],
                request_ttl=float(data.get("request_ttl", 600.0)),
                seed=int(data.get("seed", 0)),
                policy=str(data.get("policy", POLICY_BALANCED)),
                media_root=data.get("media_root"),
            )
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON: {exc}") from exc
        if "experiment" in data:
            data = data["experiment"]
        return cls.from_dict(data)
