"""NPI menus, policies and reward accounting.

A menu is ordered by severity: index 0 is the most restrictive choice and
carries the smallest per-day reward.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

SEIR_BETAS = (0.25, 0.3, 0.5, 0.7, 0.8, 0.9)
SEIR_REWARDS = (1, 3, 6, 8, 12, 15)
SCHOOL_PHASES = ("P0", "P1", "P2e", "P2d", "P2c", "P2a")
SCHOOL_REWARDS = (1, 3, 6, 8, 12, 15)
BUSINESS_PHASES = ("P0", "P1v", "P1r", "P1q", "P2v", "P2r", "P2q")
BUSINESS_REWARDS = (1, 3, 6, 8, 12, 15, 18)


@dataclass(frozen=True)
class NpiChoice:
    index: int
    label: str
    model_params: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "model_params", MappingProxyType(dict(self.model_params)))

    def __hash__(self):
        return hash((self.index, self.label))

    def __eq__(self, other):
        if not isinstance(other, NpiChoice):
            return NotImplemented
        return (self.index, self.label, dict(self.model_params)) == (
            other.index, other.label, dict(other.model_params))


@dataclass(frozen=True)
class NpiMenu:
    choices: tuple
    rewards: tuple

    def __post_init__(self):
        object.__setattr__(self, "choices", tuple(self.choices))
        object.__setattr__(self, "rewards", tuple(float(r) for r in self.rewards))
        if len(self.choices) < 1 or len(self.choices) != len(self.rewards):
            raise ValueError("menu needs >= 1 choice and one reward per choice")
        if [c.index for c in self.choices] != list(range(len(self.choices))):
            raise ValueError("choice indices must be 0..n-1 in order")
        if any(b <= a for a, b in zip(self.rewards, self.rewards[1:])):
            raise ValueError(f"rewards must be strictly increasing, got {self.rewards}")

    def __len__(self):
        return len(self.choices)

    def __getitem__(self, i) -> NpiChoice:
        return self.choices[i]

    @property
    def labels(self) -> list[str]:
        return [c.label for c in self.choices]

    def index_of(self, label: str) -> int:
        return self.labels.index(label)

    @classmethod
    def build(cls, labels: Sequence[str], rewards: Sequence[float],
              params: Iterable[Mapping[str, Any]] | None = None) -> "NpiMenu":
        params = list(params) if params is not None else [{} for _ in labels]
        choices = tuple(NpiChoice(i, lab, p) for i, (lab, p) in enumerate(zip(labels, params)))
        return cls(choices, tuple(rewards))

    def subset(self, indices: Sequence[int]) -> "NpiMenu":
        """A new menu keeping the given choices (re-indexed in order)."""
        return NpiMenu.build([self.choices[i].label for i in indices],
                             [self.rewards[i] for i in indices],
                             [self.choices[i].model_params for i in indices])


@dataclass(frozen=True)
class Policy:
    """Per-day NPI indices with the matching reward trace."""

    assignments: tuple
    rewards: tuple

    def __post_init__(self):
        object.__setattr__(self, "assignments", tuple(int(a) for a in self.assignments))
        object.__setattr__(self, "rewards", tuple(float(r) for r in self.rewards))
        if len(self.assignments) != len(self.rewards):
            raise ValueError("assignments and rewards must have equal length")

    @classmethod
    def from_assignments(cls, assignments: Sequence[int], menu: NpiMenu) -> "Policy":
        return cls(tuple(assignments), tuple(menu.rewards[a] for a in assignments))

    @classmethod
    def from_blocks(cls, blocks: Sequence[int], menu: NpiMenu, d: int, horizon: int) -> "Policy":
        days = [blocks[t // d] for t in range(horizon)]
        return cls.from_assignments(days, menu)

    def __len__(self):
        return len(self.assignments)

    def __add__(self, other: "Policy") -> "Policy":
        return Policy(self.assignments + other.assignments, self.rewards + other.rewards)

    def blocks(self, d: int) -> list[int]:
        return [self.assignments[t] for t in range(0, len(self), d)]

    def is_block_constant(self, d: int) -> bool:
        a = self.assignments
        return all(a[t] == a[t - 1] for t in range(1, len(a)) if t % d)

    def consistent_with(self, menu: NpiMenu) -> bool:
        return all(menu.rewards[a] == r for a, r in zip(self.assignments, self.rewards))


def total_reward(policy: Policy) -> float:
    return float(np.sum(policy.rewards)) if len(policy) else 0.0


def seir_menu() -> NpiMenu:
    labels = [f"beta={b:g}" for b in SEIR_BETAS]
    return NpiMenu.build(labels, SEIR_REWARDS, [{"beta": b} for b in SEIR_BETAS])


def school_menu() -> NpiMenu:
    return NpiMenu.build(SCHOOL_PHASES, SCHOOL_REWARDS, [{"phase": p} for p in SCHOOL_PHASES])


def business_menu() -> NpiMenu:
    return NpiMenu.build(BUSINESS_PHASES, BUSINESS_REWARDS, [{"phase": p} for p in BUSINESS_PHASES])


PRESETS = {"seir": seir_menu, "school": school_menu, "business": business_menu}


def menu_from_config(cfg: Mapping[str, Any]) -> NpiMenu:
    """Build a menu from a scenario ``menu:`` mapping.

    Either ``{"preset": "seir"|"school"|"business"}`` or
    ``{"choices": [{"label": ..., "reward": ..., <model params>...}, ...]}``
    listed from most to least restrictive.
    """
    if "preset" in cfg:
        name = cfg["preset"]
        if name not in PRESETS:
            raise ValueError(f"menu.preset: unknown preset {name!r}; choose from {sorted(PRESETS)}")
        return PRESETS[name]()
    if "choices" not in cfg:
        raise ValueError("menu: needs either 'preset' or 'choices'")
    labels, rewards, params = [], [], []
    for n, entry in enumerate(cfg["choices"]):
        entry = dict(entry)
        try:
            labels.append(str(entry.pop("label")))
            rewards.append(float(entry.pop("reward")))
        except KeyError as exc:
            raise ValueError(f"menu.choices[{n}]: missing field {exc.args[0]!r}") from None
        params.append(entry)
    return NpiMenu.build(labels, rewards, params)
