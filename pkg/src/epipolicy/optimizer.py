"""Greedy two-level look-ahead selection of NPI policies.

Every ``d`` days each menu choice is scored by

* a short-term term: run the model ``k`` days under the choice; the full
  reward ``C[i] * k`` if daily new cases never exceed ``tau``, otherwise the
  choice scores zero and all more relaxed choices are skipped;
* a long-term term: from the day-``k`` state, run ``k_s`` more days under the
  same or any more restrictive choice ``j`` and credit ``C[j]`` for every day
  before the first exceedance (the whole window if none); the best ``j``
  counts.

The highest net score is committed for ``d`` days and the loop repeats from
the realized state.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .npi import NpiMenu, Policy, total_reward
from .seir import EpidemicModel, Trajectory

log = logging.getLogger(__name__)

TIE_BREAKS = ("prefer-relaxed", "prefer-strict")
FALLBACKS = ("most-strict", "abort")


class Infeasible(RuntimeError):
    """No menu choice satisfies the short-term constraint and fallback is ``abort``."""

    def __init__(self, day: int, message: str | None = None):
        self.day = day
        super().__init__(message or f"every NPI violates the threshold within the look-ahead at day {day}")


@dataclass(frozen=True)
class OptimizerConfig:
    tau: float = math.inf
    d: int = 14
    k: int = 21
    k_s: int = 35
    horizon_total: int = 600
    tie_break: str = "prefer-relaxed"
    infeasible_fallback: str = "most-strict"
    switch_penalty: float = 0.0

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.d < 1:
            raise ValueError("d must be >= 1")
        if self.k < self.d:
            raise ValueError("k must be >= d")
        if self.k_s < 1:
            raise ValueError("k_s must be >= 1")
        if self.horizon_total < self.d:
            raise ValueError("horizon_total must be >= d")
        if self.tie_break not in TIE_BREAKS:
            raise ValueError(f"tie_break must be one of {TIE_BREAKS}")
        if self.infeasible_fallback not in FALLBACKS:
            raise ValueError(f"infeasible_fallback must be one of {FALLBACKS}")


@dataclass(frozen=True)
class Decision:
    day: int
    chosen: int
    net: np.ndarray = field(repr=False)
    evaluated: np.ndarray = field(repr=False)
    fallback: bool = False


@dataclass(frozen=True)
class OptimizationResult:
    policy: Policy
    trajectory: Trajectory
    decisions: tuple
    tau: float
    violations: tuple

    @property
    def feasible(self) -> bool:
        return not self.violations

    @property
    def total_reward(self) -> float:
        return total_reward(self.policy)

    @property
    def net_scores(self) -> np.ndarray:
        return np.array([d.net for d in self.decisions])

    @property
    def cumulative_cases(self) -> float:
        return float(np.sum(self.trajectory.new_cases))


def find_violations(new_cases: np.ndarray, tau: float, start_day: int = 1) -> tuple:
    """(day, N_c) pairs where daily new cases exceed ``tau``; days are 1-based."""
    idx = np.flatnonzero(np.asarray(new_cases) > tau)
    return tuple((int(i) + start_day, float(new_cases[i])) for i in idx)


def short_term_score(model: EpidemicModel, state, menu: NpiMenu, i: int,
                     config: OptimizerConfig) -> tuple[float, Any, bool]:
    """(score, day-k state, violated) for running choice ``i`` for ``k`` days."""
    traj = model.simulate(state, menu[i], config.k)
    if np.max(traj.new_cases) > config.tau:
        return 0.0, traj.final, True
    return menu.rewards[i] * config.k, traj.final, False


def long_term_score(model: EpidemicModel, end_state, menu: NpiMenu, i: int,
                    config: OptimizerConfig) -> float:
    """Best partial reward over choices ``i, i-1, ..., 0`` for ``k_s`` days."""
    best = 0.0
    for j in range(i, -1, -1):
        cases = model.simulate(end_state, menu[j], config.k_s).new_cases
        over = np.flatnonzero(cases > config.tau)
        safe_days = int(over[0]) if over.size else config.k_s
        best = max(best, safe_days * menu.rewards[j])
    return best


def _argmax(net: np.ndarray, tie_break: str) -> int:
    top = np.flatnonzero(net == net.max())
    return int(top[-1] if tie_break == "prefer-relaxed" else top[0])


def select_npi(model: EpidemicModel, state, menu: NpiMenu, config: OptimizerConfig,
               current: int | None = None, day: int = 0) -> Decision:
    """Score every choice and return the decision for the next ``d`` days."""
    n = len(menu)
    net = np.zeros(n)
    evaluated = np.zeros(n, dtype=bool)
    for i in range(n):
        evaluated[i] = True
        score, end_state, violated = short_term_score(model, state, menu, i, config)
        if violated:
            break
        net[i] = score + long_term_score(model, end_state, menu, i, config)
        if config.switch_penalty and current is not None and i != current:
            net[i] = max(net[i] - config.switch_penalty, 0.0)

    if net.max() > 0:
        return Decision(day, _argmax(net, config.tie_break), net, evaluated)
    if n == 1:
        return Decision(day, 0, net, evaluated, fallback=bool(evaluated[0] and net[0] == 0))
    if config.infeasible_fallback == "abort":
        raise Infeasible(day)
    log.warning("day %d: no NPI meets tau=%g over the short-term window; using most strict", day, config.tau)
    return Decision(day, 0, net, evaluated, fallback=True)


def optimize(model: EpidemicModel, initial_state, menu: NpiMenu, config: OptimizerConfig,
             plant: EpidemicModel | None = None) -> OptimizationResult:
    """Run the receding-horizon loop over ``config.horizon_total`` days.

    ``plant`` optionally advances the realized state with a different model
    than the one used for look-ahead (e.g. plan on a surrogate, realize on the
    truth model).  By default the planning model also realizes the state.
    """
    plant = plant or model
    state = initial_state
    parts, days, decisions = [], [], []
    current = None
    for t in range(0, config.horizon_total, config.d):
        decision = select_npi(model, state, menu, config, current=current, day=t)
        block = min(config.d, config.horizon_total - t)
        traj = plant.simulate(state, menu[decision.chosen], block)
        parts.append(traj)
        days.extend([decision.chosen] * block)
        decisions.append(decision)
        state = traj.final
        current = decision.chosen
    realized = Trajectory.concatenate(parts)
    policy = Policy.from_assignments(days, menu)
    return OptimizationResult(policy, realized, tuple(decisions), config.tau,
                              find_violations(realized.new_cases, config.tau))


def evaluate_policy(model: EpidemicModel, initial_state, menu: NpiMenu, policy: Policy,
                    tau: float = math.inf, d: int | None = None) -> tuple[Trajectory, tuple]:
    """Re-simulate a fixed policy; returns the trajectory and its violations.

    Runs are split where the NPI changes and, when ``d`` is given, at every
    block boundary too (matching how ``optimize`` advances the state).
    """
    parts = []
    state = initial_state
    a = policy.assignments
    t = 0
    while t < len(a):
        end = t + 1
        while end < len(a) and a[end] == a[t] and not (d and end % d == 0):
            end += 1
        traj = model.simulate(state, menu[a[t]], end - t)
        parts.append(traj)
        state = traj.final
        t = end
    realized = Trajectory.concatenate(parts)
    return realized, find_violations(realized.new_cases, tau)
