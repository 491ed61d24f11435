"""Exhaustive search over block-constant policies (validation oracle)."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .npi import NpiMenu, Policy, total_reward
from .seir import EpidemicModel

DEFAULT_BUDGET = 10**6


class BudgetExceeded(RuntimeError):
    pass


@dataclass(frozen=True)
class OracleResult:
    best_policy: Policy | None
    best_reward: float
    feasible_count: int
    explored: int
    best_max_cases: float = math.nan

    @property
    def any_feasible(self) -> bool:
        return self.best_policy is not None


def exhaustive_search(model: EpidemicModel, initial_state, menu: NpiMenu, tau: float, d: int,
                      horizon: int, budget: int = DEFAULT_BUDGET) -> OracleResult:
    """Simulate every ``d``-block policy over ``horizon`` days.

    A policy is feasible when realized daily new cases never exceed ``tau``
    on any of the ``horizon`` days.  Among feasible policies the highest
    total reward wins; ties go to the policy whose earliest differing block is
    more relaxed.  Block prefixes are simulated once and shared; a prefix
    that already exceeds ``tau`` marks all its extensions infeasible.
    """
    n_blocks = math.ceil(horizon / d)
    m = len(menu)
    total = m ** n_blocks
    if total > budget:
        raise BudgetExceeded(f"{m}^{n_blocks} = {total} policies exceeds budget {budget}")
    lengths = [min(d, horizon - b * d) for b in range(n_blocks)]

    # prefix -> (state, running max of N_c); evaluated lazily in enumeration order
    cache = {(): (initial_state, 0.0)}

    def prefix(blocks):
        if blocks in cache:
            return cache[blocks]
        state, peak = prefix(blocks[:-1])
        if peak > tau:
            cache[blocks] = (state, peak)
            return cache[blocks]
        traj = model.simulate(state, menu[blocks[-1]], lengths[len(blocks) - 1])
        out = (traj.final, max(peak, float(np.max(traj.new_cases))))
        cache[blocks] = out
        return out

    best_blocks, best_reward, best_peak = None, -math.inf, math.nan
    feasible = 0
    # most relaxed first in every position -> first maximum seen is the lexicographic winner
    for blocks in itertools.product(range(m - 1, -1, -1), repeat=n_blocks):
        _, peak = prefix(blocks)
        if peak > tau:
            continue
        feasible += 1
        reward = sum(menu.rewards[b] * n for b, n in zip(blocks, lengths))
        if reward > best_reward:
            best_blocks, best_reward, best_peak = blocks, reward, peak

    if best_blocks is None:
        return OracleResult(None, 0.0, 0, total)
    policy = Policy.from_blocks(best_blocks, menu, d, horizon)
    assert total_reward(policy) == best_reward
    return OracleResult(policy, float(best_reward), feasible, total, best_peak)


@dataclass(frozen=True)
class SmallInstance:
    """A small SEIR problem the oracle can enumerate."""

    initial_state: object
    menu: NpiMenu
    tau: float
    d: int
    horizon: int


def random_instance(rng: np.random.Generator, population: float = 3e6, max_choices: int = 4,
                    d: int = 14, max_blocks: int = 4) -> SmallInstance:
    """Draw a menu subset, seed size, threshold and horizon at random.

    Thresholds are log-uniform over a range wide enough that instances are
    sometimes unconstrained, sometimes binding and sometimes infeasible.
    """
    from .npi import seir_menu
    from .seir import EpidemicState

    full = seir_menu()
    m = int(rng.integers(2, max_choices + 1))
    menu = full.subset(sorted(rng.choice(len(full), size=m, replace=False).tolist()))
    exposed = float(np.exp(rng.uniform(0.0, np.log(5e3))))
    infected = float(np.exp(rng.uniform(0.0, np.log(5e3))))
    state = EpidemicState.from_counts(population, exposed=exposed, infected=infected)
    tau = float(np.exp(rng.uniform(np.log(50.0), np.log(5e4))))
    horizon = d * int(rng.integers(1, max_blocks + 1))
    return SmallInstance(state, menu, tau, d, horizon)


def compare_with_greedy(model: EpidemicModel, inst: SmallInstance, k: int = 21, k_s: int = 35,
                        budget: int = DEFAULT_BUDGET) -> dict:
    """Greedy and exhaustive results on one instance, as a flat record."""
    from .optimizer import OptimizerConfig, optimize

    cfg = OptimizerConfig(tau=inst.tau, d=inst.d, k=k, k_s=k_s, horizon_total=inst.horizon)
    greedy = optimize(model, inst.initial_state, inst.menu, cfg)
    best = exhaustive_search(model, inst.initial_state, inst.menu, inst.tau, inst.d, inst.horizon, budget)
    return {
        "tau": inst.tau,
        "d": inst.d,
        "horizon": inst.horizon,
        "menu": "|".join(inst.menu.labels),
        "greedy_reward": greedy.total_reward,
        "greedy_feasible": greedy.feasible,
        "greedy_blocks": "".join(str(b) for b in greedy.policy.blocks(inst.d)),
        "oracle_reward": best.best_reward,
        "oracle_any_feasible": best.any_feasible,
        "oracle_feasible_count": best.feasible_count,
        "oracle_explored": best.explored,
        "oracle_blocks": "".join(str(b) for b in best.best_policy.blocks(inst.d)) if best.any_feasible else "",
        "dominates": (not best.any_feasible or (greedy.feasible and best.best_reward >= greedy.total_reward)),
    }
