"""EpiCast-lite: a small deterministic stand-in for an agent-based simulator.

It exposes the same six-dimensional interface (currently infected, recovered,
transmission probability, asymptomatic ratio, relative infectiousness,
compliance) and the school / business phase menus, but the transmission law
is invented:

    beta_eff = trans_prob * base_contacts * contact_multiplier
               * (1 - compliance * mitigation_strength)
               * ((1 - asymptomatic_ratio) + asymptomatic_ratio * relative_infectiousness)

Disease progression is SEIR with the asymptomatic infections as a parallel
infectious compartment.  Both infectious compartments recover at the same
rate and are fed from E in fixed proportion, so the split stays at the
asymptomatic ratio and the pair reduces exactly to one SEIR compartment driven
by ``beta_eff``.  "Infected" counts everyone currently carrying the disease
(exposed plus infectious); daily new cases are new infections (S -> E).

The six public numbers are the whole state.  Each run starts by splitting the
infected pool into latent and infectious parts along the dominant growth mode
of the phase being run, so a run depends on nothing but its six-dim start.

Constants live in ``data/epicast_lite.json``; ``base_contacts`` there is the
output of ``scripts/calibrate_epicast_lite.py``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from functools import lru_cache
from importlib import resources
from typing import Mapping

import numpy as np

from .seir import EpidemicState, SeirParams, Trajectory, integrate, integrate_batch, new_cases_of

PARAM_FIELDS = ("trans_prob", "asymptomatic_ratio", "relative_infectiousness", "compliance")
STATE_FIELDS = ("infected", "recovered") + PARAM_FIELDS


@dataclass(frozen=True)
class EpicastState:
    """Six-dimensional epidemic state plus population and day index."""

    infected: float
    recovered: float
    trans_prob: float
    asymptomatic_ratio: float
    relative_infectiousness: float
    compliance: float
    population: float = 1e7
    t: int = 0

    def __post_init__(self):
        if not self.population > 0:
            raise ValueError("population must be positive")
        for name in PARAM_FIELDS:
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")
        if self.infected < 0 or self.recovered < 0:
            raise ValueError("counts must be non-negative")
        if self.infected + self.recovered > self.population * (1 + 1e-12):
            raise ValueError("infected + recovered exceeds population")

    @property
    def mix(self) -> float:
        a = self.asymptomatic_ratio
        return (1.0 - a) + a * self.relative_infectiousness

    def vector(self) -> np.ndarray:
        """The six public numbers in canonical order."""
        return np.array([getattr(self, f) for f in STATE_FIELDS], dtype=float)

    @classmethod
    def from_vector(cls, v, population=1e7, t=0) -> "EpicastState":
        return cls(*(float(x) for x in v), population=population, t=t)


@dataclass(frozen=True)
class PhaseSchedule:
    label: str
    contact_multiplier: float
    mitigation_strength: float

    def __post_init__(self):
        if self.contact_multiplier < 0 or not 0 <= self.mitigation_strength <= 1:
            raise ValueError(f"invalid phase constants for {self.label}")


@dataclass(frozen=True)
class EpicastConstants:
    base_contacts: float
    sigma: float
    gamma: float
    phases: Mapping[str, PhaseSchedule]
    version: int = 1

    def phase(self, label: str) -> PhaseSchedule:
        try:
            return self.phases[label]
        except KeyError:
            raise KeyError(f"unknown phase {label!r}") from None


def load_constants(path=None) -> EpicastConstants:
    """Read the phase table; the bundled file unless ``path`` is given."""
    if path is None:
        raw = json.loads(resources.files("epipolicy").joinpath("data/epicast_lite.json").read_text())
    else:
        with open(path) as fh:
            raw = json.load(fh)
    phases = {k: PhaseSchedule(k, float(v["contact_multiplier"]), float(v["mitigation_strength"]))
              for k, v in raw["phases"].items()}
    return EpicastConstants(float(raw["base_contacts"]), float(raw["sigma"]), float(raw["gamma"]),
                            phases, int(raw.get("version", 1)))


@lru_cache(maxsize=1)
def default_constants() -> EpicastConstants:
    return load_constants()


def effective_beta(state: EpicastState, phase: PhaseSchedule, base_contacts: float | None = None) -> float:
    if base_contacts is None:
        base_contacts = default_constants().base_contacts
    return (state.trans_prob * base_contacts * phase.contact_multiplier
            * (1.0 - state.compliance * phase.mitigation_strength) * state.mix)


def latent_share(beta: float, s: float, sigma: float, gamma: float) -> float:
    """Fraction of the infected pool that is still latent on the dominant mode.

    For the linearized (E, I) system at fixed susceptible fraction ``s`` the
    leading eigenvalue is ``lam`` and its eigenvector has ``E/I = (gamma+lam)/sigma``.
    """
    disc = (sigma - gamma) ** 2 + 4.0 * sigma * beta * s
    lam = 0.5 * (-(sigma + gamma) + math.sqrt(disc))
    return (gamma + lam) / (sigma + gamma + lam)


def to_fractions(state: EpicastState, beta: float, sigma: float, gamma: float) -> EpidemicState:
    n = state.population
    s_guess = 1.0 - (state.infected + state.recovered) / n
    e = state.infected * latent_share(beta, s_guess, sigma, gamma) / n
    i = state.infected / n - e
    r = state.recovered / n
    s = max(1.0 - e - i - r, 0.0)
    total = s + e + i + r
    return EpidemicState(s / total, e / total, i / total, r / total, n, state.t)


def from_fractions(x: EpidemicState, like: EpicastState) -> EpicastState:
    n = x.population
    return replace(like, infected=(x.e + x.i) * n, recovered=x.r * n, population=n, t=x.t)


def simulate_phase(state: EpicastState, phase: PhaseSchedule, horizon: int,
                   constants: EpicastConstants | None = None, dt: float = 0.25) -> Trajectory:
    """Deterministic ``horizon``-day run under a fixed phase."""
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    c = constants or default_constants()
    beta = effective_beta(state, phase, c.base_contacts)
    params = SeirParams(beta, c.sigma, c.gamma)
    seir_states = integrate(to_fractions(state, beta, c.sigma, c.gamma), params, horizon, dt)
    cases = new_cases_of(seir_states, params, flow="exposed")
    states = (state,) + tuple(from_fractions(x, state) for x in seir_states[1:])
    return Trajectory(states, cases)


@dataclass(frozen=True)
class EpicastLite:
    """Model-interface adapter: NPI choices carry ``model_params["phase"]``."""

    constants: EpicastConstants | None = None
    dt: float = 0.25

    @property
    def consts(self) -> EpicastConstants:
        return self.constants or default_constants()

    def phase_of(self, npi) -> PhaseSchedule:
        try:
            label = npi.model_params["phase"]
        except (AttributeError, KeyError, TypeError):
            raise ValueError(f"NPI {npi!r} carries no phase for epicast-lite") from None
        return self.consts.phase(label)

    def simulate(self, state: EpicastState, npi, horizon: int) -> Trajectory:
        return simulate_phase(state, self.phase_of(npi), horizon, self.consts, self.dt)

    def simulate_batch(self, vectors: np.ndarray, phase_label: str, days: int,
                       population: float = 1e7) -> np.ndarray:
        """Run many six-dim start states at once.

        Returns ``(days + 1, n, 2)`` infected / recovered counts; same
        arithmetic as :func:`simulate_phase` applied to each start.
        """
        c = self.consts
        phase = c.phase(phase_label)
        v = np.asarray(vectors, dtype=float)
        mix = (1.0 - v[:, 3]) + v[:, 3] * v[:, 4]
        beta = v[:, 2] * c.base_contacts * phase.contact_multiplier * (1.0 - v[:, 5] * phase.mitigation_strength) * mix
        s_guess = 1.0 - (v[:, 0] + v[:, 1]) / population
        lam = 0.5 * (-(c.sigma + c.gamma) + np.sqrt((c.sigma - c.gamma) ** 2 + 4.0 * c.sigma * beta * s_guess))
        share = (c.gamma + lam) / (c.sigma + c.gamma + lam)
        e = v[:, 0] * share / population
        i = v[:, 0] / population - e
        r = v[:, 1] / population
        s = np.maximum(1.0 - e - i - r, 0.0)
        y0 = np.stack([s, e, i, r], axis=1)
        y0 /= y0.sum(axis=1, keepdims=True)
        out = integrate_batch(y0, beta, days, c.sigma, c.gamma, self.dt)
        return np.stack([(out[..., 1] + out[..., 2]) * population, out[..., 3] * population], axis=-1)
