"""Normalized SEIR dynamics and the generic model interface used by the optimizer.

Compartments are fractions of the total population, so the force of
infection is ``beta * s * i`` and the basic reproduction number is
``beta / gamma``.  Counts are recovered by multiplying with ``population``.

    ds/dt = -beta * s * i
    de/dt =  beta * s * i - sigma * e
    di/dt =  sigma * e - gamma * i
    dr/dt =  gamma * i

Integration is classical RK4 with fixed sub-steps (0.25 day by default);
states are reported once per day.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Protocol, Sequence

import numpy as np

#: Conservation drift above which a step is rejected.
DRIFT_TOLERANCE = 1e-6
#: Negative round-off below this magnitude is clipped to zero.
_NEGATIVE_ROUNDOFF = 1e-12

NEW_CASE_FLOWS = ("infectious", "exposed")


class NumericalDrift(ArithmeticError):
    """Raised when an integration step breaks population conservation."""


@dataclass(frozen=True)
class EpidemicState:
    """SEIR state as population fractions plus the population scale."""

    s: float
    e: float
    i: float
    r: float
    population: float
    t: int = 0

    def __post_init__(self):
        if not self.population > 0:
            raise ValueError(f"population must be positive, got {self.population}")
        for name in ("s", "e", "i", "r"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"{name}={v} outside [0, 1]")
        total = self.s + self.e + self.i + self.r
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"compartments sum to {total!r}, expected 1")

    @classmethod
    def from_counts(cls, population, exposed=0.0, infected=0.0, removed=0.0, t=0):
        """Build a state from person counts; susceptibles fill the remainder.

        Fractional seeds are kept exact (one exposed person is ``1/N``).
        """
        n = float(population)
        e, i, r = exposed / n, infected / n, removed / n
        return cls(s=1.0 - e - i - r, e=e, i=i, r=r, population=n, t=t)

    def as_array(self) -> np.ndarray:
        return np.array([self.s, self.e, self.i, self.r])

    def counts(self) -> np.ndarray:
        return self.as_array() * self.population


@dataclass(frozen=True)
class SeirParams:
    beta: float
    sigma: float = 0.2
    gamma: float = 0.1

    def __post_init__(self):
        for name in ("beta", "sigma", "gamma"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    @property
    def r0(self) -> float:
        return self.beta / self.gamma if self.gamma > 0 else math.inf


@dataclass(frozen=True)
class Trajectory:
    """Day-resolution model output.

    ``states[0]`` is the starting state; ``new_cases[t]`` is the number of new
    cases during the day that ends at ``states[t + 1]``.
    """

    states: tuple
    new_cases: np.ndarray = field(repr=False)

    def __post_init__(self):
        if len(self.new_cases) != len(self.states) - 1:
            raise ValueError("new_cases must have one entry per simulated day")

    @property
    def horizon(self) -> int:
        return len(self.new_cases)

    @property
    def final(self):
        return self.states[-1]

    def head(self, days: int) -> "Trajectory":
        """The first ``days`` days of this trajectory."""
        return Trajectory(self.states[: days + 1], self.new_cases[:days])

    @staticmethod
    def concatenate(parts: Sequence["Trajectory"]) -> "Trajectory":
        states = list(parts[0].states)
        cases = [parts[0].new_cases]
        for p in parts[1:]:
            states.extend(p.states[1:])
            cases.append(p.new_cases)
        return Trajectory(tuple(states), np.concatenate(cases))


class EpidemicModel(Protocol):
    """Anything that maps (state, NPI, horizon) to a day-resolution trajectory."""

    def simulate(self, state: Any, npi: Any, horizon: int) -> Trajectory: ...


def seir_derivative(state: EpidemicState, params: SeirParams) -> tuple[float, float, float, float]:
    return _rhs(state.s, state.e, state.i, state.r, params.beta, params.sigma, params.gamma)


def _rhs(s, e, i, r, beta, sigma, gamma):
    inf = beta * s * i
    inc = sigma * e
    rec = gamma * i
    return (-inf, inf - inc, inc - rec, rec)


def _rk4(y, h, beta, sigma, gamma):
    s, e, i, r = y
    a = _rhs(s, e, i, r, beta, sigma, gamma)
    h2 = 0.5 * h
    b = _rhs(s + h2 * a[0], e + h2 * a[1], i + h2 * a[2], r + h2 * a[3], beta, sigma, gamma)
    c = _rhs(s + h2 * b[0], e + h2 * b[1], i + h2 * b[2], r + h2 * b[3], beta, sigma, gamma)
    d = _rhs(s + h * c[0], e + h * c[1], i + h * c[2], r + h * c[3], beta, sigma, gamma)
    h6 = h / 6.0
    return tuple(y[n] + h6 * (a[n] + 2.0 * b[n] + 2.0 * c[n] + d[n]) for n in range(4))


def _settle(y):
    """Clip round-off negatives and renormalize; reject genuine drift."""
    total = y[0] + y[1] + y[2] + y[3]
    if not abs(total - 1.0) <= DRIFT_TOLERANCE:
        raise NumericalDrift(f"s+e+i+r = {total!r} after step")
    if min(y) < -_NEGATIVE_ROUNDOFF:
        raise NumericalDrift(f"negative compartment {min(y)!r} after step")
    y = tuple(v if v > 0.0 else 0.0 for v in y)
    total = y[0] + y[1] + y[2] + y[3]
    return tuple(v / total for v in y)


def step_rk4(state: EpidemicState, params: SeirParams, dt: float) -> EpidemicState:
    """One classical RK4 step of size ``dt`` days (time index unchanged)."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    y = _rk4((state.s, state.e, state.i, state.r), dt, params.beta, params.sigma, params.gamma)
    s, e, i, r = _settle(y)
    return EpidemicState(s, e, i, r, state.population, state.t)


def integrate(state: EpidemicState, params: SeirParams, days: int, dt: float = 0.25) -> tuple:
    """Advance ``days`` whole days; returns the states including the start."""
    n_sub = max(1, int(round(1.0 / dt)))
    h = 1.0 / n_sub
    beta, sigma, gamma = params.beta, params.sigma, params.gamma
    y = (state.s, state.e, state.i, state.r)
    out = [state]
    for day in range(1, days + 1):
        for _ in range(n_sub):
            y = _settle(_rk4(y, h, beta, sigma, gamma))
        out.append(EpidemicState(*y, population=state.population, t=state.t + day))
    return tuple(out)


def new_cases_of(states: Sequence[EpidemicState], params: SeirParams | None = None,
                 flow: str = "infectious") -> np.ndarray:
    """Daily new cases (persons/day) between consecutive states.

    ``flow="infectious"`` counts E->I transitions: the integral of
    ``sigma * e`` over the day, which equals the change in ``i + r`` because
    both I and R are fed only through that flow.  ``flow="exposed"`` counts
    S->E transitions, i.e. the drop in ``s``.  ``params`` is accepted for
    interface symmetry; neither flow needs it once the states are known.
    """
    if len(states) < 2:
        raise ValueError("need at least two states")
    if flow not in NEW_CASE_FLOWS:
        raise ValueError(f"unknown flow {flow!r}; expected one of {NEW_CASE_FLOWS}")
    arr = np.array([[x.s, x.e, x.i, x.r] for x in states])
    if flow == "infectious":
        cum = arr[:, 2] + arr[:, 3]
    else:
        cum = -arr[:, 0]
    pops = np.array([x.population for x in states[1:]])
    return np.maximum(np.diff(cum), 0.0) * pops


@dataclass(frozen=True)
class SeirModel:
    """SEIR model where each NPI choice sets the infectious rate ``beta``.

    NPI choices must carry ``model_params["beta"]``.
    """

    sigma: float = 0.2
    gamma: float = 0.1
    dt: float = 0.25
    new_case_flow: str = "infectious"

    def __post_init__(self):
        if self.new_case_flow not in NEW_CASE_FLOWS:
            raise ValueError(f"unknown new_case_flow {self.new_case_flow!r}")

    def params_for(self, npi) -> SeirParams:
        try:
            beta = npi.model_params["beta"]
        except (AttributeError, KeyError, TypeError):
            raise ValueError(f"NPI {npi!r} carries no beta for the SEIR model") from None
        return SeirParams(beta=float(beta), sigma=self.sigma, gamma=self.gamma)

    def simulate(self, state: EpidemicState, npi, horizon: int) -> Trajectory:
        if horizon < 1:
            raise ValueError("horizon must be >= 1")
        params = self.params_for(npi)
        states = integrate(state, params, horizon, self.dt)
        return Trajectory(states, new_cases_of(states, params, self.new_case_flow))


def simulate(model: EpidemicModel, state, npi, horizon: int) -> Trajectory:
    return model.simulate(state, npi, horizon)


def integrate_batch(y0: np.ndarray, beta: np.ndarray, days: int, sigma: float = 0.2,
                    gamma: float = 0.1, dt: float = 0.25) -> np.ndarray:
    """Vectorized RK4 over many fraction states at once.

    ``y0`` has shape ``(n, 4)`` and ``beta`` shape ``(n,)``; returns an array of
    shape ``(days + 1, n, 4)`` with the same per-step arithmetic as
    :func:`integrate`.
    """
    y0 = np.asarray(y0, dtype=float)
    beta = np.broadcast_to(np.asarray(beta, dtype=float), y0.shape[:1])
    n_sub = max(1, int(round(1.0 / dt)))
    h = 1.0 / n_sub
    out = np.empty((days + 1,) + y0.shape)
    out[0] = y0
    y = tuple(y0[:, n] for n in range(4))
    for day in range(1, days + 1):
        for _ in range(n_sub):
            y = _rk4(y, h, beta, sigma, gamma)
            arr = np.stack(y, axis=1)
            total = arr.sum(axis=1)
            if np.any(np.abs(total - 1.0) > DRIFT_TOLERANCE) or arr.min() < -_NEGATIVE_ROUNDOFF:
                raise NumericalDrift("batch step broke conservation")
            arr = np.maximum(arr, 0.0)
            arr /= arr.sum(axis=1, keepdims=True)
            y = tuple(arr[:, n] for n in range(4))
        out[day] = arr
    return out
