"""Three-level classical relaxation dynamics.

States are indexed 0, 1, 2; ``|1>`` is the erasure state.  The generator
``G`` acts on population column vectors, ``dP/dt = G P``, with ``G[j, i]``
the rate for i -> j.  There is no excitation out of ``|0>``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.linalg import expm

from . import rng as _rng


@dataclass(frozen=True)
class RateMatrix:
    """Spontaneous transition rates in s^-1 (i -> j written ``gij``)."""

    g10: float = 0.0
    g12: float = 0.0
    g20: float = 0.0
    g21: float = 0.0

    def __post_init__(self):
        for name in ("g10", "g12", "g20", "g21"):
            v = getattr(self, name)
            if not (v >= 0 and math.isfinite(v)):
                raise ValueError(f"rate {name} must be finite and >= 0, got {v!r}")

    def generator(self) -> np.ndarray:
        g10, g12, g20, g21 = self.g10, self.g12, self.g20, self.g21
        return np.array(
            [
                [0.0, g10, g20],
                [0.0, -(g10 + g12), g21],
                [0.0, g12, -(g20 + g21)],
            ]
        )

    def exit_rates(self) -> np.ndarray:
        return np.array([0.0, self.g10 + self.g12, self.g20 + self.g21])

    def jump_table(self) -> np.ndarray:
        """``table[i]`` = (destination when the channel draw is low, probability of it)."""
        out = np.zeros((3, 2))
        out[1] = (0, self.g10 / (self.g10 + self.g12) if self.g10 + self.g12 > 0 else 1.0)
        out[2] = (0, self.g20 / (self.g20 + self.g21) if self.g20 + self.g21 > 0 else 1.0)
        return out

    def as_tuple(self):
        return (self.g10, self.g12, self.g20, self.g21)


@dataclass(frozen=True)
class PopulationState:
    p0: float
    p1: float
    p2: float

    def __post_init__(self):
        vals = (self.p0, self.p1, self.p2)
        if any(not (-1e-12 <= v <= 1 + 1e-12) for v in vals):
            raise ValueError(f"populations must lie in [0, 1], got {vals}")
        if abs(sum(vals) - 1.0) > 1e-12:
            raise ValueError(f"populations must sum to 1, got {sum(vals)!r}")

    @classmethod
    def basis(cls, i: int) -> "PopulationState":
        v = [0.0, 0.0, 0.0]
        v[i] = 1.0
        return cls(*v)

    def as_array(self) -> np.ndarray:
        return np.array([self.p0, self.p1, self.p2])


def propagator(rates: RateMatrix, t: float) -> np.ndarray:
    """exp(t G), columns indexed by the initial state."""
    if t < 0:
        raise ValueError(f"negative evolution time {t!r}")
    return expm(rates.generator() * t)


def evolve_populations(rates: RateMatrix, init: PopulationState, t: float) -> PopulationState:
    p = propagator(rates, t) @ init.as_array()
    p = np.clip(p, 0.0, 1.0)
    p /= p.sum()
    return PopulationState(*p)


class CharacteristicTimes(NamedTuple):
    erasure_state: float
    erasure_onset: float
    slowest: float


def characteristic_times(rates: RateMatrix) -> CharacteristicTimes:
    """Lifetime of |1>, onset time 1/g21 and the slowest relaxation time.

    A vanishing rate sum yields ``math.inf`` for that field.
    """
    s1 = rates.g10 + rates.g12
    t1 = 1.0 / s1 if s1 > 0 else math.inf
    te = 1.0 / rates.g21 if rates.g21 > 0 else math.inf
    ev = np.linalg.eigvals(rates.generator()).real
    nonzero = ev[np.abs(ev) > 1e-12 * max(1.0, np.max(np.abs(ev)))]
    ts = -1.0 / np.max(nonzero) if nonzero.size else math.inf
    return CharacteristicTimes(t1, te, float(ts))


@dataclass
class TrajectoryPath:
    initial_state: int
    duration: float
    jumps: list[tuple[float, int]]

    def __post_init__(self):
        last_t, last_s = -1.0, self.initial_state
        for t, s in self.jumps:
            if not (last_t < t <= self.duration) or t < 0:
                raise ValueError("jump times must be strictly increasing within [0, duration]")
            if s == last_s:
                raise ValueError("consecutive states must differ")
            last_t, last_s = t, s

    def state_at(self, t: float) -> int:
        s = self.initial_state
        for tj, sj in self.jumps:
            if tj > t:
                break
            s = sj
        return s

    @property
    def final_state(self) -> int:
        return self.jumps[-1][1] if self.jumps else self.initial_state


def sample_trajectory(rates: RateMatrix, init: int, duration: float,
                      stream: _rng.RandomStream) -> TrajectoryPath:
    """Exact Gillespie sampling of one path.

    Each jump consumes one counter of ``stream``: the first uniform sets
    the waiting time, the second picks the channel.
    """
    if duration < 0:
        raise ValueError("duration must be >= 0")
    exit_rates = rates.exit_rates()
    table = rates.jump_table()
    t, s = 0.0, int(init)
    jumps = []
    while exit_rates[s] > 0:
        u, v = stream.uniform_pair()
        t = t + (-math.log(u)) / exit_rates[s]
        if t > duration:
            break
        s = 0 if v < table[s, 1] else (2 if s == 1 else 1)
        jumps.append((t, s))
    return TrajectoryPath(int(init), float(duration), jumps)


def advance_states(rates: RateMatrix, states: np.ndarray, span: float, seed: int,
                   shots: np.ndarray, tag: int, ensemble: int = 0,
                   record: list | None = None, t_offset: float = 0.0) -> np.ndarray:
    """Vectorised Gillespie over one time segment of length ``span``.

    Shot ``k`` uses counters ``(j, shots[k], tag, ensemble)`` for its j-th
    draw, so the result for a shot does not depend on which other shots
    are in the batch.  Restarting at segment boundaries is exact because
    the chain is memoryless.  If ``record`` is a list, ``(shot, time,
    new_state)`` arrays are appended for every jump.
    """
    states = np.array(states, dtype=np.int64, copy=True)
    exit_rates = rates.exit_rates()
    table = rates.jump_table()
    elapsed = np.zeros(states.shape)
    active = np.flatnonzero(exit_rates[states] > 0)
    j = 0
    while active.size:
        u, v = _rng.uniform_pair(seed, j, shots[active], tag, ensemble)
        s = states[active]
        dt = -np.log(u) / exit_rates[s]
        t_new = elapsed[active] + dt
        jumped = t_new <= span
        active = active[jumped]
        if not active.size:
            break
        s = s[jumped]
        to_zero = v[jumped] < table[s, 1]
        new = np.where(to_zero, 0, np.where(s == 1, 2, 1))
        states[active] = new
        elapsed[active] = t_new[jumped]
        if record is not None:
            record.append((shots[active].copy(), t_offset + elapsed[active], new.copy()))
        active = active[exit_rates[new] > 0]
        j += 1
    return states


def ensemble_occupations(rates: RateMatrix, init: int, checkpoints, shots: int, seed: int,
                         ensemble: int = 0) -> np.ndarray:
    """Occupation fractions of ``shots`` Gillespie paths at each checkpoint.

    Paths are sampled once over the full duration (one stream per shot)
    and read off at the checkpoints.  Returns an array (n_checkpoints, 3).
    """
    cps = np.asarray(checkpoints, dtype=float)
    if np.any(np.diff(cps) < 0) or np.any(cps < 0):
        raise ValueError("checkpoints must be non-negative and sorted")
    ids = np.arange(shots, dtype=np.int64)
    record: list = []
    advance_states(rates, np.full(shots, init), float(cps[-1]) if cps.size else 0.0,
                   seed, ids, _rng.TAG_JUMP, ensemble, record=record)
    out = np.zeros((cps.size, 3))
    if record:
        shot = np.concatenate([r[0] for r in record])
        times = np.concatenate([r[1] for r in record])
        new = np.concatenate([r[2] for r in record])
    else:
        shot = times = new = np.zeros(0)
    order = np.lexsort((times, shot))
    shot, times, new = shot[order], times[order], new[order]
    for c, tc in enumerate(cps):
        state = np.full(shots, init, dtype=np.int64)
        idx = np.flatnonzero(times <= tc)
        if idx.size:
            sk = shot[idx]
            last = idx[np.r_[sk[1:] != sk[:-1], True]]
            state[shot[last].astype(np.int64)] = new[last]
        out[c] = np.bincount(state, minlength=3) / shots
    return out


@dataclass(frozen=True)
class RampSpec:
    frequency_gap: float
    detuning_span: float
    ramp_duration: float
    # sweep rate = span_factor * detuning_span / ramp_duration
    span_factor: float = 1.0

    def __post_init__(self):
        if not (self.frequency_gap > 0 and self.detuning_span > 0 and self.ramp_duration > 0):
            raise ValueError("ramp gap, span and duration must all be > 0")

    @property
    def sweep_rate(self) -> float:
        return self.span_factor * self.detuning_span / self.ramp_duration


def lz_error(ramp: RampSpec) -> float:
    """Landau-Zener non-adiabatic probability exp(-pi gap^2 / sweep_rate)."""
    return math.exp(-math.pi * ramp.frequency_gap ** 2 / ramp.sweep_rate)


def lz_error_log10(ramp: RampSpec) -> float:
    """log10 of :func:`lz_error`; usable where the probability underflows."""
    return -math.pi * ramp.frequency_gap ** 2 / ramp.sweep_rate / math.log(10.0)
