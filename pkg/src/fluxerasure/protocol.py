"""Monte Carlo simulation of repeated erasure checks and post-selection.

Timeline of one shot with ``m`` checks: each period is a free interval of
length ``t_ec`` followed by a check window of length ``t_meas``, so
``t_tot = m (t_meas + t_ec)``.  The check label is drawn from the state
at the window midpoint; a non-QND kick may then move the state (uniformly
to one of the two other levels) at the window end.  The end-of-line (EOL)
label is drawn after the last window.

Randomness is addressed by (seed, shot, purpose, ensemble) counters, and
shots are processed in fixed-size chunks, so results are identical for
any number of worker threads.
"""
from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Iterator, Sequence

import numpy as np

from . import rng as _rng
from .dynamics import RateMatrix, advance_states, propagator
from .fit import FitResult, fit_exponential
from .readout import ConfusionMatrix, ReadoutConfig, NonQNDModel, dephasing_rate, eol_confusion
from .table import Table

CHUNK = 8192


@dataclass(frozen=True)
class ErasureExperimentConfig:
    rates: RateMatrix
    erasure_confusion: ConfusionMatrix
    eol_confusion: ConfusionMatrix
    qnd_error_per_check: float | tuple[float, float, float] = 0.0
    t_meas: float = 1.6e-6
    t_ec: float = 5e-6
    m: int = 1
    init_state: int = 2
    shots: int = 100_000
    master_seed: int = 0
    flag_policy: int = 1

    def __post_init__(self):
        if not self.t_meas > 0:
            raise ValueError("t_meas must be > 0")
        if not self.t_ec >= 0:
            raise ValueError("t_ec must be >= 0")
        if self.m < 1:
            raise ValueError("m must be >= 1")
        if self.shots < 1:
            raise ValueError("shots must be >= 1")
        if self.flag_policy < 1:
            raise ValueError("flag_policy must be >= 1")
        if self.init_state not in (0, 1, 2):
            raise ValueError("init_state must be 0, 1 or 2")
        if self.erasure_confusion.n_labels != 2:
            raise ValueError("erasure_confusion needs two labels")
        if self.eol_confusion.n_labels != 3:
            raise ValueError("eol_confusion needs three labels")
        q = self.kick_probabilities()
        if np.any(q < 0) or np.any(q > 1):
            raise ValueError("qnd_error_per_check must lie in [0, 1]")

    @property
    def period(self) -> float:
        return self.t_meas + self.t_ec

    @property
    def t_tot(self) -> float:
        return self.m * self.period

    def kick_probabilities(self) -> np.ndarray:
        q = np.asarray(self.qnd_error_per_check, dtype=float)
        return np.full(3, float(q)) if q.ndim == 0 else q.reshape(3)

    def replace(self, **changes) -> "ErasureExperimentConfig":
        return replace(self, **changes)


@dataclass
class ShotRecord:
    check_labels: tuple[bool, ...]
    eol_label: int
    true_final_state: int
    flagged: bool


@dataclass
class ErasureEnsemble:
    """Per-shot outcome arrays.

    ``check_labels`` holds the raw erasure labels and ``check_states`` the
    true state at each window midpoint, both shaped (shots, m).
    """

    config: ErasureExperimentConfig
    check_labels: np.ndarray
    flagged: np.ndarray
    eol_label: np.ndarray
    true_final_state: np.ndarray
    check_states: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.flagged)

    def records(self) -> Iterator[ShotRecord]:
        for k in range(len(self)):
            yield ShotRecord(tuple(bool(b) for b in self.check_labels[k]), int(self.eol_label[k]),
                             int(self.true_final_state[k]), bool(self.flagged[k]))

    def raster_csv(self, max_shots: int | None = None) -> str:
        """Shot x check boolean raster as CSV text."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        m = self.check_labels.shape[1]
        w.writerow(["shot"] + [f"check_{c + 1}" for c in range(m)] + ["flagged", "eol_label"])
        n = len(self) if max_shots is None else min(max_shots, len(self))
        for k in range(n):
            w.writerow([k] + [int(b) for b in self.check_labels[k]] + [int(self.flagged[k]), int(self.eol_label[k])])
        return buf.getvalue()

    def summary(self) -> dict:
        surv = ~self.flagged
        n_s = int(surv.sum())
        return {
            "shots": len(self),
            "survivors": n_s,
            "survival_fraction": n_s / len(self),
            "p2_unselected": float(np.mean(self.eol_label == 2)),
            "p2_postselected": float(np.mean(self.eol_label[surv] == 2)) if n_s else None,
        }


# --------------------------------------------------------------------------


def _segment_tag(segment: int) -> int:
    return (segment << 4) | _rng.TAG_JUMP


def _sample_labels(matrix: np.ndarray, states: np.ndarray, u: np.ndarray) -> np.ndarray:
    cum = np.cumsum(matrix, axis=1)[states]
    return np.minimum((u[:, None] >= cum[:, :-1]).sum(axis=1), matrix.shape[1] - 1)


def _kick(states: np.ndarray, kick_p: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    hit = u < kick_p[states]
    first = np.where(states == 0, 1, 0)
    second = np.where(states == 2, 1, 2)
    return np.where(hit, np.where(v < 0.5, first, second), states)


def _run_chunk(cfg: ErasureExperimentConfig, shots: np.ndarray, ensemble: int, m: int,
               eol_points: Sequence[int], keep_labels: bool):
    """Simulate one chunk of shots for ``m`` checks.

    Returns per-EOL-point counts and, optionally, per-shot arrays.
    """
    seed = cfg.master_seed
    n = shots.size
    states = np.full(n, cfg.init_state, dtype=np.int64)
    run = np.zeros(n, dtype=np.int64)
    flagged = np.zeros(n, dtype=bool)
    erasure_p = cfg.erasure_confusion.matrix[:, 1]
    kick_p = cfg.kick_probabilities()
    labels = np.zeros((n, m), dtype=bool) if keep_labels else None
    mids = np.zeros((n, m), dtype=np.int8) if keep_labels else None
    eol_set = {int(p): k for k, p in enumerate(eol_points)}
    counts = np.zeros((len(eol_points), 4), dtype=np.int64)
    last_eol = None
    first_span = cfg.t_ec + cfg.t_meas / 2
    for c in range(m):
        states = advance_states(cfg.rates, states, first_span, seed, shots, _segment_tag(2 * c), ensemble)
        u, _ = _rng.uniform_pair(seed, c, shots, _rng.TAG_LABEL, ensemble)
        lab = u < erasure_p[states]
        if keep_labels:
            labels[:, c] = lab
            mids[:, c] = states
        run = np.where(lab, run + 1, 0)
        flagged |= run >= cfg.flag_policy
        states = advance_states(cfg.rates, states, cfg.t_meas / 2, seed, shots, _segment_tag(2 * c + 1), ensemble)
        if np.any(kick_p > 0):
            u, v = _rng.uniform_pair(seed, c, shots, _rng.TAG_KICK, ensemble)
            states = _kick(states, kick_p, u, v)
        k = eol_set.get(c + 1)
        if k is not None:
            u, _ = _rng.uniform_pair(seed, c + 1, shots, _rng.TAG_EOL, ensemble)
            eol = _sample_labels(cfg.eol_confusion.matrix, states, u)
            surv = ~flagged
            counts[k] = (n, int(np.sum(eol == 2)), int(surv.sum()), int(np.sum(eol[surv] == 2)))
            last_eol = eol
    extra = None
    if keep_labels:
        extra = (labels, flagged.copy(), last_eol, states.copy(), mids)
    return counts, extra


def _chunks(total: int):
    return [np.arange(s, min(s + CHUNK, total), dtype=np.int64) for s in range(0, total, CHUNK)]


def _map_chunks(fn, total: int, threads: int):
    parts = _chunks(total)
    if threads > 1 and len(parts) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, parts))
    return [fn(p) for p in parts]


def run_erasure_experiment(cfg: ErasureExperimentConfig, threads: int = 1,
                           ensemble: int = 0) -> ErasureEnsemble:
    """Simulate every shot of ``cfg`` and keep the per-shot records."""
    out = _map_chunks(lambda ids: _run_chunk(cfg, ids, ensemble, cfg.m, [cfg.m], True)[1],
                      cfg.shots, threads)
    return ErasureEnsemble(
        cfg,
        np.concatenate([o[0] for o in out]),
        np.concatenate([o[1] for o in out]),
        np.concatenate([o[2] for o in out]),
        np.concatenate([o[3] for o in out]),
        np.concatenate([o[4] for o in out]),
    )


def _binomial_sigma(k, n):
    """Standard error with the (k+1)/(n+2) estimate, so that it never vanishes."""
    n = np.asarray(n, dtype=float)
    p = (np.asarray(k, dtype=float) + 1.0) / (n + 2.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(n > 0, np.sqrt(p * (1 - p) / n), np.nan)


def survival_curve(cfg: ErasureExperimentConfig, m_grid: Sequence[int], threads: int = 1,
                   ensemble: int = 0) -> Table:
    """P2 at EOL with and without post-selection, versus number of checks.

    All grid points share the same simulated shots (an m-check experiment
    is the first m checks of a longer one); the EOL draw is independent
    for every m.  Empty post-selected entries are NaN.
    """
    grid = sorted({int(m) for m in m_grid})
    if not grid:
        raise ValueError("m grid is empty")
    if grid[0] < 1:
        raise ValueError("check counts must be >= 1")
    m_max = grid[-1]
    parts = _map_chunks(lambda ids: _run_chunk(cfg, ids, ensemble, m_max, grid, False)[0],
                        cfg.shots, threads)
    counts = np.sum(parts, axis=0)
    n_all, k_all, n_s, k_s = counts.T
    with np.errstate(divide="ignore", invalid="ignore"):
        p_post = np.where(n_s > 0, k_s / np.maximum(n_s, 1), np.nan)
    m_arr = np.array(grid)
    return Table(
        {
            "m": m_arr,
            "t_tot": m_arr * cfg.period,
            "p2_unselected": k_all / n_all,
            "p2_unselected_err": _binomial_sigma(k_all, n_all),
            "p2_postselected": p_post,
            "p2_postselected_err": _binomial_sigma(k_s, n_s),
            "survival_fraction": n_s / n_all,
            "survivors": n_s,
        },
        units={"m": "1", "t_tot": "s", "p2_unselected": "1", "p2_unselected_err": "1",
               "p2_postselected": "1", "p2_postselected_err": "1", "survival_fraction": "1",
               "survivors": "1"},
        meta={"t_ec": cfg.t_ec, "t_meas": cfg.t_meas, "shots": cfg.shots},
    )


def lifetime_fit(curve: Table, which: str = "postselected", weighted: bool = True) -> FitResult:
    """Exponential-plus-offset fit (offset in [0, 0.5]) to one survival-curve column.

    With ``weighted`` the points carry their binomial standard errors, which
    keeps the sparse post-selected tail from dominating; otherwise all
    points count equally.
    """
    if which not in ("postselected", "unselected"):
        raise ValueError("which must be 'postselected' or 'unselected'")
    y = np.asarray(curve[f"p2_{which}"], dtype=float)
    err = np.asarray(curve[f"p2_{which}_err"], dtype=float)
    t = np.asarray(curve["t_tot"], dtype=float)
    ok = np.isfinite(y) & np.isfinite(err)
    if ok.sum() < 4:
        raise ValueError(f"need at least 4 nonempty {which} points, have {int(ok.sum())}")
    return fit_exponential(t[ok], y[ok], sigma=err[ok] if weighted else None, offset_bounds=(0.0, 0.5))


def logical_lifetime(curve: Table, which: str = "postselected", weighted: bool = True) -> float:
    """Characteristic logical lifetime; ``math.inf`` when the curve does not decay."""
    return float(lifetime_fit(curve, which, weighted).parameters["T"])


def m_grid_for(t_ec: float, t_meas: float, t_tot_max: float, points: int = 16) -> list[int]:
    period = t_ec + t_meas
    m_max = max(1, int(round(t_tot_max / period)))
    grid = np.unique(np.round(np.linspace(1, m_max, min(points, m_max))).astype(int))
    return [int(m) for m in grid]


def lifetime_vs_tec(cfg: ErasureExperimentConfig, tec_grid: Sequence[float], t_tot_max: float = 500e-6,
                    points: int = 16, threads: int = 1) -> Table:
    """Post-selected (and unselected) logical lifetime for each check interval.

    Each t_EC uses an m grid spanning the same total duration.  The table
    meta holds ``monotonic``: post-selected lifetimes are non-increasing in
    t_EC within three combined standard errors.
    """
    tecs = [float(t) for t in tec_grid]
    if not tecs:
        raise ValueError("t_EC grid is empty")
    post, post_err, unsel, unsel_err = [], [], [], []
    for k, tec in enumerate(tecs):
        c = cfg.replace(t_ec=tec)
        curve = survival_curve(c, m_grid_for(tec, cfg.t_meas, t_tot_max, points), threads, ensemble=k)
        for which, vals, errs in (("postselected", post, post_err), ("unselected", unsel, unsel_err)):
            try:
                f = lifetime_fit(curve, which)
                vals.append(f.parameters["T"])
                se = f.standard_errors["T"] if f.standard_errors else math.nan
                errs.append(se if math.isfinite(f.parameters["T"]) else math.nan)
            except ValueError:
                vals.append(math.nan)
                errs.append(math.nan)
    post = np.array(post)
    post_err = np.array(post_err)
    order = np.argsort(tecs)
    mono = True
    for a, b in zip(order[:-1], order[1:]):
        ta, tb = post[a], post[b]
        if math.isinf(ta) and math.isinf(tb):
            continue
        if not (np.isfinite(ta) or math.isinf(ta)) or not (np.isfinite(tb) or math.isinf(tb)):
            mono = False
            continue
        tol = 3 * math.hypot(np.nan_to_num(post_err[a]), np.nan_to_num(post_err[b]))
        if tb > ta + tol:
            mono = False
    return Table(
        {"t_ec": np.array(tecs), "t1l_postselected": post, "t1l_postselected_err": post_err,
         "t1l_unselected": np.array(unsel), "t1l_unselected_err": np.array(unsel_err)},
        units={"t_ec": "s", "t1l_postselected": "s", "t1l_postselected_err": "s",
               "t1l_unselected": "s", "t1l_unselected_err": "s"},
        meta={"monotonic": bool(mono), "t_tot_max": t_tot_max},
    )


# --------------------------------------------------------------------------
# QND maps


@dataclass
class QNDMap:
    photon_numbers: np.ndarray
    drive_frequencies: np.ndarray
    init_state: int
    p_return: np.ndarray          # P(EOL == init) per (n, omega_d)
    p_return_err: np.ndarray
    baseline: float               # P(EOL == init) with the readout off
    baseline_err: float
    injected: np.ndarray          # per-check kick probability of init, per cell

    @property
    def p_tilde(self) -> np.ndarray:
        return self.p_return / self.baseline

    @property
    def p_tilde_err(self) -> np.ndarray:
        rel = np.hypot(self.p_return_err / self.p_return, self.baseline_err / self.baseline)
        return self.p_tilde * rel


def qnd_sequence(cfg: ErasureExperimentConfig, readout: ReadoutConfig, model: NonQNDModel,
                 init_state: int, n_grid: Sequence[float], wd_grid: Sequence[float],
                 m: int = 29, t_tot: float = 50e-6, threads: int = 1) -> QNDMap:
    """Normalised return probability after ``m`` checks over ``t_tot``.

    The kick probability of each state follows ``model`` at every
    (n, omega_d) grid cell; the normalisation run has no readout at all.
    """
    n_arr = np.asarray(n_grid, dtype=float)
    w_arr = np.asarray(wd_grid, dtype=float)
    if n_arr.size == 0 or w_arr.size == 0:
        raise ValueError("photon-number and frequency grids must be nonempty")
    t_ec = t_tot / m - cfg.t_meas
    if t_ec < 0:
        raise ValueError("checks do not fit into t_tot")
    base = cfg.replace(t_ec=t_ec, m=m, init_state=init_state, flag_policy=1)

    def p_return(c, ens):
        parts = _map_chunks(lambda ids: _run_chunk(c, ids, ens, m, [m], True)[1][2], c.shots, threads)
        eol = np.concatenate(parts)
        k = int(np.sum(eol == init_state))
        return k / eol.size, math.sqrt(max(k, 1) * max(eol.size - k, 1) / eol.size) / eol.size

    b, b_err = p_return(base.replace(qnd_error_per_check=0.0), 0)
    pr = np.zeros((n_arr.size, w_arr.size))
    pe = np.zeros_like(pr)
    inj = np.zeros_like(pr)
    cell = 1
    for a, n in enumerate(n_arr):
        for j, wd in enumerate(w_arr):
            q = model.per_check(readout.replace(photon_number=float(n), drive_frequency=float(wd)))
            inj[a, j] = q[init_state]
            pr[a, j], pe[a, j] = p_return(base.replace(qnd_error_per_check=tuple(q)), cell)
            cell += 1
    return QNDMap(n_arr, w_arr, init_state, pr, pe, b, b_err, inj)


# --------------------------------------------------------------------------
# Ramsey


@dataclass(frozen=True)
class RamseyConfig:
    t1_logical: float
    gamma_phi_residual: float
    detuning: float
    delay_grid: tuple[float, ...]
    readout_during_delay: ReadoutConfig | None = None

    def __post_init__(self):
        object.__setattr__(self, "delay_grid", tuple(float(t) for t in self.delay_grid))
        if not self.t1_logical > 0:
            raise ValueError("t1_logical must be > 0")
        if not self.gamma_phi_residual >= 0:
            raise ValueError("gamma_phi_residual must be >= 0")
        if not self.delay_grid:
            raise ValueError("delay grid is empty")
        if any(t < 0 for t in self.delay_grid):
            raise ValueError("delays must be >= 0")

    @property
    def gamma_m(self) -> float:
        return 0.0 if self.readout_during_delay is None else dephasing_rate(self.readout_during_delay)

    @property
    def gamma_phi(self) -> float:
        return self.gamma_phi_residual + self.gamma_m

    @property
    def t2(self) -> float:
        rate = 1.0 / (2.0 * self.t1_logical) + self.gamma_phi
        return math.inf if rate == 0 else 1.0 / rate


def ramsey_signal(cfg: RamseyConfig) -> Table:
    t = np.array(cfg.delay_grid)
    decay = 1.0 / (2.0 * cfg.t1_logical) + cfg.gamma_phi
    p = 0.5 + 0.5 * np.exp(-t * decay) * np.cos(cfg.detuning * t)
    return Table({"delay": t, "p": p}, units={"delay": "s", "p": "1"},
                 meta={"t2": cfg.t2, "gamma_phi": cfg.gamma_phi, "gamma_m": cfg.gamma_m})


def ramsey_signal_stochastic(cfg: RamseyConfig, shots: int, seed: int, ensemble: int = 0) -> Table:
    """Ramsey fringe averaged over Gaussian phase-diffusion paths.

    Phase increments between consecutive delays have variance
    ``2 gamma_phi dt``; energy relaxation enters through the deterministic
    ``exp(-t / (2 T1))`` envelope.
    """
    t = np.array(cfg.delay_grid)
    order = np.argsort(t)
    ts = t[order]
    dts = np.diff(np.concatenate([[0.0], ts]))
    ids = np.arange(shots, dtype=np.int64)
    phase = np.zeros(shots)
    mean = np.empty(t.size)
    for k, dt in enumerate(dts):
        z = _rng.normal_array(seed, k, ids, _rng.TAG_PHASE, ensemble)
        phase += z * math.sqrt(2.0 * cfg.gamma_phi * dt)
        mean[k] = np.mean(np.cos(cfg.detuning * ts[k] + phase))
    p = np.empty(t.size)
    p[order] = 0.5 + 0.5 * np.exp(-ts / (2 * cfg.t1_logical)) * mean
    return Table({"delay": t, "p": p}, units={"delay": "s", "p": "1"},
                 meta={"t2": cfg.t2, "gamma_phi": cfg.gamma_phi, "shots": shots})


# --------------------------------------------------------------------------
# analytic cross-checks


def unselected_p2(cfg: ErasureExperimentConfig, m: int) -> float:
    """Exact P(EOL == 2) after ``m`` checks, propagating populations through kicks."""
    p = np.zeros(3)
    p[cfg.init_state] = 1.0
    q = cfg.kick_probabilities()
    kick = np.zeros((3, 3))
    for s in range(3):
        kick[s, s] = 1 - q[s]
        for o in range(3):
            if o != s:
                kick[o, s] = q[s] / 2
    step = kick @ propagator(cfg.rates, cfg.period)
    for _ in range(m):
        p = step @ p
    return float(cfg.eol_confusion.matrix[:, 2] @ p)
