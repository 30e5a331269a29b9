"""Dispersive readout model.

Steady-state cavity response only.  Dressed resonator frequencies are
inputs (``dressed[i]`` is the resonator frequency with the qubit in
``|i>``); dispersive shifts are derived as ``chi_ij = dressed[i] -
dressed[j]``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from scipy.special import ndtr

COMPUTATIONAL = (0, 2)
ERASURE = 1


@dataclass(frozen=True)
class ReadoutConfig:
    kappa: float
    omega_bare: float
    dressed: tuple[float, float, float]
    efficiency: float
    photon_number: float
    t_meas: float
    drive_frequency: float

    def __post_init__(self):
        object.__setattr__(self, "dressed", tuple(float(w) for w in self.dressed))
        if len(self.dressed) != 3:
            raise ValueError("need three dressed resonator frequencies")
        if not self.kappa > 0:
            raise ValueError("kappa must be > 0")
        if not 0 < self.efficiency <= 1:
            raise ValueError("efficiency must lie in (0, 1]")
        if not self.photon_number >= 0:
            raise ValueError("photon_number must be >= 0")
        if not self.t_meas > 0:
            raise ValueError("t_meas must be > 0")

    @property
    def chi01(self) -> float:
        return self.dressed[0] - self.dressed[1]

    @property
    def chi02(self) -> float:
        return self.dressed[0] - self.dressed[2]

    def replace(self, **changes) -> "ReadoutConfig":
        return replace(self, **changes)


def photon_number(cfg: ReadoutConfig, i: int) -> float:
    """Intra-cavity photons with the qubit in |i>."""
    det = cfg.dressed[i] - cfg.drive_frequency
    return cfg.photon_number * cfg.kappa ** 2 / (cfg.kappa ** 2 + 4.0 * det ** 2)


def dephasing_rate(cfg: ReadoutConfig) -> float:
    """Measurement-induced dephasing rate of the {|0>, |2>} subspace (s^-1)."""
    chi = cfg.chi02
    n_sum = photon_number(cfg, 0) + photon_number(cfg, 2)
    denom = cfg.kappa ** 2 + chi ** 2 + 4.0 * (cfg.omega_bare - cfg.drive_frequency) ** 2
    return n_sum * cfg.kappa * chi ** 2 / denom


def dephasing_error(gamma_m: float, t_meas: float) -> float:
    return -math.expm1(-gamma_m * t_meas)


def dephasing_error_per_check(cfg: ReadoutConfig) -> float:
    return dephasing_error(dephasing_rate(cfg), cfg.t_meas)


def steady_amplitude(cfg: ReadoutConfig, i: int) -> complex:
    """Steady-state field alpha_i, normalised so that |alpha_i|^2 = n_i."""
    half = cfg.kappa / 2.0
    return math.sqrt(cfg.photon_number) * half / complex(half, cfg.dressed[i] - cfg.drive_frequency)


def _centroid(cfg: ReadoutConfig, states) -> complex:
    if isinstance(states, (int, np.integer)):
        states = (int(states),)
    return complex(np.mean([steady_amplitude(cfg, s) for s in states]))


def noise_scale(cfg: ReadoutConfig) -> float:
    """Signal-to-noise per unit field separation: 2 sqrt(eta kappa t / 2)."""
    return 2.0 * math.sqrt(cfg.efficiency * cfg.kappa * cfg.t_meas / 2.0)


def separation_snr(cfg: ReadoutConfig, i, j) -> float:
    """Distance between two pointer states in units of the noise width.

    ``i`` and ``j`` may be single states or tuples, in which case the mean
    field of the listed states is used (e.g. ``(0, 2)`` for the
    computational manifold).
    """
    return abs(_centroid(cfg, i) - _centroid(cfg, j)) * noise_scale(cfg)


def projected_means(cfg: ReadoutConfig, negative=COMPUTATIONAL, positive=ERASURE) -> np.ndarray:
    """Positions of the three pointer states on the axis from ``negative`` to ``positive``.

    Units are noise widths; the ``negative`` centroid sits at 0 and the
    ``positive`` centroid at ``separation_snr(cfg, negative, positive)``.
    """
    a, b = _centroid(cfg, negative), _centroid(cfg, positive)
    d = b - a
    if abs(d) == 0:
        return np.zeros(3)
    unit = d / abs(d)
    scale = noise_scale(cfg)
    return np.array([((steady_amplitude(cfg, k) - a) * unit.conjugate()).real * scale for k in range(3)])


@dataclass(frozen=True)
class ConfusionMatrix:
    """``matrix[true_state, label]``; rows sum to one."""

    matrix: np.ndarray
    labels: tuple[str, ...]

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float)
        object.__setattr__(self, "matrix", m)
        if m.ndim != 2 or m.shape[0] != 3 or m.shape[1] != len(self.labels):
            raise ValueError(f"confusion matrix shape {m.shape} does not match labels {self.labels}")
        if np.any(m < -1e-15) or np.any(m > 1 + 1e-15):
            raise ValueError("confusion entries must lie in [0, 1]")
        if np.any(np.abs(m.sum(axis=1) - 1.0) > 1e-12):
            raise ValueError("confusion rows must sum to 1")

    @property
    def n_labels(self) -> int:
        return len(self.labels)

    @property
    def false_negative(self) -> float:
        """Probability that |1> is labelled computational (erasure checks only)."""
        return float(self.matrix[1, 0])

    @property
    def false_positive(self) -> float:
        """Mean probability that |0>, |2> are labelled erasure (erasure checks only)."""
        return float(0.5 * (self.matrix[0, 1] + self.matrix[2, 1]))

    def fidelity(self) -> float:
        """Mean probability of the correct label (three-label matrices)."""
        return float(np.mean(np.diag(self.matrix)))


CHECK_LABELS = ("computational", "erasure")
EOL_LABELS = ("0", "1", "2")


def confusion_from_model(cfg: ReadoutConfig, thresholds: Sequence[float],
                         negative=COMPUTATIONAL, positive=ERASURE,
                         labels: Sequence[str] | None = None) -> ConfusionMatrix:
    """Gaussian confusion matrix on the projected readout axis.

    Each true state is a unit-variance Gaussian centred at its projected
    mean.  ``thresholds`` (ascending, in noise widths along the same axis)
    cut the axis into ``len(thresholds) + 1`` label intervals, the lowest
    interval being label 0.
    """
    th = np.asarray(thresholds, dtype=float)
    if th.ndim != 1 or th.size == 0:
        raise ValueError("need at least one threshold")
    if np.any(np.diff(th) <= 0):
        raise ValueError(f"thresholds must be strictly ascending, got {list(th)}")
    if labels is None:
        labels = CHECK_LABELS if th.size == 1 else tuple(str(k) for k in range(th.size + 1))
    mu = projected_means(cfg, negative, positive)
    # cumulative probability below each threshold, per state
    below = ndtr(th[None, :] - mu[:, None])
    edges = np.hstack([np.zeros((3, 1)), below, np.ones((3, 1))])
    probs = np.diff(edges, axis=1)
    probs /= probs.sum(axis=1, keepdims=True)
    return ConfusionMatrix(probs, tuple(labels))


def midpoint_threshold(cfg: ReadoutConfig, negative=COMPUTATIONAL, positive=ERASURE) -> float:
    return 0.5 * separation_snr(cfg, negative, positive)


def threshold_for_false_negative(cfg: ReadoutConfig, fn_rate: float,
                                 negative=COMPUTATIONAL, positive=ERASURE) -> float:
    """Threshold that labels |1> as computational with probability ``fn_rate``."""
    from scipy.special import ndtri

    mu = projected_means(cfg, negative, positive)
    return float(mu[ERASURE] + ndtri(fn_rate))


def midpoint_fidelity(cfg: ReadoutConfig) -> float:
    """Assignment fidelity of |1> versus the computational manifold at the midpoint threshold.

    Defined as 1 - [P(computational | 1) + P(erasure | computational)] / 2,
    with the computational row averaged over |0> and |2>.
    """
    cm = confusion_from_model(cfg, [midpoint_threshold(cfg)])
    return 1.0 - 0.5 * (cm.false_negative + cm.false_positive)


def empirical_confusion(fn_rate: float, fp_rate: float) -> ConfusionMatrix:
    for name, v in (("fn_rate", fn_rate), ("fp_rate", fp_rate)):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"{name} must lie in [0, 1], got {v!r}")
    m = np.array([
        [1.0 - fp_rate, fp_rate],
        [fn_rate, 1.0 - fn_rate],
        [1.0 - fp_rate, fp_rate],
    ])
    return ConfusionMatrix(m, CHECK_LABELS)


def eol_confusion(fidelity: float = 0.861) -> ConfusionMatrix:
    """Symmetric three-state end-of-line confusion with uniform off-diagonal errors."""
    if not 0.0 <= fidelity <= 1.0:
        raise ValueError("fidelity must lie in [0, 1]")
    off = (1.0 - fidelity) / 2.0
    m = np.full((3, 3), off)
    np.fill_diagonal(m, fidelity)
    return ConfusionMatrix(m, EOL_LABELS)


def qnd_error(p0_tilde: float, p2_tilde: float, m: int) -> float:
    """Per-check non-QND probability from normalised survival after ``m`` checks."""
    if m < 1 or int(m) != m:
        raise ValueError(f"check count must be a positive integer, got {m!r}")
    for v in (p0_tilde, p2_tilde):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"normalised probabilities must lie in [0, 1], got {v!r}")
    return 1.0 - (0.5 * (p0_tilde + p2_tilde)) ** (1.0 / m)


@dataclass(frozen=True)
class NonQNDModel:
    """Per-check kick probability ``coefficient * n_i(omega_d)`` for the occupied state."""

    coefficient: float

    def per_check(self, cfg: ReadoutConfig) -> tuple[float, float, float]:
        return tuple(min(1.0, self.coefficient * photon_number(cfg, i)) for i in range(3))


def calibrate_nonqnd(cfg: ReadoutConfig, target: float = 1e-3) -> NonQNDModel:
    """Choose the coefficient so the computational-state mean kick probability equals ``target``."""
    n_comp = 0.5 * (photon_number(cfg, 0) + photon_number(cfg, 2))
    if n_comp <= 0:
        raise ValueError("no photons in the computational states; cannot calibrate")
    return NonQNDModel(target / n_comp)


def solve_bare_frequency(cfg: ReadoutConfig, gamma_m: float, side: int = -1) -> float:
    """Bare resonator frequency that yields dephasing rate ``gamma_m``.

    ``side`` picks the root below (-1) or above (+1) the drive frequency.
    """
    chi = cfg.chi02
    n_sum = photon_number(cfg, 0) + photon_number(cfg, 2)
    rhs = n_sum * cfg.kappa * chi ** 2 / gamma_m - cfg.kappa ** 2 - chi ** 2
    if rhs < 0:
        raise ValueError(f"dephasing rate {gamma_m} exceeds the maximum reachable value")
    return cfg.drive_frequency + side * 0.5 * math.sqrt(rhs)
