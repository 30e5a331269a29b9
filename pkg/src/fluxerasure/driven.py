"""Coherent driven dynamics: ideal subspace rotations and charge-driven pulses.

Pulses are integrated in the lab frame with classical RK4.  Because a
flat-top drive is periodic in the carrier, only one carrier period is
integrated; the full-pulse propagator is that period propagator raised to
the number of whole periods, times a final partial period.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .spectrum import SpectrumResult


@dataclass(frozen=True)
class DrivePulse:
    amplitude: float
    carrier: float
    duration: float
    phase: float = 0.0
    envelope: str = "flat"

    def __post_init__(self):
        if self.amplitude < 0:
            raise ValueError("amplitude must be >= 0")
        if not self.duration > 0:
            raise ValueError("duration must be > 0")
        if not self.carrier > 0:
            raise ValueError("carrier must be > 0")
        if self.envelope != "flat":
            raise ValueError("only the flat-top envelope is supported")


@dataclass(frozen=True)
class SubspaceRotation:
    i: int
    j: int
    theta: float
    phi: float = 0.0

    def __post_init__(self):
        if not (0 <= self.i < self.j):
            raise ValueError(f"subspace needs 0 <= i < j, got ({self.i}, {self.j})")
        if not 0 <= self.theta < 2 * math.pi:
            raise ValueError("theta must lie in [0, 2 pi)")


def rotation_unitary(rot: SubspaceRotation, dim: int) -> np.ndarray:
    """exp(-i theta/2 (cos phi X_ij + sin phi Y_ij)), identity elsewhere."""
    if rot.j >= dim:
        raise ValueError(f"subspace ({rot.i}, {rot.j}) does not fit in dimension {dim}")
    u = np.eye(dim, dtype=complex)
    c, s = math.cos(rot.theta / 2), math.sin(rot.theta / 2)
    u[rot.i, rot.i] = c
    u[rot.j, rot.j] = c
    u[rot.i, rot.j] = -1j * s * np.exp(-1j * rot.phi)
    u[rot.j, rot.i] = -1j * s * np.exp(1j * rot.phi)
    return u


def compose_logical_rotation(theta: float, phi: float = 0.0) -> np.ndarray:
    """Logical rotation on {|0>, |2>} built as R^01_pi R^12_theta(phi) R^01_pi."""
    theta = theta % (2 * math.pi)
    r01 = rotation_unitary(SubspaceRotation(0, 1, math.pi, 0.0), 3)
    r12 = rotation_unitary(SubspaceRotation(1, 2, theta, phi), 3)
    return r01 @ r12 @ r01


def _rk4_period(levels, nmat, amps, carriers, phases, t_end, steps):
    """Batched RK4 for U(t_end) under H = diag(levels) + A cos(w t + p) N.

    ``amps``, ``carriers``, ``phases`` and ``t_end`` have shape (B,);
    returns (B, L, L).
    """
    L = len(levels)
    B = len(amps)
    diag = -1j * np.asarray(levels, dtype=float)
    nn = -1j * np.asarray(nmat, dtype=complex)
    u = np.broadcast_to(np.eye(L, dtype=complex), (B, L, L)).copy()
    h = np.asarray(t_end, dtype=float) / steps
    hb = h[:, None, None]
    amps = np.asarray(amps, dtype=float)

    def deriv(t, y):
        coef = (amps * np.cos(carriers * t + phases))[:, None, None]
        return diag[None, :, None] * y + coef * (nn @ y)

    for k in range(steps):
        t = k * h
        k1 = deriv(t, u)
        k2 = deriv(t + h / 2, u + hb / 2 * k1)
        k3 = deriv(t + h / 2, u + hb / 2 * k2)
        k4 = deriv(t + h, u + hb * k3)
        u = u + hb / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return u


def steps_per_period(spec: SpectrumResult, carrier: float, refine: int = 16) -> int:
    """RK4 steps per carrier period; ``refine=1`` gives step = 2 pi / (50 omega_max)."""
    w_max = float(np.max(spec.levels))
    base = math.ceil(50.0 * w_max / carrier)
    return max(16, base * refine)


def pulse_propagators(spec: SpectrumResult, amplitudes, carriers, duration: float,
                      phase: float = 0.0, refine: int = 16) -> np.ndarray:
    """Propagators (B, L, L) for flat-top pulses of one common duration."""
    amps = np.atleast_1d(np.asarray(amplitudes, dtype=float))
    carr = np.atleast_1d(np.asarray(carriers, dtype=float))
    amps, carr = np.broadcast_arrays(amps, carr)
    period = 2 * math.pi / carr
    whole = np.floor(duration / period).astype(np.int64)
    rest = duration - whole * period
    steps = steps_per_period(spec, float(np.min(carr)), refine)
    phases = np.full(amps.shape, phase)
    u_period = _rk4_period(spec.levels, spec.charge_matrix, amps, carr, phases, period, steps)
    u_rest = _rk4_period(spec.levels, spec.charge_matrix, amps, carr, phases, rest, steps)
    out = np.empty_like(u_period)
    for b in range(len(amps)):
        out[b] = u_rest[b] @ np.linalg.matrix_power(u_period[b], int(whole[b]))
    return out


def simulate_drive(spec: SpectrumResult, pulse: DrivePulse, init, refine: int = 16) -> np.ndarray:
    """Final state after a flat-top charge drive.

    ``spec`` should already be truncated to the levels to keep (at least 4).
    """
    psi0 = np.asarray(init, dtype=complex)
    if spec.n_levels < 4:
        raise ValueError("keep at least 4 levels to capture ac-Stark shifts")
    if psi0.shape != (spec.n_levels,):
        raise ValueError(f"initial state must have length {spec.n_levels}")
    if abs(np.linalg.norm(psi0) - 1.0) > 1e-10:
        raise ValueError("initial state is not normalised")
    u = pulse_propagators(spec, [pulse.amplitude], [pulse.carrier], pulse.duration, pulse.phase, refine)[0]
    psi = u @ psi0
    if abs(np.linalg.norm(psi) - 1.0) > 1e-8:
        raise FloatingPointError(f"norm drifted to {np.linalg.norm(psi):.12f}; refine the step")
    return psi


def chevron_scan(spec: SpectrumResult, duration: float, amplitude_grid, detuning_grid,
                 repeats: int = 1, refine: int = 16, threads: int = 1) -> np.ndarray:
    """P2 after ``repeats`` back-to-back pulses starting in |0>.

    The carrier is omega_02/2 + detuning and runs phase-continuously
    across repeats.  Returns an array indexed [amplitude, detuning].
    """
    if repeats not in (1, 2):
        raise ValueError("repeats must be 1 or 2")
    amps = np.asarray(amplitude_grid, dtype=float)
    dets = np.asarray(detuning_grid, dtype=float)
    if amps.size == 0 or dets.size == 0:
        raise ValueError("amplitude and detuning grids must be nonempty")
    center = spec.levels[2] / 2.0
    A, D = np.meshgrid(amps, dets, indexing="ij")
    flat_a, flat_c = A.ravel(), center + D.ravel()

    def block(sl):
        u = pulse_propagators(spec, flat_a[sl], flat_c[sl], repeats * duration, 0.0, refine)
        return np.abs(u[:, 2, 0]) ** 2

    chunk = max(1, dets.size)
    slices = [slice(k, min(k + chunk, flat_a.size)) for k in range(0, flat_a.size, chunk)]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(block, slices))
    else:
        parts = [block(s) for s in slices]
    return np.concatenate(parts).reshape(A.shape)
