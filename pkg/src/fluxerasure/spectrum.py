"""Fluxonium spectrum and charge matrix elements.

The Hamiltonian

    H = 4 E_C n^2 - E_J cos(phi) + (E_L / 2) (phi + 2 pi f)^2

is written in the oscillator basis of the linear (E_C, E_L) circuit after
shifting phi' = phi + 2 pi f, so the Josephson term becomes
cos(phi' - 2 pi f) = (D exp(-2 pi i f) + h.c.) / 2 with
D = exp(i phi').  All energies are angular frequencies (rad/s).
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .table import Table

MIN_BASIS = 40
DEFAULT_BASIS = 120
N_KEEP = 10
CONVERGENCE_RTOL = 1e-8


class ConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class CircuitParams:
    e_c: float
    e_j: float
    e_l: float
    phi_ext: float = 0.0
    basis_size: int = DEFAULT_BASIS

    def __post_init__(self):
        if not self.e_c > 0:
            raise ValueError("e_c must be > 0")
        if not self.e_j >= 0:
            raise ValueError("e_j must be >= 0")
        if not self.e_l > 0:
            raise ValueError("e_l must be > 0")
        if int(self.basis_size) != self.basis_size or self.basis_size < MIN_BASIS:
            raise ValueError(f"basis_size must be an integer >= {MIN_BASIS}")

    def replace(self, **changes) -> "CircuitParams":
        d = dict(e_c=self.e_c, e_j=self.e_j, e_l=self.e_l, phi_ext=self.phi_ext, basis_size=self.basis_size)
        d.update(changes)
        return CircuitParams(**d)


@dataclass
class SpectrumResult:
    """Levels relative to the ground state plus charge-operator elements.

    ``charge_matrix`` keeps the complex elements <i|n|j> (phase convention:
    each eigenvector's largest oscillator-basis component is real
    positive); ``charge_elements`` holds their magnitudes.
    """

    levels: np.ndarray
    charge_elements: np.ndarray
    charge_matrix: np.ndarray
    parity: list[int] | None
    params: CircuitParams
    basis_used: int = 0
    extras: dict = field(default_factory=dict)

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    def truncated(self, n: int) -> "SpectrumResult":
        if n > self.n_levels:
            raise ValueError(f"only {self.n_levels} levels available")
        return SpectrumResult(
            levels=self.levels[:n].copy(),
            charge_elements=self.charge_elements[:n, :n].copy(),
            charge_matrix=self.charge_matrix[:n, :n].copy(),
            parity=None if self.parity is None else self.parity[:n],
            params=self.params,
            basis_used=self.basis_used,
        )


def _ladder(n: int) -> np.ndarray:
    return np.diag(np.sqrt(np.arange(1, n, dtype=float)), 1)


def _symmetry_point(phi_ext: float) -> bool:
    frac = (2.0 * phi_ext) % 2.0
    return min(abs(frac), abs(frac - 1.0), abs(frac - 2.0)) < 1e-12


def hamiltonian(params: CircuitParams, basis_size: int | None = None):
    """Assemble H (in units of the plasma frequency) and the charge operator.

    Returns ``(H, n_op, scale)`` with the physical Hamiltonian equal to
    ``scale * H``.
    """
    n = int(basis_size or params.basis_size)
    scale = math.sqrt(8.0 * params.e_c * params.e_l)
    phi_zpf = (2.0 * params.e_c / params.e_l) ** 0.25
    a = _ladder(n)
    x = a + a.T
    # D = exp(i phi_zpf x) via the eigenbasis of the (truncated) position operator
    xv, xu = np.linalg.eigh(x)
    disp = (xu * np.exp(1j * phi_zpf * xv)) @ xu.T
    disp = disp * np.exp(-2j * math.pi * params.phi_ext)
    cos_phi = 0.5 * (disp + disp.conj().T)
    h = np.diag(np.arange(n) + 0.5).astype(complex) - (params.e_j / scale) * cos_phi
    n_op = 1j * (a.T - a) / (2.0 * phi_zpf)
    return h, n_op, scale


def _diagonalize_once(params: CircuitParams, basis_size: int, n_keep: int):
    h, n_op, scale = hamiltonian(params, basis_size)
    herm_err = np.max(np.abs(h - h.conj().T))
    if herm_err > 1e-12 * max(1.0, np.max(np.abs(h))):
        raise RuntimeError(f"assembled Hamiltonian not Hermitian (max deviation {herm_err:.3e})")
    evals, evecs = np.linalg.eigh(h)
    evecs = evecs[:, :n_keep]
    # fix the eigenvector phases
    idx = np.argmax(np.abs(evecs), axis=0)
    ph = evecs[idx, np.arange(n_keep)]
    evecs = evecs * (np.abs(ph) / ph)
    levels = (evals[:n_keep] - evals[0]) * scale
    nmat = evecs.conj().T @ n_op @ evecs
    return levels, nmat, evecs


def diagonalize(params: CircuitParams, n_keep: int = N_KEEP) -> SpectrumResult:
    """Eigen-decompose the fluxonium, doubling the basis until converged.

    Convergence means levels 1..5 change by less than 1e-8 (relative) when
    the basis size is doubled; two doublings are attempted.
    """
    if n_keep < 6:
        raise ValueError("n_keep must be >= 6")
    size = params.basis_size
    levels, nmat, vecs = _diagonalize_once(params, size, n_keep)
    for _ in range(2):
        lv2, nm2, vc2 = _diagonalize_once(params, 2 * size, n_keep)
        delta = np.max(np.abs(lv2[1:6] - levels[1:6]) / np.abs(lv2[1:6]))
        if delta < CONVERGENCE_RTOL:
            break
        size, levels, nmat, vecs = 2 * size, lv2, nm2, vc2
    else:
        raise ConvergenceError(f"levels not converged at basis size {size} (relative change {delta:.2e})")

    if np.any(np.diff(levels) <= 0):
        raise ConvergenceError("degenerate levels; ordering undefined")

    parity = None
    if _symmetry_point(params.phi_ext):
        signs = (-1.0) ** np.arange(vecs.shape[0])
        expect = np.real(np.einsum("ki,k,ki->i", vecs.conj(), signs, vecs))
        if np.all(np.abs(expect) > 0.99):
            parity = [int(np.sign(e)) for e in expect]

    return SpectrumResult(
        levels=levels,
        charge_elements=np.abs(nmat),
        charge_matrix=nmat,
        parity=parity,
        params=params,
        basis_used=size,
    )


def _check_index(spec: SpectrumResult, *idx: int):
    for i in idx:
        if not 0 <= i < spec.n_levels:
            raise IndexError(f"level index {i} out of range [0, {spec.n_levels})")


def transition_frequency(spec: SpectrumResult, i: int, j: int) -> float:
    _check_index(spec, i, j)
    if not i < j:
        raise ValueError(f"need i < j, got ({i}, {j})")
    return float(spec.levels[j] - spec.levels[i])


def charge_matrix_element(spec: SpectrumResult, i: int, j: int) -> float:
    _check_index(spec, i, j)
    return float(spec.charge_elements[i, j])


SWEEP_COLUMNS = ("flux", "omega_01", "omega_12", "omega_02", "n_01", "n_12", "n_02")


def _sweep_row(params: CircuitParams, flux: float):
    s = diagonalize(params.replace(phi_ext=float(flux)))
    lv, ne = s.levels, s.charge_elements
    return (flux, lv[1], lv[2] - lv[1], lv[2], ne[0, 1], ne[1, 2], ne[0, 2])


def sweep_flux(params: CircuitParams, flux_grid, threads: int = 1) -> Table:
    """Transition frequencies and |n_ij| along a flux grid (input order kept)."""
    grid = [float(f) for f in flux_grid]
    if not grid:
        raise ValueError("flux grid is empty")
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(lambda f: _sweep_row(params, f), grid))
    else:
        rows = [_sweep_row(params, f) for f in grid]
    data = np.array(rows, dtype=float)
    units = dict(zip(SWEEP_COLUMNS, ("Phi0", "rad/s", "rad/s", "rad/s", "1", "1", "1")))
    return Table({c: data[:, k] for k, c in enumerate(SWEEP_COLUMNS)}, units)
