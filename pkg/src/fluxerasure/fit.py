"""Nonlinear least-squares fits.

One damped Gauss-Newton engine (Levenberg-Marquardt with Marquardt
diagonal scaling and box projection) serves every model.  Jacobians are
central differences with step ``max(1e-6 |x|, 1e-12)``.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import expm

from . import rng as _rng
from .dynamics import RateMatrix
from .readout import ReadoutConfig, dephasing_rate

MAX_ITER = 500
XTOL = 1e-10
FTOL = 1e-12
UNIDENTIFIABLE_RATIO = 3.0
# a fitted rate closer to zero than this many standard errors is not resolved
ZERO_RATE_SIGMAS = 3.0


class FitError(RuntimeError):
    """The optimiser diverged or the data cannot constrain the model."""


@dataclass
class FitResult:
    parameters: dict[str, float]
    standard_errors: dict[str, float] | None
    residual_norm: float
    iterations: int
    converged: bool
    unidentifiable: tuple[str, ...] = ()
    flags: tuple[str, ...] = ()
    history: list[float] = field(default_factory=list, repr=False)

    def __post_init__(self):
        if self.standard_errors is not None and not self.converged:
            raise ValueError("standard errors are only reported for converged fits")
        if not self.residual_norm >= 0:
            raise ValueError("residual norm must be >= 0")

    def __getitem__(self, name: str) -> float:
        return self.parameters[name]

    def to_dict(self) -> dict:
        def clean(v):
            return None if v is None or not math.isfinite(v) else float(v)

        return {
            "parameters": {k: clean(v) for k, v in self.parameters.items()},
            "standard_errors": None if self.standard_errors is None
            else {k: clean(v) for k, v in self.standard_errors.items()},
            "residual_norm": float(self.residual_norm),
            "iterations": int(self.iterations),
            "converged": bool(self.converged),
            "unidentifiable": list(self.unidentifiable),
            "flags": list(self.flags),
        }


@dataclass
class _Solution:
    x: np.ndarray
    cost: float
    jac: np.ndarray
    iterations: int
    converged: bool
    history: list[float]
    n_resid: int


def numerical_jacobian(fun: Callable, x: np.ndarray, f0: np.ndarray | None = None) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if f0 is None:
        f0 = fun(x)
    jac = np.empty((f0.size, x.size))
    for k in range(x.size):
        h = max(1e-6 * abs(x[k]), 1e-12)
        xp, xm = x.copy(), x.copy()
        xp[k] += h
        xm[k] -= h
        jac[:, k] = (fun(xp) - fun(xm)) / (2 * h)
    return jac


def levenberg_marquardt(fun: Callable, x0, lower=None, upper=None, max_iter: int = MAX_ITER,
                        xtol: float = XTOL, ftol: float = FTOL) -> _Solution:
    """Minimise ``||fun(x)||^2`` inside the box [lower, upper]."""
    x = np.asarray(x0, dtype=float).copy()
    n = x.size
    lo = np.full(n, -np.inf) if lower is None else np.asarray(lower, dtype=float)
    hi = np.full(n, np.inf) if upper is None else np.asarray(upper, dtype=float)
    x = np.clip(x, lo, hi)
    r = fun(x)
    if not np.all(np.isfinite(r)):
        raise FitError("non-finite residuals at the starting point")
    cost = float(r @ r)
    history = [cost]
    lam = None
    converged = False
    it = 0
    jac = numerical_jacobian(fun, x, r)
    while it < max_iter:
        it += 1
        a = jac.T @ jac
        g = jac.T @ r
        d = np.diag(a).copy()
        dmax = np.max(d) if d.size else 0.0
        if dmax == 0.0 or not np.isfinite(dmax):
            converged = np.all(np.isfinite(r))
            break
        d = np.maximum(d, 1e-12 * dmax)
        if lam is None:
            lam = 1e-3
        # parameters pinned at a bound with the descent direction pointing out stay fixed
        free = ~(((x <= lo) & (g > 0)) | ((x >= hi) & (g < 0)))
        if not np.any(free):
            converged = True
            break
        af = a[np.ix_(free, free)]
        accepted = False
        while lam < 1e16:
            step = np.zeros(n)
            try:
                step[free] = np.linalg.solve(af + lam * np.diag(d[free]), -g[free])
            except np.linalg.LinAlgError:
                lam *= 4
                continue
            x_new = np.clip(x + step, lo, hi)
            r_new = fun(x_new)
            cost_new = float(r_new @ r_new) if np.all(np.isfinite(r_new)) else np.inf
            if cost_new <= cost:
                accepted = True
                break
            lam *= 4
        if not accepted:
            # no descent direction left at working precision
            converged = True
            break
        dx = np.linalg.norm(x_new - x) / (np.linalg.norm(x) + 1e-30)
        dcost = (cost - cost_new) / cost if cost > 0 else 0.0
        x, r, cost = x_new, r_new, cost_new
        history.append(cost)
        lam = max(lam / 3, 1e-12)
        jac = numerical_jacobian(fun, x, r)
        if dx < xtol or dcost < ftol or cost == 0.0:
            converged = True
            break
    return _Solution(x, cost, jac, it, converged, history, r.size)


def _covariance(jac: np.ndarray, cost: float, n_resid: int, absolute_sigma: bool):
    """Parameter covariance from the Jacobian; singular directions give inf."""
    n = jac.shape[1]
    u, s, vt = np.linalg.svd(jac, full_matrices=False)
    if s.size == 0 or s[0] == 0:
        return np.full((n, n), np.inf)
    tol = 1e-10 * s[0]
    good = s > tol
    inv = np.zeros_like(s)
    inv[good] = 1.0 / s[good] ** 2
    cov = (vt.T * inv) @ vt
    if not absolute_sigma:
        dof = max(n_resid - n, 1)
        cov = cov * (cost / dof)
    if not np.all(good):
        null = vt[~good]
        touched = np.any(np.abs(null) > 1e-6, axis=0)
        cov[touched, :] = np.inf
        cov[:, touched] = np.inf
    return cov


def _result(names, values, errors, sol: _Solution, flags=()) -> FitResult:
    params = dict(zip(names, (float(v) for v in values)))
    se = dict(zip(names, (float(e) for e in errors))) if sol.converged else None
    unident = ()
    if se is not None:
        unident = tuple(k for k in names
                        if not (se[k] <= UNIDENTIFIABLE_RATIO * abs(params[k])))
    return FitResult(params, se, math.sqrt(sol.cost), sol.iterations, sol.converged,
                     unident, tuple(flags), sol.history)


# ----------------------------------------------------------------------------
# exponential decay


def _weights(y, sigma):
    if sigma is None:
        return np.ones_like(y), False
    sigma = np.asarray(sigma, dtype=float)
    if np.any(sigma <= 0):
        raise ValueError("uncertainties must be > 0")
    return 1.0 / sigma, True


def fit_exponential(t, y, sigma=None, offset_bounds=(-np.inf, np.inf)) -> FitResult:
    """Fit ``amplitude * exp(-t / T) + offset`` with T > 0.

    Constant (non-decaying) data return ``T = inf`` with the
    ``non_decaying`` flag instead of raising.
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    if t.size != y.size or t.size < 4:
        raise ValueError("need at least 4 (t, y) points")
    w, absolute = _weights(y, sigma)
    span = float(np.ptp(t))
    lo_c, hi_c = offset_bounds
    scale = max(float(np.max(np.abs(y))), 1e-300)
    names = ("amplitude", "T", "offset")
    if np.ptp(y) <= 1e-12 * scale or span == 0:
        c = float(np.clip(np.mean(y), lo_c, hi_c))
        sol = _Solution(np.zeros(3), float(np.sum((w * (y - c)) ** 2)), np.zeros((t.size, 3)),
                        0, True, [], t.size)
        return FitResult({"amplitude": 0.0, "T": math.inf, "offset": c},
                         {"amplitude": math.inf, "T": math.inf, "offset": math.inf},
                         math.sqrt(sol.cost), 0, True, ("T",), ("non_decaying",))

    t0 = t.min()
    tau_unit = span

    def model(x):
        a, logT, c = x
        return a * np.exp(-(t - t0) / (tau_unit * np.exp(logT))) + c

    def resid(x):
        return w * (model(x) - y)

    lower = np.array([-np.inf, math.log(1e-6), lo_c])
    upper = np.array([np.inf, math.log(1e6), hi_c])
    best = None
    order = np.argsort(t)
    for tau in (0.1, 0.3, 1.0, 3.0, 10.0):
        c0 = float(np.clip(y[order[-1]] if tau < 1 else np.min(y) * 0.5, lo_c, hi_c))
        a0 = float(y[order[0]] - c0)
        sol = levenberg_marquardt(resid, [a0, math.log(tau), c0], lower, upper)
        # a converged start always beats one that ran out of iterations
        if best is None or (sol.converged, -sol.cost) > (best.converged, -best.cost):
            best = sol
    if not best.converged:
        raise FitError(f"exponential fit did not converge in {best.iterations} iterations")
    a, logT, c = best.x
    T = tau_unit * math.exp(logT)
    # refer the amplitude back to t = 0
    amp = a * math.exp(t0 / T)
    cov = _covariance(best.jac, best.cost, best.n_resid, absolute)
    se = np.sqrt(np.abs(np.diag(cov)))
    se_T = T * se[1]
    flags = []
    if T > 1e3 * span or abs(a) <= 1e-9 * scale:
        flags.append("non_decaying")
        T = math.inf
    res = _result(names, (amp, T, c), (se[0] * math.exp(t0 / T) if math.isfinite(T) else math.inf, se_T, se[2]),
                  best, flags)
    if "non_decaying" in flags and "T" not in res.unidentifiable:
        res.unidentifiable = res.unidentifiable + ("T",)
    return res


# ----------------------------------------------------------------------------
# Ramsey fringes


def ramsey_model(t, amplitude, T2, detuning, phase, offset):
    t = np.asarray(t, dtype=float)
    return offset + amplitude * np.exp(-t / T2) * np.cos(detuning * t + phase)


def _dominant_frequency(t, y):
    from scipy.signal import lombscargle

    span = np.ptp(t)
    dt = np.min(np.diff(np.sort(t)))
    w_max = math.pi / dt
    w = np.linspace(2 * math.pi / (8 * span), w_max, 4000)
    power = lombscargle(t, y - np.mean(y), w)
    return float(w[np.argmax(power)])


def fit_ramsey(t, p, sigma=None) -> FitResult:
    """Fit ``offset + amplitude exp(-t/T2) cos(detuning t + phase)``.

    ``detuning`` and ``amplitude`` are kept non-negative so the fit is
    unique; the phase is wrapped to (-pi, pi].
    """
    t = np.asarray(t, dtype=float)
    p = np.asarray(p, dtype=float)
    if t.size != p.size or t.size < 10:
        raise ValueError("need at least 10 (t, p) points")
    w, absolute = _weights(p, sigma)
    span = float(np.ptp(t))
    names = ("amplitude", "T2", "detuning", "phase", "offset")
    if np.ptp(p) <= 1e-9 * max(1.0, float(np.max(np.abs(p)))):
        return FitResult({"amplitude": 0.0, "T2": math.nan, "detuning": math.nan, "phase": math.nan,
                          "offset": float(np.mean(p))}, None, float(np.linalg.norm(w * (p - np.mean(p)))),
                         0, False, ("T2", "detuning", "phase"), ("zero_contrast",))

    def resid(x):
        amp, logT, det, ph, off = x
        return w * (ramsey_model(t, amp, span * np.exp(logT), det, ph, off) - p)

    w0 = _dominant_frequency(t, p)
    lower = np.array([0.0, math.log(1e-4), 0.0, -4 * math.pi, -np.inf])
    upper = np.array([np.inf, math.log(1e4), np.inf, 4 * math.pi, np.inf])
    best = None
    a0 = 0.5 * np.ptp(p)
    for det0 in (w0, 0.0):
        for tau in (0.2, 1.0, 5.0):
            for ph in (0.0, math.pi / 2, math.pi, -math.pi / 2):
                sol = levenberg_marquardt(resid, [a0, math.log(tau), det0, ph, float(np.mean(p))], lower, upper)
                if best is None or sol.cost < best.cost * (1 - 1e-12):
                    best = sol
    if not best.converged:
        raise FitError("Ramsey fit did not converge")
    amp, logT, det, ph, off = best.x
    T2 = span * math.exp(logT)
    cov = _covariance(best.jac, best.cost, best.n_resid, absolute)
    se = np.sqrt(np.abs(np.diag(cov)))
    ph = math.remainder(ph, 2 * math.pi)
    flags = []
    dt_max = float(np.max(np.diff(np.sort(t))))
    if det > 0 and dt_max > math.pi / det:
        flags.append("aliased")
    res = _result(names, (amp, T2, det, ph, off), (se[0], T2 * se[1], se[2], se[3], se[4]), best, flags)
    if amp <= 1e-6 * max(1.0, abs(off)):
        res.flags = res.flags + ("zero_contrast",)
        if "T2" not in res.unidentifiable:
            res.unidentifiable = res.unidentifiable + ("T2",)
    return res


# ----------------------------------------------------------------------------
# joint rate fit


@dataclass
class DecayDataset:
    """Population decays after preparing |1> and after preparing |2>.

    ``series[i]`` is an array of rows ``(t, p0, p1, p2)``; ``sigma[i]``
    (optional) has the per-point uncertainty with the same shape as the
    population columns, or one value per row.
    """

    series: dict[int, np.ndarray]
    sigma: dict[int, np.ndarray] | None = None

    def __post_init__(self):
        self.series = {int(k): np.asarray(v, dtype=float) for k, v in self.series.items()}
        if set(self.series) != {1, 2}:
            raise ValueError("need decay series for initial states 1 and 2")
        for k, s in self.series.items():
            if s.ndim != 2 or s.shape[1] != 4:
                raise ValueError(f"series {k} must have columns (t, p0, p1, p2)")
            pops = s[:, 1:]
            if np.any(pops < 0) or np.any(pops > 1):
                raise ValueError(f"series {k}: populations must lie in [0, 1]")
            tot = pops.sum(axis=1)
            if np.any(tot < 0.9) or np.any(tot > 1.1):
                raise ValueError(f"series {k}: population sums must lie in [0.9, 1.1]")
        if self.sigma is not None:
            self.sigma = {int(k): np.asarray(v, dtype=float) for k, v in self.sigma.items()}


RATE_NAMES = ("g10", "g12", "g20", "g21")


def _population_model(g, times, init):
    gen = RateMatrix(*np.maximum(g, 0.0)).generator()
    props = expm(times[:, None, None] * gen[None, :, :])
    return props[:, :, init]


def _rate_residual_fn(data: DecayDataset, parameterization: str):
    blocks = []
    for init in (1, 2):
        s = data.series[init]
        if data.sigma is not None and init in data.sigma:
            sig = np.broadcast_to(np.asarray(data.sigma[init], dtype=float).reshape(len(s), -1), (len(s), 3))
            wgt = 1.0 / sig
        else:
            wgt = np.ones((len(s), 3))
        blocks.append((init, s[:, 0], s[:, 1:], wgt))

    def to_rates(x):
        return np.exp(x) if parameterization == "log" else x

    def resid(x):
        g = to_rates(x)
        out = [((_population_model(g, t, init) - pops) * wgt).ravel() for init, t, pops, wgt in blocks]
        return np.concatenate(out)

    return resid, to_rates


def fit_rates(data: DecayDataset, initial_guess: RateMatrix, parameterization: str = "log",
              starts: int = 5, seed: int = 0, threads: int = 1) -> FitResult:
    """Joint fit of (g10, g12, g20, g21) to both decay series.

    ``parameterization="log"`` keeps rates positive by fitting their
    logarithms; ``"linear"`` fits the rates directly with a lower bound of
    zero.  ``starts`` perturbed starting points are tried (the unperturbed
    guess first); the lowest residual wins, ties going to the smallest
    parameter norm.
    """
    for k, s in data.series.items():
        if len(s) < 8:
            raise ValueError(f"series {k} has {len(s)} points; need at least 8")
    if parameterization not in ("log", "linear"):
        raise ValueError("parameterization must be 'log' or 'linear'")
    resid, to_rates = _rate_residual_fn(data, parameterization)
    g0 = np.array(initial_guess.as_tuple(), dtype=float)
    scale = max(float(np.max(g0)), 1.0)
    floor = 1e-9 * scale
    stream = _rng.RandomStream(seed, 0, _rng.TAG_JUMP, 7)
    starts_x = []
    for k in range(max(1, starts)):
        g = np.maximum(g0, floor)
        if k:
            g = g * np.exp(np.array([stream.normal() for _ in range(4)]) * 0.3)
        starts_x.append(np.log(g) if parameterization == "log" else g)
    if parameterization == "log":
        lower = np.full(4, math.log(floor))
        upper = np.full(4, math.log(1e6 * scale))
    else:
        lower = np.zeros(4)
        upper = np.full(4, 1e6 * scale)

    def run(x0):
        return levenberg_marquardt(resid, x0, lower, upper)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            sols = list(pool.map(run, starts_x))
    else:
        sols = [run(x) for x in starts_x]
    sols = [s for s in sols if s.converged] or sols
    best_cost = min(s.cost for s in sols)
    tied = [s for s in sols if s.cost <= best_cost * (1 + 1e-9) + 1e-300]
    best = min(tied, key=lambda s: float(np.linalg.norm(to_rates(s.x))))
    if not best.converged:
        raise FitError("rate fit did not converge")
    absolute = data.sigma is not None
    cov = _covariance(best.jac, best.cost, best.n_resid, absolute)
    se_x = np.sqrt(np.abs(np.diag(cov)))
    g = to_rates(best.x)
    se = g * se_x if parameterization == "log" else se_x
    flags = []
    # a rate this far below the largest one sits at zero to working precision
    negligible = 1e-6 * float(np.max(g))
    at_floor = [RATE_NAMES[k] for k in range(4) if best.x[k] <= lower[k] + 1e-12 or g[k] <= negligible]
    if at_floor:
        flags.append("at_lower_bound:" + ",".join(at_floor))
    res = _result(RATE_NAMES, g, se, best, flags)
    # a rate pinned to its bound carries no information either, and neither
    # does one the data cannot tell apart from zero
    null_like = [RATE_NAMES[k] for k in range(4) if g[k] < ZERO_RATE_SIGMAS * se[k]]
    extra = tuple(n for n in dict.fromkeys(at_floor + null_like) if n not in res.unidentifiable)
    res.unidentifiable = res.unidentifiable + extra
    return res


def rates_from_fit(res: FitResult) -> RateMatrix:
    return RateMatrix(*(res.parameters[k] for k in RATE_NAMES))


# ----------------------------------------------------------------------------
# measurement-induced dephasing


def fit_dephasing(points, fixed: ReadoutConfig, sigma=None) -> FitResult:
    """Fit residual dephasing and the bare resonator frequency.

    ``points`` rows are ``(n, omega_d, gamma_phi)``.  Everything in
    ``fixed`` except ``omega_bare``, ``photon_number`` and
    ``drive_frequency`` is held fixed.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3 or len(pts) < 6:
        raise ValueError("need at least 6 rows of (n, omega_d, gamma_phi)")
    if np.unique(pts[:, 0]).size < 2:
        raise ValueError("points must span at least two photon numbers")
    if np.unique(pts[:, 1]).size < 2:
        raise FitError("degenerate data: a single drive frequency cannot locate the bare resonator")
    n_vals, wd, gphi = pts.T
    w, absolute = _weights(gphi, sigma)
    kappa = fixed.kappa
    w_ref = float(np.mean(wd))

    def gamma_m(w_bare):
        out = np.empty(len(pts))
        for k in range(len(pts)):
            c = fixed.replace(photon_number=n_vals[k], drive_frequency=wd[k], omega_bare=w_bare)
            out[k] = dephasing_rate(c)
        return out

    g_scale = max(float(np.max(np.abs(gphi))), 1e-300)

    def resid(x):
        g_res, off = x
        return w * (gamma_m(w_ref + off * kappa) + g_res * g_scale - gphi)

    # coarse scan for the bare frequency, residual dephasing solved in closed form
    best_x, best_cost = None, np.inf
    for off in np.concatenate([-np.geomspace(50, 0.01, 60), [0.0], np.geomspace(0.01, 50, 60)]):
        gm = gamma_m(w_ref + off * kappa)
        gr = max(0.0, float(np.sum(w ** 2 * (gphi - gm)) / np.sum(w ** 2)))
        c = float(np.sum((w * (gm + gr - gphi)) ** 2))
        if c < best_cost:
            best_x, best_cost = np.array([gr / g_scale, off]), c
    sol = levenberg_marquardt(resid, best_x, [0.0, -1e4], [np.inf, 1e4])
    if not sol.converged:
        raise FitError("dephasing fit did not converge")
    cov = _covariance(sol.jac, sol.cost, sol.n_resid, absolute)
    se = np.sqrt(np.abs(np.diag(cov)))
    g_res = sol.x[0] * g_scale
    w_bare = w_ref + sol.x[1] * kappa
    return _result(("gamma_phi_residual", "omega_bare"), (g_res, w_bare),
                   (se[0] * g_scale, se[1] * kappa), sol)
