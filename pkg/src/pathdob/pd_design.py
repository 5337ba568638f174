"""Digital PD controller and gain-plane feasibility scan.

A ``(kd, kp)`` pair is feasible when the nominal discrete loop is stable,
its phase margin lies in the closed interval ``[min_deg, max_deg]`` and
the mixed-sensitivity peak ``sup |W_s S| + |W_T T|`` stays below one.
The weights are evaluated at continuous frequency ``j w`` while the loop
is evaluated on ``exp(j w Ts)``.
"""

from __future__ import annotations

import cmath
import csv
import io
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.optimize import brentq

from .lti import TransferFunction, poly_add, poly_mul, poly_roots

PM_SWEEP_PER_DECADE = 400
PM_BISECT_TOL = 1e-10
MIXED_GRID_POINTS = 4000
MIXED_W_MIN = 1e-2

DERIVATIVE_FORMS = ("backward", "forward", "trapezoidal")


class NoCrossoverError(ValueError):
    pass


class UnstableLoopError(ValueError):
    pass


@dataclass(frozen=True)
class PDGains:
    kd: float
    kp: float

    def __post_init__(self):
        if not (np.isfinite(self.kd) and np.isfinite(self.kp)):
            raise ValueError("gains must be finite")


DESIGN_POINT = PDGains(kd=0.07, kp=0.2)


@dataclass(frozen=True)
class PhaseMarginSpec:
    min_deg: float = 20.0
    max_deg: float = 80.0

    def __post_init__(self):
        if not 0 < self.min_deg < self.max_deg < 180:
            raise ValueError("need 0 < min_deg < max_deg < 180")

    def contains(self, pm: float) -> bool:
        return self.min_deg <= pm <= self.max_deg


@dataclass(frozen=True)
class WeightSpec:
    ls: float = 0.5
    hs: float = 4.0
    ws: float = 5.0
    lT: float = 0.2
    hT: float = 1.8
    wT: float = 120.0

    def __post_init__(self):
        if not (0 < self.ls < 1 < self.hs and 0 < self.lT < 1 < self.hT):
            raise ValueError("weight bounds must straddle unity")
        if not (self.ws > 0 and self.wT > 0):
            raise ValueError("weight corner frequencies must be positive")


def pd_tf(g: PDGains, ts: float, form: str = "backward") -> TransferFunction:
    """Discrete PD ``kp + kd * D(z)``.

    ``backward``    D = (z - 1) / (ts z)         (default, causal, pole at 0)
    ``forward``     D = (z - 1) / ts             (improper; analysis only)
    ``trapezoidal`` D = 2 (z - 1) / (ts (z + 1)) (pole at -1)
    """
    if not ts > 0:
        raise ValueError("sample time must be positive")
    kp, kd = g.kp, g.kd
    if form == "backward":
        return TransferFunction([kp + kd / ts, -kd / ts], [1.0, 0.0], ts)
    if form == "forward":
        return TransferFunction([kd / ts, kp - kd / ts], [1.0], ts)
    if form == "trapezoidal":
        c = 2.0 * kd / ts
        return TransferFunction([kp + c, kp - c], [1.0, 1.0], ts)
    raise ValueError(f"unknown derivative form {form!r}")


def weight_s(w: WeightSpec = WeightSpec()) -> TransferFunction:
    """Sensitivity weight with |W_s(0)| = 1/ls and |W_s(inf)| = 1/hs."""
    return TransferFunction([1.0, w.ws], [w.hs, w.ws * w.ls])


def weight_t(w: WeightSpec = WeightSpec()) -> TransferFunction:
    """Complementary-sensitivity weight with |W_T(0)| = lT and |W_T(inf)| = hT."""
    return TransferFunction([w.hT, w.wT * w.lT], [1.0, w.wT])


def closed_loop_poles(c: TransferFunction, g: TransferFunction) -> np.ndarray:
    return poly_roots(poly_add(np.convolve(c.den, g.den), np.convolve(c.num, g.num)))


def is_loop_stable(c: TransferFunction, g: TransferFunction) -> bool:
    return bool(np.all(np.abs(closed_loop_poles(c, g)) < 1.0))


# ---------------------------------------------------------------------------
# phase margin


def _logmag(L: TransferFunction, w):
    return np.log(np.abs(L.freq_response(w)))


@lru_cache(maxsize=8)
def _sweep_grid(ts: float, w_min: float):
    w_max = np.pi / ts
    n = int(np.ceil(np.log10(w_max / w_min) * PM_SWEEP_PER_DECADE)) + 1
    w = np.logspace(np.log10(w_min), np.log10(w_max), n)[:-1]
    z = np.exp(1j * w * ts)
    w.flags.writeable = False
    z.flags.writeable = False
    return w, z


def _horner(p, x):
    acc = 0j
    for c in p:
        acc = acc * x + c
    return acc


def gain_crossovers(L: TransferFunction, w_min: float = 1e-3) -> np.ndarray:
    """All gain-crossover frequencies of a discrete loop on [0, pi/ts)."""
    if not L.is_discrete:
        raise ValueError("phase margin is evaluated on discrete loops")
    w, z = _sweep_grid(L.ts, w_min)
    with np.errstate(divide="ignore"):
        lm = np.log(np.abs(np.polyval(L.num, z) / np.polyval(L.den, z)))
    if np.all(np.abs(lm) < 1e-9):
        raise NoCrossoverError("no gain crossover: |L| = 1 everywhere (no isolated crossover)")
    out = []
    try:
        lm0 = _logmag(L, 0.0)
    except ZeroDivisionError:
        lm0 = None
    if lm0 is not None and abs(lm0) < PM_BISECT_TOL:
        out.append(0.0)
    num = [float(v) for v in L.num]
    den = [float(v) for v in L.den]
    ts = L.ts

    def f(wk):
        z = cmath.exp(1j * wk * ts)
        return math.log(abs(_horner(num, z) / _horner(den, z)))

    idx = np.flatnonzero(np.sign(lm[:-1]) * np.sign(lm[1:]) < 0)
    for i in idx:
        # Brent's method keeps the bisection bracket and converges superlinearly.
        wc = brentq(f, w[i], w[i + 1], xtol=1e-14, rtol=4 * np.finfo(float).eps)
        out.append(wc)
    if not out:
        raise NoCrossoverError("no gain crossover")
    return np.array(out)


def phase_margins(L: TransferFunction) -> list[tuple[float, float]]:
    """``(omega_c, pm_deg)`` for every crossover; pm wrapped to (-180, 180]."""
    res = []
    for wc in gain_crossovers(L):
        pm = 180.0 + np.degrees(np.angle(L.freq_response(wc)))
        if pm > 180.0:
            pm -= 360.0
        res.append((float(wc), float(pm)))
    return res


def phase_margin(L: TransferFunction) -> float:
    """Smallest phase margin over all gain crossovers [deg]."""
    return min(pm for _, pm in phase_margins(L))


# ---------------------------------------------------------------------------
# mixed sensitivity


def mixed_grid(ts: float, n: int = MIXED_GRID_POINTS) -> np.ndarray:
    return np.logspace(np.log10(MIXED_W_MIN), np.log10(np.pi / ts * 0.999), n)


def sensitivity_curves(c, gn_z, w: WeightSpec, omega):
    """``(|W_s S|, |W_T T|, S, T)`` on ``omega``."""
    L = c.freq_response(omega) * gn_z.freq_response(omega)
    S = 1.0 / (1.0 + L)
    T = L / (1.0 + L)
    ws = np.abs(weight_s(w).freq_response(omega))
    wt = np.abs(weight_t(w).freq_response(omega))
    return ws * np.abs(S), wt * np.abs(T), S, T


def _loop(c: TransferFunction, g: TransferFunction) -> TransferFunction:
    # Plain product; no cancellation needed for frequency evaluation.
    return TransferFunction(np.convolve(c.num, g.num), np.convolve(c.den, g.den), g.ts)


def mixed_sens_sup(g: PDGains, gn_z: TransferFunction, w: WeightSpec = WeightSpec(),
                   ts: float | None = None, form: str = "backward") -> float:
    """``sup_w |W_s S| + |W_T T|`` for the PD loop around the nominal plant."""
    ts = ts or gn_z.ts
    c = pd_tf(g, ts, form)
    if not is_loop_stable(c, gn_z):
        raise UnstableLoopError("unstable nominal loop")
    omega = mixed_grid(ts)
    return _mixed_peak(c, gn_z.freq_response(omega), omega, w)


def _unit_circle(omega, ts):
    if len(omega) == MIXED_GRID_POINTS:
        cached = _mixed_z(ts)
        if np.array_equal(cached[0], omega):
            return cached[1]
    return np.exp(1j * np.asarray(omega) * ts)


@lru_cache(maxsize=8)
def _mixed_z(ts: float):
    w = mixed_grid(ts)
    return w, np.exp(1j * w * ts)


def _mixed_peak(c, gz, omega, w, ws=None, wt=None) -> float:
    if ws is None:
        ws = np.abs(weight_s(w).freq_response(omega))
        wt = np.abs(weight_t(w).freq_response(omega))
    z = _unit_circle(omega, c.ts)
    L = np.polyval(c.num, z) / np.polyval(c.den, z) * gz
    S = 1.0 / (1.0 + L)
    return float(np.max(ws * np.abs(S) + wt * np.abs(L * S)))


# ---------------------------------------------------------------------------
# gain-plane scan


@dataclass(frozen=True)
class PointResult:
    kd: float
    kp: float
    stable: bool
    pm_deg: float
    mixed_sens: float
    feasible: bool


def evaluate_point(g: PDGains, gn_z: TransferFunction, pm_spec=PhaseMarginSpec(),
                   w: WeightSpec = WeightSpec(), form: str = "backward",
                   _cache: dict | None = None) -> PointResult:
    ts = gn_z.ts
    c = pd_tf(g, ts, form)
    stable = is_loop_stable(c, gn_z)
    pm = np.nan
    ms = np.nan
    if stable:
        try:
            pm = phase_margin(_loop(c, gn_z))
        except NoCrossoverError:
            pm = np.nan
        if _cache is None:
            omega = mixed_grid(ts)
            ms = _mixed_peak(c, gn_z.freq_response(omega), omega, w)
        else:
            ms = _mixed_peak(c, _cache["gz"], _cache["omega"], w, _cache["ws"], _cache["wt"])
    feasible = bool(stable and np.isfinite(pm) and pm_spec.contains(pm) and ms < 1.0)
    return PointResult(g.kd, g.kp, bool(stable), float(pm), float(ms), feasible)


@dataclass
class RegionResult:
    kd: np.ndarray
    kp: np.ndarray
    points: list  # row-major over (kd, kp)

    @property
    def mask(self) -> np.ndarray:
        return np.array([p.feasible for p in self.points]).reshape(len(self.kd), len(self.kp))

    def to_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["kd", "kp", "stable", "pm_deg", "mixed_sens", "feasible"])
        for p in self.points:
            wr.writerow([f"{p.kd:.6g}", f"{p.kp:.6g}", int(p.stable),
                         f"{p.pm_deg:.6g}", f"{p.mixed_sens:.6g}", int(p.feasible)])
        return buf.getvalue()


def feasible_region(gn_z: TransferFunction, kd_range=(0.0, 0.3), kp_range=(0.0, 1.0),
                    grid=(121, 121), pm_spec=PhaseMarginSpec(), w: WeightSpec = WeightSpec(),
                    form: str = "backward") -> RegionResult:
    """Grid scan of the ``(kd, kp)`` plane (row index kd, column index kp)."""
    n, m = grid
    if n < 1 or m < 1:
        raise ValueError("grid dimensions must be positive")
    kd = np.linspace(*kd_range, n)
    kp = np.linspace(*kp_range, m)
    omega = mixed_grid(gn_z.ts)
    cache = {
        "omega": omega,
        "gz": gn_z.freq_response(omega),
        "ws": np.abs(weight_s(w).freq_response(omega)),
        "wt": np.abs(weight_t(w).freq_response(omega)),
    }
    pts = [evaluate_point(PDGains(float(a), float(b)), gn_z, pm_spec, w, form, cache)
           for a in kd for b in kp]
    return RegionResult(kd, kp, pts)
