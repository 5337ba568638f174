"""Communication disturbance observer (CDOB) for a loop with a pure delay.

The delayed measurement ``y_d = Gn z^-N u`` is treated as the undelayed
output perturbed by the input-side network disturbance ``u - z^-N u``::

    dhat   = Q u - [Q / Gn] y_d            (= Q (u - z^-N u) when the model is exact)
    y_comp = y_d + Gn dhat
    u      = C (r - y_comp)

With ``Q = 1`` the feedback signal is ``Gn u``, so the closed-loop
denominator has no delayed terms. The delay is lumped at the sensor.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import lfilter

from .dob import _runtime_blocks, check_q_filter, q_inverse_product
from .lti import (
    DelayLine,
    DomainMismatchError,
    FilterState,
    ImproperError,
    TransferFunction,
    VariableDelayLine,
    hp_add,
    hp_lfilter,
    hp_mul,
    hp_sub,
    poly_add,
    poly_mul,
    poly_sub,
    zoh_discretize,
)

Q_CDOB_S = TransferFunction([1.0], [0.0004, 0.04, 1.0])


def q_cdob_default(ts: float = 0.01) -> TransferFunction:
    """ZOH equivalent of ``1 / (0.0004 s^2 + 0.04 s + 1)`` (double pole at -50 rad/s)."""
    return zoh_discretize(Q_CDOB_S, ts).normalized()


def network_disturbance(u, n: int) -> np.ndarray:
    """``u_k - u_{k-N}`` with ``u`` at rest before the first sample."""
    if n < 0:
        raise ValueError("negative delay")
    u = np.asarray(u, float)
    shifted = np.concatenate([np.zeros(n), u])[: len(u)]
    return u - shifted


@dataclass(frozen=True)
class CdobConfig:
    c: TransferFunction
    gn: TransferFunction
    q: TransferFunction
    n: int = 0

    def __post_init__(self):
        ts = self.gn.ts
        if ts is None or self.c.ts != ts:
            raise DomainMismatchError("C, Gn and Q must be discrete with one sample time")
        if int(self.n) != self.n or self.n < 0:
            raise ValueError("delay must be a non-negative integer")
        if not self.c.is_proper:
            raise ImproperError("controller must be proper to run")
        if not self.gn.is_strictly_proper:
            raise ImproperError("Gn must be strictly proper for the reconstruction path")
        check_q_filter(self.q, self.gn)

    @property
    def ts(self) -> float:
        return self.gn.ts

    @property
    def q_gn_inv(self) -> TransferFunction:
        return q_inverse_product(self.q, self.gn)


@dataclass(eq=False)
class CdobLoop:
    """Per-sample CDOB controller fed with the delayed measurement."""

    cfg: CdobConfig
    u: float = 0.0
    dhat: float = 0.0
    y_comp: float = 0.0
    _c: FilterState = field(init=False, repr=False)
    _qgi: FilterState = field(init=False, repr=False)
    _q: FilterState = field(init=False, repr=False)
    _gn: FilterState = field(init=False, repr=False)

    def __post_init__(self):
        self._c = FilterState(self.cfg.c)
        self._qgi = FilterState(self.cfg.q_gn_inv)
        self._q = FilterState(self.cfg.q)
        self._gn = FilterState(self.cfg.gn)

    def reset(self, y0: float = 0.0, r0: float = 0.0) -> None:
        """Zero all filters, or settle the measurement paths on a constant ``y0``."""
        self._c.reset(r0 - y0)
        self._qgi.reset(y0)
        self._q.reset()
        self._gn.reset()
        self.u = self.dhat = self.y_comp = 0.0

    def step(self, r: float, y_delayed: float) -> float:
        qu = self._q.output()
        self.dhat = qu - self._qgi.step(y_delayed)
        self.y_comp = y_delayed + self._gn.step(self.dhat)
        u = self._c.step(r - self.y_comp)
        self._q.step(u)
        self.u = u
        return u


def _shift(p, n):
    return np.concatenate([np.asarray(p, float), np.zeros(n)])


def _hp_shift(p, n):
    return list(p) + [0 * p[0]] * n


@dataclass(frozen=True)
class CdobClosedLoop:
    """Closed-loop maps of the CDOB loop, ``d`` adding to the delayed measurement.

    Multiplying through by ``cd gd qd z^N``::

        den = z^N (cd gd qd + cn gn qn) + cn gn (qd - qn)

    ``undelayed`` and ``delayed`` are the two parts of ``den``; the second is
    identically zero when ``Q = 1``.
    """

    t_ry: TransferFunction
    t_dy: TransferFunction
    undelayed: np.ndarray
    delayed: np.ndarray


def cdob_closed_loop_tfs(c: TransferFunction, gn: TransferFunction, q: TransferFunction,
                         n: int) -> CdobClosedLoop:
    """``T_ry = C Gn z^-N / (1 + C Gn Q + C Gn z^-N (1 - Q))``, ``T_dy = (1 + C Gn Q) / (...)``."""
    ts = gn.ts
    for b in (c, q):
        if b.ts != ts:
            raise DomainMismatchError("all blocks must share the sample time")
    if n < 0:
        raise ValueError("negative delay")
    cn, cd = c.num, c.den
    gnn, gnd = gn.num, gn.den
    qn, qd = q.num, q.den
    und = poly_add(poly_mul(cd, gnd, qd), poly_mul(cn, gnn, qn))
    dl = poly_mul(cn, gnn, poly_sub(qd, qn))
    den = poly_add(_shift(und, n), dl)
    return CdobClosedLoop(TransferFunction(poly_mul(cn, gnn, qd), den, ts),
                          TransferFunction(_shift(und, n), den, ts), und, dl)


def cdob_reference_response(cfg: CdobConfig, r, d=None,
                            plant: TransferFunction | None = None) -> np.ndarray:
    """Closed-form response of the runtime block diagram, in extended precision.

    With ``P`` the realized ``Q / Gn`` block and ``G`` the truth plant::

        y_d ((1 + C Gn Q) + z^-N G C (1 - Gn P)) = z^-N G C r + (1 + C Gn Q) d
    """
    r = np.asarray(r, float)
    d = np.zeros_like(r) if d is None else np.asarray(d, float)
    blocks = _runtime_blocks(cfg.c, cfg.gn, cfg.q, cfg.q_gn_inv, plant or cfg.gn)
    (cn, cd), (mn, md), (qn, qd), (pn, pd), (gn, gd) = blocks
    d_part = _hp_shift(hp_mul(hp_add(hp_mul(cd, md, qd), hp_mul(cn, mn, qn)), gd, pd), cfg.n)
    den = hp_add(d_part, hp_mul(gn, cn, hp_sub(hp_mul(md, pd), hp_mul(mn, pn)), qd))
    r_part = hp_mul(gn, cn, md, qd, pd)
    return hp_lfilter(r_part, den, r) + hp_lfilter(d_part, den, d)


def simulate_cdob(cfg: CdobConfig, r, d=None, plant: TransferFunction | None = None,
                  delays=None) -> dict:
    """Run the CDOB loop; the truth plant defaults to ``Gn`` followed by ``z^-N``.

    ``delays`` optionally gives a per-sample delay ``N(k) <= cfg.n``.
    ``d`` adds to the delayed measurement.
    """
    r = np.asarray(r, float)
    d = np.zeros_like(r) if d is None else np.asarray(d, float)
    g = plant or cfg.gn
    if g.ts != cfg.ts:
        raise DomainMismatchError("truth plant sample time differs")
    if not g.is_strictly_proper:
        raise ImproperError("truth plant must be strictly proper")
    pf = FilterState(g)
    loop = CdobLoop(cfg)
    if delays is None:
        line = DelayLine(cfg.n)
        delay = lambda k, v: line.step(v)  # noqa: E731
    else:
        vline = VariableDelayLine(cfg.n)
        delay = lambda k, v: vline.step(v, int(delays[k]))  # noqa: E731
    n = len(r)
    out = {k: np.zeros(n) for k in ("y", "y_delayed", "y_comp", "dhat", "u")}
    for k in range(n):
        y = pf.output()
        yd = delay(k, y) + d[k]
        u = loop.step(r[k], yd)
        pf.step(u)
        out["y"][k] = y
        out["y_delayed"][k] = yd
        out["y_comp"][k] = loop.y_comp
        out["dhat"][k] = loop.dhat
        out["u"][k] = u
    out["t"] = np.arange(n) * cfg.ts
    out["r"] = r
    return out


def cdob_sim_vs_tf_oracle(cfg: CdobConfig, r, d=None) -> float:
    """Max |y_delayed(loop) - (T_ry r + T_dy d)|."""
    sim = simulate_cdob(cfg, r, d)
    return float(np.max(np.abs(sim["y_delayed"] - cdob_reference_response(cfg, r, d))))


def nd_identity_check(cfg: CdobConfig, r) -> float:
    """Max |dhat - Q (u - z^-N u)| for the loop driven by reference ``r``.

    The right-hand side is computed independently with ``scipy.signal.lfilter``.
    """
    sim = simulate_cdob(cfg, r)
    q = cfg.q.normalized()
    # lfilter aligns b and a at z**0; pad the numerator to the denominator length.
    b = np.concatenate([np.zeros(len(q.den) - len(q.num)), q.num])
    expected = lfilter(b, q.den, network_disturbance(sim["u"], cfg.n))
    return float(np.max(np.abs(sim["dhat"] - expected)))


def trace_csv(sim: dict, fmt: str = "%.10g") -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["t", "r", "y_delayed", "y_comp", "dhat", "u"])
    for row in zip(sim["t"], sim["r"], sim["y_delayed"], sim["y_comp"], sim["dhat"], sim["u"]):
        wr.writerow([fmt % v for v in row])
    return buf.getvalue()
