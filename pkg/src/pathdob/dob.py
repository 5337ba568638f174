"""Discrete disturbance-observer (DOB) loop around a PD controller.

Control law, per sample::

    u1 = C (r - y)
    u  = u1 - [Q / Gn] y + Q u

``Q`` must be strictly proper: its output at sample ``k`` then depends on
``u`` only up to ``k - 1``, so the loop is evaluated without an algebraic
loop by reading the Q filter before feeding it the new actuation.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .lti import (
    DomainMismatchError,
    FilterState,
    ImproperError,
    TransferFunction,
    hp,
    hp_add,
    hp_lfilter,
    hp_mul,
    hp_sub,
    poly_add,
    poly_mul,
    poly_sub,
    zoh_discretize,
)

Q_DC_TOL = 1e-6

Q_DOB_S = TransferFunction([1.0], [0.25, 1.0, 1.0])


def q_dob_default(ts: float = 0.01) -> TransferFunction:
    """ZOH equivalent of the unity low-pass ``1 / (0.25 s^2 + s + 1)``."""
    return zoh_discretize(Q_DOB_S, ts).normalized()


def q_inverse_product(q: TransferFunction, gn: TransferFunction) -> TransferFunction:
    """``Q / Gn`` without cancellation; the double integrator of Gn stays explicit."""
    if q.ts != gn.ts:
        raise DomainMismatchError("Q and Gn sample times differ")
    return TransferFunction(poly_mul(q.num, gn.den), poly_mul(q.den, gn.num), q.ts)


def check_q_filter(q: TransferFunction, gn: TransferFunction) -> None:
    """Reject Q filters that cannot run in an observer loop around ``gn``.

    An identically zero Q (observer disabled) is accepted.
    """
    if not q.is_discrete or q.ts != gn.ts:
        raise DomainMismatchError("Q and Gn must share the sample time")
    if not q.num.any():
        return
    if not q.is_strictly_proper:
        raise ImproperError("Q must be strictly proper (algebraic loop)")
    if abs(q.dcgain() - 1.0) > Q_DC_TOL:
        raise ValueError(f"Q(1) = {q.dcgain():.9g}, expected 1")
    if not q_inverse_product(q, gn).is_proper:
        raise ImproperError("Q/Gn is improper")


@dataclass(frozen=True)
class DobConfig:
    c: TransferFunction
    gn: TransferFunction
    q: TransferFunction

    def __post_init__(self):
        ts = self.gn.ts
        if ts is None or self.c.ts != ts:
            raise DomainMismatchError("C, Gn and Q must be discrete with one sample time")
        if not self.c.is_proper:
            raise ImproperError("controller must be proper to run")
        check_q_filter(self.q, self.gn)

    @property
    def ts(self) -> float:
        return self.gn.ts

    @property
    def q_gn_inv(self) -> TransferFunction:
        return q_inverse_product(self.q, self.gn)


@dataclass(eq=False)
class DobLoop:
    """Per-sample DOB controller; ``dhat`` is the input-equivalent disturbance estimate."""

    cfg: DobConfig
    u: float = 0.0
    u1: float = 0.0
    dhat: float = 0.0
    _c: FilterState = field(init=False, repr=False)
    _qgi: FilterState = field(init=False, repr=False)
    _q: FilterState = field(init=False, repr=False)

    def __post_init__(self):
        self._c = FilterState(self.cfg.c)
        self._qgi = FilterState(self.cfg.q_gn_inv)
        self._q = FilterState(self.cfg.q)

    def reset(self, y0: float = 0.0, r0: float = 0.0) -> None:
        """Zero all filters, or settle the measurement paths on a constant ``y0``."""
        self._c.reset(r0 - y0)
        self._qgi.reset(y0)
        self._q.reset()
        self.u = self.u1 = self.dhat = 0.0

    def step(self, r: float, y: float) -> float:
        qu = self._q.output()
        self.u1 = self._c.step(r - y)
        qy = self._qgi.step(y)
        self.dhat = qy - qu
        u = self.u1 - self.dhat
        self._q.step(u)
        self.u = u
        return u


def dob_closed_loop_tfs(c: TransferFunction, gn: TransferFunction, q: TransferFunction,
                        g: TransferFunction) -> tuple[TransferFunction, TransferFunction]:
    """``(T_ry, T_dy)`` of the DOB loop around truth plant ``g``; ``d`` adds to ``y``.

    ``T_ry = C Gn G / (Gn (1 - Q) + G (C Gn + Q))``
    ``T_dy = Gn (1 - Q) / (Gn (1 - Q) + G (C Gn + Q))``

    Polynomials are assembled over the common denominator ``cd gd qd pd``
    and returned without cancellation.
    """
    ts = gn.ts
    for b in (c, q, g):
        if b.ts != ts:
            raise DomainMismatchError("all blocks must share the sample time")
    cn, cd = c.num, c.den
    gnn, gnd = gn.num, gn.den
    qn, qd = q.num, q.den
    pn, pd = g.num, g.den
    a = poly_mul(gnn, poly_sub(qd, qn), cd, pd)
    den = poly_add(a, poly_mul(pn, poly_add(poly_mul(cn, gnn, qd), poly_mul(qn, cd, gnd))))
    return TransferFunction(poly_mul(cn, gnn, pn, qd), den, ts), TransferFunction(a, den, ts)


def _runtime_blocks(*tfs):
    # Exactly the coefficients FilterState executes.
    out = []
    for t in tfs:
        t = t.normalized()
        out.append((hp(t.num), hp(t.den)))
    return out


def dob_reference_response(cfg: DobConfig, g: TransferFunction, r, d=None) -> np.ndarray:
    """Closed-form response of the runtime block diagram, in extended precision.

    With ``P`` the realized ``Q / Gn`` block::

        y ((1 - Q) + G (C + P)) = G C r + (1 - Q) d
    """
    r = np.asarray(r, float)
    d = np.zeros_like(r) if d is None else np.asarray(d, float)
    (cn, cd), (pn, pd), (qn, qd), (gn, gd) = _runtime_blocks(cfg.c, cfg.q_gn_inv, cfg.q, g)
    d_part = hp_mul(hp_sub(qd, qn), gd, cd, pd)
    den = hp_add(d_part, hp_mul(gn, hp_add(hp_mul(cn, pd), hp_mul(pn, cd)), qd))
    r_part = hp_mul(gn, cn, pd, qd)
    return hp_lfilter(r_part, den, r) + hp_lfilter(d_part, den, d)


def simulate_dob(cfg: DobConfig, g: TransferFunction, r, d=None) -> dict:
    """Run the DOB loop around an LTI truth plant; ``d`` adds to the measured output."""
    r = np.asarray(r, float)
    d = np.zeros_like(r) if d is None else np.asarray(d, float)
    if g.ts != cfg.ts:
        raise DomainMismatchError("truth plant sample time differs")
    if not g.is_strictly_proper:
        raise ImproperError("truth plant must be strictly proper")
    plant = FilterState(g)
    loop = DobLoop(cfg)
    n = len(r)
    out = {k: np.zeros(n) for k in ("y", "u", "u1", "dhat")}
    for k in range(n):
        y = plant.output() + d[k]
        u = loop.step(r[k], y)
        plant.step(u)
        out["y"][k] = y
        out["u"][k] = u
        out["u1"][k] = loop.u1
        out["dhat"][k] = loop.dhat
    out["t"] = np.arange(n) * cfg.ts
    out["r"] = r
    return out


def dob_sim_vs_tf_oracle(cfg: DobConfig, g: TransferFunction, r, d=None) -> float:
    """Max |y_loop - (T_ry r + T_dy d)| over the input horizon."""
    r = np.asarray(r, float)
    d = np.zeros_like(r) if d is None else np.asarray(d, float)
    sim = simulate_dob(cfg, g, r, d)
    return float(np.max(np.abs(sim["y"] - dob_reference_response(cfg, g, r, d))))


def trace_csv(sim: dict, fmt: str = "%.10g") -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["t", "r", "y", "u", "u1", "dhat_channel"])
    for row in zip(sim["t"], sim["r"], sim["y"], sim["u"], sim["u1"], sim["dhat"]):
        wr.writerow([fmt % v for v in row])
    return buf.getvalue()
