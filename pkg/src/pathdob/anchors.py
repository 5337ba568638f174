"""Reference-coefficient checks run by ``pathdob verify``.

Each check takes a :class:`VerifyContext` and returns ``(passed, detail)``.
The printed discrete coefficients are 4-digit roundings, so comparisons are
relative per coefficient with a tolerance per filter.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .cdob import CdobConfig, cdob_closed_loop_tfs, nd_identity_check, q_cdob_default
from .dob import dob_closed_loop_tfs, q_dob_default
from .lti import TransferFunction, poly_add, poly_mul, tf_close, zoh_discretize
from .pd_design import PDGains, is_loop_stable, pd_tf
from .vehicle import NOMINAL_DEN, NOMINAL_NUM

PRINTED_GN_Z = ((0.04867, -0.07432, 0.02046, 0.005954),
                (1.0, -2.892, 2.784, -0.8927, 0.0005429))
PRINTED_Q_DOB_Z = ((0.0001974, 0.0001974), (1.0, -1.96, 0.9608))
PRINTED_Q_CDOB_Z = ((0.0902, 0.06461), (1.0, -1.213, 0.3679))

GN_COEF_TOL = 0.01
Q_DOB_COEF_TOL = 0.02
Q_CDOB_COEF_TOL = 0.005
DC_TOL = 1e-9
IDENTITY_TOL = 1e-10
ND_TOL = 1e-8


@dataclass(frozen=True)
class VerifyContext:
    gn_num: tuple = NOMINAL_NUM
    gn_den: tuple = NOMINAL_DEN
    kd: float = 0.07
    kp: float = 0.2
    ts: float = 0.01

    @property
    def gn_s(self) -> TransferFunction:
        return TransferFunction(self.gn_num, self.gn_den)

    @property
    def gn_z(self) -> TransferFunction:
        return zoh_discretize(self.gn_s, self.ts).normalized()

    @property
    def c(self) -> TransferFunction:
        return pd_tf(PDGains(self.kd, self.kp), self.ts)


def _floats(text: str) -> tuple:
    return tuple(float(v) for v in text.replace(",", " ").split())


OVERRIDES = {
    "gn_num": lambda ctx, v: replace(ctx, gn_num=_floats(v)),
    "gn_den": lambda ctx, v: replace(ctx, gn_den=_floats(v)),
    "gn_num_scale": lambda ctx, v: replace(ctx, gn_num=tuple(float(v) * c for c in ctx.gn_num)),
    "kd": lambda ctx, v: replace(ctx, kd=float(v)),
    "kp": lambda ctx, v: replace(ctx, kp=float(v)),
    "ts": lambda ctx, v: replace(ctx, ts=float(v)),
}


def apply_overrides(ctx: VerifyContext, pairs) -> VerifyContext:
    """Apply ``key=value`` strings in order; unknown keys raise ``KeyError``."""
    for item in pairs:
        if "=" not in item:
            raise ValueError(f"override {item!r} is not key=value")
        key, value = (s.strip() for s in item.split("=", 1))
        if key not in OVERRIDES:
            raise KeyError(key)
        ctx = OVERRIDES[key](ctx, value)
    return ctx


def coefficient_error(tf: TransferFunction, printed) -> float:
    """Largest relative deviation over numerator and denominator coefficients."""
    tf = tf.normalized()
    num, den = (np.asarray(p, float) for p in printed)
    if len(tf.num) != len(num) or len(tf.den) != len(den):
        return np.inf
    a = np.concatenate([tf.num, tf.den])
    b = np.concatenate([num, den])
    return float(np.max(np.abs(a - b) / np.abs(b)))


def _coef_check(tf, printed, tol):
    err = coefficient_error(tf, printed)
    return err <= tol, f"max relative coefficient error {err:.3e} (tol {tol:g})"


def check_gn_zoh(ctx):
    return _coef_check(ctx.gn_z, PRINTED_GN_Z, GN_COEF_TOL)


def check_q_dob(ctx):
    return _coef_check(q_dob_default(ctx.ts), PRINTED_Q_DOB_Z, Q_DOB_COEF_TOL)


def check_q_cdob(ctx):
    return _coef_check(q_cdob_default(ctx.ts), PRINTED_Q_CDOB_Z, Q_CDOB_COEF_TOL)


def check_q_dc(ctx):
    errs = [abs(q.dcgain() - 1.0) for q in (q_dob_default(ctx.ts), q_cdob_default(ctx.ts))]
    return max(errs) <= DC_TOL, f"|Q(1) - 1| = {errs[0]:.2e} (DOB), {errs[1]:.2e} (CDOB)"


def _plain_loop(c, g):
    return TransferFunction(poly_mul(c.num, g.num),
                            poly_add(poly_mul(c.den, g.den), poly_mul(c.num, g.num)), g.ts)


def check_dob_q1(ctx):
    c, gn = ctx.c, ctx.gn_z
    t_ry, t_dy = dob_closed_loop_tfs(c, gn, TransferFunction.gain(1.0, ctx.ts), gn)
    ok_ry = tf_close(t_ry, _plain_loop(c, gn), IDENTITY_TOL)
    ok_dy = not t_dy.num.any()
    return ok_ry and ok_dy, f"T_ry -> CGn/(1+CGn): {ok_ry}; T_dy == 0: {ok_dy}"


def check_dob_q0(ctx):
    c, gn = ctx.c, ctx.gn_z
    t_ry, _ = dob_closed_loop_tfs(c, gn, TransferFunction.gain(0.0, ctx.ts), gn)
    ok = tf_close(t_ry, _plain_loop(c, gn), IDENTITY_TOL)
    return ok, f"T_ry -> CG/(1+CG): {ok}"


def check_cdob_delay_free(ctx):
    n = round(1.0 / ctx.ts)
    cl = cdob_closed_loop_tfs(ctx.c, ctx.gn_z, TransferFunction.gain(1.0, ctx.ts), n)
    zero = not cl.delayed.any()
    same = tf_close(TransferFunction(cl.undelayed, [1.0], ctx.ts),
                    TransferFunction(_plain_loop(ctx.c, ctx.gn_z).den, [1.0], ctx.ts),
                    IDENTITY_TOL)
    return zero and same, f"N={n}: delayed part zero: {zero}; char. poly = 1 + CGn: {same}"


def check_nd_identity(ctx):
    cfg = CdobConfig(ctx.c, ctx.gn_z, q_cdob_default(ctx.ts), round(1.0 / ctx.ts))
    r = np.random.default_rng(0).standard_normal(500)
    dev = nd_identity_check(cfg, r)
    return dev < ND_TOL, f"max |dhat - Q(u - z^-N u)| = {dev:.2e} (tol {ND_TOL:g})"


def check_design_point(ctx):
    ok = is_loop_stable(ctx.c, ctx.gn_z)
    return ok, f"PD({ctx.kd:g}, {ctx.kp:g}) nominal loop stable: {ok}"


CHECKS = {
    "gn_zoh_coefficients": check_gn_zoh,
    "q_dob_coefficients": check_q_dob,
    "q_cdob_coefficients": check_q_cdob,
    "q_dc_gain": check_q_dc,
    "dob_limit_q1": check_dob_q1,
    "dob_limit_q0": check_dob_q0,
    "cdob_delay_free": check_cdob_delay_free,
    "cdob_network_identity": check_nd_identity,
    "design_point_stable": check_design_point,
}


def run_checks(ctx: VerifyContext = VerifyContext()) -> list[tuple[str, bool, str]]:
    out = []
    for name, fn in CHECKS.items():
        try:
            ok, detail = fn(ctx)
        except (ValueError, ZeroDivisionError, np.linalg.LinAlgError) as exc:
            ok, detail = False, f"error: {exc}"
        out.append((name, bool(ok), detail))
    return out

