"""Fixed-step path-following scenarios in the path-error frame.

The reference is always ``r = 0``: path curvature and crosswind act as
plant disturbances and the loop regulates the preview-point deviation
``y_s``. Two truth plants are available:

``vehicle``
    ZOH-discretized single-track error dynamics (curvature and wind inputs).
``nominal``
    The fixed design plant ``Gn(z)``; the initial offset ``y0`` is added to
    its output. It has no curvature or wind input.

A loop delay of ``N`` samples, when present, is lumped at the sensor for
every compensation type.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, fields, replace
from functools import lru_cache

import numpy as np

from .cdob import CdobConfig, CdobLoop, q_cdob_default
from .dob import DobConfig, DobLoop, q_dob_default
from .lti import DelayLine, FilterState, zoh_discretize
from .pd_design import DERIVATIVE_FORMS, DESIGN_POINT, PDGains, pd_tf
from .vehicle import (
    CORNERS,
    NOMINAL_CORNER,
    UncertaintyCorner,
    VehicleParams,
    corner_params,
    error_dynamics_ss,
    nominal_plant_z,
    parse_speed,
)

DIVERGENCE_LIMIT = 1e3  # m
ARC_STEP_MAX = 0.1  # m, curvature table resolution

COMPENSATIONS = ("none", "dob", "cdob")
PLANTS = ("vehicle", "nominal")


# ---------------------------------------------------------------------------
# path and wind


@lru_cache(maxsize=16)
def _arc_table(a: float, b: float, ds_max: float):
    n = int(math.ceil(2 * math.pi * a / ds_max))
    theta = np.linspace(0.0, 2 * math.pi, n + 1)
    speed = np.hypot(a * np.sin(theta), b * np.cos(theta))
    s = np.concatenate([[0.0], np.cumsum(0.5 * (speed[1:] + speed[:-1]) * np.diff(theta))])
    s.flags.writeable = False
    theta.flags.writeable = False
    return s, theta


@dataclass(frozen=True)
class EllipsePath:
    """Ellipse traversed from the vertex on the major axis; left turns are positive."""

    a: float = 500.0
    b: float = 300.0

    def __post_init__(self):
        if not (self.a >= self.b > 0):
            raise ValueError("ellipse needs a >= b > 0")

    @property
    def perimeter(self) -> float:
        return float(_arc_table(self.a, self.b, ARC_STEP_MAX)[0][-1])

    def curvature(self, s_arc):
        s_tab, th_tab = _arc_table(self.a, self.b, ARC_STEP_MAX)
        s = np.mod(np.asarray(s_arc, float), s_tab[-1])
        th = np.interp(s, s_tab, th_tab)
        a, b = self.a, self.b
        return a * b / (a**2 * np.sin(th) ** 2 + b**2 * np.cos(th) ** 2) ** 1.5


@dataclass(frozen=True)
class StraightPath:
    perimeter = math.inf

    def curvature(self, s_arc):
        return np.zeros_like(np.asarray(s_arc, float))


def ellipse_curvature(path: EllipsePath, s_arc) -> np.ndarray:
    if np.any(np.asarray(s_arc) < 0):
        raise ValueError("arc length must be non-negative")
    return path.curvature(s_arc)


def ramanujan_perimeter(a: float, b: float) -> float:
    h = ((a - b) / (a + b)) ** 2
    return math.pi * (a + b) * (1 + 3 * h / (10 + math.sqrt(4 - 3 * h)))


@dataclass(frozen=True)
class WindProfile:
    """Rectangular lateral force pulse, active on ``[on_time, off_time)``."""

    magnitude: float = 500.0
    on_time: float = 10.0
    off_time: float = 20.0

    def __post_init__(self):
        if not self.off_time > self.on_time >= 0:
            raise ValueError("wind needs off_time > on_time >= 0")

    def force(self, t):
        t = np.asarray(t, float)
        return np.where((t >= self.on_time) & (t < self.off_time), self.magnitude, 0.0)


NO_WIND = WindProfile(magnitude=0.0)


# ---------------------------------------------------------------------------
# scenario


@dataclass(frozen=True)
class Scenario:
    path: EllipsePath | StraightPath = EllipsePath()
    wind: WindProfile = WindProfile()
    params: VehicleParams = VehicleParams()
    corner: UncertaintyCorner | None = None
    plant: str = "vehicle"
    gains: PDGains = DESIGN_POINT
    form: str = "backward"
    compensation: str = "none"
    delay: int = 0
    duration: float | str = "lap"
    ts: float = 0.01
    y0: float = 1.0
    settle_skip: float = 0.0

    def __post_init__(self):
        if self.plant not in PLANTS:
            raise ValueError(f"plant must be one of {PLANTS}")
        if self.compensation not in COMPENSATIONS:
            raise ValueError(f"compensation must be one of {COMPENSATIONS}")
        if self.form not in DERIVATIVE_FORMS:
            raise ValueError(f"form must be one of {DERIVATIVE_FORMS}")
        if self.form == "forward":
            raise ValueError("forward-difference PD is improper and cannot run in a loop")
        if int(self.delay) != self.delay or self.delay < 0:
            raise ValueError("delay must be a non-negative integer number of samples")
        if not self.ts > 0:
            raise ValueError("ts must be positive")
        if self.settle_skip < 0:
            raise ValueError("settle_skip must be non-negative")
        if self.plant == "nominal":
            if not isinstance(self.path, StraightPath) or self.wind.magnitude != 0:
                raise ValueError("the nominal plant has no curvature or wind input; "
                                 "use a straight path and zero wind")
        self.n_samples  # validates duration

    @property
    def vehicle(self) -> VehicleParams:
        if self.corner is None:
            return self.params
        return corner_params(self.corner, self.params)

    @property
    def n_samples(self) -> int:
        if self.duration == "lap":
            if isinstance(self.path, StraightPath):
                raise ValueError("duration 'lap' needs a closed path")
            return int(round(self.path.perimeter / self.vehicle.V / self.ts))
        dur = float(self.duration)
        n = round(dur / self.ts)
        if n < 1 or abs(n * self.ts - dur) > 1e-9 * max(1.0, dur):
            raise ValueError("duration must be a positive integer multiple of ts")
        return int(n)

    @property
    def label(self) -> str:
        c = self.corner.title if self.corner else "custom"
        return f"{self.plant} {c} {self.compensation} N={self.delay}"


@dataclass
class SimulationTrace:
    t: np.ndarray
    rho_ref: np.ndarray
    f_wind: np.ndarray
    y: np.ndarray
    y_s: np.ndarray
    y_meas: np.ndarray
    u: np.ndarray
    internals: dict = field(default_factory=dict)
    verdict: str = "stable"
    settle_skip: float = 0.0
    compensation: str = "none"

    @property
    def r(self) -> np.ndarray:
        return np.zeros_like(self.t)

    def __len__(self):
        return len(self.t)

    @property
    def rms(self) -> float:
        return rms(self)

    @property
    def max_abs_y(self) -> float:
        return float(np.max(np.abs(self.y)))

    def columns(self) -> list[tuple[str, np.ndarray]]:
        cols = [("t", self.t), ("rho_ref", self.rho_ref), ("f_wind", self.f_wind),
                ("r", self.r), ("y", self.y), ("y_s", self.y_s), ("u", self.u)]
        if self.compensation == "cdob":
            cols.append(("y_delayed", self.y_meas))
            cols += [("y_comp", self.internals["y_comp"]), ("dhat", self.internals["dhat"])]
        else:
            cols.append(("y_meas", self.y_meas))
        if self.compensation == "dob":
            cols += [("u1", self.internals["u1"]), ("dhat_channel", self.internals["dhat"])]
        return cols

    def to_csv(self, fmt: str = "%.10g") -> str:
        cols = self.columns()
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow([c for c, _ in cols])
        data = np.column_stack([v for _, v in cols])
        for row in data:
            wr.writerow([fmt % v for v in row])
        return buf.getvalue()

    def summary(self) -> str:
        return (f"samples {len(self)}\nrms_y {self.rms:.6g}\n"
                f"max_abs_y {self.max_abs_y:.6g}\nverdict {self.verdict}\n")


def rms(trace: SimulationTrace, settle_skip: float | None = None) -> float:
    """Root mean square of ``y`` over samples with ``t >= settle_skip``."""
    skip = trace.settle_skip if settle_skip is None else settle_skip
    y = trace.y[trace.t >= skip - 1e-12]
    if y.size == 0:
        raise ValueError("no samples after settle_skip")
    return float(np.sqrt(np.mean(y * y)))


def _controller(sc: Scenario, gn_z):
    c = pd_tf(sc.gains, sc.ts, sc.form)
    if sc.compensation == "dob":
        return DobLoop(DobConfig(c, gn_z, q_dob_default(sc.ts)))
    if sc.compensation == "cdob":
        return CdobLoop(CdobConfig(c, gn_z, q_cdob_default(sc.ts), sc.delay))
    return _PlainPD(FilterState(c))


class _PlainPD:
    def __init__(self, f: FilterState):
        self._f = f

    def reset(self, y0: float = 0.0, r0: float = 0.0) -> None:
        self._f.reset(r0 - y0)

    def step(self, r: float, y: float) -> float:
        return self._f.step(r - y)


def run(sc: Scenario) -> SimulationTrace:
    """Simulate ``sc``; a trace whose ``|y|`` exceeds 1e3 m is cut with verdict ``diverged``."""
    n = sc.n_samples
    ts = sc.ts
    gn_z = nominal_plant_z(ts)
    t = np.arange(n) * ts
    p = sc.vehicle
    if sc.plant == "vehicle":
        rho = sc.path.curvature(p.V * t)
        fw = sc.wind.force(t)
        d = zoh_discretize(error_dynamics_ss(p), ts)
        Ad, Bd, C = d.A, d.B, d.C[0]
        b_u = Bd[:, 0]
        ex = np.outer(rho, Bd[:, 1]) + np.outer(fw, Bd[:, 2])
        x = np.array([0.0, 0.0, 0.0, sc.y0])
    else:
        rho = np.zeros(n)
        fw = np.zeros(n)
        pf = FilterState(gn_z)

    ctrl = _controller(sc, gn_z)
    line = DelayLine(sc.delay)
    y_s0 = float(C @ x) if sc.plant == "vehicle" else sc.y0
    ctrl.reset(y0=y_s0)
    line.reset(y_s0)

    rec = {k: np.zeros(n) for k in ("y", "y_s", "y_meas", "u", "u1", "dhat", "y_comp")}
    verdict = "stable"
    last = n
    for k in range(n):
        if sc.plant == "vehicle":
            ys = float(C @ x)
            yk = float(x[3])
        else:
            ys = yk = pf.output() + sc.y0
        ym = line.step(ys)
        u = ctrl.step(0.0, ym)
        if sc.plant == "vehicle":
            x = Ad @ x + b_u * u + ex[k]
        else:
            pf.step(u)
        rec["y"][k] = yk
        rec["y_s"][k] = ys
        rec["y_meas"][k] = ym
        rec["u"][k] = u
        if sc.compensation == "dob":
            rec["u1"][k] = ctrl.u1
            rec["dhat"][k] = ctrl.dhat
        elif sc.compensation == "cdob":
            rec["dhat"][k] = ctrl.dhat
            rec["y_comp"][k] = ctrl.y_comp
        if not abs(yk) <= DIVERGENCE_LIMIT:
            verdict = "diverged"
            last = k + 1
            break
    cut = slice(0, last)
    internals = {}
    if sc.compensation == "dob":
        internals = {"u1": rec["u1"][cut], "dhat": rec["dhat"][cut]}
    elif sc.compensation == "cdob":
        internals = {"dhat": rec["dhat"][cut], "y_comp": rec["y_comp"][cut]}
    return SimulationTrace(t[cut], rho[cut], fw[cut], rec["y"][cut], rec["y_s"][cut],
                           rec["y_meas"][cut], rec["u"][cut], internals, verdict,
                           sc.settle_skip, sc.compensation)


# ---------------------------------------------------------------------------
# sweeps


def _csv(rows) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue()


def _aligned(rows) -> str:
    widths = [max(len(str(r[i])) for r in rows) for i in range(len(rows[0]))]
    lines = []
    for r in rows:
        cells = [str(r[0]).ljust(widths[0])] + [str(v).rjust(w) for v, w in zip(r[1:], widths[1:])]
        lines.append("  ".join(cells).rstrip())
    return "\n".join(lines) + "\n"


@dataclass
class CornerReport:
    titles: list
    rms_pd: list
    rms_dob: list
    verdicts_pd: list
    verdicts_dob: list

    @property
    def ratios(self) -> list:
        return [b / a for a, b in zip(self.rms_pd, self.rms_dob)]

    def rows(self):
        def cell(v, verdict):
            return f"{v:.6g}" if verdict == "stable" else "diverged"
        return [
            ["controller", *self.titles],
            ["PD", *[cell(v, s) for v, s in zip(self.rms_pd, self.verdicts_pd)]],
            ["PD+DOB", *[cell(v, s) for v, s in zip(self.rms_dob, self.verdicts_dob)]],
            ["ratio", *[f"{r:.4f}" if a == b == "stable" else "n/a"
                        for r, a, b in zip(self.ratios, self.verdicts_pd, self.verdicts_dob)]],
        ]

    def to_csv(self) -> str:
        return _csv(self.rows())

    def to_text(self) -> str:
        return _aligned(self.rows())


def corner_sweep_report(base: Scenario = Scenario(), corners=None) -> CornerReport:
    """RMS of PD and PD+DOB at each uncertainty corner (vehicle truth plant)."""
    corners = corners or [CORNERS[k] for k in "abcd"]
    out = CornerReport([], [], [], [], [])
    for c in corners:
        pd_tr = run(replace(base, corner=c, compensation="none"))
        dob_tr = run(replace(base, corner=c, compensation="dob"))
        out.titles.append(c.title)
        out.rms_pd.append(pd_tr.rms)
        out.rms_dob.append(dob_tr.rms)
        out.verdicts_pd.append(pd_tr.verdict)
        out.verdicts_dob.append(dob_tr.verdict)
    return out


@dataclass
class DelayReport:
    delays: list
    ts: float
    rms: list
    max_abs_y: list
    verdicts: list

    @property
    def all_stable(self) -> bool:
        return all(v == "stable" for v in self.verdicts)

    @property
    def spread(self) -> float:
        return max(self.rms) / min(self.rms)

    def rows(self):
        head = [["delay_samples", "delay_s", "rms_y", "max_abs_y", "verdict"]]
        return head + [[n, f"{n * self.ts:.4g}", f"{r:.6g}", f"{m:.6g}", v]
                       for n, r, m, v in zip(self.delays, self.rms, self.max_abs_y, self.verdicts)]

    def to_csv(self) -> str:
        return _csv(self.rows())

    def to_text(self) -> str:
        return _aligned(self.rows())


def delay_sweep_report(base: Scenario, delays=(25, 50, 75, 100),
                       compensation: str = "cdob") -> DelayReport:
    if any(int(n) != n or n < 0 for n in delays):
        raise ValueError("delays must be non-negative integers")
    out = DelayReport(list(delays), base.ts, [], [], [])
    for n in delays:
        tr = run(replace(base, delay=int(n), compensation=compensation))
        out.rms.append(tr.rms)
        out.max_abs_y.append(tr.max_abs_y)
        out.verdicts.append(tr.verdict)
    return out


# ---------------------------------------------------------------------------
# scenario files


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line else message)


_SECTIONS = {
    "vehicle": {f.name for f in fields(VehicleParams)} | {"plant", "corner"},
    "path": {"kind", "a", "b"},
    "wind": {"magnitude", "on_time", "off_time"},
    "controller": {"kd", "kp", "form"},
    "compensation": {"type", "delay"},
    "run": {"duration", "ts", "y0", "settle_skip"},
}


def _read_sections(text: str) -> dict:
    """``{section: {key: (value, line)}}`` with strict validation."""
    out: dict = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"malformed section header {raw.strip()!r}", lineno)
            current = line[1:-1].strip().lower()
            if current not in _SECTIONS:
                raise ConfigError(f"unknown section [{current}]", lineno)
            if current in out:
                raise ConfigError(f"duplicate section [{current}]", lineno)
            out[current] = {}
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", lineno)
        if current is None:
            raise ConfigError("key outside of any section", lineno)
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _SECTIONS[current]:
            raise ConfigError(f"unknown key {key!r} in [{current}]", lineno)
        if key in out[current]:
            raise ConfigError(f"duplicate key {key!r}", lineno)
        if not value:
            raise ConfigError(f"empty value for {key!r}", lineno)
        out[current][key] = (value, lineno)
    if not any(out.values()):
        raise ConfigError("empty configuration")
    return out


def _num(sec: dict, key: str, default, conv=float):
    if key not in sec:
        return default
    value, lineno = sec[key]
    try:
        return conv(value)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key!r}: {value!r}", lineno) from exc


def _int(value: str) -> int:
    f = float(value)
    if f != int(f):
        raise ValueError(value)
    return int(f)


def parse_config(text: str) -> Scenario:
    """Scenario from the sectioned text format; errors carry the line number."""
    cfg = _read_sections(text)
    veh = cfg.get("vehicle", {})
    kw = {}
    try:
        vparams = {k: v for k, (v, _) in veh.items() if k not in ("plant", "corner")}
        for k, (v, ln) in veh.items():
            if k in vparams:
                try:
                    parse_speed(v) if k == "V" else float(v)
                except ValueError as exc:
                    raise ConfigError(f"bad value for {k!r}: {v!r}", ln) from exc
        kw["params"] = VehicleParams.from_mapping(vparams)
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"[vehicle]: {exc}") from exc
    if "plant" in veh:
        kw["plant"] = _choice(veh, "plant", PLANTS)
    if "corner" in veh:
        label, ln = veh["corner"]
        label = label.lower()
        if label == "nominal":
            kw["corner"] = NOMINAL_CORNER
        elif label in CORNERS:
            kw["corner"] = CORNERS[label]
        else:
            raise ConfigError(f"unknown corner {label!r}", ln)

    path = cfg.get("path", {})
    kind = path.get("kind", ("ellipse", None))[0].lower()
    if kind == "ellipse":
        pa = EllipsePath()
        try:
            kw["path"] = EllipsePath(_num(path, "a", pa.a), _num(path, "b", pa.b))
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc), path.get("a", path.get("b", (None, None)))[1]) from exc
    elif kind == "straight":
        for k in ("a", "b"):
            if k in path:
                raise ConfigError(f"{k!r} has no meaning for a straight path", path[k][1])
        kw["path"] = StraightPath()
    else:
        raise ConfigError(f"unknown path kind {kind!r}", path["kind"][1])

    wind = cfg.get("wind", {})
    wd = WindProfile()
    try:
        kw["wind"] = WindProfile(_num(wind, "magnitude", wd.magnitude),
                                 _num(wind, "on_time", wd.on_time),
                                 _num(wind, "off_time", wd.off_time))
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"[wind]: {exc}", _first_line(wind)) from exc

    ctl = cfg.get("controller", {})
    kw["gains"] = PDGains(_num(ctl, "kd", DESIGN_POINT.kd), _num(ctl, "kp", DESIGN_POINT.kp))
    if "form" in ctl:
        kw["form"] = _choice(ctl, "form", ("backward", "trapezoidal"))

    comp = cfg.get("compensation", {})
    if "type" in comp:
        kw["compensation"] = _choice(comp, "type", COMPENSATIONS)
    kw["delay"] = _num(comp, "delay", 0, _int)
    if kw["delay"] < 0:
        raise ConfigError("delay must be non-negative", comp["delay"][1])

    run_sec = cfg.get("run", {})
    if "duration" in run_sec:
        v = run_sec["duration"][0].lower()
        kw["duration"] = "lap" if v == "lap" else _num(run_sec, "duration", None)
    kw["ts"] = _num(run_sec, "ts", 0.01)
    kw["y0"] = _num(run_sec, "y0", 1.0)
    kw["settle_skip"] = _num(run_sec, "settle_skip", 0.0)
    try:
        return Scenario(**kw)
    except ValueError as exc:
        # Cross-field problems: point at the plant choice, else the [run] section.
        line = veh["plant"][1] if "plant" in veh else _first_line(run_sec)
        raise ConfigError(str(exc), line) from exc


def _choice(sec: dict, key: str, allowed) -> str | None:
    if key not in sec:
        return None
    value, lineno = sec[key]
    value = value.lower()
    if value not in allowed:
        raise ConfigError(f"{key!r} must be one of {', '.join(allowed)}; got {value!r}", lineno)
    return value


def _first_line(sec: dict):
    lines = [ln for _, ln in sec.values()]
    return min(lines) if lines else None


def load_config(path) -> Scenario:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())
