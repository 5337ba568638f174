"""``pathdob`` command-line front end.

Exit codes: 0 success, 1 verification failure, 2 diverged simulation,
64 usage error, 65 configuration error. Every file written starts with
``# pathdob <version> config-sha256=<hash>``; the hash covers the config
file bytes, or the canonical argument list for commands without one.
``PATHDOB_OUTPUT_DIR`` sets the directory for default output names.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .anchors import CHECKS, VerifyContext, apply_overrides, run_checks
from .cdob import q_cdob_default
from .dob import q_dob_default
from .lti import TransferFunction, zoh_discretize
from .pd_design import (
    DERIVATIVE_FORMS,
    PDGains,
    WeightSpec,
    feasible_region,
    is_loop_stable,
    mixed_grid,
    mixed_sens_sup,
    pd_tf,
    phase_margin,
    weight_s,
    weight_t,
)
from .scenario import (
    ConfigError,
    Scenario,
    corner_sweep_report,
    delay_sweep_report,
    parse_config,
    run,
)
from .vehicle import nominal_plant_s, nominal_plant_z

EXIT_OK = 0
EXIT_VERIFY_FAIL = 1
EXIT_DIVERGED = 2
EXIT_USAGE = 64
EXIT_CONFIG = 65

OUTPUT_DIR_ENV = "PATHDOB_OUTPUT_DIR"
BODE_SELECTORS = ("Gn_s", "Gn_z", "L", "S", "T", "Ws", "Wt", "mixed")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# output helpers


def _hash_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _hash_args(args: argparse.Namespace, keys) -> str:
    canon = json.dumps({k: getattr(args, k) for k in keys}, sort_keys=True, default=str)
    return _hash_bytes(canon.encode())


def _header(digest: str) -> str:
    return f"# pathdob {__version__} config-sha256={digest}\n"


def _out_path(explicit: str | None, default_name: str) -> Path:
    if explicit:
        return Path(explicit)
    return Path(os.environ.get(OUTPUT_DIR_ENV, ".")) / default_name


def _write(path: Path, digest: str, body: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(_header(digest))
        fh.write(body)


def _load_scenario(path: str) -> tuple[Scenario, str]:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from exc
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ConfigError(f"{path} is not UTF-8 text") from exc
    try:
        sc = parse_config(text)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return sc, _hash_bytes(data)


# ---------------------------------------------------------------------------
# subcommands


def cmd_verify(args) -> int:
    if args.list:
        for name in CHECKS:
            print(name)
        return EXIT_OK
    try:
        ctx = apply_overrides(VerifyContext(), args.set or [])
    except KeyError as exc:
        raise UsageError(f"unknown override key {exc.args[0]!r}; "
                         f"known: gn_num, gn_den, gn_num_scale, kd, kp, ts") from exc
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    results = run_checks(ctx)
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    failed = sum(not ok for _, ok, _ in results)
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return EXIT_OK if failed == 0 else EXIT_VERIFY_FAIL


def _named_system(name: str, ts: float) -> tuple[TransferFunction, TransferFunction]:
    if name == "Gn":
        return nominal_plant_s(), nominal_plant_z(ts)
    if name == "Q_DOB":
        return TransferFunction([1.0], [0.25, 1.0, 1.0]), q_dob_default(ts)
    if name == "Q_CDOB":
        return TransferFunction([1.0], [0.0004, 0.04, 1.0]), q_cdob_default(ts)
    raise UsageError(f"unknown system {name!r}")


def cmd_discretize(args) -> int:
    if args.num is not None or args.den is not None:
        if args.num is None or args.den is None:
            raise UsageError("--num and --den must be given together")
        try:
            g = TransferFunction(args.num, args.den)
            gz = zoh_discretize(g, args.ts).normalized()
        except (ValueError, ZeroDivisionError) as exc:
            raise UsageError(str(exc)) from exc
        lines = [g.to_text(), gz.to_text()]
    else:
        lines = []
        for name in args.system:
            g, gz = _named_system(name, args.ts)
            lines += [f"{name}_s {g.to_text()}", f"{name}_z {gz.to_text()}"]
    body = "\n".join(lines) + "\n"
    if args.output:
        _write(Path(args.output), _hash_args(args, ("system", "num", "den", "ts")), body)
    else:
        sys.stdout.write(body)
    return EXIT_OK


def _wrap_phase(phase_deg: np.ndarray) -> np.ndarray:
    """Unwrapped phase shifted by whole turns so the first point lies in (-270, 90]."""
    ph = np.degrees(np.unwrap(np.radians(phase_deg)))
    k = np.ceil((ph[0] - 90.0) / 360.0)
    return ph - 360.0 * k


def bode_data(selector: str, omega: np.ndarray, gains: PDGains, ts: float, form: str,
              w: WeightSpec = WeightSpec()) -> tuple[np.ndarray, np.ndarray]:
    """``(magnitude_db, phase_deg)`` of the selected response on ``omega``."""
    gn_z = nominal_plant_z(ts)
    if selector == "Gn_s":
        h = nominal_plant_s().freq_response(omega)
    elif selector == "Gn_z":
        h = gn_z.freq_response(omega)
    elif selector == "Ws":
        h = weight_s(w).freq_response(omega)
    elif selector == "Wt":
        h = weight_t(w).freq_response(omega)
    else:
        L = pd_tf(gains, ts, form).freq_response(omega) * gn_z.freq_response(omega)
        if selector == "L":
            h = L
        elif selector == "S":
            h = 1.0 / (1.0 + L)
        elif selector == "T":
            h = L / (1.0 + L)
        elif selector == "mixed":
            s_part = np.abs(weight_s(w).freq_response(omega) / (1.0 + L))
            t_part = np.abs(weight_t(w).freq_response(omega) * L / (1.0 + L))
            return 20 * np.log10(s_part + t_part), np.zeros_like(omega)
        else:
            raise UsageError(f"unknown selector {selector!r}")
    return 20 * np.log10(np.abs(h)), _wrap_phase(np.degrees(np.angle(h)))


def cmd_bode(args) -> int:
    ts = args.ts
    wmax = args.wmax if args.wmax is not None else np.pi / ts * 0.999
    if not 0 < args.wmin < wmax:
        raise UsageError("need 0 < wmin < wmax")
    if args.selector not in ("Gn_s", "Ws", "Wt") and wmax > np.pi / ts:
        raise UsageError("wmax above Nyquist frequency")
    if args.points < 2:
        raise UsageError("need at least 2 points")
    omega = np.logspace(np.log10(args.wmin), np.log10(wmax), args.points)
    gains = PDGains(args.kd, args.kp)
    try:
        mag, ph = bode_data(args.selector, omega, gains, ts, args.form)
    except ZeroDivisionError as exc:
        raise UsageError(f"{exc}; raise --wmin") from exc
    rows = ["omega,magnitude_db,phase_deg"]
    rows += [f"{w:.10g},{m:.10g},{p:.10g}" for w, m, p in zip(omega, mag, ph)]
    keys = ("selector", "wmin", "wmax", "points", "kd", "kp", "ts", "form")
    _write(_out_path(args.output, f"bode_{args.selector}.csv"), _hash_args(args, keys),
           "\n".join(rows) + "\n")
    return EXIT_OK


def cmd_design_region(args) -> int:
    gn_z = nominal_plant_z(args.ts)
    if args.grid[0] < 1 or args.grid[1] < 1:
        raise UsageError("grid dimensions must be positive")
    res = feasible_region(gn_z, tuple(args.kd_range), tuple(args.kp_range),
                          tuple(args.grid), form=args.form)
    keys = ("kd_range", "kp_range", "grid", "ts", "form")
    path = _out_path(args.output, "design_region.csv")
    _write(path, _hash_args(args, keys), res.to_csv())
    n_feas = int(res.mask.sum())
    print(f"feasible points: {n_feas} / {res.mask.size}")
    dp = PDGains(args.kd, args.kp)
    c = pd_tf(dp, args.ts, args.form)
    if is_loop_stable(c, gn_z):
        print(f"point (kd={dp.kd:g}, kp={dp.kp:g}): stable, PM {phase_margin(c * gn_z):.2f} deg, "
              f"mixed sensitivity {mixed_sens_sup(dp, gn_z, form=args.form):.4f}")
    else:
        print(f"point (kd={dp.kd:g}, kp={dp.kp:g}): unstable nominal loop")
    print(f"wrote {path}")
    return EXIT_OK


def _stem(path: str) -> str:
    return Path(path).stem


def cmd_simulate(args) -> int:
    sc, digest = _load_scenario(args.config)
    tr = run(sc)
    trace_path = _out_path(args.output, f"{_stem(args.config)}_trace.csv")
    _write(trace_path, digest, tr.to_csv())
    summary = [f"scenario {sc.label}", tr.summary().rstrip("\n")]
    if args.companion:
        alt = "none" if sc.compensation != "none" else "dob"
        tr2 = run(replace(sc, compensation=alt))
        summary += [f"companion {alt}", f"companion_rms_y {tr2.rms:.6g}",
                    f"companion_verdict {tr2.verdict}"]
        if tr.verdict == tr2.verdict == "stable":
            summary.append(f"rms_ratio {tr.rms / tr2.rms:.4f}")
    text = "\n".join(summary) + "\n"
    summary_path = _out_path(args.summary, f"{_stem(args.config)}_summary.txt")
    _write(summary_path, digest, text)
    sys.stdout.write(text)
    return EXIT_DIVERGED if tr.verdict == "diverged" else EXIT_OK


def cmd_sweep_corners(args) -> int:
    if args.config:
        sc, digest = _load_scenario(args.config)
    else:
        sc, digest = Scenario(), _hash_bytes(b"default")
    rep = corner_sweep_report(sc)
    _write(_out_path(args.output, "corner_sweep.csv"), digest, rep.to_csv())
    sys.stdout.write(rep.to_text())
    diverged = "diverged" in rep.verdicts_pd + rep.verdicts_dob
    return EXIT_DIVERGED if diverged else EXIT_OK


def cmd_sweep_delays(args) -> int:
    sc, digest = _load_scenario(args.config)
    if any(n < 0 for n in args.delays):
        raise UsageError("delays must be non-negative")
    rep = delay_sweep_report(sc, args.delays)
    body = rep.to_csv()
    _write(_out_path(args.output, "delay_sweep.csv"), digest, body)
    sys.stdout.write(rep.to_text())
    sys.stdout.write(f"max/min rms {rep.spread:.4f}\n")
    return EXIT_OK if rep.all_stable else EXIT_DIVERGED


# ---------------------------------------------------------------------------
# parser


def _gain_args(p):
    p.add_argument("--kd", type=float, default=0.07)
    p.add_argument("--kp", type=float, default=0.2)
    p.add_argument("--ts", type=float, default=0.01)
    p.add_argument("--form", choices=DERIVATIVE_FORMS, default="backward")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="pathdob", description="PD + disturbance-observer path-following toolbox.")
    ap.add_argument("--version", action="version", version=f"pathdob {__version__}")
    sub = ap.add_subparsers(dest="command", parser_class=_Parser, metavar="COMMAND")
    sub.required = True

    p = sub.add_parser("verify", help="run the reference-coefficient and identity checks")
    p.add_argument("--list", action="store_true", help="print check names only")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override gn_num, gn_den, gn_num_scale, kd, kp or ts")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("discretize", help="ZOH-discretize a transfer function")
    p.add_argument("--system", nargs="+", choices=("Gn", "Q_DOB", "Q_CDOB"),
                   default=["Gn", "Q_DOB", "Q_CDOB"])
    p.add_argument("--num", type=float, nargs="+")
    p.add_argument("--den", type=float, nargs="+")
    p.add_argument("--ts", type=float, default=0.01)
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_discretize)

    p = sub.add_parser("bode", help="frequency-response CSV")
    p.add_argument("selector", choices=BODE_SELECTORS)
    p.add_argument("--wmin", type=float, default=1e-2)
    p.add_argument("--wmax", type=float)
    p.add_argument("--points", type=int, default=2000)
    _gain_args(p)
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_bode)

    p = sub.add_parser("design-region", help="(kd, kp) feasibility grid CSV")
    p.add_argument("--kd-range", type=float, nargs=2, default=[0.0, 0.3])
    p.add_argument("--kp-range", type=float, nargs=2, default=[0.0, 1.0])
    p.add_argument("--grid", type=int, nargs=2, default=[121, 121])
    _gain_args(p)
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_design_region)

    p = sub.add_parser("simulate", help="run one scenario file")
    p.add_argument("config")
    p.add_argument("--companion", action="store_true",
                   help="also run the uncompensated (or DOB) variant and compare")
    p.add_argument("-o", "--output", help="trace CSV path")
    p.add_argument("--summary", help="summary path")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep-corners", help="PD vs PD+DOB RMS at the four corners")
    p.add_argument("config", nargs="?")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_sweep_corners)

    p = sub.add_parser("sweep-delays", help="CDOB RMS over a list of delays")
    p.add_argument("config")
    p.add_argument("--delays", type=int, nargs="+", default=[25, 50, 75, 100])
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_sweep_delays)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"pathdob: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"pathdob: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
