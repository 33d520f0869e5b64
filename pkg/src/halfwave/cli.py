"""Command-line entry point.

Every subcommand writes a ``manifest.json`` beside its outputs (config echo,
library versions, grid, wall time, completion flag). Exit codes: 0 pass,
1 usage error, 2 compute failure, 3 verification failure.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import json
import logging
import platform
import sys
import time
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .checks import at_most, expansion_scan, identity_checks, kernel_checks, residual_scan, roundtrip
from .experiment import BlowupConfig, RunError, compare_with_ode, fit_blowup_laws, run_blowup
from .fieldio import read_field, write_field
from .ground_state import solve_ground_state
from .modulation import ModParams, cold_start, decompose, make_frame
from .profile import build_profile_set
from .spectral import make_grid

log = logging.getLogger("halfwave")

EXIT_OK, EXIT_USAGE, EXIT_COMPUTE, EXIT_VERIFY = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# -- config helpers -----------------------------------------------------------

def parse_grid(text: str) -> tuple[float, int]:
    """``"L=64,N=512"`` -> ``(64.0, 512)``."""
    kv = parse_pairs(text.split(","))
    try:
        return float(kv["L"]), int(kv["N"])
    except (KeyError, ValueError) as exc:
        raise UsageError(f"grid must look like L=64,N=512, got {text!r}") from exc


def parse_pairs(items) -> dict:
    out = {}
    for item in items:
        item = item.strip()
        if not item:
            continue
        if "=" not in item:
            raise UsageError(f"expected key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _coerce(text: str, default, name: str):
    text = text.strip()
    if text.lower() in ("none", "null", ""):
        return None
    try:
        if isinstance(default, bool):
            return text.lower() in ("1", "true", "yes", "on")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float) or default is None and "," not in text:
            return float(text)
        if isinstance(default, tuple) or "," in text:
            return tuple(float(x) for x in text.strip("()[]").split(","))
    except ValueError as exc:
        raise UsageError(f"bad value for {name}: {text!r}") from exc
    return text


def load_blowup_config(path: str | None, overrides: list[str]) -> BlowupConfig:
    """Read a ``key = value`` file (``#`` comments) and apply ``--set`` overrides."""
    raw: dict[str, str] = {}
    if path:
        p = Path(path)
        if not p.is_file():
            raise UsageError(f"config file {path} not found")
        cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
        cp.optionxform = str
        cp.read_string("[run]\n" + p.read_text())
        raw.update(cp["run"])
    raw.update(parse_pairs(overrides))
    cfg = BlowupConfig()
    fields = {f.name: f for f in dataclasses.fields(BlowupConfig)}
    values = {}
    for k, v in raw.items():
        if k not in fields:
            raise UsageError(f"unknown config key {k!r}")
        values[k] = _coerce(v, getattr(cfg, k), k)
    cfg = dataclasses.replace(cfg, **values)
    try:
        cfg.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    return cfg


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.floating, np.integer, np.bool_)):
        return x.item()
    if isinstance(x, complex):
        return [x.real, x.imag]
    return x


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


class Manifest:
    def __init__(self, out: Path, command: str, config: dict):
        self.path = out / "manifest.json"
        self.t0 = time.perf_counter()
        self.data = {
            "command": command,
            "config": config,
            "versions": {"halfwave": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                         "python": platform.python_version()},
            "platform": platform.platform(),
            "float": {"eps": float(np.finfo(float).eps), "byteorder": sys.byteorder},
            "complete": False,
            "outputs": [],
        }
        self.flush()

    def add(self, *paths) -> None:
        self.data["outputs"].extend(str(Path(p).name) for p in paths)

    def finish(self, status: str, **extra) -> None:
        self.data.update(extra)
        self.data["status"] = status
        self.data["complete"] = status in ("pass", "ok")
        self.data["wall_time_s"] = time.perf_counter() - self.t0
        self.flush()

    def flush(self) -> None:
        write_json(self.path, self.data)


# -- subcommands --------------------------------------------------------------

def _profiles(L, N, tol):
    gs = solve_ground_state(make_grid(L, N), tol)
    return gs, build_profile_set(gs)


def cmd_ground_state(args, out: Path, man: Manifest) -> int:
    L, N = parse_grid(args.grid)
    grid = make_grid(L, N)
    gs = solve_ground_state(grid, args.tol)
    f = write_field(out / "Q.hwf", gs.Q, grid, {"kind": "ground_state"})
    summary = {"L": L, "N": N, "iterations": gs.iterations, "residual": gs.residual,
               "mass_sq": gs.mass_sq, "Q0": float(gs.Q.max())}
    write_json(out / "ground_state.json", summary)
    man.add(f, f.with_suffix(".json"), out / "ground_state.json")
    man.finish("ok", grid={"L": L, "N": N})
    print(json.dumps(summary, indent=2))
    return EXIT_OK


def cmd_profiles(args, out: Path, man: Manifest) -> int:
    L, N = parse_grid(args.grid)
    gs, ps = _profiles(L, N, args.tol)
    summary = {"e1": ps.e1, "p1": ps.p1, "t20_form": ps.t20_form, "pairings": ps.pairings,
               "mass_sq": gs.mass_sq}
    write_json(out / "profiles.json", summary)
    man.add(out / "profiles.json")
    if args.save_fields:
        for name, fld in ps.fields().items():
            p = write_field(out / f"{name}.hwf", fld, ps.grid, {"kind": name})
            man.add(p)
    man.finish("ok", grid={"L": L, "N": N})
    print(json.dumps(_jsonable(summary), indent=2))
    return EXIT_OK


def cmd_residual_scan(args, out: Path, man: Manifest) -> int:
    L, N = parse_grid(args.grid)
    _, ps = _profiles(L, N, args.tol)
    kinds = ["a", "b"] if args.kind == "both" else [args.kind]
    report = {}
    for kind in kinds:
        vals = [float(v) for v in (args.values or ("0.08,0.04,0.02" if kind == "a" else "0.02,0.01,0.005")).split(",")]
        r = residual_scan(ps, kind, vals)
        e = expansion_scan(ps, kind, vals)
        report[kind] = {"values": vals, "residual_l2": r.data["l2"], "residual_slope": r.slopes["l2"],
                        "expansion": e.data, "expansion_slopes": e.slopes}
    write_json(out / "residual_scan.json", report)
    man.add(out / "residual_scan.json")
    man.finish("ok", grid={"L": L, "N": N})
    print(json.dumps(_jsonable(report), indent=2))
    return EXIT_OK


def cmd_decompose(args, out: Path, man: Manifest) -> int:
    u, grid_u, _ = read_field(args.input)
    L, N = parse_grid(args.profile_grid)
    _, ps = _profiles(L, N, args.tol)
    frame = make_frame(ps)
    if args.init:
        kv = parse_pairs(args.init.split(";"))
        base = cold_start(u, grid_u, float(ps.Q.max())).as_dict()
        base.update({k: float(v) for k, v in kv.items()})
        init = ModParams.from_vector([base[k] for k in ("lambda", "alpha1", "alpha2", "gamma", "a", "b1", "b2")])
    else:
        init = None
    st = decompose(u.astype(complex), frame, init=init, grid_u=grid_u, tol=args.decomp_tol)
    res = {"params": st.params.as_dict(), "ortho_residuals": st.ortho_residuals,
           "iterations": st.iterations}
    write_json(out / "decomposition.json", res)
    man.add(out / "decomposition.json")
    man.finish("ok", grid={"L": grid_u.L, "N": grid_u.N})
    print(json.dumps(_jsonable(res), indent=2))
    return EXIT_OK


def cmd_simulate(args, out: Path, man: Manifest) -> int:
    cfg = load_blowup_config(args.config, args.set or [])
    man.data["config"] = cfg.to_dict()
    man.flush()

    def progress(row):
        log.info("t=%.5f lambda=%.5f law=%+.4f a/sqrt(l)=%.4f eps=%.2e",
                 row["t"], row["lambda"], row["lam_law"], row["a_ratio"], row["eps_l2"])

    try:
        series = run_blowup(cfg, progress=progress)
    except RunError as exc:
        if exc.series is not None and exc.series.rows:
            exc.series.write_csv(out / "series.csv")
            man.add(out / "series.csv")
        man.finish("incomplete", error=str(exc))
        raise
    series.write_csv(out / "series.csv")
    report = {"halt_reason": series.halt_reason, "A0": series.A0, "B0": series.B0,
              "checkpoints": len(series.rows), "wall_time_s": series.wall_time}
    status = "ok"
    try:
        fit = fit_blowup_laws(series)
        report["fit"] = fit.to_dict()
        ode = compare_with_ode(series)
        report["ode"] = dataclasses.asdict(ode)
    except ValueError as exc:
        report["fit_error"] = str(exc)
        status = "incomplete"
    write_json(out / "fit.json", report)
    man.add(out / "series.csv", out / "fit.json")
    man.finish(status)
    print(json.dumps(_jsonable(report), indent=2))
    return EXIT_OK if status == "ok" else EXIT_COMPUTE


def cmd_report(args, out: Path, man: Manifest) -> int:
    path = Path(args.series)
    if not path.is_file():
        raise UsageError(f"series file {path} not found")
    with path.open() as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise UsageError("series file is empty")
    col = {k: np.array([float(r[k]) for r in rows]) for k in rows[0]}
    t = col["t"]
    outputs = {
        "lambda.dat": ("t lambda t^2/4A0^2-normalized", np.column_stack([t, col["lambda"], col["lam_law"]])),
        "a_ratio.dat": ("t a/sqrt(lambda)", np.column_stack([t, col["a_ratio"]])),
        "b_ratio.dat": ("t b1/lambda b2/lambda", np.column_stack([t, col["b1_ratio"], col["b2_ratio"]])),
        "h_half.dat": ("t |t|*||D^1/2 u||", np.column_stack([t, col["H_times_t"]])),
    }
    for name, (header, data) in outputs.items():
        np.savetxt(out / name, data, header=header, fmt="%.12e")
        man.add(out / name)
    man.finish("ok")
    print("\n".join(str(out / n) for n in outputs))
    return EXIT_OK


def cmd_verify(args, out: Path, man: Manifest) -> int:
    L, N = parse_grid(args.grid)
    gs, ps = _profiles(L, N, 1e-10)
    checks = kernel_checks(gs, args.tol)
    checks += identity_checks(ps, tol_identity=args.identity_tol, tol_pairing=args.tol)
    ra = residual_scan(ps, "a", [0.08, 0.04, 0.02])
    rb = residual_scan(ps, "b", [0.02, 0.01, 0.005])
    checks.append(at_most("-(residual slope in a) vs -2.7", -ra.slopes["l2"], -2.7))
    checks.append(at_most("-(residual slope in b) vs -2.5", -rb.slopes["l2"], -2.5))
    frame = make_frame(ps)
    truth = ModParams(0.9, (0.3, -0.2), 0.7, 0.1, (0.02, -0.01))
    rt = roundtrip(frame, truth, ps.grid)
    checks.append(at_most("round-trip max relative parameter error", max(rt.rel_errors.values()), 1e-6))
    checks.append(at_most("round-trip orthogonality / ||u||", rt.ortho_max / rt.unorm, 1e-8))
    lines = [c.line() for c in checks]
    print("\n".join(lines))
    table = [dataclasses.asdict(c) for c in checks]
    write_json(out / "verify.json", table)
    man.add(out / "verify.json")
    failed = [c for c in checks if c.passed is False]
    man.finish("pass" if not failed else "fail", grid={"L": L, "N": N}, failures=len(failed))
    return EXIT_OK if not failed else EXIT_VERIFY


COMMANDS = {
    "ground-state": cmd_ground_state,
    "profiles": cmd_profiles,
    "residual-scan": cmd_residual_scan,
    "decompose": cmd_decompose,
    "simulate": cmd_simulate,
    "report": cmd_report,
    "verify": cmd_verify,
}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="halfwave", description="Ground states, profiles and blowup runs for i u_t = D u - |u| u.")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("--log-level", default="WARNING")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def add(name, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--out", default=None, help="output directory (default runs/<command>)")
        return sp

    sp = add("ground-state", "solve for the ground state")
    sp.add_argument("--grid", default="L=64,N=512")
    sp.add_argument("--tol", type=float, default=1e-10)

    sp = add("profiles", "build the profile hierarchy")
    sp.add_argument("--grid", default="L=16,N=512")
    sp.add_argument("--tol", type=float, default=1e-10)
    sp.add_argument("--save-fields", action="store_true")

    sp = add("residual-scan", "residual and expansion scans in a or b")
    sp.add_argument("--grid", default="L=16,N=512")
    sp.add_argument("--tol", type=float, default=1e-10)
    sp.add_argument("--kind", choices=("a", "b", "both"), default="both")
    sp.add_argument("--values", default=None, help="comma-separated scan values")

    sp = add("decompose", "decompose a stored field")
    sp.add_argument("--in", dest="input", required=True)
    sp.add_argument("--profile-grid", default="L=16,N=512")
    sp.add_argument("--tol", type=float, default=1e-10)
    sp.add_argument("--decomp-tol", type=float, default=1e-10)
    sp.add_argument("--init", default=None, help="initial guess, e.g. 'lambda=0.9;a=0.1'")

    sp = add("simulate", "blowup run with law fits")
    sp.add_argument("--config", default=None)
    sp.add_argument("--set", action="append", help="override a config key (key=value)")

    sp = add("report", "gnuplot data files from a series CSV")
    sp.add_argument("--series", required=True)

    sp = add("verify", "invariant suite; nonzero exit on failure")
    sp.add_argument("--grid", default="L=16,N=1024")
    sp.add_argument("--tol", type=float, default=1e-7, help="kernel and pairing tolerance")
    sp.add_argument("--identity-tol", type=float, default=1e-6)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a subcommand is required: " + ", ".join(COMMANDS))
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    out = Path(args.out or Path("runs") / args.command)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        print(f"usage error: cannot create {out}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    echo = {k: v for k, v in vars(args).items() if k != "out"}
    man = Manifest(out, args.command, echo)
    try:
        return COMMANDS[args.command](args, out, man)
    except UsageError as exc:
        man.finish("usage-error", error=str(exc))
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - reported through the exit code
        log.debug("compute failure", exc_info=True)
        if not man.data.get("status"):
            man.finish("incomplete", error=f"{type(exc).__name__}: {exc}")
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_COMPUTE


if __name__ == "__main__":
    sys.exit(main())
