"""Command-line front end: ``verify``, ``run``, ``sweep`` and ``report``.

Exit codes: 0 success, 1 a check failed, 2 invalid configuration or input.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import tempfile
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import rng as _rng
from .config import ExperimentConfig, load_config, parse_config
from .harness import (
    ConfigError,
    CSV_COLUMNS,
    aggregate,
    audit_learner_stream,
    fit_scaling,
    rows_to_csv,
    run_episode,
    sweep_rows,
)
from .timeline import DelaySchedule, profile_of, schedule_from, verify_identities

EXIT_OK, EXIT_CHECK, EXIT_CONFIG = 0, 1, 2

FIG2_DELAYS = (4, 2, 0, 0, 0)
FAULTS = ("sigma", "d_star", "sigma_star", "beta")


class Outputs:
    """Atomic file writer that can roll back everything it wrote."""

    def __init__(self, root: Path):
        self.root = root
        self.written: list[Path] = []
        self.created_root = not root.exists()

    def write(self, name: str, text: str) -> Path:
        self.root.mkdir(parents=True, exist_ok=True)
        path = self.root / name
        fd, tmp = tempfile.mkstemp(dir=self.root, prefix=f".{name}.", suffix=".tmp")
        try:
            with os.fdopen(fd, "w", newline="") as fh:
                fh.write(text)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
        self.written.append(path)
        return path

    def rollback(self):
        for p in self.written:
            if p.exists():
                p.unlink()
        self.written.clear()
        if self.created_root and self.root.exists() and not any(self.root.iterdir()):
            self.root.rmdir()


def _load(args) -> ExperimentConfig:
    if args.config is None:
        return parse_config({})
    return load_config(args.config)


def _out_dir(args, cfg: ExperimentConfig | None) -> Path:
    if args.out is not None:
        return Path(args.out)
    return Path(cfg.out_dir if cfg is not None else "out")


def _curve_suffix(cfg: ExperimentConfig, name: str) -> str:
    return "" if len(cfg.players) == 1 else f"_{name}"


# ----------------------------------------------------------------------------
# verify


def _inject(prof, fault: str):
    arr = getattr(prof, fault).copy()
    if fault == "beta":
        arr[[0, 1]] = arr[[1, 0]]
    else:
        arr[0] += 1
    return replace(prof, **{fault: arr})


def _identity_block(prof) -> dict:
    rep = verify_identities(prof)
    return {"passed": rep.passed, "identities": rep.as_dict()}


def cmd_verify(args) -> int:
    cfg = _load(args)
    vs = cfg.verify
    seed = vs.seed if args.seed is None else args.seed
    report: dict = {}
    failures: list[str] = []

    prof = profile_of(schedule_from(FIG2_DELAYS))
    if args.inject_fault:
        prof = _inject(prof, args.inject_fault)
    block = _identity_block(prof)
    block["profile"] = {k: getattr(prof, k).tolist()
                        for k in ("d", "sigma", "d_star", "sigma_star", "rho", "beta")}
    report["reference_instance"] = block
    failures += [f"reference_instance: {n}" for n, v in block["identities"].items() if not v["passed"]]

    T = cfg.horizon
    if isinstance(cfg.env.delays, DelaySchedule):
        sched = cfg.env.delays
    else:
        sched = cfg.env.delays.generate(T, cfg.seeds[0])
    block = _identity_block(profile_of(sched))
    report["config_schedule"] = block
    failures += [f"config_schedule: {n}" for n, v in block["identities"].items() if not v["passed"]]

    g = _rng.stream(seed, _rng.DELAYS, 99)
    bad = []
    for i in range(vs.random_schedules):
        n = int(g.integers(1, vs.max_T + 1))
        dmax = int(g.integers(0, n))
        d = np.minimum(g.integers(0, dmax + 1, size=n), n - np.arange(1, n + 1))
        rep = verify_identities(profile_of(DelaySchedule(d.astype(np.int64))))
        if not rep.passed:
            bad.append({"index": i, "delays": d.tolist(), "failed": [c.name for c in rep.failures()]})
    report["random_schedules"] = {"count": vs.random_schedules, "max_T": vs.max_T,
                                  "passed": not bad, "failures": bad}
    failures += [f"random_schedules[{b['index']}]: {n}" for b in bad for n in b["failed"]]

    streams = []
    for i in range(vs.learner_streams):
        for learner in ("pftrl", "omd"):
            res = audit_learner_stream(seed * 100003 + i, learner)
            streams.append(res)
            failures += [f"learner_streams[{i}].{learner}: {n}"
                         for n, v in res["checks"].items() if not v["passed"]]
    report["learner_streams"] = streams

    episodes = {}
    for name, player in cfg.players.items():
        tr = run_episode(cfg.env, player, T, cfg.seeds[0], audit=True)
        checks = dict(tr.audits)
        for key, ok in tr.diagnostics.get("skip_invariants", {}).items():
            checks[f"skip.{key}"] = ok
        episodes[name] = {k: bool(v) for k, v in checks.items()}
        failures += [f"episode.{name}: {k}" for k, v in checks.items() if not v]
    report["episodes"] = episodes
    report["passed"] = not failures
    report["failures"] = failures

    out = Outputs(_out_dir(args, cfg))
    out.write("verify.json", json.dumps(report, indent=2, sort_keys=True) + "\n")
    for f in failures:
        print(f"FAIL {f}", file=sys.stderr)
    print("verify: " + ("all checks passed" if not failures else f"{len(failures)} check(s) failed"))
    return EXIT_OK if not failures else EXIT_CHECK


# ----------------------------------------------------------------------------
# run


def _trace_csv(tr, schedule: DelaySchedule) -> str:
    k = tr.predictions.shape[1]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "d", "loss", "cum_regret"] + [f"x{i + 1}" for i in range(k)])
    for t in range(tr.T):
        w.writerow([t + 1, int(schedule.delays[t]), repr(float(tr.losses[t])),
                    repr(float(tr.cumulative_regret[t]))]
                   + [repr(float(v)) for v in tr.predictions[t]])
    return buf.getvalue()


def cmd_run(args) -> int:
    cfg = _load(args)
    seed = cfg.seeds[0] if args.seed is None else args.seed
    T = cfg.horizon
    out = Outputs(_out_dir(args, cfg))
    failed = []
    try:
        for name, player in cfg.players.items():
            tr = run_episode(cfg.env, player, T, seed, audit=args.audit)
            sched = cfg.env.schedule(T, seed)
            sfx = _curve_suffix(cfg, name)
            out.write(f"trace{sfx}.csv", _trace_csv(tr, sched))
            out.write(f"summary{sfx}.csv", rows_to_csv([tr.row()]))
            checks = dict(tr.audits)
            for key, ok in tr.diagnostics.get("skip_invariants", {}).items():
                checks[f"skip.{key}"] = ok
            if args.audit:
                out.write(f"audit{sfx}.json", json.dumps(
                    {"fingerprint": tr.fingerprint, "checks": {k: bool(v) for k, v in checks.items()}},
                    indent=2, sort_keys=True) + "\n")
            failed += [f"{name}: {k}" for k, v in checks.items() if not v]
            print(f"{name}: T={T} seed={seed} regret={tr.regret!r}")
    except BaseException:
        out.rollback()
        raise
    for f in failed:
        print(f"FAIL {f}", file=sys.stderr)
    return EXIT_CHECK if failed else EXIT_OK


# ----------------------------------------------------------------------------
# sweep


TABLE_COLUMNS = ("curve", "T", "reps", "mean", "std", "min", "max")
FIT_COLUMNS = ("curve", "slope", "intercept", "residual")


def cmd_sweep(args) -> int:
    cfg = _load(args)
    seeds = list(cfg.seeds)
    if args.seed is not None:
        seeds = [args.seed + i for i in range(len(seeds))]
    out = Outputs(_out_dir(args, cfg))
    table, fits = [], []
    try:
        for name, player in cfg.players.items():
            rows = sweep_rows(cfg.T_grid, seeds, cfg.env, player, workers=args.threads)
            out.write(f"sweep_{name}.csv", rows_to_csv(rows))
            agg = aggregate(rows)
            table += [{"curve": name, **r} for r in agg]
            if len(agg) >= 2 and all(r["mean"] > 0 for r in agg):
                f = fit_scaling(agg)
                fits.append({"curve": name, "slope": f.slope, "intercept": f.intercept,
                             "residual": f.residual})
            else:
                fits.append({"curve": name, "slope": math.nan, "intercept": math.nan,
                             "residual": math.nan})
            print(f"{name}: slope={fits[-1]['slope']!r}")
        out.write("table.csv", rows_to_csv(table, TABLE_COLUMNS))
        out.write("fits.csv", rows_to_csv(fits, FIT_COLUMNS))
    except BaseException:
        out.rollback()
        raise
    return EXIT_OK


# ----------------------------------------------------------------------------
# report


def _read_series(path: Path) -> dict[str, list[tuple[float, float]]]:
    """Curve name -> sorted ``(T, mean regret)`` points from a table or sweep CSV."""
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"report input {path}: {exc}") from None
    rows = list(csv.DictReader(io.StringIO(text)))
    if not rows:
        raise ConfigError(f"report input {path}: no data rows")
    cols = set(rows[0])
    try:
        if {"T", "mean"} <= cols:
            out: dict[str, list] = {}
            for r in rows:
                out.setdefault(r.get("curve") or path.stem, []).append((float(r["T"]), float(r["mean"])))
            return {k: sorted(v) for k, v in out.items()}
        if {"T", "seed", "regret"} <= cols:
            agg = aggregate([{"T": int(r["T"]), "regret": float(r["regret"])} for r in rows])
            name = path.stem[len("sweep_"):] if path.stem.startswith("sweep_") else path.stem
            return {name: [(float(a["T"]), a["mean"]) for a in agg]}
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"report input {path}: malformed row ({exc})") from None
    raise ConfigError(f"report input {path}: expected columns T,mean or T,seed,regret")


def _xy_csv(points) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["x", "y"])
    for x, y in points:
        w.writerow([repr(x), repr(y)])
    return buf.getvalue()


def svg_chart(series: dict, title: str, width: int = 640, height: int = 420) -> str:
    """Minimal log-log line chart of ``series`` (name -> points) as SVG text."""
    pts = [(math.log10(x), math.log10(y)) for v in series.values() for x, y in v if x > 0 and y > 0]
    pad = 50
    if pts:
        x0, x1 = min(p[0] for p in pts), max(p[0] for p in pts)
        y0, y1 = min(p[1] for p in pts), max(p[1] for p in pts)
    else:
        x0 = y0 = 0.0
        x1 = y1 = 1.0
    x1 = x1 if x1 > x0 else x0 + 1.0
    y1 = y1 if y1 > y0 else y0 + 1.0

    def sx(v):
        return pad + (v - x0) / (x1 - x0) * (width - 2 * pad)

    def sy(v):
        return height - pad - (v - y0) / (y1 - y0) * (height - 2 * pad)

    colours = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")
    lines = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
             f'<rect width="{width}" height="{height}" fill="white"/>',
             f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" font-size="14">{title}</text>',
             f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
             f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
             f'<text x="{width / 2:.1f}" y="{height - 10}" text-anchor="middle" font-size="12">log10 T</text>',
             f'<text x="15" y="{height / 2:.1f}" font-size="12" transform="rotate(-90 15 {height / 2:.1f})"'
             ' text-anchor="middle">log10 regret</text>']
    for i, (name, v) in enumerate(series.items()):
        c = colours[i % len(colours)]
        p = [(sx(math.log10(x)), sy(math.log10(y))) for x, y in v if x > 0 and y > 0]
        if p:
            path = " ".join(f"{a:.2f},{b:.2f}" for a, b in p)
            lines.append(f'<polyline points="{path}" fill="none" stroke="{c}" stroke-width="2"/>')
        lines.append(f'<text x="{width - pad - 120}" y="{pad + 16 * i}" fill="{c}" font-size="12">{name}</text>')
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def cmd_report(args) -> int:
    series: dict[str, list] = {}
    for p in args.inputs:
        for name, pts in _read_series(Path(p)).items():
            if name in series:
                raise ConfigError(f"report: curve {name!r} appears in more than one input")
            series[name] = pts
    out = Outputs(Path(args.out or "report"))
    try:
        for name, pts in series.items():
            out.write(f"{name}_linear.csv", _xy_csv(pts))
            logs = [(math.log(x), math.log(y)) for x, y in pts if x > 0 and y > 0]
            out.write(f"{name}_loglog.csv", _xy_csv(logs))
        if args.svg:
            out.write("regret.svg", svg_chart(series, "mean regret vs T"))
    except BaseException:
        out.rollback()
        raise
    print(f"report: {len(series)} curve(s)")
    return EXIT_OK


# ----------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="delayed-oco", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="YAML experiment file (defaults are used when omitted)")
        p.add_argument("--seed", type=int, help="override the configured seed(s)")
        p.add_argument("--out", help="output directory (overrides output.dir)")

    p = sub.add_parser("verify", help="identity and invariant suites")
    common(p)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--audit", action="store_true", help="accepted for symmetry; verify always audits")
    p.add_argument("--inject-fault", choices=FAULTS,
                   help="corrupt one entry of the reference profile (negative test)")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("run", help="single episode per player")
    common(p)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--audit", action="store_true", help="online-vs-offline dual checks")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="regret over the T grid and fitted slopes")
    common(p)
    p.add_argument("--threads", type=int, default=1, help="worker processes")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="plot data from table or sweep CSVs")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--out", help="output directory (default: report)")
    p.add_argument("--svg", action="store_true", help="also write a log-log SVG chart")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "threads", 1) < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
