"""Experiment runner.

``run`` executes the churn x workload x policy x repetition matrix of a
scenario file and writes one directory per cell; ``summarize`` rebuilds the
summary tables (and figures) from those directories.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import math
import os
import shutil
import statistics
import sys
import tempfile
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import analytics
from .experiment import DocParams, OverlayParams, run_doc, run_overlay
from .scenario import (
    ScenarioError,
    churn_preset,
    load_config,
    parse_trace_workload,
    workload_preset,
)

BASELINE = "policy0"
CELL_DONE = "cell.ini"


class CliError(Exception):
    pass


def cell_seed(seed, scenario, rep):
    """Seed shared by every policy of one (scenario, repetition) cell."""
    digest = hashlib.sha256(f"{seed}/{scenario}/{rep}".encode()).digest()
    return int.from_bytes(digest[:4], "big")


def _scenario_name(cfg, churn, workload):
    if cfg["experiment"]["layer"] == "doc":
        return f"{churn}_{cfg['doc']['network']}_{workload}"
    return f"{churn}_{workload}"


def plan_cells(cfg, seed, config_dir):
    exp = cfg["experiment"]
    cells = []
    for churn in exp["churn"]:
        for workload in exp["workload"]:
            scenario = _scenario_name(cfg, churn, workload)
            for rep in range(exp["repetitions"]):
                s = cell_seed(seed, scenario, rep)
                for policy in exp["policies"]:
                    cells.append({
                        "layer": exp["layer"], "scenario": scenario, "churn": churn,
                        "workload": workload, "rep": rep, "policy": policy, "seed": s,
                        "trace": str(Path(config_dir, exp["trace"])) if exp["trace"] else "",
                        "horizon_s": exp["horizon_s"], "overlay": cfg["overlay"], "doc": cfg["doc"],
                    })
    return cells


def cell_path(root, cell):
    return Path(root, cell["scenario"], f"rep{cell['rep']}", cell["policy"])


def _overlay_params(c):
    o = c["overlay"]
    return OverlayParams(
        nodes=int(o["nodes"]), m=int(o["bits"]), successor_list=int(o["successor_list"]),
        latency=int(o["latency_ms"]), timeout=int(o["timeout_ms"]),
        processing=int(o["processing_ms"]), warmup_ms=int(o["warmup_s"] * 1000),
        horizon_ms=int(c["horizon_s"] * 1000), eval_interval=int(o["eval_interval_ms"]),
        initial_interval=int(o["initial_interval_ms"]), min_interval=int(o["min_interval_ms"]),
        window_ms=int(o["window_s"] * 1000), retry_cap=int(o["retry_cap"]),
    )


def _doc_params(c):
    d = c["doc"]
    return DocParams(
        servers=int(d["servers"]), data_kb=d["data_kb"], monitor_s=d["monitor_s"],
        eval_s=d["eval_s"], noise=d["noise"], reference_mb=d["reference_mb"],
        window_s=d["window_s"], retry_cap=int(d["retry_cap"]), horizon_s=c["horizon_s"],
    )


def _write_rows(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _fmt(x):
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    if isinstance(x, float):
        return f"{x:.6f}"
    return str(x)


def _write_cell_files(tmp, c):
    if c["layer"] == "overlay":
        if c["workload"] == "trace":
            wl = parse_trace_workload(c["trace"], seed=c["seed"])
        else:
            wl = workload_preset(c["workload"], seed=c["seed"])
        run = run_overlay(_overlay_params(c), c["policy"], churn_preset(c["churn"], "overlay", c["seed"]),
                          wl, seed=c["seed"])
        _write_rows(tmp / "ulm.csv", ["window_start_ms", "elt_ms", "nu_bytes", "ler"],
                    [[w.start, _fmt(w.elt), w.nu, _fmt(w.ler)] for w in run.windows])
        _write_rows(tmp / "intervals.csv", ["time_ms", "node_id", "op", "interval_ms"],
                    [[t, n, op, _fmt(float(v))] for t, n, op, v in run.interval_rows])
        _write_rows(tmp / "intervals_mean.csv", ["time_ms", "op", "mean_interval_ms"],
                    [[t, op, _fmt(v)] for t, op, v in run.samples])
        _write_rows(tmp / "ring_walk.csv", ["time_ms", "reachable", "live"], run.ring_walks)
        span = run.workload_end - run.workload_start
    else:
        if c["workload"] not in ("heavy", "light", "variable"):
            raise CliError(f"workload {c['workload']!r} is not available for the doc layer")
        run = run_doc(_doc_params(c), c["policy"], churn_preset(c["churn"], "doc", c["seed"]),
                      c["doc"]["network"], c["workload"], seed=c["seed"])
        _write_rows(tmp / "ulm.csv", ["window_start_ms", "elt_ms", "nu_bytes", "ler"],
                    [[w.start, _fmt(w.elt), _fmt(float(w.nu)), _fmt(w.ler)] for w in run.windows])
        _write_rows(tmp / "gets.csv", ["issued_ms", "doc", "get_time_ms", "failed"],
                    [[round(g.issued * 1000), g.doc, _fmt(g.get_time * 1000), int(g.failed)]
                     for g in run.gets])
        _write_rows(tmp / "doc_trace.csv", ["time_ms", "doc"],
                    [[round(t * 1000), d] for t, d in run.doc_trace])
        span = round(run.end * 1000)
    with open(tmp / CELL_DONE, "w", encoding="utf-8", newline="\n") as fh:
        for k in ("layer", "scenario", "churn", "workload", "rep", "policy", "seed"):
            fh.write(f"{k} = {c[k]}\n")
        fh.write(f"span_ms = {span}\n")


def run_cell(root, c):
    """Run one cell unless it is already complete; returns True if it ran."""
    final = cell_path(root, c)
    if (final / CELL_DONE).exists():
        return False
    final.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{c['policy']}-", dir=final.parent))
    try:
        _write_cell_files(tmp, c)
        if final.exists():
            shutil.rmtree(final)  # leftover without a completion marker
        os.replace(tmp, final)
    finally:
        if tmp.exists():
            shutil.rmtree(tmp)
    return True


def _run_cell_star(args):
    return run_cell(*args)


# -- summaries --------------------------------------------------------------

def _read_ulm(path):
    elts, nus = [], []
    with open(path, encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            elts.append(float(row["elt_ms"]) if row["elt_ms"] else None)
            nus.append(float(row["nu_bytes"]))
    return elts, nus


def collect(root):
    """{scenario: {policy: [(elts, nus) per repetition]}} from finished cells."""
    root = Path(root)
    if not root.is_dir():
        raise CliError(f"{root} is not a directory")
    data = defaultdict(lambda: defaultdict(list))
    for done in sorted(root.glob(f"*/rep*/*/{CELL_DONE}")):
        cell = done.parent
        data[cell.parent.parent.name][cell.name].append(_read_ulm(cell / "ulm.csv"))
    if not data:
        raise CliError(f"no completed cells under {root}")
    return data


def _policy_order(policies):
    return sorted(policies, key=lambda p: (p != BASELINE, p))


def summary_tables(data):
    """Distribution rows and normalised-ULM rows for every scenario/policy."""
    dist, norm = [], []
    for scenario in sorted(data):
        pols = data[scenario]
        if BASELINE not in pols:
            raise CliError(f"scenario {scenario!r} has no {BASELINE} baseline")
        base_elt = [v for elts, _ in pols[BASELINE] for v in elts if v is not None]
        base_nu = [v for _, nus in pols[BASELINE] for v in nus]
        for policy in _policy_order(pols):
            reps = pols[policy]
            elt = [v for elts, _ in reps for v in elts if v is not None]
            nu = [v for _, nus in reps for v in nus]
            for name, unit, vals in (("ELT", "ms", elt), ("NU", "bytes", nu)):
                if vals:
                    s = analytics.summarize(vals)
                    dist.append([scenario, policy, name, unit] + [_fmt(float(x)) for x in (
                        s.mean, s.ci90_halfwidth, s.s, s.min, s.q1, s.q2, s.q3, s.max)] + [s.n])
            elt_ratio = analytics.normalize(elt, base_elt) if elt and base_elt else math.nan
            nu_ratio = analytics.normalize(nu, base_nu) if nu and base_nu and sum(base_nu) else math.nan
            nsd_val = math.nan
            if len(reps) >= 2:
                n = min(len(elts) for elts, _ in reps)
                if n:
                    nsd_val = analytics.nsd([elts[:n] for elts, _ in reps])
            norm.append([scenario, policy, _fmt(elt_ratio), _fmt(nu_ratio), _fmt(nsd_val), len(reps)])
    return dist, norm


DIST_HEADER = ["scenario", "policy", "metric", "unit", "mean", "ci_mu", "s",
               "min", "Q1", "Q2", "Q3", "max", "n"]
NORM_HEADER = ["scenario", "policy", "elt_norm", "nu_norm", "nsd_elt", "repetitions"]


def _mean_samples(cells):
    """Average per-time mean-interval samples over repetitions."""
    acc = defaultdict(list)
    for cell in cells:
        with open(cell / "intervals_mean.csv", encoding="utf-8", newline="") as fh:
            for row in csv.DictReader(fh):
                if row["mean_interval_ms"]:
                    acc[(int(row["time_ms"]), row["op"])].append(float(row["mean_interval_ms"]))
    return [(t, op, statistics.fmean(v)) for (t, op), v in sorted(acc.items())]


def render_figures(root, data):
    from . import report

    root = Path(root)
    paths = []
    for scenario in sorted(data):
        sdir = root / scenario
        pols = _policy_order(data[scenario])
        elt_series, nu_series = {}, {}
        for policy in pols:
            first = data[scenario][policy][0]
            starts = list(range(len(first[0])))
            elt_series[policy] = [(i * 300_000, v) for i, v in zip(starts, first[0])]
            nu_series[policy] = [(i * 300_000, v) for i, v in zip(starts, first[1])]
        p = sdir / "elt.png"
        report.ulm_figure(p, elt_series, "expected time [ms] (rep 0)")
        paths.append(p)
        p = sdir / "nu.png"
        report.ulm_figure(p, nu_series, "network usage [MB / window] (rep 0)", scale=1e-6)
        paths.append(p)
        cells0 = {pol: sorted(sdir.glob(f"rep*/{pol}")) for pol in pols}
        if all((c / "intervals_mean.csv").exists() for cs in cells0.values() for c in cs):
            series = {pol: _mean_samples(cs) for pol, cs in cells0.items()}
            phase = 1_000_000 if scenario.startswith("temporally_varying") else None
            paths += report.all_interval_figures(sdir, series, phase)
        elif all((sdir / "rep0" / pol / "doc_trace.csv").exists() for pol in pols):
            series = {}
            for pol in pols:
                with open(sdir / "rep0" / pol / "doc_trace.csv", encoding="utf-8", newline="") as fh:
                    series[pol] = [(int(r["time_ms"]) / 1000, int(r["doc"])) for r in csv.DictReader(fh)]
            p = sdir / "doc_trace.png"
            report.doc_figure(p, series)
            paths.append(p)
    return paths


def summarize_dir(root, figures=True):
    data = collect(root)
    dist, norm = summary_tables(data)
    _write_rows(Path(root, "summary.csv"), DIST_HEADER, dist)
    _write_rows(Path(root, "normalized.csv"), NORM_HEADER, norm)
    if figures:
        render_figures(root, data)
    return norm


# -- entry point ------------------------------------------------------------

def cmd_run(args):
    try:
        cfg = load_config(args.config)
    except (OSError, ScenarioError) as exc:
        raise CliError(str(exc)) from None
    seed = cfg["experiment"]["seed"] if args.seed is None else args.seed
    if seed < 0 or seed >= 2 ** 64:
        raise CliError("seed must be an unsigned 64-bit integer")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if not os.access(out, os.W_OK):
        raise CliError(f"{out} is not writable")
    cells = plan_cells(cfg, seed, Path(args.config).parent)
    if cfg["experiment"]["layer"] == "overlay" and "trace" in cfg["experiment"]["workload"]:
        try:
            parse_trace_workload(cells[0]["trace"])
        except (OSError, ScenarioError) as exc:
            raise CliError(f"trace: {exc}") from None
    jobs = [(out, c) for c in cells]
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            ran = list(pool.map(_run_cell_star, jobs))
    else:
        ran = [run_cell(*j) for j in jobs]
    for c, r in zip(cells, ran):
        status = "ran" if r else "kept"
        print(f"{status} {cell_path(out, c).relative_to(out)}  seed={c['seed']}")
    norm = summarize_dir(out, figures=cfg["experiment"]["figures"])
    _print_norm(norm)
    return 0


def _print_norm(norm):
    print(" ".join(f"{h:>12}" for h in NORM_HEADER[1:]) + "  scenario")
    for row in norm:
        print(" ".join(f"{str(v):>12}" for v in row[1:]) + f"  {row[0]}")


def cmd_summarize(args):
    norm = summarize_dir(args.dir, figures=not args.no_figures)
    _print_norm(norm)
    return 0


def build_parser():
    ap = argparse.ArgumentParser(prog="automaint", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run the experiment matrix of a scenario file")
    r.add_argument("--config", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--seed", type=int, default=None, help="overrides experiment.seed")
    r.add_argument("--jobs", type=int, default=1, help="cells run in parallel processes")
    r.set_defaults(func=cmd_run)
    s = sub.add_parser("summarize", help="rebuild summary tables from a run directory")
    s.add_argument("--dir", required=True)
    s.add_argument("--no-figures", action="store_true")
    s.set_defaults(func=cmd_summarize)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CliError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
