"""User-level metrics: expected lookup time, network usage and summaries."""

from __future__ import annotations

import math
import statistics
from dataclasses import dataclass
from typing import Optional

import numpy as np

WINDOW_MS = 5 * 60_000
RETRY_CAP = 16
Z90 = 1.6448536269514722


@dataclass(frozen=True)
class LookupRecord:
    issued_at: int
    success: bool
    duration: float  # lookup time if success, lookup error time otherwise

    def __post_init__(self):
        if self.duration <= 0:
            raise ValueError("lookup durations must be > 0")


@dataclass(frozen=True)
class UlmWindow:
    start: int
    end: int
    elt: Optional[float]
    nu: int
    ler: float
    mean_lt: Optional[float]
    mean_let: Optional[float]
    n: int


@dataclass(frozen=True)
class DistributionSummary:
    mean: float
    ci90_halfwidth: float
    s: float
    min: float
    q1: float
    q2: float
    q3: float
    max: float
    n: int


def expected_lookup_time(mean_lt, mean_let, p_failure, n=RETRY_CAP):
    """Failure-weighted completion time with up to ``n`` retries.

    Sum over i = 0..n of (mean_lt + i * mean_let) * (1 - p) * p**i.
    """
    if not 0 <= p_failure < 1:
        raise ValueError("p_failure must lie in [0, 1)")
    if n < 0:
        raise ValueError("retry cap must be >= 0")
    if mean_lt <= 0:
        raise ValueError("mean lookup time must be > 0")
    p_success = 1.0 - p_failure
    total = 0.0
    for i in range(n + 1):
        total += (mean_lt + i * mean_let) * p_success * p_failure ** i
    return total


def window_aggregate(records, bytes_log, width=WINDOW_MS, start=None, retry_cap=RETRY_CAP):
    """Per-window ULMs for windows [start + k*width, start + (k+1)*width).

    ``bytes_log`` is an iterable of (time, bytes).  Windows without lookups
    are skipped; the expected lookup time is only given when the window saw at
    least one success.
    """
    records = list(records)
    if not records:
        return []
    if any(b.issued_at < a.issued_at for a, b in zip(records, records[1:])):
        raise ValueError("records must be sorted by issue time")
    if start is None:
        start = records[0].issued_at
    buckets = {}
    for r in records:
        k = (r.issued_at - start) // width
        if k < 0:
            continue
        buckets.setdefault(k, []).append(r)
    traffic = {}
    for t, b in bytes_log:
        k = (t - start) // width
        if k >= 0:
            traffic[k] = traffic.get(k, 0) + b
    out = []
    for k in sorted(buckets):
        recs = buckets[k]
        ok = [r.duration for r in recs if r.success]
        bad = [r.duration for r in recs if not r.success]
        ler = len(bad) / len(recs)
        mean_lt = sum(ok) / len(ok) if ok else None
        mean_let = sum(bad) / len(bad) if bad else None
        elt = None
        if ok:
            elt = expected_lookup_time(mean_lt, mean_let or 0.0, ler, retry_cap)
        lo = start + k * width
        out.append(UlmWindow(lo, lo + width, elt, traffic.get(k, 0), ler, mean_lt, mean_let, len(recs)))
    return out


def summarize(values):
    """Mean with 90% normal-approximation CI, std dev, min, quartiles, max.

    Quartiles use linear interpolation between order statistics.
    """
    xs = sorted(float(v) for v in values)
    if not xs:
        raise ValueError("cannot summarize an empty sample")
    n = len(xs)
    mean = math.fsum(xs) / n
    s = statistics.stdev(xs) if n > 1 else 0.0
    q1, q2, q3 = np.quantile(np.asarray(xs), [0.25, 0.5, 0.75], method="linear")
    return DistributionSummary(mean, Z90 * s / math.sqrt(n), s, xs[0],
                               float(q1), float(q2), float(q3), xs[-1], n)


def nsd(runs):
    """Mean over windows of the across-run std dev normalised by the mean.

    ``runs`` are equal-length series; None entries and windows with a zero
    mean are skipped.
    """
    runs = [list(r) for r in runs]
    if len(runs) < 2:
        raise ValueError("need at least two runs")
    if len({len(r) for r in runs}) != 1:
        raise ValueError("runs must have equal length")
    ratios = []
    for vals in zip(*runs):
        if any(v is None for v in vals):
            continue
        mu = sum(vals) / len(vals)
        if mu == 0:
            continue
        ratios.append(statistics.pstdev(vals) / mu)
    if not ratios:
        return math.nan
    return sum(ratios) / len(ratios)


def normalize(policy_series, baseline_series):
    base = [v for v in baseline_series if v is not None]
    pol = [v for v in policy_series if v is not None]
    if not base or sum(base) == 0:
        raise ValueError("baseline mean must be > 0")
    if not pol:
        raise ValueError("policy series is empty")
    return (sum(pol) / len(pol)) / (sum(base) / len(base))


def holistic_elt(records, retry_cap=RETRY_CAP):
    """One expected lookup time over a whole run."""
    records = list(records)
    ok = [r.duration for r in records if r.success]
    if not ok:
        raise ValueError("no successful lookups in run")
    bad = [r.duration for r in records if not r.success]
    p = len(bad) / len(records)
    return expected_lookup_time(sum(ok) / len(ok), (sum(bad) / len(bad)) if bad else 0.0, p, retry_cap)


def monte_carlo_expected(mean_lt, mean_let, p_failure, n=RETRY_CAP, samples=1_000_000, seed=0):
    """Simulated truncated retry: success after i failures costs lt + i*let.

    Runs where all n+1 attempts fail contribute nothing, matching the
    truncated sum.
    """
    rng = np.random.default_rng(seed)
    fails = rng.geometric(1.0 - p_failure, size=samples) - 1 if p_failure > 0 else np.zeros(samples, dtype=int)
    cost = np.where(fails <= n, mean_lt + fails * mean_let, 0.0)
    return float(cost.mean())


def ulm_rows(windows):
    """CSV rows ``window_start_ms,elt_ms,nu_bytes,ler``."""
    rows = []
    for w in windows:
        elt = "" if w.elt is None else f"{w.elt:.6f}"
        rows.append(f"{w.start},{elt},{w.nu},{w.ler:.6f}")
    return rows


SUMMARY_HEADER = "metric,unit,mean,ci_mu,s,min,Q1,Q2,Q3,max,n"


def summary_row(name, unit, s):
    return (f"{name},{unit},{s.mean:.6f},{s.ci90_halfwidth:.6f},{s.s:.6f},{s.min:.6f},"
            f"{s.q1:.6f},{s.q2:.6f},{s.q3:.6f},{s.max:.6f},{s.n}")
