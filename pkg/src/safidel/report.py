"""Aggregation of per-sample results: distribution stats, significance
tests, generator rankings, and deterministic report serialization."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Mapping, Sequence

import numpy as np

EXACT_LIMIT = 16  # pooled size at or below which the U test enumerates exactly


@dataclass(frozen=True)
class BoxStats:
    """Five-number summary plus mean; quartiles by linear interpolation
    between order statistics (position (n-1)*q)."""

    min: float
    q1: float
    median: float
    q3: float
    max: float
    n: int
    mean: float

    def to_json_dict(self) -> dict:
        return {
            "min": self.min,
            "q1": self.q1,
            "median": self.median,
            "q3": self.q3,
            "max": self.max,
            "n": self.n,
            "mean": self.mean,
        }


def box_stats(values: Sequence[float]) -> BoxStats:
    if len(values) == 0:
        raise ValueError("box_stats needs at least one value")
    arr = np.asarray(values, dtype=np.float64)
    mn, q1, med, q3, mx = np.quantile(arr, [0.0, 0.25, 0.5, 0.75, 1.0])
    return BoxStats(
        min=float(mn),
        q1=float(q1),
        median=float(med),
        q3=float(q3),
        max=float(mx),
        n=int(arr.size),
        mean=float(arr.mean()),
    )


def _u_statistic(a: Sequence[float], b: Sequence[float]) -> float:
    """U for the first sample: wins count 1, ties 0.5 (midrank convention)."""
    pooled = np.concatenate([np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)])
    order = np.argsort(pooled, kind="stable")
    ranks = np.empty(pooled.size, dtype=np.float64)
    i = 0
    while i < pooled.size:
        j = i
        while j + 1 < pooled.size and pooled[order[j + 1]] == pooled[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0  # midrank, 1-based
        i = j + 1
    n1 = len(a)
    rank_sum = float(ranks[:n1].sum())
    return rank_sum - n1 * (n1 + 1) / 2.0


def _tie_correction(pooled: np.ndarray) -> float:
    """Sum of t^3 - t over tie groups."""
    _, counts = np.unique(pooled, return_counts=True)
    return float(np.sum(counts.astype(np.float64) ** 3 - counts))


def _normal_p(u: float, n1: int, n2: int, pooled: np.ndarray) -> float:
    mu = n1 * n2 / 2.0
    n = n1 + n2
    correction = _tie_correction(pooled) / (n * (n - 1)) if n > 1 else 0.0
    var = n1 * n2 / 12.0 * ((n + 1) - correction)
    if var <= 0:
        return 1.0
    diff = abs(u - mu)
    z = max(diff - 0.5, 0.0) / math.sqrt(var)  # continuity correction
    return min(1.0, math.erfc(z / math.sqrt(2.0)))


def _exact_p(u: float, values: np.ndarray, n1: int) -> float:
    """Two-sided permutation p: fraction of labelings at least as extreme."""
    n = values.size
    if n > 20:
        raise ValueError(f"exact enumeration infeasible for pooled size {n}")
    mu = n1 * (n - n1) / 2.0
    observed = abs(u - mu)
    # Pairwise win matrix lets each labeling's U be a subset sum, batched
    # over all labelings at once.
    wins = (values[:, None] > values[None, :]).astype(np.float64)
    wins += 0.5 * (values[:, None] == values[None, :])
    np.fill_diagonal(wins, 0.0)
    combos = np.array(list(combinations(range(n), n1)), dtype=np.intp)
    masks = np.zeros((combos.shape[0], n), dtype=np.float64)
    masks[np.arange(combos.shape[0])[:, None], combos] = 1.0
    u_all = ((masks @ wins) * (1.0 - masks)).sum(axis=1)
    hits = int(np.count_nonzero(np.abs(u_all - mu) >= observed - 1e-12))
    return hits / masks.shape[0]


def mann_whitney_u(
    a: Sequence[float], b: Sequence[float], method: str = "auto"
) -> tuple[float, float]:
    """Mann-Whitney U test; returns (U for the first sample, two-sided p).

    ``auto`` enumerates all labelings exactly when the pooled size is at
    most 16 and otherwise uses the tie- and continuity-corrected normal
    approximation; ``exact`` and ``normal`` force one path.
    """
    if len(a) == 0 or len(b) == 0:
        raise ValueError("both samples must be non-empty")
    if method not in ("auto", "exact", "normal"):
        raise ValueError(f"unknown method {method!r}")
    u = _u_statistic(a, b)
    pooled = np.concatenate([np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)])
    if method == "exact" or (method == "auto" and len(a) + len(b) <= EXACT_LIMIT):
        p = _exact_p(u, pooled, len(a))
    else:
        p = _normal_p(u, len(a), len(b), pooled)
    return u, p


@dataclass
class RankEntry:
    """Per (generator, detector) inconsistency totals with derived stats."""

    generator: str
    detector: str
    counts: list[float]
    stats: BoxStats = field(init=False)

    def __post_init__(self):
        self.stats = box_stats(self.counts)


@dataclass
class RankedEntry:
    entry: RankEntry
    rank: int
    p_vs_next: float | None

    def to_json_dict(self) -> dict:
        return {
            "rank": self.rank,
            "generator": self.entry.generator,
            "detector": self.entry.detector,
            "stats": self.entry.stats.to_json_dict(),
            "p_vs_next": self.p_vs_next,
        }


def rank_generators(entries: Sequence[RankEntry]) -> list[RankedEntry]:
    """Ascending by mean inconsistency (lower means higher safety fidelity);
    ties broken by median, then name.  Adjacent ranks get a U-test p-value."""
    ordered = sorted(
        entries, key=lambda e: (e.stats.mean, e.stats.median, e.generator, e.detector)
    )
    out = []
    for i, entry in enumerate(ordered):
        p_next = None
        if i + 1 < len(ordered):
            _, p_next = mann_whitney_u(entry.counts, ordered[i + 1].counts)
        out.append(RankedEntry(entry=entry, rank=i + 1, p_vs_next=p_next))
    return out


CSV_COLUMNS = ("detector", "generator", "sample_id", "mode", "fn", "fp", "total")


def _csv_cell(value) -> str:
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, float):
        return f"{value:.6f}"
    return str(value)


def emit_report(results: Mapping, format: str = "json") -> bytes:
    """Serialize an assembled report deterministically.

    JSON mirrors the in-memory structure.  CSV emits the flat inconsistency
    rows (one line per detector/generator/sample/mode) preceded by
    ``# key=value`` provenance comments.
    """
    if format == "json":
        return (json.dumps(results, sort_keys=True, indent=2) + "\n").encode()
    if format == "csv":
        buf = io.StringIO()
        for key, value in sorted((results.get("provenance") or {}).items()):
            buf.write(f"# {key}={value}\r\n")
        writer = csv.writer(buf, lineterminator="\r\n")
        writer.writerow(CSV_COLUMNS)
        for row in results.get("rows", []):
            writer.writerow([_csv_cell(row.get(col, "")) for col in CSV_COLUMNS])
        return buf.getvalue().encode()
    raise ValueError(f"unknown report format {format!r}")
