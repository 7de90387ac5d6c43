"""Aggregate per-class metric results into age-binned method tables.

Aggregation is case-level macro by default: per case, the mean over its
defined per-class values; per bin, the mean over those case means.  A
``micro`` mode averages over all defined (case, class) pairs instead.
Cases whose classes are all undefined are excluded from the means but
reported via ``n_undefined``.  Bins without any evaluated case render as
``--/--``.  Table cells show percentages with one decimal, rounded half up.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

from .cohort import AGE_BINS, records_by_id
from .errors import ManifestError

__all__ = [
    "CaseSummary",
    "BinStats",
    "AggregateRow",
    "case_summaries",
    "aggregate",
    "render",
    "export_per_age",
]


@dataclass(frozen=True)
class CaseSummary:
    case_id: str
    age_years: float
    age_bin: str
    mean_dsc: float | None  # None when every class was undefined
    mean_nsd: float | None
    n_defined: int


@dataclass(frozen=True)
class BinStats:
    mean_dsc: float | None
    mean_nsd: float | None
    n_cases: int
    n_undefined: int


@dataclass(frozen=True)
class AggregateRow:
    method: str
    bins: tuple[tuple[str, BinStats], ...]  # in AGE_BINS order

    def stats(self, bin_name: str) -> BinStats:
        for name, stats in self.bins:
            if name == bin_name:
                return stats
        raise KeyError(bin_name)


def case_summaries(results, records) -> list[CaseSummary]:
    """Collapse per-class results into one summary per case."""
    by_id = records_by_id(records)
    grouped: dict[str, list] = {}
    for r in results:
        grouped.setdefault(r.case_id, []).append(r)
    # fix the reduction order so aggregation is permutation-invariant
    for members in grouped.values():
        members.sort(key=lambda r: r.class_id)
    summaries = []
    for case_id in sorted(grouped):
        if case_id not in by_id:
            raise ManifestError(f"metric results reference unknown case {case_id!r}")
        record = by_id[case_id]
        defined = [r for r in grouped[case_id] if r.defined]
        if defined:
            mean_dsc = sum(r.dsc for r in defined) / len(defined)
            mean_nsd = sum(r.nsd for r in defined) / len(defined)
        else:
            mean_dsc = mean_nsd = None
        summaries.append(
            CaseSummary(
                case_id=case_id,
                age_years=record.age_years,
                age_bin=record.age_bin,
                mean_dsc=mean_dsc,
                mean_nsd=mean_nsd,
                n_defined=len(defined),
            )
        )
    return summaries


def aggregate(results, records, method: str, micro: bool = False) -> AggregateRow:
    """One table row: per-bin mean DSC/NSD with case and undefined counts."""
    summaries = case_summaries(results, records)
    grouped: dict[str, list] = {}
    for r in results:
        grouped.setdefault(r.case_id, []).append(r)
    for members in grouped.values():
        members.sort(key=lambda r: r.class_id)
    bins = []
    for bin_name in AGE_BINS:
        members = [s for s in summaries if s.age_bin == bin_name]
        evaluated = [s for s in members if s.mean_dsc is not None]
        n_undef = len(members) - len(evaluated)
        if not evaluated:
            bins.append((bin_name, BinStats(None, None, 0, n_undef)))
            continue
        if micro:
            pairs = [
                r
                for s in evaluated
                for r in grouped[s.case_id]
                if r.defined
            ]
            mean_dsc = sum(r.dsc for r in pairs) / len(pairs)
            mean_nsd = sum(r.nsd for r in pairs) / len(pairs)
        else:
            mean_dsc = sum(s.mean_dsc for s in evaluated) / len(evaluated)
            mean_nsd = sum(s.mean_nsd for s in evaluated) / len(evaluated)
        bins.append((bin_name, BinStats(mean_dsc, mean_nsd, len(evaluated), n_undef)))
    return AggregateRow(method=method, bins=tuple(bins))


def _pct(value: float) -> str:
    """Percentage with one decimal, half up: 0.8347 -> '83.5'."""
    scaled = int(value * 1000.0 + 0.5)
    return f"{scaled // 10}.{scaled % 10}"


def _cell(stats: BinStats) -> str:
    if stats.n_cases == 0:
        return "--/--"
    return f"{_pct(stats.mean_dsc)}/{_pct(stats.mean_nsd)}"


def render(rows, format: str = "markdown") -> str:
    """Render aggregate rows as a markdown table or machine-readable CSV.

    Both formats carry identical numeric content (DSC/NSD as one-decimal
    percentages); the CSV additionally includes case counts.
    """
    rows = list(rows)
    if not rows:
        raise ValueError("no rows to render")
    if format == "markdown":
        header = "| Method | " + " | ".join(AGE_BINS) + " |"
        ruler = "|" + " --- |" * (len(AGE_BINS) + 1)
        lines = [header, ruler]
        for row in rows:
            cells = [_cell(stats) for _, stats in row.bins]
            lines.append("| " + " | ".join([row.method] + cells) + " |")
        return "\n".join(lines) + "\n"
    if format == "csv":
        buffer = io.StringIO()
        writer = csv.writer(buffer)
        writer.writerow(["method", "age_bin", "dsc_pct", "nsd_pct", "n_cases", "n_undefined"])
        for row in rows:
            for bin_name, stats in row.bins:
                if stats.n_cases == 0:
                    dsc_pct = nsd_pct = ""
                else:
                    dsc_pct, nsd_pct = _pct(stats.mean_dsc), _pct(stats.mean_nsd)
                writer.writerow(
                    [row.method, bin_name, dsc_pct, nsd_pct, stats.n_cases, stats.n_undefined]
                )
        return buffer.getvalue()
    raise ValueError(f"unknown render format {format!r}")


def export_per_age(results, records, method: str) -> str:
    """Per-case CSV (ages ascending) for performance-vs-age plots."""
    summaries = [s for s in case_summaries(results, records) if s.mean_dsc is not None]
    summaries.sort(key=lambda s: (s.age_years, s.case_id))
    buffer = io.StringIO()
    writer = csv.writer(buffer)
    writer.writerow(["case_id", "age_years", "age_bin", "mean_dsc", "mean_nsd", "method"])
    for s in summaries:
        writer.writerow(
            [s.case_id, repr(s.age_years), s.age_bin, repr(s.mean_dsc), repr(s.mean_nsd), method]
        )
    return buffer.getvalue()
