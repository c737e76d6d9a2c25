"""Token usage statistics for single grids and corpora."""

from __future__ import annotations

import csv
import io
import math
import os
from collections import Counter
from dataclasses import dataclass, field
from typing import Mapping, NamedTuple, Sequence

import numpy as np

from .errors import DomainError, FormatError
from .fileio import atomic_write
from .grid import TokenGrid

REPORT_MAGIC = "# bsqcodec token statistics v1"
HISTOGRAM_MARKER = "# histogram"
SUMMARY_MARKER = "# summary"
COLUMNS = (
    "index", "bits", "entropy_bits", "unique_tokens", "total_tokens",
    "sparsity", "utilization", "mean_token_value",
)
CORRELATED = ("entropy_bits", "sparsity", "unique_tokens", "mean_token_value")


@dataclass(frozen=True)
class StatsReport:
    """Statistics of one token grid.

    ``sparsity`` is the fraction of the 2**bits codebook the grid uses;
    ``utilization`` is the fraction of grid positions holding a distinct token.
    """

    bits: int
    entropy_bits: float
    unique_tokens: int
    total_tokens: int
    sparsity: float
    utilization: float
    mean_token_value: float
    histogram: dict[int, int] = field(default_factory=dict, compare=True)


def _entropy(counts) -> float:
    total = sum(counts)
    h = 0.0
    for c in counts:
        p = c / total
        h -= p * math.log2(p)
    return max(h, 0.0)


def compute_stats(grid: TokenGrid) -> StatsReport:
    flat = grid.flat()
    if not flat:
        raise DomainError("cannot compute statistics of an empty grid")
    hist = Counter(flat)
    unique = len(hist)
    total = len(flat)
    return StatsReport(
        bits=grid.bits,
        entropy_bits=_entropy(hist.values()),
        unique_tokens=unique,
        total_tokens=total,
        sparsity=unique / 2**grid.bits,
        utilization=unique / total,
        mean_token_value=sum(flat) / total,
        histogram=dict(sorted(hist.items())),
    )


def corpus_utilization(grids: Sequence[TokenGrid], bits: int | None = None) -> float:
    """Distinct tokens across the whole corpus as a fraction of 2**bits."""
    if not grids:
        raise DomainError("corpus is empty")
    widths = {g.bits for g in grids}
    if bits is not None:
        widths.add(bits)
    if len(widths) != 1:
        raise DomainError(f"corpus mixes token widths {sorted(widths)}")
    (L,) = widths
    seen: set[int] = set()
    for g in grids:
        seen.update(np.unique(g.tokens).tolist())
    return len(seen) / 2**L


class Correlation(NamedTuple):
    columns: tuple[str, ...]
    values: list[list[float | None]]  # None where a column has zero variance


def correlation_matrix(reports: Sequence[StatsReport]) -> Correlation:
    """Pearson correlation between entropy, sparsity, unique count and mean token value."""
    if len(reports) < 3:
        raise DomainError(f"need at least 3 reports for correlations, got {len(reports)}")
    data = np.array([[float(getattr(r, c)) for c in CORRELATED] for r in reports])
    centered = data - data.mean(axis=0)
    norms = np.sqrt((centered**2).sum(axis=0))
    k = len(CORRELATED)
    values: list[list[float | None]] = []
    for i in range(k):
        row: list[float | None] = []
        for j in range(k):
            if norms[i] == 0 or norms[j] == 0:
                row.append(None)
            elif i == j:
                row.append(1.0)
            else:
                r = float(centered[:, i] @ centered[:, j] / (norms[i] * norms[j]))
                row.append(min(1.0, max(-1.0, r)))
        values.append(row)
    return Correlation(CORRELATED, values)


def format_report(reports: Sequence[StatsReport], summary: Mapping[str, float | None] | None = None) -> str:
    """CSV text: one row per report, an optional key/value summary block, then histograms."""
    out = io.StringIO()
    out.write(REPORT_MAGIC + "\n")
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(COLUMNS)
    for i, r in enumerate(reports):
        writer.writerow([
            i, r.bits, repr(r.entropy_bits), r.unique_tokens, r.total_tokens,
            repr(r.sparsity), repr(r.utilization), repr(r.mean_token_value),
        ])
    if summary:
        out.write(SUMMARY_MARKER + "\n")
        for key, value in summary.items():
            writer.writerow((key, "" if value is None else repr(float(value))))
    out.write(HISTOGRAM_MARKER + "\n")
    writer.writerow(("index", "token", "count"))
    for i, r in enumerate(reports):
        for tok, count in sorted(r.histogram.items()):
            writer.writerow((i, tok, count))
    return out.getvalue()


def parse_report(text: str) -> list[StatsReport]:
    """Reports from :func:`format_report` text; the summary block is skipped."""
    lines = text.splitlines()
    if not lines or lines[0] != REPORT_MAGIC:
        raise FormatError("not a token statistics report")
    try:
        split = lines.index(HISTOGRAM_MARKER)
    except ValueError:
        raise FormatError("report has no histogram block") from None
    head = lines[1:split]
    if SUMMARY_MARKER in head:
        head = head[: head.index(SUMMARY_MARKER)]
    rows = list(csv.reader(head))
    hist_rows = list(csv.reader(lines[split + 1 :]))
    if not rows or tuple(rows[0]) != COLUMNS or not hist_rows or hist_rows[0] != ["index", "token", "count"]:
        raise FormatError("report header does not match")
    histograms: dict[int, dict[int, int]] = {}
    try:
        for idx, tok, count in hist_rows[1:]:
            histograms.setdefault(int(idx), {})[int(tok)] = int(count)
        reports = []
        for n, row in enumerate(rows[1:]):
            idx, bits, ent, uniq, total, spars, util, mean = row
            if int(idx) != n:
                raise FormatError(f"report rows out of order at {idx}")
            reports.append(StatsReport(
                int(bits), float(ent), int(uniq), int(total), float(spars),
                float(util), float(mean), histograms.get(n, {}),
            ))
    except ValueError as exc:
        raise FormatError(f"malformed report row: {exc}") from exc
    return reports


def export_report(
    reports: Sequence[StatsReport],
    path: str | os.PathLike,
    summary: Mapping[str, float | None] | None = None,
) -> None:
    try:
        atomic_write(path, format_report(reports, summary).encode("utf-8"))
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write statistics report to {os.fspath(path)}: {exc.strerror}") from exc


def read_report(path: str | os.PathLike) -> list[StatsReport]:
    with open(path, encoding="utf-8") as fh:
        return parse_report(fh.read())
