"""Correlation between predicted and human realism scores.

Pearson (PLCC), Spearman with midranks (SROCC), and Kendall tau-a (KROCC),
plus per-object report assembly. Zero-variance inputs raise
UndefinedCorrelationError instead of being coerced to 0.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass

import numpy as np


class UndefinedCorrelationError(ValueError):
    """Correlation is undefined (zero variance / all pairs tied)."""


def _as_pair(predictions, labels) -> tuple[np.ndarray, np.ndarray]:
    s_hat = np.asarray(predictions, dtype=np.float64)
    s = np.asarray(labels, dtype=np.float64)
    if s_hat.ndim != 1 or s.ndim != 1 or len(s_hat) != len(s):
        raise ValueError(f"score vectors must be 1-d of equal length, got {s_hat.shape} vs {s.shape}")
    if len(s) < 2:
        raise ValueError(f"need at least 2 samples, got {len(s)}")
    if not (np.isfinite(s_hat).all() and np.isfinite(s).all()):
        raise ValueError("non-finite score")
    return s_hat, s


def plcc(predictions, labels) -> float:
    """Pearson linear correlation: centered dot product over product of norms."""
    s_hat, s = _as_pair(predictions, labels)
    a = s_hat - s_hat.mean()
    b = s - s.mean()
    # sqrt of the product, not product of sqrts: one rounding step fewer.
    denom = math.sqrt(np.dot(a, a) * np.dot(b, b))
    if denom == 0.0:
        raise UndefinedCorrelationError("zero variance in a score vector")
    return float(np.dot(a, b) / denom)


def midranks(values: np.ndarray) -> np.ndarray:
    """Average ranks (1-based); tied values share the mean of their positions."""
    values = np.asarray(values, dtype=np.float64)
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values), dtype=np.float64)
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def srocc(predictions, labels) -> float:
    """Spearman rank correlation: Pearson over midranks.

    Equals the classic 1 - 6*sum(d^2)/(n(n^2-1)) form whenever there are no
    ties.
    """
    s_hat, s = _as_pair(predictions, labels)
    try:
        return plcc(midranks(s_hat), midranks(s))
    except UndefinedCorrelationError:
        raise UndefinedCorrelationError("all values equal in a score vector") from None


def krocc(predictions, labels) -> float:
    """Kendall tau-a: (concordant - discordant) / (n(n-1)/2), ties count zero."""
    s_hat, s = _as_pair(predictions, labels)
    n = len(s)
    sign_hat = np.sign(s_hat[:, None] - s_hat[None, :])
    sign_lab = np.sign(s[:, None] - s[None, :])
    prod = sign_hat * sign_lab
    upper = np.triu_indices(n, k=1)
    products = prod[upper]
    if np.all(products == 0.0):
        raise UndefinedCorrelationError("every pair is tied")
    return float(products.sum() / (n * (n - 1) / 2))


@dataclass(frozen=True)
class GroupResult:
    """Coefficients for one object group; None marks an undefined value."""

    n: int
    plcc: float | None
    srocc: float | None
    krocc: float | None
    note: str | None = None


@dataclass(frozen=True)
class CorrelationReport:
    """Per-object coefficients plus the aggregated overall row."""

    groups: dict[str, GroupResult]
    overall: GroupResult
    weighted: bool = True

    def to_dict(self) -> dict:
        return {
            "groups": {
                key: {"n": g.n, "plcc": g.plcc, "srocc": g.srocc, "krocc": g.krocc,
                      **({"note": g.note} if g.note else {})}
                for key, g in self.groups.items()
            },
            "overall": {"n": self.overall.n, "plcc": self.overall.plcc,
                        "srocc": self.overall.srocc, "krocc": self.overall.krocc},
            "weighted": self.weighted,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_csv(self) -> str:
        """One row per coefficient, one column per object, then overall."""
        keys = list(self.groups)
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["metric", *keys, "overall"])

        def fmt(v: float | None) -> str:
            return "" if v is None else f"{v:.6f}"

        for metric in ("plcc", "srocc", "krocc"):
            row = [metric]
            row += [fmt(getattr(self.groups[k], metric)) for k in keys]
            row.append(fmt(getattr(self.overall, metric)))
            writer.writerow(row)
        return buf.getvalue()


def _aggregate(values: list[tuple[float | None, int]], weighted: bool) -> float | None:
    defined = [(v, n) for v, n in values if v is not None]
    if not defined:
        return None
    if weighted:
        total = sum(n for _, n in defined)
        return sum(v * n for v, n in defined) / total
    return sum(v for v, _ in defined) / len(defined)


def build_report(per_group: dict[str, tuple], weighted: bool = True) -> CorrelationReport:
    """Compute coefficients per group and the overall aggregate.

    per_group maps a group key (object id) to (predictions, labels). The
    overall value of each coefficient is the sample-size-weighted mean of
    the defined per-group values (plain mean with weighted=False); groups
    where a coefficient is undefined are reported with None and excluded
    from the aggregate.
    """
    if not per_group:
        raise ValueError("no groups to report on")
    groups: dict[str, GroupResult] = {}
    for key, (predictions, labels) in per_group.items():
        n = len(labels)
        if n < 2:
            groups[key] = GroupResult(n=n, plcc=None, srocc=None, krocc=None,
                                      note="fewer than 2 samples")
            continue
        vals: dict[str, float | None] = {}
        notes = []
        for metric, fn in (("plcc", plcc), ("srocc", srocc), ("krocc", krocc)):
            try:
                vals[metric] = fn(predictions, labels)
            except UndefinedCorrelationError as exc:
                vals[metric] = None
                notes.append(f"{metric}: {exc}")
        groups[key] = GroupResult(n=n, note="; ".join(notes) or None, **vals)

    total_n = sum(g.n for g in groups.values())
    overall = GroupResult(
        n=total_n,
        plcc=_aggregate([(g.plcc, g.n) for g in groups.values()], weighted),
        srocc=_aggregate([(g.srocc, g.n) for g in groups.values()], weighted),
        krocc=_aggregate([(g.krocc, g.n) for g in groups.values()], weighted),
    )
    return CorrelationReport(groups=groups, overall=overall, weighted=weighted)
