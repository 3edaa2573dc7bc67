"""Ranked-retrieval metrics: average precision at K and MAP@K.

AP@K is normalized by min(K, |truth|) so a perfect ranking scores 1 even
when the truth set is larger than K.
"""

import json
from dataclasses import dataclass


@dataclass
class QueryResult:
    """One query's ranked expansion against its ground truth."""

    ranked: list
    truth: set

    def __post_init__(self):
        if len(set(self.ranked)) != len(self.ranked):
            raise ValueError("ranked list contains duplicates")
        self.truth = set(self.truth)
        if not self.truth:
            raise ValueError("truth set is empty")


def average_precision_at_k(result: QueryResult, k: int) -> float:
    """AP@K: sum of precision-at-hit over the top K, over min(K, |truth|)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    hits = 0
    total = 0.0
    for pos, entity in enumerate(result.ranked[:k], start=1):
        if entity in result.truth:
            hits += 1
            total += hits / pos
    return total / min(k, len(result.truth))


def map_at_k(results, k: int) -> float:
    """Mean AP@K over queries."""
    results = list(results)
    if not results:
        raise ValueError("need at least one query result")
    return sum(average_precision_at_k(r, k) for r in results) / len(results)


DEFAULT_KS = (10, 20, 50)


def evaluate(results_by_class: dict, truth: dict, ks=DEFAULT_KS) -> dict:
    """MAP@K for each K plus per-class AP@K tables.

    ``results_by_class`` maps class name to its ranked entity list;
    ``truth`` maps class name to its ground-truth collection.  Returns
    {"map": {K: value}, "classes": {name: {K: ap}}}.
    """
    missing = sorted(set(results_by_class) - set(truth))
    if missing:
        raise ValueError(f"classes without ground truth: {missing}")
    per_class = {}
    queries = []
    for name in sorted(results_by_class):
        qr = QueryResult(ranked=list(results_by_class[name]), truth=set(truth[name]))
        queries.append(qr)
        per_class[name] = {k: average_precision_at_k(qr, k) for k in ks}
    return {
        "map": {k: map_at_k(queries, k) for k in ks},
        "classes": per_class,
    }


def format_table(scores: dict, ks=DEFAULT_KS, row_title="method", metric="MAP") -> str:
    """Plain-text table: one row per label, one metric@K column per K.

    Output is fully determined by its inputs (no timestamps or paths).
    """
    labels = list(scores)
    name_w = max([len(row_title)] + [len(m) for m in labels])
    header = row_title.ljust(name_w) + "".join(f"  {metric}@{k:<6d}" for k in ks)
    lines = [header.rstrip(), "-" * len(header.rstrip())]
    for m in labels:
        row = m.ljust(name_w)
        for k in ks:
            row += f"  {scores[m][k]:<{len(metric) + 7}.6f}"
        lines.append(row.rstrip())
    return "\n".join(lines) + "\n"


def format_report(method_scores: dict, ks=DEFAULT_KS) -> str:
    """MAP@K table over methods; see format_table."""
    return format_table(method_scores, ks, row_title="method", metric="MAP")


def report_records(method_scores: dict, ks=DEFAULT_KS) -> str:
    """Machine-readable JSON-lines companion to format_report."""
    out = []
    for m in method_scores:
        rec = {"method": m}
        rec.update({f"map@{k}": round(method_scores[m][k], 12) for k in ks})
        out.append(json.dumps(rec, sort_keys=True))
    return "\n".join(out) + "\n"
