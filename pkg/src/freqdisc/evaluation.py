"""Hungarian cluster alignment and clustering accuracy over All/Old/New slices."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np


def hungarian(profit) -> np.ndarray:
    """Maximum-profit perfect matching of a square matrix, row -> column.

    Shortest-augmenting-path assignment on the negated profits, O(n^3).
    Column scans run in index order, so ties resolve to the lowest index.
    """
    p = np.asarray(profit, dtype=np.float64)
    if p.ndim != 2 or p.shape[0] != p.shape[1]:
        raise ValueError(f"profit matrix must be square, got {p.shape}")
    if not np.all(np.isfinite(p)):
        raise ValueError("profit matrix contains non-finite entries")
    n = p.shape[0]
    if n == 0:
        return np.zeros(0, dtype=int)
    cost = -p

    INF = np.inf
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    match = np.zeros(n + 1, dtype=int)  # match[j] = row assigned to column j
    way = np.zeros(n + 1, dtype=int)
    for i in range(1, n + 1):
        match[0] = i
        j0 = 0
        minv = np.full(n + 1, INF)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = match[j0]
            delta = INF
            j1 = 0
            for j in range(1, n + 1):
                if used[j]:
                    continue
                cur = cost[i0 - 1, j - 1] - u[i0] - v[j]
                if cur < minv[j]:
                    minv[j] = cur
                    way[j] = j0
                if minv[j] < delta:
                    delta = minv[j]
                    j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[match[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if match[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            match[j0] = match[j1]
            j0 = j1
    assignment = np.zeros(n, dtype=int)
    for j in range(1, n + 1):
        assignment[match[j] - 1] = j - 1
    return assignment


@dataclass
class EvalReport:
    """Per-(domain, subset) accuracies under one global cluster alignment."""

    alignment: dict  # predicted cluster -> ground-truth class
    results: dict = field(default_factory=dict)  # domain -> subset -> {acc, n}

    def accuracy(self, domain: str, subset: str = "All"):
        entry = self.results.get(domain, {}).get(subset)
        return None if entry is None else entry["acc"]

    def to_json(self) -> str:
        payload = {
            "alignment": {str(k): int(val) for k, val in self.alignment.items()},
            "results": self.results,
        }
        return json.dumps(payload, indent=2)

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_json())

    def write_csv_row(self, path, run_id="") -> None:
        """Flat one-row CSV for aggregation across seeds."""
        cols, vals = ["run_id"], [run_id]
        for domain in sorted(self.results):
            for subset in ("All", "Old", "New"):
                entry = self.results[domain].get(subset)
                cols += [f"{domain}_{subset}_acc", f"{domain}_{subset}_n"]
                if entry is None:
                    vals += ["", "0"]
                else:
                    vals += [f"{entry['acc']:.6f}", str(entry["n"])]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(cols)
            writer.writerow(vals)


def cluster_acc(y_true, y_pred, old_classes, domain_labels) -> EvalReport:
    """Hungarian-aligned clustering accuracy.

    One alignment is computed from the confusion counts over every sample,
    then reused to score each (domain, All/Old/New) slice. Old = samples
    whose true class is in old_classes.
    """
    y_true = np.asarray(y_true, dtype=int)
    y_pred = np.asarray(y_pred, dtype=int)
    domain_labels = np.asarray(domain_labels)
    if y_true.shape != y_pred.shape or y_true.shape != domain_labels.shape:
        raise ValueError("label vectors must share length")
    if y_true.size == 0:
        raise ValueError("empty evaluation set")
    old = set(int(c) for c in old_classes)

    n = int(max(y_true.max(), y_pred.max())) + 1
    confusion = np.zeros((n, n))
    for t, pr in zip(y_true, y_pred):
        confusion[pr, t] += 1
    assignment = hungarian(confusion)
    psi = {pred: int(assignment[pred]) for pred in range(n)}

    aligned = np.array([psi[int(pr)] for pr in y_pred])
    correct = aligned == y_true

    report = EvalReport(alignment=psi)
    domains = ["overall"] + sorted(set(domain_labels.tolist()))
    for domain in domains:
        in_domain = (
            np.ones_like(correct, dtype=bool)
            if domain == "overall"
            else domain_labels == domain
        )
        is_old = np.array([int(t) in old for t in y_true])
        slices = {
            "All": in_domain,
            "Old": in_domain & is_old,
            "New": in_domain & ~is_old,
        }
        report.results[domain] = {}
        for name, mask in slices.items():
            count = int(mask.sum())
            if count == 0:
                report.results[domain][name] = None
            else:
                report.results[domain][name] = {
                    "acc": float(correct[mask].mean()),
                    "n": count,
                }
    return report
