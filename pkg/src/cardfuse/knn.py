"""Brute-force kNN classification and the macro-averaged evaluation protocol.

Prediction rule, fixed for cross-platform determinism:

1. neighbors are the k training rows with smallest Euclidean distance;
   distance ties break toward the lower training id (ids default to row
   order and travel with rows under permutation);
2. the majority label among those k wins;
3. vote ties go to the tied label whose nearest member ranks earliest,
   which also resolves equal distances by lower id.

Evaluation predicts subcategories, scores each subcategory on its own test
records, averages subcategory accuracies into a category accuracy, and
averages category accuracies into the overall number. Subcategories with
no test records are excluded with a warning rather than silently counted.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.exceptions import NotFittedError

from .errors import NormalizationError, ParameterError
from .fusion import embed_dataset
from .store import Dataset
from .validation import as_matrix, check_consistent_length

METRICS = ("euclidean", "cosine")

# Accuracies reported for the proprietary greeting-card corpus this layout
# mirrors; not reproducible here (the corpus is not distributed) and used
# only to exercise report formatting.
REFERENCE_PRETRAINED_ACCURACY = {
    "Holidays": {"image_only": 70.12, "text_only": 75.3, "concat": 77.7},
    "Special Occasions": {"image_only": 47.17, "text_only": 54.7, "concat": 58.5},
    "Messages": {"image_only": 48.79, "text_only": 63.57, "concat": 66.0},
    "Average": {"image_only": 55.36, "text_only": 64.5, "concat": 67.4},
}


def _prepare(emb: np.ndarray, metric: str) -> np.ndarray:
    emb = emb.astype(np.float64, copy=False)
    if metric == "cosine":
        norms = np.linalg.norm(emb, axis=1, keepdims=True)
        if (norms == 0).any():
            bad = int(np.flatnonzero(norms[:, 0] == 0)[0])
            raise NormalizationError(f"cosine metric: row {bad} has zero norm")
        emb = emb / norms
    return emb


def _distances(train: np.ndarray, query: np.ndarray, metric: str) -> np.ndarray:
    """Distances from one query row to every training row."""
    if metric == "cosine":
        return 1.0 - train @ query
    diff = train - query
    return (diff * diff).sum(axis=1)


def _vote(order: np.ndarray, labels: np.ndarray, k: int):
    """Majority with earliest-rank tie-breaking over the sorted neighbor list."""
    counts: dict = {}
    first_rank: dict = {}
    for rank in range(k):
        lab = labels[order[rank]]
        counts[lab] = counts.get(lab, 0) + 1
        first_rank.setdefault(lab, rank)
    return min(counts, key=lambda lab: (-counts[lab], first_rank[lab]))


def knn_classify(train_emb, train_labels, query, k: int, ids=None, metric: str = "euclidean"):
    """Predict one label for `query` from the k nearest training rows."""
    if metric not in METRICS:
        raise ParameterError(f"unknown metric {metric!r}")
    train_emb = np.asarray(train_emb)
    n = train_emb.shape[0]
    if k < 1 or k > n:
        raise ParameterError(f"k must satisfy 1 <= k <= n_train={n}, got {k}")
    labels = np.asarray(train_labels)
    ids = np.arange(n) if ids is None else np.asarray(ids)
    train = _prepare(train_emb, metric)
    query = _prepare(np.asarray(query)[None, :], metric)[0]
    dist = _distances(train, query, metric)
    order = np.lexsort((ids, dist))
    return _vote(order, labels, k)


class BruteKNeighborsClassifier(BaseEstimator, ClassifierMixin):
    """Exact kNN with the deterministic tie-breaking documented above.

    Parameters
    ----------
    k : neighbor count (default 20).
    metric : "euclidean" (default) or "cosine".
    """

    def __init__(self, k: int = 20, metric: str = "euclidean"):
        self.k = k
        self.metric = metric

    def fit(self, X, y, ids=None):
        if self.metric not in METRICS:
            raise ParameterError(f"unknown metric {self.metric!r}")
        X = as_matrix(X, "X")
        y = np.asarray(y)
        check_consistent_length(("X", X), ("y", y))
        if self.k < 1 or self.k > X.shape[0]:
            raise ParameterError(f"k must satisfy 1 <= k <= n_train={X.shape[0]}, got {self.k}")
        self.X_ = _prepare(X, self.metric)
        self.y_ = y
        self.ids_ = np.arange(X.shape[0]) if ids is None else np.asarray(ids)
        self.classes_ = np.unique(y)
        return self

    def predict(self, X, n_jobs: int = 1):
        if not hasattr(self, "X_"):
            raise NotFittedError("fit must be called before predict")
        X = as_matrix(X, "X")
        queries = _prepare(X, self.metric)

        def run(chunk_start, chunk):
            out = []
            for q in chunk:
                dist = _distances(self.X_, q, self.metric)
                order = np.lexsort((self.ids_, dist))
                out.append(_vote(order, self.y_, self.k))
            return chunk_start, out

        if n_jobs <= 1 or len(queries) < 2:
            preds = run(0, queries)[1]
        else:
            chunks = np.array_split(np.arange(len(queries)), n_jobs)
            preds = [None] * len(queries)
            with ThreadPoolExecutor(max_workers=n_jobs) as pool:
                futures = [
                    pool.submit(run, int(idx[0]), queries[idx]) for idx in chunks if len(idx)
                ]
                for fut in futures:
                    start, got = fut.result()
                    preds[start : start + len(got)] = got
        return np.asarray(preds)


@dataclass
class EvalReport:
    """Per-subcategory accuracies rolled up into category and overall means."""

    per_subcategory: dict[str, float]
    per_category: dict[str, float]
    overall: float
    k: int
    mode: str
    n_test: int
    excluded_subcategories: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "k": self.k,
            "n_test": self.n_test,
            "overall": self.overall,
            "per_category": dict(sorted(self.per_category.items())),
            "per_subcategory": dict(sorted(self.per_subcategory.items())),
            "excluded_subcategories": sorted(self.excluded_subcategories),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(
            per_subcategory=dict(d["per_subcategory"]),
            per_category=dict(d["per_category"]),
            overall=d["overall"],
            k=d["k"],
            mode=d["mode"],
            n_test=d["n_test"],
            excluded_subcategories=list(d.get("excluded_subcategories", [])),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _rollup(per_subcategory, subcat_to_category, k, mode, n_test, excluded) -> EvalReport:
    by_cat: dict[str, list[float]] = {}
    for subcat, acc in per_subcategory.items():
        by_cat.setdefault(subcat_to_category[subcat], []).append(acc)
    per_category = {cat: float(np.mean(vals)) for cat, vals in by_cat.items()}
    overall = float(np.mean(list(per_category.values()))) if per_category else 0.0
    return EvalReport(
        per_subcategory=per_subcategory,
        per_category=per_category,
        overall=overall,
        k=k,
        mode=mode,
        n_test=n_test,
        excluded_subcategories=excluded,
    )


def evaluate(
    train_emb,
    train_subcats,
    test_emb,
    test_subcats,
    subcat_to_category: dict[str, str],
    k: int = 20,
    mode: str = "",
    metric: str = "euclidean",
    label_level: str = "subcategory",
    n_jobs: int = 1,
) -> EvalReport:
    """Score kNN predictions per subcategory and macro-average upward."""
    train_subcats = np.asarray(train_subcats)
    test_subcats = np.asarray(test_subcats)
    if label_level == "subcategory":
        train_labels = train_subcats
    elif label_level == "category":
        train_labels = np.asarray([subcat_to_category[s] for s in train_subcats])
    else:
        raise ParameterError(f"unknown label_level {label_level!r}")

    clf = BruteKNeighborsClassifier(k=k, metric=metric).fit(train_emb, train_labels)
    predictions = clf.predict(test_emb, n_jobs=n_jobs) if len(test_subcats) else np.asarray([])

    excluded = [s for s in subcat_to_category if s not in set(test_subcats)]
    for subcat in excluded:
        warnings.warn(f"subcategory {subcat!r} has no test records; excluded", stacklevel=2)

    per_subcategory: dict[str, float] = {}
    for subcat in np.unique(test_subcats):
        mask = test_subcats == subcat
        truth = subcat if label_level == "subcategory" else subcat_to_category[subcat]
        per_subcategory[str(subcat)] = float((predictions[mask] == truth).mean())
    return _rollup(
        per_subcategory, subcat_to_category, k, mode, int(len(test_subcats)), excluded
    )


def evaluate_head(
    head,
    test_emb: np.ndarray,
    test_subcats,
    subcat_to_category: dict[str, str],
    k: int = 0,
    mode: str = "fused_head",
    label_level: str = "subcategory",
) -> EvalReport:
    """Argmax-of-logits evaluation for a trained classifier head.

    Reported under its own mode name so head accuracy is never confused
    with kNN accuracy.
    """
    test_subcats = np.asarray(test_subcats)
    logits = head.logits(test_emb)
    classes = np.asarray(head.classes)
    predictions = classes[np.argmax(logits, axis=1)] if len(test_subcats) else np.asarray([])

    excluded = [s for s in subcat_to_category if s not in set(test_subcats)]
    per_subcategory: dict[str, float] = {}
    for subcat in np.unique(test_subcats):
        mask = test_subcats == subcat
        truth = subcat if label_level == "subcategory" else subcat_to_category[subcat]
        per_subcategory[str(subcat)] = float((predictions[mask] == truth).mean())
    return _rollup(
        per_subcategory, subcat_to_category, k, mode, int(len(test_subcats)), excluded
    )


def compare_modes(
    dataset: Dataset,
    params=None,
    k: int = 20,
    metric: str = "euclidean",
    modes=("image_only", "text_only", "concat", "fused"),
    head=None,
    label_level: str = "subcategory",
    n_jobs: int = 1,
) -> dict[str, EvalReport]:
    """One EvalReport per embedding mode over the same split and k."""
    train_records = dataset.train_records()
    test_records = dataset.test_records()
    if not train_records or not test_records:
        raise ParameterError("compare_modes needs both train and test records")
    train_subcats = [r.subcategory for r in train_records]
    test_subcats = [r.subcategory for r in test_records]
    mapping = dataset.subcategory_to_category()

    reports: dict[str, EvalReport] = {}
    for mode in modes:
        if mode == "fused_head":
            if head is None or params is None:
                raise ParameterError("mode 'fused_head' requires params and a classifier head")
            test_emb = embed_dataset(params, test_records, "fused")
            reports[mode] = evaluate_head(
                head, test_emb, test_subcats, mapping, k=k, label_level=label_level
            )
            continue
        train_emb = embed_dataset(params, train_records, mode)
        test_emb = embed_dataset(params, test_records, mode)
        reports[mode] = evaluate(
            train_emb,
            train_subcats,
            test_emb,
            test_subcats,
            mapping,
            k=k,
            mode=mode,
            metric=metric,
            label_level=label_level,
            n_jobs=n_jobs,
        )
    return reports


def render_report_table(reports: dict[str, EvalReport]) -> str:
    """Aligned text table: category rows plus an Average row, one column per mode."""
    modes = list(reports)
    categories = sorted({cat for rep in reports.values() for cat in rep.per_category})
    rows = []
    header = ["Category"] + modes
    for cat in categories:
        row = [cat]
        for mode in modes:
            acc = reports[mode].per_category.get(cat)
            row.append("-" if acc is None else f"{100.0 * acc:.2f}")
        rows.append(row)
    avg_row = ["Average"] + [f"{100.0 * reports[m].overall:.2f}" for m in modes]
    rows.append(avg_row)

    widths = [max(len(r[i]) for r in [header] + rows) for i in range(len(header))]
    lines = []
    for r in [header] + rows:
        lines.append("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(r)).rstrip())
    return "\n".join(lines) + "\n"


def parse_report_table(text: str) -> dict[str, dict[str, float]]:
    """Inverse of render_report_table for round-trip checks: row -> mode -> value."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    header = lines[0].split()
    modes = header[1:]
    out: dict[str, dict[str, float]] = {}
    for ln in lines[1:]:
        cells = ln.split()
        values = cells[len(cells) - len(modes) :]
        name = " ".join(cells[: len(cells) - len(modes)])
        out[name] = {m: float(v) for m, v in zip(modes, values)}
    return out
