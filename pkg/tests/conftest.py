import numpy as np
import pytest

from cardfuse.store import Dataset, EmbeddingRecord


def finite_difference(f, x, h=1e-5):
    """Central-difference gradient of scalar f at x, one coordinate at a time."""
    x = x.astype(np.float64)
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + h
        up = f(x)
        x[idx] = orig - h
        down = f(x)
        x[idx] = orig
        grad[idx] = (up - down) / (2.0 * h)
        it.iternext()
    return grad


def max_rel_err(analytic, numeric, floor=1e-4):
    """Per-coordinate relative error with an absolute floor on the denominator."""
    a = np.asarray(analytic, dtype=np.float64)
    b = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0


def oracle_mine(emb, labels, margin):
    """Exhaustive O(n^3) application of the documented triplet selection rule."""
    n = len(labels)
    d = [
        [float(np.dot(emb[i] - emb[j], emb[i] - emb[j])) for j in range(n)]
        for i in range(n)
    ]
    out = []
    for a in range(n):
        negs = [m for m in range(n) if labels[m] != labels[a]]
        for p in range(n):
            if p == a or labels[p] != labels[a]:
                continue
            if not negs:
                raise AssertionError("no negatives")
            band = [m for m in negs if d[a][p] < d[a][m] < d[a][p] + margin]
            beyond = [m for m in negs if d[a][m] > d[a][p]]
            if band:
                chosen = min(band, key=lambda m: (d[a][m], m))
            elif beyond:
                chosen = min(beyond, key=lambda m: (d[a][m], m))
            else:
                chosen = max(negs, key=lambda m: (d[a][m], -m))
            out.append((a, p, chosen))
    return out


def oracle_knn_predict(train, labels, queries, ks):
    """Exhaustive sort with the documented kNN tie-breaks; one prediction
    list per k in ks. Kept independent of the library's vectorized path."""
    train = np.asarray(train, np.float64)
    preds = {k: [] for k in ks}
    for q in np.asarray(queries, np.float64):
        scored = sorted((float(np.dot(t - q, t - q)), i) for i, t in enumerate(train))
        for k in ks:
            counts = {}
            for rank, (_, i) in enumerate(scored[:k]):
                lab = labels[i]
                if lab not in counts:
                    counts[lab] = [0, rank]
                counts[lab][0] += 1
            preds[k].append(min(counts.items(), key=lambda kv: (-kv[1][0], kv[1][1]))[0])
    return {k: np.asarray(v) for k, v in preds.items()}


def make_records(image, text, subcats, cats=None, split="train"):
    """Build records from row matrices and parallel label lists."""
    cats = cats or subcats
    return [
        EmbeddingRecord(
            id=f"r{i:03d}",
            category=str(cats[i]),
            subcategory=str(subcats[i]),
            split=split,
            image_vec=np.asarray(image[i], dtype=np.float32),
            text_vec=np.asarray(text[i], dtype=np.float32),
        )
        for i in range(len(subcats))
    ]


@pytest.fixture
def tiny_dataset():
    """12 records, 2 categories x 2 subcategories, dim 6/6, deterministic."""
    rng = np.random.default_rng(11)
    subcats, cats = [], []
    for ci in range(2):
        for si in range(2):
            for _ in range(3):
                cats.append(f"cat{ci}")
                subcats.append(f"cat{ci}.sub{si}")
    n = len(subcats)
    image = rng.standard_normal((n, 6))
    text = rng.standard_normal((n, 6))
    records = make_records(image, text, subcats, cats)
    for i, rec in enumerate(records):
        rec.split = "test" if i % 3 == 2 else "train"
    return Dataset(dim_image=6, dim_text=6, records=records)
