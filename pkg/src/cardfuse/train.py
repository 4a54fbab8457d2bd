"""End-to-end training of the fusion network.

Two objectives:

* ``triplet`` -- squared-distance margin loss over mined triples,
  Loss = sum_i max(0, d2(a_i, p_i) - d2(a_i, n_i) + margin),
  with in-batch mining (semi_hard, hard, or random) over all ordered
  same-class pairs. Batches are sampled class-balanced so every anchor has
  a positive and a negative.
* ``cross_entropy`` -- mean negative log softmax through a linear
  classifier head on top of the fused embedding.

Everything is seeded: initialization, batch composition, and mining are
reproducible bit-for-bit for a given config.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .errors import DataError, MiningError, ParameterError, TrainingError
from .fusion import (
    FusionParams,
    fusion_backward,
    fusion_forward,
    init_fusion_params,
)
from .store import Dataset

OBJECTIVES = ("triplet", "cross_entropy")
MINING_STRATEGIES = ("semi_hard", "hard", "random")
LABEL_LEVELS = ("subcategory", "category")


@dataclass
class TripletBatch:
    """Parallel (anchor, positive, negative) index lists into a batch."""

    anchor_idx: np.ndarray
    positive_idx: np.ndarray
    negative_idx: np.ndarray

    def __len__(self) -> int:
        return len(self.anchor_idx)

    def check_labels(self, labels) -> None:
        labels = np.asarray(labels)
        for a, p, n in zip(self.anchor_idx, self.positive_idx, self.negative_idx):
            if labels[a] != labels[p] or labels[a] == labels[n] or a == p:
                raise DataError(f"invalid triple ({a}, {p}, {n}) for the given labels")


@dataclass
class ClassifierHead:
    """Linear layer mapping fused embeddings to class logits."""

    w_cls: np.ndarray
    b_cls: np.ndarray
    classes: list[str]

    def logits(self, emb: np.ndarray) -> np.ndarray:
        return nn.linear_forward(self.w_cls, self.b_cls, emb)

    def named_tensors(self) -> dict[str, np.ndarray]:
        return {"w_cls": self.w_cls, "b_cls": self.b_cls}


def init_classifier_head(n_classes: int, dim: int, classes, seed=0, dtype=nn.DTYPE) -> ClassifierHead:
    rng = np.random.default_rng(seed)
    return ClassifierHead(
        w_cls=nn.glorot_uniform(rng, n_classes, dim, dtype),
        b_cls=np.zeros(n_classes, dtype=dtype),
        classes=list(classes),
    )


@dataclass
class TrainConfig:
    objective: str = "triplet"
    margin: float = 0.2
    batch_size: int = 64
    steps: int = 2000
    optimizer: str = "adam"
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    mining: str = "semi_hard"
    label_level: str = "subcategory"
    samples_per_class: int = 4
    hidden: int | None = None
    hidden2: int | None = None
    gate_variant: str = "sigmoid_after_product"
    l2_normalize_output: bool = False

    def validate(self) -> None:
        if self.objective not in OBJECTIVES:
            raise ParameterError(f"unknown objective {self.objective!r}")
        if self.mining not in MINING_STRATEGIES:
            raise ParameterError(f"unknown mining strategy {self.mining!r}")
        if self.label_level not in LABEL_LEVELS:
            raise ParameterError(f"unknown label_level {self.label_level!r}")
        if self.margin <= 0:
            raise ParameterError(f"margin must be > 0, got {self.margin}")
        if self.steps < 0:
            raise ParameterError(f"steps must be >= 0, got {self.steps}")
        if self.batch_size < 2:
            raise ParameterError(f"batch_size must be >= 2, got {self.batch_size}")
        if self.samples_per_class < 2:
            raise ParameterError(f"samples_per_class must be >= 2, got {self.samples_per_class}")
        if self.learning_rate <= 0:
            raise ParameterError(f"learning_rate must be > 0, got {self.learning_rate}")


@dataclass
class TrainResult:
    params: FusionParams
    head: ClassifierHead | None
    losses: list[float] = field(default_factory=list)


def triplet_loss(emb: np.ndarray, triplets: TripletBatch, margin: float):
    """Hinged squared-distance triplet loss, summed over triples.

    Returns (loss, grad) where grad has emb's shape. Triples exactly on the
    hinge boundary are inactive and contribute neither loss nor gradient.
    An empty triple set yields loss 0 with a warning.
    """
    grad = np.zeros_like(emb)
    if len(triplets) == 0:
        warnings.warn("triplet_loss called with an empty triple set", stacklevel=2)
        return 0.0, grad

    emb64 = emb.astype(np.float64, copy=False)
    a = emb64[triplets.anchor_idx]
    p = emb64[triplets.positive_idx]
    n = emb64[triplets.negative_idx]
    d_ap = ((a - p) ** 2).sum(axis=1)
    d_an = ((a - n) ** 2).sum(axis=1)
    violation = d_ap - d_an + margin
    active = violation > 0
    loss = float(violation[active].sum())

    if active.any():
        ga = 2.0 * (n - p)[active]
        gp = 2.0 * (p - a)[active]
        gn = 2.0 * (a - n)[active]
        acc = np.zeros(emb64.shape, dtype=np.float64)
        np.add.at(acc, triplets.anchor_idx[active], ga)
        np.add.at(acc, triplets.positive_idx[active], gp)
        np.add.at(acc, triplets.negative_idx[active], gn)
        grad = acc.astype(emb.dtype, copy=False)
    return loss, grad


def squared_distances(emb: np.ndarray) -> np.ndarray:
    """Pairwise squared Euclidean distances via explicit differences."""
    emb64 = emb.astype(np.float64, copy=False)
    n = emb64.shape[0]
    out = np.empty((n, n), dtype=np.float64)
    for i in range(n):
        diff = emb64 - emb64[i]
        out[i] = (diff * diff).sum(axis=1)
    return out


def _encode_labels(labels) -> np.ndarray:
    labels = np.asarray(labels)
    _, codes = np.unique(labels, return_inverse=True)
    return codes


def mine_triplets(
    emb: np.ndarray, labels, margin: float, seed=None, strategy: str = "semi_hard"
) -> TripletBatch:
    """Select one negative per ordered same-class (anchor, positive) pair.

    semi_hard: prefer the closest negative inside the band
    d2(a,p) < d2(a,n) < d2(a,p) + margin. If the band is empty, fall back
    to the closest negative with d2(a,n) > d2(a,p); if none exists, to the
    farthest negative. Distance ties break toward the lowest index, so the
    selection is deterministic and `seed` is only consumed by the random
    strategy.
    """
    if strategy not in MINING_STRATEGIES:
        raise ParameterError(f"unknown mining strategy {strategy!r}")
    codes = _encode_labels(labels)
    n = len(codes)
    if emb.shape[0] != n:
        raise ParameterError(f"got {emb.shape[0]} embeddings but {n} labels")
    dist = squared_distances(emb)
    rng = np.random.default_rng(seed)
    raw_labels = np.asarray(labels)

    anchors, positives, negatives = [], [], []
    for a in range(n):
        neg_pool = np.flatnonzero(codes != codes[a])
        pos_pool = np.flatnonzero((codes == codes[a]) & (np.arange(n) != a))
        if len(pos_pool) == 0:
            continue
        if len(neg_pool) == 0:
            raise MiningError(f"no negatives available for class {raw_labels[a]!r}")
        d_neg = dist[a, neg_pool]
        for p in pos_pool:
            d_ap = dist[a, p]
            if strategy == "random":
                chosen = neg_pool[rng.integers(len(neg_pool))]
            elif strategy == "hard":
                chosen = neg_pool[int(np.argmin(d_neg))]
            else:
                in_band = (d_neg > d_ap) & (d_neg < d_ap + margin)
                beyond = d_neg > d_ap
                if in_band.any():
                    cands = np.flatnonzero(in_band)
                    chosen = neg_pool[cands[int(np.argmin(d_neg[cands]))]]
                elif beyond.any():
                    cands = np.flatnonzero(beyond)
                    chosen = neg_pool[cands[int(np.argmin(d_neg[cands]))]]
                else:
                    chosen = neg_pool[int(np.argmax(d_neg))]
            anchors.append(a)
            positives.append(int(p))
            negatives.append(int(chosen))
    return TripletBatch(
        anchor_idx=np.asarray(anchors, dtype=np.intp),
        positive_idx=np.asarray(positives, dtype=np.intp),
        negative_idx=np.asarray(negatives, dtype=np.intp),
    )


def mine_semi_hard(emb: np.ndarray, labels, margin: float, seed=None) -> TripletBatch:
    return mine_triplets(emb, labels, margin, seed=seed, strategy="semi_hard")


def cross_entropy_loss(logits: np.ndarray, labels: np.ndarray):
    """Mean negative log softmax; returns (loss, grad wrt logits).

    Stabilized by per-row max subtraction. grad = (softmax - onehot) / batch.
    """
    labels = np.asarray(labels)
    if logits.ndim != 2 or logits.shape[0] != len(labels):
        raise ParameterError(
            f"logits shape {logits.shape} does not match {len(labels)} labels"
        )
    n, c = logits.shape
    if labels.min(initial=0) < 0 or labels.max(initial=-1) >= c:
        bad = labels[(labels < 0) | (labels >= c)][0]
        raise DataError(f"label index {bad} out of range for {c} classes")

    z = logits.astype(np.float64, copy=False)
    z = z - z.max(axis=1, keepdims=True)
    expz = np.exp(z)
    softmax = expz / expz.sum(axis=1, keepdims=True)
    picked = softmax[np.arange(n), labels]
    loss = float(-np.log(picked).mean())

    grad = softmax
    grad[np.arange(n), labels] -= 1.0
    grad /= n
    return loss, grad.astype(logits.dtype, copy=False)


class _BalancedBatcher:
    """Class-balanced batch sampler for the triplet objective.

    Draws up to batch_size // samples_per_class distinct classes per step
    (at least 2), then samples_per_class members per class without
    replacement (the whole class when it is smaller). Only classes with at
    least 2 train records are eligible.
    """

    def __init__(self, codes: np.ndarray, batch_size: int, samples_per_class: int, rng):
        self.rng = rng
        self.samples_per_class = samples_per_class
        self.members = []
        for code in np.unique(codes):
            idx = np.flatnonzero(codes == code)
            if len(idx) >= 2:
                self.members.append(idx)
        if len(self.members) < 2:
            raise TrainingError(
                "triplet objective needs >= 2 classes with >= 2 train records each"
            )
        self.classes_per_batch = max(2, batch_size // samples_per_class)

    def next_batch(self) -> np.ndarray:
        k = min(self.classes_per_batch, len(self.members))
        chosen = self.rng.choice(len(self.members), size=k, replace=False)
        picks = []
        for ci in chosen:
            idx = self.members[ci]
            take = min(self.samples_per_class, len(idx))
            picks.append(self.rng.choice(idx, size=take, replace=False))
        return np.concatenate(picks)


class _EpochBatcher:
    """Plain shuffled batches, reshuffling at each epoch boundary."""

    def __init__(self, n: int, batch_size: int, rng):
        self.n = n
        self.batch_size = min(batch_size, n)
        self.rng = rng
        self.order = rng.permutation(n)
        self.cursor = 0

    def next_batch(self) -> np.ndarray:
        if self.cursor + self.batch_size > self.n:
            self.order = self.rng.permutation(self.n)
            self.cursor = 0
        batch = self.order[self.cursor : self.cursor + self.batch_size]
        self.cursor += self.batch_size
        return batch


def train(dataset: Dataset, cfg: TrainConfig | None = None) -> TrainResult:
    """Run cfg.steps optimizer steps over seeded mini-batches.

    Returns the trained parameters, the classifier head when the objective
    is cross_entropy, and the per-step loss curve. Deterministic given
    cfg.seed.
    """
    cfg = cfg or TrainConfig()
    cfg.validate()
    train_records = dataset.train_records()
    if not train_records:
        raise ParameterError("dataset has no train records")

    labels = [
        r.subcategory if cfg.label_level == "subcategory" else r.category for r in train_records
    ]
    vocab = sorted(
        {r.subcategory if cfg.label_level == "subcategory" else r.category for r in dataset.records}
    )
    label_to_idx = {lab: i for i, lab in enumerate(vocab)}
    codes = np.asarray([label_to_idx[lab] for lab in labels], dtype=np.intp)

    seeds = np.random.SeedSequence(cfg.seed).spawn(3)
    params = init_fusion_params(
        dataset.dim_image,
        dataset.dim_text,
        hidden=cfg.hidden,
        hidden2=cfg.hidden2,
        gate_variant=cfg.gate_variant,
        l2_normalize_output=cfg.l2_normalize_output,
        seed=np.random.default_rng(seeds[0]),
    )
    head = None
    tensors = dict(params.named_tensors())
    if cfg.objective == "cross_entropy":
        head = init_classifier_head(
            len(vocab), params.dim_image, vocab, seed=np.random.default_rng(seeds[1])
        )
        tensors.update(head.named_tensors())

    state = nn.OptimizerState(
        algorithm=cfg.optimizer,
        learning_rate=cfg.learning_rate,
        beta1=cfg.beta1,
        beta2=cfg.beta2,
        eps=cfg.eps,
    )
    rng = np.random.default_rng(seeds[2])

    image_all = np.stack([r.image_vec for r in train_records])
    text_all = np.stack([r.text_vec for r in train_records])

    if cfg.objective == "triplet":
        batcher = _BalancedBatcher(codes, cfg.batch_size, cfg.samples_per_class, rng)
    else:
        batcher = _EpochBatcher(len(train_records), cfg.batch_size, rng)

    losses: list[float] = []
    for step in range(cfg.steps):
        batch = batcher.next_batch()
        img = image_all[batch]
        txt = text_all[batch]
        emb, trace = fusion_forward(params, img, txt)
        if not np.isfinite(emb).all():
            ids = [train_records[i].id for i in batch]
            raise TrainingError(f"non-finite embedding at step {step} on batch {ids}")

        if cfg.objective == "triplet":
            triplets = mine_triplets(
                emb, codes[batch], cfg.margin, seed=rng.integers(2**63), strategy=cfg.mining
            )
            loss, grad_emb = triplet_loss(emb, triplets, cfg.margin)
            grads, _, _ = fusion_backward(trace, params, grad_emb)
        else:
            logits = head.logits(emb)
            loss, grad_logits = cross_entropy_loss(logits, codes[batch])
            d_wcls, d_bcls, grad_emb = nn.linear_backward(head.w_cls, emb, grad_logits)
            grads, _, _ = fusion_backward(trace, params, grad_emb)
            grads["w_cls"] = d_wcls
            grads["b_cls"] = d_bcls

        if not np.isfinite(loss):
            ids = [train_records[i].id for i in batch]
            raise TrainingError(f"non-finite loss at step {step} on batch {ids}")
        nn.optimizer_step(tensors, grads, state)
        losses.append(loss)

    return TrainResult(params=params, head=head, losses=losses)


def write_loss_csv(losses, path) -> None:
    """CSV loss curve: header plus one (step, loss) row per optimizer step."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("step,loss\n")
        for step, loss in enumerate(losses):
            fh.write(f"{step},{loss:.10g}\n")
