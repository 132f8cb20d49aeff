"""Fuzzy-classification pre-selection over an archive of true evaluations.

The archive keeps the most recent truly-evaluated policies with their
fitness.  Before each expensive evaluation, the archived records are split
into "promising" / "unpromising" halves by fitness rank, and each sampled
candidate is scored by fuzzy k-NN membership in the promising class,
computed in the current embedded space.  Only the winning candidate goes
on to a true evaluation; the surrogate itself never calls the simulator.
"""

from __future__ import annotations

from dataclasses import dataclass
import json
import math

import numpy as np

from .errors import InputError


@dataclass(frozen=True)
class EvaluationRecord:
    x: np.ndarray          # ambient-space policy vector
    fitness: float
    generation: int
    process_id: int


class EvaluationArchive:
    """Bounded FIFO of true-evaluation records; oldest evicted first."""

    def __init__(self, capacity: int = 200):
        if capacity < 1:
            raise InputError(f"archive capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self._records: list[EvaluationRecord] = []

    def __len__(self) -> int:
        return len(self._records)

    def append(self, record: EvaluationRecord) -> None:
        if not math.isfinite(record.fitness):
            raise InputError("archive fitness must be finite")
        self._records.append(record)
        if len(self._records) > self.capacity:
            del self._records[0]

    def snapshot(self) -> list[EvaluationRecord]:
        return list(self._records)

    def dump_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            for rec in self._records:
                fh.write(json.dumps(
                    {"generation": rec.generation, "process_id": rec.process_id,
                     "fitness": rec.fitness},
                    sort_keys=True) + "\n")


@dataclass
class FcpsConfig:
    k: int = 3                       # neighbors per membership vote
    fuzzifier: float = 2.0           # exponent parameter, > 1
    label_split: float = 0.5         # promising fraction of the archive
    min_archive: int = 6             # records needed before the classifier runs
    top_quantile: float | None = None  # None: pick among argmax-membership ties

    def __post_init__(self):
        if self.k < 1:
            raise InputError(f"k must be >= 1, got {self.k}")
        if self.fuzzifier <= 1.0:
            raise InputError(f"fuzzifier must be > 1, got {self.fuzzifier}")
        if not 0.0 < self.label_split < 1.0:
            raise InputError(f"label_split must be in (0, 1), got {self.label_split}")
        if self.min_archive < max(self.k, 2):
            raise InputError(
                f"min_archive must be >= max(k, 2) = {max(self.k, 2)}, got {self.min_archive}"
            )


def label(records: list[EvaluationRecord], split: float) -> np.ndarray | None:
    """Crisp promising/unpromising memberships for the records, in order.

    The top ceil(split * N) records by fitness get membership 1.0, the rest
    0.0.  Fitness ties rank the newer record higher.  Returns None when the
    archive is too small to split (fewer than 2 records).
    """
    n = len(records)
    if n < 2:
        return None
    # descending fitness, ties broken toward recency; records arrive oldest-first
    fitness = np.fromiter((r.fitness for r in records), dtype=np.float64, count=n)
    order = np.lexsort((-np.arange(n), -fitness))
    n_promising = math.ceil(split * n)
    u = np.zeros(n)
    u[order[:n_promising]] = 1.0
    return u


def membership(y: np.ndarray, points: np.ndarray, u: np.ndarray,
               k: int, fuzzifier: float) -> float:
    """Fuzzy k-NN membership of ``y`` in the promising class.

    With N_k the k nearest labeled points by Euclidean distance, each
    neighbor votes with weight ||y - y_j||^(-2/(fuzzifier-1)):

        membership = sum_j u_j w_j / sum_j w_j

    An exact-zero distance short-circuits to that point's own membership.
    """
    y = np.asarray(y, dtype=np.float64)
    points = np.asarray(points, dtype=np.float64)
    if len(points) < k:
        raise InputError(f"need at least k={k} labeled points, got {len(points)}")
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(points))):
        raise InputError("membership inputs must be finite")
    d2 = np.einsum("ij,ij->i", points - y, points - y)
    zero = np.flatnonzero(d2 == 0.0)
    if zero.size:
        return float(u[zero[0]])
    nearest = np.argsort(d2, kind="stable")[:k]
    w = d2[nearest] ** (-1.0 / (fuzzifier - 1.0))
    return float(np.dot(u[nearest], w) / np.sum(w))


def _membership_batch(ys: np.ndarray, points: np.ndarray, u: np.ndarray,
                      k: int, fuzzifier: float) -> np.ndarray:
    """Vectorized :func:`membership` for a (M, d) candidate block.

    Unlike the scalar form, exact distance ties at the k-th neighbor are
    resolved by argpartition order (deterministic, otherwise unspecified).
    """
    diff = ys[:, None, :] - points[None, :, :]
    d2 = np.einsum("mnd,mnd->mn", diff, diff)  # (M, N)
    if k < len(points):
        nearest = np.argpartition(d2, k - 1, axis=1)[:, :k]
    else:
        nearest = np.broadcast_to(np.arange(len(points)), d2.shape)
    nd2 = np.take_along_axis(d2, nearest, axis=1)
    out = np.empty(len(ys))
    exact = (d2 == 0.0).any(axis=1)
    if np.any(exact):
        out[exact] = u[np.argmax(d2[exact] == 0.0, axis=1)]  # first zero by index
    rest = ~exact
    if np.any(rest):
        w = nd2[rest] ** (-1.0 / (fuzzifier - 1.0))
        out[rest] = (u[nearest[rest]] * w).sum(axis=1) / w.sum(axis=1)
    return out


def preselect(candidates_embedded: np.ndarray,
              archive: EvaluationArchive,
              emb,
              cfg: FcpsConfig,
              rng: np.random.Generator,
              bounds: tuple[float, float] | None = None,
              archive_encoded: np.ndarray | None = None,
              archive_ambient: np.ndarray | None = None,
              labels: np.ndarray | None = None,
              ) -> tuple[int, np.ndarray | None]:
    """Pick which of the M embedded candidates earns the true evaluation.

    Cold start (archive smaller than ``cfg.min_archive``): a uniformly
    random candidate.  Otherwise the archived policies are encoded with the
    current embedding, labeled, and each candidate scored by fuzzy k-NN
    membership; the winner is drawn uniformly from the argmax-membership
    ties (or, with ``cfg.top_quantile`` set, from the top quantile).

    RNG discipline: consumes exactly one integer draw per call, and none at
    all when M == 1.  Never calls the fitness function.

    ``archive_encoded`` short-circuits the encoding step when the caller
    already holds the records encoded under ``emb`` (fixed-embedding runs);
    ``archive_ambient`` passes a prebuilt (N, D) stack of the records and
    ``labels`` their precomputed crisp memberships, to avoid redundant work
    across the processes of one generation.  All must be ordered like the
    archive.

    Returns (chosen index, membership per candidate or None on cold start).
    """
    m = len(candidates_embedded)
    if m < 1:
        raise InputError("need at least one candidate")
    if m == 1:
        return 0, None
    records = archive.snapshot()
    if len(records) < cfg.min_archive:
        return int(rng.integers(m)), None
    u = label(records, cfg.label_split) if labels is None else labels
    if archive_encoded is None:
        if archive_ambient is None:
            archive_ambient = np.stack([rec.x for rec in records])  # (N, D)
        archive_encoded = emb.encode(archive_ambient, bounds=bounds)  # (N, d)
    scores = _membership_batch(np.asarray(candidates_embedded), archive_encoded,
                               u, cfg.k, cfg.fuzzifier)
    if cfg.top_quantile is not None:
        n_top = max(1, math.ceil(cfg.top_quantile * m))
        eligible = np.argsort(-scores, kind="stable")[:n_top]
    else:
        eligible = np.flatnonzero(scores == scores.max())
    return int(eligible[rng.integers(len(eligible))]), scores
