"""Negatively correlated search over flat policy vectors.

Lambda parallel search processes each hold one parent and an isotropic
Gaussian search distribution N(x_i, sigma_i^2 I).  Per iteration a process
samples M offspring, routes them through the embedding and the fuzzy
pre-selection surrogate, truly evaluates the single survivor, and keeps
whichever of parent/offspring scores better on fitness plus a diversity
bonus: the minimum Bhattacharyya distance from the process's search
distribution to its siblings'.  Step sizes follow the classic 1/5 success
rule on an epoch schedule.

Exactly one true evaluation is charged per process per iteration, no
matter how many candidates the surrogate screens.
"""

from __future__ import annotations

from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
import math

import numpy as np

from . import embedding as emb_mod
from .embedding import IdentityEmbedding, RandomEmbedding
from .errors import ConfigurationError, InputError
from .seeding import (
    STREAM_EMBEDDING,
    STREAM_INIT,
    STREAM_SAMPLING,
    STREAM_SURROGATE,
    stream_rng,
    stream_seed,
)
from .surrogate import EvaluationArchive, EvaluationRecord, FcpsConfig, label, preselect


@dataclass
class NcsConfig:
    n_processes: int = 6     # parallel search processes (lambda)
    epoch: int = 5           # iterations between step-size updates
    r: float = 1.2           # step-size multiplier of the 1/5 rule
    phi: float = 1.0         # weight of the diversity term in selection
    n_candidates: int = 3    # offspring sampled per iteration (M)
    sigma0: float = 0.02     # initial step size
    normalize_fd: bool = False  # min-max normalize f and d within a generation

    def __post_init__(self):
        if self.n_processes < 1:
            raise ConfigurationError(f"n_processes must be >= 1, got {self.n_processes}")
        if self.epoch < 1:
            raise ConfigurationError(f"epoch must be >= 1, got {self.epoch}")
        if self.r <= 1.0:
            raise ConfigurationError(f"r must be > 1, got {self.r}")
        if self.n_candidates < 1:
            raise ConfigurationError(f"n_candidates must be >= 1, got {self.n_candidates}")
        if self.sigma0 <= 0:
            raise ConfigurationError(f"sigma0 must be > 0, got {self.sigma0}")
        if self.phi < 0:
            raise ConfigurationError(f"phi must be >= 0, got {self.phi}")


@dataclass
class EmbeddingConfig:
    dim: int = 100                   # embedded dimension d
    mode: str = "per_iteration"      # per_iteration | fixed | bypass
    sample_in_subspace: bool = False  # ablation: sample y ~ U[l,h]^d directly
    max_dense_entries: int = 50_000_000
    dtype: str = "float64"           # matrix storage/product precision

    def __post_init__(self):
        if self.mode not in ("per_iteration", "fixed", "bypass"):
            raise ConfigurationError(f"unknown embedding mode {self.mode!r}")
        if self.dim < 1:
            raise ConfigurationError(f"embedding dim must be >= 1, got {self.dim}")
        if self.sample_in_subspace and self.mode == "bypass":
            raise ConfigurationError("sample_in_subspace requires an embedding")
        if self.dtype not in ("float64", "float32"):
            raise ConfigurationError(f"embedding dtype must be float64 or float32, "
                                     f"got {self.dtype!r}")


@dataclass
class SearchProcess:
    x: np.ndarray
    sigma: float
    fitness: float
    rng: np.random.Generator
    id: int
    success_count: int = 0
    iter_in_epoch: int = 0


@dataclass
class IterationReport:
    generation: int
    process_id: int
    fitness: float            # true fitness of the evaluated offspring
    accepted: bool
    sigma: float              # step size after this iteration's adaptation
    chosen_index: int
    memberships: list[float] | None
    diversity_parent: float
    diversity_offspring: float
    offspring: np.ndarray     # the truly evaluated vector (accepted or not)


def sample_candidates(process: SearchProcess, m: int, dim: int | None = None) -> np.ndarray:
    """M i.i.d. draws from N(x, sigma^2 I) off the process's own stream.

    Consumes exactly m * D standard normals, always in one block, so runs
    replay exactly from the stream state.
    """
    if m < 1:
        raise InputError(f"need m >= 1, got {m}")
    dim = len(process.x) if dim is None else dim
    noise = process.rng.standard_normal(m * dim).reshape(m, dim)
    np.multiply(noise, process.sigma, out=noise)
    noise += process.x
    return noise


def bhattacharyya(mu1: np.ndarray, s1: float, mu2: np.ndarray, s2: float) -> float:
    """Bhattacharyya distance between isotropic Gaussians N(mu, s^2 I).

        D_B = ||mu1 - mu2||^2 / (4 (s1^2 + s2^2))
              + (n/2) ln( (s1^2 + s2^2) / (2 s1 s2) )
    """
    if s1 <= 0 or s2 <= 0:
        raise InputError(f"standard deviations must be positive, got {s1}, {s2}")
    mu1 = np.asarray(mu1, dtype=np.float64)
    mu2 = np.asarray(mu2, dtype=np.float64)
    if mu1.shape != mu2.shape:
        raise InputError(f"mean shapes differ: {mu1.shape} vs {mu2.shape}")
    diff = mu1 - mu2
    v = s1 * s1 + s2 * s2
    return float(diff @ diff) / (4.0 * v) + 0.5 * len(mu1) * math.log(v / (2.0 * s1 * s2))


def diversity(index: int, processes, probe: tuple[np.ndarray, float] | None = None) -> float:
    """Minimum Bhattacharyya distance from process ``index`` to its siblings.

    ``probe=(mu, sigma)`` scores a hypothetical distribution (the offspring's)
    in place of the process's own.  With a single process there is nothing to
    diverge from and the distance is 0.
    """
    mu, sigma = probe if probe is not None else (processes[index].x, processes[index].sigma)
    best = math.inf
    for j, q in enumerate(processes):
        if j == index:
            continue
        best = min(best, bhattacharyya(mu, sigma, q.x, q.sigma))
    return 0.0 if best is math.inf else best


def accept_offspring(f_new: float, d_new: float, f_old: float, d_old: float,
                     phi: float) -> bool:
    """Strict improvement of fitness + phi * diversity (maximization)."""
    return f_new + phi * d_new > f_old + phi * d_old


def adapt_sigma(process: SearchProcess, cfg: NcsConfig) -> float:
    """One tick of the 1/5 success rule; returns the (possibly new) sigma.

    At each epoch boundary: success rate above 1/5 expands sigma by r,
    below 1/5 shrinks it by r, exactly 1/5 leaves it unchanged.  Counters
    reset at the boundary; between boundaries sigma is untouched.
    """
    process.iter_in_epoch += 1
    if process.iter_in_epoch >= cfg.epoch:
        if 5 * process.success_count > cfg.epoch:
            process.sigma *= cfg.r
        elif 5 * process.success_count < cfg.epoch:
            process.sigma /= cfg.r
        process.success_count = 0
        process.iter_in_epoch = 0
    return process.sigma


class NcsEngine:
    """Owns the lambda search processes, the archive, and the generation loop.

    The engine is deterministic in (configs, dim, bounds, master_seed): all
    randomness flows through named streams derived from the master seed
    (see :mod:`ncskit.seeding`).  The evaluator is any callable
    ``f(x, generation, process_id, strict) -> float`` to maximize, charging
    its own budget.
    """

    def __init__(self, cfg: NcsConfig, embed_cfg: EmbeddingConfig,
                 fcps_cfg: FcpsConfig | None, evaluator, dim: int,
                 bounds: tuple[float, float], master_seed: int,
                 archive_capacity: int = 200, workers: int = 1):
        if bounds[0] >= bounds[1]:
            raise ConfigurationError(f"bounds must satisfy l < h, got {bounds}")
        if embed_cfg.mode != "bypass" and embed_cfg.dim > dim:
            raise ConfigurationError(
                f"embedding dim {embed_cfg.dim} exceeds search dim {dim}")
        self.cfg = cfg
        self.embed_cfg = embed_cfg
        self.fcps_cfg = fcps_cfg
        self.evaluator = evaluator
        self.dim = dim
        self.bounds = (float(bounds[0]), float(bounds[1]))
        self.master_seed = master_seed
        self.workers = max(1, workers)
        self.archive = EvaluationArchive(archive_capacity)
        self.processes: list[SearchProcess] = []
        self.generation = 0
        self._fixed_emb: RandomEmbedding | None = None
        # embedded archive records, kept in FIFO lockstep with the archive
        # (only used when the embedding is fixed or bypassed)
        self._encoded_cache: deque | None = None

    # -- lifecycle -----------------------------------------------------------

    def initialize(self) -> None:
        """Draw the lambda parents uniformly in bounds and truly evaluate them."""
        lam = self.cfg.n_processes
        low, high = self.bounds
        init_rng = stream_rng(self.master_seed, STREAM_INIT)
        xs = init_rng.uniform(low, high, size=(lam, self.dim))
        if self.embed_cfg.mode == "fixed":
            seed = stream_seed(self.master_seed, STREAM_EMBEDDING, 0, 0)
            self._fixed_emb = emb_mod.generate(self.dim, self.embed_cfg.dim, seed,
                                               self.embed_cfg.max_dense_entries,
                                               self.embed_cfg.dtype)
        if self.embed_cfg.mode in ("fixed", "bypass"):
            self._encoded_cache = deque(maxlen=self.archive.capacity)
        self.processes = []
        for i in range(lam):
            fitness = self.evaluator(xs[i], 0, i, strict=False)
            self.processes.append(SearchProcess(
                x=xs[i], sigma=self.cfg.sigma0, fitness=fitness,
                rng=stream_rng(self.master_seed, STREAM_SAMPLING, i), id=i))
            self._archive_append(xs[i], fitness, 0, i)
        self.generation = 0

    def _archive_append(self, x: np.ndarray, fitness: float, gen: int, pid: int) -> None:
        self.archive.append(EvaluationRecord(x, float(fitness), gen, pid))
        if self._encoded_cache is not None:
            emb = self._fixed_emb or IdentityEmbedding(self.dim)
            self._encoded_cache.append(emb.encode(x, bounds=self.bounds))

    def _embedding_for(self, gen: int, pid: int) -> RandomEmbedding | None:
        if self.embed_cfg.mode == "bypass":
            return None
        if self.embed_cfg.mode == "fixed":
            return self._fixed_emb
        seed = stream_seed(self.master_seed, STREAM_EMBEDDING, gen, pid)
        return emb_mod.generate(self.dim, self.embed_cfg.dim, seed,
                                self.embed_cfg.max_dense_entries,
                                self.embed_cfg.dtype)

    # -- one generation ------------------------------------------------------

    def step(self) -> list[IterationReport]:
        """Run one synchronized generation across all processes.

        Sampling happens sequentially by process id (each process owns a
        stateful RNG stream).  With a run-wide fixed embedding the encode of
        all lambda * M candidates and the decode of the lambda winners are
        batched into one matrix product each, since every process shares the
        same matrix.  Evaluation and diversity (phase 1, read-only over the
        generation-start snapshot) may run on worker threads; selection,
        archive appends, and step-size adaptation (phase 2) are sequential.
        """
        self.generation += 1
        gen = self.generation
        lam = len(self.processes)
        m = self.cfg.n_candidates
        mode = self.embed_cfg.mode
        snapshot = list(self.processes)  # diversity reference for the whole generation
        encoded = ambient = labels = None
        if self.fcps_cfg is not None and len(self.archive) >= self.fcps_cfg.min_archive:
            # the archive is frozen until phase 2: label it (and stack it,
            # unless the encodings are cached) once for all processes
            labels = label(self.archive.snapshot(), self.fcps_cfg.label_split)
            if self._encoded_cache is not None:
                encoded = np.stack(list(self._encoded_cache))
            else:
                ambient = np.stack([rec.x for rec in self.archive.snapshot()])

        # one embedding handle per process for this generation (None = bypass)
        if mode == "bypass":
            embs: list = [None] * lam
        elif mode == "fixed":
            embs = [self._fixed_emb] * lam
        else:
            embs = [self._embedding_for(gen, i) for i in range(lam)]

        # sampling in strict process order so the stateful streams replay
        all_cands: list[np.ndarray | None] = []
        all_ys: list[np.ndarray | None] = []
        for i, p in enumerate(self.processes):
            if self.embed_cfg.sample_in_subspace:
                all_cands.append(None)
                all_ys.append(p.rng.uniform(self.bounds[0], self.bounds[1],
                                            size=(m, self.embed_cfg.dim)))
                continue
            cands = sample_candidates(p, m, self.dim)
            all_cands.append(cands)
            if mode == "bypass":
                all_ys.append(cands)
            elif mode == "fixed":
                all_ys.append(None)  # encoded in one shared-matrix product below
            else:
                all_ys.append(embs[i].encode(cands, bounds=self.bounds))
        if mode == "fixed" and not self.embed_cfg.sample_in_subspace:
            ys_flat = self._fixed_emb.encode(np.concatenate(all_cands),
                                             bounds=self.bounds)
            all_ys = [ys_flat[i * m:(i + 1) * m] for i in range(lam)]

        # pre-selection over the archive snapshot
        choices = []
        for i in range(lam):
            if self.fcps_cfg is None:
                if m == 1:
                    choices.append((0, None))
                else:
                    srng = stream_rng(self.master_seed, STREAM_SURROGATE, gen, i)
                    choices.append((int(srng.integers(m)), None))
                continue
            srng = stream_rng(self.master_seed, STREAM_SURROGATE, gen, i)
            choices.append(preselect(
                all_ys[i], self.archive, embs[i] or IdentityEmbedding(self.dim),
                self.fcps_cfg, srng, bounds=self.bounds,
                archive_encoded=encoded, archive_ambient=ambient, labels=labels))

        # decode the winners back to the ambient space
        if mode == "bypass":
            new_xs = [all_cands[i][choices[i][0]] for i in range(lam)]
        elif mode == "fixed":
            chosen_ys = np.stack([all_ys[i][choices[i][0]] for i in range(lam)])
            new_xs = [row.copy() for row in self._fixed_emb.decode(chosen_ys)]
        else:
            new_xs = [embs[i].decode(all_ys[i][choices[i][0]]) for i in range(lam)]

        def body(i: int):
            x_new = new_xs[i]
            f_new = self.evaluator(x_new, gen, i, strict=False)
            d_old = diversity(i, snapshot)
            d_new = diversity(i, snapshot, probe=(x_new, self.processes[i].sigma))
            return f_new, d_old, d_new

        indices = range(lam)
        if self.workers > 1:
            with ThreadPoolExecutor(max_workers=self.workers) as pool:
                evals = list(pool.map(body, indices))  # map preserves order
        else:
            evals = [body(i) for i in indices]
        results = [
            (i, all_ys[i][choices[i][0]], new_xs[i], evals[i][0], evals[i][1],
             evals[i][2], choices[i][0], choices[i][1])
            for i in range(lam)
        ]

        if self.cfg.normalize_fd:
            f_scale = _minmax_scaler(
                [r[3] for r in results] + [p.fitness for p in self.processes])
            d_scale = _minmax_scaler([r[4] for r in results] + [r[5] for r in results])
        else:
            f_scale = d_scale = lambda v: v

        reports = []
        for i, y_chosen, x_new, f_new, d_old, d_new, chosen, memberships in results:
            p = self.processes[i]
            acc = accept_offspring(f_scale(f_new), d_scale(d_new),
                                   f_scale(p.fitness), d_scale(d_old), self.cfg.phi)
            if acc:
                p.x = x_new
                p.fitness = f_new
                p.success_count += 1
            self._archive_append_encoded(x_new, f_new, gen, i, y_chosen)
            sigma = adapt_sigma(p, self.cfg)
            reports.append(IterationReport(
                generation=gen, process_id=i, fitness=float(f_new), accepted=acc,
                sigma=sigma, chosen_index=chosen,
                memberships=None if memberships is None else [float(v) for v in memberships],
                diversity_parent=d_old, diversity_offspring=d_new, offspring=x_new))
        return reports

    def _archive_append_encoded(self, x, fitness, gen, pid, y_chosen) -> None:
        self.archive.append(EvaluationRecord(x, float(fitness), gen, pid))
        if self._encoded_cache is not None:
            # y_chosen already lives in the fixed/bypass embedded space
            self._encoded_cache.append(np.asarray(y_chosen, dtype=np.float64))

    # -- checkpointing -------------------------------------------------------

    def get_state(self) -> dict:
        return {
            "generation": self.generation,
            "processes": [
                {"x": p.x.copy(), "sigma": p.sigma, "fitness": p.fitness,
                 "success_count": p.success_count, "iter_in_epoch": p.iter_in_epoch,
                 "rng_state": p.rng.bit_generator.state, "id": p.id}
                for p in self.processes
            ],
            "archive": [
                {"x": r.x.copy(), "fitness": r.fitness, "generation": r.generation,
                 "process_id": r.process_id}
                for r in self.archive.snapshot()
            ],
            "encoded_cache": (None if self._encoded_cache is None
                              else [v.copy() for v in self._encoded_cache]),
        }

    def set_state(self, state: dict) -> None:
        if self.embed_cfg.mode == "fixed" and self._fixed_emb is None:
            seed = stream_seed(self.master_seed, STREAM_EMBEDDING, 0, 0)
            self._fixed_emb = emb_mod.generate(self.dim, self.embed_cfg.dim, seed,
                                               self.embed_cfg.max_dense_entries,
                                               self.embed_cfg.dtype)
        self.generation = state["generation"]
        self.processes = []
        for ps in state["processes"]:
            gen_ = np.random.Generator(np.random.PCG64())
            gen_.bit_generator.state = ps["rng_state"]
            self.processes.append(SearchProcess(
                x=np.asarray(ps["x"], dtype=np.float64), sigma=ps["sigma"],
                fitness=ps["fitness"], rng=gen_, id=ps["id"],
                success_count=ps["success_count"], iter_in_epoch=ps["iter_in_epoch"]))
        self.archive = EvaluationArchive(self.archive.capacity)
        for rec in state["archive"]:
            self.archive.append(EvaluationRecord(
                np.asarray(rec["x"], dtype=np.float64), rec["fitness"],
                rec["generation"], rec["process_id"]))
        if state["encoded_cache"] is None:
            self._encoded_cache = None
        else:
            self._encoded_cache = deque(
                (np.asarray(v, dtype=np.float64) for v in state["encoded_cache"]),
                maxlen=self.archive.capacity)


def _minmax_scaler(values):
    lo, hi = min(values), max(values)
    if hi <= lo:
        return lambda v: 0.5
    return lambda v: (v - lo) / (hi - lo)
