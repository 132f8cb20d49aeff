"""Experiment orchestration: run / resume / sweep / compare.

A run executes initialization plus generations until the step budget is
exhausted (checked at generation boundaries only, so a generation that
crosses the line completes and the overshoot — at most lambda - 1
evaluations' worth — is logged).  Every run writes to its output directory:

    config.txt       resolved configuration (replayable)
    run.jsonl        one JSON row per true evaluation:
                     generation, process_id, fitness, sigma, accepted,
                     membership (of the chosen candidate), chosen, steps_used
    curves.tsv       per-generation best fitness and sigma traces
    archive.jsonl    final surrogate archive (generation, process_id, fitness)
    best_policy.npz  best-by-training-fitness weight vector
    summary.json     budget accounting, best fitness, test score, wall time
    checkpoint.pkl   resumable state (when checkpointing is on)

Logs and artifacts other than summary.json (which carries wall-clock times)
are byte-identical across repeated runs of the same (config, seed) at
worker concurrency 1.
"""

from __future__ import annotations

from dataclasses import dataclass
import json
import math
import multiprocessing
import os
import pickle
import time

import numpy as np

from .config import RunConfig, config_dict, field_names, save_config
from .environments import (
    BenchmarkEvaluator,
    CartPole,
    EffectiveSphere,
    EpisodicEvaluator,
    FitnessBudget,
)
from .errors import CheckpointError, ConfigurationError
from .ncs import NcsEngine
from .policy import param_count, parse_network_spec

CHECKPOINT_NAME = "checkpoint.pkl"


@dataclass
class RunResult:
    config: RunConfig
    rows: list[dict]
    summary: dict
    best_x: np.ndarray


def build_evaluator(cfg: RunConfig, budget: FitnessBudget):
    """Returns (evaluator, search dimension) for the configured backend."""
    if cfg.env_name == "sphere":
        fn = EffectiveSphere(cfg.sphere_dim, cfg.sphere_effective_dim,
                             cfg.sphere_rotation_seed)
        return BenchmarkEvaluator(fn, budget), cfg.sphere_dim
    spec = parse_network_spec(cfg.network)
    evaluator = EpisodicEvaluator(CartPole, spec, budget, cfg.master_seed,
                                  episodes=cfg.train_episodes)
    return evaluator, param_count(spec)


def _build_engine(cfg: RunConfig, budget: FitnessBudget):
    evaluator, dim = build_evaluator(cfg, budget)
    engine = NcsEngine(cfg.ncs_config(), cfg.embedding_config(), cfg.fcps_config(),
                       evaluator, dim, cfg.bounds, cfg.master_seed,
                       archive_capacity=cfg.archive_capacity, workers=cfg.workers)
    return engine, evaluator


class _BestTracker:
    """Best-ever truly evaluated policy, by training fitness."""

    def __init__(self):
        self.fitness = -math.inf
        self.x = None
        self.generation = -1
        self.process_id = -1

    def offer(self, x: np.ndarray, fitness: float, generation: int, process_id: int):
        if fitness > self.fitness:
            self.fitness = fitness
            self.x = np.array(x, dtype=np.float64, copy=True)
            self.generation = generation
            self.process_id = process_id

    def state(self) -> dict:
        return {"fitness": self.fitness, "x": self.x, "generation": self.generation,
                "process_id": self.process_id}

    def restore(self, state: dict):
        self.fitness = state["fitness"]
        self.x = state["x"]
        self.generation = state["generation"]
        self.process_id = state["process_id"]


def _row(report=None, *, generation=0, process_id=0, fitness=0.0, sigma=0.0,
         steps_used=0) -> dict:
    if report is None:
        return {"generation": generation, "process_id": process_id,
                "fitness": fitness, "sigma": sigma, "accepted": None,
                "membership": None, "chosen": None, "steps_used": steps_used}
    membership = (None if report.memberships is None
                  else report.memberships[report.chosen_index])
    return {"generation": report.generation, "process_id": report.process_id,
            "fitness": report.fitness, "sigma": report.sigma,
            "accepted": report.accepted, "membership": membership,
            "chosen": report.chosen_index, "steps_used": steps_used}


def run(cfg: RunConfig, resume: bool = False) -> RunResult:
    """Execute one full run (or resume one from its checkpoint)."""
    out = cfg.output_dir
    os.makedirs(out, exist_ok=True)
    t_start = time.perf_counter()
    budget = FitnessBudget(cfg.max_steps)
    engine, evaluator = _build_engine(cfg, budget)
    best = _BestTracker()
    rows: list[dict] = []

    if resume:
        ckpt_path = os.path.join(out, CHECKPOINT_NAME)
        if not os.path.exists(ckpt_path):
            raise CheckpointError(f"no checkpoint at {ckpt_path}")
        with open(ckpt_path, "rb") as fh:
            ckpt = pickle.load(fh)
        if ckpt["config"] != config_dict(cfg):
            raise CheckpointError("checkpoint was written by a different configuration")
        engine.set_state(ckpt["engine"])
        budget.steps_used = ckpt["budget"]["steps_used"]
        budget.n_evaluations = ckpt["budget"]["n_evaluations"]
        evaluator.calls = ckpt["budget"]["n_evaluations"]
        best.restore(ckpt["best"])
        rows = _truncate_log(os.path.join(out, "run.jsonl"), engine.generation)
        log = open(os.path.join(out, "run.jsonl"), "a")
    else:
        save_config(cfg, os.path.join(out, "config.txt"))
        log = open(os.path.join(out, "run.jsonl"), "w")
        engine.initialize()
        for p in engine.processes:
            best.offer(p.x, p.fitness, 0, p.id)
            rows.append(_row(generation=0, process_id=p.id, fitness=p.fitness,
                             sigma=p.sigma, steps_used=budget.steps_used))
        _write_rows(log, rows)

    try:
        while not budget.exhausted:
            reports = engine.step()
            gen_rows = []
            for rep in reports:
                best.offer(rep.offspring, rep.fitness, rep.generation, rep.process_id)
                gen_rows.append(_row(rep, steps_used=budget.steps_used))
            rows.extend(gen_rows)
            _write_rows(log, gen_rows)
            if cfg.checkpoint_every and engine.generation % cfg.checkpoint_every == 0:
                _write_checkpoint(cfg, engine, budget, best, out)
    finally:
        log.close()

    test_mean, test_returns = evaluator.test_score(best.x, cfg.test_episodes)
    wall = time.perf_counter() - t_start
    summary = {
        "best_fitness": best.fitness,
        "best_generation": best.generation,
        "best_process_id": best.process_id,
        "test_score": test_mean,
        "test_returns": test_returns,
        "generations": engine.generation,
        "true_evaluations": budget.n_evaluations,
        "steps_used": budget.steps_used,
        "max_steps": budget.max_steps,
        "budget_overshoot": budget.overshoot,
        "wall_time_s": wall,
        # replay info: per-iteration matrices use seeds derived from the
        # master seed under spawn key (embedding stream, generation, process)
        "embedding_seed": (engine._fixed_emb.seed
                           if engine._fixed_emb is not None else None),
        "config": config_dict(cfg),
    }
    _write_artifacts(cfg, engine, rows, summary, best, out)
    return RunResult(cfg, rows, summary, best.x)


def resume(cfg: RunConfig) -> RunResult:
    return run(cfg, resume=True)


def test_policy(cfg: RunConfig, policy_path, episodes: int) -> dict:
    """Re-score a saved policy vector over fresh test episodes."""
    data = np.load(policy_path)
    x = data["weights"]
    evaluator, dim = build_evaluator(cfg, FitnessBudget(2 ** 62))
    if x.shape != (dim,):
        raise ConfigurationError(
            f"saved policy has dimension {x.shape}, config expects ({dim},)")
    mean, returns = evaluator.test_score(x, episodes)
    return {"test_score": mean, "episodes": episodes, "returns": returns}


# -- file helpers -------------------------------------------------------------


def _write_rows(fh, rows) -> None:
    for row in rows:
        fh.write(json.dumps(row, sort_keys=True) + "\n")
    fh.flush()


def _truncate_log(path, generation: int) -> list[dict]:
    """Drop rows beyond ``generation`` (written after the checkpoint) and
    return the retained rows."""
    if not os.path.exists(path):
        raise CheckpointError(f"cannot resume: {path} is missing")
    rows = []
    with open(path) as fh:
        for line in fh:
            row = json.loads(line)
            if row["generation"] <= generation:
                rows.append(row)
    with open(path, "w") as fh:
        _write_rows(fh, rows)
    return rows


def _write_checkpoint(cfg, engine, budget, best, out) -> None:
    state = {
        "config": config_dict(cfg),
        "engine": engine.get_state(),
        "budget": {"steps_used": budget.steps_used,
                   "n_evaluations": budget.n_evaluations},
        "best": best.state(),
    }
    tmp = os.path.join(out, CHECKPOINT_NAME + ".tmp")
    with open(tmp, "wb") as fh:
        pickle.dump(state, fh)
    os.replace(tmp, os.path.join(out, CHECKPOINT_NAME))


def _write_artifacts(cfg, engine, rows, summary, best, out) -> None:
    with open(os.path.join(out, "summary.json"), "w") as fh:
        json.dump(summary, fh, sort_keys=True, indent=2)
        fh.write("\n")
    np.savez(os.path.join(out, "best_policy.npz"), weights=best.x)
    engine.archive.dump_jsonl(os.path.join(out, "archive.jsonl"))
    _write_curves(cfg, rows, os.path.join(out, "curves.tsv"))


def _write_curves(cfg, rows, path) -> None:
    """Tabular plot data: best-so-far fitness and sigma traces per generation."""
    lam = cfg.processes
    header = ["generation", "true_evaluations", "steps_used", "best_fitness"]
    header += [f"sigma_{i}" for i in range(lam)]
    lines = ["\t".join(header)]
    best_so_far = -math.inf
    sigmas = [float("nan")] * lam
    evals = 0
    current_gen = rows[0]["generation"] if rows else 0
    steps = 0

    def emit(gen):
        lines.append("\t".join(
            [str(gen), str(evals), str(steps), repr(best_so_far)]
            + [repr(s) for s in sigmas]))

    for row in rows:
        if row["generation"] != current_gen:
            emit(current_gen)
            current_gen = row["generation"]
        evals += 1
        steps = row["steps_used"]
        best_so_far = max(best_so_far, row["fitness"])
        sigmas[row["process_id"]] = row["sigma"]
    if rows:
        emit(current_gen)
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


# -- multi-run modes ----------------------------------------------------------


def _run_job(cfg: RunConfig) -> dict:
    return run(cfg).summary


def _map_runs(configs, n_jobs: int) -> list[dict]:
    if n_jobs <= 1 or len(configs) <= 1:
        return [_run_job(c) for c in configs]
    with multiprocessing.get_context("fork").Pool(min(n_jobs, len(configs))) as pool:
        return pool.map(_run_job, configs)


def sweep(base: RunConfig, parameter: str, values, n_jobs: int = 1) -> dict:
    """Repeat seeded runs per parameter value; aggregate final test scores.

    Run k of a value uses master seed ``base.master_seed + k`` so the seed
    pairing is identical across values.
    """
    if parameter not in field_names():
        raise ConfigurationError(
            f"unknown sweep parameter {parameter!r}; valid fields: "
            + ", ".join(sorted(field_names())))
    results = {"parameter": parameter, "values": []}
    for value in values:
        configs = [
            base.with_overrides(**{
                parameter: value,
                "master_seed": base.master_seed + k,
                "output_dir": os.path.join(
                    base.output_dir, f"{parameter}={value}", f"seed{base.master_seed + k}"),
            })
            for k in range(base.repeats)
        ]
        summaries = _map_runs(configs, n_jobs)
        scores = [s["test_score"] for s in summaries]
        results["values"].append({
            "value": value,
            "test_scores": scores,
            "mean": float(np.mean(scores)),
            "median": float(np.median(scores)),
            "min": float(np.min(scores)),
            "max": float(np.max(scores)),
            "runs": summaries,
        })
    os.makedirs(base.output_dir, exist_ok=True)
    with open(os.path.join(base.output_dir, "sweep.json"), "w") as fh:
        json.dump(_strip_runs(results), fh, sort_keys=True, indent=2)
    return results


def _strip_runs(results: dict) -> dict:
    slim = {"parameter": results["parameter"], "values": []}
    for v in results["values"]:
        slim["values"].append({k: v[k] for k in ("value", "test_scores", "mean",
                                                 "median", "min", "max")})
    return slim


def evaluations_to_target(rows, target_fitness: float):
    """1-based index of the first true evaluation whose best-so-far fitness
    reaches ``target_fitness``; None if the run never gets there."""
    best_so_far = -math.inf
    for idx, row in enumerate(rows, start=1):
        best_so_far = max(best_so_far, row["fitness"])
        if best_so_far >= target_fitness:
            return idx
    return None


def compare(cfg_a: RunConfig, cfg_b: RunConfig, target_score: float | None = None,
            repeats: int = 10, n_jobs: int = 1) -> dict:
    """Matched-seed cost comparison: evaluations (and wall time) to a target.

    Both configs must describe the same fitness backend, bounds, and budget.
    ``target_score`` is a fitness value (maximization); None derives it as
    the median final best fitness of ``cfg_a``'s runs.  Per matched seed the
    ratio reported is cost(a) / cost(b), so ratios above 1 mean ``cfg_b``
    reached the target cheaper.
    """
    shared = ("env_name", "sphere_dim", "sphere_effective_dim", "sphere_rotation_seed",
              "network", "bound_low", "bound_high", "max_steps", "train_episodes")
    for name in shared:
        if getattr(cfg_a, name) != getattr(cfg_b, name):
            raise ConfigurationError(
                f"compare needs both configs to share {name}: "
                f"{getattr(cfg_a, name)!r} != {getattr(cfg_b, name)!r}")

    def run_side(cfg, tag):
        configs = [cfg.with_overrides(
            master_seed=cfg.master_seed + k,
            output_dir=os.path.join(cfg_a.output_dir, "compare", tag, f"seed{cfg.master_seed + k}"),
        ) for k in range(repeats)]
        t0 = time.perf_counter()
        if n_jobs <= 1:
            results = [run(c) for c in configs]
        else:
            with multiprocessing.get_context("fork").Pool(min(n_jobs, len(configs))) as pool:
                results = pool.map(_run_full_job, configs)
        return results, time.perf_counter() - t0

    runs_a, wall_side_a = run_side(cfg_a, "a")
    runs_b, wall_side_b = run_side(cfg_b, "b")
    if target_score is None:
        target_score = float(np.median([r.summary["best_fitness"] for r in runs_a]))

    records = []
    ratios = []
    for k, (ra, rb) in enumerate(zip(runs_a, runs_b)):
        ea = evaluations_to_target(ra.rows, target_score)
        eb = evaluations_to_target(rb.rows, target_score)
        rec = {
            "seed": cfg_a.master_seed + k,
            "evals_a": ea, "evals_b": eb,
            "wall_a": ra.summary["wall_time_s"], "wall_b": rb.summary["wall_time_s"],
            "final_a": ra.summary["best_fitness"], "final_b": rb.summary["best_fitness"],
            "ratio": (ea / eb) if (ea is not None and eb is not None) else None,
        }
        if rec["ratio"] is not None:
            ratios.append(rec["ratio"])
        records.append(rec)
    out = {
        "target_fitness": target_score,
        "records": records,
        "median_ratio": float(np.median(ratios)) if ratios else None,
        "reached_a": sum(r["evals_a"] is not None for r in records),
        "reached_b": sum(r["evals_b"] is not None for r in records),
        "wall_side_a": wall_side_a,
        "wall_side_b": wall_side_b,
    }
    os.makedirs(cfg_a.output_dir, exist_ok=True)
    with open(os.path.join(cfg_a.output_dir, "compare.json"), "w") as fh:
        json.dump(out, fh, sort_keys=True, indent=2)
    return out


def _run_full_job(cfg: RunConfig) -> RunResult:
    return run(cfg)
