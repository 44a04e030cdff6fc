"""Genetic search over coarse dilation combinations.

One generation: draw parents with fitness-proportional probabilities, cross
over random segments of consecutive parent pairs, mutate, evaluate the new
individuals with early-stopped training, then keep the best M of old and new
members (elitist truncation, so the best fitness never decreases).

Candidate evaluations are cached by genome content: the evaluation seed is
itself derived from (master_seed, genome), so a duplicate genome costs
nothing and the whole search is a pure function of config and master seed
regardless of worker count.
"""

from __future__ import annotations

import csv
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import seeding
from .genome import (
    DilationGenome,
    EvalRecord,
    SearchSpace,
    format_genome_string,
    genome_to_json,
    random_genome,
)
from .oracle import rank_key
from .tensorops import WORST_FITNESS, TrainingDiverged

__all__ = [
    "GlobalConfig",
    "Population",
    "selection_probabilities",
    "crossover_segments",
    "mutate",
    "evaluate",
    "derive_eval_seed",
    "run_global_search",
]

_SHIFT_EPS = 1e-9


@dataclass(frozen=True)
class GlobalConfig:
    space: SearchSpace
    genome_length: int
    iterations: int = 20
    population: int = 12
    p_m: float = 0.2
    p_s: float = 0.2
    epochs: int = 3
    master_seed: int = 0
    mutation_mode: str = "uniform"

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.population < 2:
            raise ValueError("population must be >= 2")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.genome_length < 1:
            raise ValueError("genome_length must be >= 1")
        for name, p in (("p_m", self.p_m), ("p_s", self.p_s)):
            if not (0.0 <= p <= 1.0):
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.mutation_mode not in ("uniform", "neighbor"):
            raise ValueError(f"unknown mutation_mode {self.mutation_mode!r}")


@dataclass
class Population:
    members: list[EvalRecord]
    capacity: int
    generation: int = 0

    def best(self) -> EvalRecord:
        return min(self.members, key=lambda r: rank_key(r.genome, r.fitness))

    def fitnesses(self) -> np.ndarray:
        return np.array([r.fitness for r in self.members], dtype=np.float64)


def selection_probabilities(pop) -> np.ndarray:
    """Fitness-proportional selection probabilities.

    Fitness values are used directly when all are positive; otherwise they
    are shifted by the minimum plus a small epsilon so the proportional rule
    stays defined for zero or negative metrics.  Equal fitnesses (before or
    after the shift) yield the uniform distribution.
    """
    if isinstance(pop, Population):
        values = pop.fitnesses()
    else:
        values = np.asarray(
            [r.fitness if isinstance(r, EvalRecord) else float(r) for r in pop],
            dtype=np.float64,
        )
    if values.size == 0:
        raise ValueError("population is empty")
    if not np.isfinite(values).all():
        raise ValueError("fitness values must be finite")
    if (values <= 0.0).any():
        values = values - values.min() + _SHIFT_EPS
    # scale by the max before normalizing so enormous sentinel shifts cannot
    # overflow the sum
    values = values / values.max()
    return values / values.sum()


def crossover_segments(
    a: DilationGenome,
    b: DilationGenome,
    rng: np.random.Generator,
    anchors: tuple[int, int] | None = None,
) -> tuple[DilationGenome, DilationGenome]:
    """Swap the gene segment [u, v) between two equal-length genomes.

    Anchors are two positions drawn uniformly (with order fixed u <= v) from
    {0, ..., L}; u == v yields clones.  Pass ``anchors`` to force them.
    """
    if len(a) != len(b):
        raise ValueError("parents must have equal length")
    L = len(a)
    if anchors is None:
        u = int(rng.integers(0, L + 1))
        v = int(rng.integers(0, L + 1))
        if u > v:
            u, v = v, u
    else:
        u, v = anchors
        if not (0 <= u <= v <= L):
            raise ValueError(f"anchors must satisfy 0 <= u <= v <= {L}")
    da, db = a.dilations, b.dilations
    child1 = da[:u] + db[u:v] + da[v:]
    child2 = db[:u] + da[u:v] + db[v:]
    return (
        DilationGenome(child1, a.layer_map),
        DilationGenome(child2, b.layer_map),
    )


def mutate(
    g: DilationGenome,
    space: SearchSpace,
    p_m: float,
    p_s: float,
    rng: np.random.Generator,
    mode: str = "uniform",
) -> DilationGenome:
    """With probability p_m, resample each gene with probability p_s.

    ``uniform`` draws replacement genes uniformly from the candidate set
    (possibly redrawing the current value); ``neighbor`` steps one position
    up or down the sorted candidate list.
    """
    for name, p in (("p_m", p_m), ("p_s", p_s)):
        if not (0.0 <= p <= 1.0):
            raise ValueError(f"{name} must lie in [0, 1]")
    if rng.random() >= p_m:
        return g
    cands = space.candidates
    genes = list(g.dilations)
    hits = rng.random(len(genes)) < p_s
    for i in np.nonzero(hits)[0]:
        if mode == "uniform":
            genes[i] = cands[int(rng.integers(0, len(cands)))]
        elif mode == "neighbor":
            idx = min(range(len(cands)), key=lambda j: (abs(cands[j] - genes[i]), j))
            step = 1 if rng.integers(0, 2) else -1
            idx = min(len(cands) - 1, max(0, idx + step))
            genes[i] = cands[idx]
        else:
            raise ValueError(f"unknown mutation mode {mode!r}")
    return DilationGenome(tuple(genes), g.layer_map)


def derive_eval_seed(master_seed: int, genome: DilationGenome) -> int:
    """Evaluation seed from genome content, so duplicates share one record."""
    return seeding.derive_seed(master_seed, "eval", *genome.dilations)


def evaluate(genome: DilationGenome, trainer, epochs: int, seed: int) -> EvalRecord:
    """Train-and-score one candidate; divergence yields a worst-fitness record."""
    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    t0 = time.perf_counter()
    try:
        fitness, metrics = trainer(genome, epochs, seed)
        fitness = float(fitness)
        metrics = dict(metrics)
        if not np.isfinite(fitness):
            raise TrainingDiverged(f"non-finite fitness {fitness}")
    except TrainingDiverged:
        fitness = WORST_FITNESS
        metrics = {"diverged": 1.0}
    return EvalRecord(
        genome=genome,
        fitness=fitness,
        epochs_trained=epochs,
        seed=seed,
        metrics=metrics,
        wall_time_s=time.perf_counter() - t0,
    )


def _evaluate_one(args):
    trainer, genome, epochs, seed = args
    return evaluate(genome, trainer, epochs, seed)


class _Logs:
    def __init__(self, log_dir, cfg, kernel_sizes):
        self.dir = Path(log_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.kernel_sizes = kernel_sizes
        self._pop_file = open(self.dir / "population_log.csv", "w", newline="")
        self._pop = csv.writer(self._pop_file)
        self._pop.writerow(
            ["generation", "candidate_id", "genome", "fitness", "epochs", "seed", "wall_time_s"]
        )
        self._traj_file = open(self.dir / "trajectory.csv", "w", newline="")
        self._traj = csv.writer(self._traj_file)
        self._traj.writerow(["budget", "running_best_fitness", "seed", "method"])
        self.master_seed = cfg.master_seed

    def log_records(self, generation, records):
        for r in records:
            self._pop.writerow(
                [
                    generation,
                    r.candidate_id,
                    format_genome_string(r.genome),
                    repr(r.fitness),
                    r.epochs_trained,
                    r.seed,
                    f"{r.wall_time_s:.6f}",
                ]
            )
        self._pop_file.flush()

    def log_checkpoint(self, budget, best_fitness):
        self._traj.writerow([budget, repr(best_fitness), self.master_seed, "ga"])
        self._traj_file.flush()

    def log_best(self, record):
        text = genome_to_json(
            record.genome,
            kernel_sizes=self.kernel_sizes,
            fitness=record.fitness,
            seed=record.seed,
        )
        (self.dir / "best.json").write_text(text + "\n")

    def close(self):
        self._pop_file.close()
        self._traj_file.close()


def run_global_search(
    cfg: GlobalConfig,
    trainer,
    jobs: int = 1,
    log_dir=None,
    kernel_sizes=None,
    trajectory_out: list | None = None,
) -> Population:
    """Run the full genetic search and return the final population, sorted by
    fitness descending (ties: genome lexicographic order, then candidate id).

    ``trainer(genome, epochs, seed) -> (fitness, metrics)`` must be
    deterministic given its arguments (and picklable when ``jobs > 1``).
    ``trajectory_out``, when given, collects (created_candidates,
    best_fitness) checkpoints per generation.
    """
    if jobs < 1:
        raise ValueError("jobs must be >= 1")
    rng_init = seeding.derive_rng(cfg.master_seed, "ga-init")
    rng_evolve = seeding.derive_rng(cfg.master_seed, "ga-evolve")
    cache: dict[tuple[int, ...], EvalRecord] = {}
    next_id = 0
    logs = _Logs(log_dir, cfg, kernel_sizes) if log_dir is not None else None
    pool_executor = ProcessPoolExecutor(max_workers=jobs) if jobs > 1 else None

    def eval_batch(genomes):
        nonlocal next_id
        missing = []
        for g in genomes:
            if g.dilations not in cache and all(
                g.dilations != m.dilations for m in missing
            ):
                missing.append(g)
        tasks = [
            (trainer, g, cfg.epochs, derive_eval_seed(cfg.master_seed, g))
            for g in missing
        ]
        if pool_executor is not None and len(tasks) > 1:
            fresh = list(pool_executor.map(_evaluate_one, tasks))
        else:
            fresh = [_evaluate_one(t) for t in tasks]
        for rec in fresh:
            cache[rec.genome.dilations] = rec
        out = []
        for g in genomes:
            base = cache[g.dilations]
            rec = EvalRecord(
                genome=g,
                fitness=base.fitness,
                epochs_trained=base.epochs_trained,
                seed=base.seed,
                metrics=dict(base.metrics),
                candidate_id=next_id,
                wall_time_s=base.wall_time_s,
            )
            next_id += 1
            out.append(rec)
        return out

    try:
        M = cfg.population
        members = eval_batch(
            [random_genome(cfg.space, cfg.genome_length, rng_init) for _ in range(M)]
        )
        members.sort(key=lambda r: rank_key(r.genome, r.fitness) + (r.candidate_id,))
        created = M
        if logs:
            logs.log_records(0, members)
            logs.log_checkpoint(created, members[0].fitness)
            logs.log_best(members[0])
        if trajectory_out is not None:
            trajectory_out.append((created, members[0].fitness))

        for generation in range(1, cfg.iterations + 1):
            probs = selection_probabilities(members)
            parent_idx = rng_evolve.choice(len(members), size=M, replace=True, p=probs)
            offspring: list[DilationGenome] = []
            for i in range(0, M - 1, 2):
                c1, c2 = crossover_segments(
                    members[parent_idx[i]].genome,
                    members[parent_idx[i + 1]].genome,
                    rng_evolve,
                )
                offspring.extend((c1, c2))
            if M % 2 == 1:
                offspring.append(members[parent_idx[M - 1]].genome)
            offspring = [
                mutate(g, cfg.space, cfg.p_m, cfg.p_s, rng_evolve, cfg.mutation_mode)
                for g in offspring
            ]
            new_records = eval_batch(offspring)
            pool = members + new_records
            pool.sort(key=lambda r: rank_key(r.genome, r.fitness) + (r.candidate_id,))
            members = pool[:M]
            created += M
            if logs:
                logs.log_records(generation, new_records)
                logs.log_checkpoint(created, members[0].fitness)
                logs.log_best(members[0])
            if trajectory_out is not None:
                trajectory_out.append((created, members[0].fitness))
    finally:
        if pool_executor is not None:
            pool_executor.shutdown()
        if logs:
            logs.close()

    return Population(members=members, capacity=M, generation=cfg.iterations)
