"""Evolutionary refinement of a flat weight vector.

Heuristic initial population around the trained weights, top-fraction parent
selection, m-parent block-wise crossover, three mutation operators (full array,
one block, per value) with at most one mutation per offspring, and elitist
generational replacement.

Randomness: offspring ``j`` of generation ``t`` draws only from
``rng.substream(t, j)``; the initial perturbation of member ``j`` draws from
``rng.substream(0, j)``. Fitness evaluation consumes no randomness, so the
order (or parallelism) of evaluation cannot change the result.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, DimensionError, FitnessError, StateError
from .tensor import DTYPE, RngStream, draw_normal, draw_uniform

Fitness = Callable[[np.ndarray], float]

MUTATIONS = ("per_value", "block", "full_array")


@dataclass
class EvolutionConfig:
    pop_size: int = 100
    generations: int = 5
    p_crossover: float = 0.30
    p_mutation: float = 0.50
    p_per_value: float = 0.45
    p_block: float = 0.45
    p_full_array: float = 0.10
    mag_init: float = 1.0
    mag_op: float = 0.05
    parent_fraction: float = 0.30
    parents: int = 2
    blocks: int = 10
    p_value: float = 0.05
    # False: the full-array operator uses mag_op like the other two operators.
    full_array_uses_init_mag: bool = True

    def validate(self) -> "EvolutionConfig":
        probs = {
            "p_crossover": self.p_crossover, "p_mutation": self.p_mutation,
            "p_per_value": self.p_per_value, "p_block": self.p_block,
            "p_full_array": self.p_full_array, "parent_fraction": self.parent_fraction,
            "p_value": self.p_value, "mag_init": self.mag_init, "mag_op": self.mag_op,
        }
        for name, value in probs.items():
            if not 0.0 <= value <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {value}")
        if abs(self.p_per_value + self.p_block + self.p_full_array - 1.0) > 1e-9:
            raise ConfigError("mutation mix p_per_value + p_block + p_full_array must sum to 1")
        if self.pop_size < 2:
            raise ConfigError(f"pop_size must be >= 2, got {self.pop_size}")
        if self.generations < 0:
            raise ConfigError(f"generations must be >= 0, got {self.generations}")
        if self.parent_fraction <= 0:
            raise ConfigError("parent_fraction must be positive")
        if not 2 <= self.parents <= self.pool_size:
            raise ConfigError(
                f"parents must satisfy 2 <= m <= {self.pool_size} (top pool of {self.pop_size}), got {self.parents}")
        if self.blocks < 1:
            raise ConfigError(f"blocks must be >= 1, got {self.blocks}")
        return self

    @property
    def pool_size(self) -> int:
        # round() keeps 0.3 * 100 from ceiling to 31
        return max(1, math.ceil(round(self.parent_fraction * self.pop_size, 9)))

    @property
    def mutation_mix(self) -> tuple[float, float, float]:
        return (self.p_per_value, self.p_block, self.p_full_array)

    @property
    def full_array_mag(self) -> float:
        return self.mag_init if self.full_array_uses_init_mag else self.mag_op

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Individual:
    genome: np.ndarray
    fitness: float | None = None
    birth: int = 0
    ops: tuple[str, ...] = ()


@dataclass
class Population:
    members: list[Individual]
    generation_index: int = 0

    def __len__(self) -> int:
        return len(self.members)

    def ranked(self) -> list[Individual]:
        """Members by fitness descending; ties go to the earliest born."""
        if any(m.fitness is None for m in self.members):
            raise StateError("population has unevaluated members")
        return sorted(self.members, key=lambda m: (-m.fitness, m.birth))

    def best(self) -> Individual:
        return self.ranked()[0]


@dataclass
class GenerationRecord:
    generation: int
    best_fitness: float
    mean_fitness: float
    best_ops: tuple[str, ...] = field(default_factory=tuple)


def init_population(w0: np.ndarray, cfg: EvolutionConfig, rng: RngStream) -> Population:
    """``pop_size - 1`` perturbations ``w0 + N(0,1) * mag_init`` plus ``w0`` itself last.

    The unchanged original gets birth 0, so it wins fitness ties.
    """
    cfg.validate()
    w0 = np.asarray(w0, dtype=DTYPE)
    if not np.all(np.isfinite(w0)):
        raise ConfigError("initial weights must be finite")
    members = []
    for j in range(cfg.pop_size - 1):
        genome = w0 + draw_normal(rng.substream(0, j), w0.size) * cfg.mag_init
        members.append(Individual(genome, birth=j + 1, ops=("init",)))
    members.append(Individual(w0.copy(), birth=0, ops=()))
    return Population(members, 0)


def select_parents(pop: Population, m: int, rng: RngStream, parent_fraction: float = 0.30) -> list[Individual]:
    pool = top_pool(pop, parent_fraction)
    if m > len(pool):
        raise ConfigError(f"cannot draw {m} distinct parents from a pool of {len(pool)}")
    return [pool[k] for k in rng.choice(len(pool), m, replace=False)]


def top_pool(pop: Population, parent_fraction: float = 0.30) -> list[Individual]:
    size = max(1, math.ceil(round(parent_fraction * len(pop), 9)))
    return pop.ranked()[:size]


def block_bounds(length: int, blocks: int) -> list[tuple[int, int]]:
    """``blocks`` contiguous ranges: all of size ``length // blocks`` except the last, which takes the rest."""
    k = length // blocks
    bounds = [(j * k, (j + 1) * k) for j in range(blocks - 1)]
    bounds.append(((blocks - 1) * k, length))
    return bounds


def crossover(parents: Sequence[np.ndarray], length: int | None = None) -> np.ndarray:
    """Child made of block j taken from parent j; the last parent fills to the end."""
    if not parents:
        raise DimensionError("crossover needs at least one parent")
    length = len(parents[0]) if length is None else length
    if any(len(p) != length for p in parents):
        raise DimensionError(f"all parents must have length {length}")
    bounds = block_bounds(length, len(parents))
    return np.concatenate([p[a:b] for p, (a, b) in zip(parents, bounds)]).astype(DTYPE, copy=False)


def mutate_full_array(w: np.ndarray, mag: float, rng: RngStream) -> np.ndarray:
    return w + draw_normal(rng, w.size) * mag


def mutate_block(w: np.ndarray, blocks: int, mag: float, rng: RngStream) -> np.ndarray:
    if not 1 <= blocks <= w.size:
        raise ConfigError(f"block count must be in [1, {w.size}], got {blocks}")
    a, b = block_bounds(w.size, blocks)[rng.integers(blocks)]
    out = w.copy()
    seg = np.abs(w[a:b])
    out[a:b] = w[a:b] + draw_uniform(rng, -seg, seg, b - a) * mag
    return out


def mutate_per_value(w: np.ndarray, p_value: float, mag: float, rng: RngStream) -> np.ndarray:
    hit = rng.random(w.size) < p_value
    mag_w = np.abs(w)
    r = draw_uniform(rng, -mag_w, mag_w, w.size)
    return np.where(hit, w + r * mag, w)


def make_offspring(pop: Population, cfg: EvolutionConfig, rng: RngStream,
                   log: list | None = None) -> Individual:
    """One new (unevaluated) individual.

    Crossover fires with ``p_crossover``; otherwise the base is a uniformly
    drawn copy of a top-pool member. Then at most one mutation operator fires
    with ``p_mutation``. If neither fired the coin flips are redrawn.
    """
    first = None
    redraws = 0
    while True:
        do_cx = rng.random() < cfg.p_crossover
        do_mut = rng.random() < cfg.p_mutation
        if first is None:
            first = (do_cx, do_mut)
        if do_cx or do_mut or (cfg.p_crossover == 0 and cfg.p_mutation == 0):
            break
        redraws += 1

    ops: list[str] = []
    if do_cx:
        parents = select_parents(pop, cfg.parents, rng, cfg.parent_fraction)
        genome = crossover([p.genome for p in parents])
        ops.append("crossover")
    else:
        pool = top_pool(pop, cfg.parent_fraction)
        genome = pool[rng.integers(len(pool))].genome.copy()
        ops.append("copy")

    mutation = None
    if do_mut:
        mutation = MUTATIONS[rng.categorical(cfg.mutation_mix)]
        if mutation == "per_value":
            genome = mutate_per_value(genome, cfg.p_value, cfg.mag_op, rng)
        elif mutation == "block":
            genome = mutate_block(genome, min(cfg.blocks, genome.size), cfg.mag_op, rng)
        else:
            genome = mutate_full_array(genome, cfg.full_array_mag, rng)
        ops.append(mutation)

    if log is not None:
        log.append({"first_crossover": first[0], "first_mutation": first[1], "redraws": redraws,
                    "crossover": do_cx, "mutation": mutation})
    return Individual(genome, ops=tuple(ops))


def evaluate_members(members: Sequence[Individual], fitness: Fitness, workers: int = 1) -> None:
    todo = [(j, m) for j, m in enumerate(members) if m.fitness is None]

    def run(item):
        j, m = item
        try:
            return float(fitness(m.genome))
        except Exception as exc:
            raise FitnessError(j, exc) from exc

    if workers > 1 and len(todo) > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            values = list(ex.map(run, todo))
    else:
        values = [run(item) for item in todo]
    for (_, m), v in zip(todo, values):
        m.fitness = v


def run_generation(pop: Population, fitness: Fitness, cfg: EvolutionConfig, rng: RngStream,
                   workers: int = 1, log: list | None = None) -> Population:
    """Next generation: ``pop_size - 1`` evaluated offspring plus the unchanged elite last."""
    elite = pop.best()
    t = pop.generation_index + 1
    next_birth = max(m.birth for m in pop.members) + 1
    offspring = []
    for j in range(cfg.pop_size - 1):
        child = make_offspring(pop, cfg, rng.substream(t, j), log)
        child.birth = next_birth + j
        offspring.append(child)
    evaluate_members(offspring, fitness, workers)
    return Population(offspring + [elite], t)


def run_evolution(w0: np.ndarray, fitness: Fitness, cfg: EvolutionConfig, rng: RngStream,
                  workers: int = 1, log: list | None = None) -> tuple[np.ndarray, list[GenerationRecord]]:
    """Returns the best genome and one record per generation (0..g)."""
    cfg.validate()
    pop = init_population(w0, cfg, rng)
    evaluate_members(pop.members, fitness, workers)
    trace = [_record(pop)]
    for _ in range(cfg.generations):
        pop = run_generation(pop, fitness, cfg, rng, workers, log)
        trace.append(_record(pop))
    return pop.best().genome.copy(), trace


def _record(pop: Population) -> GenerationRecord:
    best = pop.best()
    return GenerationRecord(pop.generation_index, best.fitness,
                            float(np.mean([m.fitness for m in pop.members])), best.ops)
