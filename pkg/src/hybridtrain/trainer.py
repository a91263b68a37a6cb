"""Regular (backprop only) and hybrid (backprop + tail evolution) training.

All randomness hangs off the run's master seed:

    INIT       model initialisation
    SHUFFLE/e  mini-batch order of epoch e
    EVOLVE/e   the evolution event after epoch e

so regular and hybrid runs with the same seed see the same model and the same
batches, and resuming from a checkpoint at epoch k replays epochs k+1.. exactly.
"""

from __future__ import annotations

import functools
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable

import numpy as np

from .data import Checkpoint, Splits
from .errors import ConfigError, DimensionError, DivergenceError, HybridTrainError, NumericError
from .evolution import EvolutionConfig, GenerationRecord, run_evolution
from .nn import (Model, accuracy_from_features, build_model, evaluate, get_tail_weights,
                 set_tail_weights, sgd_step, small_conv_net)
from .tensor import RngStream

log = logging.getLogger(__name__)

INIT, SHUFFLE, EVOLVE = 0, 1, 2


@dataclass
class TrainConfig:
    warmup_epochs: int = 50
    evolve_every: int = 10
    max_epochs: int = 100
    learning_rate: float = 0.01
    batch_size: int = 64
    seed: int = 0
    fitness_workers: int = 1
    evolution: EvolutionConfig = field(default_factory=EvolutionConfig)

    def validate(self, hybrid: bool = True) -> "TrainConfig":
        """Check ranges; the schedule (n, y) is only constrained for hybrid runs."""
        if self.max_epochs < 1:
            raise ConfigError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if hybrid and not 1 <= self.warmup_epochs < self.max_epochs:
            raise ConfigError(f"warmup_epochs must satisfy 1 <= n < max_epochs ({self.max_epochs}), "
                              f"got {self.warmup_epochs}")
        if hybrid and not 1 <= self.evolve_every <= self.max_epochs - self.warmup_epochs:
            raise ConfigError(f"evolve_every must satisfy 1 <= y <= max_epochs - n "
                              f"({self.max_epochs - self.warmup_epochs}), got {self.evolve_every}")
        if self.learning_rate < 0 or not math.isfinite(self.learning_rate):
            raise ConfigError(f"learning_rate must be finite and >= 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.fitness_workers < 1:
            raise ConfigError("fitness_workers must be >= 1")
        self.evolution.validate()
        return self

    def is_event(self, epoch: int) -> bool:
        return epoch >= self.warmup_epochs and (epoch - self.warmup_epochs) % self.evolve_every == 0

    def event_epochs(self) -> list[int]:
        return list(range(self.warmup_epochs, self.max_epochs + 1, self.evolve_every))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        evo = EvolutionConfig(**d.pop("evolution", {}))
        return cls(evolution=evo, **d)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_acc: float
    test_acc: float | None = None
    wall_s: float = 0.0
    # best validation accuracy of generations 0..g at an evolution event
    evolution_trace: list[float] | None = None
    pre_evolution_val_acc: float | None = None


@dataclass
class RunResult:
    method: str
    seed: int
    records: list[EpochRecord]
    wall_s: float

    @property
    def final(self) -> EpochRecord:
        return self.records[-1]


FitnessFactory = Callable[[Model, Splits], Callable[[np.ndarray], float]]


def validation_fitness(model: Model, data: Splits) -> Callable[[np.ndarray], float]:
    """Validation accuracy of a tail genome on the (frozen) current body."""
    feats = model.body_features(data.validation.images)
    labels = data.validation.labels
    fan_in, classes = model.tail.fan_in, model.classes

    def fitness(w: np.ndarray) -> float:
        return accuracy_from_features(feats, labels, w, fan_in, classes)

    return fitness


def init_model(architecture: dict, seed: int) -> Model:
    return build_model(architecture, RngStream(seed).substream(INIT))


def default_architecture(data: Splits) -> dict:
    return small_conv_net(data.train.images.shape[1:], data.train.classes)


def train_epoch(model: Model, data: Splits, cfg: TrainConfig, epoch: int) -> float:
    """One pass of shuffled mini-batch SGD; returns the mean batch loss."""
    train = data.train
    order = RngStream(cfg.seed).substream(SHUFFLE, epoch).permutation(len(train))
    losses = []
    for start in range(0, len(order), cfg.batch_size):
        idx = order[start:start + cfg.batch_size]
        model.forward(train.images[idx])
        loss = model.loss(train.labels[idx])
        if not math.isfinite(loss):
            raise DivergenceError(f"non-finite loss at epoch {epoch}, batch {start // cfg.batch_size}")
        grads = model.backward(train.labels[idx])
        try:
            sgd_step(model, grads, cfg.learning_rate)
        except NumericError as exc:
            raise DivergenceError(f"{exc} at epoch {epoch}, batch {start // cfg.batch_size}") from exc
        losses.append(loss)
    return float(np.mean(losses))


def evolve_tail(model: Model, data: Splits, cfg: TrainConfig, epoch: int,
                fitness_factory: FitnessFactory = validation_fitness) -> list[GenerationRecord]:
    """Run one evolution event on the tail and install the best genome."""
    fitness = fitness_factory(model, data)
    rng = RngStream(cfg.seed).substream(EVOLVE, epoch)
    try:
        best, trace = run_evolution(get_tail_weights(model), fitness, cfg.evolution, rng,
                                    workers=cfg.fitness_workers)
    except HybridTrainError as exc:
        raise HybridTrainError(f"evolution at epoch {epoch} failed: {exc}") from exc
    set_tail_weights(model, best)
    return trace


def _train(model: Model, data: Splits, cfg: TrainConfig, hybrid: bool, start_epoch: int = 0,
           on_epoch: Callable[[EpochRecord], None] | None = None,
           fitness_factory: FitnessFactory = validation_fitness) -> list[EpochRecord]:
    cfg.validate(hybrid)
    records: list[EpochRecord] = []
    for epoch in range(start_epoch + 1, cfg.max_epochs + 1):
        t0 = time.perf_counter()
        try:
            loss = train_epoch(model, data, cfg, epoch)
        except DivergenceError as exc:
            rec = EpochRecord(epoch, float("nan"), float("nan"), wall_s=time.perf_counter() - t0)
            records.append(rec)
            if on_epoch:
                on_epoch(rec)
            raise DivergenceError(str(exc), records) from exc
        trace = pre = None
        if hybrid and cfg.is_event(epoch):
            pre = evaluate(model, data.validation)
            gens = evolve_tail(model, data, cfg, epoch, fitness_factory)
            trace = [g.best_fitness for g in gens]
        val = evaluate(model, data.validation)
        test = evaluate(model, data.test) if epoch == cfg.max_epochs else None
        rec = EpochRecord(epoch, loss, val, test, time.perf_counter() - t0, trace, pre)
        log.info("epoch %d loss=%.4f val=%.4f%s", epoch, loss, val,
                 f" (before evolution {pre:.4f})" if trace else "")
        records.append(rec)
        if on_epoch:
            on_epoch(rec)
    return records


def train_regular(model: Model, data: Splits, cfg: TrainConfig, **kw) -> tuple[Model, list[EpochRecord]]:
    return model, _train(model, data, cfg, hybrid=False, **kw)


def train_hybrid(model: Model, data: Splits, cfg: TrainConfig, **kw) -> tuple[Model, list[EpochRecord]]:
    return model, _train(model, data, cfg, hybrid=True, **kw)


def run_single(method: str, data: Splits, cfg: TrainConfig, architecture: dict | None = None,
               **kw) -> tuple[Model, RunResult]:
    if method not in ("regular", "hybrid"):
        raise ConfigError(f"method must be 'regular' or 'hybrid', got {method!r}")
    model = init_model(architecture or default_architecture(data), cfg.seed)
    t0 = time.perf_counter()
    train = train_hybrid if method == "hybrid" else train_regular
    model, records = train(model, data, cfg, **kw)
    return model, RunResult(method, cfg.seed, records, time.perf_counter() - t0)


# -- checkpoints --------------------------------------------------------------

def model_to_checkpoint(model: Model, epoch: int = 0, seed: int = 0, phase: str = "init",
                        extra: dict | None = None) -> Checkpoint:
    return Checkpoint(model.architecture(), [p.copy() for p in model.parameters()], epoch, seed, phase,
                      extra=extra or {})


def model_from_checkpoint(ck: Checkpoint) -> Model:
    model = build_model(ck.architecture)
    params = model.parameters()
    if len(params) != len(ck.parameters):
        raise DimensionError(f"checkpoint has {len(ck.parameters)} tensors, architecture needs {len(params)}")
    for p, q in zip(params, ck.parameters):
        if p.shape != q.shape:
            raise DimensionError(f"checkpoint tensor shape {q.shape} does not match {p.shape}")
        p[...] = q
    return model


# -- comparison ---------------------------------------------------------------

def mean_std(values: Iterable[float]) -> tuple[float, float]:
    """Mean and sample standard deviation (0 for a single value)."""
    v = np.asarray(list(values), dtype=float)
    if v.size == 0:
        return float("nan"), float("nan")
    return float(v.mean()), float(v.std(ddof=1)) if v.size > 1 else 0.0


@dataclass
class ComparisonReport:
    seeds: list[int]
    generations: int
    runs: dict[str, list[RunResult]]
    complete: bool = True
    errors: list[str] = field(default_factory=list)

    def summary(self) -> dict:
        """Final validation/test accuracy and wall time per method (mean, std)."""
        out = {}
        for method, runs in self.runs.items():
            out[method] = {
                "val_acc": mean_std(r.final.val_acc for r in runs),
                "test_acc": mean_std(r.final.test_acc for r in runs),
                "wall_s": mean_std(r.wall_s for r in runs),
                "n_runs": len(runs),
            }
        return out

    def per_epoch(self) -> dict:
        """Per-epoch validation accuracy (mean, std) and, for evolution epochs, per-generation means."""
        out = {}
        for method, runs in self.runs.items():
            rows = []
            if not runs:
                out[method] = rows
                continue
            n_epochs = min(len(r.records) for r in runs)
            for e in range(n_epochs):
                recs = [r.records[e] for r in runs]
                row = {"epoch": recs[0].epoch, "val_acc": mean_std(x.val_acc for x in recs),
                       "train_loss": mean_std(x.train_loss for x in recs)}
                if all(x.evolution_trace for x in recs):
                    row["generations"] = [mean_std(x.evolution_trace[g] for x in recs)
                                          for g in range(1, len(recs[0].evolution_trace))]
                rows.append(row)
            out[method] = rows
        return out

    def to_dict(self) -> dict:
        return {"seeds": self.seeds, "generations": self.generations, "complete": self.complete,
                "errors": self.errors, "summary": self.summary(), "per_epoch": self.per_epoch()}


def _comparison_job(args):
    method, seed, data, cfg_dict, architecture = args
    cfg = TrainConfig.from_dict(cfg_dict)
    cfg.seed = seed
    _, result = run_single(method, data, cfg, architecture)
    return result


def _default_runner(data, cfg_dict, architecture, method, seed):
    return _comparison_job((method, seed, data, cfg_dict, architecture))


def run_comparison(data: Splits, cfg: TrainConfig, seeds: list[int], architecture: dict | None = None,
                   jobs: int = 1, runner=None) -> ComparisonReport:
    """Matched-seed regular vs. hybrid runs.

    ``runner(method, seed)`` may be supplied to customise execution (e.g. to
    write per-run metrics); by default each run is trained in-process, or in a
    process pool when ``jobs > 1``.
    """
    if not seeds:
        raise ConfigError("run_comparison needs at least one seed")
    cfg.validate()
    architecture = architecture or default_architecture(data)
    tasks = [(m, s) for s in seeds for m in ("regular", "hybrid")]
    report = ComparisonReport(list(seeds), cfg.evolution.generations, {"regular": [], "hybrid": []})

    if runner is None:
        runner = functools.partial(_default_runner, data, cfg.to_dict(), architecture)

    results: dict[tuple[str, int], RunResult | BaseException] = {}
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as ex:
            futures = {t: ex.submit(runner, *t) for t in tasks}
            for t, fut in futures.items():
                try:
                    results[t] = fut.result()
                except Exception as exc:  # noqa: BLE001 - recorded in the report
                    results[t] = exc
    else:
        for t in tasks:
            try:
                results[t] = runner(*t)
            except Exception as exc:  # noqa: BLE001
                results[t] = exc

    for (method, seed), res in results.items():
        if isinstance(res, BaseException):
            report.complete = False
            report.errors.append(f"{method} seed {seed}: {res}")
        else:
            report.runs[method].append(res)
    return report
