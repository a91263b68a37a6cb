"""Command-line entry point: ``hybridtrain {train,compare,evolve,eval}``.

Configuration precedence: command-line flags > ``--config`` file > built-in
defaults. Config files are INI with ``[train]`` and ``[evolution]`` sections
whose keys are the ``TrainConfig`` / ``EvolutionConfig`` field names.

Exit codes: 0 ok, 1 config error, 2 data error, 3 numeric divergence,
4 incomplete comparison.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import datetime as dt
import functools
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .data import SplitSpec, Splits, load_checkpoint, load_data, save_checkpoint, stratified_split
from .errors import ConfigError, DataError, DivergenceError, FormatError, HybridTrainError
from .evolution import EvolutionConfig, run_evolution
from .nn import evaluate, get_tail_weights, set_tail_weights
from .trainer import (EVOLVE, ComparisonReport, EpochRecord, RunResult, TrainConfig, default_architecture,
                      init_model, model_from_checkpoint, model_to_checkpoint, train_hybrid,
                      train_regular, validation_fitness)
from .tensor import RngStream

log = logging.getLogger("hybridtrain")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED, EXIT_INCOMPLETE = 0, 1, 2, 3, 4

FLAG_FIELDS = {  # flag dest -> (section, field)
    "epochs": ("train", "max_epochs"),
    "n": ("train", "warmup_epochs"),
    "y": ("train", "evolve_every"),
    "lr": ("train", "learning_rate"),
    "batch_size": ("train", "batch_size"),
    "fitness_workers": ("train", "fitness_workers"),
    "pop": ("evolution", "pop_size"),
    "gens": ("evolution", "generations"),
}


# -- configuration --------------------------------------------------------------

def _coerce(value: str, target):
    if isinstance(target, bool):
        if value.lower() in ("1", "true", "yes", "on"):
            return True
        if value.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"not a boolean: {value!r}")
    try:
        return type(target)(value)
    except ValueError as exc:
        raise ConfigError(f"cannot parse {value!r} as {type(target).__name__}") from exc


def read_config_file(path: str | Path) -> dict:
    """INI file -> {"train": {...}, "evolution": {...}, "data": {...}} with typed values."""
    parser = configparser.ConfigParser()
    if not parser.read(path):
        raise ConfigError(f"cannot read config file {path}")
    defaults = {"train": TrainConfig().to_dict(), "evolution": EvolutionConfig().to_dict()}
    out: dict = {"train": {}, "evolution": {}, "data": {}}
    for section in parser.sections():
        if section not in out:
            raise ConfigError(f"{path}: unknown section [{section}]")
        for key, value in parser.items(section):
            if section == "data":
                out["data"][key] = value
                continue
            if key not in defaults[section] or key == "evolution":
                raise ConfigError(f"{path}: unknown key {key!r} in [{section}]")
            out[section][key] = _coerce(value, defaults[section][key])
    return out


def resolve_config(args) -> TrainConfig:
    file_cfg = read_config_file(args.config) if getattr(args, "config", None) else {"train": {}, "evolution": {}}
    train = dict(file_cfg["train"])
    evo = dict(file_cfg["evolution"])
    for dest, (section, name) in FLAG_FIELDS.items():
        value = getattr(args, dest, None)
        if value is not None:
            (train if section == "train" else evo)[name] = value
    if getattr(args, "seed", None) is not None:
        train["seed"] = args.seed
    return TrainConfig(evolution=EvolutionConfig(**evo), **train)


def data_settings(args) -> dict:
    file_data = read_config_file(args.config)["data"] if getattr(args, "config", None) else {}
    source = args.data or file_data.get("source") or "synthetic:"
    subset = args.subset if args.subset is not None else int(file_data.get("subset", 0))
    split = args.split or file_data.get("split", "4,1,1")
    split_seed = args.split_seed if args.split_seed is not None else int(file_data.get("split_seed", 0))
    return {"source": source, "subset": subset, "split": split, "split_seed": split_seed}


def build_splits(settings: dict) -> Splits:
    try:
        ratios = [float(x) for x in settings["split"].split(",")]
    except ValueError as exc:
        raise ConfigError(f"bad --split {settings['split']!r}") from exc
    if len(ratios) != 3:
        raise ConfigError("--split needs three comma-separated ratios (train,validation,test)")
    ds = load_data(settings["source"], settings["subset"] or None, settings["split_seed"])
    return stratified_split(ds, SplitSpec.from_ratios(*ratios, seed=settings["split_seed"]))


# -- outputs ------------------------------------------------------------------------

def _fmt(x) -> str:
    if x is None:
        return ""
    return repr(float(x))


class MetricsWriter:
    """Append-only per-epoch CSV, flushed after every row.

    With ``keep_through`` set (a resumed run), existing rows up to that epoch
    are kept and later ones dropped before appending.
    """

    def __init__(self, path: str | Path, generations: int, keep_through: int | None = None):
        self.generations = generations
        self.path = Path(path)
        kept: list[list[str]] = []
        if keep_through is not None and self.path.exists():
            with open(self.path, newline="") as fh:
                rows = list(csv.reader(fh))
            if rows and rows[0] == metrics_header(generations):
                kept = [r for r in rows[1:] if r and int(r[0]) <= keep_through]
        self._fh = open(self.path, "w", newline="")
        self._csv = csv.writer(self._fh, lineterminator="\n")
        self._csv.writerow(metrics_header(generations))
        self._csv.writerows(kept)
        self._fh.flush()

    def write(self, rec: EpochRecord) -> None:
        gens = [""] * self.generations
        if rec.evolution_trace:
            gens = [_fmt(v) for v in rec.evolution_trace[1:self.generations + 1]]
        self._csv.writerow([rec.epoch, _fmt(rec.train_loss), _fmt(rec.val_acc), _fmt(rec.test_acc),
                            _fmt(rec.wall_s)] + gens)
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()


def metrics_header(generations: int) -> list[str]:
    return ["epoch", "train_loss", "val_acc", "test_acc", "wall_s"] + [
        f"evo_gen_best_{g}" for g in range(1, generations + 1)]


def read_metrics(path: str | Path) -> list[EpochRecord]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for row in rows:
        gens = sorted((k for k in row if k.startswith("evo_gen_best_")), key=lambda k: int(k.rsplit("_", 1)[1]))
        trace = [float(row[k]) for k in gens if row[k] != ""]
        out.append(EpochRecord(int(row["epoch"]), float(row["train_loss"]), float(row["val_acc"]),
                               float(row["test_acc"]) if row["test_acc"] else None, float(row["wall_s"]),
                               [float("nan")] + trace if trace else None))
    return out


def _now() -> str:
    return dt.datetime.now(dt.timezone.utc).isoformat()


def write_manifest(path: Path, manifest: dict) -> None:
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def pct(ms: tuple[float, float]) -> str:
    return f"{100 * ms[0]:.2f} ± {100 * ms[1]:.2f}"


def render_tables(report: ComparisonReport | dict) -> str:
    """Plain-text versions of the per-generation table and the final-results table."""
    d = report.to_dict() if isinstance(report, ComparisonReport) else report
    g = d["generations"]
    lines = ["Table I: mean validation accuracy (%) at evolution epochs",
             " | ".join(["Epoch"] + [f"Hybrid gen {k}" for k in range(1, g + 1)] + ["Regular"])]
    regular = {row["epoch"]: row for row in d["per_epoch"].get("regular", [])}
    for row in d["per_epoch"].get("hybrid", []):
        if "generations" not in row:
            continue
        reg = regular.get(row["epoch"])
        cells = [str(row["epoch"])] + [pct(ms) for ms in row["generations"]]
        cells.append(pct(reg["val_acc"]) if reg else "n/a")
        lines.append(" | ".join(cells))
    lines += ["", "Table II: final accuracy and time cost",
              "Method | Validation Accuracy (%) | Test Accuracy (%) | Time Cost (s)"]
    for method, label in (("hybrid", "Hybrid Method"), ("regular", "Regular Method")):
        s = d["summary"].get(method)
        if not s or not s["n_runs"]:
            lines.append(f"{label} | n/a | n/a | n/a")
            continue
        lines.append(f"{label} | {pct(s['val_acc'])} | {pct(s['test_acc'])} | {s['wall_s'][0]:.2f}")
    if not d.get("complete", True):
        lines += ["", "INCOMPLETE: " + "; ".join(d.get("errors", []))]
    return "\n".join(lines) + "\n"


# -- commands -----------------------------------------------------------------------

def _train_one(method: str, data: Splits, cfg: TrainConfig, out: Path, architecture: dict | None = None,
               checkpoint_every: int = 0, resume=None) -> RunResult:
    """Train one run, streaming metrics to ``out/metrics.csv`` and checkpoints to ``out``."""
    import time

    out.mkdir(parents=True, exist_ok=True)
    if resume is not None:
        model, start = model_from_checkpoint(resume), resume.epoch
    else:
        model, start = init_model(architecture or default_architecture(data), cfg.seed), 0
    writer = MetricsWriter(out / "metrics.csv", cfg.evolution.generations, start if resume is not None else None)
    extra = {"method": method, "config": cfg.to_dict()}

    def on_epoch(rec: EpochRecord) -> None:
        writer.write(rec)
        if checkpoint_every and rec.epoch % checkpoint_every == 0 and rec.epoch < cfg.max_epochs:
            save_checkpoint(out / f"epoch_{rec.epoch:04d}.ckpt",
                            model_to_checkpoint(model, rec.epoch, cfg.seed, _phase(method, cfg, rec.epoch), extra))

    train = train_hybrid if method == "hybrid" else train_regular
    t0 = time.perf_counter()
    try:
        _, records = train(model, data, cfg, start_epoch=start, on_epoch=on_epoch)
    finally:
        writer.close()
    save_checkpoint(out / "final.ckpt", model_to_checkpoint(model, cfg.max_epochs, cfg.seed, "done", extra))
    return RunResult(method, cfg.seed, records, time.perf_counter() - t0)


def _phase(method: str, cfg: TrainConfig, epoch: int) -> str:
    if method == "regular":
        return "regular"
    return "hybrid-warmup" if epoch < cfg.warmup_epochs else "hybrid-evolving"


def cmd_train(args) -> int:
    if args.manifest:
        manifest = json.loads(Path(args.manifest).read_text())
        cfg = TrainConfig.from_dict(manifest["config"])
        settings = manifest["data"]
        method = manifest["method"]
    else:
        cfg = resolve_config(args)
        settings = data_settings(args)
        method = args.method
    if method not in ("regular", "hybrid"):
        raise ConfigError(f"--method must be regular or hybrid, got {method!r}")
    cfg.validate(hybrid=method == "hybrid")
    resume = load_checkpoint(args.resume) if args.resume else None
    if resume is not None and resume.seed != cfg.seed:
        raise ConfigError(f"checkpoint seed {resume.seed} differs from run seed {cfg.seed}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {"command": "train", "method": method, "config": cfg.to_dict(), "seed": cfg.seed, "data": settings,
                "version": __version__, "resumed_from_epoch": resume.epoch if resume else 0,
                "started": _now(), "finished": None}
    write_manifest(out / "manifest.json", manifest)
    data = build_splits(settings)
    result = _train_one(method, data, cfg, out, checkpoint_every=args.checkpoint_every, resume=resume)
    manifest["finished"] = _now()
    write_manifest(out / "manifest.json", manifest)
    final = result.final
    print(f"{method} seed={cfg.seed} final val_acc={final.val_acc:.4f} test_acc={final.test_acc:.4f} "
          f"wall={result.wall_s:.1f}s")
    return EXIT_OK


def _compare_runner(data: Splits, cfg_dict: dict, out: str, method: str, seed: int) -> RunResult:
    cfg = TrainConfig.from_dict(cfg_dict)
    cfg.seed = seed
    return _train_one(method, data, cfg, Path(out) / f"seed_{seed}" / method)


def cmd_compare(args) -> int:
    from .trainer import run_comparison

    cfg = resolve_config(args)
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else [cfg.seed]
    settings = data_settings(args)
    cfg.validate()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {"command": "compare", "config": cfg.to_dict(), "seeds": seeds, "data": settings,
                "version": __version__, "started": _now(), "finished": None}
    write_manifest(out / "manifest.json", manifest)
    data = build_splits(settings)
    runner = functools.partial(_compare_runner, data, cfg.to_dict(), str(out))
    report = run_comparison(data, cfg, seeds, jobs=args.jobs, runner=runner)
    (out / "report.json").write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    text = render_tables(report)
    (out / "report.txt").write_text(text)
    manifest["finished"] = _now()
    write_manifest(out / "manifest.json", manifest)
    print(text, end="")
    return EXIT_OK if report.complete else EXIT_INCOMPLETE


def cmd_evolve(args) -> int:
    ck = load_checkpoint(args.checkpoint)
    try:
        model = model_from_checkpoint(ck)
    except HybridTrainError as exc:
        raise FormatError(f"incompatible checkpoint architecture: {exc}") from exc
    evo = resolve_config(args).evolution
    seed = args.seed if args.seed is not None else ck.seed
    data = build_splits(data_settings(args))
    if tuple(data.validation.images.shape[1:]) != model.input_shape:
        raise FormatError(f"checkpoint expects inputs {model.input_shape}, data has "
                          f"{tuple(data.validation.images.shape[1:])}")
    fitness = validation_fitness(model, data)
    best, trace = run_evolution(get_tail_weights(model), fitness, evo, RngStream(seed).substream(EVOLVE, ck.epoch),
                                workers=args.fitness_workers or 1)
    set_tail_weights(model, best)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out / "evolved.ckpt", model_to_checkpoint(model, ck.epoch, ck.seed, "evolved", ck.extra))
    with open(out / "trace.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["generation", "best_fitness", "mean_fitness"])
        for rec in trace:
            w.writerow([rec.generation, _fmt(rec.best_fitness), _fmt(rec.mean_fitness)])
    print(f"validation accuracy {trace[0].best_fitness:.4f} -> {trace[-1].best_fitness:.4f} "
          f"over {len(trace) - 1} generations")
    return EXIT_OK


def cmd_eval(args) -> int:
    model = model_from_checkpoint(load_checkpoint(args.checkpoint))
    data = build_splits(data_settings(args))
    acc = evaluate(model, data.get(args.which))
    print(repr(acc))
    return EXIT_OK


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="INI config file with [train], [evolution], [data] sections")
    p.add_argument("--data", help="cifar10:<dir> or synthetic:key=value,... (default synthetic:)")
    p.add_argument("--subset", type=int, help="stratified subset size taken before splitting")
    p.add_argument("--split", help="train,validation,test ratios (default 4,1,1)")
    p.add_argument("--split-seed", type=int, dest="split_seed")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--n", type=int, help="warm-up epochs before the first evolution event")
    p.add_argument("--y", type=int, help="epochs between evolution events")
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--pop", type=int, help="individuals per generation")
    p.add_argument("--gens", type=int, help="generations per evolution event")
    p.add_argument("--fitness-workers", type=int, dest="fitness_workers",
                   help="threads for fitness evaluation (results do not depend on it)")
    p.add_argument("--out", default="runs/latest")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hybridtrain", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one model (regular or hybrid)")
    _add_common(p)
    p.add_argument("--method", choices=("regular", "hybrid"), default="hybrid")
    p.add_argument("--manifest", help="rerun exactly from a previous run's manifest.json")
    p.add_argument("--resume", help="continue from an epoch checkpoint")
    p.add_argument("--checkpoint-every", type=int, default=0, dest="checkpoint_every")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("compare", help="matched-seed regular vs hybrid comparison")
    _add_common(p)
    p.add_argument("--seeds", help="comma-separated seeds, e.g. 1,2,3")
    p.add_argument("--jobs", type=int, default=1, help="runs executed concurrently")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("evolve", help="evolve the tail of a trained checkpoint")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=cmd_evolve)

    p = sub.add_parser("eval", help="accuracy of a checkpoint on one split")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--which", default="validation", choices=("train", "validation", "val", "test"))
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return args.func(args)
    except DivergenceError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (DataError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ConfigError, HybridTrainError, ValueError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
