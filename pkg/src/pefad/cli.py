"""Command-line experiment runner.

Stages read and write a single output directory::

    data/client_{i}_{train,test,labels}.csv   gen-data
    shared.csv                                synth-shared
    checkpoint_init.bin, checkpoint.bin,
    ledger.csv, losses.csv                    train
    metrics.csv                               evaluate
    report.txt                                report
"""

from __future__ import annotations

import argparse
import csv
import shutil
import sys
from dataclasses import replace
from pathlib import Path

from . import backbone as bb
from . import data, detection, federation, ppds
from .config import ExperimentConfig, apply_variant, load_config, with_seed
from .errors import ConfigError, InputError, PefadError

METRIC_COLUMNS = ("variant", "client", "weight", *detection.REPORT_FIELDS)


class StageError(Exception):
    def __init__(self, stage: str, exc: Exception):
        super().__init__(f"{stage} failed: {exc}")
        self.stage = stage


def _stage(name: str, fn, *args):
    try:
        return fn(*args)
    except (PefadError, ValueError, OSError) as exc:
        raise StageError(name, exc) from exc


def _data_paths(out: Path, i: int) -> tuple[Path, Path, Path]:
    d = out / "data"
    return d / f"client_{i}_train.csv", d / f"client_{i}_test.csv", d / f"client_{i}_labels.csv"


def load_clients(cfg: ExperimentConfig, out: Path) -> list[data.RawDataset]:
    """Normalised per-client datasets from the output directory."""
    clients = []
    for i in range(cfg.bench.n_clients):
        train, test, labels = _data_paths(out, i)
        for p in (train, test, labels):
            if not p.exists():
                raise InputError(f"missing {p} (run gen-data first)")
        clients.append(data.normalize(data.load_csv(train, test, labels))[0])
    return clients


# --------------------------------------------------------------------------- #
# stages

def gen_data(cfg: ExperimentConfig, out: Path) -> None:
    (out / "data").mkdir(parents=True, exist_ok=True)
    for i in range(cfg.bench.n_clients):
        dest = _data_paths(out, i)
        if cfg.csv_dir:
            src = Path(cfg.csv_dir)
            sources = (src / dest[0].name, src / dest[1].name, src / dest[2].name)
            data.load_csv(*sources)   # validate before copying
            for s, d in zip(sources, dest):
                shutil.copyfile(s, d)
        else:
            data.save_csv(data.synth_client(cfg.bench, i).dataset, *dest)


def synth_shared(cfg: ExperimentConfig, out: Path) -> None:
    clients = load_clients(cfg, out)
    per_client = {}
    for i, ds in enumerate(clients):
        model = ppds.train_vae(ds.train, cfg.vae, cfg.sub_seed(f"vae:{i}"))
        per_client[i] = ppds.synthesize(model, cfg.vae.synth_length, cfg.sub_seed(f"synth:{i}"))
    ppds.pool_shared_dataset(per_client).to_csv(out / "shared.csv")


def _initial_model(cfg: ExperimentConfig) -> bb.Backbone:
    return bb.build_model(cfg.backbone, seed=cfg.sub_seed("backbone"))


def train(cfg: ExperimentConfig, out: Path) -> federation.TrainingResult:
    clients = load_clients(cfg, out)
    shared = None
    if cfg.use_shared and cfg.train.lambda_ > 0:
        shared = ppds.SharedDataset.from_csv(out / "shared.csv")
    model = _initial_model(cfg)
    bb.save_checkpoint(model, out / "checkpoint_init.bin")
    partition = bb.partition_parameters(model)
    result = federation.run_training(model, partition, [c.train for c in clients], cfg.train,
                                     cfg.adms, shared, use_adms=cfg.use_adms)
    bb.save_checkpoint(result.model, out / "checkpoint.bin")
    result.ledger.write_csv(out / "ledger.csv")
    result.ledger.write_losses_csv(out / "losses.csv")
    return result


def evaluate(cfg: ExperimentConfig, out: Path, checkpoint: Path | None = None,
             metrics_name: str = "metrics.csv") -> list[detection.EvalReport]:
    model = bb.load_checkpoint(checkpoint or out / "checkpoint.bin")
    clients = load_clients(cfg, out)
    reports = [detection.evaluate(detection.score(model, c.test), c.test_labels, cfg.detection)
               for c in clients]
    weights = [len(c.test) for c in clients]
    with (out / metrics_name).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRIC_COLUMNS)
        for i, (rep, wt) in enumerate(zip(reports, weights)):
            w.writerow([cfg.variant, i, wt, *rep.csv_row()])
        total = sum(weights)
        avg = [sum(getattr(r, f) * wt for r, wt in zip(reports, weights)) / total
               for f in detection.REPORT_FIELDS]
        w.writerow([cfg.variant, "weighted", total, *[repr(float(v)) for v in avg]])
    return reports


def pct(value: float) -> str:
    return f"{100 * value:.2f}"


def report(out: Path, metrics_name: str = "metrics.csv") -> str:
    path = out / metrics_name
    if not path.exists():
        raise InputError(f"missing {path} (run evaluate first)")
    with path.open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    header = f"{'variant':<12}{'client':<10}{'P':>8}{'R':>8}{'AUC':>8}{'F1':>8}"
    lines = [header, "-" * len(header)]
    for r in rows:
        lines.append(f"{r['variant']:<12}{r['client']:<10}"
                     + "".join(f"{pct(float(r[k])):>8}" for k in ("precision", "recall", "auc", "f1")))
    text = "\n".join(lines) + "\n"
    (out / "report.txt").write_text(text)
    return text


def run_all(cfg: ExperimentConfig, out: Path) -> str:
    _stage("gen-data", gen_data, cfg, out)
    if cfg.use_shared and cfg.train.lambda_ > 0:
        _stage("synth-shared", synth_shared, cfg, out)
    _stage("train", train, cfg, out)
    _stage("evaluate", evaluate, cfg, out)
    return _stage("report", report, out)


# --------------------------------------------------------------------------- #
# entry point

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="experiment config file")
    common.add_argument("--out", help="output directory (overrides the config)")
    common.add_argument("--seed", type=int, help="master seed (overrides the config)")
    common.add_argument("--variant", help="ablation variant, e.g. w/o_adms or pefad_t2l")

    parser = argparse.ArgumentParser(prog="pefad", description="Federated time-series anomaly detection runs.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in [("run", "all stages end to end"),
                        ("gen-data", "write per-client train/test/label CSVs"),
                        ("synth-shared", "train per-client VAEs and pool the shared dataset"),
                        ("train", "federated training"),
                        ("report", "render metrics.csv as a percentage table")]:
        sub.add_parser(name, parents=[common], help=help_)
    ev = sub.add_parser("evaluate", parents=[common], help="score test splits and write metrics.csv")
    ev.add_argument("--checkpoint", help="checkpoint to evaluate (default: OUT/checkpoint.bin)")
    ev.add_argument("--metrics", default="metrics.csv", help="metrics file name inside OUT")
    return parser


def _resolve(args) -> tuple[ExperimentConfig, Path]:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = with_seed(cfg, args.seed)
    if args.variant:
        cfg = apply_variant(cfg, args.variant)
    out = Path(args.out or cfg.out)
    return replace(cfg, out=str(out)), out


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg, out = _resolve(args)
    except ConfigError as exc:
        print(f"pefad: config error: {exc}", file=sys.stderr)
        return 2
    out.mkdir(parents=True, exist_ok=True)
    stages = {
        "run": lambda: print(run_all(cfg, out), end=""),
        "gen-data": lambda: gen_data(cfg, out),
        "synth-shared": lambda: synth_shared(cfg, out),
        "train": lambda: train(cfg, out),
        "evaluate": lambda: evaluate(cfg, out, Path(args.checkpoint) if args.checkpoint else None,
                                     args.metrics),
        "report": lambda: print(report(out), end=""),
    }
    try:
        _stage(args.command, stages[args.command])
    except StageError as exc:
        print(f"pefad: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
