# ishne/cli.py
"""
Command-line entry point.

    python -m ishne gensynth --out g.txt --seed 7
    python -m ishne train --graph g.txt --metapaths P-A-P,P-S-P --train 60 --val 40 --seed 7 --out runs/a
    python -m ishne eval --graph g.txt --metapaths P-A-P,P-S-P --out runs/a
    python -m ishne embed --graph g.txt --metapaths P-A-P,P-S-P --out runs/a
    python -m ishne gradcheck
    python -m ishne report --out runs/a

Defaults come from ishne.config.DEFAULT_CFG, then `--config file.yaml`, then flags.
"""

import argparse
import logging
import sys
from dataclasses import dataclass, field, asdict
from datetime import datetime
from pathlib import Path

import numpy as np
import pandas as pd
import yaml

from . import __version__
from .applog import detach_file_handlers, setup_logging
from .checkpoint import check_compatible, check_hidden, load_checkpoint, save_checkpoint
from .config import ACTIVATIONS, TrainConfig, dump_config, load_config, merge_overrides
from .dataio import (
    SynthSpec,
    generate_synthetic,
    load_graph,
    load_split,
    make_split,
    synthetic_metapaths,
    write_embeddings,
    write_graph,
    write_split,
)
from .errors import ConfigError, IshneError
from .hetgraph import parse_schemas
from .metrics import as_percent, score_report
from .report import make_charts, run_report_pdf
from .training import IshneModel, forward, gradient_check, predict, prepare_inputs, train

logger = logging.getLogger("ishne")

MODEL_FLAGS = {
    "graph": "data.graph",
    "metapaths": "data.metapaths",
    "hidden": "model.hidden",
    "heads": "model.heads",
    "fusion_dim": "model.fusion_dim",
    "activation_attn": "model.activation_attn",
    "activation_agg": "model.activation_agg",
    "dropout": "model.dropout",
    "influence": "model.influence",
    "lr": "training.lr",
    "weight_decay": "training.weight_decay",
    "epochs": "training.epochs",
    "patience": "training.patience",
    "seed": "training.seed",
    "workers": "training.workers",
    "debug_checks": "training.debug_checks",
    "train": "split.train",
    "val": "split.val",
    "out": "paths.out",
}

SYNTH_FLAGS = {
    "targets": "synthetic.targets",
    "intermediates": "synthetic.intermediates",
    "classes": "synthetic.classes",
    "feature_dim": "synthetic.feature_dim",
    "p_in": "synthetic.p_in",
    "p_out": "synthetic.p_out",
    "snr": "synthetic.snr",
    "seed": "synthetic.seed",
}


@dataclass
class RunManifest:
    command: str
    seed: int
    dataset: str
    metapaths: list
    out: str
    train_config: dict
    config: dict
    split: dict = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)
    beta: dict = field(default_factory=dict)
    best_epoch: int = 0
    epochs_run: int = 0
    version: str = __version__
    created: str = field(default_factory=lambda: datetime.now().isoformat(timespec="seconds"))

    def write(self, path):
        with open(path, "w", encoding="utf-8") as f:
            yaml.safe_dump(asdict(self), f, sort_keys=False)


# ---------------- Shared helpers ----------------
def _resolve(args, flag_map):
    cfg = load_config(args.config)
    overrides = {key: getattr(args, name, None) for name, key in flag_map.items()}
    return merge_overrides(cfg, overrides)


def _load_inputs(cfg):
    graph_path = cfg["data"]["graph"]
    if not graph_path:
        raise ConfigError("no graph given (use --graph or data.graph in the config file)")
    graph = load_graph(graph_path)
    schemas = parse_schemas(cfg["data"]["metapaths"], graph)
    target = cfg["data"]["target_type"]
    if target and target != schemas[0].target_type:
        raise ConfigError(
            f"meta-paths start on '{schemas[0].target_type}' but data.target_type is '{target}'"
        )
    return graph, schemas, prepare_inputs(graph, schemas)


def _n_classes(inputs):
    labeled = inputs.labels[inputs.labels >= 0]
    if len(labeled) == 0:
        raise ConfigError("graph has no labels on the target node type")
    return int(labeled.max()) + 1


def _split_for(args, cfg, graph, schemas):
    split_dir = getattr(args, "split_dir", None)
    run_splits = Path(cfg["paths"]["out"]) / "splits"
    if split_dir:
        return load_split(split_dir)
    if (run_splits / "train.txt").exists():
        return load_split(run_splits)
    return make_split(
        graph, cfg["split"]["train"], cfg["split"]["val"], cfg["training"]["seed"], schemas[0].target_type
    )


def _evaluate(model, inputs, split):
    pred = predict(model, inputs)
    out = {}
    for part in ("train", "val", "test"):
        ids = getattr(split, part)
        if len(ids) == 0:
            continue
        rows = inputs.rows(ids)
        out[part] = score_report(pred[rows], inputs.labels[rows])
    return out


def _print_metrics(metrics, parts=("val", "test")):
    for part in parts:
        if part in metrics:
            m = metrics[part]
            print(f"{part}\tMicro-F1 {as_percent(m['micro_f1'])}%\tMacro-F1 {as_percent(m['macro_f1'])}%")


def _beta_dict(model, inputs):
    fused = forward(model, inputs).fused
    return {n: float(b) for n, b in zip(model.names, fused.beta.data)}


# ---------------- Commands ----------------
def cmd_train(args):
    cfg = _resolve(args, MODEL_FLAGS)
    out = Path(cfg["paths"]["out"])
    out.mkdir(parents=True, exist_ok=True)
    setup_logging(out, args.verbose)
    tc = TrainConfig.from_cfg(cfg)
    graph, schemas, inputs = _load_inputs(cfg)
    split = make_split(graph, cfg["split"]["train"], cfg["split"]["val"], tc.seed, schemas[0].target_type)
    write_split(split, out / "splits")
    dump_config(cfg, out / "config.yaml")

    model = IshneModel.init([s.name for s in schemas], inputs.H.shape[1], _n_classes(inputs), tc)
    logger.info(
        "training %d parameters on %d/%d/%d nodes",
        sum(p.size for p in model.parameters()), len(split.train), len(split.val), len(split.test),
    )
    ckpt = out / "checkpoint.ckpt"
    model, history = train(model, inputs, split, tc, checkpoint_path=ckpt)
    save_checkpoint(model, ckpt)
    history.write_tsv(out / "epochs.tsv")

    metrics = _evaluate(model, inputs, split)
    manifest = RunManifest(
        command="train",
        seed=tc.seed,
        dataset=str(cfg["data"]["graph"]),
        metapaths=[str(s) for s in schemas],
        out=str(out),
        train_config=tc.to_dict(),
        config=cfg,
        split=split.sizes(),
        metrics=metrics,
        beta=_beta_dict(model, inputs),
        best_epoch=history.best_epoch,
        epochs_run=len(history),
    )
    manifest.write(out / "manifest.yaml")
    charts = make_charts(out, history.to_frame(), list(manifest.beta.values()), model.names)
    run_report_pdf(asdict(manifest), charts, out / "report.pdf")
    _print_metrics(metrics)
    return 0


def _load_model_for(args, cfg, inputs):
    ckpt = args.checkpoint or Path(cfg["paths"]["out"]) / "checkpoint.ckpt"
    model = load_checkpoint(ckpt, TrainConfig.from_cfg(cfg))
    check_hidden(model, args.hidden, args.heads)
    check_compatible(model, inputs, _n_classes(inputs))
    return model


def cmd_eval(args):
    cfg = _resolve(args, MODEL_FLAGS)
    setup_logging(None, args.verbose)
    graph, schemas, inputs = _load_inputs(cfg)
    model = _load_model_for(args, cfg, inputs)
    split = _split_for(args, cfg, graph, schemas)
    metrics = _evaluate(model, inputs, split)
    if args.split not in metrics:
        raise ConfigError(f"split '{args.split}' is empty")
    _print_metrics(metrics, parts=(args.split,))
    return 0


def cmd_embed(args):
    cfg = _resolve(args, MODEL_FLAGS)
    setup_logging(None, args.verbose)
    graph, schemas, inputs = _load_inputs(cfg)
    model = _load_model_for(args, cfg, inputs)
    fused = forward(model, inputs).fused
    target = Path(args.output) if args.output else Path(cfg["paths"]["out"]) / "embeddings.tsv"
    write_embeddings(target, inputs.node_ids, fused.X.data, fused.beta.data, model.names)
    print("beta\t" + "\t".join(f"{n}={b:.6f}" for n, b in zip(model.names, fused.beta.data)))
    print(f"wrote {len(inputs.node_ids)} embeddings to {target}")
    return 0


def cmd_gensynth(args):
    cfg = _resolve(args, SYNTH_FLAGS)
    setup_logging(None, args.verbose)
    spec = SynthSpec.from_cfg(cfg)
    graph = generate_synthetic(spec)
    write_graph(graph, args.out)
    summary = graph.summary()
    counts = ", ".join(f"{t}={n}" for t, n in summary["node_types"].items())
    print(f"wrote {args.out}: {counts}; {summary['edges']} edges; meta-paths {synthetic_metapaths()}")
    return 0


def cmd_gradcheck(args):
    setup_logging(None, args.verbose)
    spec = SynthSpec(targets=args.targets, intermediates=3, classes=2, feature_dim=4, seed=args.seed)
    graph = generate_synthetic(spec)
    schemas = parse_schemas(synthetic_metapaths(), graph)
    inputs = prepare_inputs(graph, schemas)
    tc = TrainConfig(hidden=3, heads=2, fusion_dim=4, epochs=1, patience=1, seed=args.seed)
    model = IshneModel.init([s.name for s in schemas], spec.feature_dim, spec.classes, tc)
    errors = gradient_check(model, inputs, np.arange(inputs.num_nodes))
    print("parameter\tmax entry error\tnorm error")
    for name, err in errors.items():
        print(f"{name}\t{err.entry:.3e}\t{err.norm:.3e}")
    worst = max(err.entry for err in errors.values())
    ok = all(err.ok(args.tol) for err in errors.values())
    print(f"max relative error {worst:.3e} ({'ok' if ok else 'FAILED'})")
    return 0 if ok else 1


def cmd_report(args):
    run = Path(args.out)
    setup_logging(run, args.verbose)
    with open(run / "manifest.yaml", "r", encoding="utf-8") as f:
        manifest = yaml.safe_load(f)
    frame = pd.read_csv(run / "epochs.tsv", sep="\t")
    beta = manifest.get("beta", {})
    charts = make_charts(run, frame, list(beta.values()), list(beta.keys()))
    path = run_report_pdf(manifest, charts, run / "report.pdf")
    print(f"report: {path}" if path else "report could not be built (see log)")
    return 0 if path else 1


# ---------------- Parser ----------------
def _add_common(p):
    p.add_argument("--config", default=None, help="YAML file overriding built-in defaults")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")


def _add_model_flags(p):
    p.add_argument("--graph", default=None, help="graph file")
    p.add_argument("--metapaths", default=None, help="comma-separated, e.g. P-A-P,P-S-P")
    p.add_argument("--hidden", type=int, default=None, help="projection dimension F'")
    p.add_argument("--heads", type=int, default=None, help="attention heads K")
    p.add_argument("--fusion-dim", type=int, default=None, help="Q/K/V dimension d")
    p.add_argument("--activation-attn", choices=ACTIVATIONS, default=None)
    p.add_argument("--activation-agg", choices=ACTIVATIONS, default=None)
    p.add_argument("--dropout", type=float, default=None, help="attention dropout rate")
    p.add_argument(
        "--no-influence", dest="influence", action="store_const", const=False, default=None,
        help="drop the influence term from node-level attention",
    )
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--weight-decay", type=float, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--patience", type=int, default=None)
    p.add_argument("--train", type=int, default=None, help="training nodes")
    p.add_argument("--val", type=int, default=None, help="validation nodes")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--debug-checks", action="store_const", const=True, default=None)
    p.add_argument("--out", default=None, help="run directory")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="ishne", description="Influence self-attention embedding for heterogeneous graphs."
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train and evaluate a model")
    _add_common(p)
    _add_model_flags(p)
    p.set_defaults(func=cmd_train)

    for name, func, helptext in (
        ("eval", cmd_eval, "score a checkpoint on a split"),
        ("embed", cmd_embed, "export fused embeddings and meta-path weights"),
    ):
        p = sub.add_parser(name, help=helptext)
        _add_common(p)
        _add_model_flags(p)
        p.add_argument("--checkpoint", default=None, help="defaults to <out>/checkpoint.ckpt")
        p.add_argument("--split-dir", default=None, help="directory with train/val/test.txt")
        if name == "eval":
            p.add_argument("--split", choices=("train", "val", "test"), default="test")
        else:
            p.add_argument("--output", default=None, help="defaults to <out>/embeddings.tsv")
        p.set_defaults(func=func)

    p = sub.add_parser("gensynth", help="write a planted-community synthetic graph")
    _add_common(p)
    p.add_argument("--targets", type=int, default=None)
    p.add_argument("--intermediates", type=int, default=None, help="nodes per intermediate type")
    p.add_argument("--classes", type=int, default=None)
    p.add_argument("--feature-dim", type=int, default=None)
    p.add_argument("--p-in", type=float, default=None)
    p.add_argument("--p-out", type=float, default=None)
    p.add_argument("--snr", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True, help="graph file to write")
    p.set_defaults(func=cmd_gensynth)

    p = sub.add_parser("gradcheck", help="finite-difference check of every parameter gradient")
    _add_common(p)
    p.add_argument("--targets", type=int, default=8)
    p.add_argument("--seed", type=int, default=3)
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("report", help="rebuild charts and the PDF report of a run")
    _add_common(p)
    p.add_argument("--out", required=True, help="run directory")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except IshneError as e:
        logger.debug("command failed", exc_info=True)
        print(f"error ({type(e).__name__}): {e}", file=sys.stderr)
        return e.exit_code
    except Exception:
        logger.exception("Unexpected failure")
        return 1
    finally:
        detach_file_handlers()
