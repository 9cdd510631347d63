# ishne/checkpoint.py
# Text checkpoint container; the layout is described in CHECKPOINT_FORMAT.md.

from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import TYPE_CHECKING, Optional, Union

import numpy as np

from .attention import MetaPathAttentionParams
from .autodiff import Tensor
from .config import TrainConfig
from .errors import CheckpointFormatError, CheckpointMismatch, ShapeMismatch
from .fusion import FusionParams

if TYPE_CHECKING:
    from .training import GraphInputs, IshneModel

logger = logging.getLogger(__name__)

MAGIC = "ISHNE-CKPT"
VERSION = 1


def _fmt(v):
    return repr(float(v))


def save_checkpoint(model: IshneModel, path: Union[str, Path]) -> None:
    cfg = model.config
    meta = {
        "hidden": cfg.hidden,
        "heads": cfg.heads,
        "fusion_dim": cfg.fusion_dim,
        "in_dim": model.in_dim,
        "n_classes": model.n_classes,
        "metapaths": model.names,
        "activation_attn": cfg.activation_attn,
        "activation_agg": cfg.activation_agg,
        "influence": cfg.influence,
    }
    lines = [f"{MAGIC}\t{VERSION}", "meta\t" + json.dumps(meta, sort_keys=True)]
    for name, p in sorted(model.named_parameters().items()):
        shape = ",".join(str(s) for s in p.shape)
        values = ",".join(_fmt(v) for v in p.data.reshape(-1))
        lines.append(f"{name}\t{shape}\t{values}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    logger.debug("checkpoint written: %s", path)


def read_checkpoint(path):
    """(meta dict, {name: ndarray}) without building a model."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise CheckpointFormatError(f"checkpoint not found: {path}")
    lines = text.splitlines()
    if len(lines) < 2 or lines[0].split("\t") != [MAGIC, str(VERSION)]:
        raise CheckpointFormatError(f"{path}: not an {MAGIC} v{VERSION} file")
    tag, _, meta_json = lines[1].partition("\t")
    if tag != "meta":
        raise CheckpointFormatError(f"{path}:2: expected meta line")
    try:
        meta = json.loads(meta_json)
    except json.JSONDecodeError as e:
        raise CheckpointFormatError(f"{path}:2: bad meta json ({e})")
    arrays = {}
    for lineno, line in enumerate(lines[2:], start=3):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise CheckpointFormatError(f"{path}:{lineno}: expected name, shape, values")
        name, shape_txt, values_txt = parts
        try:
            shape = tuple(int(s) for s in shape_txt.split(","))
            values = np.array([float(v) for v in values_txt.split(",")], dtype=np.float64)
            arrays[name] = values.reshape(shape)
        except ValueError as e:
            raise CheckpointFormatError(f"{path}:{lineno}: {e}")
    return meta, arrays


def load_checkpoint(path: Union[str, Path], config: Optional[TrainConfig] = None) -> IshneModel:
    """Rebuild an IshneModel; shape settings come from the checkpoint, the rest from `config`."""
    from .training import IshneModel

    meta, arrays = read_checkpoint(path)
    base = (config or TrainConfig()).to_dict()
    base.update(
        hidden=meta["hidden"],
        heads=meta["heads"],
        fusion_dim=meta["fusion_dim"],
        activation_attn=meta["activation_attn"],
        activation_agg=meta["activation_agg"],
        influence=meta["influence"],
    )
    base["patience"] = min(base["patience"], base["epochs"])
    cfg = TrainConfig(**base)
    try:
        metapaths = [
            MetaPathAttentionParams(
                name=n,
                M=Tensor(arrays[f"M.{n}"], requires_grad=True, name=f"M.{n}"),
                P=Tensor(arrays[f"P.{n}"], requires_grad=True, name=f"P.{n}"),
                a=[
                    Tensor(arrays[f"a.{n}.head{k}"], requires_grad=True, name=f"a.{n}.head{k}")
                    for k in range(meta["heads"])
                ],
            )
            for n in meta["metapaths"]
        ]
        fusion = FusionParams(
            *(Tensor(arrays[k], requires_grad=True, name=k) for k in ("W_Q", "W_K", "W_V", "q"))
        )
        model = IshneModel(metapaths, fusion, Tensor(arrays["C"], requires_grad=True, name="C"), cfg)
    except KeyError as e:
        raise CheckpointFormatError(f"{path}: missing parameter {e.args[0]}")
    except ShapeMismatch as e:
        raise CheckpointFormatError(f"{path}: inconsistent parameters ({e})")
    extra = set(arrays) - set(model.named_parameters())
    if extra:
        raise CheckpointFormatError(f"{path}: unexpected parameters {sorted(extra)}")
    return model


def check_compatible(model: IshneModel, inputs: GraphInputs, n_classes: Optional[int] = None) -> None:
    """CheckpointMismatch when the model cannot run on these inputs."""
    if model.names != inputs.names:
        raise CheckpointMismatch(
            f"checkpoint meta-paths {model.names} differ from requested {inputs.names}"
        )
    if inputs.H.shape[1] != model.in_dim:
        raise CheckpointMismatch(
            f"checkpoint expects {model.in_dim} input features, graph has {inputs.H.shape[1]}"
        )
    if n_classes is not None and n_classes > model.n_classes:
        raise CheckpointMismatch(
            f"checkpoint classifies {model.n_classes} classes, graph labels need {n_classes}"
        )


def check_hidden(model: IshneModel, hidden: Optional[int] = None, heads: Optional[int] = None) -> None:
    """CheckpointMismatch when explicit F' / K flags disagree with the checkpoint."""
    if hidden is not None and hidden != model.config.hidden:
        raise CheckpointMismatch(f"checkpoint has hidden={model.config.hidden}, requested {hidden}")
    if heads is not None and heads != model.config.heads:
        raise CheckpointMismatch(f"checkpoint has heads={model.config.heads}, requested {heads}")
