# ishne/training.py
"""
The full model, the semi-supervised classification objective and the
optimizer loop with early stopping on validation loss.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Callable, Dict, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from . import autodiff as ad
from .attention import MetaPathAttentionParams, embed_metapaths, glorot
from .autodiff import GradientTape, Tensor
from .config import TrainConfig
from .errors import (
    DataError,
    EmptyTrainSet,
    NonFiniteLoss,
    ShapeMismatch,
    TrainingError,
)
from .fusion import FusionParams, semantic_fusion
from .metrics import micro_f1

if TYPE_CHECKING:
    from .hetgraph import HetGraph, MetaPathSchema

logger = logging.getLogger(__name__)

REDUCTIONS = ("mean", "sum")


# ---------------- Inputs & splits ----------------
@dataclass
class GraphInputs:
    """Target-type features, labels and one neighborhood per meta-path."""

    node_ids: np.ndarray
    H: Tensor
    labels: np.ndarray
    neighborhoods: list
    schemas: list

    @property
    def num_nodes(self):
        return len(self.node_ids)

    @property
    def names(self):
        return [s.name for s in self.schemas]

    def rows(self, node_ids):
        pos = {int(n): r for r, n in enumerate(self.node_ids)}
        try:
            return np.asarray([pos[int(n)] for n in node_ids], dtype=np.int64)
        except KeyError as e:
            raise DataError(f"node {e.args[0]} is not a target node of this graph")


def prepare_inputs(graph: HetGraph, schemas: Sequence[MetaPathSchema], self_loops: bool = True) -> GraphInputs:
    target = schemas[0].target_type
    node_ids, feats = graph.feature_matrix(target)
    neighborhoods = [graph.metapath_neighbors(s, self_loops=self_loops) for s in schemas]
    return GraphInputs(
        node_ids=node_ids,
        H=Tensor(feats),
        labels=graph.label_array(node_ids),
        neighborhoods=neighborhoods,
        schemas=list(schemas),
    )


@dataclass
class Split:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray

    def __post_init__(self):
        self.train = np.asarray(self.train, dtype=np.int64)
        self.val = np.asarray(self.val, dtype=np.int64)
        self.test = np.asarray(self.test, dtype=np.int64)
        parts = (self.train, self.val, self.test)
        seen = np.concatenate(parts)
        if len(np.unique(seen)) != len(seen):
            raise DataError("train/val/test splits overlap")

    def sizes(self):
        return {"train": len(self.train), "val": len(self.val), "test": len(self.test)}


# ---------------- Model ----------------
class IshneModel:
    """Per-meta-path attention parameters, shared fusion parameters and classifier C."""

    def __init__(self, metapaths, fusion, C, config):
        self.metapaths = list(metapaths)
        self.fusion = fusion
        self.C = C
        self.config = config
        self.check_consistent()

    @classmethod
    def init(cls, names, in_dim, n_classes, config):
        rng = np.random.default_rng(config.seed)
        metapaths = [
            MetaPathAttentionParams.init(n, in_dim, config.hidden, config.heads, rng) for n in names
        ]
        out_dim = config.hidden * config.heads
        fusion = FusionParams.init(config.fusion_dim, out_dim, rng)
        C = glorot(rng, n_classes, out_dim, name="C")
        return cls(metapaths, fusion, C, config)

    @property
    def names(self):
        return [p.name for p in self.metapaths]

    @property
    def in_dim(self):
        return self.metapaths[0].M.shape[1]

    @property
    def n_classes(self):
        return self.C.shape[0]

    @property
    def out_dim(self):
        return self.C.shape[1]

    def check_consistent(self):
        if not self.metapaths:
            raise ShapeMismatch("model has no meta-paths")
        ref = self.metapaths[0]
        for p in self.metapaths:
            if p.M.shape != ref.M.shape or p.heads != ref.heads:
                raise ShapeMismatch(
                    f"meta-path {p.name} parameters {p.M.shape} x {p.heads} heads "
                    f"disagree with {ref.name} {ref.M.shape} x {ref.heads} heads"
                )
        out_dim = ref.hidden * ref.heads
        if self.fusion.in_dim != out_dim:
            raise ShapeMismatch(f"fusion expects D={self.fusion.in_dim}, embeddings have {out_dim}")
        if self.C.ndim != 2 or self.C.shape[1] != out_dim:
            raise ShapeMismatch(f"classifier C has shape {self.C.shape}, expected (classes, {out_dim})")

    def named_parameters(self):
        out = {}
        for p in self.metapaths:
            out.update(p.named_parameters())
        out.update(self.fusion.named_parameters())
        out["C"] = self.C
        return out

    def parameters(self):
        return list(self.named_parameters().values())

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def state_dict(self):
        return {k: v.data.copy() for k, v in self.named_parameters().items()}

    def load_state_dict(self, state):
        params = self.named_parameters()
        if set(state) != set(params):
            missing = sorted(set(params) - set(state))
            extra = sorted(set(state) - set(params))
            raise ShapeMismatch(f"state mismatch: missing {missing}, unexpected {extra}")
        for k, arr in state.items():
            if params[k].shape != np.shape(arr):
                raise ShapeMismatch(f"{k}: shape {np.shape(arr)} vs model {params[k].shape}")
            params[k].data[...] = arr


@dataclass
class ForwardResult:
    embeddings: list
    fused: object
    Z: Tensor

    @property
    def X(self):
        return self.fused.X

    @property
    def beta(self):
        return self.fused.beta


def forward(
    model: IshneModel, inputs: GraphInputs, training: bool = False, rng: Optional[np.random.Generator] = None
) -> ForwardResult:
    """Meta-path embeddings -> fused embedding X -> logits Z = X C^T."""
    if inputs.H.shape[1] != model.in_dim:
        raise ShapeMismatch(f"features have F={inputs.H.shape[1]}, model expects {model.in_dim}")
    if len(inputs.neighborhoods) != len(model.metapaths):
        raise ShapeMismatch(
            f"{len(inputs.neighborhoods)} neighborhoods for {len(model.metapaths)} meta-paths"
        )
    cfg = model.config
    embeddings = embed_metapaths(
        inputs.H,
        inputs.neighborhoods,
        model.metapaths,
        workers=cfg.workers,
        act_attn=cfg.activation_attn,
        act_agg=cfg.activation_agg,
        influence=cfg.influence,
        dropout=cfg.dropout if training else 0.0,
        rng=rng,
    )
    fused = semantic_fusion([e.x for e in embeddings], model.fusion)
    Z = ad.matmul(fused.X, ad.transpose(model.C))
    return ForwardResult(embeddings=embeddings, fused=fused, Z=Z)


def loss(Z: Tensor, labels: np.ndarray, rows: Sequence[int], reduction: str = "mean") -> Tensor:
    """Softmax cross-entropy of logits rows `rows` against their labels."""
    if reduction not in REDUCTIONS:
        raise ValueError(f"reduction must be one of {REDUCTIONS}, got {reduction!r}")
    rows = np.asarray(rows, dtype=np.int64)
    if len(rows) == 0:
        raise EmptyTrainSet("no labeled nodes to compute the loss on")
    y = np.asarray(labels)[rows]
    n_classes = Z.shape[1]
    if np.any(y < 0) or np.any(y >= n_classes):
        raise TrainingError(f"labels must lie in [0, {n_classes}), got {sorted(set(y.tolist()))}")
    logp = ad.log_softmax_rows(ad.gather(Z, rows))
    picked = ad.gather(logp, (np.arange(len(rows)), y))
    agg = ad.mean(picked) if reduction == "mean" else ad.total(picked)
    return ad.scale(agg, -1.0)


def predict(model: IshneModel, inputs: GraphInputs, node_ids: Optional[Sequence[int]] = None) -> np.ndarray:
    """Argmax class per node; ties go to the lowest class id."""
    Z = forward(model, inputs).Z.data
    rows = np.arange(inputs.num_nodes) if node_ids is None else inputs.rows(node_ids)
    return np.argmax(Z[rows], axis=1)


# ---------------- Optimizer ----------------
class Adam:
    def __init__(self, named_params, lr=5e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
        self.params = dict(named_params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def step(self):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k, p in self.params.items():
            g = p.grad + self.weight_decay * p.data
            self.m[k] = self.b1 * self.m[k] + (1.0 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1.0 - self.b2) * g * g
            p.data -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


# ---------------- Training loop ----------------
@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_micro_f1: float


@dataclass
class TrainHistory:
    records: list = field(default_factory=list)
    best_epoch: int = 0
    best_val_loss: float = math.inf
    stopped_early: bool = False

    def append(self, rec):
        self.records.append(rec)

    def __len__(self):
        return len(self.records)

    @property
    def train_losses(self):
        return [r.train_loss for r in self.records]

    @property
    def val_losses(self):
        return [r.val_loss for r in self.records]

    def to_frame(self):
        return pd.DataFrame(
            [(r.epoch, r.train_loss, r.val_loss, r.val_micro_f1) for r in self.records],
            columns=["epoch", "train_loss", "val_loss", "val_microF1"],
        )

    def write_tsv(self, path):
        self.to_frame().to_csv(path, sep="\t", index=False, float_format="%.10f")


def format_epoch(rec):
    return f"{rec.epoch}\t{rec.train_loss:.6f}\t{rec.val_loss:.6f}\t{rec.val_micro_f1:.4f}"


def _param_norms(model):
    return ", ".join(
        f"{k}={np.linalg.norm(v.data):.3g}" for k, v in model.named_parameters().items()
    )


def train(
    model: IshneModel,
    inputs: GraphInputs,
    split: Split,
    config: Optional[TrainConfig] = None,
    checkpoint_path: Optional[Union[str, Path]] = None,
    on_epoch: Optional[Callable[[EpochRecord], None]] = None,
) -> Tuple[IshneModel, TrainHistory]:
    """
    Full-graph Adam training on split.train; keeps the parameters with the
    lowest validation loss and stops after `patience` epochs without a new best.
    """
    from .checkpoint import save_checkpoint

    config = config or model.config
    train_rows = inputs.rows(split.train)
    val_rows = inputs.rows(split.val)
    if len(train_rows) == 0:
        raise EmptyTrainSet("training split is empty")
    select_rows = val_rows
    if len(val_rows) == 0:
        logger.warning("validation split is empty; selecting on training loss")
        select_rows = train_rows

    opt = Adam(
        model.named_parameters(),
        lr=config.lr,
        weight_decay=config.weight_decay,
    )
    drop_rng = np.random.default_rng(config.seed + 1)
    history = TrainHistory()
    best_state = model.state_dict()
    wait = 0

    for epoch in range(1, config.epochs + 1):
        model.zero_grad()
        with GradientTape(debug=config.debug_checks) as tape:
            out = forward(model, inputs, training=True, rng=drop_rng)
            L = loss(out.Z, inputs.labels, train_rows)
        train_loss = L.item()
        if not math.isfinite(train_loss):
            raise NonFiniteLoss(epoch, train_loss, f"parameter norms: {_param_norms(model)}")
        tape.backward(L)
        opt.step()

        evaluated = forward(model, inputs)
        val_loss = loss(evaluated.Z, inputs.labels, select_rows).item()
        if not math.isfinite(val_loss):
            raise NonFiniteLoss(epoch, val_loss, "validation loss")
        val_pred = np.argmax(evaluated.Z.data[select_rows], axis=1)
        rec = EpochRecord(epoch, train_loss, val_loss, micro_f1(val_pred, inputs.labels[select_rows]))
        history.append(rec)
        logger.debug(format_epoch(rec))
        if on_epoch is not None:
            on_epoch(rec)

        if val_loss < history.best_val_loss:
            history.best_val_loss = val_loss
            history.best_epoch = epoch
            best_state = model.state_dict()
            wait = 0
            if checkpoint_path is not None:
                save_checkpoint(model, checkpoint_path)
        else:
            wait += 1
            if wait >= config.patience:
                history.stopped_early = True
                logger.info("early stop at epoch %d (best epoch %d)", epoch, history.best_epoch)
                break

    model.load_state_dict(best_state)
    logger.info(
        "training finished: %d epochs, best val loss %.6f at epoch %d",
        len(history), history.best_val_loss, history.best_epoch,
    )
    return model, history


# ---------------- Gradient oracle ----------------
@dataclass(frozen=True)
class GradientError:
    """Central-difference disagreement for one parameter tensor."""

    entry: float  # max_k |analytic_k - numeric_k| / (|numeric_k| + 1e-8)
    norm: float  # ||analytic - numeric|| / (||numeric|| + 1e-8)

    def ok(self, tol: float = 1e-4) -> bool:
        return self.entry < tol


def gradient_check(
    model: IshneModel, inputs: GraphInputs, rows: Sequence[int], step: float = 1e-5
) -> Dict[str, GradientError]:
    """
    Compare every parameter gradient of the cross-entropy on `rows` with
    central differences. Returns {parameter name: GradientError}.
    """
    model.zero_grad()
    with GradientTape() as tape:
        L = loss(forward(model, inputs).Z, inputs.labels, rows)
    tape.backward(L)
    errors = {}
    for name, p in model.named_parameters().items():
        analytic = p.grad.copy()
        numeric = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + step
            up = loss(forward(model, inputs).Z, inputs.labels, rows).item()
            flat[k] = orig - step
            down = loss(forward(model, inputs).Z, inputs.labels, rows).item()
            flat[k] = orig
            numeric.reshape(-1)[k] = (up - down) / (2.0 * step)
        diff = np.abs(analytic - numeric)
        errors[name] = GradientError(
            entry=float(np.max(diff / (np.abs(numeric) + 1e-8))),
            norm=float(np.linalg.norm(analytic - numeric) / (np.linalg.norm(numeric) + 1e-8)),
        )
    return errors
