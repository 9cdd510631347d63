# ishne/fusion.py
"""
Semantic fusion of per-meta-path embeddings.

Each target node carries P meta-path embeddings x_i^phi. They are stacked
into P x D per node and passed through self-attention across meta-paths:

    Q_i = X_i W_Q^T,  K_i = X_i W_K^T,  V_i = X_i W_V^T          (P x d)
    A_i = softmax_rows(Q_i K_i^T / sqrt(d))                        (P x P)
    score_i^phi = q . (A_i V_i)[phi]
    w_phi = mean_i score_i^phi,  beta = softmax(w),  X = sum_phi beta_phi X_phi

The average runs over every target node, labeled or not.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Tuple, Union

import numpy as np

from . import autodiff as ad
from .attention import glorot
from .autodiff import Tensor, TensorLike
from .errors import FewerThanOneMetaPath, ShapeMismatch


@dataclass
class FusionParams:
    W_Q: Tensor
    W_K: Tensor
    W_V: Tensor
    q: Tensor

    def __post_init__(self):
        shapes = {self.W_Q.shape, self.W_K.shape, self.W_V.shape}
        if len(shapes) != 1 or self.W_Q.ndim != 2:
            raise ShapeMismatch(f"W_Q, W_K, W_V must share one d x D shape, got {sorted(shapes)}")
        if self.q.shape != (self.W_Q.shape[0],):
            raise ShapeMismatch(f"q has shape {self.q.shape}, expected ({self.W_Q.shape[0]},)")

    @classmethod
    def init(cls, d, in_dim, rng):
        return cls(
            W_Q=glorot(rng, d, in_dim, name="W_Q"),
            W_K=glorot(rng, d, in_dim, name="W_K"),
            W_V=glorot(rng, d, in_dim, name="W_V"),
            q=glorot(rng, d, name="q"),
        )

    @property
    def d(self):
        return self.W_Q.shape[0]

    @property
    def in_dim(self):
        return self.W_Q.shape[1]

    def named_parameters(self):
        return {"W_Q": self.W_Q, "W_K": self.W_K, "W_V": self.W_V, "q": self.q}


@dataclass
class FusedEmbedding:
    X: Tensor
    beta: Tensor
    w: Tensor


def qkv(x: TensorLike, params: FusionParams) -> Tuple[Tensor, Tensor, Tensor]:
    """Query, key and value for one embedding vector (or for every row of a matrix)."""
    x = ad.as_tensor(x)
    if x.ndim == 0 or x.shape[-1] != params.in_dim:
        raise ShapeMismatch(f"qkv: embedding of shape {x.shape} does not fit D={params.in_dim}")
    if x.ndim == 1:
        return tuple(ad.matmul(W, x) for W in (params.W_Q, params.W_K, params.W_V))
    return tuple(ad.matmul(x, ad.transpose(W)) for W in (params.W_Q, params.W_K, params.W_V))


def _check_embeddings(embeddings):
    if len(embeddings) < 1:
        raise FewerThanOneMetaPath("semantic fusion needs at least one meta-path embedding")
    shapes = {ad.as_tensor(x).shape for x in embeddings}
    if len(shapes) != 1:
        raise ShapeMismatch(f"meta-path embeddings disagree in shape: {sorted(shapes)}")


def metapath_importance(embeddings: Sequence[TensorLike], params: FusionParams) -> Tensor:
    """One scalar importance w_phi per meta-path, returned as a length-P tensor."""
    _check_embeddings(embeddings)
    inv_sqrt_d = 1.0 / np.sqrt(params.d)
    triples = [qkv(x, params) for x in embeddings]
    # q . V row per meta-path, side by side: N x P
    vq = ad.stack([ad.matmul(V, params.q) for _, _, V in triples], axis=1)
    w = []
    for Q, _, _ in triples:
        logits = ad.stack(
            [ad.scale(ad.rowdot(Q, K), inv_sqrt_d) for _, K, _ in triples], axis=1
        )
        attn = ad.softmax_rows(logits)
        w.append(ad.mean(ad.rowsum(ad.mul(attn, vq))))
    return ad.stack(w, axis=0)


def metapath_weights(w: TensorLike) -> Tensor:
    """beta = softmax(w)."""
    return ad.softmax(w)


def fuse(embeddings: Sequence[TensorLike], beta: Union[TensorLike, Sequence[float]]) -> Tensor:
    _check_embeddings(embeddings)
    beta = ad.as_tensor(beta)
    if beta.shape != (len(embeddings),):
        raise ShapeMismatch(f"beta of shape {beta.shape} for {len(embeddings)} meta-paths")
    X = None
    for k, x in enumerate(embeddings):
        term = ad.scale(x, ad.gather(beta, k))
        X = term if X is None else ad.add(X, term)
    return X


def semantic_fusion(embeddings: Sequence[TensorLike], params: FusionParams) -> FusedEmbedding:
    w = metapath_importance(embeddings, params)
    beta = metapath_weights(w)
    return FusedEmbedding(X=fuse(embeddings, beta), beta=beta, w=w)
