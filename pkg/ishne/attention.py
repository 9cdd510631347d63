# ishne/attention.py
"""
Node-level influence attention, one meta-path at a time.

For meta-path phi with projection M, influence projection P and head vector a:

    h'_i  = M h_i                     (project)
    h^p_i = P h_i                     (influence_component)
    e_ij  = act_attn(a . [h'_i || (h'_j + h^p_i)])
    a_ij  = softmax_j over N_i (e_ij) (attention_coefficients)
    x_i   = act_agg(sum_j a_ij h'_j)  (aggregate)

K heads share M and P; each head owns its own a. Head outputs are
concatenated in head order (multihead_embed).

Everything is vectorized over the neighbor-pair list (src, dst) produced by
MetaPathNeighborhood.edge_index(); src is the attending node i.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
import pandas as pd

from . import autodiff as ad
from .autodiff import Tensor, TensorLike
from .errors import EmptyNeighborhood, ShapeMismatch

logger = logging.getLogger(__name__)


def glorot(rng, rows, cols=None, name=None):
    """Uniform in [-s, s], s = sqrt(6 / (fan_in + fan_out)); 1-D when cols is None."""
    fan_out, fan_in = (rows, 1) if cols is None else (rows, cols)
    s = np.sqrt(6.0 / (fan_in + fan_out))
    shape = (rows,) if cols is None else (rows, cols)
    return Tensor(rng.uniform(-s, s, size=shape), requires_grad=True, name=name)


@dataclass
class MetaPathAttentionParams:
    """M, P (F' x F) and one attention vector of length 2F' per head."""

    name: str
    M: Tensor
    P: Tensor
    a: list

    def __post_init__(self):
        if self.M.ndim != 2 or self.M.shape != self.P.shape:
            raise ShapeMismatch(
                f"{self.name}: M {self.M.shape} and P {self.P.shape} must share shape F' x F"
            )
        if not self.a:
            raise ShapeMismatch(f"{self.name}: at least one attention head is required")
        width = 2 * self.M.shape[0]
        for k, vec in enumerate(self.a):
            if vec.shape != (width,):
                raise ShapeMismatch(
                    f"{self.name}: head {k} attention vector has shape {vec.shape}, expected ({width},)"
                )

    @classmethod
    def init(cls, name, in_dim, hidden, heads, rng):
        return cls(
            name=name,
            M=glorot(rng, hidden, in_dim, name=f"M.{name}"),
            P=glorot(rng, hidden, in_dim, name=f"P.{name}"),
            a=[glorot(rng, 2 * hidden, name=f"a.{name}.head{k}") for k in range(heads)],
        )

    @property
    def hidden(self):
        return self.M.shape[0]

    @property
    def heads(self):
        return len(self.a)

    def named_parameters(self):
        out = {f"M.{self.name}": self.M, f"P.{self.name}": self.P}
        for k, vec in enumerate(self.a):
            out[f"a.{self.name}.head{k}"] = vec
        return out


@dataclass
class MetaPathEmbedding:
    name: str
    x: Tensor
    src: np.ndarray
    dst: np.ndarray
    attention: list = field(default_factory=list)


# ---------------- Eqs: projection & influence ----------------
def project(h: TensorLike, M: TensorLike) -> Tensor:
    h, M = ad.as_tensor(h), ad.as_tensor(M)
    if h.ndim != 2 or M.ndim != 2 or h.shape[1] != M.shape[1]:
        raise ShapeMismatch(f"project: features {h.shape} do not fit projection {M.shape}")
    return ad.matmul(h, ad.transpose(M))


def influence_component(h: TensorLike, P: TensorLike) -> Tensor:
    h, P = ad.as_tensor(h), ad.as_tensor(P)
    if h.ndim != 2 or P.ndim != 2 or h.shape[1] != P.shape[1]:
        raise ShapeMismatch(f"influence_component: features {h.shape} do not fit {P.shape}")
    return ad.matmul(h, ad.transpose(P))


# ---------------- Attention & aggregation ----------------
def _check_neighborhoods(src, num_nodes):
    deg = np.bincount(src, minlength=num_nodes)
    empty = np.flatnonzero(deg == 0)
    if len(empty):
        raise EmptyNeighborhood(
            f"{len(empty)} target node(s) have no meta-path neighbors (first row: {empty[0]})"
        )


def attention_coefficients(
    src: np.ndarray,
    dst: np.ndarray,
    num_nodes: int,
    h_proj: Tensor,
    h_infl: Optional[Tensor],
    a: Tensor,
    act: str = "leaky_relu",
    influence: bool = True,
) -> Tensor:
    """Per-pair weights a_ij over each node's neighbor list; entries of one src sum to 1."""
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    _check_neighborhoods(src, num_nodes)
    left = ad.gather(h_proj, src)
    right = ad.gather(h_proj, dst)
    if influence:
        # influence of the attending node i is added to every neighbor j
        right = ad.add(right, ad.gather(h_infl, src))
    scores = ad.activation(ad.matmul(ad.concat([left, right], axis=1), a), act)
    return ad.segment_softmax(scores, src, num_nodes)


def aggregate(
    src: np.ndarray, dst: np.ndarray, num_nodes: int, weights: Tensor, h_proj: Tensor, act: str = "elu"
) -> Tensor:
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    msgs = ad.mul_rows(ad.gather(h_proj, dst), weights)
    return ad.activation(ad.segment_sum(msgs, src, num_nodes), act)


def multihead_embed(
    h: TensorLike,
    neighborhood,
    params: MetaPathAttentionParams,
    act_attn: str = "leaky_relu",
    act_agg: str = "elu",
    influence: bool = True,
    dropout: float = 0.0,
    rng: Optional[np.random.Generator] = None,
) -> MetaPathEmbedding:
    """Concatenate the K head outputs for every target node of one meta-path."""
    h = ad.as_tensor(h)
    n = h.shape[0]
    if len(neighborhood) != n:
        raise ShapeMismatch(
            f"{params.name}: neighborhood covers {len(neighborhood)} nodes, features have {n}"
        )
    src, dst = neighborhood.edge_index()
    h_proj = project(h, params.M)
    h_infl = influence_component(h, params.P) if influence else None
    heads, coeffs = [], []
    for a in params.a:
        alpha = attention_coefficients(src, dst, n, h_proj, h_infl, a, act_attn, influence)
        coeffs.append(alpha)
        if dropout > 0.0 and rng is not None:
            alpha = ad.dropout(alpha, dropout, rng)
        heads.append(aggregate(src, dst, n, alpha, h_proj, act_agg))
    x = heads[0] if len(heads) == 1 else ad.concat(heads, axis=1)
    return MetaPathEmbedding(name=params.name, x=x, src=src, dst=dst, attention=coeffs)


def embed_metapaths(h: TensorLike, neighborhoods, params_list: Sequence[MetaPathAttentionParams],
                    workers: int = 1, **kwargs) -> List[MetaPathEmbedding]:
    """
    One MetaPathEmbedding per meta-path, in meta-path order. With workers > 1
    and no gradient tape active, meta-paths are evaluated on a thread pool.
    """
    jobs = list(zip(neighborhoods, params_list))
    if workers > 1 and len(jobs) > 1 and ad.active_tape() is None:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(lambda job: multihead_embed(h, job[0], job[1], **kwargs), jobs))
    return [multihead_embed(h, nb, p, **kwargs) for nb, p in jobs]


def attention_table(embedding: MetaPathEmbedding, node_ids: np.ndarray, head: int = 0) -> pd.DataFrame:
    """Learned coefficients of one head as (src, dst, weight) rows."""
    ids = np.asarray(node_ids)
    return pd.DataFrame(
        {
            "metapath": embedding.name,
            "src": ids[embedding.src],
            "dst": ids[embedding.dst],
            "weight": embedding.attention[head].data,
        }
    )
