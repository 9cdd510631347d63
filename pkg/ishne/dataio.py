# ishne/dataio.py
"""
Graph files, planted-community synthetic graphs, splits and embedding export.

Graph file (UTF-8, tab separated, one record per line):

    #nodes      node_id<TAB>type_name
    #edges      src_id<TAB>dst_id<TAB>edge_type_name
    #features   node_id<TAB>v0,v1,...
    #labels     node_id<TAB>class_id

Blank lines are ignored. Sections may appear in any order, each at most once.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, asdict
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .errors import GraphError, InfeasibleSpec, ParseError, SplitTooLarge
from .hetgraph import HetGraph, MetaPathNeighborhood, build_graph
from .training import Split

logger = logging.getLogger(__name__)

SECTIONS = ("nodes", "edges", "features", "labels")

TARGET_TYPE = "P"
INTERMEDIATE_TYPES = ("A", "S")


# ---------------- Graph files ----------------
def _parse_int(text, path, lineno, what):
    try:
        return int(text)
    except ValueError:
        raise ParseError(f"{what} '{text}' is not an integer", path, lineno)


def parse_graph_lines(lines, path=None):
    nodes, edges, features, labels = [], [], {}, {}
    section = None
    seen = set()
    for lineno, raw in enumerate(lines, start=1):
        line = raw.rstrip("\r\n")
        if not line.strip():
            continue
        if line.startswith("#"):
            name = line[1:].strip()
            if name not in SECTIONS:
                raise ParseError(f"unknown section '{line.strip()}'", path, lineno)
            if name in seen:
                raise ParseError(f"section '#{name}' appears twice", path, lineno)
            seen.add(name)
            section = name
            continue
        if section is None:
            raise ParseError("record before any section header", path, lineno)
        cols = line.split("\t")
        if section == "nodes":
            if len(cols) != 2 or not cols[1]:
                raise ParseError("node line needs node_id<TAB>type_name", path, lineno)
            nodes.append((_parse_int(cols[0], path, lineno, "node id"), cols[1]))
        elif section == "edges":
            if len(cols) != 3 or not cols[2]:
                raise ParseError("edge line needs src<TAB>dst<TAB>edge_type", path, lineno)
            edges.append(
                (
                    _parse_int(cols[0], path, lineno, "source id"),
                    _parse_int(cols[1], path, lineno, "target id"),
                    cols[2],
                )
            )
        elif section == "features":
            if len(cols) != 2:
                raise ParseError("feature line needs node_id<TAB>v0,v1,...", path, lineno)
            nid = _parse_int(cols[0], path, lineno, "node id")
            try:
                vec = [float(v) for v in cols[1].split(",")]
            except ValueError:
                raise ParseError(f"malformed feature vector for node {nid}", path, lineno)
            if not all(math.isfinite(v) for v in vec):
                raise ParseError(f"non-finite feature value for node {nid}", path, lineno)
            if nid in features:
                raise ParseError(f"features for node {nid} given twice", path, lineno)
            features[nid] = vec
        else:
            if len(cols) != 2:
                raise ParseError("label line needs node_id<TAB>class_id", path, lineno)
            nid = _parse_int(cols[0], path, lineno, "node id")
            labels[nid] = _parse_int(cols[1], path, lineno, "class id")
    return nodes, edges, features, labels


def load_graph(path: Union[str, Path]) -> HetGraph:
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            nodes, edges, features, labels = parse_graph_lines(f, path)
    except FileNotFoundError:
        raise ParseError("graph file not found", path)
    except UnicodeDecodeError as e:
        raise ParseError(f"not UTF-8 text ({e.reason})", path)
    graph = build_graph(nodes, edges, features, labels)
    logger.info("loaded %s: %s", path, graph.summary()["node_types"])
    return graph


def _fmt_vec(vec):
    return ",".join(repr(float(v)) for v in vec)


def write_graph(graph: HetGraph, path: Union[str, Path]) -> None:
    """Canonical form: every section sorted, floats in shortest round-trip notation."""
    out = ["#nodes"]
    for nid in graph.node_ids():
        out.append(f"{int(nid)}\t{graph.node_type(nid)}")
    out.append("#edges")
    for s, d, e in sorted(graph.edges()):
        out.append(f"{s}\t{d}\t{e}")
    out.append("#features")
    for nid, vec in sorted(graph.features().items()):
        out.append(f"{nid}\t{_fmt_vec(vec)}")
    out.append("#labels")
    for nid, cls in sorted(graph.labels().items()):
        out.append(f"{nid}\t{cls}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(out) + "\n", encoding="utf-8")


# ---------------- Synthetic graphs ----------------
@dataclass(frozen=True)
class SynthSpec:
    """
    Planted-community graph: `targets` P nodes in `classes` balanced classes,
    `intermediates` nodes of each of the types A and S, each with a home class.
    A target links to an intermediate with probability p_in when the classes
    match, p_out otherwise. Target features are the class mean plus Gaussian
    noise with standard deviation 1/snr (snr = inf gives noiseless features).
    """

    targets: int = 200
    intermediates: int = 40
    classes: int = 2
    feature_dim: int = 16
    p_in: float = 0.3
    p_out: float = 0.05
    snr: float = 2.0
    seed: int = 7

    def validate(self):
        if self.classes < 2:
            raise InfeasibleSpec(f"need at least 2 classes, got {self.classes}")
        if self.targets < self.classes:
            raise InfeasibleSpec(f"{self.targets} targets cannot cover {self.classes} classes")
        if self.intermediates < 1:
            raise InfeasibleSpec("need at least one intermediate node per type")
        if self.intermediates < self.classes:
            raise InfeasibleSpec(
                f"{self.intermediates} intermediates per type leave some of {self.classes} classes without one"
            )
        if self.feature_dim < 1:
            raise InfeasibleSpec(f"feature_dim must be positive, got {self.feature_dim}")
        if not 0.0 <= self.p_out < self.p_in <= 1.0:
            raise InfeasibleSpec(
                f"need 0 <= p_out < p_in <= 1, got p_in={self.p_in}, p_out={self.p_out}"
            )
        if math.isnan(self.snr) or self.snr <= 0:
            raise InfeasibleSpec(f"snr must be positive, got {self.snr}")
        return self

    @classmethod
    def from_cfg(cls, cfg):
        s = cfg["synthetic"]
        return cls(
            targets=int(s["targets"]),
            intermediates=int(s["intermediates"]),
            classes=int(s["classes"]),
            feature_dim=int(s["feature_dim"]),
            p_in=float(s["p_in"]),
            p_out=float(s["p_out"]),
            snr=float(s["snr"]),
            seed=int(s["seed"]),
        )

    def to_dict(self):
        return asdict(self)


def generate_synthetic(spec: SynthSpec) -> HetGraph:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    T, I = spec.targets, spec.intermediates
    y = rng.permutation(np.arange(T) % spec.classes)

    nodes = [(t, TARGET_TYPE) for t in range(T)]
    edges = []
    offset = T
    for itype in INTERMEDIATE_TYPES:
        home = rng.permutation(np.arange(I) % spec.classes)
        nodes.extend((offset + m, itype) for m in range(I))
        prob = np.where(y[:, None] == home[None, :], spec.p_in, spec.p_out)
        hit = rng.random((T, I)) < prob
        etype = TARGET_TYPE + itype
        for t, m in zip(*np.nonzero(hit)):
            edges.append((int(t), int(offset + m), etype))
        offset += I

    means = rng.normal(0.0, 1.0, size=(spec.classes, spec.feature_dim))
    feats = means[y]
    if math.isfinite(spec.snr):
        feats = feats + rng.normal(0.0, 1.0 / spec.snr, size=feats.shape)
    graph = build_graph(
        nodes,
        edges,
        {t: feats[t] for t in range(T)},
        {t: int(y[t]) for t in range(T)},
    )
    logger.info("synthetic graph: %d nodes, %d edges, seed %d", graph.num_nodes, graph.num_edges, spec.seed)
    return graph


def synthetic_metapaths():
    return ",".join(f"{TARGET_TYPE}-{t}-{TARGET_TYPE}" for t in INTERMEDIATE_TYPES)


# ---------------- Splits ----------------
def make_split(
    graph: HetGraph, train_n: int, val_n: int, seed: int, target_type: Optional[str] = None
) -> Split:
    """Seeded uniform sample of labeled target nodes; whatever remains is test."""
    if target_type is None:
        target_type = _guess_target_type(graph)
    labeled = graph.labeled_ids(target_type)
    if train_n < 0 or val_n < 0:
        raise SplitTooLarge(f"split sizes must be non-negative, got {train_n}/{val_n}")
    if train_n + val_n > len(labeled):
        raise SplitTooLarge(
            f"train ({train_n}) + val ({val_n}) exceeds {len(labeled)} labeled '{target_type}' nodes"
        )
    order = np.random.default_rng(seed).permutation(labeled)
    split = Split(
        train=np.sort(order[:train_n]),
        val=np.sort(order[train_n:train_n + val_n]),
        test=np.sort(order[train_n + val_n:]),
    )
    if len(split.test) == 0:
        logger.warning("test split is empty (train + val use every labeled node)")
    return split


def _guess_target_type(graph):
    labeled_types = {graph.node_type(n) for n in graph.labels()}
    if len(labeled_types) != 1:
        raise GraphError(f"cannot infer target type from labels on types {sorted(labeled_types)}")
    return labeled_types.pop()


def write_split(split, directory):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for part in ("train", "val", "test"):
        ids = getattr(split, part)
        text = "".join(f"{int(i)}\n" for i in ids)
        (directory / f"{part}.txt").write_text(text, encoding="utf-8")


def load_split(directory: Union[str, Path]) -> Split:
    directory = Path(directory)
    parts = {}
    for part in ("train", "val", "test"):
        path = directory / f"{part}.txt"
        try:
            lines = path.read_text(encoding="utf-8").splitlines()
        except FileNotFoundError:
            raise ParseError("split file not found", path)
        ids = []
        for lineno, line in enumerate(lines, start=1):
            if line.strip():
                ids.append(_parse_int(line.strip(), path, lineno, "node id"))
        parts[part] = ids
    return Split(**parts)


# ---------------- Embedding export ----------------
def write_embeddings(path, node_ids, X, beta, names):
    out = [f"{int(n)}\t{_fmt_vec(row)}" for n, row in zip(node_ids, np.asarray(X))]
    out.append("#beta\t" + ",".join(f"{n}={repr(float(b))}" for n, b in zip(names, beta)))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(out) + "\n", encoding="utf-8")


def load_embeddings(path):
    """(node_ids, X, {metapath: beta})."""
    path = Path(path)
    ids, rows, beta = [], [], {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        head, _, rest = line.partition("\t")
        try:
            if head == "#beta":
                for item in rest.split(","):
                    name, _, val = item.partition("=")
                    beta[name] = float(val)
            else:
                ids.append(int(head))
                rows.append([float(v) for v in rest.split(",")])
        except ValueError:
            raise ParseError("malformed embedding line", path, lineno)
    return np.asarray(ids, dtype=np.int64), np.asarray(rows, dtype=np.float64), beta


# ---------------- Neighborhood diagnostics ----------------
def homophily(graph: HetGraph, neighborhood: MetaPathNeighborhood) -> float:
    """Share of labeled non-self neighbor pairs (i, j) with equal labels."""
    labels = graph.label_array(neighborhood.node_ids)
    src, dst = neighborhood.edge_index()
    keep = (src != dst) & (labels[src] >= 0) & (labels[dst] >= 0)
    if not np.any(keep):
        return float("nan")
    return float(np.mean(labels[src[keep]] == labels[dst[keep]]))


def class_edge_rates(graph, neighborhood):
    """(within-class pair density, cross-class pair density) over labeled non-self pairs."""
    labels = graph.label_array(neighborhood.node_ids)
    src, dst = neighborhood.edge_index()
    keep = (src != dst) & (labels[src] >= 0) & (labels[dst] >= 0)
    same = labels[src[keep]] == labels[dst[keep]]
    lab = labels[labels >= 0]
    counts = np.bincount(lab)
    n = len(lab)
    within_possible = float(np.sum(counts * (counts - 1)))
    cross_possible = float(n * (n - 1)) - within_possible
    within = np.sum(same) / within_possible if within_possible else float("nan")
    cross = np.sum(~same) / cross_possible if cross_possible else float("nan")
    return float(within), float(cross)
