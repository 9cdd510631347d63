# ishne/hetgraph.py
"""
Heterogeneous graph storage and meta-path neighborhoods.

Node and edge types are plain strings (the type names used in graph files).
Edges are undirected for neighborhood purposes: an edge of type r between a
node of type X and a node of type Y relates X to Y and Y to X.

Meta-path neighbor sets are obtained by composing typed sparse adjacency
matrices (boolean products) and are cached per schema on the graph, which is
immutable once built.
"""

from __future__ import annotations

import logging
import threading
from dataclasses import dataclass
from typing import Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.sparse as sp

from .errors import (
    DanglingEdge,
    DimensionMismatch,
    DuplicateNode,
    GraphError,
    SchemaError,
    UnknownType,
)

logger = logging.getLogger(__name__)

ANY_EDGE = "*"


# ---------------- Meta-path schemas ----------------
@dataclass(frozen=True)
class MetaPathSchema:
    name: str
    node_types: tuple
    edge_types: tuple

    def __post_init__(self):
        n = len(self.node_types)
        if n < 3 or n % 2 == 0:
            raise SchemaError(
                f"meta-path '{self.name}' needs an odd number (>= 3) of node types, got {n}"
            )
        if self.node_types[0] != self.node_types[-1]:
            raise SchemaError(
                f"meta-path '{self.name}' must start and end on the same node type"
            )
        if len(self.edge_types) != n - 1:
            raise SchemaError(
                f"meta-path '{self.name}' has {len(self.edge_types)} edge types for {n} node types"
            )

    @property
    def target_type(self):
        return self.node_types[0]

    @property
    def is_palindrome(self):
        return (
            self.node_types == self.node_types[::-1]
            and self.edge_types == self.edge_types[::-1]
        )

    @classmethod
    def parse(cls, text: str, graph: Optional[HetGraph] = None) -> MetaPathSchema:
        """
        Parse `P-A-P` style text. With a graph, each hop's edge type is the
        unique edge type joining the two node types; otherwise (or when several
        edge types join them) the hop accepts any edge type.
        """
        parts = [p.strip() for p in str(text).split("-")]
        if any(not p for p in parts):
            raise SchemaError(f"malformed meta-path '{text}'")
        hops = []
        for a, b in zip(parts, parts[1:]):
            etype = ANY_EDGE
            if graph is not None:
                found = graph.edge_types_between(a, b)
                if len(found) == 1:
                    etype = next(iter(found))
            hops.append(etype)
        return cls(name="".join(parts), node_types=tuple(parts), edge_types=tuple(hops))

    def __str__(self):
        return "-".join(self.node_types)


def parse_schemas(text: Union[str, Sequence[str]], graph: Optional[HetGraph] = None) -> List[MetaPathSchema]:
    """Comma-separated meta-path list, e.g. `P-A-P,P-S-P`."""
    schemas = [MetaPathSchema.parse(s, graph) for s in str(text).split(",") if s.strip()]
    if not schemas:
        raise SchemaError("no meta-paths given")
    names = [s.name for s in schemas]
    if len(set(names)) != len(names):
        raise SchemaError(f"duplicate meta-path names in {names}")
    targets = {s.target_type for s in schemas}
    if len(targets) != 1:
        raise SchemaError(f"meta-paths end on different node types: {sorted(targets)}")
    return schemas


# ---------------- Neighborhoods ----------------
class MetaPathNeighborhood:
    """N_i for every target node i of one schema, held as a sparse boolean matrix."""

    def __init__(self, schema, node_ids, matrix):
        self.schema = schema
        self.node_ids = node_ids
        self.matrix = matrix
        self._row = {int(n): r for r, n in enumerate(node_ids)}

    def __len__(self):
        return len(self.node_ids)

    @property
    def num_pairs(self):
        return int(self.matrix.nnz)

    def neighbors(self, node_id):
        r = self._row[int(node_id)]
        lo, hi = self.matrix.indptr[r], self.matrix.indptr[r + 1]
        return frozenset(int(self.node_ids[c]) for c in self.matrix.indices[lo:hi])

    def as_dict(self):
        return {int(n): self.neighbors(n) for n in self.node_ids}

    def edge_index(self) -> Tuple[np.ndarray, np.ndarray]:
        """(src_rows, dst_rows) over target-node positions, sorted by src then dst."""
        counts = np.diff(self.matrix.indptr)
        src = np.repeat(np.arange(len(self.node_ids), dtype=np.int64), counts)
        dst = self.matrix.indices.astype(np.int64)
        return src, dst

    def degrees(self):
        return np.diff(self.matrix.indptr)


# ---------------- Graph ----------------
class HetGraph:
    """Validated heterogeneous graph. Build it with `build_graph`."""

    def __init__(self, node_types, src, dst, edge_types, features, labels):
        self._node_type = node_types
        self._src = src
        self._dst = dst
        self._etype = edge_types
        self._features = features
        self._labels = labels
        self._ids_by_type = {}
        for nid, t in sorted(node_types.items()):
            self._ids_by_type.setdefault(t, []).append(nid)
        self._ids_by_type = {
            t: np.asarray(ids, dtype=np.int64) for t, ids in self._ids_by_type.items()
        }
        self._cache = {}
        self._lock = threading.Lock()

    # ----- sizes & types -----
    @property
    def num_nodes(self):
        return len(self._node_type)

    @property
    def num_edges(self):
        return len(self._src)

    @property
    def node_types(self):
        return sorted(self._ids_by_type)

    @property
    def edge_types(self):
        return sorted(set(self._etype))

    def node_type(self, node_id):
        return self._node_type[int(node_id)]

    def node_ids(self, ntype=None):
        if ntype is None:
            return np.asarray(sorted(self._node_type), dtype=np.int64)
        return self._ids_by_type.get(ntype, np.zeros(0, dtype=np.int64)).copy()

    def edges(self):
        return list(zip(self._src.tolist(), self._dst.tolist(), self._etype))

    def features(self):
        return {k: v.copy() for k, v in self._features.items()}

    def labels(self):
        return dict(self._labels)

    def summary(self):
        counts = {t: int(len(ids)) for t, ids in self._ids_by_type.items()}
        return {
            "nodes": self.num_nodes,
            "edges": self.num_edges,
            "node_types": counts,
            "edge_types": {e: self._etype.count(e) for e in self.edge_types},
            "labeled": len(self._labels),
        }

    def edge_types_between(self, a, b):
        ta = np.array([self._node_type[s] for s in self._src.tolist()], dtype=object)
        tb = np.array([self._node_type[d] for d in self._dst.tolist()], dtype=object)
        et = np.array(self._etype, dtype=object)
        hit = ((ta == a) & (tb == b)) | ((ta == b) & (tb == a))
        return set(et[hit].tolist()) if len(et) else set()

    # ----- target-type data -----
    def feature_matrix(self, ntype):
        """(node_ids, dense float64 matrix) for every node of `ntype`, by node id."""
        ids = self.node_ids(ntype)
        if len(ids) == 0:
            raise UnknownType(f"no nodes of type '{ntype}'")
        missing = [int(i) for i in ids if int(i) not in self._features]
        if missing:
            raise DimensionMismatch(
                f"{len(missing)} node(s) of type '{ntype}' lack features (first: {missing[0]})"
            )
        return ids, np.vstack([self._features[int(i)] for i in ids])

    def label_array(self, node_ids):
        """Class id per node, -1 where unlabeled."""
        return np.asarray([self._labels.get(int(i), -1) for i in node_ids], dtype=np.int64)

    def labeled_ids(self, ntype):
        return np.asarray(
            [int(i) for i in self.node_ids(ntype) if int(i) in self._labels], dtype=np.int64
        )

    # ----- adjacency -----
    def typed_adjacency(self, a, b, etype=ANY_EDGE):
        """Boolean relation from nodes of type a to nodes of type b over `etype` edges."""
        rows_a, rows_b = self.node_ids(a), self.node_ids(b)
        pos_a = {int(n): r for r, n in enumerate(rows_a)}
        pos_b = {int(n): r for r, n in enumerate(rows_b)}
        r_idx, c_idx = [], []
        for s, d, e in zip(self._src.tolist(), self._dst.tolist(), self._etype):
            if etype != ANY_EDGE and e != etype:
                continue
            if s in pos_a and d in pos_b:
                r_idx.append(pos_a[s])
                c_idx.append(pos_b[d])
            if d in pos_a and s in pos_b:
                r_idx.append(pos_a[d])
                c_idx.append(pos_b[s])
        adj = sp.coo_matrix(
            (np.ones(len(r_idx)), (r_idx, c_idx)), shape=(len(rows_a), len(rows_b))
        ).tocsr()
        adj.data[:] = 1.0
        return adj

    def _check_schema(self, schema):
        for t in schema.node_types:
            if t not in self._ids_by_type:
                raise UnknownType(f"meta-path '{schema.name}' uses unknown node type '{t}'")
        known = set(self._etype)
        for e in schema.edge_types:
            if e != ANY_EDGE and e not in known:
                raise UnknownType(f"meta-path '{schema.name}' uses unknown edge type '{e}'")

    def metapath_neighbors(self, schema: MetaPathSchema, self_loops: bool = True) -> MetaPathNeighborhood:
        """N_i = {j : a typed path i -> ... -> j matches the schema}, plus i itself."""
        key = (schema, bool(self_loops))
        with self._lock:
            if key in self._cache:
                return self._cache[key]
        self._check_schema(schema)
        types, hops = schema.node_types, schema.edge_types
        rel = self.typed_adjacency(types[0], types[1], hops[0])
        for k in range(1, len(hops)):
            rel = (rel @ self.typed_adjacency(types[k], types[k + 1], hops[k])).tocsr()
            rel.data[:] = 1.0
        if self_loops:
            rel = (rel + sp.identity(rel.shape[0], format="csr")).tocsr()
            rel.data[:] = 1.0
        rel.eliminate_zeros()
        rel.sort_indices()
        rel = rel.astype(bool)
        nb = MetaPathNeighborhood(schema, self.node_ids(schema.target_type), rel)
        logger.debug(
            "meta-path %s: %d targets, %d neighbor pairs", schema.name, len(nb), nb.num_pairs
        )
        with self._lock:
            self._cache[key] = nb
        return nb

    def with_edges(self, extra):
        """A new graph with `extra` (src, dst, type) edges appended."""
        nodes = list(self._node_type.items())
        return build_graph(nodes, self.edges() + list(extra), self._features, self._labels)


def build_graph(
    nodes: Iterable[Tuple[int, str]],
    edges: Iterable[Tuple[int, int, str]],
    features: Optional[Mapping[int, Sequence[float]]] = None,
    labels: Optional[Mapping[int, int]] = None,
) -> HetGraph:
    """
    Validate and assemble a HetGraph.

    nodes:    iterable of (node_id, type_name)
    edges:    iterable of (src_id, dst_id, edge_type_name)
    features: mapping node_id -> sequence of floats (uniform length per node type)
    labels:   mapping node_id -> class id
    """
    node_types = {}
    for nid, ntype in nodes:
        nid = int(nid)
        if nid in node_types:
            raise DuplicateNode(f"node {nid} declared more than once")
        node_types[nid] = str(ntype)

    src, dst, etypes = [], [], []
    for s, d, e in edges:
        s, d = int(s), int(d)
        for end in (s, d):
            if end not in node_types:
                raise DanglingEdge(f"edge ({s}, {d}, {e}) references unknown node {end}")
        src.append(s)
        dst.append(d)
        etypes.append(str(e))

    feats = {}
    dims = {}
    for nid, vec in (features or {}).items():
        nid = int(nid)
        if nid not in node_types:
            raise GraphError(f"features given for unknown node {nid}")
        arr = np.asarray(vec, dtype=np.float64).reshape(-1)
        t = node_types[nid]
        if t in dims and dims[t] != arr.shape[0]:
            raise DimensionMismatch(
                f"node {nid} of type '{t}' has {arr.shape[0]} features, expected {dims[t]}"
            )
        dims.setdefault(t, arr.shape[0])
        feats[nid] = arr

    labs = {}
    for nid, cls in (labels or {}).items():
        nid = int(nid)
        if nid not in node_types:
            raise GraphError(f"label given for unknown node {nid}")
        if int(cls) < 0:
            raise GraphError(f"node {nid} has negative class id {cls}")
        labs[nid] = int(cls)

    return HetGraph(
        node_types,
        np.asarray(src, dtype=np.int64),
        np.asarray(dst, dtype=np.int64),
        etypes,
        feats,
        labs,
    )
