import logging

import numpy as np
import pytest

from ishne.config import TrainConfig
from ishne.dataio import SynthSpec, generate_synthetic, synthetic_metapaths
from ishne.hetgraph import build_graph, parse_schemas
from ishne.training import IshneModel, prepare_inputs


@pytest.fixture(autouse=True)
def _detach_log_handlers():
    yield
    log = logging.getLogger("ishne")
    for h in list(log.handlers):
        log.removeHandler(h)
        h.close()


@pytest.fixture
def rng():
    return np.random.default_rng(42)


@pytest.fixture
def toy_graph():
    """Papers 1..3, authors 10, 11: P1-A10, P2-A10, P3-A11."""
    nodes = [(1, "P"), (2, "P"), (3, "P"), (10, "A"), (11, "A")]
    edges = [(1, 10, "PA"), (2, 10, "PA"), (3, 11, "PA")]
    features = {1: [1.0, 0.0], 2: [0.0, 1.0], 3: [1.0, 1.0]}
    labels = {1: 0, 2: 0, 3: 1}
    return build_graph(nodes, edges, features, labels)


@pytest.fixture
def random_typed_graph():
    """Factory: random graph over types P/A/S with edge type named after its end types."""

    def make(rng, n_nodes, p_edge):
        types = ["P", "A", "S"] + list(rng.choice(["P", "A", "S"], size=n_nodes - 3))
        nodes = list(enumerate(types))
        edges = []
        for u in range(n_nodes):
            for v in range(u + 1, n_nodes):
                if rng.random() < p_edge:
                    edges.append((u, v, "".join(sorted(types[u] + types[v]))))
        features = {u: rng.normal(size=3) for u, t in nodes if t == "P"}
        return build_graph(nodes, edges, features)

    return make


@pytest.fixture
def tiny_setup():
    """Factory: (inputs, model) on a seeded synthetic graph with two meta-paths."""

    def make(targets=6, seed=3, hidden=3, heads=2, fusion_dim=4, **cfg):
        spec = SynthSpec(
            targets=targets, intermediates=2, classes=2, feature_dim=3, p_in=0.9, p_out=0.3, seed=seed
        )
        graph = generate_synthetic(spec)
        schemas = parse_schemas(synthetic_metapaths(), graph)
        inputs = prepare_inputs(graph, schemas)
        config = TrainConfig(
            hidden=hidden, heads=heads, fusion_dim=fusion_dim,
            epochs=cfg.pop("epochs", 5), patience=cfg.pop("patience", 5), seed=seed, **cfg,
        )
        model = IshneModel.init([s.name for s in schemas], spec.feature_dim, spec.classes, config)
        return graph, inputs, model

    return make
