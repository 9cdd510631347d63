import numpy as np
import pytest

from ishne import autodiff as ad
from ishne.attention import (
    MetaPathAttentionParams,
    aggregate,
    attention_coefficients,
    attention_table,
    embed_metapaths,
    influence_component,
    multihead_embed,
    project,
)
from ishne.autodiff import Tensor
from ishne.errors import EmptyNeighborhood, ShapeMismatch
from ishne.hetgraph import MetaPathSchema, build_graph


def leaky(x):
    return x if x > 0 else 0.01 * x


def elu(x):
    return x if x > 0 else np.expm1(x)


def oracle_head(h, nbrs, M, P, a, influence=True):
    """Node-by-node evaluation of one attention head; returns (weights per node, x)."""
    hp = [M @ hi for hi in h]
    hinf = [P @ hi for hi in h]
    weights, x = {}, []
    for i, js in enumerate(nbrs):
        scores = []
        for j in js:
            right = hp[j] + hinf[i] if influence else hp[j]
            scores.append(np.exp(leaky(float(a @ np.concatenate([hp[i], right])))))
        total = sum(scores)
        weights[i] = {j: s / total for j, s in zip(js, scores)}
        acc = sum(weights[i][j] * hp[j] for j in js)
        x.append([elu(v) for v in acc])
    return weights, np.asarray(x)


def pairs(nbrs):
    src = np.array([i for i, js in enumerate(nbrs) for _ in js])
    dst = np.array([j for js in nbrs for j in js])
    return src, dst


class Neighborhood:
    """Minimal stand-in exposing what multihead_embed reads from a MetaPathNeighborhood."""

    def __init__(self, nbrs):
        self.nbrs = nbrs

    def __len__(self):
        return len(self.nbrs)

    def edge_index(self):
        return pairs(self.nbrs)


NBRS = [[0, 1, 3], [0, 1], [2], [0, 2, 3]]


@pytest.fixture
def instance(rng):
    h = rng.normal(size=(4, 5))
    params = MetaPathAttentionParams.init("PAP", in_dim=5, hidden=3, heads=2, rng=rng)
    return h, params


class TestProjection:
    def test_identity(self, rng):
        h = rng.normal(size=(4, 3))
        np.testing.assert_array_equal(project(h, np.eye(3)).data, h)

    def test_zero(self, rng):
        h = rng.normal(size=(4, 3))
        np.testing.assert_array_equal(influence_component(h, np.zeros((2, 3))).data, np.zeros((4, 2)))

    def test_hand_matmul(self, rng):
        h, M = rng.normal(size=(2, 4)), rng.normal(size=(3, 4))
        expected = np.array([[sum(M[r, c] * h[i, c] for c in range(4)) for r in range(3)] for i in range(2)])
        np.testing.assert_allclose(project(h, M).data, expected, atol=1e-12)

    def test_shape_mismatch(self, rng):
        with pytest.raises(ShapeMismatch):
            project(rng.normal(size=(4, 3)), rng.normal(size=(2, 5)))


class TestAttentionCoefficients:
    def test_matches_straight_line_oracle(self, instance):
        h, params = instance
        src, dst = pairs(NBRS)
        for k, a in enumerate(params.a):
            alpha = attention_coefficients(
                src, dst, 4, project(h, params.M), influence_component(h, params.P), a
            ).data
            weights, _ = oracle_head(h, NBRS, params.M.data, params.P.data, a.data)
            expected = [weights[i][j] for i, j in zip(src, dst)]
            np.testing.assert_allclose(alpha, expected, rtol=0, atol=1e-12)

    def test_rows_sum_to_one(self, rng):
        for _ in range(100):
            n = int(rng.integers(2, 12))
            nbrs = [sorted({i} | set(rng.choice(n, size=rng.integers(0, n), replace=True).tolist())) for i in range(n)]
            src, dst = pairs(nbrs)
            params = MetaPathAttentionParams.init("X", 4, 3, 1, rng)
            h = rng.normal(size=(n, 4)) * 3
            alpha = attention_coefficients(
                src, dst, n, project(h, params.M), influence_component(h, params.P), params.a[0]
            ).data
            assert np.all(alpha >= 0)
            np.testing.assert_allclose(np.bincount(src, weights=alpha, minlength=n), np.ones(n), atol=1e-12)

    def test_self_only_neighbor_gets_weight_one(self, instance):
        h, params = instance
        src, dst = np.array([0]), np.array([0])
        alpha = attention_coefficients(
            src, dst, 1, project(h[:1], params.M), influence_component(h[:1], params.P), params.a[0]
        )
        assert alpha.data[0] == 1.0

    def test_identical_projections_without_influence_are_uniform(self, rng):
        h = np.tile(rng.normal(size=(1, 4)), (5, 1))
        params = MetaPathAttentionParams.init("X", 4, 3, 1, rng)
        nbrs = [[0, 1, 2], [1, 3], [0, 1, 2, 3, 4], [3], [2, 4]]
        src, dst = pairs(nbrs)
        alpha = attention_coefficients(
            src, dst, 5, project(h, params.M), influence_component(h, np.zeros((3, 4))), params.a[0]
        ).data
        expected = [1.0 / len(nbrs[i]) for i in src]
        np.testing.assert_allclose(alpha, expected, atol=1e-12)

    @pytest.mark.parametrize("seed", range(20))
    def test_zero_influence_equals_influence_off(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 10))
        nbrs = [sorted({i} | set(rng.choice(n, size=rng.integers(0, n), replace=True).tolist())) for i in range(n)]
        src, dst = pairs(nbrs)
        h = rng.normal(size=(n, 5))
        params = MetaPathAttentionParams.init("X", 5, 3, 2, rng)
        hp = project(h, params.M)
        zero_p = influence_component(h, np.zeros((3, 5)))
        for a in params.a:
            with_zero_p = attention_coefficients(src, dst, n, hp, zero_p, a)
            switched_off = attention_coefficients(src, dst, n, hp, None, a, influence=False)
            np.testing.assert_array_equal(with_zero_p.data, switched_off.data)

    def test_attention_is_directional(self, rng):
        nbrs = [[0, 1, 2, 3]] * 4
        src, dst = pairs(nbrs)
        worst = 0.0
        for _ in range(20):
            h = rng.normal(size=(4, 5))
            params = MetaPathAttentionParams.init("X", 5, 3, 1, rng)
            alpha = attention_coefficients(
                src, dst, 4, project(h, params.M), influence_component(h, params.P), params.a[0]
            ).data.reshape(4, 4)
            worst = max(worst, np.max(np.abs(alpha - alpha.T)))
        assert worst > 1e-3

    def test_empty_neighborhood(self, instance):
        h, params = instance
        src, dst = pairs([[0, 1], [], [2], [3]])
        with pytest.raises(EmptyNeighborhood):
            attention_coefficients(
                src, dst, 4, project(h, params.M), influence_component(h, params.P), params.a[0]
            )


class TestAggregate:
    def test_singleton_is_activation_of_projection(self, rng):
        hp = Tensor(rng.normal(size=(1, 3)))
        x = aggregate([0], [0], 1, Tensor([1.0]), hp, "elu")
        np.testing.assert_allclose(x.data, ad.activation(hp, "elu").data)

    def test_uniform_weights_over_identical_rows(self, rng):
        v = rng.normal(size=3)
        hp = Tensor(np.tile(v, (3, 1)))
        x = aggregate([0, 0, 0], [0, 1, 2], 3, Tensor(np.full(3, 1 / 3)), hp, "tanh").data[0]
        np.testing.assert_allclose(x, np.tanh(v), atol=1e-15)

    def test_neighbor_order_does_not_matter(self, instance, rng):
        h, params = instance
        src, dst = pairs(NBRS)
        hp, hinf = project(h, params.M), influence_component(h, params.P)
        alpha = attention_coefficients(src, dst, 4, hp, hinf, params.a[0])
        x = aggregate(src, dst, 4, alpha, hp)
        perm = rng.permutation(len(src))
        alpha_p = attention_coefficients(src[perm], dst[perm], 4, hp, hinf, params.a[0])
        x_p = aggregate(src[perm], dst[perm], 4, alpha_p, hp)
        np.testing.assert_allclose(alpha_p.data, alpha.data[perm], atol=1e-15)
        np.testing.assert_allclose(x_p.data, x.data, atol=1e-14)


class TestMultihead:
    def test_matches_oracle_in_head_order(self, instance):
        h, params = instance
        emb = multihead_embed(h, Neighborhood(NBRS), params)
        expected = np.concatenate(
            [oracle_head(h, NBRS, params.M.data, params.P.data, a.data)[1] for a in params.a], axis=1
        )
        assert emb.x.shape == (4, 6)
        np.testing.assert_allclose(emb.x.data, expected, atol=1e-12)

    def test_single_head_equals_aggregate(self, instance):
        h, params = instance
        one = MetaPathAttentionParams("PAP", params.M, params.P, params.a[:1])
        src, dst = pairs(NBRS)
        hp = project(h, one.M)
        alpha = attention_coefficients(src, dst, 4, hp, influence_component(h, one.P), one.a[0])
        np.testing.assert_array_equal(
            multihead_embed(h, Neighborhood(NBRS), one).x.data, aggregate(src, dst, 4, alpha, hp).data
        )

    def test_tied_heads_repeat(self, instance):
        h, params = instance
        tied = MetaPathAttentionParams("PAP", params.M, params.P, [params.a[0], params.a[0]])
        x = multihead_embed(h, Neighborhood(NBRS), tied).x.data
        np.testing.assert_array_equal(x[:, :3], x[:, 3:])

    def test_locality(self, instance):
        h, params = instance
        before = multihead_embed(h, Neighborhood(NBRS), params).x.data
        changed = h.copy()
        changed[3] += 10.0  # node 3 is neither node 1 nor one of its neighbors
        after = multihead_embed(changed, Neighborhood(NBRS), params).x.data
        np.testing.assert_array_equal(after[1], before[1])
        assert not np.allclose(after[3], before[3])

    def test_neighborhood_size_must_match_features(self, instance):
        h, params = instance
        with pytest.raises(ShapeMismatch):
            multihead_embed(h[:3], Neighborhood(NBRS), params)

    def test_thread_pool_gives_same_embeddings(self, rng):
        nodes = [(i, "P") for i in range(6)] + [(10, "A"), (11, "A"), (20, "S")]
        edges = [(0, 10, "PA"), (1, 10, "PA"), (2, 11, "PA"), (3, 11, "PA"), (4, 20, "PS"), (5, 20, "PS"), (0, 20, "PS")]
        graph = build_graph(nodes, edges)
        nbs = [graph.metapath_neighbors(MetaPathSchema.parse(t, graph)) for t in ("P-A-P", "P-S-P")]
        h = rng.normal(size=(6, 4))
        plist = [MetaPathAttentionParams.init(n, 4, 2, 2, rng) for n in ("PAP", "PSP")]
        serial = embed_metapaths(h, nbs, plist, workers=1)
        pooled = embed_metapaths(h, nbs, plist, workers=2)
        for s, p in zip(serial, pooled):
            assert s.name == p.name
            np.testing.assert_array_equal(s.x.data, p.x.data)

    def test_attention_table(self, instance):
        h, params = instance
        emb = multihead_embed(h, Neighborhood(NBRS), params)
        table = attention_table(emb, np.array([100, 101, 102, 103]), head=1)
        assert list(table.columns) == ["metapath", "src", "dst", "weight"]
        assert len(table) == sum(len(js) for js in NBRS)
        np.testing.assert_allclose(table.groupby("src")["weight"].sum().to_numpy(), np.ones(4), atol=1e-12)
        assert set(table["src"]) == {100, 101, 102, 103}
