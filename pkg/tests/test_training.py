import math
import os

import numpy as np
import pytest

from ishne import training
from ishne.autodiff import GradientTape, Tensor
from ishne.config import TrainConfig
from ishne.dataio import SynthSpec, generate_synthetic, load_graph, make_split, synthetic_metapaths
from ishne.errors import DataError, EmptyTrainSet, TrainingError
from ishne.hetgraph import build_graph, parse_schemas
from ishne.metrics import micro_f1
from ishne.training import (
    Adam,
    IshneModel,
    Split,
    forward,
    gradient_check,
    loss,
    predict,
    prepare_inputs,
    train,
)


def zero_model(model):
    for p in model.parameters():
        p.data[...] = 0.0
    return model


class TestLoss:
    def test_uniform_logits(self):
        Z = Tensor(np.zeros((4, 3)))
        labels = np.array([0, 1, 2, 1])
        assert loss(Z, labels, [0, 1, 2, 3]).item() == pytest.approx(math.log(3), abs=1e-12)
        assert loss(Z, labels, [0, 1, 2, 3], reduction="sum").item() == pytest.approx(4 * math.log(3), abs=1e-12)

    def test_confident_logits_approach_zero(self):
        Z = Tensor(np.array([[50.0, 0.0], [0.0, 50.0]]))
        assert loss(Z, np.array([0, 1]), [0, 1]).item() < 1e-20

    def test_random_reference(self, rng):
        Zd = rng.normal(size=(6, 4))
        labels = rng.integers(0, 4, size=6)
        rows = [0, 2, 3, 5]
        ref = np.mean([-(Zd[r, labels[r]] - math.log(sum(math.exp(v) for v in Zd[r]))) for r in rows])
        assert loss(Tensor(Zd), labels, rows).item() == pytest.approx(ref, abs=1e-12)

    def test_empty_train_set(self):
        with pytest.raises(EmptyTrainSet):
            loss(Tensor(np.zeros((2, 2))), np.array([0, 1]), [])

    def test_unknown_reduction(self):
        with pytest.raises(ValueError):
            loss(Tensor(np.zeros((2, 2))), np.array([0, 1]), [0, 1], reduction="median")

    def test_unlabeled_row(self):
        with pytest.raises(TrainingError):
            loss(Tensor(np.zeros((2, 2))), np.array([0, -1]), [0, 1])


class TestForward:
    def test_zero_parameters_give_zero_logits(self, tiny_setup):
        _, inputs, model = tiny_setup()
        out = forward(zero_model(model), inputs)
        np.testing.assert_array_equal(out.Z.data, np.zeros((inputs.num_nodes, 2)))
        np.testing.assert_allclose(out.beta.data, [0.5, 0.5], atol=1e-15)
        rows = np.arange(inputs.num_nodes)
        total = loss(out.Z, inputs.labels, rows, reduction="sum").item()
        assert total == pytest.approx(len(rows) * math.log(2), abs=1e-12)

    def test_single_metapath_single_head_end_to_end(self, rng):
        nodes = [(0, "P"), (1, "P"), (2, "P"), (3, "P"), (9, "A")]
        edges = [(0, 9, "PA"), (1, 9, "PA")]
        h = rng.normal(size=(4, 2))
        graph = build_graph(nodes, edges, {i: h[i] for i in range(4)}, {0: 0, 1: 1, 2: 0, 3: 1})
        inputs = prepare_inputs(graph, parse_schemas("P-A-P", graph))
        config = TrainConfig(hidden=2, heads=1, fusion_dim=2, epochs=1, patience=1)
        model = IshneModel.init(["PAP"], 2, 2, config)
        mp = model.metapaths[0]
        mp.M.data[...] = np.eye(2)
        mp.P.data[...] = 0.0
        mp.a[0].data[...] = [1.0, 0.0, 0.0, 1.0]
        C = model.C.data
        # node 0 attends over {0, 1}; nodes 2, 3 only to themselves
        e = np.array([h[0] @ [1, 0] + h[0][1], h[0] @ [1, 0] + h[1][1]])
        e = np.where(e > 0, e, 0.01 * e)
        alpha = np.exp(e) / np.exp(e).sum()
        agg = alpha[0] * h[0] + alpha[1] * h[1]
        x0 = np.where(agg > 0, agg, np.expm1(agg))
        x2 = np.where(h[2] > 0, h[2], np.expm1(h[2]))
        Z = forward(model, inputs).Z.data
        np.testing.assert_allclose(Z[0], C @ x0, atol=1e-12)
        np.testing.assert_allclose(Z[2], C @ x2, atol=1e-12)

    def test_duplicated_metapath(self, rng):
        nodes = [(i, "P") for i in range(6)] + [(10, "A"), (11, "A"), (20, "B"), (21, "B")]
        a_edges = [(0, 10), (1, 10), (2, 10), (3, 11), (4, 11), (5, 11), (0, 11)]
        edges = [(p, x, "PA") for p, x in a_edges] + [(p, x + 10, "PB") for p, x in a_edges]
        feats = {i: rng.normal(size=3) for i in range(6)}
        graph = build_graph(nodes, edges, feats, {i: i % 2 for i in range(6)})
        config = TrainConfig(hidden=2, heads=2, fusion_dim=3, epochs=1, patience=1, seed=5)

        double_inputs = prepare_inputs(graph, parse_schemas("P-A-P,P-B-P", graph))
        double = IshneModel.init(["PAP", "PBP"], 3, 2, config)
        copy = double.metapaths[1]
        src = double.metapaths[0]
        copy.M.data[...] = src.M.data
        copy.P.data[...] = src.P.data
        for a_copy, a_src in zip(copy.a, src.a):
            a_copy.data[...] = a_src.data
        single = IshneModel([src], double.fusion, double.C, config)
        single_inputs = prepare_inputs(graph, parse_schemas("P-A-P", graph))

        out = forward(double, double_inputs)
        np.testing.assert_array_equal(out.beta.data, [0.5, 0.5])
        np.testing.assert_array_equal(out.Z.data, forward(single, single_inputs).Z.data)
        np.testing.assert_array_equal(predict(double, double_inputs), predict(single, single_inputs))

    def test_workers_do_not_change_result(self, tiny_setup):
        _, inputs, model = tiny_setup()
        serial = forward(model, inputs).Z.data
        model.config = TrainConfig(**{**model.config.to_dict(), "workers": 2})
        np.testing.assert_array_equal(forward(model, inputs).Z.data, serial)


class TestPredict:
    def test_ties_go_to_lowest_class(self, tiny_setup):
        _, inputs, model = tiny_setup()
        model.C.data[...] = 0.0
        np.testing.assert_array_equal(predict(model, inputs), np.zeros(inputs.num_nodes, dtype=int))

    def test_shift_invariant(self, tiny_setup):
        _, inputs, model = tiny_setup()
        before = predict(model, inputs)
        Z = forward(model, inputs).Z.data
        np.testing.assert_array_equal(np.argmax(Z + 7.5, axis=1), before)

    def test_subset_and_unknown_node(self, tiny_setup):
        _, inputs, model = tiny_setup()
        full = predict(model, inputs)
        ids = inputs.node_ids[[3, 1]]
        np.testing.assert_array_equal(predict(model, inputs, ids), full[[3, 1]])
        with pytest.raises(DataError):
            predict(model, inputs, [99999])


def gradcheck_model(seed, **cfg):
    """Eight target nodes, two meta-paths, two heads."""
    spec = SynthSpec(targets=8, intermediates=3, classes=2, feature_dim=4, seed=seed)
    graph = generate_synthetic(spec)
    inputs = prepare_inputs(graph, parse_schemas(synthetic_metapaths(), graph))
    config = TrainConfig(hidden=3, heads=2, fusion_dim=4, epochs=1, patience=1, seed=seed, **cfg)
    return inputs, IshneModel.init(inputs.names, spec.feature_dim, spec.classes, config)


class TestGradients:
    @pytest.mark.parametrize("seed", [3, 5, 7, 11])
    def test_every_entry_matches_central_differences(self, seed):
        inputs, model = gradcheck_model(seed)
        errors = gradient_check(model, inputs, np.arange(inputs.num_nodes))
        assert set(errors) == set(model.named_parameters())
        for name, err in errors.items():
            assert err.entry < 1e-4, (name, err)
            assert err.norm < 1e-4, (name, err)

    def test_tiny_graph(self, tiny_setup):
        _, inputs, model = tiny_setup(targets=6)
        errors = gradient_check(model, inputs, np.arange(inputs.num_nodes))
        assert all(err.ok() for err in errors.values()), errors

    def test_without_influence(self):
        inputs, model = gradcheck_model(3, influence=False)
        errors = gradient_check(model, inputs, np.arange(inputs.num_nodes))
        for name, err in errors.items():
            assert err.entry < 1e-4, (name, err)
        assert errors["P.PAP"].entry == 0.0
        assert errors["P.PSP"].norm == 0.0

    def test_small_wrong_entry_is_not_hidden_by_large_ones(self, monkeypatch):
        inputs, model = gradcheck_model(3)

        class SkewedTape(GradientTape):
            def backward(self, L):
                super().backward(L)
                g = model.C.grad.reshape(-1)
                g[np.argmin(np.abs(g))] += 0.5e-4 * np.linalg.norm(g)

        monkeypatch.setattr(training, "GradientTape", SkewedTape)
        err = gradient_check(model, inputs, np.arange(inputs.num_nodes))["C"]
        assert err.norm < 1e-4
        assert err.entry > 1e-4
        assert not err.ok()


class TestAdam:
    def test_first_step_moves_by_lr(self):
        p = Tensor([1.0, -2.0], requires_grad=True)
        p.grad = np.array([0.3, -4.0])
        Adam({"p": p}, lr=0.1).step()
        np.testing.assert_allclose(p.data, [0.9, -1.9], atol=1e-6)

    def test_weight_decay_pulls_toward_zero(self):
        p = Tensor([2.0], requires_grad=True)
        Adam({"p": p}, lr=0.1, weight_decay=0.5).step()
        assert p.data[0] < 2.0


class TestTrain:
    def _split(self, inputs):
        ids = inputs.node_ids
        return Split(train=ids[:4], val=ids[4:7], test=ids[7:])

    def test_zero_learning_rate_freezes_model(self, tiny_setup):
        _, inputs, model = tiny_setup(targets=10, lr=0.0, epochs=6, patience=6)
        before = model.state_dict()
        model, history = train(model, inputs, self._split(inputs))
        for k, v in model.state_dict().items():
            np.testing.assert_array_equal(v, before[k])
        assert len(set(history.train_losses)) == 1

    def test_stops_after_patience_without_improvement(self, tiny_setup):
        _, inputs, model = tiny_setup(targets=10, lr=0.0, epochs=20, patience=3)
        _, history = train(model, inputs, self._split(inputs))
        assert history.stopped_early
        assert history.best_epoch == 1
        assert len(history) == 4

    def test_same_seed_same_history(self, tiny_setup):
        runs = []
        for _ in range(2):
            _, inputs, model = tiny_setup(targets=10, epochs=8, patience=8, dropout=0.2)
            _, history = train(model, inputs, self._split(inputs))
            runs.append(history.to_frame())
        assert runs[0].equals(runs[1])

    def test_restores_best_validation_parameters(self, tiny_setup, tmp_path):
        _, inputs, model = tiny_setup(targets=10, lr=0.05, epochs=25, patience=5)
        split = self._split(inputs)
        seen = []
        model, history = train(model, inputs, split, checkpoint_path=tmp_path / "best.ckpt", on_epoch=seen.append)
        assert len(seen) == len(history)
        assert history.best_val_loss == min(history.val_losses)
        if history.stopped_early:
            assert len(history) - history.best_epoch == 5
        val = loss(forward(model, inputs).Z, inputs.labels, inputs.rows(split.val)).item()
        assert val == pytest.approx(history.best_val_loss, abs=1e-12)
        assert (tmp_path / "best.ckpt").exists()

    def test_history_frame_columns(self, tiny_setup, tmp_path):
        _, inputs, model = tiny_setup(targets=10, epochs=3, patience=3)
        _, history = train(model, inputs, self._split(inputs))
        history.write_tsv(tmp_path / "epochs.tsv")
        header = (tmp_path / "epochs.tsv").read_text().splitlines()[0]
        assert header.split("\t") == ["epoch", "train_loss", "val_loss", "val_microF1"]
        assert list(history.to_frame()["epoch"]) == [1, 2, 3]

    def test_empty_train_split(self, tiny_setup):
        _, inputs, model = tiny_setup(targets=10)
        with pytest.raises(EmptyTrainSet):
            train(model, inputs, Split(train=[], val=inputs.node_ids[:3], test=[]))


@pytest.mark.slow
def test_planted_communities_are_learned():
    spec = SynthSpec(targets=200, classes=2, p_in=0.3, p_out=0.05, snr=2.0, seed=7)
    graph = generate_synthetic(spec)
    schemas = parse_schemas(synthetic_metapaths(), graph)
    inputs = prepare_inputs(graph, schemas)
    split = make_split(graph, 60, 40, seed=7, target_type="P")
    config = TrainConfig(hidden=8, heads=2, fusion_dim=16, epochs=200, patience=100, seed=7)
    model = IshneModel.init([s.name for s in schemas], spec.feature_dim, spec.classes, config)
    model, history = train(model, inputs, split, config)

    losses = history.train_losses
    assert np.mean(losses[10:20]) <= np.mean(losses[:10])
    rows = inputs.rows(split.test)
    test_pred = predict(model, inputs, split.test)
    gold = inputs.labels[rows]
    majority = np.max(np.bincount(gold)) / len(gold)
    acc = micro_f1(test_pred, gold)
    assert acc >= 0.90
    assert acc - majority >= 0.30
    train_rows = inputs.rows(split.train)
    assert micro_f1(predict(model, inputs, split.train), inputs.labels[train_rows]) >= 0.95


@pytest.mark.slow
@pytest.mark.skipif(not os.environ.get("ISHNE_ACM_GRAPH"), reason="set ISHNE_ACM_GRAPH to a preprocessed ACM graph file")
def test_acm_plausibility():
    graph = load_graph(os.environ["ISHNE_ACM_GRAPH"])
    schemas = parse_schemas("P-A-P,P-S-P", graph)
    inputs = prepare_inputs(graph, schemas)
    split = make_split(graph, 600, 300, seed=7, target_type="P")
    n_classes = int(inputs.labels.max()) + 1
    config = TrainConfig(hidden=8, heads=8, fusion_dim=128, epochs=200, patience=100, seed=7)
    model = IshneModel.init([s.name for s in schemas], inputs.H.shape[1], n_classes, config)
    model, _ = train(model, inputs, split, config)
    rows = inputs.rows(split.test)
    acc = micro_f1(predict(model, inputs, split.test), inputs.labels[rows])
    assert 0.78 <= acc <= 0.88
