import math

import numpy as np
import pytest

from mulr.dataset import DatasetSplit, EntityRecord, TypeSystem
from mulr.embeddings import EmbeddingStore
from mulr.errors import DataError
from mulr.levels import (Assembler, LevelSpec, RepresentationSpec, Resources,
                         default_hidden_units)
from mulr.nn import grad_check, relu
from mulr.typer import (TrainConfig, TyperModel, calibrate_from_scores,
                        calibrate_thresholds, load_model, predict,
                        predict_with_scores, save_model, threshold_f1, train)


def indicator_problem(n_per_type=12, dim=6, noise=0.05, seed=0,
                      types=("ta", "tb")):
    """Entity vectors are noisy type indicators; linearly separable."""
    rng = np.random.default_rng(seed)
    ts = TypeSystem(types=tuple(types), parent={})
    records = {"train": [], "dev": [], "test": []}
    tokens, rows = [], []
    serial = 0
    for t_idx, t in enumerate(types):
        for j in range(n_per_type):
            eid = f"m.{serial:03d}"
            serial += 1
            vec = rng.normal(scale=noise, size=dim)
            vec[t_idx] += 1.0
            tokens.append(eid)
            rows.append(vec)
            part = "train" if j < n_per_type - 4 else \
                ("dev" if j < n_per_type - 2 else "test")
            records[part].append(EntityRecord(
                id=eid, names=(f"name {serial}",),
                gold_types=frozenset({t}), corpus_frequency=10))
    for t_idx, t in enumerate(types):
        vec = np.zeros(dim)
        vec[t_idx] = 1.0
        tokens.append(t)
        rows.append(vec)
    store = EmbeddingStore(kind="sskip", dim=dim, tokens=tokens,
                           matrix=np.array(rows))
    split = DatasetSplit(train=tuple(records["train"]),
                         dev=tuple(records["dev"]),
                         test=tuple(records["test"]))
    res = Resources(type_system=ts, entity_store=store, word_store=store)
    return split, res


def quick_cfg(**kw):
    base = dict(epochs=50, batch_size=8, learning_rate=0.2, seed=1,
                patience=50, hidden_units=8)
    base.update(kw)
    return TrainConfig(**base)


class TestForward:
    def _tiny_model(self):
        split, res = indicator_problem()
        spec = RepresentationSpec.parse("elr")
        asm = Assembler(spec, res).fit(["x"])
        rng = np.random.default_rng(0)
        return TyperModel(spec, res, asm, None, 3, rng)

    def test_zero_weights_give_half(self):
        model = self._tiny_model()
        for arr in model.params().values():
            arr[...] = 0.0
        p = model.forward(np.ones(model.input_dim))
        np.testing.assert_allclose(p, 0.5)

    def test_hand_arithmetic_one_hidden_unit(self):
        split, res = indicator_problem(dim=2)
        spec = RepresentationSpec.parse("elr")
        asm = Assembler(spec, res).fit(["x"])
        model = TyperModel(spec, res, asm, None, 1, np.random.default_rng(0))
        model.w_in.W[...] = [[0.3, -0.2]]
        model.w_in.b[...] = [0.1]
        model.w_out.W[...] = [[0.5], [-0.4]]
        model.w_out.b[...] = [0.2, -0.1]
        p = model.forward(np.array([1.0, 0.5]))
        h = 0.3 * 1.0 - 0.2 * 0.5 + 0.1
        exp1 = 1.0 / (1.0 + math.exp(-(0.5 * h + 0.2)))
        exp2 = 1.0 / (1.0 + math.exp(-(-0.4 * h - 0.1)))
        np.testing.assert_allclose(p, [exp1, exp2], atol=1e-12)

    def test_default_hidden_units_for_single_elr(self):
        assert default_hidden_units(("elr",)) == 400

    def test_dim_mismatch_errors(self):
        model = self._tiny_model()
        with pytest.raises(Exception):
            model.forward(np.ones(model.input_dim + 1))


class TestTraining:
    def test_separable_problem_reaches_perfect_train_f1(self):
        split, res = indicator_problem()
        model = train(split, RepresentationSpec.parse("elr"), res,
                      quick_cfg())
        pairs = [(e.id, e.names[0]) for e in split.train]
        p = model.scores_for(pairs)
        gold = model.label_matrix(list(split.train))
        pred = (p > 0.5).astype(float)
        tp = np.sum(pred * gold)
        f1 = 2 * tp / (2 * tp + np.sum(pred * (1 - gold))
                       + np.sum((1 - pred) * gold))
        assert f1 == 1.0

    def test_deterministic_given_seed(self):
        split, res = indicator_problem()
        cfg = quick_cfg(epochs=5)
        m1 = train(split, RepresentationSpec.parse("elr"), res, cfg)
        m2 = train(split, RepresentationSpec.parse("elr"), res, cfg)
        for k, v in m1.params().items():
            np.testing.assert_array_equal(v, m2.params()[k])

    def test_patience_zero_is_one_epoch(self):
        split, res = indicator_problem()
        epochs_seen = []
        train(split, RepresentationSpec.parse("elr"), res,
              quick_cfg(patience=0, epochs=30),
              on_epoch_end=lambda e, loss, metric: epochs_seen.append(e))
        assert epochs_seen == [0]

    def test_checkpoint_metric_at_least_final_epoch(self):
        split, res = indicator_problem(noise=0.6, seed=3)
        metrics = []
        model = train(split, RepresentationSpec.parse("elr"), res,
                      quick_cfg(epochs=25, learning_rate=0.5),
                      on_epoch_end=lambda e, loss, m: metrics.append(m))
        assert model.dev_metric >= metrics[-1] - 1e-12
        assert model.dev_metric == pytest.approx(max(metrics))

    def test_frozen_stores_unchanged_by_training(self):
        split, res = indicator_problem()
        before = res.entity_store.matrix.tobytes()
        train(split, RepresentationSpec.parse("elr,tc"), res, quick_cfg(epochs=4))
        assert res.entity_store.matrix.tobytes() == before

    def test_no_train_instances_errors(self):
        split, res = indicator_problem()
        empty = DatasetSplit(train=(), dev=split.dev, test=split.test)
        with pytest.raises(DataError):
            train(empty, RepresentationSpec.parse("elr"), res, quick_cfg())

    def test_multi_name_train_entities_make_instances(self):
        split, res = indicator_problem()
        multi = EntityRecord(id=split.train[0].id,
                             names=("one name", "second name", "third nm"),
                             gold_types=split.train[0].gold_types,
                             corpus_frequency=3)
        split = DatasetSplit(train=(multi,) + split.train[1:],
                             dev=split.dev, test=split.test)
        from mulr.typer import train_instances
        insts = train_instances(split)
        assert sum(1 for e, _ in insts if e.id == multi.id) == 3


def _pool_margins_ok(net, margin=1e-3):
    """True when no max-pool decision can flip under a tiny perturbation.

    Exactly tied window scores come from identical window contents (the
    padding region) and move jointly under any parameter perturbation, so
    only near-ties between distinct values are unsafe. A pooled zero is
    safe when every preactivation is clearly negative.
    """
    for w, _ in net.widths:
        _, pre, _ = net._cache["per_width"][w]
        act = relu(pre)
        B, P, F = act.shape
        for b in range(B):
            for f in range(F):
                col = act[b, :, f]
                v1 = col.max()
                if v1 < margin:
                    if pre[b, :, f].max() > -margin:
                        return False
                    continue
                lower = col[col < v1 - 1e-12]
                if lower.size and v1 - lower.max() < margin:
                    return False
    return True


class TestEndToEndGradient:
    def test_full_typer_with_trainable_cnn_matches_finite_differences(self):
        rng_outer = np.random.default_rng(0)
        for attempt in range(10):
            seed = int(rng_outer.integers(0, 10_000))
            split, res = indicator_problem(seed=seed)
            spec = RepresentationSpec(levels=(
                LevelSpec("elr"),
                LevelSpec("clr-cnn", options={"padded_len": 8, "char_dim": 3,
                                              "widths": (1, 2),
                                              "feature_maps": 2}),
                LevelSpec("tc"),
            ))
            rng = np.random.default_rng(seed + 1)
            asm = Assembler(spec, res).fit(["abc"])
            from mulr.levels import ClrEncoder, build_char_vocab
            vocab = build_char_vocab(["abcdef nm" * 5])
            clr = ClrEncoder(spec.clr_level, vocab, rng,
                             combo_kinds=spec.kinds)
            model = TyperModel(spec, res, asm, clr, 5, rng)
            insts = [(e.id, e.names[0]) for e in split.train[:3]]
            frozen = model.frozen_matrix(insts)
            ids = model.char_matrix(insts)
            labels = model.label_matrix(list(split.train[:3]))

            def loss_fn():
                p = model.forward(model.compose(frozen, ids))
                q = np.clip(p, 1e-7, 1 - 1e-7)
                return float(-np.sum(labels * np.log(q) + (1 - labels)
                                     * np.log(1 - q)) / len(insts))

            p = model.forward(model.compose(frozen, ids))
            if np.any(np.abs(model._h_pre) < 1e-3):
                continue  # resample away from the rectifier kink
            if not _pool_margins_ok(model.clr.net):
                continue  # resample away from pooling ties
            model.zero_grad()
            model.backward_from_probs(p, labels)
            err = grad_check(loss_fn, model.params(), model.grad_dict(),
                             rng=np.random.default_rng(seed + 2),
                             max_samples_per_param=6)
            assert err < 1e-4
            return
        pytest.fail("no tie-free fixture found")


def brute_force_best_f1(scores, labels):
    """Exhaustive scan over all distinct-score cut points."""
    best = -1.0
    order = np.argsort(-scores, kind="stable")
    s_sorted = scores[order]
    y_sorted = labels[order]
    total_pos = labels.sum()
    # predicting the top group of c distinct values, for every c
    distinct = np.unique(s_sorted)[::-1]
    for c in range(0, len(distinct) + 1):
        if c == 0:
            pred_mask = np.zeros(len(scores), dtype=bool)
        else:
            pred_mask = s_sorted >= distinct[c - 1]
        tp = float(np.sum(pred_mask * y_sorted))
        fp = float(np.sum(pred_mask * (1 - y_sorted)))
        fn = total_pos - tp
        denom = 2 * tp + fp + fn
        f1 = 2 * tp / denom if denom > 0 else 1.0
        best = max(best, f1)
    return best


class TestCalibration:
    def test_fixture_midpoint_55(self):
        scores = np.array([[0.9], [0.8], [0.3]])
        gold = np.array([[1.0], [1.0], [0.0]])
        thresholds = calibrate_from_scores(scores, gold)
        assert thresholds[0] == pytest.approx(0.55)

    def test_all_positives_threshold_below_min(self):
        scores = np.array([[0.3], [0.4]])
        gold = np.array([[1.0], [1.0]])
        thresholds = calibrate_from_scores(scores, gold)
        assert thresholds[0] < 0.3
        assert threshold_f1(scores[:, 0], gold[:, 0], thresholds[0]) == 1.0

    def test_no_positives_half_flagged(self):
        flags = []
        thresholds = calibrate_from_scores(np.array([[0.2], [0.6]]),
                                           np.zeros((2, 1)), flags=flags,
                                           type_names=["t"])
        assert thresholds[0] == 0.5
        assert flags

    def test_matches_bruteforce_on_random_configurations(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            n = int(rng.integers(2, 60))
            scores = np.round(rng.random((n, 1)), 3)
            gold = (rng.random((n, 1)) < 0.4).astype(float)
            if gold.sum() == 0:
                continue
            theta = calibrate_from_scores(scores, gold)[0]
            achieved = threshold_f1(scores[:, 0], gold[:, 0], theta)
            assert achieved == pytest.approx(
                brute_force_best_f1(scores[:, 0], gold[:, 0]))

    def test_calibrated_at_least_fixed_half(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            n = int(rng.integers(2, 40))
            scores = rng.random((n, 3))
            gold = (rng.random((n, 3)) < 0.5).astype(float)
            thresholds = calibrate_from_scores(scores, gold)
            for t in range(3):
                assert threshold_f1(scores[:, t], gold[:, t], thresholds[t]) \
                    >= threshold_f1(scores[:, t], gold[:, t], 0.5) - 1e-12

    def test_model_level_calibration(self):
        split, res = indicator_problem()
        model = train(split, RepresentationSpec.parse("elr"), res,
                      quick_cfg(epochs=10))
        thresholds = calibrate_thresholds(model, list(split.dev))
        assert thresholds.shape == (2,)
        assert np.all((thresholds > 0) & (thresholds < 1))


class TestPredict:
    def _model_with_scores(self, scores, thresholds, types=("ta", "tb")):
        split, res = indicator_problem(types=types)
        spec = RepresentationSpec.parse("elr")
        asm = Assembler(spec, res).fit(["x"])
        model = TyperModel(spec, res, asm, None, 2, np.random.default_rng(0))
        model.thresholds = np.asarray(thresholds, dtype=float)
        model.score_entity = lambda e: np.asarray(scores, dtype=float)
        return model

    def test_all_half_scores_predict_nothing(self):
        model = self._model_with_scores([0.5, 0.5], [0.5, 0.5])
        e = EntityRecord(id="m.0", names=("x",), gold_types=frozenset())
        assert predict(model, e) == set()

    def test_gold_indicator_recovered(self):
        model = self._model_with_scores([0.9, 0.1], [0.5, 0.5])
        e = EntityRecord(id="m.0", names=("x",),
                         gold_types=frozenset({"ta"}))
        assert predict(model, e) == {"ta"}

    def test_raising_threshold_monotone(self):
        e = EntityRecord(id="m.0", names=("x",), gold_types=frozenset())
        low = self._model_with_scores([0.7, 0.6], [0.5, 0.5])
        high = self._model_with_scores([0.7, 0.6], [0.75, 0.5])
        assert predict(high, e) <= predict(low, e)

    def test_scores_sorted_descending(self):
        model = self._model_with_scores([0.7, 0.9], [0.5, 0.5])
        e = EntityRecord(id="m.0", names=("x",), gold_types=frozenset())
        scored = predict_with_scores(model, e)
        assert [t for t, _ in scored] == ["tb", "ta"]


class TestSerialization:
    def test_round_trip_same_predictions(self, tmp_path):
        split, res = indicator_problem()
        spec = RepresentationSpec(levels=(
            LevelSpec("elr"),
            LevelSpec("clr-cnn", options={"padded_len": 8, "char_dim": 3,
                                          "widths": (1, 2),
                                          "feature_maps": 2}),
            LevelSpec("tc"),
        ))
        model = train(split, spec, res, quick_cfg(epochs=4))
        calibrate_thresholds(model, list(split.dev))
        path = tmp_path / "model.bin"
        save_model(model, path, config_hash="abc", seed=1)
        loaded = load_model(path)
        for e in split.test:
            np.testing.assert_allclose(loaded.score_entity(e),
                                       model.score_entity(e), atol=1e-12)
            assert predict(loaded, e) == predict(model, e)

    def test_save_is_deterministic(self, tmp_path):
        split, res = indicator_problem()
        model = train(split, RepresentationSpec.parse("elr"), res,
                      quick_cfg(epochs=3))
        p1, p2 = tmp_path / "a.bin", tmp_path / "b.bin"
        save_model(model, p1, config_hash="h", seed=1)
        save_model(model, p2, config_hash="h", seed=1)
        assert p1.read_bytes() == p2.read_bytes()
