"""Loss builders for all five methods, plus the shared training loop."""

import math

import numpy as np
import pytest

from udalab.data import make_moons_pair, onehot, plan_batches
from udalab.errors import NanLossError, ValidationError
from udalab.methods import (
    AdaptModel,
    DannConfig,
    DannFixbiConfig,
    FixbiConfig,
    MstnConfig,
    MstnState,
    OptimSpec,
    SourceOnlyConfig,
    bidirectional_loss,
    consistency_loss,
    dann_loss,
    dannfixbi_domain_loss,
    dannfixbi_total,
    fixbi_fm_loss,
    fixbi_mix,
    mstn_centroid_update,
    mstn_semantic_loss,
    mstn_total,
    predict_probs,
    self_penalization_loss,
    source_only_loss,
    train,
    update_threshold,
)
from udalab.nn import ParamSet, init_network
from udalab.optim import Sgd, SgdConfig
from udalab.tensor import Tape

LN2 = math.log(2.0)


def small_model(seed=0, in_dim=2, hidden=6, n_classes=2, with_domain=True, dropout=0.0):
    rng = np.random.default_rng(seed)
    return AdaptModel(
        init_network("feature_extractor", [in_dim, hidden], 0.0, rng),
        init_network("label_predictor", [hidden, hidden, n_classes], 0.0, rng),
        init_network("domain_classifier", [hidden, hidden, 2], dropout, rng) if with_domain else None,
    )


def zero_head(net):
    for layer in net.layers:
        layer.weight.values[...] = 0.0
        layer.bias.values[...] = 0.0


def saturate_head(net, hot_class=0, size=200.0):
    zero_head(net)
    net.layers[-1].bias.values[hot_class] = size


def numpy_softmax(z):
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def numpy_ce(z, t):
    shifted = z - z.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    return float(-(t * logp).sum() / z.shape[0])


class TestSourceOnly:
    def test_uniform_logits_give_ln2(self, rng):
        model = small_model(with_domain=False)
        zero_head(model.label)
        tape = Tape()
        loss = source_only_loss(tape, model, rng.normal(size=(5, 2)), np.zeros(5, int))
        assert abs(float(loss.values) - LN2) < 1e-12

    def test_nonnegative(self, rng):
        model = small_model(seed=3, with_domain=False)
        tape = Tape()
        loss = source_only_loss(tape, model, rng.normal(size=(7, 2)),
                                rng.integers(0, 2, size=7))
        assert float(loss.values) >= 0.0

    def test_empty_batch_rejected(self):
        model = small_model(with_domain=False)
        with pytest.raises(ValidationError):
            source_only_loss(Tape(), model, np.zeros((0, 2)), np.zeros(0, int))

    def test_overfits_separable_toy_batch(self):
        model = small_model(seed=1, with_domain=False, hidden=16)
        x = np.vstack([np.full((5, 2), -2.0), np.full((5, 2), 2.0)])
        y = np.array([0] * 5 + [1] * 5)
        params = ParamSet(model.parameters())
        opt = Sgd(SgdConfig(lr=0.5, momentum=0.9))
        for _ in range(300):
            tape = Tape()
            params.watch_all(tape)
            loss = source_only_loss(tape, model, x, y)
            opt.step(params, tape.backward(loss))
        assert float(loss.values) < 0.01


class TestDannLoss:
    def test_negative_lambda_rejected(self, rng):
        model = small_model()
        with pytest.raises(ValidationError):
            dann_loss(Tape(), model, rng.normal(size=(3, 2)), np.zeros(3, int),
                      rng.normal(size=(3, 2)), -0.5)

    def test_uniform_domain_head_gives_ln2(self, rng):
        model = small_model(seed=2)
        zero_head(model.domain)
        tape = Tape()
        parts = dann_loss(tape, model, rng.normal(size=(4, 2)), np.zeros(4, int),
                          rng.normal(size=(5, 2)), 1.0)
        assert abs(float(parts.domain.values) - LN2) < 1e-12

    def test_lambda_zero_blocks_domain_gradient_into_features(self, rng):
        x_s = rng.normal(size=(6, 2))
        y_s = rng.integers(0, 2, size=6)
        x_t = rng.normal(size=(6, 2))

        model = small_model(seed=4)
        tape = Tape()
        params = ParamSet(model.parameters())
        params.watch_all(tape)
        parts = dann_loss(tape, model, x_s, y_s, x_t, 0.0)
        grads_total = tape.backward(parts.total)

        # label-branch-only oracle over the identical forward structure
        ref = small_model(seed=4)
        tape_ref = Tape()
        ref_params = ParamSet(ref.parameters())
        ref_params.watch_all(tape_ref)
        feats = ref.feature.forward(tape_ref, np.vstack([x_s, x_t]), "train")
        f_src = tape_ref.take_rows(feats, np.arange(6))
        label_loss = tape_ref.softmax_cross_entropy(
            ref.label.forward(tape_ref, f_src, "train"), onehot(y_s, 2))
        grads_label = tape_ref.backward(label_loss)
        for name in ref.feature.parameters("feature."):
            assert np.array_equal(grads_total[params[name]], grads_label[ref_params[name]])

    def test_gradient_decomposition_against_two_backward_passes(self, rng):
        lam = 0.7
        x_s = rng.normal(size=(5, 2))
        y_s = rng.integers(0, 2, size=5)
        x_t = rng.normal(size=(4, 2))

        model = small_model(seed=6)
        tape = Tape()
        params = ParamSet(model.parameters())
        params.watch_all(tape)
        parts = dann_loss(tape, model, x_s, y_s, x_t, lam)
        grads = tape.backward(parts.total)

        def branch_grads(include_label):
            twin = small_model(seed=6)
            t = Tape()
            twin_params = ParamSet(twin.parameters())
            twin_params.watch_all(t)
            feats = twin.feature.forward(t, np.vstack([x_s, x_t]), "train")
            if include_label:
                f_src = t.take_rows(feats, np.arange(5))
                loss = t.softmax_cross_entropy(
                    twin.label.forward(t, f_src, "train"), onehot(y_s, 2))
            else:
                dom_target = onehot(np.array([0] * 5 + [1] * 4), 2)
                loss = t.softmax_cross_entropy(
                    twin.domain.forward(t, feats, "train"), dom_target)
            return twin_params, t.backward(loss)

        label_params, g_label = branch_grads(True)
        domain_params, g_domain = branch_grads(False)
        for name in model.feature.parameters("feature."):
            want = g_label[label_params[name]] - lam * g_domain[domain_params[name]]
            assert np.abs(grads[params[name]] - want).max() < 1e-10
        for name in model.domain.parameters("domain."):
            want = g_domain[domain_params[name]]  # reversal does not flip the head's own grads
            assert np.abs(grads[params[name]] - want).max() < 1e-10


class TestMstn:
    def test_centroid_retention_one_keeps_state(self, rng):
        state = MstnState(rng.normal(size=(2, 3)), rng.normal(size=(2, 3)), 1.0)
        out = mstn_centroid_update(state, rng.normal(size=(4, 3)), [0, 0, 1, 1],
                                   rng.normal(size=(4, 3)), [0, 1, 0, 1])
        assert np.array_equal(out.centroids_source, state.centroids_source)
        assert np.array_equal(out.centroids_target, state.centroids_target)

    def test_centroid_retention_zero_takes_batch_means(self, rng):
        state = MstnState(np.zeros((2, 3)), np.zeros((2, 3)), 0.0)
        feats = rng.normal(size=(4, 3))
        out = mstn_centroid_update(state, feats, [0, 0, 1, 1], feats, [1, 1, 0, 0])
        assert np.allclose(out.centroids_source[0], feats[:2].mean(axis=0), atol=1e-15)
        assert np.allclose(out.centroids_target[0], feats[2:].mean(axis=0), atol=1e-15)

    def test_centroid_convex_combination(self):
        state = MstnState(np.zeros((1, 2)), np.zeros((1, 2)), 0.7)
        out = mstn_centroid_update(state, np.ones((3, 2)), [0, 0, 0],
                                   np.ones((3, 2)), [0, 0, 0])
        assert np.allclose(out.centroids_source, [[0.3, 0.3]], atol=1e-15)

    def test_absent_class_keeps_previous_centroid(self, rng):
        prev = rng.normal(size=(3, 2))
        state = MstnState(prev, prev.copy(), 0.5)
        out = mstn_centroid_update(state, rng.normal(size=(2, 2)), [0, 0],
                                   rng.normal(size=(2, 2)), [1, 1])
        assert np.array_equal(out.centroids_source[1], prev[1])
        assert np.array_equal(out.centroids_source[2], prev[2])
        assert np.array_equal(out.centroids_target[0], prev[0])

    def test_semantic_loss_values(self, rng):
        same = rng.normal(size=(4, 5))
        assert mstn_semantic_loss(MstnState(same, same.copy(), 0.5)) == 0.0
        offsets = np.zeros((4, 5))
        offsets[:, 0] = 1.0  # each class offset by a unit vector
        assert abs(mstn_semantic_loss(MstnState(same, same + offsets, 0.5)) - 4.0) < 1e-12
        other = rng.normal(size=(4, 5))
        expected = float(((same - other) ** 2).sum())
        assert abs(mstn_semantic_loss(MstnState(same, other, 0.5)) - expected) < 1e-12

    def test_total_reduces_to_source_only_bitwise(self, rng):
        model = small_model(seed=7)
        x_s = rng.normal(size=(6, 2))
        y_s = rng.integers(0, 2, size=6)
        x_t = rng.normal(size=(6, 2))
        state = MstnState.zeros(2, model.feature.out_dim, 0.7)
        tape = Tape()
        total, parts, _ = mstn_total(tape, model, state, x_s, y_s, x_t, 0.0, 0.0)
        reference = source_only_loss(Tape(), small_model(seed=7), x_s, y_s)
        assert float(total.values) == float(reference.values)

    def test_total_with_equal_frozen_centroids_drops_semantic_term(self, rng):
        model = small_model(seed=8)
        banks = rng.normal(size=(2, model.feature.out_dim))
        state = MstnState(banks, banks.copy(), 1.0)  # retention 1: centroids frozen
        x_s = rng.normal(size=(5, 2))
        y_s = rng.integers(0, 2, size=5)
        x_t = rng.normal(size=(5, 2))
        tape = Tape()
        lam = 0.8
        total, parts, _ = mstn_total(tape, model, state, x_s, y_s, x_t, lam, 1.0)
        assert float(parts["semantic"].values) == 0.0
        expected = float(parts["label_ce"].values) + lam * float(parts["domain_ce"].values)
        assert abs(float(total.values) - expected) < 1e-12

    def test_total_parts_match_independent_recomputation(self, rng):
        model = small_model(seed=9)
        state = MstnState.zeros(2, model.feature.out_dim, 0.7)
        x_s = rng.normal(size=(4, 2))
        y_s = np.array([0, 1, 0, 1])
        x_t = rng.normal(size=(4, 2))
        lam, gamma = 0.6, 1.3
        tape = Tape()
        total, parts, new_state = mstn_total(tape, model, state, x_s, y_s, x_t, lam, gamma)

        # independent numpy recomputation of all three terms
        def feats_of(x):
            h = x
            for layer in model.feature.layers:
                h = h @ layer.weight.values.T + layer.bias.values
                if layer.activation == "relu":
                    h = np.maximum(h, 0.0)
            return h

        def logits_of(net, x):
            h = x
            for layer in net.layers:
                h = h @ layer.weight.values.T + layer.bias.values
                if layer.activation == "relu":
                    h = np.maximum(h, 0.0)
            return h

        f_s, f_t = feats_of(x_s), feats_of(x_t)
        label_ce = numpy_ce(logits_of(model.label, f_s), onehot(y_s, 2))
        dom_logits = logits_of(model.domain, np.vstack([f_s, f_t]))
        dom_ce = numpy_ce(dom_logits, onehot(np.array([0] * 4 + [1] * 4), 2))
        pseudo = logits_of(model.label, f_t).argmax(axis=1)
        updated = mstn_centroid_update(state, f_s, y_s, f_t, pseudo)
        semantic = mstn_semantic_loss(updated)
        assert abs(float(parts["label_ce"].values) - label_ce) < 1e-10
        assert abs(float(parts["domain_ce"].values) - dom_ce) < 1e-10
        assert abs(float(parts["semantic"].values) - semantic) < 1e-10
        assert abs(float(total.values) - (label_ce + lam * dom_ce + gamma * semantic)) < 1e-10
        assert np.allclose(new_state.centroids_source, updated.centroids_source, atol=1e-12)

    def test_negative_weights_rejected(self, rng):
        model = small_model()
        state = MstnState.zeros(2, model.feature.out_dim, 0.7)
        with pytest.raises(ValidationError):
            mstn_total(Tape(), model, state, rng.normal(size=(2, 2)), [0, 1],
                       rng.normal(size=(2, 2)), -1.0, 0.0)


class TestFixbiMix:
    def test_definition(self):
        x, y = fixbi_mix(np.array([[1.0, 0.0]]), [[1.0, 0.0]],
                         np.array([[0.0, 1.0]]), [[0.0, 1.0]], 0.7)
        assert np.allclose(x, [[0.7, 0.3]], atol=1e-15)
        assert np.allclose(y, [[0.7, 0.3]], atol=1e-15)

    def test_agreeing_labels_stay_one_hot(self, rng):
        labels = onehot(rng.integers(0, 3, size=5), 3)
        _, y = fixbi_mix(rng.normal(size=(5, 2)), labels, rng.normal(size=(5, 2)), labels, 0.42)
        assert np.array_equal(y, labels)

    def test_rows_sum_to_one(self, rng):
        y_s = onehot(rng.integers(0, 4, size=8), 4)
        y_t = onehot(rng.integers(0, 4, size=8), 4)
        _, y = fixbi_mix(rng.normal(size=(8, 3)), y_s, rng.normal(size=(8, 3)), y_t, 0.9)
        assert np.abs(y.sum(axis=1) - 1.0).max() < 1e-12

    def test_inputs_inside_segment(self, rng):
        x_s = rng.normal(size=(6, 3))
        x_t = rng.normal(size=(6, 3))
        x, _ = fixbi_mix(x_s, onehot(np.zeros(6, int), 2), x_t, onehot(np.zeros(6, int), 2), 0.3)
        lo, hi = np.minimum(x_s, x_t), np.maximum(x_s, x_t)
        assert (x >= lo - 1e-12).all() and (x <= hi + 1e-12).all()

    def test_ratio_range(self, rng):
        args = (np.ones((2, 2)), onehot([0, 1], 2), np.ones((2, 2)), onehot([0, 1], 2))
        with pytest.raises(ValidationError):
            fixbi_mix(*args, 0.0)
        with pytest.raises(ValidationError):
            fixbi_mix(*args, 1.0)

    def test_mismatched_sizes(self, rng):
        with pytest.raises(ValidationError):
            fixbi_mix(np.ones((2, 2)), onehot([0, 1], 2), np.ones((3, 2)), onehot([0, 1, 0], 2), 0.5)


class TestFixbiFmLoss:
    def test_perfect_prediction_gives_target_entropy(self):
        model = small_model(with_domain=False)
        zero_head(model.label)
        probs = np.array([0.3, 0.7])
        model.label.layers[-1].bias.values[...] = np.log(probs)
        y_mix = np.tile(probs, (4, 1))
        tape = Tape()
        loss = fixbi_fm_loss(tape, model, np.zeros((4, 2)), y_mix)
        entropy = -(probs * np.log(probs)).sum()
        assert abs(float(loss.values) - entropy) < 1e-12

    def test_saturated_one_hot_near_zero(self):
        model = small_model(with_domain=False)
        saturate_head(model.label, hot_class=1)
        tape = Tape()
        loss = fixbi_fm_loss(tape, model, np.zeros((3, 2)), onehot([1, 1, 1], 2))
        assert 0.0 <= float(loss.values) < 1e-10

    def test_matches_scalar_recomputation(self, rng):
        model = small_model(seed=11, with_domain=False)
        x_mix = rng.normal(size=(2, 2))
        y_mix = np.array([[0.9, 0.1], [0.2, 0.8]])
        tape = Tape()
        loss = fixbi_fm_loss(tape, model, x_mix, y_mix)
        logits = predict_probs(model, x_mix)  # probabilities; recompute from logits instead
        tape2 = Tape()
        raw = model.class_logits(tape2, x_mix, "eval").values
        assert abs(float(loss.values) - numpy_ce(raw, y_mix)) < 1e-12


class TestBidirectionalLoss:
    def test_all_below_threshold_gives_zero(self, rng):
        teacher = small_model(seed=12, with_domain=False)
        zero_head(teacher.label)  # every confidence is exactly 0.5
        student = small_model(seed=13, with_domain=False)
        tape = Tape()
        loss = bidirectional_loss(tape, teacher, student, rng.normal(size=(4, 2)), 0.9)
        assert float(loss.values) == 0.0

    def test_threshold_zero_with_identical_saturated_nets(self, rng):
        teacher = small_model(seed=14, with_domain=False)
        saturate_head(teacher.label)
        student = small_model(seed=14, with_domain=False)
        saturate_head(student.label)
        tape = Tape()
        loss = bidirectional_loss(tape, teacher, student, rng.normal(size=(4, 2)), 0.0)
        assert 0.0 <= float(loss.values) < 1e-10

    def test_single_selected_sample_uniform_student(self):
        teacher = small_model(with_domain=False, hidden=2)
        # logits = x @ W.T with W = [[10, 0], [0, 0]]: confident only at x=(1,0)
        zero_head(teacher.feature)
        teacher.feature.layers[-1].weight.values[...] = np.eye(2)
        zero_head(teacher.label)
        teacher.label.layers[-1].weight.values[...] = 0.0
        teacher.label.layers[0].weight.values[...] = np.eye(2)
        teacher.label.layers[-1].weight.values[...] = np.array([[10.0, 0.0], [0.0, 0.0]])
        student = small_model(with_domain=False)
        zero_head(student.label)  # uniform everywhere
        x_t = np.array([[1.0, 0.0], [0.0, 0.0]])
        tape = Tape()
        loss = bidirectional_loss(tape, teacher, student, x_t, 0.9)
        assert abs(float(loss.values) - LN2 / 2.0) < 1e-12

    def test_boundary_is_strict(self, rng):
        teacher = small_model(seed=15, with_domain=False)
        zero_head(teacher.label)  # confidence exactly 0.5 everywhere
        student = small_model(seed=16, with_domain=False)
        tape = Tape()
        loss = bidirectional_loss(tape, teacher, student, rng.normal(size=(3, 2)), 0.5)
        assert float(loss.values) == 0.0  # 0.5 > 0.5 is false


class TestSelfPenalization:
    def test_all_confident_gives_zero(self, rng):
        model = small_model(seed=17, with_domain=False)
        saturate_head(model.label)
        tape = Tape()
        loss = self_penalization_loss(tape, model, rng.normal(size=(5, 2)), 0.6)
        assert float(loss.values) == 0.0

    def test_single_uncertain_sample_gives_ln2_over_batch(self):
        model = small_model(with_domain=False, hidden=2)
        zero_head(model.feature)
        model.feature.layers[-1].weight.values[...] = np.eye(2)
        zero_head(model.label)
        model.label.layers[0].weight.values[...] = np.eye(2)
        model.label.layers[-1].weight.values[...] = np.array([[50.0, 0.0], [0.0, 0.0]])
        # x=(1,0): p ~ (1, 0) confident; x=(0,0): p = (0.5, 0.5) penalized
        x_t = np.array([[1.0, 0.0], [0.0, 0.0]])
        tape = Tape()
        loss = self_penalization_loss(tape, model, x_t, 0.8)
        assert abs(float(loss.values) - LN2 / 2.0) < 1e-12

    def test_monotone_in_top1_probability(self):
        def loss_at(p_top1):
            model = small_model(with_domain=False)
            zero_head(model.label)
            model.label.layers[-1].bias.values[...] = [math.log(p_top1), math.log(1 - p_top1)]
            tape = Tape()
            return float(self_penalization_loss(tape, model, np.zeros((1, 2)), 0.95).values)

        assert loss_at(0.55) < loss_at(0.6) < loss_at(0.7)

    def test_empty_selection_detaches_from_the_tape(self, rng):
        # nothing selected: the zero is a constant, so no gradient path exists
        model = small_model(seed=18, with_domain=False)
        saturate_head(model.label)
        x_t = rng.normal(size=(4, 2))
        tape = Tape()
        params = ParamSet(model.parameters())
        params.watch_all(tape)
        loss = self_penalization_loss(tape, model, x_t, 0.6)
        assert float(loss.values) == 0.0
        assert loss.node_id is None

    def test_gradient_reaches_only_selected_rows(self, rng):
        model = small_model(seed=18, with_domain=False)
        x_t = rng.normal(size=(4, 2))
        probs = predict_probs(model, x_t)
        tau = float(np.sort(probs.max(axis=1))[2])  # selects exactly the two least confident
        tape = Tape()
        params = ParamSet(model.parameters())
        params.watch_all(tape)
        loss = self_penalization_loss(tape, model, x_t, tau)
        grads = tape.backward(loss)
        total = sum(float(np.abs(grads[t]).sum()) for _, t in params.items())
        assert float(loss.values) > 0.0
        assert total > 0.0


class TestConsistencyLoss:
    def test_identical_models_give_zero(self, rng):
        a = small_model(seed=19, with_domain=False)
        b = small_model(seed=19, with_domain=False)
        tape = Tape()
        loss = consistency_loss(tape, a, b, rng.normal(size=(6, 2)))
        assert float(loss.values) == 0.0

    def test_opposite_saturated_predictions_give_two(self):
        a = small_model(with_domain=False)
        saturate_head(a.label, hot_class=0, size=800.0)
        b = small_model(with_domain=False)
        saturate_head(b.label, hot_class=1, size=800.0)
        tape = Tape()
        loss = consistency_loss(tape, a, b, np.zeros((1, 2)))
        assert abs(float(loss.values) - 2.0) < 1e-12

    def test_symmetric_and_matches_recomputation(self, rng):
        a = small_model(seed=20, with_domain=False)
        b = small_model(seed=21, with_domain=False)
        x = rng.normal(size=(5, 2))
        tape = Tape()
        ab = float(consistency_loss(tape, a, b, x).values)
        ba = float(consistency_loss(tape, b, a, x).values)
        assert ab == ba
        p = predict_probs(a, x)
        q = predict_probs(b, x)
        assert abs(ab - float(((p - q) ** 2).sum() / 5.0)) < 1e-12

    def test_bounded_by_two(self, rng):
        for seed in range(5):
            a = small_model(seed=seed, with_domain=False)
            b = small_model(seed=seed + 50, with_domain=False)
            tape = Tape()
            loss = consistency_loss(tape, a, b, rng.normal(size=(8, 2)) * 10)
            assert 0.0 <= float(loss.values) <= 2.0


class TestUpdateThreshold:
    def test_mean_of_constant(self):
        assert update_threshold([0.9, 0.9, 0.9]) == 0.9

    def test_upper_clamp(self):
        assert update_threshold([1.0, 1.0]) == 0.99

    def test_lower_clamp(self):
        assert update_threshold([0.2, 0.4]) == 0.5

    def test_empty_rejected(self):
        with pytest.raises(ValidationError):
            update_threshold([])


class TestDannFixbiDomainLoss:
    def test_mixed_with_alpha_one_equals_hard_source_label(self, rng):
        model = small_model(seed=22)
        x_s = rng.normal(size=(4, 2))
        x_t = rng.normal(size=(4, 2))
        tape = Tape()
        mixed = dannfixbi_domain_loss(tape, "mixed", model, x_s, x_t, 1.0, 0.5)
        # alpha = 1: the "mixed" batch is the source batch with source labels
        tape2 = Tape()
        feats = model.feature.forward(tape2, x_s, "train")
        logits = model.domain.forward(tape2, tape2.grad_reverse(feats, 0.5), "train")
        hard = tape2.softmax_cross_entropy(logits, onehot(np.zeros(4, int), 2))
        assert abs(float(mixed.values) - float(hard.values)) < 1e-12

    def test_uniform_head_gives_ln2_for_any_alpha(self, rng):
        model = small_model(seed=23)
        zero_head(model.domain)
        x = rng.normal(size=(3, 2))
        for alpha in (0.1, 0.5, 0.9):
            tape = Tape()
            loss = dannfixbi_domain_loss(tape, "mixed", model, x, x + 1.0, alpha, 1.0)
            assert abs(float(loss.values) - LN2) < 1e-12

    def test_separate_equals_dann_domain_term(self, rng):
        model = small_model(seed=24)
        x_s = rng.normal(size=(4, 2))
        x_t = rng.normal(size=(5, 2))
        tape = Tape()
        sep = dannfixbi_domain_loss(tape, "separate", model, x_s, x_t, 0.9, 1.0)
        tape2 = Tape()
        ref = dann_loss(tape2, model, x_s, np.zeros(4, int), x_t, 1.0)
        assert abs(float(sep.values) - float(ref.domain.values)) < 1e-12

    def test_unknown_variant(self, rng):
        model = small_model(seed=25)
        with pytest.raises(ValidationError):
            dannfixbi_domain_loss(Tape(), "hybrid", model, np.ones((2, 2)), np.ones((2, 2)), 0.5)


class TestDannFixbiTotal:
    def test_gate_closed_excludes_coupling_terms(self):
        tape = Tape()
        c = tape.constant
        total = dannfixbi_total(tape, epoch=3, warmup_k=5, fm=c(1.0), sp=c(2.0),
                                dom=c(10.0), beta=1.0, gamma=0.5)
        assert float(total.values) == 1.0 + 2.0 + 0.5 * 10.0

    def test_gate_closed_rejects_built_coupling_terms(self):
        tape = Tape()
        c = tape.constant
        with pytest.raises(ValidationError):
            dannfixbi_total(tape, epoch=3, warmup_k=5, fm=c(1.0), sp=c(1.0), bim=c(1.0))

    def test_unit_components_after_warmup_sum_to_five(self):
        tape = Tape()
        c = tape.constant
        total = dannfixbi_total(tape, epoch=6, warmup_k=5, fm=c(1.0), sp=c(1.0),
                                bim=c(1.0), cr=c(1.0), dom=c(1.0))
        assert float(total.values) == 5.0

    def test_gamma_zero_equals_pure_fixbi_objective(self):
        tape = Tape()
        c = tape.constant
        with_dom = dannfixbi_total(tape, 6, 5, c(1.5), c(0.5), c(0.25), c(0.25),
                                   dom=c(9.0), gamma=0.0)
        without = dannfixbi_total(tape, 6, 5, c(1.5), c(0.5), c(0.25), c(0.25))
        assert float(with_dom.values) == float(without.values)


class TestPeerSymmetry:
    def test_mirrored_losses_on_swapped_roles(self, rng):
        m1 = small_model(seed=30, with_domain=False)
        m2 = small_model(seed=31, with_domain=False)
        x_s = rng.normal(size=(6, 2))
        y_s = onehot(rng.integers(0, 2, size=6), 2)
        x_t = rng.normal(size=(6, 2))
        lam1, lam2 = 0.9, 0.7
        tau1, tau2 = 0.8, 0.75

        def peer_parts(sdm, lam_sd, tau_sd, tdm, lam_td, tau_td):
            parts = {}
            for name, model, lam, tau, peer, peer_tau in (
                ("a", sdm, lam_sd, tau_sd, tdm, tau_td),
                ("b", tdm, lam_td, tau_td, sdm, tau_sd),
            ):
                pseudo = onehot(predict_probs(model, x_t).argmax(axis=1), 2)
                x_mix, y_mix = fixbi_mix(x_s, y_s, x_t, pseudo, lam)
                tape = Tape()
                parts[f"{name}_fm"] = float(fixbi_fm_loss(tape, model, x_mix, y_mix).values)
                parts[f"{name}_sp"] = float(self_penalization_loss(tape, model, x_t, tau).values)
                parts[f"{name}_bim"] = float(bidirectional_loss(tape, peer, model, x_t, peer_tau).values)
                parts[f"{name}_cr"] = float(consistency_loss(tape, model, peer, x_mix).values)
            return parts

        forward = peer_parts(m1, lam1, tau1, m2, lam2, tau2)
        mirrored = peer_parts(m2, lam2, tau2, m1, lam1, tau1)
        for key in ("fm", "sp", "bim", "cr"):
            assert forward[f"a_{key}"] == mirrored[f"b_{key}"]
            assert forward[f"b_{key}"] == mirrored[f"a_{key}"]


def test_pseudo_labels_invariant_under_row_rescale_and_shift(rng):
    logits = rng.normal(size=(10, 4))
    scales = rng.uniform(0.5, 3.0, size=(10, 1))
    shifts = rng.normal(size=(10, 1))
    assert np.array_equal(logits.argmax(axis=1), (logits * scales + shifts).argmax(axis=1))


@pytest.fixture(scope="module")
def pair():
    return make_moons_pair(60, 0.1, 30.0, seed=3)


class TestTrain:

    def test_zero_epochs_gives_initial_accuracy_only(self, pair):
        plan = plan_batches("proportional", 60, 60, 16)
        result = train("source_only", pair, SourceOnlyConfig(epochs=0),
                       OptimSpec(scheduler="none"), plan, seed=0)
        assert len(result.epoch_accuracy) == 1
        assert result.final_accuracy == result.epoch_accuracy[0]

    def test_same_seed_bitwise_identical(self, pair):
        plan = plan_batches("proportional", 60, 60, 16)
        cfg = DannConfig(lambda_grl=1.0, lambda_ramp="sigmoid", epochs=3)
        a = train("dann", pair, cfg, OptimSpec(scheduler="cosine", lr=0.05), plan, seed=5)
        b = train("dann", pair, cfg, OptimSpec(scheduler="cosine", lr=0.05), plan, seed=5)
        assert a == b

    def test_different_seeds_differ(self, pair):
        plan = plan_batches("proportional", 60, 60, 16)
        cfg = SourceOnlyConfig(epochs=3)
        a = train("source_only", pair, cfg, OptimSpec(scheduler="none"), plan, seed=1)
        b = train("source_only", pair, cfg, OptimSpec(scheduler="none"), plan, seed=2)
        assert a.epoch_accuracy != b.epoch_accuracy

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")  # intentional overflow
    def test_nan_abort_names_the_term(self, pair):
        plan = plan_batches("proportional", 60, 60, 16)
        huge = OptimSpec(scheduler="none", lr=1e30, momentum=0.9)
        with pytest.raises(NanLossError, match="loss term '"):
            train("source_only", pair, SourceOnlyConfig(epochs=5), huge, plan, seed=0)

    def test_fixbi_family_requires_concat_plan(self, pair):
        plan = plan_batches("proportional", 60, 60, 16)
        with pytest.raises(ValidationError):
            train("fixbi", pair, FixbiConfig(epochs=1, warmup_k=0),
                  OptimSpec(scheduler="none"), plan, seed=0)

    def test_unknown_method_rejected(self, pair):
        plan = plan_batches("proportional", 60, 60, 16)
        with pytest.raises(ValidationError):
            train("cyclegan", pair, SourceOnlyConfig(epochs=1),
                  OptimSpec(scheduler="none"), plan, seed=0)

    def test_fixbi_runs_and_thresholds_stay_clamped(self, pair):
        plan = plan_batches("concat", 60, 60, 16)
        cfg = FixbiConfig(epochs=3, warmup_k=1)
        result = train("fixbi", pair, cfg, OptimSpec(scheduler="none", lr=0.01), plan, seed=0)
        assert len(result.epoch_accuracy) == 4
        assert all(0.0 <= a <= 100.0 for a in result.epoch_accuracy)

    def test_mstn_runs(self, pair):
        plan = plan_batches("proportional", 60, 60, 16)
        cfg = MstnConfig(lambda_dc=0.5, gamma_sm=0.2, ema=0.7, epochs=2)
        result = train("mstn", pair, cfg, OptimSpec(scheduler="custom", lr=0.01), plan, seed=0)
        assert len(result.epoch_accuracy) == 3

    def test_dann_fixbi_mixed_variant_runs(self, pair):
        plan = plan_batches("concat", 60, 60, 16)
        cfg = DannFixbiConfig(variant="mixed", epochs=2, warmup_k=1)
        result = train("dann_fixbi", pair, cfg, OptimSpec(scheduler="none", lr=0.01), plan, seed=0)
        assert len(result.epoch_accuracy) == 3

    def test_warmup_gate_skips_coupling_terms(self, pair):
        from udalab.methods.configs import ArchConfig
        from udalab.methods.train import _RUNNERS

        runner = _RUNNERS["fixbi"](pair, FixbiConfig(epochs=4, warmup_k=2), ArchConfig(), 0, 2)
        params = runner.params()
        x_s = pair.source.inputs[:8]
        y_s = pair.source.labels[:8]
        x_t = pair.target.inputs[:8]
        tape = Tape()
        params.watch_all(tape)
        _, parts = runner.step(tape, x_s, y_s, x_t, epoch=2, progress=0.1)
        assert not any(k.endswith("_bim") or k.endswith("_cr") for k in parts)
        tape = Tape()
        params.watch_all(tape)
        _, parts = runner.step(tape, x_s, y_s, x_t, epoch=3, progress=0.6)
        assert any(k.endswith("_bim") for k in parts)
        assert any(k.endswith("_cr") for k in parts)
