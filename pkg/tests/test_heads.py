import dataclasses

import numpy as np
import pytest

from mrparse import heads
from oracles import finite_difference, relative_error

TOLERANCE = 1e-5
DIM, CLASSES, COMPONENTS = 5, 7, 3


def random_distribution(rng, size):
    return rng.dirichlet(np.ones(size))


class TestMoS:
    def test_sums_to_one(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            params = heads.init_mos(rng, DIM, CLASSES, COMPONENTS, 0.5)
            probs = heads.mos_distribution(rng.normal(size=DIM), params)
            assert abs(probs.sum() - 1.0) < 1e-12
            assert (probs > 0).all()

    def test_single_component_is_softmax(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            params = heads.init_mos(rng, DIM, CLASSES, 1, 0.5)
            h = rng.normal(size=DIM)
            probs = heads.mos_distribution(h, params)
            reference = heads.softmax(
                np.tanh(params.proj_w[0] @ h + params.proj_b[0]) @ params.out_w
                + params.out_b)
            assert np.abs(probs - reference).max() < 1e-12

    def test_gate_underflow_guard(self):
        rng = np.random.default_rng(2)
        params = heads.init_mos(rng, DIM, CLASSES, 2, 0.5)
        params.gate_b[:] = -1e9
        with pytest.raises(heads.HeadError):
            heads.mos_distribution(rng.normal(size=DIM), params)

    def test_gradient_wrt_h(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            params = heads.init_mos(rng, DIM, CLASSES, COMPONENTS, 0.5)
            h = rng.normal(size=DIM)
            target = random_distribution(rng, CLASSES)
            _, dh, _ = heads.label_head_loss(h, params, target, 2.0)
            numeric = finite_difference(
                lambda x: heads.label_head_loss(x, params, target, 2.0)[0], h)
            assert relative_error(dh, numeric) < TOLERANCE

    @pytest.mark.parametrize("field", ["proj_w", "proj_b", "gate_w", "gate_b",
                                       "out_w", "out_b"])
    def test_gradient_wrt_params(self, field):
        rng = np.random.default_rng(hash(field) % 2**32)
        for _ in range(20):
            params = heads.init_mos(rng, DIM, CLASSES, COMPONENTS, 0.5)
            h = rng.normal(size=DIM)
            target = random_distribution(rng, CLASSES)
            _, _, grads = heads.label_head_loss(h, params, target, 2.0)

            def loss_at(value):
                return heads.label_head_loss(
                    h, dataclasses.replace(params, **{field: value}), target, 2.0)[0]

            numeric = finite_difference(loss_at, getattr(params, field))
            assert relative_error(getattr(grads, field), numeric) < TOLERANCE

    def test_batch_matches_single(self):
        rng = np.random.default_rng(4)
        params = heads.init_mos(rng, DIM, CLASSES, COMPONENTS, 0.5)
        h = rng.normal(size=(6, DIM))
        batch, cache = heads.mos_forward_batch(h, params)
        for i in range(6):
            single, _ = heads.mos_forward(h[i], params)
            assert np.abs(batch[i] - single).max() < 1e-14
        dprobs = rng.normal(size=batch.shape)
        grads_b, dh_b = heads.mos_backward_batch(cache, dprobs)
        total = {f: np.zeros_like(getattr(params, f)) for f in
                 ("proj_w", "proj_b", "gate_w", "gate_b", "out_w", "out_b")}
        for i in range(6):
            _, c = heads.mos_forward(h[i], params)
            g, dh_i = heads.mos_backward(c, dprobs[i])
            assert np.abs(dh_b[i] - dh_i).max() < 1e-12
            for f in total:
                total[f] += getattr(g, f)
        for f in total:
            assert np.abs(total[f] - getattr(grads_b, f)).max() < 1e-12


class TestLabelLoss:
    def test_gamma_zero_is_cross_entropy(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            pred = random_distribution(rng, CLASSES)
            target = random_distribution(rng, CLASSES)
            loss, _ = heads.label_loss(pred, target, 0.0)
            reference = float(-(target * np.log(pred)).sum())
            assert abs(loss - reference) < 1e-12

    def test_perfect_one_hot_zero_loss(self):
        one_hot = np.zeros(CLASSES)
        one_hot[2] = 1.0
        loss, _ = heads.label_loss(one_hot, one_hot, 2.0)
        assert loss == 0.0

    def test_focal_downweights_easy_examples(self):
        pred = np.array([0.9, 0.05, 0.05])
        target = np.array([1.0, 0.0, 0.0])
        plain, _ = heads.label_loss(pred, target, 0.0)
        focal, _ = heads.label_loss(pred, target, 2.0)
        assert focal < plain

    def test_gradient_wrt_pred(self):
        # finite differences run on the raw focal formula, which extends the
        # loss smoothly off the probability simplex; tempered softmax keeps
        # components away from the high-curvature region near zero
        rng = np.random.default_rng(6)
        for _ in range(20):
            pred = heads.softmax(0.7 * rng.normal(size=CLASSES))
            target = heads.softmax(0.7 * rng.normal(size=CLASSES))
            _, dpred = heads.label_loss(pred, target, 2.0)
            numeric = finite_difference(lambda p: _raw_focal(p, target, 2.0), pred)
            assert relative_error(dpred, numeric) < TOLERANCE

    def test_validation_errors(self):
        good = np.full(4, 0.25)
        with pytest.raises(heads.ValidationError):
            heads.label_loss(np.array([0.5, 0.9]), np.array([0.5, 0.5]), 0.0)
        with pytest.raises(heads.ValidationError):
            heads.label_loss(good, np.array([0.7, 0.7, -0.2, -0.2]), 0.0)


def _raw_focal(pred, target, gamma):
    entropy = float(-(target * np.log(np.maximum(pred, 1e-300))).sum())
    p_t = float((target * pred).sum())
    return max(1.0 - p_t, 0.0) ** gamma * entropy


class TestAnchorHead:
    def test_zero_params_give_half(self):
        u = np.zeros((1, DIM + 1, DIM + 1))
        probs, _ = heads.anchor_head(np.ones((3, DIM)), np.ones((4, DIM)), u)
        assert np.abs(probs - 0.5).max() == 0.0

    def test_perfect_confidence_geomean_one(self):
        from mrparse.matcher import geomean_anchor
        assert geomean_anchor([1.0, 1.0, 1.0]) == pytest.approx(1.0)

    def test_gradients(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            u = rng.normal(0, 0.5, (1, DIM + 1, DIM + 1))
            queries = rng.normal(size=(3, DIM))
            tokens = rng.normal(size=(4, DIM))
            targets = rng.integers(0, 2, (3, 4)).astype(float)
            cache = heads.anchor_head(queries, tokens, u)[1]
            _, du, dq, dt = heads.anchor_loss(cache, targets)

            def loss_of(u_=None, q_=None, t_=None):
                c = heads.anchor_head(q_ if q_ is not None else queries,
                                      t_ if t_ is not None else tokens,
                                      u_ if u_ is not None else u)[1]
                return heads.anchor_loss(c, targets)[0]

            assert relative_error(du, finite_difference(
                lambda x: loss_of(u_=x), u)) < TOLERANCE
            assert relative_error(dq, finite_difference(
                lambda x: loss_of(q_=x), queries)) < TOLERANCE
            assert relative_error(dt, finite_difference(
                lambda x: loss_of(t_=x), tokens)) < TOLERANCE

    def test_query_mask_excludes_rows(self):
        rng = np.random.default_rng(8)
        u = rng.normal(0, 0.5, (1, DIM + 1, DIM + 1))
        queries = rng.normal(size=(3, DIM))
        tokens = rng.normal(size=(4, DIM))
        targets = np.zeros((3, 4))
        mask = np.array([True, False, True])
        cache = heads.anchor_head(queries, tokens, u)[1]
        _, _, dq, _ = heads.anchor_loss(cache, targets, mask)
        assert np.abs(dq[1]).max() == 0.0

    def test_all_rows_masked_zero_loss_and_grads(self):
        rng = np.random.default_rng(9)
        u = rng.normal(0, 0.5, (1, DIM + 1, DIM + 1))
        cache = heads.anchor_head(rng.normal(size=(2, DIM)),
                                  rng.normal(size=(3, DIM)), u)[1]
        loss, du, dq, dt = heads.anchor_loss(cache, np.zeros((2, 3)),
                                             np.zeros(2, dtype=bool))
        assert loss == 0.0
        assert np.abs(du).max() == 0.0
        assert np.abs(dq).max() == 0.0
        assert np.abs(dt).max() == 0.0


class TestEdgeHeads:
    def test_presence_target_convention(self):
        # 2 matched nodes, one gold edge a->b: target [[0, 1], [0, 0]]
        presence = np.zeros((2, 2))
        presence[0, 1] = 1.0
        assert presence.tolist() == [[0.0, 1.0], [0.0, 0.0]]

    def test_multilabel_mode_targets(self):
        rng = np.random.default_rng(9)
        u = rng.normal(0, 0.5, (3, DIM + 1, DIM + 1))
        states = rng.normal(size=(2, DIM))
        logits, cache = heads.biaffine_forward(states, states, u)
        loss, _, _ = heads.edge_label_loss(logits, cache, [(0, 1)], [{0, 2}],
                                           multilabel=True)
        z = logits[:, 0, 1]
        t = np.array([1.0, 0.0, 1.0])
        expected = float((heads.softplus(z) - t * z).sum()) / 3
        assert loss == pytest.approx(expected)

    @pytest.mark.parametrize("head", ["presence", "label", "attribute"])
    def test_gradients(self, head):
        rng = np.random.default_rng(abs(hash(head)) % 2**32)
        classes = 1 if head == "presence" else 4
        for _ in range(20):
            u = rng.normal(0, 0.5, (classes, DIM + 1, DIM + 1))
            states = rng.normal(size=(3, DIM))
            presence = rng.integers(0, 2, (3, 3)).astype(float)
            pairs = [(0, 1), (2, 0)]
            labels = [int(rng.integers(classes)) for _ in pairs]

            def loss_of(u_, s_):
                logits, cache = heads.biaffine_forward(s_, s_, u_)
                if head == "presence":
                    return heads.edge_presence_loss(logits, cache, presence)
                if head == "label":
                    return heads.edge_label_loss(logits, cache, pairs, labels)
                return heads.edge_attribute_loss(logits, cache, pairs, labels)

            _, du, dstates = loss_of(u, states)
            assert relative_error(du, finite_difference(
                lambda x: loss_of(x, states)[0], u)) < TOLERANCE
            assert relative_error(dstates, finite_difference(
                lambda x: loss_of(u, x)[0], states)) < TOLERANCE


class TestPropertyHead:
    def test_zero_weights_half(self):
        probs, _ = heads.property_head(np.ones((4, DIM)), np.zeros(DIM), 0.0)
        assert np.abs(probs - 0.5).max() == 0.0

    def test_gradients(self):
        rng = np.random.default_rng(10)
        for _ in range(20):
            w = rng.normal(size=DIM)
            b = float(rng.normal())
            states = rng.normal(size=(4, DIM))
            targets = rng.integers(0, 2, 4).astype(float)
            _, dw, db, dstates = heads.property_loss(states, w, b, targets)
            assert relative_error(dw, finite_difference(
                lambda x: heads.property_loss(states, x, b, targets)[0], w)) < TOLERANCE
            assert relative_error(dstates, finite_difference(
                lambda x: heads.property_loss(x, w, b, targets)[0], states)) < TOLERANCE
            numeric_b = finite_difference(
                lambda x: heads.property_loss(states, w, float(x), targets)[0],
                np.array(b))
            assert relative_error(np.array(db), numeric_b) < TOLERANCE

    def test_multiclass_families(self):
        rng = np.random.default_rng(11)
        states = rng.normal(size=(3, DIM))
        families = [(rng.normal(size=(DIM, k)), rng.normal(size=k))
                    for k in (2, 3, 5)]
        out = heads.property_head_multiclass(states, families)
        assert len(out) == 3
        for probs, (_, b) in zip(out, families):
            assert probs.shape == (3, len(b))
            assert np.abs(probs.sum(axis=-1) - 1.0).max() < 1e-12


class TestTopHead:
    def test_single_node_probability_one(self):
        rng = np.random.default_rng(12)
        probs = heads.top_head(rng.normal(size=(1, DIM)), rng.normal(size=DIM), 0.0)
        assert probs[0] == pytest.approx(1.0)

    def test_uniform_logits(self):
        probs = heads.top_head(np.zeros((5, DIM)), np.zeros(DIM), 3.0)
        assert np.abs(probs - 0.2).max() < 1e-12

    def test_empty_errors(self):
        with pytest.raises(heads.HeadError):
            heads.top_head(np.zeros((0, DIM)), np.zeros(DIM), 0.0)

    def test_gradients(self):
        rng = np.random.default_rng(13)
        for _ in range(20):
            w = rng.normal(size=DIM)
            states = rng.normal(size=(4, DIM))
            gold = int(rng.integers(4))
            _, dw, _, dstates = heads.top_loss(states, w, 0.0, gold)
            assert relative_error(dw, finite_difference(
                lambda x: heads.top_loss(states, x, 0.0, gold)[0], w)) < TOLERANCE
            assert relative_error(dstates, finite_difference(
                lambda x: heads.top_loss(x, w, 0.0, gold)[0], states)) < TOLERANCE


class TestLossBundle:
    def test_plain_sum(self):
        bundle = heads.LossBundle(losses={"a": 1.0, "b": 2.0},
                                  weights={"a": 1.0, "b": 1.0})
        assert heads.total_loss(bundle) == 3.0

    def test_weighted_single_task(self):
        bundle = heads.LossBundle(losses={"a": 2.0}, weights={"a": 0.5})
        assert heads.total_loss(bundle) == 1.0

    def test_zero_losses(self):
        bundle = heads.LossBundle(losses={"a": 0.0, "b": 0.0},
                                  weights={"a": 3.0, "b": 4.0})
        assert heads.total_loss(bundle) == 0.0

    def test_missing_weight_rejected(self):
        with pytest.raises(heads.HeadError):
            heads.LossBundle(losses={"a": 1.0}, weights={})
