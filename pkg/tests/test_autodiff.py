"""Engine-level checks: closed-form values, finite-difference oracles, invariants."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from graftnet import autodiff as ad
from graftnet.autodiff import LstmParams, Value


def make_lstm(in_dim, hidden, rng, dtype=np.float64, scale=0.5):
    w, u, b = {}, {}, {}
    for gate in LstmParams.GATES:
        w[gate] = Value(rng.uniform(-scale, scale, (hidden, in_dim)).astype(dtype))
        u[gate] = Value(rng.uniform(-scale, scale, (hidden, hidden)).astype(dtype))
        b[gate] = Value(rng.uniform(-scale, scale, hidden).astype(dtype))
    return LstmParams(w, u, b)


def lstm_from_arrays(arrays, in_dim, hidden):
    w = {g: arrays[f"w_{g}"] for g in LstmParams.GATES}
    u = {g: arrays[f"u_{g}"] for g in LstmParams.GATES}
    b = {g: arrays[f"b_{g}"] for g in LstmParams.GATES}
    return LstmParams(w, u, b)


# ---------------------------------------------------------------------------
# linear
# ---------------------------------------------------------------------------


def test_linear_zero_weight_and_bias_gives_zero():
    x = Value(np.array([1.0, -2.0, 3.0]))
    w = Value(np.zeros((2, 3)))
    b = Value(np.zeros(2))
    out = ad.linear(x, w, b)
    assert np.array_equal(out.data, np.zeros(2))


def test_linear_identity_weight_passes_input_through():
    x = Value(np.array([0.5, -1.5, 2.0]))
    out = ad.linear(x, Value(np.eye(3)), Value(np.zeros(3)))
    assert np.array_equal(out.data, x.data)


def test_linear_shape_mismatch_raises():
    with pytest.raises(ValueError):
        ad.linear(Value(np.ones(4)), Value(np.ones((2, 3))), Value(np.ones(2)))
    with pytest.raises(ValueError):
        ad.linear(Value(np.ones(3)), Value(np.ones((2, 3))), Value(np.ones(5)))


def test_linear_gradients_match_finite_differences():
    rng = np.random.default_rng(7)
    arrays = {
        "x": rng.normal(size=3),
        "w": rng.normal(size=(3, 3)),
        "b": rng.normal(size=3),
    }

    def build(vals):
        out = ad.linear(vals["x"], vals["w"], vals["b"])
        return ad.dot(out, out)

    assert ad.finite_difference_check(build, arrays) < 1e-3


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------


def test_activation_fixed_points():
    assert ad.sigmoid(Value(np.array([0.0]))).data[0] == pytest.approx(0.5)
    assert ad.tanh(Value(np.array([0.0]))).data[0] == 0.0
    assert ad.relu(Value(np.array([-1.0]))).data[0] == 0.0


def test_sigmoid_gradient_at_zero_is_quarter():
    x = Value(np.zeros(5))
    out = ad.sigmoid(x)
    total = ad.dot(out, Value(np.ones(5)))
    total.backward()
    assert np.allclose(x.grad, 0.25)


def test_sigmoid_strictly_inside_unit_interval_for_moderate_inputs():
    x = Value(np.linspace(-10, 10, 41))
    out = ad.sigmoid(x).data
    assert np.all(out > 0.0) and np.all(out < 1.0)


@pytest.mark.parametrize("op", [ad.relu, ad.tanh, ad.sigmoid])
def test_activation_gradients_match_finite_differences(op):
    for seed in range(10):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=6)
        x = x + 0.2 * np.sign(x)  # keep relu inputs away from the kink

        def build(vals):
            out = op(vals["x"])
            return ad.dot(out, out)

        assert ad.finite_difference_check(build, {"x": x}) < 1e-3


# ---------------------------------------------------------------------------
# grouped softmax
# ---------------------------------------------------------------------------


def test_grouped_softmax_singleton_group_is_one():
    out = ad.grouped_softmax(Value(np.array([3.7])), [[0]])
    assert out.data[0] == pytest.approx(1.0)


def test_grouped_softmax_closed_form():
    out = ad.grouped_softmax(Value(np.array([math.log(2.0), 0.0])), [[0, 1]])
    assert np.allclose(out.data, [2.0 / 3.0, 1.0 / 3.0])


def test_grouped_softmax_equal_scores_split_evenly():
    out = ad.grouped_softmax(Value(np.full(4, 1.3)), [[0, 1, 2, 3]])
    assert np.allclose(out.data, 0.25)


def test_grouped_softmax_respects_group_boundaries():
    scores = Value(np.array([1.0, 2.0, 5.0, -1.0, 0.0]))
    out = ad.grouped_softmax(scores, [[0, 1], [2, 3, 4]])
    assert out.data[0] + out.data[1] == pytest.approx(1.0, abs=1e-9)
    assert out.data[2] + out.data[3] + out.data[4] == pytest.approx(1.0, abs=1e-9)


def test_grouped_softmax_rejects_bad_partitions():
    with pytest.raises(ValueError):
        ad.grouped_softmax(Value(np.ones(3)), [[0, 1]])  # missing index
    with pytest.raises(ValueError):
        ad.grouped_softmax(Value(np.ones(2)), [[0, 1], []])  # empty group
    with pytest.raises(ValueError):
        ad.grouped_softmax(Value(np.ones(2)), [[0, 1], [1]])  # duplicate


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-30, 30), min_size=1, max_size=8),
       st.floats(-50, 50))
def test_grouped_softmax_sums_to_one_and_is_shift_invariant(scores, shift):
    base = np.array(scores)
    out = ad.grouped_softmax(Value(base), [list(range(len(scores)))]).data
    shifted = ad.grouped_softmax(Value(base + shift), [list(range(len(scores)))]).data
    assert out.sum() == pytest.approx(1.0, abs=1e-9)
    assert np.allclose(out, shifted, atol=1e-9)


def test_grouped_softmax_gradient_matches_finite_differences():
    rng = np.random.default_rng(3)
    scores = rng.normal(size=6)
    groups = [[0, 2], [1, 3, 4], [5]]
    coeff = rng.normal(size=6)

    def build(vals):
        out = ad.grouped_softmax(vals["s"], groups)
        return ad.dot(out, Value(coeff.copy()))

    assert ad.finite_difference_check(build, {"s": scores}) < 1e-3


# ---------------------------------------------------------------------------
# sequence encoder
# ---------------------------------------------------------------------------


def test_seq_encode_zero_parameters_give_zero_states():
    # all-zero weights: gates sit at 0.5, the candidate cell at 0, so every
    # hidden state collapses to the zero vector
    zeros = {f"{k}_{g}": np.zeros((3, 3) if k in "wu" else 3)
             for k in ("w", "u", "b") for g in LstmParams.GATES}
    cell = lstm_from_arrays({k: Value(v) for k, v in zeros.items()}, 3, 3)
    tokens = [Value(np.array([1.0, 2.0, 3.0])), Value(np.array([-1.0, 0.5, 0.0]))]
    out = ad.seq_encode(tokens, cell)
    assert np.array_equal(out.data, np.zeros((2, 3)))


def test_seq_encode_output_shape():
    rng = np.random.default_rng(0)
    cell = make_lstm(4, 3, rng)
    tokens = [Value(rng.normal(size=4)) for _ in range(5)]
    out = ad.seq_encode(tokens, cell)
    assert out.data.shape == (5, 3)


def test_seq_encode_rejects_empty_sequence():
    rng = np.random.default_rng(0)
    cell = make_lstm(2, 2, rng)
    with pytest.raises(ValueError):
        ad.seq_encode([], cell)


def test_seq_encode_gradients_match_finite_differences():
    rng = np.random.default_rng(11)
    arrays = {"x": rng.normal(size=(4, 3))}
    for gate in LstmParams.GATES:
        arrays[f"w_{gate}"] = rng.uniform(-0.5, 0.5, (2, 3))
        arrays[f"u_{gate}"] = rng.uniform(-0.5, 0.5, (2, 2))
        arrays[f"b_{gate}"] = rng.uniform(-0.5, 0.5, 2)
    coeff = rng.normal(size=2)

    def build(vals):
        cell = lstm_from_arrays(vals, 3, 2)
        out = ad.seq_encode(vals["x"], cell)
        return ad.dot(ad.sum_rows(out), Value(coeff.copy()))

    assert ad.finite_difference_check(build, arrays) < 1e-3


# ---------------------------------------------------------------------------
# binary cross-entropy
# ---------------------------------------------------------------------------


def test_bce_half_probability_is_ln2():
    loss = ad.bce_loss(Value(np.array([0.5])), [1.0])
    assert float(loss.data) == pytest.approx(math.log(2.0), abs=1e-6)


def test_bce_confident_correct_prediction_approaches_zero():
    loss = ad.bce_loss(Value(np.array([1.0 - 1e-9])), [1.0])
    assert float(loss.data) < 1e-5


def test_bce_closed_form_pair():
    loss = ad.bce_loss(Value(np.array([0.9, 0.1])), [1.0, 0.0])
    assert float(loss.data) == pytest.approx(-math.log(0.9), abs=1e-6)


def test_bce_length_mismatch_raises():
    with pytest.raises(ValueError):
        ad.bce_loss(Value(np.array([0.5, 0.5])), [1.0])


def test_bce_gradient_matches_finite_differences():
    rng = np.random.default_rng(5)
    probs = rng.uniform(0.05, 0.95, size=6)
    labels = (rng.random(6) > 0.5).astype(float)

    def build(vals):
        return ad.bce_loss(vals["p"], labels)

    assert ad.finite_difference_check(build, {"p": probs}) < 1e-3


# ---------------------------------------------------------------------------
# backward mechanics
# ---------------------------------------------------------------------------


def test_backward_of_sum_gives_ones():
    x = Value(np.array([1.0, 2.0, 3.0]))
    loss = ad.dot(x, Value(np.ones(3)))
    loss.backward()
    assert np.array_equal(x.grad, np.ones(3))


def test_backward_leaves_detached_parameter_untouched():
    x = Value(np.ones(3))
    detached = Value(np.ones(3))
    loss = ad.dot(x, Value(np.ones(3)))
    loss.backward()
    assert detached.grad is None


def test_backward_requires_scalar():
    with pytest.raises(ValueError):
        ad.sigmoid(Value(np.ones(3))).backward()


def test_backward_accumulates_across_calls():
    x = Value(np.array([2.0]))
    first = ad.dot(x, Value(np.array([3.0])))
    first.backward()
    second = ad.dot(x, Value(np.array([4.0])))
    second.backward()
    assert x.grad[0] == pytest.approx(7.0)


def test_composite_ffn_sigmoid_matches_finite_differences():
    rng = np.random.default_rng(13)
    arrays = {
        "x": rng.normal(size=4),
        "w": rng.normal(size=(3, 4)) * 0.5,
        "b": rng.normal(size=3) * 0.5,
    }
    labels = np.array([1.0, 0.0, 1.0])

    def build(vals):
        probs = ad.sigmoid(ad.linear(vals["x"], vals["w"], vals["b"]))
        return ad.bce_loss(probs, labels)

    assert ad.finite_difference_check(build, arrays) < 1e-3


def test_every_op_passes_randomized_gradient_checks():
    # one composite touching every registered differentiable operation
    for seed in range(10):
        rng = np.random.default_rng(100 + seed)
        arrays = {
            "emb": rng.normal(size=(5, 3)),
            "w": rng.uniform(-0.5, 0.5, (3, 6)),
            "b": rng.uniform(-0.5, 0.5, 3),
            "s": rng.normal(size=2),
        }
        for gate in LstmParams.GATES:
            arrays[f"w_{gate}"] = rng.uniform(-0.5, 0.5, (3, 3))
            arrays[f"u_{gate}"] = rng.uniform(-0.5, 0.5, (3, 3))
            arrays[f"b_{gate}"] = rng.uniform(-0.5, 0.5, 3)
        labels = (rng.random(3) > 0.5).astype(float)

        def build(vals):
            tok = ad.rows(vals["emb"], [0, 2, 4])
            enc = ad.seq_encode(tok, lstm_from_arrays(vals, 3, 3))
            last = ad.row(enc, 2)
            pooled = ad.sum_rows(enc)
            gates = ad.grouped_softmax(vals["s"], [[0, 1]])
            mixed = ad.add(ad.scale(last, ad.element(gates, 0)),
                           ad.scale(pooled, ad.element(gates, 1)))
            extra = ad.add_n([ad.relu(mixed), ad.tanh(mixed), mixed])
            stacked = ad.stack_rows([mixed, extra])
            feats = ad.concat([ad.row(stacked, 0), ad.row(stacked, 1)])
            hidden = ad.tanh(ad.linear(feats, vals["w"], vals["b"]))
            probs = ad.sigmoid(ad.mul(hidden, hidden))
            return ad.bce_loss(probs, labels)

        assert ad.finite_difference_check(build, arrays) < 1e-3


def test_outputs_and_gradients_are_deterministic():
    def run():
        rng = np.random.default_rng(42)
        x = Value(rng.normal(size=5).astype(np.float32))
        w = Value(rng.normal(size=(4, 5)).astype(np.float32))
        b = Value(rng.normal(size=4).astype(np.float32))
        out = ad.sigmoid(ad.linear(x, w, b))
        loss = ad.bce_loss(out, [1, 0, 1, 0])
        loss.backward()
        return out.data.copy(), w.grad.copy()

    out1, g1 = run()
    out2, g2 = run()
    assert np.array_equal(out1, out2)
    assert np.array_equal(g1, g2)


def test_no_nan_for_large_magnitude_inputs():
    big = Value(np.array([1e3, -1e3, 500.0]))
    for op in (ad.relu, ad.tanh, ad.sigmoid):
        assert np.isfinite(op(big).data).all()
    probs = ad.sigmoid(big)
    loss = ad.bce_loss(probs, [1, 0, 1])
    assert np.isfinite(loss.data).all()
    loss.backward()
    assert np.isfinite(big.grad).all()
