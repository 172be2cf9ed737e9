import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from snnleak.errors import DomainError, StructuralError
from snnleak.neurons import (
    DecayParams,
    LayerState,
    ModelSpec,
    NeuronKind,
    decay_from_tau,
    step_layer,
    tau_from_decay,
    trace_single_neuron,
)

from oracles import simulate_scalar


def state(I, U, S):
    return LayerState(np.array(I, float), np.array(U, float), np.array(S, float))


@pytest.mark.parametrize(
    "tau,expected",
    [(14, 0.368), (28, 0.606), (70, 0.818), (140, 0.905), (420, 0.967), (700, 0.980), (1120, 0.987), (1680, 0.992)],
)
def test_decay_table(tau, expected):
    assert abs(decay_from_tau(tau, 14) - expected) <= 1e-3


def test_decay_limits():
    assert decay_from_tau(math.inf, 14) == 1.0
    assert decay_from_tau(0, 14) == 0.0
    assert tau_from_decay(decay_from_tau(140, 14), 14) == pytest.approx(140)


@pytest.mark.parametrize("tau,dt", [(-1, 14), (float("nan"), 14), (10, 0)])
def test_decay_domain_errors(tau, dt):
    with pytest.raises(DomainError):
        decay_from_tau(tau, dt)


def test_decay_params_ranges():
    with pytest.raises(DomainError):
        DecayParams([1.0], [0.5])
    with pytest.raises(DomainError):
        DecayParams([0.0], [0.0])
    with pytest.raises(StructuralError):
        DecayParams([0.0, 0.0], [0.5])


def test_lif_hand_example():
    d = DecayParams([0.0], [0.905])
    new, out = step_layer("LIF", state([0], [0.5], [0]), np.array([1.0]), None, np.array([[0.2]]), None, d)
    assert new.U[0] == pytest.approx(0.6525, abs=1e-12)
    assert out[0] == 0


@pytest.mark.parametrize("kind", list(NeuronKind))
def test_reset_zeroes_membrane(kind):
    d = DecayParams([0.5], [0.9])
    new, out = step_layer(kind, state([3.0], [1.5], [1]), np.array([1.0]), None, np.array([[5.0]]), None, d)
    assert new.U[0] == 0.0
    assert out[0] == 0


def test_if_crosses_threshold_exactly():
    d = DecayParams([0.0], [1.0])
    new, out = step_layer("IF", state([0], [0.999], [0]), np.array([1.0]), None, np.array([[0.002]]), None, d)
    assert new.U[0] == pytest.approx(1.001)
    assert out[0] == 1


def test_spike_at_threshold():
    d = DecayParams([0.0], [1.0])
    _, out = step_layer("IF", state([0], [0.5], [0]), np.array([1.0]), None, np.array([[0.5]]), None, d)
    assert out[0] == 1


def test_if_pins_decays():
    # IF ignores any stored alpha/beta
    d = DecayParams([0.7], [0.3])
    new, _ = step_layer("IF", state([5.0], [0.5], [0]), np.array([0.0]), None, np.array([[1.0]]), None, d)
    assert new.I[0] == 0.0 and new.U[0] == 0.5


def test_cuba_matches_scalar_oracle():
    rng = np.random.default_rng(3)
    n, c, T = 4, 6, 20
    W = rng.normal(0, 0.8, (n, c))
    V = rng.normal(0, 0.5, (n, n))
    x = (rng.random((T, c)) < 0.4).astype(float)
    alpha, beta = rng.uniform(0.2, 0.9, n), rng.uniform(0.5, 0.99, n)
    d = DecayParams(alpha, beta)
    st_ = LayerState.zeros(n)
    I, U, S = [], [], []
    for t in range(T):
        st_, _ = step_layer("CUBA_LIF", st_, x[t], st_.S, W, V, d)
        I.append(st_.I)
        U.append(st_.U)
        S.append(st_.S)
    # oracle with a zero-weight readout
    ref = simulate_scalar(x.tolist(), W.tolist(), V.tolist(), [[0.0] * n], alpha, beta, [0.0], [1.0])
    assert np.max(np.abs(np.array(I) - ref["hI"])) <= 1e-12
    assert np.max(np.abs(np.array(U) - ref["hU"])) <= 1e-12
    np.testing.assert_array_equal(np.array(S), ref["hS"])
    assert np.array(S).sum() > 0


def run_layer(kind, d, W, V, x):
    n = W.shape[0]
    s = LayerState.zeros(n, x.shape[0])
    out = []
    for t in range(x.shape[1]):
        s, _ = step_layer(kind, s, x[:, t], s.S if V is not None else None, W, V, d)
        out.append((s.I.copy(), s.U.copy(), s.S.copy()))
    return out


def random_instance(rng):
    n, c, T, B = rng.integers(1, 8), rng.integers(1, 8), rng.integers(1, 15), rng.integers(1, 4)
    W = rng.normal(0, 1, (n, c))
    V = rng.normal(0, 1, (n, n)) if rng.random() < 0.5 else None
    x = (rng.random((B, T, c)) < 0.5).astype(float)
    return n, W, V, x


def test_reduction_identities():
    rng = np.random.default_rng(11)
    for _ in range(100):
        n, W, V, x = random_instance(rng)
        beta = rng.uniform(0.1, 1.0, n)
        cuba = run_layer("CUBA_LIF", DecayParams(np.zeros(n), beta), W, V, x)
        lif = run_layer("LIF", DecayParams(rng.uniform(0, 0.9, n), beta), W, V, x)
        for a, b in zip(cuba, lif):
            for p, q in zip(a, b):
                np.testing.assert_array_equal(p, q)
        lif1 = run_layer("LIF", DecayParams(np.zeros(n), np.ones(n)), W, V, x)
        iff = run_layer("IF", DecayParams(np.zeros(n), beta), W, V, x)
        for a, b in zip(lif1, iff):
            for p, q in zip(a, b):
                np.testing.assert_array_equal(p, q)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from(list(NeuronKind)))
def test_spikes_are_threshold_of_membrane(seed, kind):
    rng = np.random.default_rng(seed)
    n, W, V, x = random_instance(rng)
    d = DecayParams(rng.uniform(0, 0.95, n), rng.uniform(0.05, 1.0, n))
    prev_S = np.zeros((x.shape[0], n))
    for I, U, S in run_layer(kind, d, W, V, x):
        np.testing.assert_array_equal(S, (U >= 1.0).astype(float))
        assert np.all(U[prev_S == 1] == 0.0)
        prev_S = S


@settings(max_examples=30, deadline=None)
@given(st.floats(-5, 0.99), st.floats(-3, 3), st.floats(0.05, 1.0), st.sampled_from(list(NeuronKind)))
def test_zero_input_membrane(u0, i0, beta, kind):
    d = DecayParams([0.0], [beta])
    s = state([0.0], [u0], [0])
    mags = [abs(u0)]
    for _ in range(10):
        s, _ = step_layer(kind, s, np.zeros(1), None, np.zeros((1, 1)), None, d)
        mags.append(abs(s.U[0]))
    if kind is NeuronKind.IF:
        assert all(m == abs(u0) for m in mags)
    else:
        assert all(b <= a for a, b in zip(mags, mags[1:]))


def test_structural_errors():
    d = DecayParams(np.zeros(2), np.ones(2))
    with pytest.raises(StructuralError):
        step_layer("IF", LayerState.zeros(2), np.zeros(3), None, np.zeros((2, 4)), None, d)
    with pytest.raises(StructuralError):
        step_layer("IF", LayerState.zeros(3), np.zeros(4), None, np.zeros((3, 4)), None, d)
    with pytest.raises(StructuralError):
        step_layer("IF", LayerState.zeros(2), np.zeros(4), np.zeros(2), np.zeros((2, 4)), None, d)


def test_trace_if_no_input():
    tr = trace_single_neuron("IF", np.zeros(10), 1.0, DecayParams([0.0], [1.0]))
    assert np.all(tr.U == 0)


def test_trace_lif_geometric():
    tr = trace_single_neuron("LIF", [1, 0, 0, 0], 0.5, DecayParams([0.0], [0.5]))
    np.testing.assert_allclose(tr.U, [0.5, 0.25, 0.125, 0.0625])


def test_trace_cuba_shape():
    d = DecayParams.from_tau(1, 140, 28, 14)
    tr = trace_single_neuron("CUBA_LIF", [1] + [0] * 29, 0.2, d)
    assert np.all(np.diff(tr.I) < 0)  # exponential synaptic decay
    peak = int(np.argmax(tr.U))
    assert 0 < peak < 29
    assert np.all(np.diff(tr.U[: peak + 1]) > 0) and np.all(np.diff(tr.U[peak:]) < 0)


def test_trace_csv_columns():
    text = trace_single_neuron("IF", [1, 1], 0.6, DecayParams([0.0], [1.0])).to_csv()
    lines = text.splitlines()
    assert lines[0] == "step,I,U,S"
    assert lines[2].endswith(",1")


def test_model_spec_pins():
    m = ModelSpec("LIF", DecayParams([0.5], [0.7]))
    assert m.alpha[0] == 0.0 and m.beta[0] == 0.7
    m = ModelSpec("if", DecayParams([0.5], [0.7]))
    assert m.kind is NeuronKind.IF and m.beta[0] == 1.0
