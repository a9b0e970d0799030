import numpy as np
import pytest

from thermopinn.errors import ConfigurationError, NumericError
from thermopinn.network import (InputNormalization, ModelState, ParamSet, build_model, forward_jet, init_params,
                                load_checkpoint, save_checkpoint)


def test_cube_architecture_shapes():
    p = init_params(4, 15, "swish", seed=7)
    assert p.widths == [4, 15, 15, 15, 15, 1]
    assert [w.shape for w in p.weights] == [(4, 15), (15, 15), (15, 15), (15, 15), (15, 1)]
    assert all(not b.any() for b in p.biases)


def test_init_deterministic():
    a = init_params(4, 15, "swish", seed=7)
    b = init_params(4, 15, "swish", seed=7)
    assert np.array_equal(a.flat(), b.flat())
    assert not np.array_equal(a.flat(), init_params(4, 15, "swish", seed=8).flat())


def test_parameter_count_small():
    # 4*5 + 5*5 + 5*1 weights, 5 + 5 + 1 biases
    p = init_params(2, 5, "tanh", seed=1)
    assert p.n_weights == 50
    assert p.n_biases == 11
    assert p.size == 61


def test_glorot_bound():
    p = init_params(3, 20, "tanh", seed=0)
    for w in p.weights:
        assert np.abs(w).max() <= np.sqrt(6.0 / sum(w.shape))


def test_invalid_counts():
    with pytest.raises(ConfigurationError):
        init_params(0, 5, "tanh", 0)
    with pytest.raises(ConfigurationError):
        init_params(2, 0, "tanh", 0)


def test_paramset_chain_check():
    with pytest.raises(ConfigurationError):
        ParamSet((np.zeros((4, 3)), np.zeros((2, 1))), (np.zeros(3), np.zeros(1)), "tanh")
    with pytest.raises(NumericError):
        ParamSet((np.full((4, 1), np.inf),), (np.zeros(1),), "tanh")


def test_constant_network():
    p = init_params(2, 3, "tanh", 0)
    ws = tuple(np.zeros_like(w) for w in p.weights)
    bs = (np.full(3, 0.2), np.full(3, -1.0), np.array([4.5]))
    jet = forward_jet(ParamSet(ws, bs, "tanh"), np.array([0.3, 0.1, -0.2, 0.9]))
    assert jet.value == 4.5
    assert not jet.grad.any() and not jet.hess.any()


def test_linear_layer_gradient_folds_normalization():
    w = np.array([[1.5], [-2.0], [0.25], [3.0]])
    p = ParamSet((w,), (np.array([0.1]),), "tanh")
    norm = InputNormalization.from_bounds([0, 0, 0, 0], [2.0, 1e-3, 1.0, 4.0])
    x = np.array([0.4, 2e-4, 0.9, 1.0])
    jet = forward_jet(p, x, norm=norm)
    np.testing.assert_allclose(jet.grad, w[:, 0] * norm.scale, rtol=1e-15)
    assert not jet.hess.any()
    assert jet.value == pytest.approx(float(norm.apply(x) @ w[:, 0]) + 0.1, rel=1e-14)


@pytest.mark.parametrize("s", [1.0, 1e-5])
def test_normalization_transparency(s):
    p = init_params(3, 8, "swish", seed=5)
    lo = np.array([0.0, 0.0, 0.0, 0.0])
    hi = np.array([s, s, s, 1.0])
    norm = InputNormalization.from_bounds(lo, hi)
    # fold xi = scale*x + shift into the first layer
    W0 = norm.scale[:, None] * p.weights[0]
    b0 = p.biases[0] + norm.shift @ p.weights[0]
    folded = ParamSet((W0,) + p.weights[1:], (b0,) + p.biases[1:], p.activation)
    pts = np.random.default_rng(0).uniform(0, 1, size=(20, 4)) * hi
    a = forward_jet(p, pts, norm=norm)
    b = forward_jet(folded, pts)
    assert np.max(np.abs(a.value - b.value)) < 1e-10
    np.testing.assert_allclose(a.grad, b.grad, rtol=1e-9)


def test_normalization_maps_bounds_to_unit_interval():
    norm = InputNormalization.from_bounds([0, -1, 2, 0], [1, 1, 3, 10])
    np.testing.assert_allclose(norm.apply(np.array([[0, -1, 2, 0], [1, 1, 3, 10]])), [[-1] * 4, [1] * 4])
    with pytest.raises(ConfigurationError):
        InputNormalization(np.array([1, 0, 1, 1]), np.zeros(4))


def test_isotropic_normalization_keeps_aspect():
    # thin slab: x3 spans 1e-6 but shares the x1 scale; time is mapped on its own
    norm = InputNormalization.from_bounds([0, 0, 0, 0], [1, 0.5, 1e-6, 10], isotropic=True)
    np.testing.assert_array_equal(norm.scale, [2.0, 2.0, 2.0, 0.2])
    np.testing.assert_array_equal(norm.shift, [-1.0, -0.5, -1e-6, -1.0])
    lo, hi = np.zeros(4), np.ones(4)
    a = InputNormalization.from_bounds(lo, hi, isotropic=True)
    b = InputNormalization.from_bounds(lo, hi)
    assert np.array_equal(a.scale, b.scale) and np.array_equal(a.shift, b.shift)


def test_forward_pure():
    p = init_params(2, 5, "mish", 3)
    x = np.array([0.1, 0.2, 0.3, 0.4])
    before = p.flat().copy()
    a, b = forward_jet(p, x), forward_jet(p, x)
    assert a.value == b.value and np.array_equal(a.hess, b.hess)
    assert np.array_equal(before, p.flat())


def test_build_model_four_independent_nets():
    m = build_model(2, 5, "tanh", seed=3)
    assert [p.network_id for p in m.params] == [1, 2, 3, 4]
    flats = [p.flat() for p in m.params]
    assert not np.array_equal(flats[0], flats[1])
    assert np.array_equal(m.flat(), build_model(2, 5, "tanh", seed=3).flat())
    assert np.array_equal(m.with_flat(m.flat()).flat(), m.flat())


def test_checkpoint_roundtrip(tmp_path):
    norm = InputNormalization.from_bounds([0, 0, 0, 0], [1, 1, 0.1, 1])
    m = build_model(2, 5, "softplus", seed=9, input_norm=norm, output_scale=[1e-3, 2e-3, 3e-3, 10.0],
                    output_shift=[0, 1e-3, 0, 200.0])
    opt = {"m": np.arange(3.0), "step": np.int64(12)}
    path = save_checkpoint(tmp_path / "c.npz", m, iteration=12, optimizer=opt, metadata={"seed": 9})
    ck = load_checkpoint(path)
    assert ck.iteration == 12 and ck.metadata == {"seed": 9}
    assert np.array_equal(ck.model.flat(), m.flat())
    assert np.array_equal(ck.model.output_shift, m.output_shift)
    assert np.array_equal(ck.model.input_norm.scale, norm.scale)
    assert ck.model.params[2].activation == "softplus"
    assert int(ck.optimizer["step"]) == 12


def test_checkpoint_rejects_foreign_file(tmp_path):
    path = tmp_path / "x.npz"
    np.savez(path, a=np.zeros(2))
    with pytest.raises(ConfigurationError):
        load_checkpoint(path)


def test_model_state_requires_four():
    p = init_params(1, 2, "tanh", 0)
    with pytest.raises(ConfigurationError):
        ModelState((p, p, p))
