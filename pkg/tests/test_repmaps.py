import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from phgd import repmaps
from phgd.errors import ResampleLimit, ShapeMismatch
from phgd.repmaps import Activation, MlpRepMap

SUITE = ("MP", "RPS", "Shapley", "ElFarol", "KLdemo")


def celu(t):
    return t if t > 0 else np.expm1(t)


def test_sigmoid_head_at_zero():
    m = repmaps.sample_map("ElFarol", 1)
    assert np.allclose(repmaps.map_eval(m, np.zeros(5)), 0.5)


def test_softmax_head_at_zero():
    m = repmaps.sample_map("RPS", 1)
    assert np.allclose(repmaps.map_eval(m, np.zeros(5)), 1 / 3)


def test_mp_map_hand_evaluation():
    m = repmaps.sample_map("MP", 7)
    a1, a2 = m.w1[0, 0], m.w2[0, 0]
    expected = 1 / (1 + np.exp(-a2 * celu(a1)))
    assert repmaps.map_eval(m, [1.0])[0] == pytest.approx(expected, rel=1e-14)


def test_identity_weights_celu_positive_jacobian():
    m = MlpRepMap(np.eye(3), np.eye(3), Activation.CELU, Activation.IDENTITY)
    assert np.allclose(repmaps.map_jacobian(m, [0.5, 1.0, 2.0]), np.eye(3))


def test_softmax_jacobian_at_uniform(rng):
    w1 = rng.uniform(-1, 1, (4, 5))
    w2 = rng.uniform(-1, 1, (3, 4))
    m = MlpRepMap(w1, w2, Activation.CELU, Activation.SOFTMAX)
    head = np.eye(3) / 3 - np.ones((3, 3)) / 9
    # x = 0: celu'(0) = 1 so the hidden layer is linear with slope 1
    assert np.allclose(repmaps.map_jacobian(m, np.zeros(5)), head @ w2 @ w1, atol=1e-15)


def test_fd_exact_for_linear(rng):
    w = rng.standard_normal((3, 4))
    m = MlpRepMap(w, np.eye(3), Activation.IDENTITY, Activation.IDENTITY)
    assert np.allclose(repmaps.jacobian_fd(m, rng.standard_normal(4)), w, atol=1e-9)


@pytest.mark.parametrize("spec", SUITE)
def test_jacobian_matches_fd(spec, rng):
    m = repmaps.sample_map(spec, 3)
    for _ in range(20):
        x = rng.uniform(-2.5, 2.5, m.input_dim)
        j = repmaps.map_jacobian(m, x)
        assert np.abs(j - repmaps.jacobian_fd(m, x)).max() <= 1e-6 * (1 + np.abs(j).max())


def test_mp_sampling_ranges():
    for seed in range(30):
        m = repmaps.sample_map("MP", seed)
        for w in (m.w1[0, 0], m.w2[0, 0]):
            assert repmaps.WEIGHT_FLOOR <= abs(w) <= 1.0


def test_elfarol_range():
    for seed in range(10):
        assert np.abs(repmaps.sample_map("ElFarol", seed).w1).max() <= 0.85


def test_sampling_is_deterministic():
    a, b = repmaps.sample_map("RPS", (4, 2)), repmaps.sample_map("RPS", (4, 2))
    assert np.array_equal(a.w1, b.w1) and np.array_equal(a.w2, b.w2)
    assert not np.array_equal(a.w1, repmaps.sample_map("RPS", (4, 3)).w1)


def test_resample_limit():
    impossible = repmaps.ArchSpec("tight", 1, 1, 1, w1_range=0.01, w2_range=0.01)
    with pytest.raises(ResampleLimit):
        repmaps.sample_map(impossible, 0)


def test_unknown_spec():
    with pytest.raises(ValueError):
        repmaps.sample_map("nope", 0)


def test_shape_mismatch():
    m = repmaps.sample_map("RPS", 0)
    with pytest.raises(ShapeMismatch):
        m(np.zeros(4))
    with pytest.raises(ShapeMismatch):
        MlpRepMap(np.zeros((2, 3)), np.zeros((1, 3)))
    with pytest.raises(ShapeMismatch):
        repmaps.sample_product("RPS", 2, 0).eval_jac(np.zeros((2, 4)))


def test_product_seeds_per_player():
    p = repmaps.sample_product("RPS", 3, (9, 0))
    for i, m in enumerate(p.maps):
        assert np.array_equal(m.w1, repmaps.sample_map("RPS", (9, 0, i)).w1)


def test_json_roundtrip(rng):
    p = repmaps.sample_product("Shapley", 2, 11)
    q = repmaps.ProductRepMap.from_json(p.to_json())
    x = rng.standard_normal((2, 5))
    assert np.array_equal(p(x), q(x))


def test_sv_bounds():
    ident = repmaps.identity_product(2, 3)
    assert repmaps.sv_bounds(ident, [np.zeros((2, 3)), np.ones((2, 3))]) == pytest.approx((1.0, 1.0))
    soft = repmaps.sample_product("RPS", 2, 0)
    lo, _ = repmaps.sv_bounds(soft, [np.zeros((2, 5))])
    assert lo <= 1e-8
    two = repmaps.ProductRepMap((MlpRepMap([[2.0]], [[1.0]], Activation.IDENTITY, Activation.IDENTITY),))
    assert repmaps.sv_bounds(two, [np.array([[0.3]])]) == pytest.approx((2.0, 2.0))


@pytest.mark.parametrize("spec", ["RPS", "Shapley", "KLdemo"])
def test_simplex_codomain(spec, rng):
    m = repmaps.sample_map(spec, 2)
    for _ in range(50):
        z = m(rng.uniform(-5, 5, m.input_dim))
        assert np.all(z >= 0) and z.sum() == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1), st.lists(st.floats(-4, 4), min_size=5, max_size=5))
def test_property_sigmoid_codomain_and_fd(seed, x):
    m = repmaps.sample_map("ElFarol", seed)
    x = np.array(x)
    z = m(x)
    assert 0.0 <= z[0] <= 1.0
    j = repmaps.map_jacobian(m, x)
    assert np.abs(j - repmaps.jacobian_fd(m, x)).max() <= 1e-6 * (1 + np.abs(j).max())
