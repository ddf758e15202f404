import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import nonbloch as nb
from conftest import random_model


def test_builtin_1d_eval_at_origin(model_1d):
    # omega0 + 2*kappa + kappa_plus + kappa_minus at beta = 1
    H = nb.eval_bloch(model_1d, [0.0], [0.0])
    assert H.shape == (1, 1)
    assert H[0, 0] == pytest.approx(1048.4 - 4.0j, abs=1e-12)


def test_builtin_coefficients(model_1d, model_2d):
    assert model_1d.coeffs[(2,)][0, 0] == pytest.approx(0.4)
    assert model_1d.coeffs[(-2,)][0, 0] == pytest.approx(2.0)
    assert model_1d.coeffs[(0,)][0, 0] == pytest.approx(1038.0 - 4.0j)
    assert model_2d.coeffs[(-1, -1)][0, 0] == pytest.approx(0.64)
    assert model_2d.coeffs[(-1, 0)][0, 0] == pytest.approx(2.72)
    assert model_2d.coeffs[(0, 1)][0, 0] == pytest.approx(0.48)


def test_builtin_2d_xy_symmetric(model_2d):
    for (ax, ay), c in model_2d.coeffs.items():
        assert np.allclose(model_2d.coeffs[(ay, ax)], c)


def test_constant_model_eval():
    m = nb.LaurentModel(1, 1, {(0,): 3.0 - 1.0j})
    for k, mu in [(0.3, 0.0), (-2.0, 0.4), (1.1, -0.2)]:
        assert nb.eval_bloch(m, [k], [mu])[0, 0] == pytest.approx(3.0 - 1.0j)


def test_periodicity(model_1d):
    a = nb.eval_bloch(model_1d, [0.7], [0.05])
    b = nb.eval_bloch(model_1d, [0.7 + 2 * np.pi], [0.05])
    assert np.allclose(a, b, atol=1e-10)


def test_dimension_mismatch_rejected(model_1d):
    with pytest.raises(ValueError):
        nb.eval_bloch(model_1d, [0.1, 0.2], [0.0, 0.0])


def test_gauge_transform_examples(model_1d):
    g = nb.gauge_transform(model_1d, [0.1])
    assert g.coeffs[(2,)][0, 0] == pytest.approx(0.4 * np.exp(0.2))
    same = nb.gauge_transform(model_1d, [0.0])
    for a, c in model_1d.coeffs.items():
        assert np.allclose(same.coeffs[a], c)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 32 - 1),
       st.floats(-0.5, 0.5), st.floats(-0.5, 0.5),
       st.floats(-np.pi, np.pi))
def test_gauge_identity_random(seed, mu1, mu2, k):
    rng = np.random.default_rng(seed)
    m = random_model(rng, dim=1, n_orb=2)
    lhs = nb.eval_bloch(nb.gauge_transform(m, [mu1]), [k], [0.0])
    rhs = nb.eval_bloch(m, [k], [mu1])
    assert np.allclose(lhs, rhs, atol=1e-10, rtol=1e-10)
    # exponent additivity
    twice = nb.gauge_transform(nb.gauge_transform(m, [mu1]), [mu2])
    once = nb.gauge_transform(m, [mu1 + mu2])
    for a in m.coeffs:
        assert np.allclose(twice.coeffs[a], once.coeffs[a], rtol=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.floats(-np.pi, np.pi), st.floats(-0.4, 0.4))
def test_eval_matches_dense_sum_oracle(seed, k, mu):
    rng = np.random.default_rng(seed)
    m = random_model(rng, dim=2, n_orb=2)
    got = nb.eval_bloch(m, [k, -k / 2], [mu, mu / 3])
    want = np.zeros((2, 2), complex)
    for alpha, c in m.coeffs.items():
        z = sum((1j * kk + mm) * a
                for kk, mm, a in zip([k, -k / 2], [mu, mu / 3], alpha))
        want += c * np.exp(z)
    assert np.allclose(got, want, atol=1e-12, rtol=1e-12)


def test_hermitian_limit_real_spectrum(rng):
    # build c_{-a} = c_a^dagger, mu = 0 -> real eigenvalues
    c1 = rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))
    c0 = rng.standard_normal((2, 2))
    c0 = c0 + c0.T
    m = nb.LaurentModel(1, 2, {(0,): c0, (1,): c1, (-1,): c1.conj().T})
    for k in np.linspace(-np.pi, np.pi, 7):
        ev = np.linalg.eigvals(nb.eval_bloch(m, [k], [0.0]))
        assert np.max(np.abs(ev.imag)) < 1e-9 * max(1.0, np.max(np.abs(ev)))


def test_model_json_round_trip(tmp_path, model_2d):
    path = tmp_path / "model.json"
    nb.dump_model_json(model_2d, path)
    back = nb.load_model_json(path)
    assert back.dim == 2 and back.n_orb == 1
    for a, c in model_2d.coeffs.items():
        assert np.allclose(back.coeffs[a], c)


def test_get_model_names(tmp_path, model_1d):
    assert nb.get_model("fig2-1d").coeffs.keys() == model_1d.coeffs.keys()
    path = tmp_path / "m.json"
    nb.dump_model_json(model_1d, path)
    assert nb.get_model(str(path)).dim == 1


def test_malformed_json_rejected(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"dim": 1, "coeffs": []}))
    with pytest.raises(ValueError):
        nb.load_model_json(path)


def test_missing_onsite_rejected():
    with pytest.raises(ValueError):
        nb.LaurentModel(1, 1, {(1,): 1.0})


def test_momentum_point_reduced():
    p = nb.MomentumPoint([3 * np.pi + 0.1], [0.2])
    assert -np.pi < p.k[0] <= np.pi
    assert p.k[0] == pytest.approx(0.1 - np.pi, abs=1e-12)
    # pi itself stays pi (half-open on the left)
    assert nb.MomentumPoint([np.pi], [0.0]).k[0] == pytest.approx(np.pi)
    assert nb.MomentumPoint([-np.pi], [0.0]).k[0] == pytest.approx(np.pi)
