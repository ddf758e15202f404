import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import nonbloch as nb
from nonbloch.diagnostics import (OnSpectrumError, axis_gradient_component,
                                  det_tolerance, winding_loop)
from conftest import random_model

E1 = 1039.2 - 4.4j
E2 = 1033.0 - 4.2j


def test_winding_zero_far_outside(model_1d):
    q = nb.WindingQuery(1e6 + 0j, [0.0], [1.0])
    assert nb.winding(model_1d, q) == 0


def test_winding_1d_values(model_1d):
    # slopes of the potential around the cusp at mu ~ 0.1 (finite-difference
    # oracle fixes the sign convention: w = d(phi)/d(mu))
    assert nb.winding(model_1d, nb.WindingQuery(E1, [0.0], [1.0])) == -1
    assert nb.winding(model_1d, nb.WindingQuery(E1, [0.3], [1.0])) == 1
    assert nb.winding(model_1d, nb.WindingQuery(E2, [-0.24], [1.0])) == -2


def test_winding_matches_fd_sign(model_1d):
    for E, mu in ((E1, 0.0), (E1, 0.3), (E2, -0.24), (1044.0 - 3.2j, 0.05)):
        w = nb.winding(model_1d, nb.WindingQuery(E, [mu], [1.0]))
        fd = nb.potential_gradient_fd(model_1d, E, [mu])[0]
        assert w == pytest.approx(fd, abs=0.05)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_winding_integrality_random(seed):
    rng = np.random.default_rng(seed)
    m = random_model(rng, dim=1, n_orb=1)
    E = complex(rng.normal(scale=3), rng.normal(scale=3))
    mu = float(rng.uniform(-0.4, 0.4))
    try:
        total = _raw_winding_total(m, E, mu)
    except (OnSpectrumError, RuntimeError):
        return
    assert abs(total - round(total)) < 1e-6


def _raw_winding_total(model, E, mu, n=1 << 12):
    from nonbloch.diagnostics import det_on_loop
    f = det_on_loop(model, E, [mu], [1], [-np.pi], n)
    if np.min(np.abs(f)) < det_tolerance(model):
        raise OnSpectrumError("on spectrum")
    steps = np.angle(f[1:] / f[:-1])
    if np.max(np.abs(steps)) > np.pi / 2:
        raise RuntimeError("unresolved")
    return steps.sum() / (2 * np.pi)


def test_on_spectrum_error_names_node(model_1d):
    # E exactly on the PBC line at k = 0
    E = nb.eval_bloch(model_1d, [0.0], [0.0])[0, 0]
    with pytest.raises(OnSpectrumError, match="loop node"):
        winding_loop(model_1d, E, [0.0], [1], [-np.pi])


def test_winding_map_marks_on_spectrum(model_1d):
    Es = np.array([1e6 + 0j, nb.eval_bloch(model_1d, [0.3], [0.0])[0, 0], E1])
    W = nb.winding_map(model_1d, Es, [0.0], [1.0])
    assert W[0] == 0
    assert np.isnan(W[1])
    assert W[2] == -1


def test_winding_map_hermitian_zero():
    m = nb.LaurentModel(1, 1, {(0,): 0.0, (1,): 1.0, (-1,): 1.0})
    Es = np.array([0.5 + 0.5j, -1.0 - 0.3j, 2.5 + 1.0j])
    W = nb.winding_map(m, Es, [0.0], [1.0])
    assert np.all(W == 0)


def test_winding_map_constant_within_region(model_1d):
    # two energies in the same point-gap region agree with brute force
    for E in (1035.0 - 4.0j, 1035.4 - 4.1j):
        w = nb.winding(model_1d, nb.WindingQuery(E, [0.1], [1.0]))
        assert w == pytest.approx(_raw_winding_total(model_1d, E, 0.1), abs=1e-6)
    w_a = nb.winding(model_1d, nb.WindingQuery(1035.0 - 4.0j, [0.1], [1.0]))
    w_b = nb.winding(model_1d, nb.WindingQuery(1035.4 - 4.1j, [0.1], [1.0]))
    assert w_a == w_b


def test_spectral_potential_single_eigenvalue():
    assert nb.spectral_potential_samples([2.0 + 1.0j], 3.0 + 1.0j) == pytest.approx(0.0)
    assert nb.spectral_potential_samples([2.0 + 1.0j], 2.0 + 3.0j) == pytest.approx(np.log(2.0))


def test_spectral_potential_forms_agree(model_1d):
    E = 1044.0 - 3.0j
    mu = [0.05]
    phi_int = nb.spectral_potential(model_1d, E, mu, grid=512)
    ks = np.linspace(-np.pi, np.pi, 512, endpoint=False)
    evs = nb.eval_bloch_grid(model_1d, ks[:, None], mu)
    phi_smp = nb.spectral_potential_samples(evs, E)
    assert phi_smp == pytest.approx(phi_int, abs=1e-4)


def test_spectral_potential_on_spectrum_raises(model_1d):
    # E exactly at a quadrature node of the default 512-point grid
    k_node = -np.pi + 2 * np.pi * 100 / 512
    E = nb.eval_bloch(model_1d, [k_node], [0.0])[0, 0]
    with pytest.raises(OnSpectrumError):
        nb.spectral_potential(model_1d, E, [0.0], grid=512)


def test_gradient_far_energy_zero(model_2d):
    g = nb.potential_gradient(model_2d, 1e6 + 0j, [0.1, 0.1], n_perp=16)
    assert np.allclose(g, 0.0)


def test_gradient_identity_2d(model_2d):
    # axis components from averaged winding vs central differences of phi
    for E, mu in ((1045.1 - 6j, (0.3, 0.35)), (1041.2 - 6j, (0.5, 0.44))):
        g = nb.potential_gradient(model_2d, E, mu, n_perp=64)
        fd = nb.potential_gradient_fd(model_2d, E, mu, grid=256)
        assert np.max(np.abs(g - fd)) <= 0.05


def test_gradient_piecewise_integer_1d(model_1d):
    for mu in (-0.3, -0.05, 0.2, 0.35):
        g = nb.potential_gradient(model_1d, E1, [mu])[0]
        assert g == int(g)


def test_nbf_density_normalization(rng):
    evs = rng.standard_normal(300) + 1j * rng.standard_normal(300)
    re = np.linspace(-6, 6, 241)
    im = np.linspace(-6, 6, 241)
    rho = nb.nbf_density(evs, re, im)
    h = (re[1] - re[0]) * (im[1] - im[0])
    total = np.nansum(rho) * h
    assert total == pytest.approx(1.0, abs=0.02)


def test_nbf_density_isolated_peak():
    evs = np.array([0.0 + 0.0j] * 5 + [3.0 + 0.0j])
    re = np.linspace(-1.5, 1.5, 121)
    im = np.linspace(-1.5, 1.5, 121)
    rho = nb.nbf_density(evs, re, im)
    h = (re[1] - re[0]) * (im[1] - im[0])
    assert np.nansum(rho) * h == pytest.approx(5.0 / 6.0, abs=0.02)


def test_find_nbfs_1d_two_roots(model_1d):
    roots = nb.find_nbfs(model_1d, E1, [0.1])
    assert len(roots) == 2
    ks = sorted(float(r.k[0]) for r in roots)
    assert ks[0] == pytest.approx(-ks[1], abs=0.05)
    assert ks[1] == pytest.approx(1.21, abs=0.05)


def test_find_nbfs_2d_six_roots(model_2d):
    roots = nb.find_nbfs(model_2d, 1045.1 - 6j, [0.42, 0.42])
    assert len(roots) == 6
    assert sorted(r.sign for r in roots) == [-1, -1, -1, 1, 1, 1]
    scale = model_2d.spectral_scale()
    assert max(r.residual for r in roots) < 1e-6 * scale


def test_nbf_winding_jump_consistency(model_2d):
    """Moving a k_perp line across one signed NBF changes w by that sign."""
    E3 = 1045.1 - 6j
    mu = [0.42, 0.42]
    roots = nb.find_nbfs(model_2d, E3, mu)
    r = max(roots, key=lambda r: abs(r.k[0]))  # isolated in k_x
    eps = 0.08
    wl = winding_loop(model_2d, E3, mu, [0, 1], [r.k[0] - eps, 0.0])
    wr = winding_loop(model_2d, E3, mu, [0, 1], [r.k[0] + eps, 0.0])
    assert wr - wl == r.sign


def test_self_intersections_circle_none():
    # Hatano-Nelson-like single loop: injective spectral curve
    m = nb.LaurentModel(1, 1, {(0,): 0.0, (1,): 1.0, (-1,): 0.3})
    ks = np.linspace(-np.pi, np.pi, 400, endpoint=False)
    Es = nb.eval_bloch_grid(m, ks[:, None], [0.0])
    assert nb.self_intersections(ks, Es) == []


def test_self_intersections_anchors(model_1d):
    ks = np.linspace(-np.pi, np.pi, 2000, endpoint=False)
    for mu, target in ((0.1, 1039.194986 - 4.0j),):
        Es = nb.eval_bloch_grid(model_1d, ks[:, None], [mu])
        hits = nb.self_intersections(ks, Es)
        assert len(hits) == 1
        Ec, k1, k2 = hits[0]
        assert abs(Ec - target) < 1e-3
        assert k1 == pytest.approx(-1.2146, abs=1e-3)
        assert k2 == pytest.approx(1.2146, abs=1e-3)
    # mu = -0.22 slice: three crossings, one on the symmetry axis
    Es = nb.eval_bloch_grid(model_1d, ks[:, None], [-0.22])
    hits = nb.self_intersections(ks, Es)
    assert len(hits) == 3
    assert min(abs(E - (1032.737029 - 4.0j)) for E, _, _ in hits) < 1e-3


def test_integer_direction():
    from nonbloch.diagnostics import integer_direction
    assert list(integer_direction([0.0, 1.0])) == [0, 1]
    assert list(integer_direction([1.0, 1.0]) ) == [1, 1]
    q = integer_direction(np.array([1.0, 1.0]) / np.sqrt(2))
    assert list(q) == [1, 1]
    with pytest.raises(ValueError):
        integer_direction([1.0, np.pi])
