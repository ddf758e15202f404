import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import nonbloch as nb
from conftest import random_model


def bloch_union(model, sizes, theta, mu):
    """Oracle: multiset of eval_bloch eigenvalues over the folded k labels."""
    import itertools
    axes = [[(theta[m] + 2 * np.pi * n) / sizes[m] for n in range(sizes[m])]
            for m in range(model.dim)]
    out = []
    for ks in itertools.product(*axes):
        H = nb.eval_bloch(model, list(ks), mu)
        out.extend(np.linalg.eigvals(H))
    return np.sort_complex(np.array(out))


def test_single_cell_is_pbc_matrix():
    m = nb.LaurentModel(1, 1, {(0,): 5.0, (1,): 1.0, (-1,): 2.0})
    spec = nb.SupercellSpec((1,), [0.0], [0.0])
    H = nb.build_supercell(m, spec)
    assert np.allclose(H, nb.eval_bloch(m, [0.0], [0.0]))


def test_folding_oracle_1d(model_1d):
    spec = nb.SupercellSpec((4,), [0.3], [0.07])
    ev = np.sort_complex(np.linalg.eigvals(nb.build_supercell(model_1d, spec)))
    want = bloch_union(model_1d, (4,), [0.3], [0.07])
    assert np.allclose(ev, want, atol=1e-9)


def test_folding_oracle_2d(model_2d):
    spec = nb.SupercellSpec((3, 2), [0.5, -1.1], [0.2, -0.1])
    ev = np.sort_complex(np.linalg.eigvals(nb.build_supercell(model_2d, spec)))
    want = bloch_union(model_2d, (3, 2), [0.5, -1.1], [0.2, -0.1])
    assert np.allclose(ev, want, atol=1e-9)


def test_range_exceeding_supercell_rejected(model_1d):
    with pytest.raises(ValueError, match="wrap"):
        nb.build_supercell(model_1d, nb.SupercellSpec((1,), [0.0], [0.0]))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.floats(-np.pi, np.pi),
       st.floats(-0.5, 0.5), st.integers(3, 6))
def test_mode_isospectrality_random(seed, theta, mu, N):
    rng = np.random.default_rng(seed)
    m = random_model(rng, dim=1, n_orb=1, max_range=2)
    a = nb.build_supercell(m, nb.SupercellSpec((N,), [theta], [mu], nb.Mode.DILUTED))
    b = nb.build_supercell(m, nb.SupercellSpec((N,), [theta], [mu], nb.Mode.BOUNDARY))
    ea, eb = np.sort_complex(np.linalg.eigvals(a)), np.sort_complex(np.linalg.eigvals(b))
    scale = max(1.0, np.max(np.abs(ea)))
    assert np.max(np.abs(ea - eb)) <= 1e-8 * scale


def test_modes_related_by_diagonal_similarity(model_1d):
    spec_d = nb.SupercellSpec((6,), [0.4], [0.12], nb.Mode.DILUTED)
    spec_b = nb.SupercellSpec((6,), [0.4], [0.12], nb.Mode.BOUNDARY)
    Hd = nb.build_supercell(model_1d, spec_d)
    Hb = nb.build_supercell(model_1d, spec_b)
    D = np.diag(np.exp(0.12 * np.arange(6)))
    assert np.allclose(np.linalg.inv(D) @ Hb @ D, Hd, atol=1e-9)


def test_envelope_flatness_diluted(model_1d):
    samples = nb.sweep_bz(model_1d, (25,), [0.2], [[0.3]])
    for s in samples[:5]:
        v = s.right_vecs[:, 0].reshape(25)
        amp = np.abs(v)
        assert amp.std() / amp.mean() < 1e-6


def test_envelope_exponential_boundary(model_1d):
    spec = nb.SupercellSpec((25,), [0.3], [0.2], nb.Mode.BOUNDARY)
    H = nb.build_supercell(model_1d, spec)
    ev, vec = np.linalg.eig(H)
    # pick the eigenvector paired with a nondegenerate eigenvalue
    i = int(np.argmax(np.min(np.abs(ev[:, None] - ev[None, :]) +
                             np.eye(25) * 1e9, axis=1)))
    amp = np.log(np.abs(vec[:, i]))
    x = np.arange(25.0)
    slope, intercept = np.polyfit(x, amp, 1)
    resid = amp - (slope * x + intercept)
    r2 = 1 - resid.var() / amp.var()
    assert slope == pytest.approx(0.2, abs=0.02)
    assert r2 > 0.999


def test_unfold_pure_plane_wave(model_1d):
    spec = nb.SupercellSpec((8,), [0.5], [0.0])
    k_n = (0.5 + 2 * np.pi * 3) / 8
    v = np.exp(1j * k_n * np.arange(8))
    k, w = nb.unfold(v, spec, 1)
    assert w == pytest.approx(1.0, abs=1e-12)
    assert k[0] == pytest.approx(nb.reduce_angle(k_n), abs=1e-12)


def test_unfold_degenerate_half_weight():
    # equal +pi/-pi superposition on N=2: weight 0.5 reported, no crash
    m = nb.LaurentModel(1, 1, {(0,): 0.0, (1,): 1.0, (-1,): 1.0})
    spec = nb.SupercellSpec((2,), [0.0], [0.0])
    v = np.exp(1j * np.pi * np.arange(2)) + np.exp(-1j * np.pi * np.arange(2))
    k, w = nb.unfold(v, spec, 1)
    assert w == pytest.approx(1.0, abs=1e-12)  # +pi and -pi are the same label
    v2 = np.exp(1j * 0.0 * np.arange(2)) + np.exp(1j * np.pi * np.arange(2))
    k2, w2 = nb.unfold(v2, spec, 1)
    assert w2 == pytest.approx(0.5, abs=1e-12)


def test_sweep_covers_pbc_line(model_1d):
    twists = nb.default_twist_grid(8)
    samples = nb.sweep_bz(model_1d, (25,), [0.0], [[t] for t in twists])
    assert len(samples) == 200
    for s in samples[::17]:
        direct = nb.eval_bloch(model_1d, s.k, [0.0])[0, 0]
        assert abs(s.energies[0] - direct) < 1e-8
        assert s.bloch_weight[0] > 0.999


def test_sweep_constant_model():
    m = nb.LaurentModel(1, 1, {(0,): 7.0 - 2.0j, (1,): 0.0, (-1,): 0.0})
    samples = nb.sweep_bz(m, (5,), [0.0], [[0.1], [1.3]])
    for s in samples:
        assert np.allclose(s.energies, 7.0 - 2.0j)


def test_biorthogonality(model_1d):
    samples = nb.sweep_bz(model_1d, (8,), [0.15], [[0.7]])
    L = np.concatenate([s.left_vecs for s in samples], axis=1)
    R = np.concatenate([s.right_vecs for s in samples], axis=1)
    # columns are drawn from one decomposition: full biorthogonality
    G = L.conj().T @ R
    # rows/cols may be permuted across samples; check each column pairs with one row
    assert np.allclose(np.abs(G) @ np.abs(G.T), np.eye(8) @ np.abs(G) @ np.abs(G.T), atol=1e-6)
    samples_sorted = sorted(samples, key=lambda s: tuple(s.k))
    for s in samples_sorted:
        assert np.allclose(s.left_vecs.conj().T @ s.right_vecs,
                           np.eye(s.energies.size), atol=1e-8)


def test_tradeoff_mu_range_size_independent(model_1d):
    # same mu = 0.5 at N = 5 and N = 50: shared k labels carry identical energies
    k_targets = [0.3, 1.1, -2.2]
    for k in k_targets:
        e5 = _energy_at_label(model_1d, 5, k, 0.5)
        e50 = _energy_at_label(model_1d, 50, k, 0.5)
        assert abs(e5 - e50) < 1e-6


def _energy_at_label(model, N, k, mu):
    theta = nb.reduce_angle(N * k)
    spec = nb.SupercellSpec((N,), [theta], [mu])
    H = nb.build_supercell(model, spec)
    ev, vec = np.linalg.eig(H)
    best, fit = None, -1.0
    for i in range(N):
        kl, w = nb.unfold(vec[:, i], spec, 1)
        if abs(nb.reduce_angle(kl[0] - k)) < 1e-9 and w > fit:
            best, fit = ev[i], w
    assert best is not None
    return best
