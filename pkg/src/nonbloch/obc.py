"""Finite open-boundary lattices: diagonalization, synthesized Green's
functions, DOS, skin profiles, and the s-resolved Fourier-Laplace transform.

Site coordinates are unit-cell index vectors; the hopping between sites with
displacement delta is t_delta = c_{-delta} and no bond ever wraps.
"""

from __future__ import annotations

import warnings
from collections import deque
from dataclasses import dataclass

import numpy as np

from .model import LaurentModel

__all__ = ["FiniteLattice", "GreensMatrix", "chain_sites", "rect_sites",
           "parallelogram_sites", "build_finite", "diagonalize_obc", "greens",
           "extract_from_greens", "dos", "flt", "FLTField", "hotspot",
           "skin_profile"]


@dataclass
class FiniteLattice:
    sites: np.ndarray          # (N, d) integer unit-cell coordinates
    hamiltonian: np.ndarray    # (N * n_orb, N * n_orb) complex, Hz
    n_orb: int = 1

    @property
    def n_sites(self) -> int:
        return len(self.sites)


@dataclass
class GreensMatrix:
    probe_energy: complex
    entries: np.ndarray        # (N, N) complex, 1/Hz


def chain_sites(L: int) -> np.ndarray:
    if L < 1:
        raise ValueError("chain length must be >= 1")
    return np.arange(L, dtype=int)[:, None]


def rect_sites(Lx: int, Ly: int) -> np.ndarray:
    if Lx < 1 or Ly < 1:
        raise ValueError("rectangle sides must be >= 1")
    return np.array([(i, j) for i in range(Lx) for j in range(Ly)], dtype=int)


def parallelogram_sites(a: int, b: int, offset: int = 0) -> np.ndarray:
    """Diamond-cut patch {0 <= i+j < a, 0 <= i-j+offset < b} with edges along
    the (1, 1) and (1, -1) directions.

    The site count is a*b/2 (up to parity); (a, b) = (10, 16) realizes the
    80-site lattice used for the 2D verification runs.
    """
    if a < 1 or b < 1:
        raise ValueError("parallelogram extents must be >= 1")
    lim = a + b + abs(offset) + 2
    out = [(i, j) for i in range(-lim, lim) for j in range(-lim, lim)
           if 0 <= i + j < a and 0 <= i - j + offset < b]
    return np.array(sorted(out), dtype=int)


def _resolve_sites(model: LaurentModel, geometry) -> np.ndarray:
    if isinstance(geometry, dict):
        if "chain" in geometry:
            return chain_sites(int(geometry["chain"]))
        if "rect" in geometry:
            return rect_sites(*map(int, geometry["rect"]))
        if "parallelogram" in geometry:
            return parallelogram_sites(*map(int, geometry["parallelogram"]))
        if "mask" in geometry:
            return np.array([tuple(map(int, s)) for s in geometry["mask"]], dtype=int)
        raise ValueError(f"unknown geometry keys {sorted(geometry)}")
    if isinstance(geometry, int):
        return chain_sites(geometry)
    return np.atleast_2d(np.asarray(geometry, dtype=int))


def build_finite(model: LaurentModel, geometry) -> FiniteLattice:
    """Assemble the open-boundary Hamiltonian on an explicit site set.

    ``geometry`` is a site array, a chain length, or a dict with one of the
    keys chain / rect / parallelogram / mask.  Disconnected site sets produce
    a warning, not an error.
    """
    sites = _resolve_sites(model, geometry)
    if sites.size == 0:
        raise ValueError("geometry is empty")
    if sites.shape[1] != model.dim:
        raise ValueError(f"sites are {sites.shape[1]}D but model is {model.dim}D")
    index = {tuple(s): n for n, s in enumerate(sites)}
    if len(index) != len(sites):
        raise ValueError("duplicate sites in geometry")
    N, n_orb = len(sites), model.n_orb
    H = np.zeros((N * n_orb, N * n_orb), dtype=complex)
    adj = [[] for _ in range(N)]
    for alpha, c in model.coeffs.items():
        a = np.asarray(alpha, dtype=int)
        for n, s in enumerate(sites):
            t = tuple(s + a)
            j = index.get(t)
            if j is None:
                continue
            H[n * n_orb:(n + 1) * n_orb, j * n_orb:(j + 1) * n_orb] += c
            if j != n:
                adj[n].append(j)
                adj[j].append(n)
    if N > 1:
        seen = {0}
        queue = deque([0])
        while queue:
            u = queue.popleft()
            for v in adj[u]:
                if v not in seen:
                    seen.add(v)
                    queue.append(v)
        if len(seen) != N:
            warnings.warn(f"site set is disconnected ({len(seen)} of {N} sites "
                          f"reachable)", stacklevel=2)
    return FiniteLattice(sites=sites, hamiltonian=H, n_orb=n_orb)


def diagonalize_obc(lat: FiniteLattice, cond_limit: float = 1e10):
    """Dense eigendecomposition with biorthonormal left vectors (L^dag R = I)."""
    energies, right = np.linalg.eig(lat.hamiltonian)
    if np.linalg.cond(right) < cond_limit:
        left = np.linalg.inv(right).conj().T
    else:
        adj_vals, adj_vecs = np.linalg.eig(lat.hamiltonian.conj().T)
        order = np.argmin(np.abs(adj_vals[:, None] - energies[None, :].conj()), axis=0)
        left = adj_vecs[:, order]
        left = left / np.einsum("ij,ij->j", left.conj(), right).conj()
    return energies, right, left


def greens(lat: FiniteLattice, E: complex, cond_bound: float = 1e12,
           noise: float = 0.0, rng=None) -> GreensMatrix:
    """Resolvent G = (E I - H)^{-1}, optionally with additive complex Gaussian
    noise of the given amplitude (a measurement stand-in)."""
    A = E * np.eye(lat.hamiltonian.shape[0]) - lat.hamiltonian
    if np.linalg.cond(A) > cond_bound:
        raise ValueError(f"probe energy {E} is too close to a pole "
                         f"(condition exceeds {cond_bound:g})")
    G = np.linalg.solve(A, np.eye(A.shape[0], dtype=complex))
    if noise > 0.0:
        rng = np.random.default_rng(rng)
        G = G + noise * (rng.standard_normal(G.shape) + 1j * rng.standard_normal(G.shape)) \
            / np.sqrt(2.0)
    return GreensMatrix(probe_energy=complex(E), entries=G)


def extract_from_greens(gmats, overlap_min: float = 0.7):
    """Recover eigenpairs of H from resolvent samples on an E grid.

    Each probe's eigendecomposition gives eigenvalues 1/(E_p - E_v) sharing
    H's eigenvectors; candidates are clustered by right-eigenvector overlap
    and each eigenvalue is fit from the two probes nearest its pole.
    Ill-conditioned probes are skipped with a warning.
    """
    probes = []
    for gm in gmats:
        try:
            gv, vec = np.linalg.eig(gm.entries)
        except np.linalg.LinAlgError:
            warnings.warn(f"skipping probe {gm.probe_energy}: eigendecomposition "
                          f"failed", stacklevel=2)
            continue
        vec = vec / np.linalg.norm(vec, axis=0)
        probes.append((gm.probe_energy, gv, vec))
    if not probes:
        raise ValueError("no usable probes")
    Ep0, gv0, vec0 = probes[0]
    n = gv0.size
    # family j collects, per probe, (pole proximity |g|, energy estimate)
    families = [[(abs(gv0[j]), Ep0 - 1.0 / gv0[j])] for j in range(n)]
    vectors = vec0
    for Ep, gv, vec in probes[1:]:
        overlap = np.abs(vectors.conj().T @ vec)
        taken = set()
        for j in range(n):
            order = np.argsort(-overlap[j])
            for cand in order:
                if cand in taken:
                    continue
                if overlap[j, cand] < overlap_min:
                    break
                taken.add(cand)
                families[j].append((abs(gv[cand]), Ep - 1.0 / gv[cand]))
                break
    energies = np.empty(n, dtype=complex)
    for j, fam in enumerate(families):
        fam.sort(key=lambda t: -t[0])
        best = fam[:2]
        energies[j] = np.mean([e for _, e in best])
    return energies, vectors


def dos(energies, re_grid, im_part: float, min_dist: float = 1e-6) -> np.ndarray:
    """rho(E) = (1/L) Im sum_v (E - E_v)^{-1} along the line Im E = const.

    Nodes within ``min_dist`` of an eigenvalue are returned as NaN.
    """
    energies = np.asarray(energies, dtype=complex).ravel()
    E = np.asarray(re_grid, dtype=float) + 1j * im_part
    diff = E[:, None] - energies[None, :]
    out = np.imag(np.sum(1.0 / diff, axis=1)) / energies.size
    out[np.min(np.abs(diff), axis=1) < min_dist] = np.nan
    return out


@dataclass
class FLTField:
    """s-resolved Fourier-Laplace transform of a lattice state.

    ``field[i]`` is the raw transform over the k grid at s_values[i];
    ``contrast`` is |field| normalized per s slice by the l2 norm of the
    weighted state exp(-s.r) psi, which peaks at s equal to the state's
    envelope exponent.
    """

    s_values: np.ndarray       # (ns, d)
    k_axes: list               # d arrays
    field: np.ndarray          # (ns, len(k_axes[0]), ...) complex
    contrast: np.ndarray       # same shape, real


def flt(lat: FiniteLattice, state, s, k_axes=None) -> FLTField:
    """psi_tilde(s, k) = sum_r exp(-s.r) psi(r) exp(-i k.r) over lattice sites.

    ``s`` is one d-vector or a stack of them; ``k_axes`` default to 181 points
    per axis across (-pi, pi].
    """
    state = np.asarray(state, dtype=complex).ravel()
    if state.size != lat.n_sites * lat.n_orb:
        raise ValueError(f"state length {state.size} does not match lattice "
                         f"({lat.n_sites} sites x {lat.n_orb} orbitals)")
    amp = state.reshape(lat.n_sites, lat.n_orb)
    d = lat.sites.shape[1]
    s_values = np.atleast_2d(np.asarray(s, dtype=float))
    if s_values.shape[1] != d:
        raise ValueError(f"s must have {d} components")
    if k_axes is None:
        k_axes = [np.linspace(-np.pi, np.pi, 180, endpoint=False)] * d
    mesh = np.meshgrid(*k_axes, indexing="ij")
    R = lat.sites.astype(float)
    phase = np.exp(-1j * sum(np.multiply.outer(R[:, m], mesh[m]) for m in range(d)))
    fields, contrasts = [], []
    for sv in s_values:
        w = np.exp(-(R @ sv))[:, None] * amp
        norm = np.linalg.norm(w)
        f = np.tensordot(w.sum(axis=1), phase, axes=(0, 0))
        fields.append(f)
        contrasts.append(np.abs(f) / norm if norm > 0 else np.abs(f))
    return FLTField(s_values=s_values, k_axes=[np.asarray(a, float) for a in k_axes],
                    field=np.array(fields), contrast=np.array(contrasts))


def hotspot(field: FLTField, threshold: float = 0.5):
    """Local maxima of the transform on its best s slice.

    The slice is chosen by the global contrast maximum; within it, k-grid
    local maxima at or above ``threshold`` times the slice maximum are
    returned as (s, k, relative height), sorted by height.  Flat fields give
    an empty list.
    """
    ns = field.contrast.shape[0]
    peak_per_s = field.contrast.reshape(ns, -1).max(axis=1)
    i_s = int(np.argmax(peak_per_s))
    A = field.contrast[i_s]
    peak = A.max()
    if peak <= 0 or np.allclose(A, A.ravel()[0]):
        return []
    periodic = [abs((ax[-1] - ax[0]) + (ax[1] - ax[0]) - 2 * np.pi) < 1e-9
                if ax.size > 1 else False for ax in field.k_axes]
    out = []
    it = np.nditer(A, flags=["multi_index"])
    for v in it:
        idx = it.multi_index
        if v < threshold * peak:
            continue
        is_max = True
        for delta in np.ndindex(*([3] * A.ndim)):
            off = [i + dd - 1 for i, dd in zip(idx, delta)]
            if tuple(off) == idx:
                continue
            for ax in range(A.ndim):
                if periodic[ax]:
                    off[ax] %= A.shape[ax]
            if any(o < 0 or o >= n for o, n in zip(off, A.shape)):
                continue
            if A[tuple(off)] > v:
                is_max = False
                break
        if is_max:
            k = np.array([field.k_axes[ax][idx[ax]] for ax in range(A.ndim)])
            out.append((field.s_values[i_s].copy(), k, float(v / peak)))
    out.sort(key=lambda t: -t[2])
    return out


def skin_profile(right_vecs: np.ndarray, n_orb: int = 1) -> np.ndarray:
    """Per-site spectral sum of right-eigenstate intensity over all states."""
    V = np.asarray(right_vecs, dtype=complex)
    V = V / np.linalg.norm(V, axis=0)
    dens = np.sum(np.abs(V) ** 2, axis=1)
    if n_orb > 1:
        dens = dens.reshape(-1, n_orb).sum(axis=1)
    return dens
