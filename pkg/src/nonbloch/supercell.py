"""Non-Bloch supercells under twisted boundary conditions.

Two equivalent constructions of the same spectrum:

* DILUTED: every hopping of offset alpha carries exp(mu.alpha); boundary wraps
  carry only the twist phase.  Eigenvectors keep flat Bloch envelopes.
* BOUNDARY: bare interior hoppings; each wrap in direction m carries
  exp(eta_m + i*theta_m) with eta_m = N_m * mu_m.  Eigenvectors pick up the
  exponential envelope exp(mu.r).

The two are related by the diagonal similarity D = diag(exp(mu.R_i)).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from .model import LaurentModel, gauge_transform, reduce_angle

__all__ = ["Mode", "SupercellSpec", "SpectralSample", "build_supercell",
           "diagonalize", "sweep_bz", "unfold", "default_twist_grid"]


class Mode(Enum):
    DILUTED = "diluted"
    BOUNDARY = "boundary"


@dataclass(frozen=True)
class SupercellSpec:
    """Supercell sizes N, twist angles theta in (-pi, pi], mu, and build mode."""

    sizes: tuple
    twist: np.ndarray
    mu: np.ndarray
    mode: Mode = Mode.DILUTED

    def __post_init__(self):
        sizes = tuple(int(n) for n in np.atleast_1d(self.sizes))
        if any(n < 1 for n in sizes):
            raise ValueError(f"supercell sizes must be >= 1, got {sizes}")
        twist = reduce_angle(np.atleast_1d(np.asarray(self.twist, dtype=float)))
        mu = np.atleast_1d(np.asarray(self.mu, dtype=float))
        if not len(sizes) == twist.size == mu.size:
            raise ValueError("sizes, twist and mu must share one dimension")
        twist.setflags(write=False)
        mu.setflags(write=False)
        object.__setattr__(self, "sizes", sizes)
        object.__setattr__(self, "twist", twist)
        object.__setattr__(self, "mu", mu)

    @property
    def dim(self) -> int:
        return len(self.sizes)

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.sizes))

    @property
    def eta(self) -> np.ndarray:
        """Boundary exponents eta_m = N_m * mu_m."""
        return np.asarray(self.sizes, dtype=float) * self.mu


@dataclass
class SpectralSample:
    """Eigenpairs unfolded to one (k, mu) point of the Brillouin zone.

    right_vecs / left_vecs hold one column per eigenpair, biorthonormalized
    so that left_vecs.conj().T @ right_vecs == I for the full supercell basis.
    """

    k: np.ndarray
    mu: np.ndarray
    energies: np.ndarray
    right_vecs: np.ndarray
    left_vecs: np.ndarray
    bloch_weight: np.ndarray


def _cell_index_grid(sizes):
    """Integer cell coordinates, row-major over the supercell."""
    axes = [np.arange(n) for n in sizes]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def build_supercell(model: LaurentModel, spec: SupercellSpec) -> np.ndarray:
    """Assemble the supercell matrix of size n_orb * prod(N).

    Raises ValueError when a hopping offset exceeds the supercell size in any
    direction (the wrap count would be ambiguous).
    """
    if model.dim != spec.dim:
        raise ValueError(f"model is {model.dim}D, spec is {spec.dim}D")
    sizes = np.asarray(spec.sizes)
    over = [alpha for alpha in model.coeffs if np.any(np.abs(alpha) > sizes)]
    if over:
        raise ValueError(
            f"hopping range exceeds supercell size (wrap ambiguity): offsets {over} "
            f"vs sizes {spec.sizes}")

    if spec.mode is Mode.DILUTED:
        work = gauge_transform(model, spec.mu)
        wrap_exp = 1j * spec.twist
    else:
        work = model
        wrap_exp = spec.eta + 1j * spec.twist

    n_orb = model.n_orb
    cells = _cell_index_grid(spec.sizes)
    n_cells = len(cells)
    strides = np.cumprod((list(spec.sizes) + [1])[1:][::-1])[::-1]
    H = np.zeros((n_cells * n_orb, n_cells * n_orb), dtype=complex)
    for alpha, c in work.coeffs.items():
        a = np.asarray(alpha)
        target = cells + a
        wraps = np.floor_divide(target, sizes)
        target_mod = target - wraps * sizes
        cols = target_mod @ strides
        phase = np.exp(wraps @ wrap_exp)
        for i in range(n_cells):
            r, s = i * n_orb, cols[i] * n_orb
            H[r:r + n_orb, s:s + n_orb] += phase[i] * c
    return H


def diagonalize(H: np.ndarray, cond_limit: float = 1e10):
    """Full eigendecomposition with biorthonormal left vectors.

    Left vectors come from inv(R)^dagger when R is well conditioned, otherwise
    from a separate decomposition of H^dagger matched to the right spectrum.
    Returns (energies, right, left) with L^dagger R = I.
    """
    energies, right = np.linalg.eig(H)
    if np.linalg.cond(right) < cond_limit:
        left = np.linalg.inv(right).conj().T
        return energies, right, left
    # fall back: adjoint eigenbasis, matched by eigenvalue, then re-biorthonormalized
    adj_vals, adj_vecs = np.linalg.eig(H.conj().T)
    order = np.argmin(np.abs(adj_vals[:, None] - energies[None, :].conj()), axis=0)
    left = adj_vecs[:, order]
    overlap = np.einsum("ij,ij->j", left.conj(), right)
    left = left / overlap.conj()
    return energies, right, left


def default_twist_grid(n: int = 16) -> np.ndarray:
    """Uniform twist angles covering (-pi, pi]."""
    return -np.pi + 2.0 * np.pi * (np.arange(n) + 1) / n


def unfold(vec: np.ndarray, spec: SupercellSpec, n_orb: int = 1):
    """Project an eigenvector onto the supercell's discrete plane waves.

    Returns (k_label, weight) where weight in [0, 1] is the fraction of the
    vector's norm carried by the winning plane wave exp(i k_n . R); k_n runs
    over (theta + 2 pi n) / N per direction.
    """
    n_cells = np.prod(spec.sizes)
    if vec.size != n_cells * n_orb:
        raise ValueError(f"eigenvector length {vec.size} does not match supercell "
                         f"{n_cells} cells x {n_orb} orbitals")
    grid = vec.reshape(tuple(spec.sizes) + (n_orb,))
    # remove the twist tilt so a plane FFT diagonalizes the projection
    cells = _cell_index_grid(spec.sizes).reshape(tuple(spec.sizes) + (spec.dim,))
    tilt = np.exp(-1j * (cells @ (spec.twist / np.asarray(spec.sizes))))
    amps = np.fft.fftn(grid * tilt[..., None], axes=tuple(range(spec.dim)))
    weights = np.sum(np.abs(amps) ** 2, axis=-1)
    total = weights.sum()
    if total == 0:
        raise ValueError("zero eigenvector")
    weights = weights / total
    idx = np.unravel_index(np.argmax(weights), weights.shape)
    # plane wave exp(i 2 pi n j / N) lands on fftn index n
    k = np.array([spec.twist[m] / spec.sizes[m] + 2.0 * np.pi * idx[m] / spec.sizes[m]
                  for m in range(spec.dim)])
    return reduce_angle(k), float(weights[idx])


def sweep_bz(model: LaurentModel, sizes, mu, twist_grid=None,
             mode: Mode = Mode.DILUTED):
    """Diagonalize supercells over a twist grid and unfold to (k, mu) samples.

    Returns a list of SpectralSample sorted lexicographically by k.  With the
    DILUTED mode each twist contributes prod(N) exactly-labelled k points.
    """
    sizes = tuple(int(n) for n in np.atleast_1d(sizes))
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    if twist_grid is None:
        per_axis = default_twist_grid()
        twist_grid = [np.array(t) for t in itertools.product(per_axis, repeat=model.dim)]
    else:
        tg = np.asarray(twist_grid, dtype=float)
        if tg.ndim == 1:
            tg = tg[:, None]
        twist_grid = [t for t in tg]
    if len(twist_grid) == 0:
        raise ValueError("twist_grid must be non-empty")

    samples = []
    for theta in twist_grid:
        spec = SupercellSpec(sizes, theta, mu, mode)
        H = build_supercell(model, spec)
        try:
            energies, right, left = diagonalize(H)
        except np.linalg.LinAlgError as exc:
            raise RuntimeError(f"eigensolver failed at twist {theta}") from exc
        groups = {}
        for v in range(energies.size):
            k, weight = unfold(right[:, v], spec, model.n_orb)
            groups.setdefault(tuple(np.round(k, 12)), []).append((v, weight))
        for kk, members in groups.items():
            idx = [v for v, _ in members]
            samples.append(SpectralSample(
                k=np.array(kk), mu=mu.copy(),
                energies=energies[idx],
                right_vecs=right[:, idx],
                left_vecs=left[:, idx],
                bloch_weight=np.array([w for _, w in members]),
            ))
    samples.sort(key=lambda s: tuple(s.k))
    return samples
