"""Lattice Hamiltonians as matrix-valued Laurent polynomials in the Bloch factors.

A model stores H(beta) = sum_alpha c_alpha * beta^alpha with beta_m = exp(i*k_m + mu_m).
The real-space hopping for displacement delta = R_i - R_j is t_delta = c_{-delta},
so the non-unitary gauge factor exp(-mu.delta) on hoppings equals exp(+mu.alpha)
on coefficients.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

__all__ = [
    "LaurentModel",
    "MomentumPoint",
    "eval_bloch",
    "eval_bloch_grid",
    "gauge_transform",
    "builtin_1d",
    "builtin_2d",
    "get_model",
    "load_model_json",
    "dump_model_json",
    "reduce_angle",
]

BUILTIN_NAMES = ("fig2-1d", "fig3-2d")


def reduce_angle(k):
    """Reduce angles componentwise into (-pi, pi]."""
    k = np.asarray(k, dtype=float)
    return -((-k + np.pi) % (2.0 * np.pi) - np.pi)


@dataclass(frozen=True)
class LaurentModel:
    """Tight-binding model in Bloch-factor form.

    Parameters
    ----------
    dim : int
        Spatial dimension d >= 1.
    n_orb : int
        Orbitals per unit cell.
    coeffs : mapping
        Finite map from integer offset tuples alpha (length d) to complex
        n_orb x n_orb arrays, in Hz.  The alpha = 0 entry must exist.
    """

    dim: int
    n_orb: int
    coeffs: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError(f"dim must be >= 1, got {self.dim}")
        if self.n_orb < 1:
            raise ValueError(f"n_orb must be >= 1, got {self.n_orb}")
        fixed = {}
        for alpha, c in self.coeffs.items():
            alpha = tuple(int(a) for a in np.atleast_1d(alpha))
            if len(alpha) != self.dim:
                raise ValueError(f"offset {alpha} has length {len(alpha)}, expected {self.dim}")
            c = np.asarray(c, dtype=complex)
            if c.shape == ():
                c = c.reshape(1, 1)
            if c.shape != (self.n_orb, self.n_orb):
                raise ValueError(f"coefficient at {alpha} has shape {c.shape}, "
                                 f"expected ({self.n_orb}, {self.n_orb})")
            if not np.all(np.isfinite(c)):
                raise ValueError(f"coefficient at {alpha} is not finite")
            c.setflags(write=False)
            fixed[alpha] = c
        zero = (0,) * self.dim
        if zero not in fixed:
            raise ValueError("missing onsite block at alpha = 0")
        object.__setattr__(self, "coeffs", fixed)
        # dense views for vectorized evaluation
        order = sorted(fixed)
        object.__setattr__(self, "_alpha_mat",
                           np.array(order, dtype=float).reshape(len(order), self.dim))
        object.__setattr__(self, "_coeff_stack",
                           np.stack([fixed[a] for a in order]))

    @property
    def offsets(self) -> list:
        return sorted(self.coeffs)

    @property
    def max_range(self) -> np.ndarray:
        """Max |alpha_m| over the support, per direction."""
        off = np.array(self.offsets)
        return np.max(np.abs(off), axis=0)

    def spectral_scale(self) -> float:
        """max |c_alpha| times support size; sets the det-tolerance unit."""
        mx = max(np.max(np.abs(c)) for c in self.coeffs.values())
        return float(mx * len(self.coeffs))

    def hopping(self, delta) -> np.ndarray:
        """Real-space hopping t_delta = c_{-delta} (zero block if absent)."""
        key = tuple(-int(d) for d in np.atleast_1d(delta))
        if key in self.coeffs:
            return self.coeffs[key]
        return np.zeros((self.n_orb, self.n_orb), dtype=complex)


@dataclass(frozen=True)
class MomentumPoint:
    """Complexified momentum: real Bloch part k (reduced to (-pi, pi]) and imaginary part mu."""

    k: np.ndarray
    mu: np.ndarray

    def __post_init__(self):
        k = reduce_angle(np.atleast_1d(np.asarray(self.k, dtype=float)))
        mu = np.atleast_1d(np.asarray(self.mu, dtype=float))
        if k.shape != mu.shape:
            raise ValueError(f"k and mu dimensions differ: {k.shape} vs {mu.shape}")
        if not (np.all(np.isfinite(k)) and np.all(np.isfinite(mu))):
            raise ValueError("momentum components must be finite")
        k.setflags(write=False)
        mu.setflags(write=False)
        object.__setattr__(self, "k", k)
        object.__setattr__(self, "mu", mu)

    @property
    def dim(self) -> int:
        return self.k.size


def _as_k_mu(model: LaurentModel, k, mu):
    if isinstance(k, MomentumPoint):
        if mu is not None:
            raise TypeError("pass either a MomentumPoint or separate k, mu")
        k, mu = k.k, k.mu
    k = np.atleast_1d(np.asarray(k, dtype=float))
    mu = np.zeros(model.dim) if mu is None else np.atleast_1d(np.asarray(mu, dtype=float))
    if k.shape[-1] != model.dim or mu.shape[-1] != model.dim:
        raise ValueError(f"momentum dimension mismatch: model is {model.dim}D, "
                         f"got k{k.shape}, mu{mu.shape}")
    return k, mu


def eval_bloch(model: LaurentModel, k, mu=None) -> np.ndarray:
    """Non-Bloch matrix H_mu(k) = sum_alpha c_alpha exp((i*k + mu).alpha).

    ``k`` may be a MomentumPoint (then leave ``mu`` unset) or a length-d array.
    Returns an (n_orb, n_orb) complex array.
    """
    k, mu = _as_k_mu(model, k, mu)
    z = 1j * k + mu
    out = np.zeros((model.n_orb, model.n_orb), dtype=complex)
    for alpha, c in model.coeffs.items():
        out += c * np.exp(z @ np.asarray(alpha, dtype=float))
    return out


def eval_bloch_grid(model: LaurentModel, ks: np.ndarray, mu) -> np.ndarray:
    """Vectorized H_mu over a stack of k points.

    ``ks`` has shape (..., d); the result has shape (..., n_orb, n_orb),
    squeezed to (...,) for single-band models.
    """
    ks = np.asarray(ks, dtype=float)
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    if ks.shape[-1] != model.dim:
        raise ValueError(f"k grid last axis must be {model.dim}")
    phases = np.exp((1j * ks + mu) @ model._alpha_mat.T)
    if model.n_orb == 1:
        return phases @ model._coeff_stack[:, 0, 0]
    return np.tensordot(phases, model._coeff_stack, axes=(-1, 0))


def gauge_transform(model: LaurentModel, mu) -> LaurentModel:
    """Imprint mu into the hoppings: c_alpha -> c_alpha * exp(mu.alpha).

    Satisfies eval_bloch(gauge_transform(m, mu), k, 0) == eval_bloch(m, k, mu).
    """
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    if mu.size != model.dim:
        raise ValueError(f"mu has dimension {mu.size}, model is {model.dim}D")
    if not np.all(np.isfinite(mu)):
        raise ValueError("mu must be finite")
    coeffs = {alpha: c * np.exp(mu @ np.asarray(alpha, dtype=float))
              for alpha, c in model.coeffs.items()}
    return LaurentModel(model.dim, model.n_orb, coeffs)


def builtin_1d() -> LaurentModel:
    """1D chain: omega0 + kappa*(b + 1/b) + kappa_plus/b^2 + kappa_minus*b^2 (Hz)."""
    w0 = 1038.0 - 4.0j
    kappa, kappa_plus, kappa_minus = 4.0, 2.0, 0.4
    return LaurentModel(1, 1, {
        (0,): w0,
        (1,): kappa, (-1,): kappa,
        (-2,): kappa_plus, (2,): kappa_minus,
    })


def builtin_2d() -> LaurentModel:
    """2D nonreciprocal square lattice, symmetric under x <-> y exchange (Hz)."""
    w0 = 1040.0 - 6.0j
    kappa_prime, kappa_plus, kappa_minus = 0.64, 2.72, 0.48
    coeffs = {(0, 0): w0,
              (-1, 0): kappa_plus, (0, -1): kappa_plus,
              (1, 0): kappa_minus, (0, 1): kappa_minus}
    for sx in (1, -1):
        for sy in (1, -1):
            coeffs[(sx, sy)] = kappa_prime
    return LaurentModel(2, 1, coeffs)


def get_model(source: str) -> LaurentModel:
    """Resolve a built-in name ('fig2-1d', 'fig3-2d') or a JSON file path."""
    if source == "fig2-1d":
        return builtin_1d()
    if source == "fig3-2d":
        return builtin_2d()
    return load_model_json(source)


def load_model_json(path) -> LaurentModel:
    """Read a model config: {"dim", "n_orb", "coeffs": [{"alpha", "matrix"}]}."""
    with open(path) as fh:
        cfg = json.load(fh)
    try:
        dim, n_orb = int(cfg["dim"]), int(cfg["n_orb"])
        coeffs = {}
        for entry in cfg["coeffs"]:
            alpha = tuple(int(a) for a in entry["alpha"])
            mat = np.array([[complex(el["re"], el.get("im", 0.0)) for el in row]
                            for row in entry["matrix"]])
            coeffs[alpha] = mat
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"malformed model config {path}: {exc}") from exc
    return LaurentModel(dim, n_orb, coeffs)


def dump_model_json(model: LaurentModel, path) -> None:
    cfg = {"dim": model.dim, "n_orb": model.n_orb, "coeffs": [
        {"alpha": list(alpha),
         "matrix": [[{"re": el.real, "im": el.imag} for el in row] for row in c]}
        for alpha, c in sorted(model.coeffs.items())
    ]}
    with open(path, "w") as fh:
        json.dump(cfg, fh, indent=1)
