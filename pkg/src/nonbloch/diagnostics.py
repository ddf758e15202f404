"""Point-gap diagnostics: winding numbers, spectral potential, NBF location.

Conventions (also emitted in CLI sidecars):

* Winding w is the total unwrapped phase of f(k) = det[E - H_mu(k)] along the
  closed loop traversed with increasing parameter, divided by 2 pi.  With this
  orientation w equals d(phi)/d(mu) along the loop direction exactly.
* An NBF sign is the sign of the Jacobian det of (Re f, Im f) with respect to
  (k_x, k_y) at the root; +1 means counterclockwise phase circulation.  Simple
  roots in 1D are holomorphic in k and always get +1.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .model import LaurentModel, eval_bloch_grid

__all__ = ["OnSpectrumError", "WindingQuery", "NBF", "det_on_loop", "winding",
           "winding_loop", "winding_lines", "winding_map", "spectral_potential",
           "spectral_potential_samples", "potential_gradient",
           "potential_gradient_fd", "axis_gradient_component",
           "nbf_density", "nbf_density_from_potential",
           "find_nbfs", "self_intersections", "det_tolerance"]

DEFAULT_GRID = 512
DEFAULT_CAP = 1 << 14
PHASE_STEP_LIMIT = np.pi / 2


class OnSpectrumError(ValueError):
    """E sits on (or unresolvably close to) the spectrum for the requested mu."""

    def __init__(self, msg, node=None):
        super().__init__(msg)
        self.node = node


def det_tolerance(model: LaurentModel) -> float:
    """|det| threshold below which a loop node counts as on-spectrum."""
    return 1e-8 * model.spectral_scale() ** model.n_orb


def _det_grid(model: LaurentModel, E: complex, ks: np.ndarray, mu) -> np.ndarray:
    h = eval_bloch_grid(model, ks, mu)
    if model.n_orb == 1:
        return E - h
    eye = np.eye(model.n_orb)
    return np.linalg.det(E * eye - h)


def det_on_loop(model, E, mu, q, base, n):
    """f = det[E - H_mu] on the closed loop base + t*q, t in [0, 2 pi]."""
    t = np.linspace(0.0, 2.0 * np.pi, n + 1)
    ks = np.asarray(base, dtype=float)[None, :] + t[:, None] * np.asarray(q, dtype=float)[None, :]
    return _det_grid(model, E, ks, mu)


@dataclass(frozen=True)
class WindingQuery:
    """Reference energy, mu, loop direction n_hat, and transverse section k_perp."""

    E: complex
    mu: np.ndarray
    n_hat: np.ndarray
    k_perp: np.ndarray = ()
    grid: int = DEFAULT_GRID

    def __post_init__(self):
        n_hat = np.atleast_1d(np.asarray(self.n_hat, dtype=float))
        norm = np.linalg.norm(n_hat)
        if norm == 0:
            raise ValueError("n_hat must be nonzero")
        n_hat = n_hat / norm
        n_hat.setflags(write=False)
        object.__setattr__(self, "n_hat", n_hat)
        object.__setattr__(self, "mu", np.atleast_1d(np.asarray(self.mu, dtype=float)))
        object.__setattr__(self, "k_perp", np.atleast_1d(np.asarray(self.k_perp, dtype=float)))
        if self.grid < 16:
            raise ValueError("grid must be >= 16")


def integer_direction(n_hat, max_den: int = 12) -> np.ndarray:
    """Smallest integer vector parallel to n_hat (loops must close on the torus)."""
    n_hat = np.atleast_1d(np.asarray(n_hat, dtype=float))
    ref = np.min(np.abs(n_hat[n_hat != 0]))
    fracs = [Fraction(float(x / ref)).limit_denominator(max_den) for x in n_hat]
    if any(abs(float(fr) - x / ref) > 1e-9 for fr, x in zip(fracs, n_hat)):
        raise ValueError(f"n_hat {n_hat} is not proportional to a small integer vector")
    den = np.lcm.reduce([fr.denominator for fr in fracs])
    q = np.array([int(fr * den) for fr in fracs])
    q = q // np.gcd.reduce(q[q != 0] if np.any(q) else [1])
    if q @ n_hat < 0:
        q = -q
    return q


def perp_basis(q) -> np.ndarray:
    """Deterministic orthonormal basis of the complement of q (rows)."""
    q = np.asarray(q, dtype=float)
    d = q.size
    basis = [q / np.linalg.norm(q)]
    for i in range(d):
        v = np.zeros(d)
        v[i] = 1.0
        for b in basis:
            v = v - (v @ b) * b
        if np.linalg.norm(v) > 1e-12:
            basis.append(v / np.linalg.norm(v))
    return np.array(basis[1:])


def winding_loop(model, E, mu, q, base, grid=DEFAULT_GRID, cap=DEFAULT_CAP) -> int:
    """Phase winding of det[E - H_mu(k)] along the loop base + t*q.

    Doubles the grid until every single-step phase jump is below pi/2; raises
    OnSpectrumError when a node sits within det-tolerance of a zero, and
    RuntimeError when refinement hits the cap without resolving the phase.
    """
    tol = det_tolerance(model)
    n = grid
    while True:
        f = det_on_loop(model, E, mu, q, base, n)
        amin = int(np.argmin(np.abs(f)))
        if np.abs(f[amin]) < tol:
            t = 2.0 * np.pi * amin / n
            node = np.asarray(base, dtype=float) + t * np.asarray(q, dtype=float)
            raise OnSpectrumError(
                f"|det| = {np.abs(f[amin]):.3e} below tolerance {tol:.3e} at "
                f"loop node k = {node} (E = {E}, mu = {mu})", node=node)
        steps = np.angle(f[1:] / f[:-1])
        if np.max(np.abs(steps)) <= PHASE_STEP_LIMIT:
            total = steps.sum() / (2.0 * np.pi)
            w = int(round(total))
            if abs(total - w) > 0.05:
                raise RuntimeError(f"winding did not converge to an integer: {total}")
            return w
        if n >= cap:
            raise RuntimeError(
                f"phase refinement hit the cap ({cap} points) for E = {E}, mu = {mu}")
        n *= 2


def _loop_geometry(model, n_hat, k_perp):
    q = integer_direction(n_hat)
    k_perp = np.atleast_1d(np.asarray(k_perp, dtype=float))
    if k_perp.size != model.dim - 1:
        raise ValueError(f"k_perp must have {model.dim - 1} components, got {k_perp.size}")
    if model.dim == 1:
        base = np.array([-np.pi])
    else:
        base = k_perp @ perp_basis(q)
    return q, base


def winding(model: LaurentModel, query: WindingQuery) -> int:
    """Eigenenergy winding number along query.n_hat at transverse point k_perp."""
    q, base = _loop_geometry(model, query.n_hat, query.k_perp)
    return winding_loop(model, query.E, query.mu, q, base, grid=query.grid)


def winding_map(model, E_grid, mu, n_hat, k_perp=(), grid=DEFAULT_GRID) -> np.ndarray:
    """Winding evaluated over an array of reference energies.

    On-spectrum nodes are marked NaN (undefined) instead of failing the map.
    """
    E_grid = np.asarray(E_grid, dtype=complex)
    out = np.full(E_grid.shape, np.nan)
    it = np.nditer(E_grid, flags=["multi_index"])
    for E in it:
        try:
            out[it.multi_index] = winding(
                model, WindingQuery(complex(E), mu, n_hat, k_perp, grid))
        except (OnSpectrumError, RuntimeError):
            pass
    return out


def spectral_potential(model: LaurentModel, E: complex, mu, grid=None) -> float:
    """BZ average of log|det[E - H_mu(k)]| (uniform trapezoidal quadrature).

    For the paper's single-band models this matches the eigenvalue-sample form
    as both grids refine.
    """
    if grid is None:
        grid = DEFAULT_GRID if model.dim == 1 else 256
    axes = [np.linspace(-np.pi, np.pi, grid, endpoint=False)] * model.dim
    mesh = np.meshgrid(*axes, indexing="ij")
    ks = np.stack([m.ravel() for m in mesh], axis=-1)
    f = _det_grid(model, E, ks, mu)
    a = np.abs(f)
    if np.min(a) < det_tolerance(model):
        raise OnSpectrumError(f"spectral potential is -inf: E = {E} lies on the "
                              f"spectrum at mu = {mu}")
    return float(np.mean(np.log(a)))


def spectral_potential_samples(energies, E: complex) -> float:
    """Sample form: mean of log|E - E_v| over a measured eigenvalue list."""
    energies = np.asarray(energies, dtype=complex).ravel()
    d = np.abs(E - energies)
    if np.min(d) == 0.0:
        raise OnSpectrumError(f"E = {E} coincides with a sample eigenvalue")
    return float(np.mean(np.log(d)))


def winding_lines(model, E, mu, q, bases, grid=DEFAULT_GRID, cap=DEFAULT_CAP,
                  nudge=None) -> np.ndarray:
    """Windings along parallel loops base + t*q for a batch of base points.

    All lines share one k grid; lines that fail the phase-step criterion or
    pass within det-tolerance of a zero are retried individually (optionally
    at ``nudge``-shifted bases) before the error propagates.
    """
    bases = np.atleast_2d(np.asarray(bases, dtype=float))
    q = np.asarray(q, dtype=float)
    t = np.linspace(0.0, 2.0 * np.pi, grid + 1)
    ks = bases[:, None, :] + t[None, :, None] * q[None, None, :]
    f = _det_grid(model, E, ks, mu)
    tol = det_tolerance(model)
    steps = np.angle(f[:, 1:] / f[:, :-1])
    w = np.round(np.sum(steps, axis=1) / (2.0 * np.pi))
    bad = (np.max(np.abs(steps), axis=1) > PHASE_STEP_LIMIT) | \
          (np.min(np.abs(f), axis=1) < tol)
    for i in np.where(bad)[0]:
        try:
            w[i] = winding_loop(model, E, mu, q, bases[i], grid=2 * grid, cap=cap)
        except OnSpectrumError:
            if nudge is None:
                raise
            w[i] = winding_loop(model, E, mu, q, bases[i] + nudge, grid=2 * grid, cap=cap)
    return w


def axis_gradient_component(model, E, mu, axis, n_perp=64, grid=DEFAULT_GRID,
                            cap=DEFAULT_CAP) -> float:
    """One component of the potential gradient: k_perp-averaged winding along
    the given axis."""
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    if model.dim == 1:
        return float(winding_loop(model, E, mu, [1], [-np.pi], grid=grid, cap=cap))
    q = np.zeros(model.dim)
    q[axis] = 1.0
    pb = perp_basis(q)
    perp = np.linspace(-np.pi, np.pi, n_perp, endpoint=False)
    mesh = np.meshgrid(*([perp] * (model.dim - 1)), indexing="ij")
    kp_list = np.stack([mm.ravel() for mm in mesh], axis=-1)
    bases = kp_list @ pb
    shift = (np.pi / n_perp) * pb.sum(axis=0)
    w = winding_lines(model, E, mu, q.astype(int), bases, grid=grid, cap=cap, nudge=shift)
    return float(np.mean(w))


def potential_gradient(model, E, mu, n_perp=64, grid=DEFAULT_GRID,
                       check=False, check_tol=0.05) -> np.ndarray:
    """mu-gradient of the spectral potential from k_perp-averaged windings.

    Component m is the average of the winding along axis m over a uniform
    k_perp grid; in 1D this is the integer winding number itself.  With
    ``check=True`` the result is compared against central finite differences
    of the potential and a warning is emitted on disagreement.
    """
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    g = np.array([axis_gradient_component(model, E, mu, m, n_perp, grid)
                  for m in range(model.dim)])
    if check:
        fd = potential_gradient_fd(model, E, mu)
        if np.max(np.abs(g - fd)) > check_tol:
            warnings.warn(f"winding-average gradient {g} deviates from finite "
                          f"differences {fd} beyond {check_tol}", stacklevel=2)
    return g


def potential_gradient_fd(model, E, mu, step=1e-3, grid=None) -> np.ndarray:
    """Central finite differences of the spectral potential (oracle path)."""
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    g = np.zeros(model.dim)
    for m in range(model.dim):
        dm = np.zeros(model.dim)
        dm[m] = step
        g[m] = (spectral_potential(model, E, mu + dm, grid) -
                spectral_potential(model, E, mu - dm, grid)) / (2.0 * step)
    return g


def nbf_density_from_potential(phi: np.ndarray, spacing, neg_tol=0.05) -> np.ndarray:
    """5-point-stencil Laplacian of a potential field over a uniform complex-E
    grid, divided by 2 pi.  Boundary nodes are NaN."""
    phi = np.asarray(phi, dtype=float)
    hx, hy = (float(spacing), float(spacing)) if np.ndim(spacing) == 0 else map(float, spacing)
    rho = np.full(phi.shape, np.nan)
    lap = (phi[2:, 1:-1] + phi[:-2, 1:-1] - 2 * phi[1:-1, 1:-1]) / hx ** 2 \
        + (phi[1:-1, 2:] + phi[1:-1, :-2] - 2 * phi[1:-1, 1:-1]) / hy ** 2
    rho[1:-1, 1:-1] = lap / (2.0 * np.pi)
    interior = rho[1:-1, 1:-1]
    neg = interior[interior < 0]
    if neg.size and -neg.sum() * hx * hy > neg_tol:
        warnings.warn(f"NBF density has negative lobes (integrated {neg.sum() * hx * hy:.3g}); "
                      f"refine the E grid", stacklevel=2)
    return rho


def nbf_density(energies, re_grid, im_grid) -> np.ndarray:
    """NBF density on a rectangular complex-E grid from sampled eigenvalues.

    Computes the sample-form potential and its Laplacian / 2 pi; the result
    integrates to 1 over a region enclosing all eigenvalues.
    """
    energies = np.asarray(energies, dtype=complex).ravel()
    re_grid = np.asarray(re_grid, dtype=float)
    im_grid = np.asarray(im_grid, dtype=float)
    E = re_grid[:, None] + 1j * im_grid[None, :]
    d = np.abs(E[..., None] - energies[None, None, :])
    floor = 1e-3 * min(re_grid[1] - re_grid[0], im_grid[1] - im_grid[0])
    phi = np.mean(np.log(np.maximum(d, floor)), axis=-1)
    return nbf_density_from_potential(phi, (re_grid[1] - re_grid[0], im_grid[1] - im_grid[0]))


@dataclass(frozen=True)
class NBF:
    """A root of det[E - H_mu(k)] on the Brillouin zone with orientation sign."""

    k: np.ndarray
    sign: int
    residual: float


def _laurent_det_coeffs(model: LaurentModel, E: complex, radius: float):
    """Coefficients of det[E - H(beta)] as a polynomial in beta (lowest first),
    and the power of the beta^(-p) prefactor that was cleared."""
    offs = np.array(model.offsets)
    lo, hi = int(offs.min()) * model.n_orb, int(offs.max()) * model.n_orb
    if model.n_orb == 1:
        coeff = np.zeros(hi - lo + 1, dtype=complex)
        coeff[-lo] += E
        for (a,), c in model.coeffs.items():
            coeff[a - lo] -= c[0, 0]
        return coeff, -lo
    # multiband: sample det on a circle and interpolate by FFT
    m = hi - lo + 1
    th = 2.0 * np.pi * np.arange(m) / m
    ks = th[:, None]
    f = _det_grid(model, E, ks, np.log(radius))
    fhat = np.fft.ifft(f * np.exp(-1j * th * lo))
    return fhat * radius ** -(np.arange(m) + lo), -lo


def _find_nbfs_1d(model, E, mu, circle_tol):
    coeff, _ = _laurent_det_coeffs(model, E, radius=float(np.exp(mu[0])))
    coeff = np.trim_zeros(coeff, "b")
    roots = np.roots(coeff[::-1])
    scale = det_tolerance(model) / 1e-8
    dcoeff = coeff[1:] * np.arange(1, coeff.size)
    out = []
    for b in roots:
        if b == 0 or abs(abs(b) * np.exp(-mu[0]) - 1.0) > circle_tol:
            continue
        k = float(np.angle(b))
        res = abs(_det_grid(model, E, np.array([[k]]), mu)[0])
        # holomorphic simple roots circulate counterclockwise
        sign = 1 if abs(np.polyval(dcoeff[::-1], b)) > 1e-9 * scale else 0
        if sign == 0:
            warnings.warn(f"degenerate NBF at k = {k:.6f}", stacklevel=3)
        out.append(NBF(np.array([k]), sign, float(res)))
    out.sort(key=lambda r: r.k[0])
    return out


def _newton_2d(model, E, mu, k0, steps=50):
    offs = {alpha: np.asarray(alpha, dtype=float) for alpha in model.coeffs}
    k = np.asarray(k0, dtype=float).copy()
    eye = np.eye(model.n_orb)
    for _ in range(steps):
        h = eval_bloch_grid(model, k[None, :], mu)
        if model.n_orb == 1:
            f = E - complex(h[0])
            grad = np.zeros(2, dtype=complex)
            for alpha, c in model.coeffs.items():
                term = c[0, 0] * np.exp((1j * k + mu) @ offs[alpha])
                grad += -1j * offs[alpha] * term
        else:
            M = E * eye - h[0]
            f = np.linalg.det(M)
            Minv = np.linalg.inv(M)
            grad = np.zeros(2, dtype=complex)
            for alpha, c in model.coeffs.items():
                dH = 1j * offs[alpha][:, None, None] * \
                    (c * np.exp((1j * k + mu) @ offs[alpha]))[None, :, :]
                grad += np.array([f * np.trace(Minv @ (-dH[m])) for m in range(2)])
        J = np.array([[grad[0].real, grad[1].real],
                      [grad[0].imag, grad[1].imag]])
        det = np.linalg.det(J)
        if abs(det) < 1e-14:
            return None, None
        dk = np.linalg.solve(J, [-f.real, -f.imag])
        k = k + dk
        if np.linalg.norm(dk) < 1e-12:
            return k, J
    return None, None


def _find_nbfs_2d(model, E, mu, grid_n):
    k = np.linspace(-np.pi, np.pi, grid_n, endpoint=False)
    KX, KY = np.meshgrid(k, k, indexing="ij")
    ks = np.stack([KX.ravel(), KY.ravel()], axis=-1)
    F = _det_grid(model, E, ks, mu).reshape(grid_n, grid_n)
    R, I = F.real, F.imag

    def corners(A):
        return A, np.roll(A, -1, 0), np.roll(A, -1, 1), np.roll(np.roll(A, -1, 0), -1, 1)

    r00, r10, r01, r11 = corners(R)
    i00, i10, i01, i11 = corners(I)
    rmin = np.minimum.reduce([r00, r10, r01, r11])
    rmax = np.maximum.reduce([r00, r10, r01, r11])
    imin = np.minimum.reduce([i00, i10, i01, i11])
    imax = np.maximum.reduce([i00, i10, i01, i11])
    cand = np.argwhere((rmin < 0) & (rmax > 0) & (imin < 0) & (imax > 0))

    h = 2.0 * np.pi / grid_n
    tol = det_tolerance(model)
    roots = []
    dropped = 0
    for ci, cj in cand:
        k0 = np.array([k[ci] + h / 2, k[cj] + h / 2])
        sol, J = _newton_2d(model, E, mu, k0)
        if sol is None:
            dropped += 1
            continue
        sol = -((-sol + np.pi) % (2.0 * np.pi) - np.pi)
        dup = False
        for r in roots:
            dk = (sol - r.k + np.pi) % (2.0 * np.pi) - np.pi
            if np.linalg.norm(dk) < 1e-4:
                dup = True
                break
        if dup:
            continue
        res = abs(_det_grid(model, E, sol[None, :], mu)[0]) if model.n_orb == 1 else \
            abs(np.linalg.det(E * np.eye(model.n_orb) - eval_bloch_grid(model, sol[None, :], mu)[0]))
        detJ = np.linalg.det(J)
        if abs(detJ) < 1e-12 * (tol / 1e-8) ** 2:
            warnings.warn(f"tangential NBF at k = {sol}", stacklevel=3)
            sign = 0
        else:
            sign = int(np.sign(detJ))
        roots.append(NBF(sol, sign, float(res)))
    if dropped:
        warnings.warn(f"{dropped} NBF candidates dropped (Newton non-convergence)",
                      stacklevel=3)
    roots.sort(key=lambda r: tuple(r.k))
    return roots


def find_nbfs(model: LaurentModel, E: complex, mu, grid_n=256, circle_tol=0.05):
    """Non-Bloch Fermi points: roots of det[E - H_mu(k)] = 0 over the BZ.

    1D uses companion-matrix roots of the cleared Laurent polynomial kept
    within ``circle_tol`` of the circle |beta| = exp(mu); 2D uses sign-change
    cells on a ``grid_n``-squared mesh polished by Newton iteration.
    """
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    if model.dim == 1:
        return _find_nbfs_1d(model, E, mu, circle_tol)
    if model.dim == 2:
        return _find_nbfs_2d(model, E, mu, grid_n)
    raise NotImplementedError("NBF search implemented for d <= 2")


def self_intersections(ks, energies, tol=1e-9):
    """Self-intersections of a spectral curve E(k) sampled along one mu slice.

    ``ks`` must be ordered; the curve is closed through the last-to-first
    segment.  Returns a list of (E_cross, k_1, k_2) with k_1 < k_2; pairs
    closer than ``tol`` in energy to an already found crossing are merged.
    """
    ks = np.asarray(ks, dtype=float)
    E = np.asarray(energies, dtype=complex)
    n = ks.size
    P = np.column_stack([E.real, E.imag])
    Q = np.roll(P, -1, axis=0)
    dk = np.diff(np.concatenate([ks, [ks[0] + 2.0 * np.pi]]))
    found = []
    for i in range(n - 2):
        a, d1 = P[i], Q[i] - P[i]
        j0 = i + 2
        j1 = n if i > 0 else n - 1
        if j0 >= j1:
            continue
        js = np.arange(j0, j1)
        c = P[js]
        d2 = Q[js] - c
        denom = d1[0] * d2[:, 1] - d1[1] * d2[:, 0]
        ok = np.abs(denom) > 1e-300
        rel = c - a
        t = np.where(ok, (rel[:, 0] * d2[:, 1] - rel[:, 1] * d2[:, 0]) / np.where(ok, denom, 1.0), -1)
        u = np.where(ok, (rel[:, 0] * d1[1] - rel[:, 1] * d1[0]) / np.where(ok, denom, 1.0), -1)
        hits = np.where(ok & (t >= 0) & (t < 1) & (u >= 0) & (u < 1))[0]
        for hh in hits:
            j = js[hh]
            k1 = ks[i] + t[hh] * dk[i]
            k2 = ks[j] + u[hh] * dk[j]
            Ec = complex(*(a + t[hh] * d1))
            if any(abs(Ec - f[0]) <= tol for f in found):
                continue
            found.append((Ec, min(k1, k2), max(k1, k2)))
    return found
