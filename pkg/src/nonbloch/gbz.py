"""Spectral-potential minimization over mu and OBC spectrum prediction.

The minimizer mirrors the measurement workflow: a BFGS quasi-Newton search
driven by the k_perp-averaged winding gradient, with a backtracking line
search on the potential itself.  Because the gradient is quantized (integers
per transverse line), the search terminates either on a vanishing averaged
gradient (plateau) or on shrinking steps against a finite gradient (cusp);
a final per-axis bisection centers mu_min on the flat minimum set, which for
near-OBC energies collapses to the cusp point.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from concurrent.futures import ThreadPoolExecutor

from .model import LaurentModel, eval_bloch_grid
from .diagnostics import (OnSpectrumError, axis_gradient_component, find_nbfs,
                          potential_gradient, spectral_potential)

__all__ = ["Verdict", "MuSearchResult", "GBZPoint", "minimize_potential",
           "classify_energy", "predict_obc_spectrum", "saddle_points",
           "candidate_energy_grid"]

G_STOP = 1e-3
STEP_STOP = 1e-4
MAX_ITER = 100
RING_RADIUS = 0.05
G_TOL = 0.1


class Verdict(Enum):
    CUSP_OBC = "CUSP_OBC"
    PLATEAU_EXCLUDED = "PLATEAU_EXCLUDED"
    INCONCLUSIVE = "INCONCLUSIVE"


@dataclass
class MuSearchResult:
    E: complex
    mu_min: np.ndarray
    phi_min: float
    trajectory: list = field(default_factory=list)
    verdict: Verdict = Verdict.INCONCLUSIVE
    flat_halfwidth: np.ndarray | None = None
    ring_mu: np.ndarray | None = None
    ring_g: np.ndarray | None = None


@dataclass
class GBZPoint:
    """OBC energy with its minimizing mu and the NBF momenta there."""

    E: complex
    mu: np.ndarray
    k_points: list


def _phi_robust(model, E, mu, grid, perturb=1e-4):
    """Potential evaluation with deterministic retries off the spectrum."""
    offsets = [0.0, perturb, -perturb, 3 * perturb, -3 * perturb, 10 * perturb]
    for off in offsets:
        try:
            return spectral_potential(model, E, mu + off, grid)
        except OnSpectrumError:
            continue
    raise OnSpectrumError(f"potential evaluation kept hitting the spectrum near mu = {mu}")


def _grad_robust(model, E, mu, n_perp, grid, perturb=1e-4):
    offsets = [0.0, perturb, -perturb, 3 * perturb, -3 * perturb, 10 * perturb]
    for off in offsets:
        try:
            return potential_gradient(model, E, mu + off, n_perp=n_perp, grid=grid)
        except (OnSpectrumError, RuntimeError):
            continue
    raise OnSpectrumError(f"gradient evaluation kept hitting the spectrum near mu = {mu}")


def _axis_edges(model, E, center, axis, n_perp, grid, span=0.4, iters=12):
    """Bisect the boundaries of the {g_axis <= 0} / {g_axis >= 0} transition
    around ``center`` along one axis; returns (left, right) in axis coordinate.

    For a potential with a flat minimum set the two edges bracket it; at a
    cusp they collapse to the kink location.  Gradient-on-spectrum hits are
    retried at slightly shifted points (the edge itself is on-spectrum).
    """
    def g_at(x):
        mu = center.copy()
        for off in (0.0, 7e-4, -7e-4, 2.3e-3, -2.3e-3, 6e-3, -6e-3):
            mu[axis] = x + off
            try:
                return axis_gradient_component(model, E, mu, axis, n_perp, grid,
                                               cap=8192)
            except (OnSpectrumError, RuntimeError):
                continue
        return None

    x0 = center[axis]
    lo, hi = x0 - span, x0 + span
    glo, ghi = g_at(lo), g_at(hi)
    if glo is None or ghi is None:
        return None
    if glo >= 0 or ghi <= 0:
        # minimum not bracketed within span; widen once
        lo, hi = x0 - 2 * span, x0 + 2 * span
        glo, ghi = g_at(lo), g_at(hi)
        if glo is None or ghi is None or glo >= 0 or ghi <= 0:
            return None

    def bisect(keep_left):
        a, b = lo, hi
        for _ in range(iters):
            mid = 0.5 * (a + b)
            gm = g_at(mid)
            if gm is None:
                return None
            if (gm < 0) if keep_left else (gm <= 0):
                a = mid
            else:
                b = mid
        return 0.5 * (a + b)

    left = bisect(True)
    right = bisect(False)
    if left is None or right is None or right < left - 1e-6:
        return None
    return left, right


def minimize_potential(model: LaurentModel, E: complex, mu0=None, n_perp=64,
                       grid=None, g_stop=G_STOP, step_stop=STEP_STOP,
                       max_iter=MAX_ITER) -> MuSearchResult:
    """Locate mu_min of the spectral potential for reference energy E.

    BFGS with the averaged-winding gradient and a backtracking line search,
    started from the PBC point mu = 0 unless ``mu0`` is given.  After the
    search terminates the flat minimum set is bisected per axis and mu_min is
    reported as its center, with half-widths recorded.
    """
    d = model.dim
    if grid is None:
        grid = 512 if d == 1 else 256
    phi_grid = grid if d == 1 else 128
    x = np.zeros(d) if mu0 is None else np.atleast_1d(np.asarray(mu0, dtype=float)).copy()
    traj = []
    try:
        phi = _phi_robust(model, E, x, phi_grid)
        g = _grad_robust(model, E, x, n_perp, grid)
    except OnSpectrumError:
        return MuSearchResult(E, x, np.nan, traj, Verdict.INCONCLUSIVE)
    traj.append((x.copy(), phi, g.copy()))

    H = 0.1 * np.eye(d)
    cusp_like = False
    for _ in range(max_iter):
        if np.linalg.norm(g) < g_stop:
            break
        p = -H @ g
        alpha, accepted = 1.0, False
        for _ in range(40):
            try:
                phi_new = _phi_robust(model, E, x + alpha * p, phi_grid)
            except OnSpectrumError:
                alpha *= 0.5
                continue
            if phi_new < phi:
                accepted = True
                break
            alpha *= 0.5
        if not accepted or alpha * np.linalg.norm(p) < step_stop:
            cusp_like = np.linalg.norm(g) >= g_stop
            break
        s = alpha * p
        x_new = x + s
        try:
            g_new = _grad_robust(model, E, x_new, n_perp, grid)
        except OnSpectrumError:
            x, phi = x_new, phi_new
            traj.append((x.copy(), phi, g.copy()))
            cusp_like = True
            break
        y = g_new - g
        sy = s @ y
        if sy > 1e-12:
            rho = 1.0 / sy
            I = np.eye(d)
            H = (I - rho * np.outer(s, y)) @ H @ (I - rho * np.outer(y, s)) \
                + rho * np.outer(s, s)
        x, phi, g = x_new, phi_new, g_new
        traj.append((x.copy(), phi, g.copy()))

    # center on the flat minimum set (possibly degenerate = cusp point)
    halfwidth = np.zeros(d)
    center = x.copy()
    for _ in range(2 if d > 1 else 1):
        moved = False
        for axis in range(d):
            edges = _axis_edges(model, E, center, axis, n_perp, grid)
            if edges is None:
                continue
            left, right = edges
            new = 0.5 * (left + right)
            if abs(new - center[axis]) > 1e-12:
                moved = True
            center[axis] = new
            halfwidth[axis] = 0.5 * (right - left)
        if not moved:
            break
    try:
        phi_min = _phi_robust(model, E, center, phi_grid)
    except OnSpectrumError:
        phi_min = phi
    hint = Verdict.CUSP_OBC if cusp_like else Verdict.INCONCLUSIVE
    return MuSearchResult(E, center, phi_min, traj, hint, flat_halfwidth=halfwidth)


def classify_energy(model: LaurentModel, E: complex, ring_radius=RING_RADIUS,
                    g_tol=G_TOL, n_perp=64, grid=None, mu0=None) -> MuSearchResult:
    """OBC membership verdict for E from the ring-gradient test around mu_min.

    CUSP_OBC: every ring sample has |g| >= g_tol with the descent direction
    pointing at the minimizer.  PLATEAU_EXCLUDED: a connected arc of ring
    samples has |g| < g_tol.  Anything else: INCONCLUSIVE.
    """
    res = minimize_potential(model, E, mu0=mu0, n_perp=n_perp, grid=grid)
    if not np.all(np.isfinite(res.mu_min)) or not np.isfinite(res.phi_min):
        res.verdict = Verdict.INCONCLUSIVE
        return res
    d = model.dim
    if d == 1:
        ring = np.array([[-ring_radius], [ring_radius]])
    else:
        ang = 2.0 * np.pi * np.arange(8) / 8
        ring = np.zeros((8, d))
        ring[:, 0] = ring_radius * np.cos(ang)
        ring[:, 1] = ring_radius * np.sin(ang)
    wgrid = grid if grid is not None else (512 if d == 1 else 256)
    gs, ok = [], []
    for dmu in ring:
        try:
            gs.append(_grad_robust(model, E, res.mu_min + dmu, n_perp, wgrid))
            ok.append(True)
        except OnSpectrumError:
            gs.append(np.full(d, np.nan))
            ok.append(False)
    gs = np.array(gs)
    res.ring_mu = res.mu_min + ring
    res.ring_g = gs
    if not all(ok):
        res.verdict = Verdict.INCONCLUSIVE
        return res
    norms = np.linalg.norm(gs, axis=1)
    toward = np.einsum("ij,ij->i", gs, ring) > 0
    low = norms < g_tol
    if np.all(~low) and np.all(toward):
        res.verdict = Verdict.CUSP_OBC
    elif _has_connected_arc(low, min_len=1 if d == 1 else 2):
        res.verdict = Verdict.PLATEAU_EXCLUDED
    else:
        res.verdict = Verdict.INCONCLUSIVE
    return res


def _has_connected_arc(flags, min_len):
    if not np.any(flags):
        return False
    if min_len <= 1:
        return True
    n = flags.size
    run = 0
    # cyclic run length
    doubled = np.concatenate([flags, flags])
    best = 0
    for v in doubled:
        run = run + 1 if v else 0
        best = max(best, run)
    return min(best, n) >= min_len


def candidate_energy_grid(model: LaurentModel, spacing=0.25, mu_range=(-0.35, 0.55),
                          mu_step=0.05, pad=0.4, k_samples=256) -> np.ndarray:
    """Rectangular complex-E grid restricted to the sampled spectral manifold.

    The manifold cloud is the union of band energies over a mu scan (equal
    components along the diagonal in d > 1); grid nodes farther than ``pad``
    from every cloud point are discarded.  OBC spectra always lie on the
    manifold, so the restriction loses nothing at pad >= spacing.
    """
    mus = np.arange(mu_range[0], mu_range[1] + 1e-12, mu_step)
    axes = [np.linspace(-np.pi, np.pi, k_samples, endpoint=False)] * model.dim
    mesh = np.meshgrid(*axes, indexing="ij")
    ks = np.stack([m.ravel() for m in mesh], axis=-1)
    cloud = []
    for mu in mus:
        h = eval_bloch_grid(model, ks, np.full(model.dim, mu))
        if model.n_orb == 1:
            cloud.append(h.ravel())
        else:
            cloud.append(np.linalg.eigvals(h).ravel())
    cloud = np.concatenate(cloud)
    re = np.arange(np.floor(cloud.real.min() - 1), np.ceil(cloud.real.max() + 1), spacing)
    im = np.arange(np.floor(cloud.imag.min() - 1), np.ceil(cloud.imag.max() + 1), spacing)
    E = (re[:, None] + 1j * im[None, :]).ravel()
    keep = np.zeros(E.size, dtype=bool)
    block = 4096
    for i in range(0, E.size, block):
        d = np.abs(E[i:i + block, None] - cloud[None, :])
        keep[i:i + block] = d.min(axis=1) < pad
    return E[keep]


def predict_obc_spectrum(model: LaurentModel, E_candidates, nbf_tol=0.1,
                         workers=1, **classify_kwargs) -> list:
    """Filter candidate energies to CUSP_OBC verdicts and attach their NBFs.

    Candidates typically come from ``candidate_energy_grid``; per-energy
    searches run on ``workers`` threads and results keep candidate order.
    """
    cands = [complex(E) for E in np.asarray(E_candidates, dtype=complex).ravel()]

    def one(E):
        res = classify_energy(model, E, **classify_kwargs)
        if res.verdict is not Verdict.CUSP_OBC:
            return None
        nbfs = find_nbfs(model, E, res.mu_min, circle_tol=nbf_tol)
        return GBZPoint(E, res.mu_min, [r.k for r in nbfs])

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, cands))
    else:
        results = [one(E) for E in cands]
    return [r for r in results if r is not None]


def saddle_points(model: LaurentModel, gbz_points, n_bins=64, rel_threshold=0.2):
    """Vanishing-dE/dk points along a 1D GBZ parameterized by k.

    The (k, E) samples carry transverse noise from the candidate-grid
    quantization, so the curve is first resampled onto uniform k bins; central
    differences on the binned curve locate |dE/dk| minima and a local
    quadratic fit refines each saddle.  Bins are cyclic in k; bins without
    samples are skipped.
    """
    if model.dim != 1:
        raise NotImplementedError("saddle detection is implemented for 1D GBZs")
    pairs = []
    for pt in gbz_points:
        for k in pt.k_points:
            pairs.append((float(np.atleast_1d(k)[0]), pt.E, float(np.atleast_1d(pt.mu)[0])))
    if len(pairs) < 7:
        return []
    ks = np.array([p[0] for p in pairs])
    Es = np.array([p[1] for p in pairs])
    mus = np.array([p[2] for p in pairs])
    idx = np.floor((ks + np.pi) / (2.0 * np.pi) * n_bins).astype(int) % n_bins
    kb, Eb, mb = [], [], []
    for b in range(n_bins):
        sel = idx == b
        if not np.any(sel):
            continue
        kb.append(np.mean(ks[sel]))
        Eb.append(np.mean(Es[sel]))
        mb.append(np.mean(mus[sel]))
    kb, Eb, mb = np.array(kb), np.array(Eb), np.array(mb)
    order = np.argsort(kb)
    kb, Eb, mb = kb[order], Eb[order], mb[order]
    n = kb.size
    if n < 5:
        return []
    # a closed GBZ covers the whole k circle; a large wrap gap means an open arc
    wrap_gap = (kb[0] + 2 * np.pi) - kb[-1]
    closed = wrap_gap < 3 * (2 * np.pi / n_bins)
    if closed:
        k_ext = np.concatenate([[kb[-1] - 2 * np.pi], kb, [kb[0] + 2 * np.pi]])
        E_ext = np.concatenate([[Eb[-1]], Eb, [Eb[0]]])
    else:
        k_ext = np.concatenate([[kb[0]], kb, [kb[-1]]])
        E_ext = np.concatenate([[Eb[0]], Eb, [Eb[-1]]])
    dE = (E_ext[2:] - E_ext[:-2]) / np.where(
        k_ext[2:] > k_ext[:-2], k_ext[2:] - k_ext[:-2], 1.0)
    speed = np.abs(dE)
    thresh = rel_threshold * np.median(speed)
    out = []
    for i in range(n):
        if not closed and i in (0, n - 1):
            if speed[i] <= thresh:
                warnings.warn(f"saddle candidate at the open-arc endpoint "
                              f"k = {kb[i]:.4f}", stacklevel=2)
            continue
        prev_i, next_i = (i - 1) % n, (i + 1) % n
        if not (speed[i] <= speed[prev_i] and speed[i] <= speed[next_i]):
            continue
        if speed[i] > thresh:
            continue
        lo = [(i + off) % n for off in (-2, -1, 0, 1, 2)]
        kk = np.unwrap(kb[lo], period=2 * np.pi)
        ee = Eb[lo]
        coef = np.polyfit(kk - kk[2], ee, 2)
        k_star = kk[2] + ((-coef[1] / (2 * coef[0])).real if abs(coef[0]) > 1e-12 else 0.0)
        if not (kk[0] <= k_star <= kk[-1]):
            k_star = kk[2]
        E_star = np.polyval(coef, k_star - kk[2])
        k_star = float(-((-k_star + np.pi) % (2 * np.pi) - np.pi))
        out.append((complex(E_star), k_star, float(mb[i])))
    # merge plateaus of adjacent minima
    merged = []
    for cand in sorted(out, key=lambda t: t[1]):
        if merged and abs(cand[0] - merged[-1][0]) < 0.5 and \
                abs(cand[1] - merged[-1][1]) < 4 * np.pi / n_bins:
            continue
        merged.append(cand)
    return merged
