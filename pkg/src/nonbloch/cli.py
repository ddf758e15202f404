"""Batch command-line front end.

Every command writes plot-ready CSV artifacts plus a JSON sidecar carrying the
fully resolved configuration, package version, and numeric conventions; a
sidecar re-runs byte-identically via ``nonbloch rerun sidecar.json``.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .model import get_model, reduce_angle
from .supercell import Mode, default_twist_grid, sweep_bz
from .diagnostics import (WindingQuery, find_nbfs, potential_gradient,
                          spectral_potential, winding_map, OnSpectrumError)
from .gbz import (Verdict, candidate_energy_grid, classify_energy,
                  minimize_potential, predict_obc_spectrum, saddle_points)
from .obc import (build_finite, diagonalize_obc, dos, extract_from_greens, flt,
                  greens, hotspot, skin_profile)

CONVENTIONS = {
    "monomial": "H(beta) = sum_alpha c_alpha beta^alpha, beta = exp(i k + mu); "
                "hopping t_delta = c_{-delta}",
    "winding": "w = unwrapped phase of det[E - H_mu(k)] / 2 pi along the loop "
               "with increasing parameter; equals d(phi)/d(mu)",
    "nbf_sign": "+1 = positive Jacobian det of (Re f, Im f) wrt (k_x, k_y) "
                "= counterclockwise phase circulation; 1D simple roots are +1",
    "flt_contrast": "hotspots use |psi_tilde| normalized per s slice by "
                    "||exp(-s.r) psi||_2",
}


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if x != x:  # NaN
        return "nan"
    return format(float(x), ".17g")


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _write_sidecar(path: Path, command: str, cfg: dict, artifacts) -> None:
    doc = {"command": command, "config": cfg, "version": __version__,
           "conventions": CONVENTIONS, "artifacts": [p.name for p in artifacts]}
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)


def _floats(text: str, name: str):
    try:
        return [float(t) for t in str(text).split(",") if t != ""]
    except ValueError:
        raise ValueError(f"config field '{name}' must be comma-separated numbers, "
                         f"got {text!r}")


def _ints(text: str, name: str):
    try:
        return [int(t) for t in str(text).split(",") if t != ""]
    except ValueError:
        raise ValueError(f"config field '{name}' must be comma-separated integers, "
                         f"got {text!r}")


def _energy(cfg) -> complex:
    vals = _floats(cfg["energy"], "energy")
    if len(vals) != 2:
        raise ValueError("config field 'energy' must be 're,im'")
    return complex(vals[0], vals[1])


def _geometry(cfg):
    geoms = [k for k in ("chain", "rect", "parallelogram", "mask") if cfg.get(k)]
    if len(geoms) != 1:
        raise ValueError("exactly one of the geometry fields chain / rect / "
                         "parallelogram / mask is required")
    key = geoms[0]
    if key == "chain":
        return {"chain": int(cfg["chain"])}
    if key == "rect":
        return {"rect": _ints(cfg["rect"], "rect")}
    if key == "parallelogram":
        return {"parallelogram": _ints(cfg["parallelogram"], "parallelogram")}
    with open(cfg["mask"]) as fh:
        return {"mask": json.load(fh)["sites"]}


def _workers(cfg) -> int:
    if cfg.get("threads"):
        return int(cfg["threads"])
    return int(os.environ.get("NONBLOCH_THREADS", "1"))


def cmd_sweep(cfg, outdir: Path):
    model = get_model(cfg["model"])
    sizes = _ints(cfg["sizes"], "sizes")
    mu = _floats(cfg["mu"], "mu")
    n_twists = int(cfg.get("twists", 16))
    mode = Mode(cfg.get("mode", "diluted"))
    if len(sizes) != model.dim or len(mu) != model.dim:
        raise ValueError(f"config fields 'sizes'/'mu' must have {model.dim} components")
    per_axis = default_twist_grid(n_twists)
    import itertools
    grid = [np.array(t) for t in itertools.product(per_axis, repeat=model.dim)]
    samples = sweep_bz(model, sizes, mu, grid, mode)
    rows = []
    for s in samples:
        for b in range(s.energies.size):
            rows.append(list(s.k) + list(s.mu) +
                        [s.energies[b].real, s.energies[b].imag,
                         s.bloch_weight[b], b])
    d = model.dim
    header = [f"k_{i+1}" for i in range(d)] + [f"mu_{i+1}" for i in range(d)] + \
        ["re_e", "im_e", "bloch_weight", "band_index"]
    out = outdir / f"{cfg['prefix']}_samples.csv"
    _write_csv(out, header, rows)
    return [out]


def cmd_winding_map(cfg, outdir: Path):
    model = get_model(cfg["model"])
    mu = _floats(cfg["mu"], "mu")
    n_hat = _floats(cfg.get("nhat", "1" + ",0" * (model.dim - 1)), "nhat")
    k_perp = _floats(cfg.get("kperp", ""), "kperp")
    re = _floats(cfg["re"], "re")
    im = _floats(cfg["im"], "im")
    if len(re) != 3 or len(im) != 3:
        raise ValueError("config fields 're'/'im' must be 'min,max,step'")
    res = np.arange(re[0], re[1] + 1e-12, re[2])
    ims = np.arange(im[0], im[1] + 1e-12, im[2])
    E = res[:, None] + 1j * ims[None, :]
    W = winding_map(model, E, mu, n_hat, k_perp, grid=int(cfg.get("grid", 512)))
    rows = [[E[i, j].real, E[i, j].imag, W[i, j]]
            for i in range(E.shape[0]) for j in range(E.shape[1])]
    out = outdir / f"{cfg['prefix']}_winding.csv"
    _write_csv(out, ["re_e", "im_e", "w"], rows)
    return [out]


def cmd_potential(cfg, outdir: Path):
    model = get_model(cfg["model"])
    E = _energy(cfg)
    span = _floats(cfg.get("mu_axis", "-0.3,0.4,0.02"), "mu-axis")
    if len(span) != 3:
        raise ValueError("config field 'mu-axis' must be 'min,max,step'")
    axis = np.arange(span[0], span[1] + 1e-12, span[2])
    import itertools
    rows = []
    for mus in itertools.product(axis, repeat=model.dim):
        mu = np.array(mus)
        try:
            phi = spectral_potential(model, E, mu)
            g = potential_gradient(model, E, mu)
        except (OnSpectrumError, RuntimeError):
            phi, g = np.nan, np.full(model.dim, np.nan)
        rows.append(list(mu) + [phi] + list(g))
    d = model.dim
    header = [f"mu_{i+1}" for i in range(d)] + ["phi"] + [f"g_{i+1}" for i in range(d)]
    out = outdir / f"{cfg['prefix']}_potential.csv"
    _write_csv(out, header, rows)
    return [out]


def cmd_nbf(cfg, outdir: Path):
    model = get_model(cfg["model"])
    E = _energy(cfg)
    mu = _floats(cfg["mu"], "mu")
    roots = find_nbfs(model, E, mu, grid_n=int(cfg.get("grid_n", 256)),
                      circle_tol=float(cfg.get("circle_tol", 0.05)))
    rows = [list(r.k) + [r.sign, r.residual] for r in roots]
    header = [f"k_{i+1}" for i in range(model.dim)] + ["sign", "residual"]
    out = outdir / f"{cfg['prefix']}_nbf.csv"
    _write_csv(out, header, rows)
    return [out]


def cmd_gbz(cfg, outdir: Path):
    model = get_model(cfg["model"])
    arts = []
    if cfg.get("energy"):
        E = _energy(cfg)
        res = classify_energy(model, E, ring_radius=float(cfg.get("ring_radius", 0.05)),
                              g_tol=float(cfg.get("g_tol", 0.1)))
        doc = {
            "energy": [E.real, E.imag],
            "verdict": res.verdict.value,
            "mu_min": [float(v) for v in res.mu_min],
            "phi_min": None if not np.isfinite(res.phi_min) else float(res.phi_min),
            "flat_halfwidth": [float(v) for v in res.flat_halfwidth]
            if res.flat_halfwidth is not None else None,
            "trajectory": [{"mu": [float(v) for v in mu], "phi": float(phi),
                            "g": [float(v) for v in g]}
                           for mu, phi, g in res.trajectory],
        }
        out = outdir / f"{cfg['prefix']}_verdict.json"
        with open(out, "w") as fh:
            json.dump(doc, fh, indent=1, sort_keys=True)
        arts.append(out)
        if res.verdict is Verdict.CUSP_OBC:
            roots = find_nbfs(model, E, res.mu_min,
                              circle_tol=float(cfg.get("circle_tol", 0.1)))
            rows = [list(r.k) + [r.sign, r.residual] for r in roots]
            header = [f"k_{i+1}" for i in range(model.dim)] + ["sign", "residual"]
            path = outdir / f"{cfg['prefix']}_nbf.csv"
            _write_csv(path, header, rows)
            arts.append(path)
        return arts
    # grid mode: assemble the OBC spectrum and GBZ over an automatic grid
    cands = candidate_energy_grid(model, spacing=float(cfg.get("spacing", 0.25)))
    points = predict_obc_spectrum(
        model, cands, workers=_workers(cfg),
        ring_radius=float(cfg.get("ring_radius", 0.05)),
        g_tol=float(cfg.get("g_tol", 0.1)))
    d = model.dim
    rows = []
    for p in points:
        for k in p.k_points:
            rows.append([p.E.real, p.E.imag] + list(np.atleast_1d(k)) + list(p.mu))
    header = ["re_e", "im_e"] + [f"k_{i+1}" for i in range(d)] + \
        [f"mu_{i+1}" for i in range(d)]
    path = outdir / f"{cfg['prefix']}_gbz.csv"
    _write_csv(path, header, rows)
    arts.append(path)
    if d == 1:
        sad = saddle_points(model, points)
        path = outdir / f"{cfg['prefix']}_saddles.csv"
        _write_csv(path, ["re_e", "im_e", "k", "mu"],
                   [[s[0].real, s[0].imag, s[1], s[2]] for s in sad])
        arts.append(path)
    return arts


def cmd_obc(cfg, outdir: Path):
    model = get_model(cfg["model"])
    lat = build_finite(model, _geometry(cfg))
    energies, right, _ = diagonalize_obc(lat)
    order = np.lexsort((energies.imag, energies.real))
    arts = []
    path = outdir / f"{cfg['prefix']}_spectrum.csv"
    _write_csv(path, ["re_e", "im_e"],
               [[energies[i].real, energies[i].imag] for i in order])
    arts.append(path)
    dens = skin_profile(right, lat.n_orb)
    d = lat.sites.shape[1]
    path = outdir / f"{cfg['prefix']}_skin.csv"
    _write_csv(path, [f"r_{i+1}" for i in range(d)] + ["weight"],
               [list(lat.sites[i]) + [dens[i]] for i in range(lat.n_sites)])
    arts.append(path)
    path = outdir / f"{cfg['prefix']}_geometry.json"
    with open(path, "w") as fh:
        json.dump({"sites": [list(map(int, s)) for s in lat.sites]}, fh,
                  sort_keys=True)
    arts.append(path)
    if cfg.get("dos_im"):
        lines = _floats(cfg["dos_im"], "dos-im")
        span = _floats(cfg.get("dos_re", ""), "dos-re") if cfg.get("dos_re") else None
        if span is None:
            lo = float(np.floor(energies.real.min() - 3))
            hi = float(np.ceil(energies.real.max() + 3))
            span = [lo, hi, 0.02]
        re = np.arange(span[0], span[1] + 1e-12, span[2])
        rows = []
        for c in lines:
            rho = dos(energies, re, c)
            rows.extend([[c, re[i], rho[i]] for i in range(re.size)])
        path = outdir / f"{cfg['prefix']}_dos.csv"
        _write_csv(path, ["im_e", "re_e", "rho"], rows)
        arts.append(path)
    return arts


def cmd_greens(cfg, outdir: Path):
    model = get_model(cfg["model"])
    lat = build_finite(model, _geometry(cfg))
    probes_re = _floats(cfg.get("probe_re", ""), "probe-re") if cfg.get("probe_re") else None
    if probes_re is None:
        ev = np.linalg.eigvals(lat.hamiltonian)
        lo, hi = ev.real.min() - 2, ev.real.max() + 2
        n = 64
    else:
        if len(probes_re) != 3:
            raise ValueError("config field 'probe-re' must be 'min,max,count'")
        lo, hi, n = probes_re[0], probes_re[1], int(probes_re[2])
    imc = float(cfg.get("probe_im", 2.0))
    noise = float(cfg.get("noise", 0.0))
    seed = int(cfg.get("seed", 0))
    rng = np.random.default_rng(seed)
    gmats = []
    for re in np.linspace(lo, hi, n):
        try:
            gmats.append(greens(lat, complex(re, imc), noise=noise, rng=rng))
        except ValueError as exc:
            print(f"warning: {exc}", file=sys.stderr)
    energies, _ = extract_from_greens(gmats)
    order = np.lexsort((energies.imag, energies.real))
    path = outdir / f"{cfg['prefix']}_extracted.csv"
    _write_csv(path, ["re_e", "im_e"],
               [[energies[i].real, energies[i].imag] for i in order])
    return [path]


def cmd_flt(cfg, outdir: Path):
    model = get_model(cfg["model"])
    lat = build_finite(model, _geometry(cfg))
    E = _energy(cfg)
    energies, right, _ = diagonalize_obc(lat)
    pick = int(np.argmin(np.abs(energies - E)))
    state = right[:, pick]
    span = _floats(cfg.get("s_range", "0.0,0.6,0.02"), "s-range")
    if len(span) != 3:
        raise ValueError("config field 's-range' must be 'min,max,step'")
    svals = np.arange(span[0], span[1] + 1e-12, span[2])
    d = model.dim
    s_stack = np.repeat(svals[:, None], d, axis=1)  # diagonal s_x = .. = s_d
    nk = int(cfg.get("nk", 96))
    axes = [np.linspace(-np.pi, np.pi, nk, endpoint=False)] * d
    field = flt(lat, state, s_stack, axes)
    arts = []
    rows = []
    mesh = np.meshgrid(*axes, indexing="ij")
    flatk = [mm.ravel() for mm in mesh]
    for i, s in enumerate(svals):
        amp = np.abs(field.field[i]).ravel()
        ph = np.angle(field.field[i]).ravel()
        con = field.contrast[i].ravel()
        for j in range(amp.size):
            rows.append([s] + [fk[j] for fk in flatk] + [amp[j], ph[j], con[j]])
    header = ["s"] + [f"k_{i+1}" for i in range(d)] + ["abs", "arg", "contrast"]
    path = outdir / f"{cfg['prefix']}_flt.csv"
    _write_csv(path, header, rows)
    arts.append(path)
    spots = hotspot(field)
    rows = [[sp[0][0]] + list(sp[1]) + [sp[2]] for sp in spots]
    path = outdir / f"{cfg['prefix']}_hotspots.csv"
    _write_csv(path, ["s"] + [f"k_{i+1}" for i in range(d)] + ["rel"], rows)
    arts.append(path)
    doc = {"picked_energy": [energies[pick].real, energies[pick].imag],
           "target_energy": [E.real, E.imag]}
    path = outdir / f"{cfg['prefix']}_state.json"
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
    arts.append(path)
    return arts


COMMANDS = {
    "sweep": cmd_sweep,
    "winding-map": cmd_winding_map,
    "potential": cmd_potential,
    "nbf": cmd_nbf,
    "gbz": cmd_gbz,
    "obc": cmd_obc,
    "greens": cmd_greens,
    "flt": cmd_flt,
}


def run(command: str, cfg: dict, outdir) -> list:
    """Dispatch one command; returns artifact paths (sidecar last)."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    cfg = dict(cfg)
    cfg.setdefault("prefix", command.replace("-", "_"))
    artifacts = COMMANDS[command](cfg, outdir)
    sidecar = outdir / f"{cfg['prefix']}_run.json"
    _write_sidecar(sidecar, command, cfg, artifacts)
    return artifacts + [sidecar]


def _add_common(p):
    p.add_argument("--model", required=True,
                   help="built-in name (fig2-1d, fig3-2d) or model JSON path")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--prefix", default=None, help="artifact filename prefix")
    p.add_argument("--threads", default=None,
                   help="worker count (default: NONBLOCH_THREADS or 1)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nonbloch",
                                 description="non-Bloch supercell band structure toolkit")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sweep", help="supercell BZ sweep to spectral samples")
    _add_common(p)
    p.add_argument("--sizes", required=True, help="supercell sizes, e.g. 25 or 12,6")
    p.add_argument("--mu", required=True, help="imaginary momentum, e.g. 0.1 or 0.42,0.42")
    p.add_argument("--twists", default=16, help="twist grid points per direction")
    p.add_argument("--mode", default="diluted", choices=["diluted", "boundary"])

    p = sub.add_parser("winding-map", help="point-gap pattern over a complex-E grid")
    _add_common(p)
    p.add_argument("--mu", required=True)
    p.add_argument("--nhat", default=None, help="loop direction, e.g. 0,1")
    p.add_argument("--kperp", default="", help="transverse coordinates")
    p.add_argument("--re", required=True, help="min,max,step for Re E")
    p.add_argument("--im", required=True, help="min,max,step for Im E")
    p.add_argument("--grid", default=512)

    p = sub.add_parser("potential", help="spectral potential and gradient over mu")
    _add_common(p)
    p.add_argument("--energy", required=True, help="re,im")
    p.add_argument("--mu-axis", dest="mu_axis", default="-0.3,0.4,0.02",
                   help="min,max,step per axis")

    p = sub.add_parser("nbf", help="non-Bloch Fermi points at fixed (E, mu)")
    _add_common(p)
    p.add_argument("--energy", required=True)
    p.add_argument("--mu", required=True)
    p.add_argument("--grid-n", dest="grid_n", default=256)
    p.add_argument("--circle-tol", dest="circle_tol", default=0.05)

    p = sub.add_parser("gbz", help="classification, GBZ assembly, saddles")
    _add_common(p)
    p.add_argument("--energy", default=None, help="single energy re,im; omit for grid mode")
    p.add_argument("--spacing", default=0.25, help="candidate grid spacing (grid mode)")
    p.add_argument("--ring-radius", dest="ring_radius", default=0.05)
    p.add_argument("--g-tol", dest="g_tol", default=0.1)

    for name, extra in (("obc", True), ("greens", False), ("flt", False)):
        p = sub.add_parser(name)
        _add_common(p)
        p.add_argument("--chain", default=None, help="chain length")
        p.add_argument("--rect", default=None, help="Lx,Ly")
        p.add_argument("--parallelogram", default=None, help="a,b[,offset]")
        p.add_argument("--mask", default=None, help="geometry JSON with a sites list")
        if name == "obc":
            p.add_argument("--dos-im", dest="dos_im", default=None,
                           help="comma-separated Im E lines for the DOS")
            p.add_argument("--dos-re", dest="dos_re", default=None, help="min,max,step")
        if name == "greens":
            p.add_argument("--probe-re", dest="probe_re", default=None,
                           help="min,max,count of probe line")
            p.add_argument("--probe-im", dest="probe_im", default=2.0,
                           help="Im E of the probe line (absolute)")
            p.add_argument("--noise", default=0.0)
            p.add_argument("--seed", default=0)
        if name == "flt":
            p.add_argument("--energy", required=True, help="select eigenstate nearest re,im")
            p.add_argument("--s-range", dest="s_range", default="0.0,0.6,0.02")
            p.add_argument("--nk", default=96)

    p = sub.add_parser("rerun", help="re-execute a run from its JSON sidecar")
    p.add_argument("sidecar")
    p.add_argument("--out", default=".")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    ns = ap.parse_args(argv)
    try:
        if ns.command == "rerun":
            with open(ns.sidecar) as fh:
                doc = json.load(fh)
            run(doc["command"], doc["config"], ns.out)
            return 0
        cfg = {k: v for k, v in vars(ns).items()
               if k not in ("command", "out") and v is not None}
        run(ns.command, cfg, ns.out)
        return 0
    except (ValueError, KeyError, FileNotFoundError, NotImplementedError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (RuntimeError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
