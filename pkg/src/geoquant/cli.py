"""Batch experiment driver: ``geoquant <subcommand> CONFIG [flags]``.

Each subcommand writes ``<name>.csv`` and ``<name>.json`` (and ``<name>.svg``
for series) into the config's output directory.  Exit codes: 0 success,
2 a checked property failed, 3 configuration error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import compat_structures as cs
from . import config as cfgmod
from . import curvature, ghconv, riemann, spectral, svgplot
from .prequantum import FiberLoop, classify_fiber, holonomy, holonomy_ode

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 2, 3


class Result:
    def __init__(self, rows: list[dict], summary: dict, passed: bool, plot: dict | None = None):
        self.rows = rows
        self.summary = summary
        self.passed = passed
        self.plot = plot


def _clean(v):
    if isinstance(v, dict):
        return {k: _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, np.ndarray):
        return _clean(v.tolist())
    if isinstance(v, float) and not math.isfinite(v):
        return str(v)
    return v


def _csv_text(rows: list[dict]) -> str:
    if not rows:
        return ""
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: ("" if v is None else repr(v) if isinstance(v, float) else v) for k, v in _clean(r).items()})
    return buf.getvalue()


def write_atomic(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="\n") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("GEOQUANT_THREADS", "1")))
    except ValueError:
        return 1


def _pmap(fn, items):
    """Map in order; processes are used when GEOQUANT_THREADS > 1."""
    items = list(items)
    k = min(_threads(), len(items))
    if k <= 1:
        return [fn(i) for i in items]
    with ProcessPoolExecutor(max_workers=k) as ex:
        return list(ex.map(fn, items))


def _log(msg: str):
    print(msg, file=sys.stderr, flush=True)


# --- subcommands -----------------------------------------------------------


def cmd_classify(cfg, args) -> Result:
    n = cfg.model.n
    m_max = cfg.param("m_max", 1000)
    rng = np.random.default_rng(cfg.seed)
    # closed form against the ODE on random loops
    trials = cfg.param("holonomy_trials", 1000)
    xs = rng.uniform(-4, 4, (trials, n))
    ws = rng.integers(-3, 4, (trials, n))
    closed = np.array([holonomy(cfg.model, FiberLoop(tuple(x), tuple(w))) for x, w in zip(xs, ws)])
    ode_err = float(np.max(np.abs(closed - holonomy_ode(xs, ws))))
    rows, results = [], []
    for xv in args.x:
        x = [float(v) for v in xv.split(",")]
        if len(x) != n:
            raise cfgmod.ConfigError(f"--x {xv!r} must have {n} comma-separated entries")
        c = classify_fiber(cfg.model, x, m_max=m_max)
        rows.append({"x": xv, "kind": c.kind, "m": c.m})
        results.append({"x": x, **c.to_dict()})
    summary = dict(results[0]) if len(results) == 1 else {"results": results}
    summary["holonomy_ode_max_error"] = ode_err
    return Result(rows, summary, ode_err <= 1e-9)


def _random_spd_instances(count, seed, n_max=4):
    rng = np.random.default_rng(seed)
    out = []
    for i in range(count):
        n = 1 + i % n_max
        M = rng.normal(size=(n, n))
        Q = M @ M.T + 0.1 * np.eye(n)
        P = rng.normal(size=(n, n))
        out.append(P + P.T + 1j * Q)
    return out


def cmd_integrability(cfg, args) -> Result:
    n = cfg.model.n
    A = cfg.family.family
    s_vals = cfg.s_series
    pts = riemann.sobol_points([0.0] * n + [-0.25] * n, [1.0] * n + [0.25] * n, 64, cfg.seed)
    th, x = pts[:, :n], pts[:, n:]
    Om = cs.omega_matrix(n)
    rows = []
    worst = {"J2": 0.0, "compat": 0.0, "gJ_min_eig": math.inf}
    for s in s_vals:
        J = cs.j_matrix(A, s, x, th)
        j2 = float(np.abs(J @ J + np.eye(2 * n)).max())
        compat = float(np.abs(np.swapaxes(J, -1, -2) @ Om @ J - Om).max())
        g = Om @ J
        gmin = float(np.linalg.eigvalsh(0.5 * (g + np.swapaxes(g, -1, -2)))[:, 0].min())
        res = float(np.abs(cs.integrability_tensor(A, s, x, th)).max())
        rows.append({"s": s, "J2_residual": j2, "compat_residual": compat, "gJ_min_eig": gmin, "integrability": res})
        worst["J2"] = max(worst["J2"], j2)
        worst["compat"] = max(worst["compat"], compat)
        worst["gJ_min_eig"] = min(worst["gJ_min_eig"], gmin)
    # matrix identities on random SPD instances
    inst = _random_spd_instances(cfg.param("instances", 1000), cfg.seed)
    theta_err = square_err = 0.0
    for Am in inst:
        P, Q = cs.split(Am)
        Qi = np.linalg.inv(Q)
        Th = cs.theta_matrix(Am)
        Ti = np.linalg.inv(Th)
        rhs = Qi - Qi @ P @ Ti @ P @ Qi
        theta_err = max(theta_err, float(np.abs(Ti - rhs).max() / max(1.0, np.abs(Ti).max())))
        g1 = cs.base_metric_from_A(Am)
        g2 = cs.base_metric_completed_square(Am)
        square_err = max(square_err, float(np.abs(g1 - g2).max() / max(1.0, np.abs(g1).max())))
    # a configured probe point (s, theta, x) replaces the max over samples
    probe = cfg.param("probe", None)
    if probe is not None:
        pth = np.array(probe["theta"], dtype=float)[None]
        px = np.array(probe["x"], dtype=float)[None]
        res_probe = cs.integrability_residual(A, probe.get("s", 1.0), px, pth)
    else:
        res_probe = max(r["integrability"] for r in rows)
    summary = {
        "J2_residual": worst["J2"],
        "compat_residual": worst["compat"],
        "gJ_min_eig": worst["gJ_min_eig"],
        "theta_inverse_identity": theta_err,
        "completed_square_identity": square_err,
        "instances": len(inst),
        "integrability_residual": res_probe,
    }
    ok = worst["J2"] <= 1e-10 and worst["compat"] <= 1e-10 and worst["gJ_min_eig"] > 0
    ok = ok and theta_err <= 1e-12 and square_err <= 1e-12
    expect = cfg.param("expect_residual", None)
    if expect is not None:
        tol = 1e-10 if expect == 0 else 1e-6
        summary["expected_residual"] = expect
        ok = ok and abs(res_probe - expect) <= tol
    return Result(rows, summary, ok)


def cmd_ricci(cfg, args) -> Result:
    n = cfg.model.n
    fam = cfg.family
    pts = curvature.region_points(n, cfg.param("x_half", 0.25), cfg.param("nx", 5), cfg.param("ntheta", cfg.resolution))
    rows = []
    for s in cfg.s_series:
        rep = curvature.ricci_lower_bound(fam.family, s, pts)
        rows.append({"s": s, "min_kappa": rep.min_kappa, "s_kappa": s * rep.min_kappa})
    ref = float(curvature.reference_coefficient(fam.a0, pts).min())
    mode = cfg.param("mode", "reference")
    summary = {"mode": mode, "reference": ref, "s_kappa_final": rows[-1]["s_kappa"], "points": len(pts)}
    if mode == "flat":
        worst = max(abs(r["min_kappa"]) for r in rows)
        summary["max_abs_kappa"] = worst
        ok = worst <= cfg.param("flat_tol", 0.1)
    elif mode == "reference":
        if ref >= 0:
            raise cfgmod.ConfigError("reference mode needs a family with negative reference coefficient")
        rel = abs(rows[-1]["s_kappa"] - ref) / abs(ref)
        summary["relative_gap"] = rel
        if n == 1:
            exact = curvature.leading_curvature_n1(fam.a0, pts[:, 0]).min()
            summary["leading_coefficient_exact"] = float(exact)
        ok = rel <= cfg.param("rel_tol", 0.1)
    else:
        raise cfgmod.ConfigError(f"unknown ricci mode {mode!r}")
    plot = {"x": "s", "ys": ["s_kappa"], "loglog": False, "title": f"{cfg.name}: s * min Ricci"}
    return Result(rows, summary, ok, plot)


def cmd_distance(cfg, args) -> Result:
    rows = []
    tol = riemann.STENCIL_TOL[(2, cfg.stencil_order)]
    for s in cfg.s_series:
        rep = riemann.verify_distance_bounds(
            cfg.family.family, s, cfg.param("x_half", 1.0), resolution=cfg.resolution, pairs=args.pairs, seed=cfg.seed, stencil_tol=tol
        )
        rows.append(
            {
                "s": s,
                "pairs": rep.pairs,
                "lower_violations": rep.lower_violations,
                "upper_violations": rep.upper_violations,
                "worst_lower_ratio": rep.worst_lower_ratio,
                "worst_upper_slack": rep.worst_upper_slack,
            }
        )
    total = sum(r["lower_violations"] + r["upper_violations"] for r in rows)
    return Result(rows, {"violations": total, "stencil_tol": tol, "pairs_per_s": args.pairs}, total == 0)


def _gh_setup(cfg):
    r = cfg.param("r", 1.5)
    res = cfg.resolution
    return ghconv.default_setup(
        cfg.model, r=r, y_half=cfg.param("y_half", 3.0), res=(res, res, res),
        n_sources=cfg.param("n_sources", 10), n_targets=cfg.param("n_targets", 20), seed=cfg.seed,
    )


def _gh_one(job):
    raw, s, d_inf = job
    cfg = cfgmod.from_dict(raw)
    setup = _gh_setup(cfg)
    t0 = time.perf_counter()
    rep = ghconv.distortion(cfg.model, cfg.family, s, setup.r, setup=setup, d_inf=d_inf)
    _log(f"  s={s:.6g} epsilon={rep.epsilon:.4g} ({time.perf_counter() - t0:.1f} s)")
    return rep


def cmd_gh(cfg, args) -> Result:
    setup = _gh_setup(cfg)
    fd = cs.decompose_P0(cfg.family.a0)
    d_inf = ghconv.limit_distances(setup, fd)
    reps = _pmap(_gh_one, [(cfg.raw, s, d_inf) for s in cfg.s_series])
    dsym = ghconv.dsym_series(cfg.model, cfg.family, cfg.s_series, r=cfg.param("dsym_r", 1.0), seed=cfg.seed)
    rows = []
    for rep, d in zip(reps, dsym):
        rows.append(
            {
                "s": rep.s,
                "r": rep.r,
                "epsilon": rep.epsilon,
                "pair_gap": rep.pair_gap,
                "fiber_diameter": rep.fiber_diameter,
                "dsym": float(d),
                "measure_ratio": None,
                "orbit_diam": None,
            }
        )
    eps = [r["epsilon"] for r in rows]
    fit = ghconv.rate_fit(cfg.s_series, eps)
    dsym_slope = ghconv.rate_fit(cfg.s_series, dsym).slope if np.all(dsym > 0) else None
    amap = ghconv.build_approximation(cfg.model, cfg.family, cfg.s_series[-1], setup.r)
    y0, t0 = amap.base_image()
    base_err = max(float(np.abs(y0).max()), abs(t0 - 1.0))
    eq_s1, eq_deck = ghconv.equivariance_residual(amap, seed=cfg.seed)
    min_slope = cfg.param("min_slope", 0.4)
    check_dsym = cfg.param("check_dsym", True)
    summary = {
        "epsilon_monotone": fit.monotone,
        "epsilon_slope": fit.slope,
        "dsym_slope": dsym_slope,
        "base_image": [float(v) for v in y0] + [[t0.real, t0.imag]],
        "base_point_error": base_err,
        "equivariance_S1": eq_s1,
        "equivariance_deck": eq_deck,
        "K": ghconv.K_constant(cfg.model, fd),
    }
    ok = fit.monotone and fit.slope >= min_slope and base_err <= 1e-12 and max(eq_s1, eq_deck) <= 1e-12
    if check_dsym:
        ok = ok and dsym_slope is not None and abs(dsym_slope - 0.5) <= 0.1
    plot = {"x": "s", "ys": ["epsilon", "dsym"], "loglog": True, "title": f"{cfg.name}: GH distortion"}
    return Result(rows, summary, ok, plot)


def cmd_measure(cfg, args) -> Result:
    fd = cs.decompose_P0(cfg.family.a0)
    K = ghconv.K_constant(cfg.model, fd)
    rows = []
    for s in cfg.s_series:
        ratio = ghconv.measure_check(cfg.model, cfg.family, s, resolution=cfg.resolution, rho=cfg.param("rho", 2.0))
        rows.append({"s": s, "ratio": ratio, "K": K})
    last = rows[-1]["ratio"]
    tol = cfg.param("tol", 0.02)
    plot = {"x": "s", "ys": ["ratio"], "loglog": False, "title": f"{cfg.name}: measure ratio"}
    return Result(rows, {"K": K, "final_ratio": last, "tol": tol}, abs(last - 1) <= tol, plot)


def cmd_orbit(cfg, args) -> Result:
    x = float(args.x)
    kw = {k: cfg.params[k] for k in ("y_half", "windings", "per_unit", "ny", "nt") if k in cfg.params}
    rows = []
    for s in cfg.s_series:
        row = ghconv.orbit_diameter(cfg.model, cfg.family, x, s, **kw)
        rows.append({"s": s, "orbit_diam": row.diameter, "argmax_t": row.argmax_t})
    bs = classify_fiber(cfg.model, [x] * cfg.model.n)
    d0, d1 = rows[0]["orbit_diam"], rows[-1]["orbit_diam"]
    summary = {"x": x, "fiber": bs.to_dict(), "initial": d0, "final": d1}
    if bs.kind == "StrictBS" and bs.m == cfg.model.m:
        target = math.pi * math.sqrt(cfg.model.sigma)
        rel = abs(d1 - target) / target
        summary.update(target=target, relative_gap=rel)
        ok = rel <= 0.1
    else:
        summary["final_over_initial"] = d1 / d0
        decades = math.log10(cfg.s_series[0] / cfg.s_series[-1])
        summary["decades"] = decades
        ok = d1 / d0 < 0.5 and decades >= 2 - 1e-9
    plot = {"x": "s", "ys": ["orbit_diam"], "loglog": True, "title": f"{cfg.name}: orbit diameter at x={x:g}"}
    return Result(rows, summary, ok, plot)


def cmd_spectrum(cfg, args) -> Result:
    k, dmax = args.k, args.dmax
    n = cfg.model.n
    L, h = cfg.L, cfg.h
    count = dmax + 1
    op = spectral.discretize_gaussian_laplacian(k, 1, L, h)
    w, _ = spectral.eigensolve(op, count)
    rows = []
    for d in range(count):
        exact = 2.0 * k * d
        rows.append({"d": d, "exact": exact, "numeric": float(w[d]), "error": float(w[d] - exact)})
    rel = max(abs(r["error"]) / max(r["exact"], 2.0 * k) for r in rows)
    slope, errs = spectral.refinement_slope(k, L, (2 * h, h, h / 2), count)
    xi = np.linspace(-3, 3, 100)
    ode = max(spectral.hermite_ode_residual(kk, N, xi) for kk in (1, 2, 3, 4) for N in range(13))
    gram = max(spectral.orthonormality_check(kk, 12) for kk in (1, 2, 3, 4))
    efun = max(spectral.eigenfunction_residual(k, N) for N in [(a,) for a in range(7)] + [(a, b) for a in range(4) for b in range(4)])
    op2 = spectral.discretize_gaussian_laplacian(k, 2, L, L / 32)
    w2, _ = spectral.eigensolve(op2, 3)
    split = abs(w2[2] - w2[1]) / abs(w2[1])
    sector = spectral.weight_spectrum(cfg.model.m, k, n, cfg.model.sigma, dmax)
    summary = {
        "k": k,
        "lowest": [float(v) for v in w],
        "max_relative_error": rel,
        "refinement_slope": slope,
        "refinement_errors": errs,
        "hermite_ode_residual": ode,
        "gram_offdiag": gram,
        "eigenfunction_residual": efun,
        "n2_pair": [float(w2[1]), float(w2[2])],
        "n2_pair_split": float(split),
        "sector": {"m": cfg.model.m, "weight": k, "n": n, "empty": sector.empty, "entries": [list(e) for e in sector.entries]},
    }
    ok = rel <= 0.01 and abs(slope - 2) <= 0.3 and ode < 1e-10 and gram < 1e-8 and efun < 1e-8 and split < 0.02
    plot = {"x": "d", "ys": ["exact", "numeric"], "loglog": False, "title": f"{cfg.name}: lowest eigenvalues, k={k}"}
    return Result(rows, summary, ok, plot)


def cmd_limit_dim(cfg, args) -> Result:
    n, sigma = cfg.model.n, cfg.model.sigma
    kind = spectral.EuclideanLimit() if args.euclidean else spectral.BSLimit(args.m)
    try:
        d = spectral.dim_W(kind, n, sigma)
    except ValueError as exc:
        raise cfgmod.ConfigError(str(exc)) from None
    label = "Euclidean" if args.euclidean else f"BS({args.m})"
    summary = {"dim_W": d}
    expect = cfg.param("expect", None)
    ok = True
    if expect is not None:
        ok = d == expect.get(label, d)
    return Result([{"limit": label, "n": n, "sigma": sigma, "dim_W": d}], summary, ok)


COMMANDS = {
    "classify-fiber": cmd_classify,
    "check-integrability": cmd_integrability,
    "ricci-scan": cmd_ricci,
    "distance": cmd_distance,
    "gh-converge": cmd_gh,
    "measure-check": cmd_measure,
    "orbit-scan": cmd_orbit,
    "spectrum": cmd_spectrum,
    "limit-dim": cmd_limit_dim,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="geoquant", description="Collapsing prequantum bundle experiments.")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("config", help="JSON experiment config")
        sp.add_argument("--out", help="override the config's output_dir")
        return sp

    add("classify-fiber", "BS classification of fibers").add_argument("--x", nargs="+", required=True, help="x values; comma-separated for n > 1")
    add("check-integrability", "complex-structure validity and integrability")
    add("ricci-scan", "Ricci lower bound over the s-series")
    add("distance", "Euclidean comparison of base distances").add_argument("--pairs", type=int, default=200)
    add("gh-converge", "GH distortion series")
    add("measure-check", "measure pushforward ratio")
    add("orbit-scan", "S^1-orbit diameters over a fiber").add_argument("--x", type=float, required=True)
    sp = add("spectrum", "Gaussian-space Laplacian spectrum")
    sp.add_argument("--k", type=int, default=1)
    sp.add_argument("--dmax", type=int, default=4)
    sp = add("limit-dim", "dim W(n+1) of the limit")
    sp.add_argument("--m", type=int, default=1)
    sp.add_argument("--euclidean", action="store_true", help="non-BS (Euclidean) limit")
    return p


def emit(name: str, out_dir: Path, res: Result):
    write_atomic(out_dir / f"{name}.csv", _csv_text(res.rows))
    body = {"name": name, "passed": bool(res.passed), "summary": _clean(res.summary)}
    write_atomic(out_dir / f"{name}.json", json.dumps(body, indent=2, sort_keys=True) + "\n")
    if res.plot:
        svg = svgplot.plot_series(_csv_text(res.rows), res.plot["x"], res.plot["ys"], loglog=res.plot["loglog"], title=res.plot["title"])
        write_atomic(out_dir / f"{name}.svg", svg)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = cfgmod.load(args.config)
        out_dir = Path(args.out) if args.out else cfg.output_dir
        t0 = time.perf_counter()
        res = COMMANDS[args.command](cfg, args)
    except cfgmod.ConfigError as exc:
        _log(f"config error: {exc}")
        return EXIT_CONFIG
    emit(args.command, out_dir, res)
    _log(f"{args.command}: {'passed' if res.passed else 'FAILED'} in {time.perf_counter() - t0:.1f} s -> {out_dir}")
    return EXIT_OK if bool(res.passed) else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
