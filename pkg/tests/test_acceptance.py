"""Acceptance criteria, run through the CLI on the shipped configs.

Every config is run once by the ``runs`` fixture; criterion 12 runs them all
again and compares bytes.  Each test prints one PASS/FAIL line.
Deselect with ``-m "not acceptance"``.
"""

import json
import math
import time
from pathlib import Path

import pytest

from geoquant import cli

pytestmark = pytest.mark.acceptance

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

# tag -> (subcommand, config, extra args)
RUNS = {
    "classify": ("classify-fiber", "classify_n1", ["--x", "0", repr(math.pi), repr(2 * math.pi / 3), "1"]),
    "struct_flat": ("check-integrability", "structures_flat", []),
    "struct_spade": ("check-integrability", "structures_spade", []),
    "struct_constq": ("check-integrability", "structures_constq", []),
    "struct_varq": ("check-integrability", "structures_varq", []),
    "struct_const2": ("check-integrability", "structures_const2", []),
    "struct_counter2": ("check-integrability", "structures_counter2", []),
    "dist_flat": ("distance", "distance_flat", ["--pairs", "200"]),
    "dist_spade": ("distance", "distance_spade", ["--pairs", "200"]),
    "gh_m1": ("gh-converge", "gh_spade_m1", []),
    "gh_m2": ("gh-converge", "gh_spade_m2", []),
    "gh_flat": ("gh-converge", "gh_flat", []),
    "measure_m2": ("measure-check", "measure_m2", []),
    "measure_spade": ("measure-check", "measure_spade_m1", []),
    "ricci_constq": ("ricci-scan", "ricci_constq", []),
    "ricci_varq": ("ricci-scan", "ricci_varq", []),
    "spectrum": ("spectrum", "spectrum_n1", ["--k", "1", "--dmax", "4"]),
    "limit_bs1": ("limit-dim", "limit_n1", ["--m", "1"]),
    "limit_bs3": ("limit-dim", "limit_n1", ["--m", "3"]),
    "limit_euc": ("limit-dim", "limit_n1", ["--euclidean"]),
    "limit2_bs1": ("limit-dim", "limit_n2", ["--m", "1"]),
    "orbit_x1": ("orbit-scan", "orbit_flat", ["--x", "1"]),
    "orbit_x0": ("orbit-scan", "orbit_flat", ["--x", "0"]),
}


class Run:
    def __init__(self, tag, out, code, seconds):
        self.tag, self.out, self.code, self.seconds = tag, out, code, seconds
        self.cmd = RUNS[tag][0]

    @property
    def summary(self):
        return json.loads((self.out / f"{self.cmd}.json").read_text())["summary"]

    @property
    def passed(self):
        return json.loads((self.out / f"{self.cmd}.json").read_text())["passed"]

    def rows(self):
        lines = (self.out / f"{self.cmd}.csv").read_text().splitlines()
        head = lines[0].split(",")
        return [dict(zip(head, ln.split(","))) for ln in lines[1:]]


def _execute(tag, root):
    cmd, cfg, extra = RUNS[tag]
    out = root / tag
    t0 = time.perf_counter()
    code = cli.main([cmd, str(CONFIGS / f"{cfg}.json"), *extra, "--out", str(out)])
    return Run(tag, out, code, time.perf_counter() - t0)


@pytest.fixture(scope="session")
def runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("acceptance")
    return {tag: _execute(tag, root) for tag in RUNS}


@pytest.fixture
def report(capsys):
    def emit(num, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {num:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, detail

    return emit


def test_c01_holonomy_and_classification(runs, report):
    r = runs["classify"]
    res = {round(v["x"][0], 6): (v["kind"], v["m"]) for v in r.summary["results"]}
    want = {0.0: ("StrictBS", 1), round(math.pi, 6): ("StrictBS", 2), round(2 * math.pi / 3, 6): ("StrictBS", 3), 1.0: ("NotBSUpTo", 1000)}
    err = r.summary["holonomy_ode_max_error"]
    ok = res == want and err <= 1e-9 and r.seconds < 10 and r.code == 0
    report(1, ok, f"ODE error {err:.2e}, classes {sorted(res.values())}, {r.seconds:.1f} s")


def test_c02_matrix_identities(runs, report):
    worst_t = worst_s = 0.0
    slow = 0.0
    for tag in ("struct_flat", "struct_const2"):
        s = runs[tag].summary
        assert s["instances"] == 1000
        worst_t = max(worst_t, s["theta_inverse_identity"])
        worst_s = max(worst_s, s["completed_square_identity"])
        slow = max(slow, runs[tag].seconds)
    ok = worst_t <= 1e-12 and worst_s <= 1e-12 and slow < 5
    report(2, ok, f"Theta^-1 identity {worst_t:.1e}, completed square {worst_s:.1e}, slowest run {slow:.1f} s")


def test_c03_complex_structures(runs, report):
    worst = 0.0
    gmin = math.inf
    zero = 0.0
    for tag in ("struct_flat", "struct_spade", "struct_constq", "struct_varq", "struct_const2", "struct_counter2"):
        s = runs[tag].summary
        worst = max(worst, s["J2_residual"], s["compat_residual"])
        gmin = min(gmin, s["gJ_min_eig"])
        if tag != "struct_counter2":
            zero = max(zero, s["integrability_residual"])
    counter = runs["struct_counter2"].summary["integrability_residual"]
    ok = worst <= 1e-10 and gmin > 0 and zero <= 1e-10 and abs(counter - 2 * math.pi) <= 1e-6
    ok = ok and all(runs[t].code == 0 for t in RUNS if t.startswith("struct_"))
    report(3, ok, f"J^2/compat {worst:.1e}, min eig g_J {gmin:.3g}, integrable residual {zero:.1e}, counterexample {counter:.9f}")


def test_c04_distance_bounds(runs, report):
    viol = 0
    pairs = set()
    slow = 0.0
    for tag in ("dist_flat", "dist_spade"):
        r = runs[tag]
        viol += r.summary["violations"]
        pairs.add(r.summary["pairs_per_s"])
        slow = max(slow, r.seconds)
        assert r.summary["stencil_tol"] <= 0.03
    ok = viol == 0 and pairs == {200} and slow < 120
    report(4, ok, f"{viol} violations over 200 pairs per s on flat and spade, slowest {slow:.1f} s")


def test_c05_metric_comparison_rate(runs, report):
    slopes = [runs[t].summary["dsym_slope"] for t in ("gh_m1", "gh_m2")]
    ok = all(s is not None and abs(s - 0.5) <= 0.1 for s in slopes)
    report(5, ok, f"dsym slopes {[round(s, 4) for s in slopes]}")


def test_c06_gh_distortion(runs, report):
    parts = []
    ok = True
    total = 0.0
    for tag in ("gh_m1", "gh_m2"):
        r = runs[tag]
        s = r.summary
        eps = [float(row["epsilon"]) for row in r.rows()]
        ok &= all(a > b for a, b in zip(eps, eps[1:]))
        ok &= s["epsilon_slope"] >= 0.4 and s["base_point_error"] <= 1e-12
        ok &= max(s["equivariance_S1"], s["equivariance_deck"]) <= 1e-12
        total += r.seconds
        parts.append(f"{tag}: slope {s['epsilon_slope']:.3f}, eq {max(s['equivariance_S1'], s['equivariance_deck']):.1e}")
    ok &= total < 600
    report(6, ok, "; ".join(parts) + f"; {total:.0f} s")


def test_c07_measure(runs, report):
    s = runs["measure_m2"].summary
    ok = abs(s["K"] - 2.0) <= 1e-12 and abs(s["final_ratio"] - 1) <= 0.02
    report(7, ok, f"K = {s['K']:g}, ratio {s['final_ratio']:.6f}")


def test_c08_ricci(runs, report):
    flat = runs["ricci_constq"].summary["max_abs_kappa"]
    gap = runs["ricci_varq"].summary["relative_gap"]
    ref = runs["ricci_varq"].summary["reference"]
    ok = flat <= 0.1 and gap <= 0.1 and ref < 0
    report(8, ok, f"constant Q0 max|kappa| {flat:.2e}; varying Q0 s*kappa vs {ref:.4f}: gap {100 * gap:.2f}%")


def test_c09_spectra(runs, report):
    s = runs["spectrum"].summary
    ok = (
        s["max_relative_error"] <= 0.01
        and abs(s["refinement_slope"] - 2) <= 0.3
        and s["hermite_ode_residual"] < 1e-10
        and s["gram_offdiag"] < 1e-8
        and s["n2_pair_split"] < 0.02
    )
    report(
        9,
        ok,
        f"max rel err {s['max_relative_error']:.2e}, slope {s['refinement_slope']:.3f}, ODE {s['hermite_ode_residual']:.1e}, "
        f"Gram {s['gram_offdiag']:.1e}, pair split {s['n2_pair_split']:.1e}",
    )


def test_c10_dimension_counts(runs, report):
    got = tuple(runs[t].summary["dim_W"] for t in ("limit_bs1", "limit_bs3", "limit_euc"))
    ok = got == (1, 0, 0) and runs["limit2_bs1"].summary["dim_W"] == 1
    report(10, ok, f"dim_W BS(1)/BS(3)/Euclidean = {got}")


def test_c11_orbits(runs, report):
    a = runs["orbit_x1"].summary
    b = runs["orbit_x0"].summary
    ok = a["final_over_initial"] < 0.5 and a["decades"] >= 2 - 1e-9 and b["relative_gap"] <= 0.1
    report(11, ok, f"x=1: final/initial {a['final_over_initial']:.3f}; x=0: {b['final']:.4f} vs pi ({100 * b['relative_gap']:.2f}%)")


def test_c12_determinism(runs, report, tmp_path):
    bad = []
    files = 0
    for tag, first in runs.items():
        again = _execute(tag, tmp_path)
        for f in sorted(first.out.iterdir()):
            files += 1
            if f.read_bytes() != (again.out / f.name).read_bytes():
                bad.append(f"{tag}/{f.name}")
    configs = {p.stem for p in CONFIGS.glob("*.json")}
    covered = {RUNS[t][1] for t in RUNS}
    ok = not bad and configs <= covered
    report(12, ok, f"{files} files byte-identical across reruns of {len(covered)} configs" if ok else f"differs: {bad}, unrun: {configs - covered}")


def test_all_runs_exit_zero(runs):
    assert {t: r.code for t, r in runs.items() if r.code != 0} == {}
