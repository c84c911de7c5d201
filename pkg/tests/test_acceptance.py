"""Acceptance criteria 1-14 at their stated tolerances.

Each test prints one ``PASS``/``FAIL`` line.  Criteria 4-11 run through the
command line entry point so that criterion 14 can replay their artifacts.
"""

import itertools
import json
import math
import time

import numpy as np
import pytest

from fkcoarse import cli
from fkcoarse.cli import EXIT_OK

CROSSING_HIGH = [
    "model.q=1", "model.family=linear", "model.beta=0.9", "model.rho=0:0.1,1:0.9",
    "run.replicas=1000", "geometry.N_list=16,32,64", "geometry.l_fraction=0.25",
]
CROSSING_LOW = [
    "model.q=1", "model.family=linear", "model.beta=0.3333333333333333", "model.rho=0:0.1,1:0.9",
    "run.replicas=1000", "geometry.N_list=64", "geometry.l_fraction=0.25",
]
DENSITY = [
    "model.q=2", "model.family=ising", "model.beta=1", "model.rho=0:0.2,1:0.8",
    "run.replicas=1000", "geometry.N=64", "geometry.L=16", "geometry.theta_N=32",
]
RUNS = {
    "sampler-check": ("sampler-check", ["model.q=2", "model.family=linear", "model.beta=0.6", "run.sweeps=1000000"]),
    "es-check": ("es-check", ["geometry.N=3", "model.beta=0.7"]),
    "pivotal-audit": ("pivotal-audit", ["geometry.N=6", "run.samples=1000"]),
    "covering-2": ("covering-check", ["geometry.d=2", "geometry.max_side=20"]),
    "covering-3": ("covering-check", ["geometry.d=3", "geometry.max_side=20"]),
    "constants": ("constants", ["run.samples=1000"]),
    "psi-domination": ("psi-domination", ["geometry.L=6", "model.q=2", "model.beta=1.5", "model.rho=0:0.2,1:0.8", "run.replicas=10000"]),
    "crossing-high": ("crossing", CROSSING_HIGH),
    "crossing-low": ("crossing", CROSSING_LOW),
    "density": ("density", DENSITY),
}

_cache = {}
LINES = []  # echoed in the terminal summary by conftest


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    return tmp_path_factory.mktemp("acceptance")


def artifact(key, workdir):
    """Run one configured experiment once; returns (exit code, metrics, seconds, directory)."""
    if key not in _cache:
        exp, sets = RUNS[key]
        out = workdir / key
        argv = [exp, "--out", str(out), "--seed", "20240601"]
        for s in sets:
            argv += ["--set", s]
        t0 = time.perf_counter()
        code = cli.main(argv)
        dt = time.perf_counter() - t0
        metrics = {}
        with open(out / f"{exp}.jsonl", encoding="utf-8") as fh:
            for line in fh:
                rec = json.loads(line)
                if rec["kind"] == "metric":
                    se = rec["se"]
                    metrics[rec["metric"]] = (rec["value"], float("nan") if se is None else se)
        _cache[key] = (code, metrics, dt, out)
    return _cache[key]


def report(n, ok, detail):
    line = f"CRITERION {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    LINES.append(line)
    print("\n" + line)
    assert ok, f"criterion {n}: {detail}"


def test_criterion_01_single_edge_marginals():
    from fkcoarse.fk import FKParams, exact_distribution
    from fkcoarse.lattice import EdgeSet

    t0 = time.perf_counter()
    E = EdgeSet([((0, 0), (1, 0))])
    worst = 0.0
    for q in (1.0, 1.5, 2.0, 4.0):
        for k in range(1, 10):
            p = k / 10
            P = FKParams(q=q, family="linear", beta=p)
            w = exact_distribution(E, 1.0, P, "wired").marginal(0)
            f = exact_distribution(E, 1.0, P, "free").marginal(0)
            worst = max(worst, abs(w - p), abs(f - p / (p + q * (1 - p))))
    dt = time.perf_counter() - t0
    report(1, worst <= 1e-12 and dt < 1, f"max deviation {worst:.2e}, {dt:.2f} s")


def test_criterion_02_dlr_failure():
    from fkcoarse.verify import demonstrate_dlr_failure

    t0 = time.perf_counter()
    worst = 0.0
    for lam, p, q in itertools.product((0.2, 0.5, 0.8), (0.2, 0.5, 0.8), (1.0, 1.5, 2.0, 4.0)):
        r = demonstrate_dlr_failure(lam, p, q)
        worst = max(worst, abs(r.conditional - r.closed_form))
        if q == 1:
            worst = max(worst, abs(r.margin))
    half = demonstrate_dlr_failure(0.5, 0.5, 2.0)
    dt = time.perf_counter() - t0
    ok = (
        worst <= 1e-12
        and abs(half.conditional - 3 / 11) <= 1e-12
        and abs(half.unconditional_sup - 1 / 4) <= 1e-12
        and abs(half.margin - 1 / 44) <= 1e-12
        and dt < 1
    )
    report(2, ok, f"grid deviation {worst:.2e}, value {half.conditional:.15f}, excess {half.margin:.15f}, {dt:.2f} s")


def test_criterion_03_inequality_corpus():
    from fkcoarse.verify import verify_corpus

    t0 = time.perf_counter()
    r = verify_corpus(max_edges=5, tolerance=1e-12)
    dt = time.perf_counter() - t0
    ok = not r.violations and dt < 600
    report(3, ok, f"{r.instances} instances, {len(r.violations)} violations, worst {r.worst}, {dt:.0f} s")


def test_criterion_04_sampler(workdir):
    code, m, dt, _ = artifact("sampler-check", workdir)
    z = max(m["free.max_z"][0], m["wired.max_z"][0])
    res = max(m[f"{bc}.{k}_residual"][0] for bc in ("free", "wired") for k in ("balance", "stationarity"))
    ok = code == EXIT_OK and z <= 3 and res < 1e-10 and dt < 120
    report(4, ok, f"max |z| {z:.2f}, residual {res:.1e}, {dt:.0f} s")


def test_criterion_05_edwards_sokal(workdir):
    code, m, dt, _ = artifact("es-check", workdir)
    worst = max(v for v, _ in m.values())
    ok = code == EXIT_OK and worst < 1e-10 and dt < 120
    report(5, ok, f"max TV / residual {worst:.1e}, {dt:.1f} s")


def test_criterion_06_graph_oracles(workdir):
    code, m, dt, _ = artifact("pivotal-audit", workdir)
    n = m["configurations"][0]
    bad = m["doubly_connected.mismatches"][0] + m["pivotal.mismatches"][0] + m["first_pivotal.failures"][0]
    ok = code == EXIT_OK and n >= 1000 and bad == 0 and dt < 300
    report(6, ok, f"{n:.0f} configurations, {bad:.0f} mismatches, {m['pairs_with_pivotal'][0]:.0f} pairs with a pivotal, {dt:.0f} s")


def test_criterion_07_covering(workdir):
    total, bad, mult, ok = 0.0, 0.0, 0.0, True
    for key in ("covering-2", "covering-3"):
        code, m, dt, _ = artifact(key, workdir)
        total += dt
        ok = ok and code == EXIT_OK
        bad += sum(v for k, (v, _) in m.items() if k.endswith(".failures"))
        mult = max(mult, m["max_multiplicity"][0])
    ok = ok and bad == 0 and total < 300
    report(7, ok, f"{bad:.0f} clause failures, max multiplicity {mult:.0f}, {total:.0f} s")


def test_criterion_08_constants(workdir):
    code, m, dt, _ = artifact("constants", workdir)
    ok = (
        code == EXIT_OK
        and m["r_at_one_deviation"][0] == 0
        and m["r_prime_at_one_deviation"][0] == 0
        and m["min_increment"][0] >= 0
        and m["guard_failures"][0] == 0
        and dt < 1
    )
    report(8, ok, f"min increment {m['min_increment'][0]:.2e}, guard failures {m['guard_failures'][0]:.0f}, {dt:.2f} s")


def test_criterion_09_psi_domination(workdir):
    code, m, dt, _ = artifact("psi-domination", workdir)
    direct, swapped = m["direct.rejected"][0], m["swapped.rejected"][0]
    zmax = max(v for k, (v, _) in m.items() if k.startswith("direct.z["))
    ok = code == EXIT_OK and direct == 0 and swapped == 1 and dt < 900
    report(9, ok, f"direct rejected={direct:.0f} (max z {zmax:.2f}, threshold {m['direct.threshold'][0]:.2f}), swapped rejected={swapped:.0f}, {dt:.0f} s")


def test_criterion_10_crossing_trend(workdir):
    code_h, hi, dt_h, _ = artifact("crossing-high", workdir)
    code_l, lo, dt_l, _ = artifact("crossing-low", workdir)
    curve = [hi[f"N={N}.unique_large"][0] for N in (16, 32, 64)]
    low = lo["N=64.crossing"][0]
    ok = (
        code_h == code_l == EXIT_OK
        and curve[-1] >= 0.95
        and all(a <= b for a, b in zip(curve, curve[1:]))
        and low <= 0.1
        and dt_h + dt_l < 1200
    )
    report(10, ok, f"unique-large {curve}, low-slope crossing {low:.3f}, {dt_h + dt_l:.0f} s")


def test_criterion_11_density_and_theta(workdir):
    code, m, dt, _ = artifact("density", workdir)
    (tf, sf), (tw, sw), (mb, sm) = m["theta_free"], m["theta_wired"], m["magnetization"]
    out = max(m["free.outside_fraction"][0], m["wired.outside_fraction"][0])
    ok = (
        code == EXIT_OK
        and out <= 0.05
        and abs(tf - tw) <= 3 * math.hypot(sf, sw)
        and abs(mb - tw) <= 3 * math.hypot(sm, sw)
        and dt < 1800
    )
    report(11, ok, f"outside {out:.3f}, theta_f {tf:.4f}+-{sf:.4f}, theta_w {tw:.4f}+-{sw:.4f}, m {mb:.4f}+-{sm:.4f}, {dt:.0f} s")


def test_criterion_12_phase_labels(workdir):
    code, m, _, _ = artifact("density", workdir)
    checked, bad = m["labels.checked"][0], m["labels.violations"][0]
    counts = {v: m[f"labels.count[{v}]"][0] for v in (-1, 0, 1)}
    ok = code == EXIT_OK and checked == 1000 and bad == 0
    report(12, ok, f"{checked:.0f} samples checked, {bad:.0f} violations, label counts {counts}")


def test_criterion_13_rate_function():
    from fkcoarse.ising import legendre_lambda_star

    t0 = time.perf_counter()
    x = np.arange(1, 100) / 100.0
    lam = legendre_lambda_star(x)
    sym = np.max(np.abs(lam - legendre_lambda_star(-x)))
    gap = np.min(lam - x**2 / 2)
    dt = time.perf_counter() - t0
    ok = legendre_lambda_star(0.0) == 0 and sym <= 1e-12 and gap >= -1e-12 and dt < 1
    report(13, ok, f"asymmetry {sym:.1e}, min(L*(x) - x^2/2) {gap:.2e}, {dt:.3f} s")


def test_criterion_14_reproducibility(workdir, capsys):
    failed = []
    for key in RUNS:
        _, _, _, out = artifact(key, workdir)
        if cli.main(["reproduce", str(out)]) != EXIT_OK:
            failed.append(key)
    capsys.readouterr()
    report(14, not failed, f"{len(RUNS)} artifacts replayed, mismatches: {failed or 'none'}")
