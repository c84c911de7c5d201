"""Command line runner: ``fk-coarse <experiment> [--config F] [--set k=v]... [--seed S] [--out DIR]``.

Configuration is flat ``key = value`` text with dotted section keys; ``#``
starts a comment.  Flags override the file.  Each experiment reads a fixed
subset of keys; any other key is a configuration error.

Outputs in ``--out``:

* ``<experiment>.jsonl``: a ``config`` record followed by one ``metric``
  record per emitted number, in a fixed order;
* ``<experiment>.csv``: a headed table for curves, when the experiment has one.

Reals are written with 17 significant digits, files are UTF-8 with LF line
ends.  ``fk-coarse reproduce DIR`` reruns from the embedded configuration and
compares the metric values byte for byte.

Exit codes: 0 pass, 1 reproduction mismatch, 2 invariant violation,
3 configuration error.
"""

from __future__ import annotations

import argparse
import hashlib
import itertools
import json
import math
import os
import sys
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

EXIT_OK, EXIT_MISMATCH, EXIT_VIOLATION, EXIT_CONFIG = 0, 1, 2, 3


class ConfigError(ValueError):
    pass


# --------------------------------------------------------------------------
# schema
# --------------------------------------------------------------------------


def _int(s: str) -> int:
    return int(s)


def _float(s: str) -> float:
    v = float(s)
    if not math.isfinite(v):
        raise ValueError("not finite")
    return v


def _ints(s: str) -> Tuple[int, ...]:
    out = tuple(int(t) for t in s.split(",") if t.strip())
    if not out:
        raise ValueError("empty list")
    return out


def _atoms(s: str) -> Tuple[Tuple[float, float], ...]:
    """``value:prob,value:prob`` sorted by value."""
    pairs = []
    for t in s.split(","):
        v, p = t.split(":")
        pairs.append((_float(v), _float(p)))
    return tuple(sorted(pairs))


def _str(s: str) -> str:
    return s.strip()


@dataclass(frozen=True)
class Field:
    parse: Callable[[str], object]
    default: Optional[str]
    help: str
    check: Optional[Callable[[object], bool]] = None
    rule: str = ""


SCHEMA: Dict[str, Field] = {
    "geometry.d": Field(_int, "2", "lattice dimension", lambda v: 1 <= v <= 3, "1 <= d <= 3"),
    "geometry.N": Field(_int, "64", "box parameter N", lambda v: v >= 2, "N >= 2"),
    "geometry.N_list": Field(_ints, "16,32,64", "box parameters for curves", lambda v: min(v) >= 2, "all N >= 2"),
    "geometry.L": Field(_int, "16", "block side L", lambda v: v >= 1, "L >= 1"),
    "geometry.H": Field(_int, "8", "slab height H", lambda v: v >= 2, "H >= 2"),
    "geometry.l_fraction": Field(_float, "0.25", "large-cluster scale l as a fraction of N", lambda v: v > 0, "> 0"),
    "geometry.max_side": Field(_int, "20", "largest box side for the covering check", lambda v: v >= 1, ">= 1"),
    "geometry.theta_N": Field(_int, "32", "N used to estimate theta", lambda v: v >= 1, ">= 1"),
    "model.q": Field(_float, "2", "cluster weight q", lambda v: v >= 1, "q >= 1"),
    "model.family": Field(_str, "potts", "interaction family", lambda v: v in ("potts", "ising", "linear"), "potts|ising|linear"),
    "model.beta": Field(_float, "1", "inverse temperature or slope", lambda v: v >= 0, ">= 0"),
    "model.rho": Field(_atoms, "0:0.2,1:0.8", "disorder atoms value:prob", None, ""),
    "model.lambda": Field(_float, "0.5", "Bernoulli parameter of the two-edge example", lambda v: 0 < v < 1, "0 < lambda < 1"),
    "model.p": Field(_float, "0.5", "edge probability of the two-edge example", lambda v: 0 < v < 1, "0 < p < 1"),
    "run.replicas": Field(_int, "100", "independent replicas", lambda v: v >= 1, ">= 1"),
    "run.sweeps": Field(_int, "40", "sweeps per replica", lambda v: v >= 1, ">= 1"),
    "run.burn_in": Field(_int, "20", "burn-in sweeps (theta and magnetisation)", lambda v: v >= 0, ">= 0"),
    "run.thin": Field(_int, "2", "sweeps between records", lambda v: v >= 1, ">= 1"),
    "run.bc": Field(_str, "free", "boundary policy", lambda v: v in ("free", "wired", "worst"), "free|wired|worst"),
    "run.alpha": Field(_float, "0.01", "family-wise level", lambda v: 0 < v < 1, "0 < alpha < 1"),
    "run.samples": Field(_int, "1000", "number of random configurations", lambda v: v >= 1, ">= 1"),
    "verify.max_edges": Field(_int, "5", "largest corpus edge set", lambda v: 1 <= v <= 5, "1..5"),
    "verify.tolerance": Field(_float, "1e-12", "violation tolerance", lambda v: v >= 0, ">= 0"),
    "labels.delta": Field(_float, "0.1", "magnetisation tolerance delta", lambda v: 0 < v < 1, "0 < delta < 1"),
    "labels.delta_iso": Field(_float, "0.01", "isolated-cluster density delta'", lambda v: 0 <= v < 1, "0 <= delta' < 1"),
    "labels.m_beta": Field(_float, None, "magnetisation m_beta (estimated when absent)", lambda v: 0 <= v <= 1, "0..1"),
    "density.eps": Field(_float, "0.05", "density bracket half-width", lambda v: v >= 0, ">= 0"),
}
OUTPUT_PREFIX = "output."


def parse_text(text: str) -> Dict[str, str]:
    out = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key = value")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _canon(v) -> str:
    """Canonical text of a parsed value; reals use 17 significant digits."""
    if isinstance(v, float):
        return "%.17g" % v
    if isinstance(v, tuple):
        return ",".join(_canon(x) if not isinstance(x, tuple) else ":".join(_canon(y) for y in x) for x in v)
    return str(v)


@dataclass
class Config:
    experiment: str
    seed: int
    values: Dict[str, object]
    output: Dict[str, str] = field(default_factory=dict)

    def __getitem__(self, key):
        return self.values[key]

    def get(self, key, default=None):
        return self.values.get(key, default)

    def canonical(self) -> List[str]:
        lines = [f"experiment={self.experiment}", f"seed={self.seed}"]
        lines += [f"{k}={_canon(v)}" for k, v in sorted(self.values.items()) if v is not None]
        return lines

    @property
    def hash(self) -> str:
        return hashlib.sha256("\n".join(self.canonical()).encode()).hexdigest()


def resolve(experiment: str, raw: Dict[str, str], seed: int) -> Config:
    """Validate ``raw`` against the keys the experiment reads and fill in defaults."""
    if experiment not in EXPERIMENTS:
        raise ConfigError(f"experiment: unknown experiment {experiment!r}")
    if seed < 0 or seed >= 2**64:
        raise ConfigError("seed: must be an unsigned 64-bit integer")
    keys = EXPERIMENTS[experiment].keys
    values: Dict[str, object] = {}
    output = {}
    for k, v in raw.items():
        if k.startswith(OUTPUT_PREFIX):
            output[k] = v
        elif k not in SCHEMA:
            raise ConfigError(f"{k}: unknown key")
        elif k not in keys:
            raise ConfigError(f"{k}: not used by experiment {experiment!r}")
    for k in keys:
        f = SCHEMA[k]
        text = raw.get(k, EXPERIMENTS[experiment].defaults.get(k, f.default))
        if text is None:
            values[k] = None
            continue
        try:
            v = f.parse(text)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"{k}: cannot parse {text!r} ({exc})") from None
        if f.check is not None and not f.check(v):
            raise ConfigError(f"{k}: value {text!r} violates {f.rule}")
        values[k] = v
    cfg = Config(experiment, seed, values, output)
    EXPERIMENTS[experiment].validate(cfg)
    return cfg


# --------------------------------------------------------------------------
# results
# --------------------------------------------------------------------------


@dataclass
class Metric:
    name: str
    value: float
    se: float = float("nan")
    replicas: int = 0


@dataclass
class Result:
    metrics: List[Metric] = field(default_factory=list)
    table: Optional[Tuple[List[str], List[List[object]]]] = None
    violations: List[str] = field(default_factory=list)

    def add(self, name, value, se=float("nan"), replicas=0):
        self.metrics.append(Metric(name, float(value), float(se), int(replicas)))


def fmt_real(x: float) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return "null"
    if math.isinf(x):
        return "null"
    return "%.17g" % x


def _cell(x) -> str:
    if isinstance(x, (float, np.floating)):
        return fmt_real(float(x)) if not math.isnan(x) else "nan"
    return str(x)


def metric_line(m: Metric) -> str:
    """The reproducible part of a metric record."""
    return f'"metric":{json.dumps(m.name)},"value":{fmt_real(m.value)},"se":{fmt_real(m.se)},"replicas":{m.replicas}'


def write_outputs(cfg: Config, res: Result, out: str) -> List[str]:
    os.makedirs(out, exist_ok=True)
    paths = []
    stamp = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
    h = cfg.hash
    path = os.path.join(out, f"{cfg.experiment}.jsonl")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        conf = {k: _canon(v) for k, v in sorted(cfg.values.items()) if v is not None}
        fh.write(
            '{"kind":"config","experiment":%s,"seed":%d,"config_hash":"%s","config":%s}\n'
            % (json.dumps(cfg.experiment), cfg.seed, h, json.dumps(conf, sort_keys=True, separators=(",", ":")))
        )
        for m in res.metrics:
            fh.write(
                '{"kind":"metric","experiment":%s,"config_hash":"%s",%s,"timestamp":"%s"}\n'
                % (json.dumps(cfg.experiment), h, metric_line(m), stamp)
            )
        for v in res.violations:
            fh.write('{"kind":"violation","experiment":%s,"config_hash":"%s","detail":%s}\n' % (json.dumps(cfg.experiment), h, json.dumps(v)))
    paths.append(path)
    if res.table is not None:
        header, rows = res.table
        path = os.path.join(out, f"{cfg.experiment}.csv")
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(",".join(header) + "\n")
            for row in rows:
                fh.write(",".join(_cell(x) for x in row) + "\n")
        paths.append(path)
    return paths


def read_records(path: str) -> Tuple[Config, List[str]]:
    if os.path.isdir(path):
        cands = sorted(p for p in os.listdir(path) if p.endswith(".jsonl"))
        if len(cands) != 1:
            raise ConfigError(f"{path}: expected exactly one .jsonl result file, found {len(cands)}")
        path = os.path.join(path, cands[0])
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    head = json.loads(lines[0])
    if head.get("kind") != "config":
        raise ConfigError(f"{path}: first record is not a config record")
    cfg = resolve(head["experiment"], head["config"], int(head["seed"]))
    metrics = []
    for ln in lines[1:]:
        rec = json.loads(ln)
        if rec.get("kind") == "metric":
            metrics.append(metric_line(Metric(rec["metric"], _num(rec["value"]), _num(rec["se"]), rec["replicas"])))
    return cfg, metrics


def _num(x):
    return float("nan") if x is None else float(x)


# --------------------------------------------------------------------------
# experiments
# --------------------------------------------------------------------------


def _rho(cfg):
    from .fk import DisorderLaw

    atoms = cfg["model.rho"]
    try:
        return DisorderLaw(tuple(v for v, _ in atoms), tuple(p for _, p in atoms))
    except ValueError as exc:
        raise ConfigError(f"model.rho: {exc}") from None


def _params(cfg):
    from .fk import FKParams

    try:
        return FKParams(q=cfg["model.q"], family=cfg["model.family"], beta=cfg["model.beta"])
    except ValueError as exc:
        raise ConfigError(f"model: {exc}") from None


def _schedule(cfg, burn=True):
    from .sampler import Schedule

    sweeps = cfg["run.sweeps"]
    try:
        if burn:
            return Schedule(sweeps, cfg["run.burn_in"], cfg["run.thin"])
        return Schedule(sweeps, sweeps - 1, 1)
    except ValueError as exc:
        raise ConfigError(f"run: {exc}") from None


MODEL = ("model.q", "model.family", "model.beta", "model.rho")


def _no_check(cfg):
    return None


@dataclass
class Experiment:
    run: Callable[[Config], Result]
    keys: Tuple[str, ...]
    validate: Callable[[Config], None] = _no_check
    help: str = ""
    defaults: Dict[str, str] = field(default_factory=dict)


def run_enumerate(cfg: Config) -> Result:
    """Exact single-edge marginals against their closed forms."""
    from .fk import FKParams, exact_distribution, free_single_edge
    from .lattice import EdgeSet

    res = Result()
    E = EdgeSet([((0, 0), (1, 0))])
    rows = []
    worst = 0.0
    for q in (1.0, 1.5, 2.0, 4.0):
        for p in np.round(np.arange(0.1, 0.95, 0.1), 10):
            P = FKParams(q=q, family="linear", beta=float(p))
            w = exact_distribution(E, 1.0, P, "wired").marginal(0)
            f = exact_distribution(E, 1.0, P, "free").marginal(0)
            dev = max(abs(w - p), abs(f - float(free_single_edge(p, q))))
            worst = max(worst, dev)
            rows.append([q, float(p), w, f, dev])
    res.table = (["q", "p", "wired", "free", "deviation"], rows)
    res.add("max_deviation", worst, replicas=len(rows))
    if worst > cfg["verify.tolerance"]:
        res.violations.append(f"single-edge marginals deviate by {worst:.3e}")
    return res


def run_verify(cfg: Config) -> Result:
    from .verify import verify_corpus

    r = verify_corpus(max_edges=cfg["verify.max_edges"], tolerance=cfg["verify.tolerance"])
    res = Result()
    res.add("instances", r.instances)
    rows = []
    for k in r.checks:
        res.add(f"{k}.worst", r.worst[k], replicas=r.checks[k])
        rows.append([k, r.checks[k], r.worst[k]])
    res.add("violations", len(r.violations))
    res.table = (["inequality", "checks", "worst"], rows)
    res.violations += r.violations
    return res


def run_dlr(cfg: Config) -> Result:
    from .verify import demonstrate_dlr_failure

    lam, p, q = cfg["model.lambda"], cfg["model.p"], cfg["model.q"]
    r = demonstrate_dlr_failure(lam, p, q)
    res = Result()
    res.add("conditional", r.conditional)
    res.add("closed_form", r.closed_form)
    res.add("unconditional_sup", r.unconditional_sup)
    res.add("margin", r.margin)
    if abs(r.conditional - r.closed_form) > 1e-12:
        res.violations.append("conditional differs from its closed form")
    if q > 1 and not r.margin > 0:
        res.violations.append("no strict excess for q > 1")
    if q == 1 and abs(r.margin) > 1e-14:
        res.violations.append("nonzero margin at q = 1")
    return res


def _check_dlr(cfg):
    if cfg["model.q"] < 1:
        raise ConfigError("model.q: the two-edge example needs q >= 1")


def run_crossing(cfg: Config) -> Result:
    from .experiments import crossing_experiment

    res = Result()
    rows = []
    for k, N in enumerate(cfg["geometry.N_list"]):
        l = cfg["geometry.l_fraction"] * N
        r = crossing_experiment(
            N, l, _rho(cfg), _params(cfg), cfg["run.bc"], cfg["run.replicas"], _sub(cfg.seed, k), cfg["geometry.d"], _schedule(cfg, False)
        )
        res.add(f"N={N}.unique_large", r.probability, r.se, r.replicas)
        res.add(f"N={N}.crossing", r.crossing_probability, math.sqrt(r.crossing_probability * (1 - r.crossing_probability) / r.replicas), r.replicas)
        rows.append([N, l, r.probability, r.se, r.crossing_probability])
    res.table = (["N", "l", "unique_large", "se", "crossing"], rows)
    return res


def _sub(seed: int, *key: int):
    from .sampler import seed_sequence

    return seed_sequence(seed, *key)


def run_theta(cfg: Config) -> Result:
    from .experiments import estimate_theta

    res = Result()
    rows = []
    curves = {}
    for k, bc in enumerate(("free", "wired")):
        curves[bc] = estimate_theta(
            cfg["geometry.N_list"], _rho(cfg), _params(cfg), bc, cfg["geometry.d"], cfg["run.replicas"], _schedule(cfg), _sub(cfg.seed, k)
        )
    for j, N in enumerate(cfg["geometry.N_list"]):
        f, w = curves["free"], curves["wired"]
        res.add(f"N={N}.theta_free", f.theta[j], f.se[j], f.replicas)
        res.add(f"N={N}.theta_wired", w.theta[j], w.se[j], w.replicas)
        rows.append([N, f.theta[j], f.se[j], w.theta[j], w.se[j]])
        if f.theta[j] > w.theta[j] + 3 * math.hypot(f.se[j], w.se[j]):
            res.violations.append(f"N={N}: free estimate exceeds wired by more than 3 sigma")
    res.table = (["N", "theta_free", "se_free", "theta_wired", "se_wired"], rows)
    return res


def run_density(cfg: Config) -> Result:
    """theta at geometry.theta_N for both boundary conditions, magnetisation, and density brackets at N."""
    from .experiments import density_experiment, magnetization_estimate, theta_estimate

    rho, P, d = _rho(cfg), _params(cfg), cfg["geometry.d"]
    R, Nt, N, L = cfg["run.replicas"], cfg["geometry.theta_N"], cfg["geometry.N"], cfg["geometry.L"]
    res = Result()
    tf = theta_estimate(Nt, rho, P, "free", d, R, _schedule(cfg), _sub(cfg.seed, 0))
    tw = theta_estimate(Nt, rho, P, "wired", d, R, _schedule(cfg), _sub(cfg.seed, 1))
    res.add("theta_free", tf.value, tf.se, R)
    res.add("theta_wired", tw.value, tw.se, R)
    m_beta = cfg.get("labels.m_beta")
    if P.family == "ising" and P.q == 2:
        mb = magnetization_estimate(Nt, rho, P.beta, d, R, _schedule(cfg), _sub(cfg.seed, 2))
        res.add("magnetization", mb.value, mb.se, R)
    if m_beta is None:
        m_beta = tw.value
    eps = cfg["density.eps"]
    for k, bc in enumerate(("free", "wired")):
        spins = bc == "wired" and P.family == "ising" and P.q == 2
        r = density_experiment(
            N, L, rho, P, tf.value, tw.value, eps, bc, R, _sub(cfg.seed, 3 + k), d, _schedule(cfg, False),
            m_beta=m_beta if spins else None, delta=cfg["labels.delta"], delta_iso=cfg["labels.delta_iso"],
        )
        res.add(f"{bc}.outside_fraction", r.outside_fraction, math.sqrt(r.outside_fraction * (1 - r.outside_fraction) / R), R)
        res.add(f"{bc}.mean_density", float(r.densities.mean()), float(r.densities.std(ddof=1) / math.sqrt(R)) if R > 1 else float("nan"), R)
        res.add(f"{bc}.block_density", r.block_density, replicas=R)
        res.add(f"{bc}.block_crossing", r.block_crossing, replicas=R)
        if spins:
            res.add("labels.checked", r.labels_checked, replicas=R)
            res.add("labels.violations", r.label_violations, replicas=R)
            for v in (-1, 0, 1):
                res.add(f"labels.count[{v}]", r.label_counts[v], replicas=R)
            if r.label_violations:
                res.violations.append(f"{r.label_violations} spin/bond samples violate the label invariants")
    return res


def _check_density(cfg):
    N, L = cfg["geometry.N"], cfg["geometry.L"]
    if 3 * L > N - 1:
        raise ConfigError(f"geometry.L: the (L, L)-covering of {{1..N-1}}^d needs 3L <= N - 1, got L={L}, N={N}")


def run_slab(cfg: Config) -> Result:
    from .experiments import slab_probe

    res = Result()
    rows = []
    H = cfg["geometry.H"]
    for k, N in enumerate(cfg["geometry.N_list"]):
        r = slab_probe(N, H, _rho(cfg), _params(cfg), cfg["run.replicas"], _sub(cfg.seed, k), cfg["geometry.d"], schedule=_schedule(cfg, False))
        res.add(f"N={N}.connectivity", r.value, r.se, r.replicas)
        res.add(f"N={N}.killer_fraction", r.killer_fraction, replicas=r.replicas)
        rows.append([N, H, r.value, r.se, r.killer_fraction])
    res.table = (["N", "H", "connectivity", "se", "killer_fraction"], rows)
    return res


def _check_slab(cfg):
    if cfg["geometry.d"] < 2:
        raise ConfigError("geometry.d: slabs need d >= 2")


def run_psi(cfg: Config) -> Result:
    from .experiments import psi_domination, psi_samples

    L, R = cfg["geometry.L"], cfg["run.replicas"]
    s = psi_samples(L, _rho(cfg), _params(cfg), R, cfg.seed, cfg["geometry.d"], _schedule(cfg, False))
    res = Result()
    rows = []
    for swap in (False, True):
        rep = psi_domination(L, _rho(cfg), _params(cfg), R, cfg.seed, cfg["run.alpha"], cfg["geometry.d"], samples=s, swap=swap)
        tag = "swapped" if swap else "direct"
        res.add(f"{tag}.rejected", float(rep.rejected), replicas=R)
        res.add(f"{tag}.threshold", rep.threshold)
        for k, t in enumerate(rep.tests):
            res.add(f"{tag}.z[{k}]", t.z, replicas=R)
            rows.append([tag, k, t.name, t.mean_a, t.mean_b, t.z, int(t.rejected)])
        if not swap and rep.rejected:
            res.violations.append("the product-of-blocks law is not dominated at the stated level")
        if swap and not rep.rejected:
            res.violations.append("the swapped-order fixture was not rejected")
    res.table = (["order", "event", "name", "mean_a", "mean_b", "z", "rejected"], rows)
    return res


def run_labels(cfg: Config) -> Result:
    from .experiments import density_experiment

    P = _params(cfg)
    if P.family != "ising" or P.q != 2:
        raise ConfigError("model.family: phase labels need the ising family with q = 2")
    m_beta = cfg.get("labels.m_beta")
    if m_beta is None:
        raise ConfigError("labels.m_beta: required for phase-labels")
    R = cfg["run.replicas"]
    r = density_experiment(
        cfg["geometry.N"], cfg["geometry.L"], _rho(cfg), P, 0.0, 1.0, 0.0, "wired", R, cfg.seed, cfg["geometry.d"],
        _schedule(cfg, False), m_beta=m_beta, delta=cfg["labels.delta"], delta_iso=cfg["labels.delta_iso"],
    )
    res = Result()
    res.add("checked", r.labels_checked, replicas=R)
    res.add("violations", r.label_violations, replicas=R)
    for v in (-1, 0, 1):
        res.add(f"count[{v}]", r.label_counts[v], replicas=R)
    if r.label_violations:
        res.violations.append(f"{r.label_violations} samples violate the label invariants")
    return res


def run_covering(cfg: Config) -> Result:
    from .experiments import covering_sweep

    r = covering_sweep(cfg["geometry.max_side"], cfg["geometry.d"])
    res = Result()
    res.add("cases", r.cases)
    for k, v in sorted(r.failures.items()):
        res.add(f"{k}.failures", v, replicas=r.cases)
    res.add("max_multiplicity", r.max_multiplicity)
    res.violations += r.examples
    return res


def run_pivotal(cfg: Config) -> Result:
    from .experiments import pivotal_audit

    r = pivotal_audit(cfg["run.samples"], cfg.seed, cfg["geometry.N"])
    res = Result()
    res.add("configurations", r.configurations)
    res.add("doubly_connected.mismatches", r.doubly_mismatches, replicas=r.configurations)
    res.add("pivotal.mismatches", r.pivotal_mismatches, replicas=r.configurations)
    res.add("first_pivotal.failures", r.first_failures, replicas=r.configurations)
    res.add("connected_pairs", r.connected_pairs)
    res.add("pairs_with_pivotal", r.with_pivotal)
    res.violations += r.examples
    return res


def run_sampler_check(cfg: Config) -> Result:
    from .experiments import sampler_check, unit_square

    res = Result()
    rows = []
    for k, bc in enumerate(("free", "wired")):
        r = sampler_check(unit_square(), 1.0, _params(cfg), bc, cfg["run.sweeps"], 1000, _sub(cfg.seed, k))
        res.add(f"{bc}.max_z", r.max_z, replicas=cfg["run.sweeps"])
        res.add(f"{bc}.balance_residual", r.balance_residual)
        res.add(f"{bc}.stationarity_residual", r.stationarity_residual)
        for c in range(len(r.exact)):
            res.add(f"{bc}.freq[{c}]", r.freq[c], r.se[c], cfg["run.sweeps"])
            rows.append([bc, c, r.exact[c], r.freq[c], r.se[c]])
        if r.balance_residual > 1e-10 or r.stationarity_residual > 1e-10:
            res.violations.append(f"{bc}: transition matrix residual above 1e-10")
    res.table = (["bc", "config", "exact", "frequency", "se"], rows)
    return res


def _check_sampler(cfg):
    if cfg["run.sweeps"] < 1000:
        raise ConfigError("run.sweeps: at least 1000 sweeps are needed for 1000 batches")


def run_es_check(cfg: Config) -> Result:
    from .experiments import coupling_check
    from .lattice import box_lambda, edge_set
    from .sampler import stream

    box = box_lambda(cfg["geometry.N"], cfg["geometry.d"])
    J = _rho(cfg).sample(stream(cfg.seed, 0), len(edge_set(box, "wired")))
    r = coupling_check(box, J, cfg["model.beta"])
    res = Result()
    res.add("tv_spins", r.tv_spins)
    res.add("tv_bonds", r.tv_bonds)
    res.add("stationarity_residual", r.stationarity)
    res.add("conditional_spins", r.conditional_spins)
    if max(r.tv_spins, r.tv_bonds, r.stationarity, r.conditional_spins) > 1e-10:
        res.violations.append("coupling marginals or kernel deviate by more than 1e-10")
    return res


def _check_es(cfg):
    from .lattice import box_lambda, edge_set

    box = box_lambda(cfg["geometry.N"], cfg["geometry.d"])
    if box.size > 20 or len(edge_set(box, "wired")) > 16:
        raise ConfigError("geometry.N: the exact coupling check needs at most 20 sites and 16 edges")


def run_constants(cfg: Config) -> Result:
    from .experiments import constants_check

    r = constants_check(grid=cfg["run.samples"])
    res = Result()
    res.add("r_at_one_deviation", r.at_one)
    res.add("r_prime_at_one_deviation", r.prime_at_one)
    res.add("min_increment", r.min_increment, replicas=cfg["run.samples"])
    res.add("guard_failures", r.guard_failures)
    res.add("r_prime_minus_r_max", r.prime_excess)
    if r.at_one != 0 or r.prime_at_one != 0:
        res.violations.append("endpoint values differ from 1")
    if r.min_increment < 0:
        res.violations.append("r decreases on the grid")
    if r.guard_failures:
        res.violations.append("domain guard not enforced")
    return res


EXPERIMENTS: Dict[str, Experiment] = {
    "enumerate": Experiment(run_enumerate, ("verify.tolerance",), help="exact single-edge marginals"),
    "verify": Experiment(run_verify, ("verify.max_edges", "verify.tolerance"), help="inequality corpus"),
    "dlr-failure": Experiment(run_dlr, ("model.lambda", "model.p", "model.q"), _check_dlr, "two-edge averaged conditional"),
    "crossing": Experiment(
        run_crossing, ("geometry.d", "geometry.N_list", "geometry.l_fraction", "run.bc", "run.replicas", "run.sweeps") + MODEL,
        help="crossing and uniqueness probabilities",
    ),
    "density": Experiment(
        run_density,
        ("geometry.d", "geometry.N", "geometry.L", "geometry.theta_N", "run.replicas", "run.sweeps", "run.burn_in", "run.thin",
         "density.eps", "labels.delta", "labels.delta_iso", "labels.m_beta") + MODEL,
        _check_density, "density bracket, theta and magnetisation",
        defaults={"model.family": "ising"},
    ),
    "theta": Experiment(
        run_theta, ("geometry.d", "geometry.N_list", "run.replicas", "run.sweeps", "run.burn_in", "run.thin") + MODEL,
        help="theta curves for both boundary conditions",
    ),
    "slab": Experiment(
        run_slab, ("geometry.d", "geometry.N_list", "geometry.H", "run.replicas", "run.sweeps") + MODEL, _check_slab, "slab connectivity",
    ),
    "psi-domination": Experiment(
        run_psi, ("geometry.d", "geometry.L", "run.replicas", "run.sweeps", "run.alpha") + MODEL, help="product-of-blocks domination",
        defaults={"geometry.L": "6", "model.beta": "1.5", "run.sweeps": "60", "run.replicas": "10000"},
    ),
    "phase-labels": Experiment(
        run_labels,
        ("geometry.d", "geometry.N", "geometry.L", "run.replicas", "run.sweeps", "labels.delta", "labels.delta_iso", "labels.m_beta") + MODEL,
        _check_density, "phase-label invariants",
        defaults={"model.family": "ising"},
    ),
    "covering-check": Experiment(run_covering, ("geometry.d", "geometry.max_side"), help="covering clauses"),
    "pivotal-audit": Experiment(
        run_pivotal, ("geometry.N", "run.samples"), help="double connections and pivotal bonds", defaults={"geometry.N": "6"}
    ),
    "sampler-check": Experiment(
        run_sampler_check, ("model.q", "model.family", "model.beta", "run.sweeps"), _check_sampler, "chain against exact table",
        defaults={"model.family": "linear", "model.beta": "0.6", "run.sweeps": "1000000"},
    ),
    "es-check": Experiment(
        run_es_check, ("geometry.d", "geometry.N", "model.beta", "model.rho"), _check_es, "exact coupling marginals",
        defaults={"geometry.N": "3", "model.beta": "0.7"},
    ),
    "constants": Experiment(run_constants, ("run.samples",), help="renormalisation constants"),
}


# --------------------------------------------------------------------------
# entry points
# --------------------------------------------------------------------------


def load_config(experiment: str, path: Optional[str], sets: Sequence[str], seed: int) -> Config:
    raw: Dict[str, str] = {}
    if path:
        try:
            with open(path, encoding="utf-8") as fh:
                raw.update(parse_text(fh.read()))
        except OSError as exc:
            raise ConfigError(f"--config: {exc}") from None
    for s in sets:
        if "=" not in s:
            raise ConfigError(f"--set {s!r}: expected key=value")
        k, v = s.split("=", 1)
        raw[k.strip()] = v.strip()
    return resolve(experiment, raw, seed)


def execute(cfg: Config) -> Result:
    try:
        return EXPERIMENTS[cfg.experiment].run(cfg)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def run(cfg: Config, out: str) -> int:
    from .ising import InvariantViolation

    try:
        res = execute(cfg)
    except InvariantViolation as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_VIOLATION
    write_outputs(cfg, res, out)
    for m in res.metrics:
        print(f"{m.name} = {fmt_real(m.value)}" + ("" if math.isnan(m.se) else f" +- {fmt_real(m.se)}"))
    if res.violations:
        for v in res.violations[:20]:
            print(f"VIOLATION: {v}", file=sys.stderr)
        return EXIT_VIOLATION
    return EXIT_OK


def reproduce(path: str, sets: Sequence[str] = (), seed: Optional[int] = None) -> int:
    """Rerun a result file and compare metric values textually."""
    cfg, recorded = read_records(path)
    raw = {k: _canon(v) for k, v in cfg.values.items() if v is not None}
    changed = []
    for s in sets:
        k, v = s.split("=", 1)
        raw[k.strip()] = v.strip()
    new = resolve(cfg.experiment, raw, cfg.seed if seed is None else seed)
    for k in sorted(set(cfg.values) | set(new.values)):
        if _canon(cfg.values.get(k)) != _canon(new.values.get(k)):
            changed.append(f"config field {k}: {_canon(cfg.values.get(k))} -> {_canon(new.values.get(k))}")
    if new.seed != cfg.seed:
        changed.append(f"config field seed: {cfg.seed} -> {new.seed}")
    res = execute(new)
    fresh = [metric_line(m) for m in res.metrics]
    diffs = []
    for k, (a, b) in enumerate(itertools.zip_longest(recorded, fresh)):
        if a != b:
            diffs.append(f"record {k + 1}:\n  recorded   {a}\n  reproduced {b}")
    if diffs:
        print(f"MISMATCH in {len(diffs)} of {max(len(recorded), len(fresh))} metric records")
        for c in changed:
            print(c)
        for d in diffs[:50]:
            print(d)
        return EXIT_MISMATCH
    print(f"reproduced {len(fresh)} metric records identically (config hash {cfg.hash})")
    for c in changed:
        print(c)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fk-coarse", description=__doc__.split("\n")[0])
    ap.add_argument("experiment", help="one of: " + ", ".join(list(EXPERIMENTS) + ["reproduce", "schema"]))
    ap.add_argument("target", nargs="?", help="result directory or file (reproduce only)")
    ap.add_argument("--config", help="flat key = value configuration file")
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one key (repeatable)")
    ap.add_argument("--seed", type=int, default=None, help="master seed (unsigned 64-bit)")
    ap.add_argument("--out", default="results", help="output directory")
    return ap


def print_schema() -> None:
    for k, f in SCHEMA.items():
        used = [e for e, x in EXPERIMENTS.items() if k in x.keys]
        print(f"{k} = {f.default if f.default is not None else '<unset>'}    # {f.help}; {f.rule or 'any'}; used by {', '.join(used)}")


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.experiment == "schema":
            print_schema()
            return EXIT_OK
        if args.experiment == "reproduce":
            if not args.target:
                raise ConfigError("reproduce: a result directory or file is required")
            return reproduce(args.target, args.set, args.seed)
        if args.target:
            raise ConfigError(f"unexpected argument {args.target!r}")
        cfg = load_config(args.experiment, args.config, args.set, 0 if args.seed is None else args.seed)
        return run(cfg, args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
