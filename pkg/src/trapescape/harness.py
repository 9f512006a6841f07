"""Experiment runner: configuration, replica seeding, reduction and output.

Replica r (or block b, for experiments batched in fixed-size blocks) draws
from stream(seed, r). Blocks are fixed by the configuration, never by the
number of worker processes, and results are reduced in index order, so the
output files do not depend on --jobs.

Output files start with two comment lines, the config schema id and the
canonical config JSON, followed by a CSV table. Execution-only fields (jobs,
out) are left out of the echo so that files from runs differing only in
parallelism or location are byte-identical.
"""

from __future__ import annotations

import copy
import csv
import io
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources

import jsonschema
import numpy as np

from .errors import ConfigError, WindowExhaustedError
from .rng import stream
from .stats import frequency, mean_se

log = logging.getLogger(__name__)

SCHEMA_ID = "trapescape-config/1"
EXECUTION_FIELDS = ("jobs", "out")

DEFAULTS = {
    "escape": {"u_values": [0.002, 0.01, 0.02], "radius": 400, "maxT": 300, "band": 9, "max_safety_rate": 0.001},
    "soup": {"d": 3, "radius": 1, "u_max": 0.5, "u_grid": [0.5], "block": 10000, "sigmas": 3.0},
    "sprinkle": {
        "S1": [[x, y, t] for x in range(-2, 3) for y in range(-2, 3) for t in range(-2, 3)],
        "S2": [[14 + x, y, 14 + t] for x in range(-2, 3) for y in range(-2, 3) for t in range(-2, 3)],
        "K1": [[0, 0, 0], [1, 0, 1]],
        "K2": [[14, 0, 14], [15, 0, 15]],
        "u_minus": 1.0, "u_plus": 2.0,
        "events": [["covered", "covered"], ["vacant", "vacant"]],
        "block": 10000, "sigmas": 3.0,
    },
    "capacity": {"sites": [[0, 0, 0], [1, 0, 1]]},
    "renorm-constants": {"d": 3, "max_height": 1024},
    "theorem3": {"d": 3, "max_height": 1024, "u_grid": [float(u) for u in range(1, 1001)]},
    "percolation-probe": {"d": 3, "radius": 40, "u_grid": [0.1, 0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 2.0]},
    "slab-equivalence": {"d": 3, "u": 0.5, "T": 2, "block": 10000, "sigmas": 3.0},
}


def load_schema() -> dict:
    with resources.files("trapescape").joinpath("schema/config.schema.json").open() as fh:
        return json.load(fh)


def _pointer(path) -> str:
    return "".join(f"/{p}" for p in path) or "/"


def validate(config: dict) -> dict:
    """Validate against the published schema, fill parameter defaults."""
    v = jsonschema.Draft202012Validator(load_schema())
    errors = sorted(v.iter_errors(config), key=lambda e: (len(e.absolute_path), list(map(str, e.absolute_path))))
    if errors:
        # the deepest error names the offending field most precisely
        e = max(errors, key=lambda e: len(e.absolute_path))
        raise ConfigError(e.message, _pointer(e.absolute_path))
    cfg = copy.deepcopy(config)
    params = dict(DEFAULTS[cfg["kind"]])
    params.update(cfg.get("params", {}))
    cfg["params"] = params
    cfg.setdefault("jobs", 1)
    return cfg


def echo(config: dict) -> dict:
    return {k: v for k, v in config.items() if k not in EXECUTION_FIELDS}


def canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def write_table(path: str, config: dict, header: list, rows: list) -> None:
    buf = io.StringIO()
    buf.write(f"# schema: {SCHEMA_ID}\n")
    buf.write(f"# config: {canonical(echo(config))}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(r.get(h, "")) for h in header])
    with open(path, "w") as fh:
        fh.write(buf.getvalue())


def write_json(path: str, config: dict, payload: dict) -> None:
    doc = {"schema": SCHEMA_ID, "config": echo(config), "result": payload}
    with open(path, "w") as fh:
        fh.write(json.dumps(_plain(doc), sort_keys=True, indent=1))
        fh.write("\n")


def read_config_echo(path: str) -> dict:
    """The config echoed into an output file (CSV or JSON)."""
    with open(path) as fh:
        text = fh.read()
    if text.startswith("# schema:"):
        line = text.splitlines()[1]
        return json.loads(line[len("# config: "):])
    return json.loads(text)["config"]


def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return x


def _plain(x):
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, (np.bool_,)):
        return bool(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else repr(x)
    if hasattr(x, "__float__") and not isinstance(x, (int, bool, str)):
        return float(x)
    return x


# ---------------------------------------------------------------------------
# summaries

@dataclass
class RunSummary:
    kind: str
    checks: dict  # name -> bool
    values: dict = field(default_factory=dict)
    elapsed: float = 0.0

    @property
    def passed(self) -> bool:
        return all(self.checks.values())


def summarize(results: dict) -> dict:
    """Wilson intervals for boolean series, mean and standard error otherwise."""
    if not results or any(len(v) == 0 for v in results.values()):
        raise ConfigError("nothing to summarize", "/replicas")
    out = {}
    for k, v in results.items():
        arr = np.asarray(v)
        if arr.dtype == bool:
            out[k] = frequency(int(arr.sum()), arr.size).as_dict()
        else:
            m, se = mean_se(arr)
            out[k] = {"mean": m, "se": se, "n": int(arr.size)}
    return out


def _map(fn, tasks, jobs: int):
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, tasks))


def _blocks(n: int, size: int) -> list[tuple[int, int]]:
    return [(b, min(size, n - b * size)) for b in range((n + size - 1) // size)]


# ---------------------------------------------------------------------------
# experiments; workers are module level so they pickle

def _escape_worker(task):
    seed, r, p = task
    from .escape import coupled_escape
    from .lattice import Window
    window = Window.ball((0, 0), p["radius"])
    rows = []
    try:
        res = coupled_escape(p["u_values"], window, p["maxT"], (seed, r), band=p["band"])
    except WindowExhaustedError as exc:
        return [{"replica": r, "u": u, "error": str(exc)} for u in p["u_values"]]
    for u in p["u_values"]:
        t = res[u]
        row = {"replica": r, "u": u, "error": ""}
        row.update(t.row())
        row.update({"inconclusive": int(t.inconclusive), "invariant_failures": t.invariant_failures,
                    "safety_violations": t.safety_violations, "bound_violations": t.bound_violations,
                    "steps": len(t.steps) - 1})
        rows.append(row)
    return rows


def run_escape(cfg):
    p = cfg["params"]
    tasks = [(cfg["seed"], r, p) for r in range(cfg["replicas"])]
    rows = [row for part in _map(_escape_worker, tasks, cfg["jobs"]) for row in part]
    us = sorted(p["u_values"])
    surv = {u: sum(r.get("survived", 0) for r in rows if r["u"] == u) for u in us}
    steps = sum(r.get("steps", 0) for r in rows)
    safety = sum(r.get("safety_violations", 0) for r in rows)
    n = cfg["replicas"]
    summary = {
        "survival": {repr(u): frequency(surv[u], n).as_dict() for u in us},
        "steps": steps, "safety_violations": safety,
        "safety_rate": safety / steps if steps else 0.0,
        "bound_violations": sum(r.get("bound_violations", 0) for r in rows),
        "inconclusive": {repr(u): sum(r.get("inconclusive", 0) for r in rows if r["u"] == u) for u in us},
        "window_exhausted": sum(1 for r in rows if r["error"]),
    }
    checks = {
        "survival_positive": surv[us[0]] > 0,
        "survival_monotone": all(surv[a] >= surv[b] for a, b in zip(us, us[1:])),
        "safety_rate": summary["safety_rate"] < p["max_safety_rate"],
        "speed_bound": summary["bound_violations"] == 0,
        "window": summary["window_exhausted"] == 0,
    }
    header = ["replica", "u", "survived", "T_det", "frozen", "inconclusive", "invariant_failures",
              "safety_violations", "bound_violations", "steps", "mean_S", "max_S", "error"]
    return header, rows, summary, checks


def _soup_worker(task):
    seed, b, size, p = task
    from .interlace import sample_soup
    from .lattice import Window
    K = Window.ball((0,) * p["d"], p["radius"])
    soup = sample_soup(K, p["u_max"], stream(seed, b), d=p["d"], n_soups=size)
    return np.stack([soup.box_vacant(K, u) for u in p["u_grid"]], axis=1)


def run_soup(cfg):
    from .lattice import Window
    from .potential import cached_equilibrium
    p = cfg["params"]
    if max(p["u_grid"]) > p["u_max"]:
        raise ConfigError("u_grid exceeds u_max", "/params/u_grid")
    tasks = [(cfg["seed"], b, size, p) for b, size in _blocks(cfg["replicas"], p["block"])]
    V = np.concatenate(_map(_soup_worker, tasks, cfg["jobs"]))
    cap = cached_equilibrium(Window.ball((0,) * p["d"], p["radius"]), p["d"]).cap
    rows, checks = [], {}
    n = len(V)
    for j, u in enumerate(p["u_grid"]):
        f = frequency(int(V[:, j].sum()), n)
        exact = math.exp(-u * cap)
        sig = math.sqrt(exact * (1 - exact) / n)
        z = (f.estimate - exact) / sig if sig > 0 else (0.0 if f.estimate == exact else math.inf)
        ok = abs(z) <= p["sigmas"]
        checks[f"vacancy_u={u!r}"] = ok
        rows.append({"u": u, "vacant": f.successes, "n": n, "estimate": f.estimate, "lo": f.lo, "hi": f.hi,
                     "exact": exact, "z": z, "pass": ok})
    # sample-wise monotonicity of the level coupling
    order = np.argsort(p["u_grid"])
    checks["coupling_monotone"] = bool(np.all(V[:, order][:, 1:] <= V[:, order][:, :-1]))
    indicators = {repr(u): "".join("1" if b else "0" for b in V[:, j]) for j, u in enumerate(p["u_grid"])}
    summary = {"cap": cap, "vacancy_indicators": indicators}
    return ["u", "vacant", "n", "estimate", "lo", "hi", "exact", "z", "pass"], rows, summary, checks


def _sprinkle_worker(task):
    seed, b, size, p = task
    from .sprinkle import decorrelation_occupancy
    return decorrelation_occupancy(p["K1"], p["K2"], p["u_minus"], p["u_plus"], size, stream(seed, b))


def run_sprinkle(cfg):
    from . import sprinkle as sp
    from .potential import cached_equilibrium
    p = cfg["params"]
    try:
        geom = sp.build_geometry(p["S1"], p["S2"], p.get("L"))
    except Exception as exc:
        raise ConfigError(str(exc), "/params/S2") from exc
    K1, K2 = sp._sites(p["K1"]), sp._sites(p["K2"])
    if not set(K1) <= geom.S1 or not set(K2) <= geom.S2:
        raise ConfigError("K_i must be contained in S_i", "/params/K1")
    if not 0 < p["u_minus"] < p["u_plus"]:
        raise ConfigError("need 0 < u_minus < u_plus", "/params/u_plus")
    cap = cached_equilibrium(geom.S, geom.d).cap
    eps = sp.decorrelation_eps(geom, p["u_minus"], p["u_plus"])
    delta = p["u_plus"] / p["u_minus"] - 1
    summary = {"L": geom.L, "z1": geom.z1, "z2": geom.z2, "cap_S": cap, "eps": eps, "delta": delta}
    checks = {}
    if delta <= math.exp(3):
        tail = sp.coupling_tail_check(p["u_minus"], delta, cap)
        summary["tail"] = {k: getattr(tail, k) for k in ("lam1", "log_p_low", "log_p_high_hi", "log_bound_each",
                                                         "log_bound_total", "series", "series_bound", "j_max", "neglected_mass")}
        checks.update({f"tail_{k}": v for k, v in tail.checks.items()})
    tasks = [(cfg["seed"], b, size, p) for b, size in _blocks(cfg["replicas"], p["block"])]
    parts = _map(_sprinkle_worker, tasks, cfg["jobs"])
    occ_m = np.concatenate([a for a, _ in parts])
    occ_p = np.concatenate([b for _, b in parts])
    rows = []
    for e1, e2 in p["events"]:
        rep = sp.decorrelation_report(occ_m, occ_p, len(K1), e1, e2, p["u_minus"], p["u_plus"], eps)
        ok = rep.passed(p["sigmas"])
        checks[f"decorrelation_{e1}_{e2}"] = ok
        rows.append({"event1": e1, "event2": e2, "kind": rep.kind, "n": rep.n, "lhs": rep.lhs, "p1": rep.p1,
                     "p2": rep.p2, "rhs": rep.rhs, "eps": rep.eps, "se": rep.se, "slack": rep.slack,
                     "slack_no_eps": rep.slack_no_eps, "pass": ok})
    header = ["event1", "event2", "kind", "n", "lhs", "p1", "p2", "rhs", "eps", "se", "slack", "slack_no_eps", "pass"]
    return header, rows, summary, checks


def run_capacity(cfg):
    from .potential import equilibrium, reflect_capacity_check
    p = cfg["params"]
    sites = p.get("sites")
    if "sites_file" in p:
        with open(p["sites_file"]) as fh:
            sites = json.load(fh)
    if not sites or len({len(s) for s in sites}) != 1:
        raise ConfigError("sites must be a nonempty list of equal-length integer lists", "/params/sites")
    d = len(sites[0])
    table = equilibrium(sites, d)
    triple = reflect_capacity_check(sites, d)
    em = table.equilibrium_measure()
    nm = table.normalized_measure()
    rows = [{"site": " ".join(map(str, s)), "e_K": em[s], "e_tilde": nm[s]} for s in sorted(em)]
    checks = {"reflection": max(triple) - min(triple) <= 1e-12}
    summary = {"cap": table.cap, "reflect_triple": list(triple)}
    return ["site", "e_K", "e_tilde"], rows, summary, checks


def _c_d(p):
    if "c_d" in p:
        return float(p["c_d"])
    from .potential import lclt_constant
    return float(lclt_constant(p["d"], p["max_height"]).estimate)


def run_renorm_constants(cfg):
    import mpmath as mp
    from . import renorm as rn
    p = cfg["params"]
    d = p["d"]
    c_d = _c_d(p)
    D, C = rn.constants(d, c_d)
    raw = (D * mp.e ** -3) ** (mp.mpf(4) / (d - 2))
    checks = {"D_at_least_80": D >= 80, "C_covers": C >= raw and C - 1000 < raw, "C_multiple_of_1000": C % 1000 == 0}
    rows = []
    for n in range(6):
        dl, ep, eb = rn.formulas(n, C, 1.0, C, d, D)
        rows.append({"n": n, "l0": C, "delta": mp.nstr(dl, 15), "eps_u1": mp.nstr(ep, 15), "eps_bar_u1": mp.nstr(eb, 15)})
    summary = {"d": d, "c_d": c_d, "D": mp.nstr(D, 20), "C": str(C)}
    return ["n", "l0", "delta", "eps_u1", "eps_bar_u1"], rows, summary, checks


def run_theorem3(cfg):
    import mpmath as mp
    from . import renorm as rn
    p = cfg["params"]
    c_d = _c_d(p)
    rep = rn.theorem3_pipeline(p["d"], c_d, p["u_grid"])
    checks = {"grid_monotone": rep.grid_monotone, "u_found": rep.u is not None,
              "first_condition": rep.product_bound < mp.mpf(1.5)}
    summary = {"c_d": c_d, "D": mp.nstr(rep.D, 20), "C": str(rep.C), "l0_star": str(rep.l0_star),
               "product_bound": mp.nstr(rep.product_bound, 20), "u": rep.u, "u_prime": rep.u_prime,
               "u_threshold": mp.nstr(rep.u_threshold, 20), "failing": rep.failing,
               "largest_tried": rep.largest_tried}
    return ["u", "value", "ok"], rep.rows, summary, checks


def _probe_worker(task):
    seed, r, p = task
    from .renorm import probe_replica
    return probe_replica(p["d"], p["u_grid"], p["radius"], stream(seed, r))


def run_percolation_probe(cfg):
    from . import renorm as rn
    p = cfg["params"]
    grid = sorted(p["u_grid"])
    p = dict(p, u_grid=grid)
    tasks = [(cfg["seed"], r, p) for r in range(cfg["replicas"])]
    X = np.asarray(_map(_probe_worker, tasks, cfg["jobs"]))
    rep = rn.summarize_probe(grid, X)
    rows = []
    for j, u in enumerate(grid):
        f = frequency(int(X[:, j].sum()), len(X))
        rows.append({"u": u, "crossing": f.successes, "n": f.trials, "estimate": f.estimate, "lo": f.lo, "hi": f.hi})
    checks = {"monotone": rep.monotone, "u_low": rep.u_low is not None, "u_high": rep.u_high is not None}
    t3 = rn.theorem3_pipeline(p["d"], _c_d({"d": p["d"], "max_height": 1024}),
                              DEFAULTS["theorem3"]["u_grid"])
    summary = {"u_low": rep.u_low, "u_high": rep.u_high,
               "certified_u_prime": t3.u_prime,
               "note": "u' is the certified formula output, not a simulation result",
               "indicators": ["".join("1" if b else "0" for b in row) for row in X]}
    return ["u", "crossing", "n", "estimate", "lo", "hi"], rows, summary, checks


def _slab_worker(task):
    seed, b, size, p = task
    from .interlace import slab_occupancy
    return slab_occupancy(p["u"], p["d"], size, stream(seed, b), T=p["T"])


def run_slab(cfg):
    from .interlace import slab_report
    p = cfg["params"]
    tasks = [(cfg["seed"], b, size, p) for b, size in _blocks(cfg["replicas"], p["block"])]
    parts = _map(_slab_worker, tasks, cfg["jobs"])
    rep = slab_report(p["u"], np.concatenate([a for a, _ in parts]), np.concatenate([b for _, b in parts]))
    rows = []
    for name, a, b, z in (("occupancy", rep.trap_occ, rep.soup_occ, rep.z_occ),
                          ("lag1", rep.trap_lag1, rep.soup_lag1, rep.z_lag1),
                          ("lag2", rep.trap_lag2, rep.soup_lag2, rep.z_lag2)):
        rows.append({"statistic": name, "trap": a["estimate"], "trap_n": a["trials"], "soup": b["estimate"],
                     "soup_n": b["trials"], "z": z})
    checks = {"slab_equivalence": rep.passed(p["sigmas"])}
    summary = {"target": rep.target}
    return ["statistic", "trap", "trap_n", "soup", "soup_n", "z"], rows, summary, checks


RUNNERS = {
    "escape": run_escape,
    "soup": run_soup,
    "sprinkle": run_sprinkle,
    "capacity": run_capacity,
    "renorm-constants": run_renorm_constants,
    "theorem3": run_theorem3,
    "percolation-probe": run_percolation_probe,
    "slab-equivalence": run_slab,
}


def run(config: dict, out: str | None = None) -> RunSummary:
    """Validate, execute and write <out>/<kind>.csv and <out>/<kind>.json."""
    cfg = validate(config)
    t0 = time.perf_counter()
    header, rows, summary, checks = RUNNERS[cfg["kind"]](cfg)
    checks = {k: bool(v) for k, v in checks.items()}
    out = out or cfg.get("out")
    if out:
        os.makedirs(out, exist_ok=True)
        stem = os.path.join(out, cfg["kind"])
        write_table(stem + ".csv", cfg, header, rows)
        write_json(stem + ".json", cfg, {"summary": summary, "checks": checks})
    elapsed = time.perf_counter() - t0
    log.info("%s finished in %.2fs", cfg["kind"], elapsed)
    return RunSummary(cfg["kind"], checks, summary, elapsed)
