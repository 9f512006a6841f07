import json

import numpy as np
import pytest

from trapescape import cli
from trapescape.errors import ConfigError
from trapescape.harness import read_config_echo, run, summarize, validate

SMALL = {
    "escape": {"u_values": [0.01, 0.05], "radius": 31, "maxT": 20},
    "soup": {"d": 3, "radius": 1, "u_max": 0.5, "u_grid": [0.25, 0.5], "block": 40},
    "sprinkle": {"block": 50},
    "capacity": {},
    "renorm-constants": {"max_height": 64},
    "theorem3": {"max_height": 64, "u_grid": [300.0, 400.0]},
    "percolation-probe": {"radius": 5, "u_grid": [0.0, 0.5, 3.0]},
    "slab-equivalence": {"block": 40},
}
REPLICAS = {"escape": 3, "soup": 100, "sprinkle": 120, "percolation-probe": 4, "slab-equivalence": 100}


def _cfg(kind, **kw):
    c = {"kind": kind, "seed": 7, "replicas": REPLICAS.get(kind, 1), "params": dict(SMALL[kind])}
    c.update(kw)
    return c


def _pointer(cfg):
    with pytest.raises(ConfigError) as ei:
        validate(cfg)
    return ei.value.pointer


def test_schema_pointers():
    assert _pointer({"kind": "soup", "seed": 1, "replicas": 0}) == "/replicas"
    assert _pointer({"kind": "soup", "seed": -1, "replicas": 1}) == "/seed"
    assert _pointer({"kind": "soup", "seed": 1, "replicas": 1, "params": {"radius": -2}}) == "/params/radius"
    assert _pointer({"kind": "soup", "seed": 1, "replicas": 1, "params": {"bogus": 1}}) == "/params"
    assert _pointer({"kind": "nope", "seed": 1, "replicas": 1}) == "/kind"


def test_defaults_filled():
    cfg = validate({"kind": "capacity", "seed": 0, "replicas": 1})
    assert cfg["params"]["sites"] == [[0, 0, 0], [1, 0, 1]] and cfg["jobs"] == 1


def test_capacity_run():
    s = run(_cfg("capacity"))
    assert s.passed
    assert s.values["cap"] == pytest.approx(1.75, abs=1e-12)


@pytest.mark.parametrize("kind", list(SMALL))
def test_byte_identical(kind, tmp_path):
    outs = []
    for i, jobs in enumerate((1, 1, 2)):
        d = tmp_path / str(i)
        run(_cfg(kind, jobs=jobs), out=str(d))
        outs.append(((d / f"{kind}.csv").read_bytes(), (d / f"{kind}.json").read_bytes()))
    assert outs[0] == outs[1] == outs[2]


@pytest.mark.parametrize("kind", ["capacity", "soup"])
def test_config_echo(kind, tmp_path):
    cfg = _cfg(kind, jobs=2, out=str(tmp_path))
    run(cfg)
    full = validate(cfg)
    want = {k: v for k, v in full.items() if k not in ("jobs", "out")}
    for ext in ("csv", "json"):
        got = read_config_echo(str(tmp_path / f"{kind}.{ext}"))
        assert got == json.loads(json.dumps(want))
    d2 = tmp_path / "again"
    run(read_config_echo(str(tmp_path / f"{kind}.csv")), out=str(d2))
    assert (d2 / f"{kind}.csv").read_bytes() == (tmp_path / f"{kind}.csv").read_bytes()


def test_soup_vacancy_exact():
    s = run(_cfg("soup", replicas=2000, params={"d": 3, "radius": 0, "u_max": 1.0, "u_grid": [0.2, 1.0],
                                               "block": 500}))
    assert s.passed


def test_summarize():
    out = summarize({"hit": np.zeros(1000, dtype=bool), "x": [1.0, 2.0, 3.0]})
    assert out["hit"]["lo"] == pytest.approx(0.0, abs=1e-12)
    assert out["hit"]["hi"] == pytest.approx(3.84 / 1000, rel=0.01)
    assert out["x"]["mean"] == 2.0 and out["x"]["se"] == pytest.approx(1 / np.sqrt(3))
    full = summarize({"hit": np.ones(50, dtype=bool)})
    assert full["hit"]["hi"] == 1.0
    with pytest.raises(ConfigError):
        summarize({})
    with pytest.raises(ConfigError):
        summarize({"hit": []})


def test_cli_exit_codes(tmp_path, capsys):
    assert cli.main(["capacity", "--out", str(tmp_path)]) == 0
    assert "PASS reflection" in capsys.readouterr().out
    assert cli.main(["soup", "--replicas", "0"]) == 1
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert cli.main(["capacity", "--config", str(bad)]) == 1
    # a zero tolerance on the safety rate cannot pass
    cfg = tmp_path / "esc.json"
    cfg.write_text(json.dumps({"kind": "escape", "params": {"radius": 22, "maxT": 5, "u_values": [0.01],
                                                            "max_safety_rate": 0}}))
    assert cli.main(["escape", "--config", str(cfg)]) == 2
    assert "FAIL safety_rate" in capsys.readouterr().out


def test_cli_kind_mismatch(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"kind": "soup"}))
    assert cli.main(["capacity", "--config", str(cfg)]) == 1
