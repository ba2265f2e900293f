import csv
import json
from pathlib import Path

import numpy as np
import pytest
import yaml

from csmd.bench.aggregate import AggregateCurve, aggregate, common_grid
from csmd.bench.cli import main
from csmd.bench.config import ConfigError, load_config, parse_config
from csmd.bench.output import AGGREGATE, HEADER, MANIFEST, STAGES, TRACES, emit_outputs, read_traces
from csmd.bench.runner import derive_seed, run_experiment
from csmd.trace import Checkpoint, RunTrace

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

TINY = {
    "name": "tiny",
    "model": {"n": 40, "s": 3, "sigma": 0.01},
    "budget": 3000,
    "repetitions": 2,
    "base_seed": 7,
    "smoothness": "expected",
    "algorithms": [
        {"kind": "csmd_sr", "params": {"m0_override": 300, "mode": "minibatch", "ell1_override": 1}},
        {"kind": "vanilla_smd"},
        {"kind": "rda"},
        {"kind": "sgd"},
    ],
}


def _write(tmp_path, raw, name="exp.cfg"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(raw))
    return path


def test_minimal_config_defaults():
    cfg = load_config(CONFIGS / "minimal.cfg")
    assert cfg.checkpoints == 50 and cfg.t == "auto" and cfg.initial_radius == "auto"
    assert cfg.model.sigmas == (0.01,) and cfg.model.alpha == 1.0
    assert cfg.minoration == "theory"
    alg = cfg.algorithms[0]
    assert alg.id == "csmd_sr" and alg.params["mode"] == "nobatch"
    c = alg.schedule_constants()
    assert c.m0 == 1000 and c.c_m0 == 64.0 and c.c_t == 60.0


def test_shipped_fig2_config():
    cfg = load_config(CONFIGS / "fig2_desk.cfg")
    assert (cfg.model.n, cfg.model.s) == (5000, 50)
    assert set(cfg.model.sigmas) == {0.001, 0.1}
    assert [a.kind for a in cfg.algorithms] == ["csmd_sr", "vanilla_smd", "rda", "sgd"]
    assert cfg.repetitions == 20 and cfg.budget == 100_000


@pytest.mark.parametrize("name", ["fig6_desk.cfg", "paper_scale.cfg", "minimal.cfg"])
def test_shipped_configs_parse(name):
    load_config(CONFIGS / name)


@pytest.mark.parametrize("patch,key", [
    ({"model": {"n": 10, "s": 11, "sigma": 0.1}}, "s"),
    ({"model": {"n": 10, "s": 2, "sigma": -0.1}}, "sigma"),
    ({"model": {"n": 10, "s": 2, "sigma": 0.1, "alpha": 2.0}}, "alpha"),
    ({"model": {"n": 10, "s": 2, "sigma": 0.1, "depth": 3}}, "depth"),
    ({"budget": 0}, "budget"),
    ({"repetitions": 0}, "repetitions"),
    ({"smoothness": "loose"}, "smoothness"),
    ({"minoration": -1}, "minoration"),
    ({"colour": "red"}, "colour"),
    ({"algorithms": [{"kind": "adam"}]}, "kind"),
    ({"algorithms": [{"kind": "sgd", "params": {"gamma0": -1}}]}, "gamma0"),
    ({"algorithms": [{"kind": "csmd_sr", "params": {"mode": "fast"}}]}, "mode"),
    ({"algorithms": [{"kind": "csmd_sr", "params": {"constants": {"c_zz": 1}}}]}, "c_zz"),
    ({"algorithms": [{"kind": "sgd"}, {"kind": "sgd"}]}, "id"),
])
def test_validation_errors_name_the_key(patch, key):
    raw = dict(TINY, **patch)
    with pytest.raises(ConfigError) as err:
        parse_config(raw)
    assert err.value.key.split(".")[-1] == key
    assert f"'{err.value.key}'" in str(err.value)


def test_unparsable_file(tmp_path):
    p = tmp_path / "bad.cfg"
    p.write_text("model: [unclosed\n")
    with pytest.raises(ValueError):
        load_config(p)


def test_covariance_specs():
    raw = dict(TINY, model={"n": 4, "s": 1, "sigma": 0.1, "covariance": {"min": 0.5, "max": 2}})
    np.testing.assert_allclose(parse_config(raw).model.covariance_diagonal(), [0.5, 1.0, 1.5, 2.0])
    raw["model"] = {"n": 3, "s": 1, "sigma": 0.1, "covariance": [1, 2, 3]}
    np.testing.assert_allclose(parse_config(raw).model.covariance_diagonal(), [1, 2, 3])


def _trace(alg, calls, errs, seed=0):
    t = RunTrace(alg, seed)
    for c, e in zip(calls, errs):
        t.checkpoints.append(Checkpoint(c, c, e, e / 2, e, None))
    return t


def test_aggregate_single_and_identical_traces():
    t = _trace("a", [0, 10, 100], [3.0, 2.0, 1.0])
    (c,) = aggregate([t])
    assert np.array_equal(c.median_l1, c.p10_l1) and np.array_equal(c.median_l1, c.p90_l1)
    assert c.median_l1[0] == 3.0 and c.median_l1[-1] == 1.0
    (c20,) = aggregate([_trace("a", [0, 10, 100], [3.0, 2.0, 1.0], s) for s in range(20)])
    assert np.array_equal(c20.p10_l1, c20.p90_l1)
    np.testing.assert_array_equal(c20.median_l1, c.median_l1)
    with pytest.raises(ValueError):
        aggregate([])


def test_aggregate_brackets_and_order_statistics():
    rng = np.random.default_rng(1)
    traces = []
    for s in range(20):
        calls = np.unique(rng.integers(1, 5000, 30))
        traces.append(_trace("a", [0, *calls], rng.exponential(size=calls.size + 1), s))
    traces.append(_trace("b", [0, 100], [1.0, 0.5]))
    failed = _trace("a", [0, 50], [9.0, 9.0])
    failed.failed = "boom"
    curves = aggregate(traces + [failed])
    assert [c.algorithm for c in curves] == ["a", "b"]
    c = curves[0]
    assert np.all(c.p10_l1 <= c.median_l1) and np.all(c.median_l1 <= c.p90_l1)
    assert np.all(c.p10_l2 <= c.median_l2) and np.all(c.median_l2 <= c.p90_l2)
    assert c.oracle_calls[0] == 0 and np.all(np.diff(c.oracle_calls) > 0)
    # nearest rank: the 2nd and 18th smallest of 20 values
    col = np.sort([t.checkpoints[-1].err_l1 for t in traces[:20]])
    assert c.p10_l1[-1] == col[1] and c.p90_l1[-1] == col[17]
    assert c.median_l1[-1] == pytest.approx(0.5 * (col[9] + col[10]))


def test_common_grid_is_log_spaced():
    g = common_grid([_trace("a", [0, 10, 10_000], [1, 1, 1])])
    assert g[0] == 0 and g[1] == 10 and g[-1] == 10_000
    ratios = g[2:] / g[1:-1]
    assert np.allclose(ratios, ratios.mean(), rtol=0.1)


def test_emit_outputs(tmp_path):
    out = emit_outputs([], [], tmp_path / "empty", config={"k": 1})
    assert sorted(p.name for p in out.iterdir()) == [MANIFEST]
    man = json.loads((out / MANIFEST).read_text())
    assert man["config"] == {"k": 1} and "version" in man
    t = _trace("a", [0, 10, 100], [3.0, 2.0, 1.0])
    t.stages.append({"stage": 1, "err_l1": 2.0})
    v = np.array([3.0, 2.0, 1.0])
    curve = AggregateCurve("a", np.array([0, 10, 100]), v, v, v, v / 2, v / 2, v / 2)
    out = emit_outputs([curve], [t], tmp_path / "one")
    rows = list(csv.reader((out / AGGREGATE).open()))
    assert rows[0] == HEADER
    assert len(rows) == 4
    assert rows[2] == ["a", "10", "2.0", "2.0", "2.0", "1.0", "1.0", "1.0"]
    lines = (out / TRACES).read_text().splitlines()
    rec = json.loads(lines[0])
    for key in ("algorithm", "seed", "oracle_calls", "err_l1", "err_l2", "obj_gap", "stage", "phase"):
        assert key in rec
    assert json.loads((out / STAGES).read_text())["err_l1"] == 2.0
    back = read_traces(out)
    assert back[0].checkpoints == t.checkpoints


def test_emit_outputs_reports_unwritable_path(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    with pytest.raises(OSError) as err:
        emit_outputs([], [], blocker / "sub")
    assert str(blocker / "sub") in str(err.value)


def test_run_experiment_counts_and_seeds():
    cfg = parse_config(dict(TINY, repetitions=1, algorithms=[{"kind": "sgd"}]))
    traces = run_experiment(cfg)
    assert len(traces) == 1 and traces[0].failed is None
    cfg2 = parse_config(dict(TINY, model=dict(TINY["model"], sigma=[0.01, 0.1])))
    traces = run_experiment(cfg2)
    assert len(traces) == 2 * 4 * 2
    assert len({t.seed for t in traces}) == len(traces)
    assert {t.algorithm for t in traces} >= {"sgd@sigma=0.01", "csmd_sr@sigma=0.1"}
    assert derive_seed(1, 2, 3) == derive_seed(1, 2, 3) != derive_seed(1, 2, 4)


def test_run_is_deterministic_across_threads():
    cfg = parse_config(TINY)
    a = run_experiment(cfg)
    b = run_experiment(cfg, threads=2)
    assert [t.records() for t in a] == [t.records() for t in b]
    assert all(t.failed is None for t in a)


def test_failed_runs_are_recorded(monkeypatch):
    import csmd.bench.runner as runner

    def boom(*args, **kwargs):
        raise RuntimeError("no luck")

    monkeypatch.setattr(runner, "run_sgd", boom)
    traces = run_experiment(parse_config(TINY))
    bad = [t for t in traces if t.failed]
    assert len(bad) == 2 and "no luck" in bad[0].failed
    assert len(traces) == 8


def test_cli_run_aggregate_and_determinism(tmp_path, capsys):
    cfg = _write(tmp_path, TINY)
    assert main(["run", str(cfg), "--out", str(tmp_path / "a")]) == 0
    assert main(["run", str(cfg), "--out", str(tmp_path / "b"), "--threads", "2"]) == 0
    for name in (TRACES, STAGES, AGGREGATE):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    man = json.loads((tmp_path / "a" / MANIFEST).read_text())
    assert man["runs"] == 8 and man["failed_runs"] == []
    before = (tmp_path / "a" / AGGREGATE).read_bytes()
    assert main(["aggregate", str(tmp_path / "a")]) == 0
    assert (tmp_path / "a" / AGGREGATE).read_bytes() == before
    assert main(["run", str(cfg), "--out", str(tmp_path / "c"), "--repetitions", "1",
                 "--seed", "99"]) == 0
    assert json.loads((tmp_path / "c" / MANIFEST).read_text())["runs"] == 4
    out = capsys.readouterr().out
    assert "final median l1 error" in out


def test_cli_schedule(tmp_path, capsys):
    cfg = _write(tmp_path, TINY)
    assert main(["schedule", str(cfg)]) == 0
    text = capsys.readouterr().out
    assert "m0=300" in text and "preliminary" in text
    assert main(["schedule", str(cfg), "--json"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep[0]["schedule"]["m0"] == 300
    assert sum(e["m"] * e["L"] for e in rep[0]["schedule"]["entries"]) <= 3000


def test_cli_selftest(capsys):
    assert main(["selftest"]) == 0
    out = capsys.readouterr().out
    assert out.count("PASS") == 5 and "FAIL" not in out


def test_cli_errors(tmp_path, capsys):
    bad = _write(tmp_path, dict(TINY, model={"n": 3, "s": 4, "sigma": 0.1}))
    assert main(["run", str(bad)]) == 2
    assert "'s'" in capsys.readouterr().err
    assert main(["aggregate", str(tmp_path / "missing")]) == 2
    assert main(["schedule", str(tmp_path / "nope.cfg")]) == 2
