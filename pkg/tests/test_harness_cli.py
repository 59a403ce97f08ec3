import json

import pytest

from fabricsim.cli import main
from fabricsim.config import ConfigError, load_scenario, parse_scenario
from fabricsim.engine import RunResult, run_simulation
from fabricsim.harness import (AGGREGATE, COLUMNS, SweepError, SweepSpec, SweepTable, derive_seed, emit,
                               read_table_csv, run_sweep, table_csv)
from fabricsim.topology import GBPS

from oracles import ring_cost

SMALL = {"topology": {"nodes": 2, "nodes_per_leaf": 8}, "workload": {"jitter": "LogNormal",
                                                                    "jitter_sigma": 0.05},
         "collective": {"message_bytes": 1e6}, "coordination": {"window_size": 4},
         "iterations": 6, "warmup": 2, "seed": 11, "repeats": 2}


def small(**kw):
    data = json.loads(json.dumps(SMALL))
    for k, v in kw.items():
        if isinstance(v, dict):
            data[k] = {**data.get(k, {}), **v}
        else:
            data[k] = v
    return load_scenario(data)


@pytest.mark.parametrize("counts", [(), (0, 2), (4, 2), (2, 2)])
def test_sweep_spec_rejects_bad_counts(counts):
    with pytest.raises(ValueError):
        SweepSpec(small(), counts)


def test_sweep_spec_rejects_bad_variants_and_repeats():
    with pytest.raises(ValueError):
        SweepSpec(small(), (1,), ("fast",))
    with pytest.raises(ValueError):
        SweepSpec(small(), (1,), repeats=0)


def test_single_node_baseline_single_repeat():
    t = run_sweep(SweepSpec(small(), (1,), ("baseline",), 1))
    assert len(t.rows) == 1 and len(t.runs) == 1
    assert t.rows[0]["efficiency"] == 1.0 and t.rows[0]["repeat"] == AGGREGATE


def test_efficiency_matches_idle_fabric_ring():
    base, m, p = 0.05, 4e6, 4
    cfg = small(workload={"jitter": "None", "base_compute_ms": base * 1e3},
                topology={"link_latency_us": 2.0}, collective={"message_bytes": m})
    t = run_sweep(SweepSpec(cfg, (1, p), ("baseline",), 1))
    want = base / (base + ring_cost(p, m, 100 * GBPS, 4e-6))
    assert t.row(p, "baseline")["efficiency"] == pytest.approx(want, rel=1e-6)
    assert t.ideal_sps(p) == p * t.reference_throughput


def test_points_are_reproducible_and_paired():
    cfg = small()
    t = run_sweep(SweepSpec(cfg, (2, 4)))
    seeds = {derive_seed(cfg.seed, n, k) for n in (2, 4) for k in range(2)}
    assert len(seeds) == 4
    again = run_sweep(SweepSpec(cfg, (4,), ("coordination",)))
    assert again.row(4, "coordination") == t.row(4, "coordination")
    # the 1-node reference is the same whether or not 1 is swept
    assert again.reference_throughput == t.reference_throughput


def test_failed_point_names_itself(monkeypatch):
    import fabricsim.harness as h

    def boom(cfg, seed=None, keep_traces=False):
        if cfg.topology.nodes == 3:
            raise RuntimeError("kernel exploded")
        return run_simulation(cfg, seed=seed, keep_traces=keep_traces)

    monkeypatch.setattr(h, "run_simulation", boom)
    with pytest.raises(SweepError, match="nodes=3 variant=baseline repeat=0"):
        run_sweep(SweepSpec(small(), (2, 3), ("baseline",), 1))


def test_emit_bit_stable_and_formats_agree(tmp_path):
    t = run_sweep(SweepSpec(small(), (1, 2), repeats=2))
    a = emit(t, "csv", tmp_path / "a.csv").read_bytes()
    b = emit(run_sweep(SweepSpec(small(), (1, 2), repeats=2)), "csv", tmp_path / "b.csv").read_bytes()
    assert a == b
    j = json.loads(emit(t, "json", tmp_path / "t.json").read_text())
    assert j["columns"] == list(COLUMNS)
    assert read_table_csv(a.decode()) == j["runs"] + j["rows"]
    with pytest.raises(ValueError):
        emit(t, "xml", tmp_path / "x")
    with pytest.raises(ValueError):
        emit({"a": 1}, "csv", tmp_path / "x")


def test_empty_table_is_header_only():
    text = table_csv(SweepTable())
    assert text == ",".join(COLUMNS) + "\n"


def test_run_json_roundtrip(tmp_path):
    run = run_simulation(small(coordination={"enabled": True}), keep_traces=True)
    p = emit(run, "json", tmp_path / "r.json")
    back = RunResult.from_dict(json.loads(p.read_text()))
    assert back.to_json() == run.to_json()


# configuration

def test_minimal_config_fills_defaults(tmp_path):
    p = tmp_path / "c.json"
    p.write_text("{}")
    cfg = parse_scenario(p)
    assert cfg.topology.nodes >= 1 and cfg.iterations >= 0
    assert load_scenario(json.loads(cfg.to_json())) == cfg


def test_invalid_field_is_named():
    with pytest.raises(ConfigError, match="straggler_prob"):
        load_scenario({"workload": {"straggler_prob": 1.5}})


def test_unknown_key_rejected():
    with pytest.raises(ConfigError, match="colour"):
        load_scenario({"topology": {"colour": "blue"}})


def test_malformed_and_missing_files(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{nope")
    with pytest.raises(ConfigError, match="malformed"):
        parse_scenario(p)
    with pytest.raises(ConfigError, match="no such file"):
        parse_scenario(tmp_path / "missing.json")


def test_overrides_revalidate():
    cfg = small()
    assert cfg.with_overrides(**{"topology.nodes": 8}).topology.nodes == 8
    with pytest.raises(ConfigError):
        cfg.with_overrides(**{"topology.nodes": 0})


# command line

@pytest.fixture
def cfg_file(tmp_path):
    p = tmp_path / "s.json"
    p.write_text(json.dumps(SMALL))
    return p


def test_cli_run_analyze_timeline(cfg_file, tmp_path, capsys):
    out = tmp_path / "run.json"
    assert main(["run", "--config", str(cfg_file), "--coordination", "on", "--out", str(out)]) == 0
    data = json.loads(out.read_text())
    assert "metrics" in data and data["config"]["coordination"]["enabled"] is True
    assert main(["analyze", "--run", str(out)]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert set(rep) == {"metrics", "diagnosis"}
    assert main(["timeline", "--run", str(out), "--iteration", "1"]) == 0
    assert capsys.readouterr().out.startswith("rank,phase,start_s,end_s\n")
    assert main(["timeline", "--config", str(cfg_file), "--format", "json"]) == 0
    assert isinstance(json.loads(capsys.readouterr().out), list)


def test_cli_sweep_csv(cfg_file, tmp_path):
    out = tmp_path / "sweep.csv"
    assert main(["sweep", "--config", str(cfg_file), "--node-counts", "1,2", "--repeats", "1",
                 "--out", str(out)]) == 0
    rows = read_table_csv(out.read_text())
    assert {(r["nodes"], r["variant"]) for r in rows if r["repeat"] == AGGREGATE} == {
        (1, "baseline"), (1, "coordination"), (2, "baseline"), (2, "coordination")}


def test_cli_seed_flag_and_env(cfg_file, tmp_path, monkeypatch):
    def seed_of(*extra):
        out = tmp_path / "r.json"
        assert main(["run", "--config", str(cfg_file), "--out", str(out), *extra]) == 0
        return json.loads(out.read_text())["seed"]

    assert seed_of() == 11
    monkeypatch.setenv("FABRICSIM_SEED", "77")
    assert seed_of() == 77
    assert seed_of("--seed", "5") == 5
    monkeypatch.setenv("FABRICSIM_SEED", "x")
    assert main(["run", "--config", str(cfg_file), "--out", str(tmp_path / "r.json")]) == 2


def test_cli_errors_exit_nonzero(tmp_path, cfg_file, capsys):
    assert main(["run", "--config", str(tmp_path / "none.json")]) == 2
    assert "fabricsim: error:" in capsys.readouterr().err
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"workload": {"straggler_prob": 1.5}}))
    assert main(["run", "--config", str(bad)]) == 2
    assert "straggler_prob" in capsys.readouterr().err
    assert main(["sweep", "--config", str(cfg_file), "--node-counts", "4,2"]) == 2
    assert main(["analyze", "--run", str(tmp_path / "none.json")]) == 2
    out = tmp_path / "run.json"
    main(["run", "--config", str(cfg_file), "--out", str(out)])
    assert main(["timeline", "--run", str(out), "--iteration", "99"]) == 2
    with pytest.raises(SystemExit):
        main(["frobnicate"])
