import json
from math import comb

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import bae_explain.bae as bae
from bae_explain.cli import main
from bae_explain.config import ConfigError, config_from_dict, derive_seed, parse_config
from bae_explain.experiment import load_records, run_experiment, stable_json, sweep_combinations, write_records
from bae_explain.pipeline import SynthConfig, ingest_cube
from bae_explain.report import HIGH_CORRELATION, complementary_ecdf, emit_report, rank_summary

TINY = """
[experiment]
name = tiny
seed = 3

[synth]
K = 2
D = 16
N_train = 12
N_test = 30
drifting = 0

[model]
M = 2
capacities = 0.5

[training]
epochs = 3
lr = 0.01

[evaluation]
policy = all-subsets
"""


@pytest.fixture
def tiny_config():
    return parse_config(TINY)


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    result = run_experiment(parse_config(TINY))
    write_records(result, out)
    return result, out


# -- sweep -------------------------------------------------------------------------------

def test_sweep_examples():
    assert sweep_combinations(2) == [(0,), (1,)]
    assert len(sweep_combinations(11, "sizes", [1, 10])) == 22
    assert len(sweep_combinations(3)) == 6


@given(st.integers(2, 9))
def test_all_subsets_count(k):
    combos = sweep_combinations(k)
    assert len(combos) == 2**k - 2 == len(set(combos))


@given(st.integers(2, 9), st.sets(st.integers(1, 9), min_size=1))
def test_sizes_count(k, sizes):
    expected = sum(comb(k, s) for s in sizes if s < k)
    assert len(sweep_combinations(k, "sizes", sorted(sizes))) == expected


def test_sweep_filters_full_sets(caplog):
    assert sweep_combinations(3, "sizes", [3]) == []
    assert "no non-shifting sensor" in caplog.text
    assert sweep_combinations(3, "explicit", explicit=[(0, 1, 2), (2,)]) == [(2,)]
    with pytest.raises(ValueError):
        sweep_combinations(3, "explicit", explicit=[(5,)])
    with pytest.raises(ValueError):
        sweep_combinations(3, "random")


# -- config ----------------------------------------------------------------------------------

def test_config_defaults_and_parsing(tiny_config):
    c = tiny_config
    assert (c.name, c.seed, c.M, c.epochs, c.lr) == ("tiny", 3, 2, 3, 0.01)
    assert c.synth == SynthConfig(K=2, D=16, N_train=12, N_test=30, drifting=(0,))
    default = parse_config("")
    assert (default.M, default.lam, default.epochs, default.train_frac) == (5, 1e-3, 250, 0.20)
    assert (default.trim_head, default.trim_tail) == (0.10, 0.05)
    assert not default.use_fft and parse_config("[data]\nsource = file\npath = x.csv").use_fft


def test_config_round_trip(tiny_config):
    assert config_from_dict(tiny_config.to_dict()) == tiny_config
    assert config_from_dict(tiny_config.to_dict()).digest() == tiny_config.digest()


@pytest.mark.parametrize(
    "text",
    [
        "[data]\ntrain_frac = 0.5",
        "[model]\nM = 0",
        "[model]\ndepths = 4",
        "[model]\nbogus = 1",
        "[evaluation]\nmethods = shap",
        "[evaluation]\nw1 = 0.9",
        "[evaluation]\npolicy = sizes",
        "[model]\nM = 1",  # var-nll needs an ensemble
        "[data]\nsource = file",
        "[training]\nlr = fast",
    ],
)
def test_config_rejections(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_explicit_shift_sets_parse():
    c = parse_config("[evaluation]\npolicy = explicit\nshift_sets = 0; 1, 2")
    assert c.shift_sets == ((0,), (1, 2))


def test_derive_seed_stable_and_distinct():
    assert derive_seed("cell", 0, 0.5, 1) == derive_seed("cell", 0, 0.5, 1)
    assert derive_seed("cell", 0, 0.5, 1) != derive_seed("cell", 0, 0.5, 2)
    assert 0 <= derive_seed("x") < 2**31


# -- runs -----------------------------------------------------------------------------------

def test_run_record_count(tiny_run):
    result, _ = tiny_run
    assert len(result.records) == 2 * 2 * 2
    assert result.failures == []
    keys = {(r["configuration"], r["method"], r["scenario"]["key"]) for r in result.records}
    assert len(keys) == 8


def test_training_reused_across_scenarios(tiny_run):
    result, _ = tiny_run
    for config in ("centralised", "coalitional"):
        digests = {r["model_digest"] for r in result.records if r["configuration"] == config}
        assert len(digests) == 1


def test_records_round_trip(tiny_run):
    result, out = tiny_run
    loaded = load_records(out)
    assert len(loaded) == 8
    assert sorted(stable_json(r) for r in loaded) == sorted(stable_json(r) for r in result.records)
    assert json.loads((out / "failures.json").read_text()) == []


def test_rerun_is_byte_identical(tiny_run):
    result, _ = tiny_run
    again = run_experiment(parse_config(TINY))
    assert [stable_json(r) for r in again.records] == [stable_json(r) for r in result.records]


def test_record_contents(tiny_run):
    rec = tiny_run[0].records[0]
    assert rec["schema_version"] == 1
    assert set(rec["report"]) >= {"g_sdc", "g_sser", "seqi", "mcc", "pearson", "rho"}
    assert len(rec["curves"]["shift_mean"]) == 30
    assert set(rec["timing"]) == {"train_seconds", "eval_seconds", "finished_at"}


def test_failing_agent_is_reported_and_others_survive(monkeypatch, tiny_config):
    real = bae.train_bae

    def flaky(x, arch, *args, **kwargs):
        if "sensor(1)" in args:
            raise bae.TrainingError("non-finite loss at epoch 0")
        return real(x, arch, *args, **kwargs)

    monkeypatch.setattr(bae, "train_bae", flaky)
    result = run_experiment(tiny_config)
    assert len(result.failures) == 1
    failure = result.failures[0]
    assert failure["configuration"] == "coalitional" and failure["sensor"] == 1
    assert "epoch 0" in failure["error"]
    assert len(result.records) == 4
    assert {r["configuration"] for r in result.records} == {"centralised"}


# -- report -----------------------------------------------------------------------------------

def test_complementary_ecdf_counts():
    assert complementary_ecdf([0.9, 0.7, 0.85], [HIGH_CORRELATION])[0] == pytest.approx(2 / 3)
    assert complementary_ecdf([], [0.5]).tolist() == [0.0]


def test_emit_report_outputs(tiny_run, tmp_path):
    records = load_records(tiny_run[1])
    summary = emit_report(records, tmp_path)
    for metric in ("g_sdc", "g_sser", "seqi", "pearson", "mcc"):
        rows = (tmp_path / f"table_{metric}.csv").read_text().splitlines()
        assert rows[0] == "dataset,method,mean,std,n,best"
        assert len(rows) == 1 + 4
        assert sum(r.endswith("*") for r in rows[1:]) == 1
        assert (tmp_path / f"rank_summary_{metric}.json").exists()
    assert len(list((tmp_path / "curves").glob("*.svg"))) == 8
    assert (tmp_path / "pearson_ccdf.svg").exists()
    assert set(summary["pearson_above"]) == {
        "centralised/mean-nll", "centralised/var-nll", "coalitional/mean-nll", "coalitional/var-nll"
    }


def test_emit_report_single_record(tiny_run, tmp_path):
    records = load_records(tiny_run[1])[:1]
    emit_report(records, tmp_path)
    assert len((tmp_path / "table_seqi.csv").read_text().splitlines()) == 2
    assert len(list((tmp_path / "curves").glob("*.svg"))) == 1


def test_rank_summary_over_two_methods(tiny_run):
    records = [r for r in load_records(tiny_run[1]) if r["configuration"] == "coalitional"]
    s = rank_summary(records, "seqi")
    assert sorted(s["methods"]) == ["coalitional/mean-nll", "coalitional/var-nll"]


def test_report_files_are_deterministic(tiny_run, tmp_path):
    records = load_records(tiny_run[1])
    emit_report(records, tmp_path / "a")
    emit_report(records, tmp_path / "b")
    for f in sorted((tmp_path / "a").rglob("*.*")):
        assert f.read_bytes() == (tmp_path / "b" / f.relative_to(tmp_path / "a")).read_bytes(), f.name


def test_emit_report_rejects_empty(tmp_path):
    with pytest.raises(ValueError):
        emit_report([], tmp_path)


# -- CLI ----------------------------------------------------------------------------------------

def test_cli_end_to_end(tmp_path, capsys):
    cfg = tmp_path / "tiny.ini"
    cfg.write_text(TINY)
    assert main(["run", str(cfg), "--out", str(tmp_path / "run")]) == 0
    assert "8 records" in capsys.readouterr().out
    assert main(["run", str(cfg), "--out", str(tmp_path / "run2"), "--seed", "4"]) == 0
    assert main(["report", str(tmp_path / "run"), "--out", str(tmp_path / "rep")]) == 0
    assert (tmp_path / "rep" / "table_seqi.csv").exists()
    capsys.readouterr()
    assert main(["compare", str(tmp_path / "run"), str(tmp_path / "run2"), "--out", str(tmp_path / "cmp")]) == 0
    out = capsys.readouterr().out
    assert "coalitional/mean-nll" in out
    assert (tmp_path / "cmp" / "compare_seqi.json").exists()
    assert (tmp_path / "cmp" / "compare_seqi.svg").exists()


@pytest.mark.parametrize("suffix", [".csv", ".scub"])
def test_cli_synth(tmp_path, capsys, suffix):
    cfg = tmp_path / "tiny.ini"
    cfg.write_text(TINY)
    cube_path = tmp_path / f"cube{suffix}"
    assert main(["synth", str(cfg), "--out", str(cube_path)]) == 0
    info = json.loads(capsys.readouterr().out)
    assert info["shape"] == [42, 2, 16] and info["drifting"] == [0] and info["n_train"] == 12
    assert ingest_cube(cube_path).shape == (42, 2, 16)


def test_cli_file_source_runs(tmp_path):
    # a synthetic cube written to disk, then read back through trim -> FFT -> split
    cfg = tmp_path / "tiny.ini"
    cfg.write_text(TINY.replace("N_test = 30", "N_test = 70"))
    cube = tmp_path / "cube.scub"
    assert main(["synth", str(cfg), "--out", str(cube)]) == 0
    file_cfg = tmp_path / "file.ini"
    file_cfg.write_text(
        TINY.replace("[synth]", f"[data]\nsource = file\npath = {cube}\n\n[synth]")
    )
    assert main(["run", str(file_cfg), "--out", str(tmp_path / "run")]) == 0
    rec = load_records(tmp_path / "run")[0]
    # 82 cycles -> trim 8 + 4 -> 70 -> 14 train / 56 test; FFT halves 16 features
    assert len(rec["curves"]["shift_mean"]) == 56
    assert len(rec["curves"]["per_sensor"][0]) == 56


def test_cli_errors(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[model]\nM = 0\n")
    assert main(["run", str(bad), "--out", str(tmp_path / "x")]) == 2
    assert "model.M" in capsys.readouterr().err
    assert main(["report", str(tmp_path / "missing"), "--out", str(tmp_path / "y")]) == 1
    with pytest.raises(SystemExit):
        main(["compare", str(tmp_path), "--metric", "nope", "--out", str(tmp_path)])


def test_parallel_run_matches_serial(tiny_run, tiny_config):
    parallel = run_experiment(tiny_config, jobs=2)
    assert [stable_json(r) for r in parallel.records] == [stable_json(r) for r in tiny_run[0].records]
