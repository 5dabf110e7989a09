import json

import numpy as np
import pytest

from fiap.cli import main
from fiap.spec import builtin_instance, spec_to_dict
from fiap.stats import TLLNTest
from fiap.verify import ConfigError, ExperimentConfig, load_config, sweep_archives, verify_ph


def gl_doc(**extra):
    spec = builtin_instance("galves-locherbach", {"K": 4, "sigma": [0.0, 0.3], "weights": 1})
    doc = {
        "kind": "verify-ph",
        "spec": spec_to_dict(spec),
        "M": [10, 40],
        "runs": 300,
        "initial_law": [1 / 6] * 6,
        "master_seed": 5,
        "n_bootstrap": 50,
    }
    doc.update(extra)
    return doc


def write(tmp_path, doc, name="exp.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return path


# --- configuration ---------------------------------------------------------


@pytest.mark.parametrize(
    "patch, message",
    [
        ({"kind": "nope"}, "field 'kind'"),
        ({"M": [100]}, "at least two replica counts"),
        ({"runs": "many"}, "field 'runs'"),
        ({"thresholds": [1]}, "field 'thresholds'"),
        ({"initial_state": [0, 0, 0, 0]}, "give exactly one"),
        ({"spec": "missing.json"}, "missing.json"),
    ],
)
def test_config_errors_name_the_field(patch, message):
    with pytest.raises(ConfigError, match=message):
        ExperimentConfig.from_dict(gl_doc(**patch))


def test_missing_spec_field():
    doc = gl_doc()
    del doc["spec"]
    with pytest.raises(ConfigError, match="field 'spec'"):
        ExperimentConfig.from_dict(doc)


def test_spec_path_resolved_relative_to_config(tmp_path):
    doc = gl_doc()
    write(tmp_path, doc["spec"], "model.json")
    doc["spec"] = "model.json"
    cfg = load_config(write(tmp_path, doc))
    assert cfg.spec.K == 4


def test_malformed_json_reports_position(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"kind": "simulate",\n "M": }')
    with pytest.raises(ConfigError, match="line 2"):
        load_config(path)


def test_verify_ph_refuses_single_m():
    cfg = ExperimentConfig.from_dict(gl_doc())
    cfg.M = [10]
    with pytest.raises(ConfigError, match="two replica counts"):
        verify_ph(cfg)


# --- suite behavior --------------------------------------------------------


@pytest.fixture(scope="module")
def small_sweep():
    cfg = ExperimentConfig.from_dict(gl_doc())
    return cfg, sweep_archives(cfg)


def test_verify_ph_report_shape(small_sweep):
    cfg, archives = small_sweep
    result = verify_ph(cfg, archives=archives)
    assert [r.test for r in result.reports] == ["arrival_limit", "pai_outputs", "tlln", "endo_arrival_independence"]
    assert result.passed == all(r.passed for r in result.reports)
    assert result.details["target_source"] == "initial law (exact)"
    assert "test" in result.to_csv().splitlines()[0]


def test_constant_replica_sabotage_fails_tlln(small_sweep):
    _, archives = small_sweep
    sweep = {}
    for M, arch in archives.items():
        col = arch.column("state", 0, 1)
        sweep[M] = np.repeat(col[:, :1], M, axis=1)
    test = TLLNTest([1.0]).fit(sweep)
    assert not test.passed_
    assert not test.decay_ok_


def test_honest_sweep_tlln_decays(small_sweep):
    _, archives = small_sweep
    test = TLLNTest([1.0]).fit({M: a.column("state", 0, 1) for M, a in archives.items()})
    assert test.decay_ok_


# --- command line ----------------------------------------------------------


def test_simulate_is_reproducible(tmp_path, capsys):
    doc = gl_doc(kind="simulate", M=[5], runs=50)
    path = write(tmp_path, doc)
    assert main(["simulate", "--config", str(path), "--out", str(tmp_path / "a")]) == 0
    assert main(["simulate", "--config", str(path), "--out", str(tmp_path / "b"), "--workers", "2"]) == 0
    a = (tmp_path / "a" / "M5" / "archive.csv").read_bytes()
    b = (tmp_path / "b" / "M5" / "archive.csv").read_bytes()
    assert a == b
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert manifest["experiment"] == doc
    assert manifest["master_seed"] == 5


def test_seed_override_changes_output(tmp_path):
    path = write(tmp_path, gl_doc(kind="simulate", M=[5], runs=50))
    main(["simulate", "--config", str(path), "--out", str(tmp_path / "a")])
    main(["simulate", "--config", str(path), "--out", str(tmp_path / "b"), "--seed", "6"])
    assert (tmp_path / "a/M5/archive.csv").read_bytes() != (tmp_path / "b/M5/archive.csv").read_bytes()


def test_env_overrides(tmp_path, monkeypatch):
    path = write(tmp_path, gl_doc(kind="simulate", M=[3], runs=10))
    monkeypatch.setenv("FIAP_OUT_DIR", str(tmp_path / "env"))
    monkeypatch.setenv("FIAP_WORKERS", "2")
    assert main(["simulate", "--config", str(path)]) == 0
    assert (tmp_path / "env" / "M3" / "archive.csv").exists()
    monkeypatch.setenv("FIAP_WORKERS", "two")
    assert main(["simulate", "--config", str(path)]) == 2


def test_missing_config_exit_code(tmp_path, capsys):
    assert main(["simulate", "--config", str(tmp_path / "none.json")]) == 2
    assert "none.json" in capsys.readouterr().err


def test_missing_spec_path_named(tmp_path, capsys):
    path = write(tmp_path, gl_doc(kind="simulate", spec="nowhere.json"))
    assert main(["simulate", "--config", str(path)]) == 2
    assert "nowhere.json" in capsys.readouterr().err


def test_verify_ph_exit_code_matches_report(tmp_path, capsys):
    path = write(tmp_path, gl_doc())
    code = main(["verify-ph", "--config", str(path), "--out", str(tmp_path / "v")])
    line = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    report = json.loads((tmp_path / "v" / "report.json").read_text())
    assert code == (0 if report["passed"] else 1)
    assert line["passed"] == report["passed"]
    assert (tmp_path / "v" / "report.csv").exists()


def test_kind_mismatch_is_usage_error(tmp_path):
    path = write(tmp_path, gl_doc(kind="simulate"))
    assert main(["verify-ph", "--config", str(path)]) == 2


@pytest.mark.parametrize("triple", [(1.0, 1.0, 10), (2.0, 1.0, 20), (0.5, 2.0, 5)])
def test_solve_rate_residual(triple, capsys):
    b, mu, K = triple
    assert main(["solve-rate", "--b", str(b), "--mu", str(mu), "--K", str(K), "--ode"]) == 0
    row = json.loads(capsys.readouterr().out)
    assert row["residual"] < 1e-10
    assert row["ode"]["abs_G1_minus_1"] < 1e-6
    assert row["beta"] > 0


def test_solve_rate_degenerate_k(capsys):
    assert main(["solve-rate", "--b", "1", "--mu", "1", "--K", "1"]) == 2
    assert "error" in capsys.readouterr().err


def test_solve_rate_from_config(tmp_path, capsys):
    path = write(tmp_path, {"kind": "solve-rate", "b": 1, "mu": 1, "K": 10})
    assert main(["solve-rate", "--config", str(path), "--out", str(tmp_path / "r")]) == 0
    assert json.loads((tmp_path / "r" / "rate.json").read_text())["K"] == 10


def test_list_instances(capsys):
    assert main(["list-instances"]) == 0
    names = [line.split("\t")[0] for line in capsys.readouterr().out.splitlines()]
    assert names == ["galves-locherbach", "gordon-newell", "tcp-aimd", "custom-table"]


def test_validate_documents(tmp_path, capsys):
    assert main(["validate", "--config", str(write(tmp_path, gl_doc()))]) == 0
    assert main(["validate", "--config", str(write(tmp_path, gl_doc()["spec"], "m.json"))]) == 0
    bad = gl_doc()["spec"]
    bad["sigma"] = [0.0, 1.5]
    assert main(["validate", "--config", str(write(tmp_path, bad, "bad.json"))]) == 2
