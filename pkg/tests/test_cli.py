import json

import pytest

from roughvisc.cli import EXIT_ABORT, EXIT_FAIL, EXIT_OK, EXIT_SCHEMA, main
from roughvisc.experiments import PRESETS, ConfigError, resolve_config, validate_config

LINEAR_LIFT = {"kind": "lift", "driver": {"kind": "linear", "n": 32, "dim": 2, "velocity": [1.0, 2.0]}}


def _run(tmp_path, cfg, *extra):
    arg = cfg if isinstance(cfg, str) else json.dumps(cfg)
    return main(["run", "--config", arg, "--out", str(tmp_path / "out"), *extra])


def test_presets_validate():
    for name in PRESETS:
        validate_config(resolve_config(f"preset:{name}"))


def test_presets_listing(capsys):
    assert main(["presets"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "transport-const" in out and "convergence-flow" in out


def test_lift_from_file_writes_manifest(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(LINEAR_LIFT))
    assert _run(tmp_path, str(path), "--seed", "5", "--threads", "2") == EXIT_OK
    man = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert man["status"] == "pass" and man["seed"] == 5 and man["threads"] == 2
    chen = next(c for c in man["checks"] if c["name"] == "chen_violation")
    assert chen["value"] <= 1e-12 and chen["tolerance"] == 1e-12 and chen["oracle"]
    assert set(man["versions"]) >= {"roughvisc", "numpy", "scipy", "python"}
    assert man["files"] == ["area.csv", "driver.csv"]


def test_check_only_does_not_write(tmp_path, capsys):
    assert _run(tmp_path, LINEAR_LIFT, "--check-only") == EXIT_OK
    assert not (tmp_path / "out").exists()


@pytest.mark.parametrize("bad", [
    {"kind": "lift"},
    {"kind": "lift", "driver": {"kind": "linear", "n": 48}},
    {"kind": "flow", "driver": {"kind": "sinusoid", "n": 64}, "space": {"lower": -1, "upper": 1, "cells": 10},
     "problem": {"A": "zero"}},
    {"kind": "flow", "driver": {"kind": "sinusoid", "n": 64}},
    {"kind": "transport", "driver": {"kind": "sinusoid", "n": 64}, "space": {"lower": -1, "upper": 1, "cells": 8},
     "problem": {"F": "nope", "A": "zero", "alpha": "gaussian"}},
    {"kind": "lift", "driver": {"kind": "linear", "n": 32}, "tolerances": {"bogus": 1.0}},
    "{not json",
    "preset:missing",
])
def test_schema_errors_exit_2(tmp_path, bad, capsys):
    assert _run(tmp_path, bad) == EXIT_SCHEMA
    assert "config error" in capsys.readouterr().err


def test_power_of_two_message():
    with pytest.raises(ConfigError, match="powers of two"):
        validate_config({"kind": "lift", "driver": {"kind": "linear", "n": 48}})


def test_failed_check_exit_1(tmp_path):
    cfg = dict(LINEAR_LIFT, tolerances={"chen": -1.0})
    assert _run(tmp_path, cfg) == EXIT_FAIL
    man = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert man["status"] == "fail"


def test_numerical_abort_exit_3(tmp_path):
    cfg = {"kind": "flow", "driver": {"kind": "brownian_pl", "n": 64, "scale": 3.0},
           "space": {"lower": -1, "upper": 1, "cells": 8}, "problem": {"A": {"name": "linear", "a": 3.0}}}
    assert _run(tmp_path, cfg) == EXIT_ABORT
    man = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert man["status"] == "abort" and "FlowExitError" in man["error"]


def test_seed_changes_brownian_outputs(tmp_path):
    cfg = {"kind": "lift", "driver": {"kind": "brownian_pl", "n": 32}}
    main(["run", "--config", json.dumps(cfg), "--out", str(tmp_path / "a"), "--seed", "1"])
    main(["run", "--config", json.dumps(cfg), "--out", str(tmp_path / "b"), "--seed", "2"])
    main(["run", "--config", json.dumps(cfg), "--out", str(tmp_path / "c"), "--seed", "1"])
    a, b, c = ((tmp_path / x / "driver.csv").read_bytes() for x in "abc")
    assert a == c and a != b


def test_transport_preset_sup_error(tmp_path):
    assert _run(tmp_path, "preset:transport-const") == EXIT_OK
    man = json.loads((tmp_path / "out" / "manifest.json").read_text())
    err = next(c for c in man["checks"] if c["name"] == "characteristics_error")
    assert err["value"] <= 1e-2


def test_convergence_flow_preset_slope(tmp_path):
    assert _run(tmp_path, "preset:convergence-flow") == EXIT_OK
    man = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert 0.8 <= man["measured"]["slope"] <= 2.2
    rows = (tmp_path / "out" / "convergence.csv").read_text().splitlines()
    assert rows[0] == "resolution,error,order"
    assert [int(float(r.split(",")[0])) for r in rows[1:]] == [256, 512, 1024, 2048, 4096]


def test_verify_closed_form_requires_supported_problem(tmp_path):
    cfg = {"kind": "verify", "driver": {"kind": "sinusoid", "n": 32}, "space": {"lower": -1, "upper": 1, "cells": 32},
           "problem": {"F": {"name": "abs_grad"}, "A": "zero", "alpha": "gaussian", "solution": "closed_form"}}
    assert _run(tmp_path, cfg) == EXIT_SCHEMA


def test_bad_seed_is_rejected():
    with pytest.raises(SystemExit):
        main(["run", "--config", "preset:lift-linear", "--seed", "-1"])
