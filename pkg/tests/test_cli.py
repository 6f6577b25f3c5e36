import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hypershadow.cli import DEFAULTS, main, run, validate_config
from hypershadow.dynamics import SlowedCatMap, pseudo_orbit
from hypershadow.errors import UsageError
from hypershadow.operator import assemble_gamma
from hypershadow.splitting import compute_splitting


def _write(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


def test_empty_config_lists_required(tmp_path):
    with pytest.raises(UsageError) as e:
        validate_config("diagnose", {})
    assert e.value.details["required"] == ["model"]
    assert main(["diagnose", "--config", _write(tmp_path, {}), "--out", str(tmp_path)]) == 2


def test_schema_violation_names_path():
    with pytest.raises(UsageError) as e:
        validate_config("shadow", {"model": {"type": "cat"}, "beta": -1})
    assert e.value.details["path"] == "beta"
    with pytest.raises(UsageError):
        validate_config("diagnose", {"model": {"type": "cat"}, "lyapunov_steps": 10})
    with pytest.raises(UsageError):
        validate_config("norms", {"model": {"type": "cat"}, "command": "shadow"})


def test_defaults_echoed():
    full = validate_config("boundary", {"radii": [0.25], "slowdowns": 0.5})
    for k, v in DEFAULTS["boundary"].items():
        assert full[k] == v


def test_diagnose_cat_uniform(tmp_path):
    cfg = {"model": {"type": "cat"}, "samples": 8, "lyapunov_steps": 1000}
    out = tmp_path / "d"
    assert main(["diagnose", "--config", _write(tmp_path, cfg), "--out", str(out)]) == 0
    rec = json.loads((out / "record.json").read_text())
    assert rec["result"]["verdict"] == "uniform-like"
    assert rec["config"]["thresholds"]["bounded_ratio"] == 1.25
    assert (out / "mather.csv").read_text().startswith("point,x,K,proxy,verdict")
    assert "written_at" in json.loads((out / "timestamp.json").read_text())


def test_shadow_beta_above_bound_is_precondition(tmp_path):
    cfg = {"model": {"type": "cat"}, "beta": 1e-6, "rho": 1e-6}
    code, rec = run("shadow", cfg)
    assert code == 4
    assert rec["error"]["condition"] == "beta_radius_condition"


def test_shadow_ok(tmp_path):
    code, rec = run("shadow", {"model": {"type": "cat"}}, out=tmp_path)
    assert code == 0 and rec["result"]["passed"]
    assert rec["result"]["certificate"]["iterations"] == 1
    assert (tmp_path / "defect_history.csv").exists()


def test_norms_and_inverse(tmp_path):
    code, rec = run("norms", {"model": {"type": "cat"}, "grades": [1, "inf"]})
    assert code == 0
    g1, ginf = rec["result"]["norms"]
    assert g1["inverse"]["error"] == "GradeTooCoarseError"
    assert ginf["inverse"]["upper"] == pytest.approx(5 ** 0.5)
    code, rec = run("inverse", {"model": {"type": "cat"}, "half_width": 24})
    assert code == 0
    assert rec["result"]["decay_fit"]["below"] == pytest.approx(0.9624237, rel=1e-4)


def test_numeric_failure_exit_code():
    code, rec = run("inverse", {"model": {"type": "identity"}, "half_width": 8})
    assert code == 3 and rec["error"]["error"] == "DegenerateSplittingError"


def test_records_byte_identical(tmp_path):
    cfg = _write(tmp_path, {"model": {"type": "slowed_cat"}, "samples": 5,
                            "lyapunov_steps": 1000})
    texts = []
    for i, workers in enumerate((2, 2, 1)):
        out = tmp_path / f"r{i}"
        assert main(["diagnose", "--config", cfg, "--seed", "11", "--workers", str(workers),
                     "--out", str(out)]) == 0
        texts.append((out / "record.json").read_bytes())
    assert texts[0] != b"" and texts[0] == texts[1]
    # results do not depend on the worker count
    a, c = json.loads(texts[0]), json.loads(texts[2])
    assert a["result"] == c["result"]


@settings(max_examples=1000, deadline=None, derandomize=True)
@given(st.integers(0, 2 ** 63 - 1), st.floats(0, 1, exclude_max=True),
       st.floats(0, 1, exclude_max=True))
def test_seeded_reruns_identical(seed, a, b):
    f = SlowedCatMap(r=0.25, kappa=0.5)

    def once():
        ps = pseudo_orbit(f, [a, b], -6, 6, 1e-6, seed)
        return ps.to_csv() + assemble_gamma(f, ps).rep.to_json()

    assert once() == once()


def test_splitting_seed_reproducible():
    f = SlowedCatMap(r=0.25, kappa=0.5)
    ps = pseudo_orbit(f, [0.01, 0.02], -10, 10, 1e-7, 2)
    assert compute_splitting(f, ps, seed=9).to_json() == compute_splitting(f, ps, seed=9).to_json()
