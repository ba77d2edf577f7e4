import csv
import io
import json

import pytest

import kcmlab


def test_version_and_kinds():
    assert kcmlab.version()
    assert "classify" in kcmlab.experiment_kinds()


def test_classify():
    assert kcmlab.classify("fa:1:2") == "Supercritical"
    assert kcmlab.classify("fa:2:2") == "Critical"
    assert kcmlab.classify("fa:3:2") == "TrivialSubcritical"
    assert kcmlab.classify("u0:2") == "SubcriticalNontrivial"
    assert kcmlab.family("u0:2")["dim"] == 2


def test_invalid_config_names_the_field():
    with pytest.raises(ValueError, match="colour"):
        kcmlab.validate_config({"kind": "kcm", "colour": 1})
    filled = kcmlab.validate_config({"kind": "kcm"})
    assert filled["n"] == 16


def test_run_verify_and_summary(tmp_path):
    rec = kcmlab.run({"kind": "lpp", "sizes": [4, 8], "replicas": 5, "ratio_from": 8}, tmp_path / "lpp")
    assert rec["kind"] == "lpp"
    assert all(v["passed"] for v in kcmlab.verify(tmp_path / "lpp" / "manifest.json"))
    cls = kcmlab.run({"kind": "classify"}, tmp_path / "classify")
    rows = list(csv.reader(io.StringIO(kcmlab.summary([rec, cls]))))
    assert rows[0] == ["kind", "config_hash", "item", "value", "ci_lo", "ci_hi", "verdict"]
    assert any(r[0] == "classify" and r[6] == "PASS" for r in rows[1:])
    assert json.loads(json.dumps(rec)) == rec


def test_wilson_interval():
    lo, hi = kcmlab.wilson_interval(5, 10)
    assert lo == pytest.approx(0.2366, abs=1e-4)
    assert hi == pytest.approx(0.7634, abs=1e-4)


def test_lpp_and_bp_helpers():
    times = kcmlab.lpp_passage_times(4)
    assert len(times) == 16
    assert times[-1] == max(times)
    bits = kcmlab.bp_closure("u0:2", 8, 1.0)
    assert all(b == 1 for b in bits)
