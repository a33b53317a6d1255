import json
import math

import numpy as np
import pytest

from cogc.analysis import outage_probability
from cogc.channel import NetworkModel
from cogc.errors import InvalidInputError, InvalidParamsError, NoSampleError
from cogc.experiments import (
    McReport,
    config_hash,
    kbar_report,
    mc_kbar,
    mc_outage,
    mc_recovery_profile,
    mc_retries,
    run_experiment_suite,
)


def test_report_z_score():
    assert McReport.build(0.5, 0.1, 10, 0.3).z_score == pytest.approx(2.0)
    assert McReport.build(0.0, 0.0, 10, 0.0).z_score == 0.0
    assert McReport.build(0.1, 0.0, 10, 0.0).z_score == math.inf
    assert McReport.build(0.1, 0.0, 10).z_score is None
    with pytest.raises(NoSampleError):
        McReport.from_samples([])


def test_outage_extremes():
    rep = mc_outage(NetworkModel.uniform(5, 0, 0), 2, 1000, 0)
    assert rep.estimate == 0 and rep.target == 0 and rep.z_score == 0
    with pytest.raises(InvalidParamsError):
        mc_outage(NetworkModel.uniform(5, 0, 0), 2, 0)
    with pytest.raises(InvalidInputError):
        mc_outage(NetworkModel.uniform(5, 0, 0), 2, 10, engine="gpu")


def test_outage_half():
    rep = mc_outage(NetworkModel.uniform(3, 0, 0.5), 1, 100_000, 3)
    assert abs(rep.estimate - 0.5) <= 3 * rep.std_error


def test_case_study_outage():
    net = NetworkModel.uniform(10, 0.4, 0.0)
    rep = mc_outage(net, 7, 100_000, 1)
    assert abs(rep.z_score) <= 4


def test_engines_agree():
    rng = np.random.default_rng(2)
    p = rng.uniform(0, 0.5, (6, 6))
    np.fill_diagonal(p, 0)
    net = NetworkModel(p, rng.uniform(0, 0.5, 6))
    a = mc_outage(net, 2, 3000, 9)
    b = mc_outage(net, 2, 3000, 9, engine="protocol")
    assert a.estimate == b.estimate


def test_retries():
    rep = mc_retries(NetworkModel.uniform(3, 0, 0.5), 1, 50_000, 0)
    assert rep.target == 2
    assert abs(rep.estimate - 2) <= 3 * rep.std_error


def test_profile_perfect_network():
    prof = mc_recovery_profile(NetworkModel.uniform(6, 0, 0), 2, 2, 200, 0)
    assert prof.counts == {"FullViaGC": 200}
    assert prof.modal_bin() == "Full"
    rep = kbar_report(prof, 0.0)
    assert rep.estimate == pytest.approx(1 / 6, abs=1e-15) and rep.std_error == pytest.approx(0, abs=1e-15)
    assert mc_kbar(NetworkModel.uniform(6, 0, 0), 2, 2, 50).estimate == pytest.approx(1 / 6)


def test_profile_dead_network():
    prof = mc_recovery_profile(NetworkModel.uniform(5, 0.2, 1.0), 2, 2, 50, 0)
    assert prof.counts == {"Failure": 50}
    with pytest.raises(NoSampleError):
        kbar_report(prof, 1.0)


def test_profile_modes_and_determinism():
    net = NetworkModel.uniform(8, 0.4, 0.4)
    a = mc_recovery_profile(net, 5, 2, 300, 4)
    b = mc_recovery_profile(net, 5, 2, 300, 4)
    assert a.as_dict() == b.as_dict()
    approx = mc_recovery_profile(net, 5, 2, 300, 4, mode="paper_approx")
    assert approx.counts.get("FullViaPlus", 0) == 0
    assert sum(approx.counts.values()) == 300
    fixed = mc_recovery_profile(net, 5, 2, 300, 4, fresh_codes=False)
    assert sum(fixed.counts.values()) == 300
    assert a.max_rel_error <= 1e-7


def test_full_rate_lower_bound_small():
    net = NetworkModel.uniform(6, 0.3, 0.3)
    prof = mc_recovery_profile(net, 3, 3, 2000, 1)
    from cogc.experiments import full_recovery_report

    rep = full_recovery_report(prof, 0.3)
    assert rep.estimate >= rep.target - 4 * rep.std_error


def _suite(strategies, seeds, T=40):
    return {
        "sweeps": [{
            "name": "quad",
            "s": 2,
            "strategies": strategies,
            "networks": [{"name": "lossy", "M": 6, "p_c2c": 0.2, "p_up": 0.2}],
            "seeds": seeds,
            "train": {"I": 1, "T": T, "eta": 0.2, "model": {"D": 3}},
        }]
    }


def test_suite_empty(tmp_path):
    summary = run_experiment_suite({"sweeps": []}, tmp_path)
    assert summary["runs"] == []
    assert json.loads((tmp_path / "summary.json").read_text())["config_hash"] == config_hash({"sweeps": []})


def test_suite_files_and_determinism(tmp_path):
    cfg = _suite(["IdealFL", "IntermittentFL", "CoGC_D1", "GCPlus"], [0, 1, 2], T=200)
    path = tmp_path / "suite.json"
    path.write_text(json.dumps(cfg))
    summary = run_experiment_suite(path, tmp_path / "a")
    assert len(list((tmp_path / "a" / "traces").glob("*.csv"))) == 12
    assert (tmp_path / "a" / "summary.json").exists()
    by = {(r["strategy"], r["seed"]): r for r in summary["runs"]}
    for seed in range(3):
        assert abs(by[("CoGC_D1", seed)]["final_loss"] - by[("IdealFL", seed)]["final_loss"]) <= 1e-6
    run_experiment_suite(path, tmp_path / "b")
    for f in sorted((tmp_path / "a").rglob("*.*")):
        twin = tmp_path / "b" / f.relative_to(tmp_path / "a")
        assert twin.read_bytes() == f.read_bytes()


def test_suite_io_errors(tmp_path):
    with pytest.raises(OSError):
        run_experiment_suite(tmp_path / "missing.json", tmp_path)
    bad = tmp_path / "bad.json"
    bad.write_text("[")
    with pytest.raises(InvalidInputError):
        run_experiment_suite(bad, tmp_path)
