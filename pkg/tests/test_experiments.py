import pytest

from dctnn.experiments import coverage_experiment, paired_run

SMALL = {"dims": (8, 8, 8)}
FIT = {"ranks": (3, 3, 3), "cp_rank": 6, "epochs": 3}


def test_oracle_fed_bands_cover_exactly():
    rep = coverage_experiment(reps=2, n=200, oracle_fed=True, sim_overrides=SMALL, **FIT)
    s = rep.summary()
    for key in ("sens_covered", "spec_covered", "auc_sens_covered", "auc_spec_covered", "nested"):
        assert s[key]["rate"] == 1.0
    for r in rep.records:
        assert r["auc_sens"][0] == pytest.approx(r["auc0_sens"])


def test_coverage_is_reproducible():
    a = coverage_experiment(reps=2, n=200, sim_overrides=SMALL, **FIT)
    b = coverage_experiment(reps=2, n=200, sim_overrides=SMALL, **FIT)
    assert a == b
    assert [r["seed"] for r in a.records] == [0, 1]


def test_paired_run_record():
    run = paired_run("cp", seed=1, sim_overrides={**SMALL, "cp_rank": 6}, **FIT)
    assert set(run.accuracy) == {"tucker", "cp"}
    assert run.matched_wins == (run.accuracy["cp"] > run.accuracy["tucker"])
    assert run.decision in ("tucker", "cp", "Tie", "Conflict")
    assert 0.0 <= run.d_auc_point <= 1.0
    d = run.to_dict()
    assert d["regime"] == "cp" and len(d["selection"]["directions"]) == 2
