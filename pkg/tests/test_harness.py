import json
import math

import numpy as np
import pytest

from seqtest import harness
from seqtest.convexgeom import Box
from seqtest.errors import ConfigError
from seqtest.schemes import SchemeKind

CONFIGS = __import__("pathlib").Path(__file__).resolve().parents[1] / "configs"


def small_cfg(**kw):
    base = dict(scheme=SchemeKind.gaussian(2), bodies=[Box([0.1, 0], [1.1, 1]), Box([-1, -1], [0, 0])],
                colors=[1, 2], eps=0.1, trials=40, seed=3)
    base.update(kw)
    return harness.ExperimentConfig(**base)


def test_single_fixed_trial_is_reproducible():
    cfg = small_cfg(trials=1, mu_sampling={"kind": "fixed", "points": [[0.9, 0.5]]})
    a = harness.run_experiment(cfg).records
    b = harness.run_experiment(cfg).records
    assert len(a) == 1 and a == b
    assert a[0].mu == (0.9, 0.5) and a[0].color_true == 1


def test_thread_count_does_not_change_results():
    cfg = small_cfg()
    one = harness.run_experiment(cfg, threads=1)
    four = harness.run_experiment(cfg, threads=4)
    assert one.records == four.records
    assert harness.table_text(*harness.trial_rows(one.records)) == \
        harness.table_text(*harness.trial_rows(four.records))


def test_seed_changes_results():
    a = harness.run_experiment(small_cfg()).records
    b = harness.run_experiment(small_cfg(seed=4)).records
    assert [r.mu for r in a] != [r.mu for r in b]


def test_aggregates_recomputable():
    rep = harness.run_experiment(small_cfg(trials=60))
    obs = [r.observations for r in rep.records]
    agg = rep.aggregates
    assert agg["trials"] == 60
    assert agg["mean_observations"] == float(np.mean(np.array(obs, dtype=float)))
    assert agg["median_observations"] == float(np.median(np.array(obs, dtype=float)))
    wrong = sum(r.color_accepted is not None and r.color_accepted != r.color_true for r in rep.records)
    assert agg["error_rate"] == wrong / 60
    assert agg == harness.aggregate(rep.records)


def test_loose_eps_stops_early():
    cfg = small_cfg(eps=0.5, trials=400)
    rep = harness.run_experiment(cfg)
    n = cfg.trials
    assert rep.aggregates["error_rate"] <= 0.5 + 4 * math.sqrt(0.25 / n)
    first = min(r.stage for r in rep.records)
    assert sum(r.stage == first for r in rep.records) > n / 2


def test_grid_sampling_skips_outside_points():
    cfg = small_cfg(trials=10, mu_sampling={"kind": "grid", "resolution": 5})
    pts = harness.grid_points(cfg.bodies, 5)
    assert all(any(b.contains(p) for b in cfg.bodies) for p in pts)
    recs = harness.run_experiment(cfg).records
    assert [r.mu for r in recs] == [tuple(pts[t % len(pts)]) for t in range(10)]


def test_trial_seed_column():
    assert harness.trial_seed(5, 3) == harness.trial_seed(5, 3)
    assert harness.trial_seed(5, 3) != harness.trial_seed(5, 4)
    assert 0 <= harness.trial_seed(2**64 - 1, 0) < 2**64


def test_volumes_default_closed_form():
    rows = harness.volumes_report(dims=[2, 4], r=0.0092, samples=20_000, policies=("default",))
    for row in rows:
        assert row.volume == pytest.approx(4 * 0.0092 / 0.1 + 0.05 - 0.1, abs=1e-12) and row.stderr == 0.0


def test_volumes_zero_margin():
    rows = harness.volumes_report(dims=[2, 3], r=0.0, samples=20_000, policies=("default",))
    assert all(row.volume == 0.0 for row in rows)


def test_profile_grid(two_box_test):
    rows = harness.profile_grid(two_box_test, [0.5, 5.0], [0.5, 5.0])
    inside = rows[0]
    assert math.isfinite(inside.ln_k_sstar) and inside.ln_k_sstar <= inside.ln_k_sbar
    assert all(math.isnan(r.ln_k_sstar) and math.isnan(r.ln_k_sbar) for r in rows[1:])
    outside = harness.profile_grid(two_box_test, [3.0, 4.0], [3.0])
    assert all(math.isnan(r.ln_k_sstar) for r in outside)
    # the saddle endpoint needs the last stage
    edge = harness.profile_grid(two_box_test, [0.1], [0.0])[0]
    assert edge.ln_k_sstar == pytest.approx(math.log(two_box_test.K))
    deep = harness.profile_grid(two_box_test, [1.1], [1.0])[0]
    assert deep.ln_k_sstar < edge.ln_k_sstar


def test_calibrate_vacuous_level():
    cal, rep = harness.calibrate_risk(small_cfg(eps=0.99, trials=500))
    assert not cal.violation and cal.trials == 500
    assert cal.failure_ci[0] <= cal.failure_rate <= cal.failure_ci[1]


def test_calibrate_requires_trials():
    with pytest.raises(ConfigError):
        harness.calibrate_risk(small_cfg(trials=100))


def test_calibrate_flags_violation():
    recs = [harness.TrialRecord(t, 0, (0.0,), 1, 2, 1, 1, 1, 1) for t in range(500)]
    assert harness.calibrate_from_records(recs, 0.1).violation
    assert harness.wilson(0, 100)[0] == 0.0


def test_calibrate_at_saddle_face():
    cfg = small_cfg(eps=0.1, trials=500, mu_sampling={"kind": "fixed", "points": [[0.1, 0.5]]})
    cal, _ = harness.calibrate_risk(cfg)
    assert not cal.violation


@pytest.mark.parametrize("mutate, message", [
    (lambda d: d.update(version="v2"), "version"),
    (lambda d: d.update(trials=0), "trials"),
    (lambda d: d.update(mu_sampling={"kind": "grid", "resolution": 1}), "resolution"),
    (lambda d: d.update(mu_sampling={"kind": "sobol"}), "sobol"),
    (lambda d: d.update(colors=[1]), "color"),
    (lambda d: d.pop("eps"), "eps"),
    (lambda d: d.update(bodies=[{"box": {"lower": [1, 1], "upper": [0, 0]}}, d["bodies"][1]]), None),
    (lambda d: d.update(seed=-1), "seed"),
])
def test_config_errors(mutate, message):
    doc = json.loads((CONFIGS / "two_box.json").read_text())
    mutate(doc)
    with pytest.raises(ConfigError, match=message):
        harness.ExperimentConfig.from_dict(doc)


def test_config_round_trip():
    for path in CONFIGS.glob("*.json"):
        cfg = harness.load_config(path)
        again = harness.ExperimentConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
        assert again.to_dict() == cfg.to_dict()


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        harness.load_config(tmp_path / "nope.json")


def test_table_writers():
    header, rows = ["a", "b"], [[1, 0.5], [2, float("nan")]]
    assert harness.table_text(header, [[harness._num(v) for v in r] for r in rows]) == "a,b\n1,0.5\n2,nan\n"
    assert json.loads(harness.table_text(header, [[1, 0.5]], "json")) == [{"a": 1, "b": 0.5}]


def test_raising_eps_never_increases_S():
    from seqtest.sequential import ScheduleConfig, compute_schedule

    Ss = [compute_schedule(2, ScheduleConfig(e), 0.00125).S for e in (0.001, 0.01, 0.05, 0.1, 0.2, 0.5)]
    assert Ss == sorted(Ss, reverse=True)
