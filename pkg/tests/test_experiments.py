import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from avb import dataio
from avb.experiments import (
    PairedTestResult, SweepSummary, betainc_reg, build_report, paired_ttest,
    run_sweep, t_sf,
)
from avb.train import TrainConfig


def _t_pdf(x, nu):
    return math.exp(
        math.lgamma((nu + 1) / 2) - math.lgamma(nu / 2)
    ) / math.sqrt(nu * math.pi) * (1 + x * x / nu) ** (-(nu + 1) / 2)


def _t_sf_oracle(t, nu):
    """Two-sided p by numerical integration of the t density."""
    tail, _ = integrate.quad(_t_pdf, abs(t), np.inf, args=(nu,), epsabs=1e-13, epsrel=1e-13)
    return 2.0 * tail


def test_t_sf_at_zero():
    assert t_sf(0.0, 5) == 1.0


def test_t_sf_cauchy_quartile():
    assert t_sf(1.0, 1) == pytest.approx(0.5, abs=1e-12)


def test_t_sf_t_table_point():
    assert t_sf(2.093, 19) == pytest.approx(0.05, abs=1e-3)


def test_t_sf_matches_integration_oracle():
    for nu in range(1, 31):
        for t in np.linspace(0.0, 10.0, 21):
            assert t_sf(float(t), nu) == pytest.approx(_t_sf_oracle(t, nu), abs=1e-9)


def test_t_sf_monotone_in_abs_t():
    for nu in (1, 5, 19, 30):
        ps = [t_sf(t, nu) for t in np.linspace(0.01, 10, 50)]
        assert all(a > b for a, b in zip(ps, ps[1:]))


def test_t_sf_symmetric():
    assert t_sf(-2.5, 7) == t_sf(2.5, 7)


def test_betainc_endpoints():
    assert betainc_reg(2.0, 3.0, 0.0) == 0.0
    assert betainc_reg(2.0, 3.0, 1.0) == 1.0


def test_paired_ttest_identical_samples_degenerate():
    r = paired_ttest([0.5, 0.6, 0.7], [0.5, 0.6, 0.7])
    assert r.degenerate
    assert r.mean_diff == 0.0
    assert r.p_value == 1.0


def test_paired_ttest_hand_example():
    # d = [1,1,1,2]: mean 1.25, sd 0.5, t = 5, nu = 3
    a = [2.0, 3.0, 4.0, 7.0]
    b = [1.0, 2.0, 3.0, 5.0]
    r = paired_ttest(a, b)
    assert r.mean_diff == pytest.approx(1.25)
    assert r.t_stat == pytest.approx(5.0, abs=1e-12)
    assert r.dof == 3
    assert r.p_value == pytest.approx(_t_sf_oracle(5.0, 3), abs=1e-9)
    assert r.p_value == pytest.approx(0.0154, abs=5e-4)


def test_paired_ttest_antisymmetric():
    rng = np.random.default_rng(0)
    a = rng.normal(0.6, 0.01, size=20)
    b = rng.normal(0.6, 0.01, size=20)
    r_ab = paired_ttest(a, b)
    r_ba = paired_ttest(b, a)
    assert r_ab.t_stat == pytest.approx(-r_ba.t_stat, abs=1e-12)
    assert r_ab.p_value == pytest.approx(r_ba.p_value, abs=1e-12)


@given(st.floats(-0.2, 0.2))
@settings(max_examples=30)
def test_paired_ttest_shift_invariance(c):
    rng = np.random.default_rng(3)
    a = rng.normal(0.5, 0.02, size=12)
    b = rng.normal(0.5, 0.02, size=12)
    base = paired_ttest(a, b)
    shifted = paired_ttest(a + c, b + c)
    assert shifted.t_stat == pytest.approx(base.t_stat, abs=1e-8)
    assert shifted.p_value == pytest.approx(base.p_value, abs=1e-8)
    only_a = paired_ttest(a + c, b)
    assert only_a.mean_diff == pytest.approx(base.mean_diff + c, abs=1e-12)


def test_sweep_summary_stats():
    s = SweepSummary.from_scores("f", "two", {0: 0.5, 1: 0.7})
    assert s.mean_score == pytest.approx(0.6)
    assert s.std_score == pytest.approx(0.141421, abs=1e-6)
    assert s.max_score == 0.7


def _tiny_dataset(task="two"):
    feats, labels = dataio.make_synthetic(seed=5, n=60, dims=4, task=task)
    return dataio.join_split(feats, labels)


def _fast_config(task="two"):
    return TrainConfig(task=task, feature_name="tiny", max_epochs=3)


def test_run_sweep_writes_manifests_and_max_ge_mean(tmp_path):
    ds = _tiny_dataset()
    summary = run_sweep(ds, _fast_config(), seeds=range(4), out_dir=tmp_path)
    assert summary.max_score >= summary.mean_score
    assert len(summary.per_seed_scores) == 4
    for seed in range(4):
        assert (tmp_path / "runs" / "tiny" / "two" / str(seed) / "manifest.json").exists()


def test_run_sweep_resumes_from_existing_manifests(tmp_path):
    ds = _tiny_dataset()
    run_sweep(ds, _fast_config(), seeds=range(4), out_dir=tmp_path)
    # poison one manifest's score; a resumed sweep must reuse it untouched
    victim = tmp_path / "runs" / "tiny" / "two" / "2" / "manifest.json"
    data = json.loads(victim.read_text())
    data["best_val_score"] = 0.123456
    victim.write_text(json.dumps(data))
    (tmp_path / "runs" / "tiny" / "two" / "3" / "manifest.json").unlink()
    summary = run_sweep(ds, _fast_config(), seeds=range(4), out_dir=tmp_path)
    assert summary.per_seed_scores[2] == 0.123456
    assert 3 in summary.per_seed_scores


def test_run_sweep_rejects_duplicate_seeds(tmp_path):
    with pytest.raises(ValueError):
        run_sweep(_tiny_dataset(), _fast_config(), seeds=[0, 0], out_dir=tmp_path)


def _summaries_for_report():
    out = []
    rng = np.random.default_rng(2)
    for feat, off in (("feat-a", 0.1), ("feat-b", 0.0)):
        for task in ("high", "two", "culture", "type"):
            scores = {s: float(0.5 + off + 0.01 * rng.standard_normal()) for s in range(5)}
            out.append(SweepSummary.from_scores(feat, task, scores))
    return out


def test_build_report_outputs(tmp_path):
    summaries = _summaries_for_report()
    build_report(summaries, [], tmp_path)
    report = tmp_path / "report"
    for name in ("summary.json", "tables.txt", "radar.json", "box.json"):
        assert (report / name).exists()
    radar = json.loads((report / "radar.json").read_text())
    box = json.loads((report / "box.json").read_text())
    assert set(radar) == {"feat-a", "feat-b"}
    assert len(box["feat-a"]) == 5
    # feat-a dominates feat-b per task, so every radar vertex is >=
    assert all(radar["feat-a"][t] >= radar["feat-b"][t] for t in radar["feat-a"])


def test_build_report_single_feature_all_ones(tmp_path):
    summaries = [
        SweepSummary.from_scores("f", t, {s: 1.0 for s in range(3)})
        for t in ("high", "two", "culture", "type")
    ]
    build_report(summaries, [], tmp_path)
    box = json.loads((tmp_path / "report" / "box.json").read_text())
    assert box["f"] == [1.0, 1.0, 1.0]


def test_build_report_byte_identical_rerun(tmp_path):
    summaries = _summaries_for_report()
    build_report(summaries, [], tmp_path / "one")
    build_report(summaries, [], tmp_path / "two")
    for name in ("summary.json", "tables.txt", "radar.json", "box.json"):
        assert (tmp_path / "one" / "report" / name).read_bytes() == \
               (tmp_path / "two" / "report" / name).read_bytes()


def test_build_report_seed_intersection_warning(tmp_path):
    summaries = [
        SweepSummary.from_scores("f", t, {s: 0.5 for s in range(5)})
        for t in ("high", "two", "culture")
    ]
    summaries.append(SweepSummary.from_scores("f", "type", {s: 0.5 for s in range(3)}))
    payload = build_report(summaries, [], tmp_path)
    assert payload["warnings"]
    box = json.loads((tmp_path / "report" / "box.json").read_text())
    assert len(box["f"]) == 3


def test_summary_stats_recomputable():
    rng = np.random.default_rng(1)
    scores = {s: float(v) for s, v in enumerate(rng.uniform(0.3, 0.7, size=20))}
    s = SweepSummary.from_scores("f", "high", scores)
    vals = np.array(list(scores.values()))
    assert abs(s.mean_score - vals.mean()) < 1e-12
    assert abs(s.std_score - vals.std(ddof=1)) < 1e-12
    assert s.max_score == vals.max()
