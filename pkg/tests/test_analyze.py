from dataclasses import replace

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal
from scipy.special import expit

from oracles import naive_intensity_field
from synth import random_small_instance, wrap_dataset
from gridshock.analyze import (
    Decomposition,
    Episode,
    PredictionReport,
    SigmoidFit,
    decompose,
    decompose_counts,
    episode_duration_summary,
    estimate_dtc,
    fit_sigmoid,
    fit_sigmoid_points,
    predict_ahead,
    predict_in_sample,
    restoration_durations,
    write_decomposition_csv,
    write_episodes_csv,
    write_predictions_csv,
    write_sigmoid_csv,
    write_sweep_csv,
)
from gridshock.errors import InsufficientDataError, ValidationError
from gridshock.model import intensity_field
from gridshock.weather_effect import DecayConfig


@pytest.fixture(scope="module")
def small():
    rng = np.random.default_rng(313)
    params, counts, weather = random_small_instance(rng, K=4, T=30, M=2, n_edges=4)
    return params, wrap_dataset(counts, weather)


# -- decomposition ---------------------------------------------------------------


def test_decompose_matches_intensity_components(small):
    params, ds = small
    dec = decompose(params, ds)
    fld = intensity_field(params, ds.outages.counts, ds.weather)
    assert_array_equal(dec.direct, fld.direct)
    assert_array_equal(dec.indirect, fld.indirect)
    assert dec.eps == params.eps
    assert_allclose(dec.slot_direct, fld.direct.sum(axis=0))
    assert_allclose(dec.slot_indirect, fld.indirect.sum(axis=0))
    assert_array_equal(dec.slot_observed, ds.outages.counts.sum(axis=0))
    assert dec.direct_share + dec.indirect_share == pytest.approx(1.0)
    assert 0 < dec.indirect_share < 1


def test_decompose_counts_accepts_raw_means(small):
    params, ds = small
    means = ds.outages.counts * 0.5  # non-integer "expected count" history
    dec = decompose_counts(params, means, ds.weather)
    _, direct, indirect = naive_intensity_field(params, means, ds.weather.values)
    assert_allclose(dec.direct, direct, rtol=1e-10)
    assert_allclose(dec.indirect, indirect, rtol=1e-10)


def test_share_of_all_zero_history_is_all_direct():
    rng = np.random.default_rng(5)
    params, _, weather = random_small_instance(rng, K=3, T=10, M=1, n_edges=3)
    dec = decompose_counts(params, np.zeros((3, 10)), weather)
    assert dec.indirect_share == 0.0
    assert dec.direct_share == 1.0


# -- prediction -------------------------------------------------------------------


def test_predict_in_sample_is_teacher_forced_intensity(small):
    params, ds = small
    rep = predict_in_sample(params, ds)
    fld = intensity_field(params, ds.outages.counts, ds.weather)
    assert rep.horizon == 0
    assert_array_equal(rep.predicted, fld.lam)
    err = fld.lam - ds.outages.counts
    assert rep.mae == pytest.approx(np.abs(err).mean())
    assert rep.rmse == pytest.approx(np.sqrt((err**2).mean()))
    actual = ds.outages.counts
    assert rep.persistence_mae == pytest.approx(np.abs(actual[:, :-1] - actual[:, 1:]).mean())
    assert rep.per_unit_mae.shape == (4,)
    assert rep.beats_persistence == (rep.mae < rep.persistence_mae)


def test_one_step_ahead_equals_teacher_forced_columns(small):
    # with h=1 there is no gap to roll, so each predicted column is the
    # plain conditional intensity given the observed past
    params, ds = small
    rep = predict_ahead(params, ds, horizon_slots=1)
    fld = intensity_field(params, ds.outages.counts, ds.weather)
    assert np.isnan(rep.predicted[:, 0]).all()
    assert_allclose(rep.predicted[:, 1:], fld.lam[:, 1:], rtol=1e-10)
    counts = ds.outages.counts
    assert rep.persistence_mae == pytest.approx(np.abs(counts[:, :-1] - counts[:, 1:]).mean())


def test_two_step_ahead_rolls_the_gap_on_means(small):
    params, ds = small
    rep = predict_ahead(params, ds, horizon_slots=2)
    counts = ds.outages.counts.astype(float)
    weather = ds.weather.values
    lam_tf, _, _ = naive_intensity_field(params, counts, weather)
    K, T = counts.shape
    assert np.isnan(rep.predicted[:, :2]).all()
    for t in range(2, T):
        hist = counts.copy()
        hist[:, t - 1] = lam_tf[:, t - 1]  # unseen slot replaced by its predicted mean
        hist[:, t:] = 0.0
        lam_roll, _, _ = naive_intensity_field(params, hist, weather)
        assert_allclose(rep.predicted[:, t], lam_roll[:, t], rtol=1e-9)


def test_predict_ahead_rejects_bad_horizons(small):
    params, ds = small
    with pytest.raises(ValidationError, match=">= 1"):
        predict_ahead(params, ds, horizon_slots=0)
    with pytest.raises(ValidationError, match="smaller than"):
        predict_ahead(params, ds, horizon_slots=ds.grid.num_slots)


# -- sigmoid response --------------------------------------------------------------


def _sigmoid_dataset(a=1.2, c=4.0, L=0.6, K=3, T=60, customers=20000, seed=88):
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.0, 10.0, (K, T, 1))
    ratio = L * expit(a * (x[:, :, 0] - c))
    counts = np.round(ratio * customers).astype(np.int64)
    ds = wrap_dataset(counts, x, variable_names=["wind_speed"])
    ds.units = [replace(u, total_customers=customers) for u in ds.units]
    return ds


def test_fit_sigmoid_recovers_response_curve():
    ds = _sigmoid_dataset()
    fit = fit_sigmoid(ds, "wind_speed", cfg=DecayConfig(omega=np.zeros(1), window_slots=1))
    assert fit.variable == "wind_speed"
    assert fit.a == pytest.approx(1.2, rel=0.1)
    assert fit.c == pytest.approx(4.0, rel=0.05)
    assert fit.L == pytest.approx(0.6, rel=0.05)
    assert fit.rmse < 0.01
    assert estimate_dtc(fit) == fit.c


def test_fit_sigmoid_population_and_index_selection():
    ds = _sigmoid_dataset()
    cfg = DecayConfig(omega=np.zeros(1), window_slots=1)
    full = fit_sigmoid(ds, 0, cfg=cfg)
    sub = fit_sigmoid(ds, 0, cfg=cfg, population=[0])
    expected_pts = int((ds.outages.counts[0] > 0).sum())
    assert sub.n_points == expected_pts
    assert full.n_points > sub.n_points
    assert sub.c == pytest.approx(full.c, rel=0.1)


def test_fit_sigmoid_unknown_variable(small):
    _, ds = small
    with pytest.raises(ValidationError, match="unknown weather variable"):
        fit_sigmoid(ds, "humidity")
    with pytest.raises(ValidationError, match="out of range"):
        fit_sigmoid(ds, 5)


def test_fit_sigmoid_points_basics():
    rng = np.random.default_rng(3)
    v = rng.uniform(0, 8, 150)
    r = 0.8 * expit(2.0 * (v - 3.0)) + rng.normal(0, 0.005, 150)
    fit = fit_sigmoid_points(v, r)
    assert fit.a == pytest.approx(2.0, rel=0.1)
    assert fit.c == pytest.approx(3.0, rel=0.1)
    assert fit.L == pytest.approx(0.8, rel=0.1)
    assert fit.n_points == 150
    with pytest.raises(ValidationError, match="disagree"):
        fit_sigmoid_points(v, r[:-1])
    with pytest.raises(InsufficientDataError, match=">= 10"):
        fit_sigmoid_points(v[:5], r[:5])


def test_sigmoid_fit_validation_and_predict():
    with pytest.raises(ValidationError, match="out of range"):
        SigmoidFit(variable="v", a=-1.0, c=2.0, L=0.5, rmse=0.0, n_points=10)
    with pytest.raises(ValidationError, match="out of range"):
        SigmoidFit(variable="v", a=1.0, c=2.0, L=1.5, rmse=0.0, n_points=10)
    fit = SigmoidFit(variable="v", a=2.0, c=3.0, L=0.8, rmse=0.0, n_points=10)
    assert fit.predict(3.0) == pytest.approx(0.4)  # half-saturation at the threshold
    assert fit.predict(np.array([100.0]))[0] == pytest.approx(0.8)


# -- restoration episodes ---------------------------------------------------------


def test_restoration_durations_hand_case():
    counts = np.array([[0, 3, 2, 0, 0, 1]])
    eps2 = restoration_durations(counts, zero_run_threshold=2)
    assert [(e.start_slot, e.end_slot, e.max_outage) for e in eps2] == [(1, 2, 3), (5, 5, 1)]
    assert [e.duration_slots for e in eps2] == [2, 1]
    eps3 = restoration_durations(counts, zero_run_threshold=3)
    assert [(e.start_slot, e.end_slot, e.max_outage) for e in eps3] == [(1, 5, 3)]


def test_restoration_durations_boundaries_and_empty():
    counts = np.array([[2, 0, 0, 0, 4], [0, 0, 0, 0, 0], [1, 1, 1, 1, 1]])
    eps = restoration_durations(counts, zero_run_threshold=2)
    assert [(e.unit, e.start_slot, e.end_slot) for e in eps] == [(0, 0, 0), (0, 4, 4), (2, 0, 4)]
    assert restoration_durations(np.zeros((2, 6), dtype=int)) == []
    with pytest.raises(ValidationError, match=">= 1"):
        restoration_durations(counts, zero_run_threshold=0)


def test_restoration_durations_accepts_dataset(small):
    _, ds = small
    from_ds = restoration_durations(ds)
    from_counts = restoration_durations(ds.outages.counts)
    assert from_ds == from_counts
    assert all(ds.outages.counts[e.unit, e.start_slot : e.end_slot + 1].max() == e.max_outage for e in from_ds)


def test_episode_duration_summary():
    eps = [
        Episode(unit=0, start_slot=1, end_slot=2, max_outage=3),
        Episode(unit=0, start_slot=5, end_slot=5, max_outage=1),
        Episode(unit=1, start_slot=0, end_slot=6, max_outage=2),
    ]
    s = episode_duration_summary(eps, within_slots=2)
    assert s == {"episodes": 3, "within_share": pytest.approx(2 / 3), "median_slots": 2.0}
    empty = episode_duration_summary([])
    assert empty["episodes"] == 0 and np.isnan(empty["within_share"])


# -- CSV writers -------------------------------------------------------------------


def test_decomposition_csv_bytes(tmp_path):
    dec = Decomposition(
        direct=np.array([[0.5, 1.0]]),
        indirect=np.array([[0.25, 0.0]]),
        eps=0.001,
        slot_direct=np.array([0.5, 1.0]),
        slot_indirect=np.array([0.25, 0.0]),
        slot_observed=np.array([1.0, 2.0]),
    )
    path = tmp_path / "d.csv"
    write_decomposition_csv(path, dec)
    assert path.read_bytes() == (
        b"slot,direct_total,indirect_total,observed_total\n0,0.5,0.25,1.0\n1,1.0,0.0,2.0\n"
    )


def test_predictions_csv_skips_unevaluated_cells(tmp_path):
    rep = PredictionReport(
        horizon=1,
        predicted=np.array([[np.nan, 0.75], [np.nan, 1.5]]),
        actual=np.array([[0.0, 1.0], [2.0, 2.0]]),
        mae=0.0,
        rmse=0.0,
        persistence_mae=0.0,
        per_unit_mae=np.zeros(2),
    )
    path = tmp_path / "p.csv"
    write_predictions_csv(path, rep)
    assert path.read_text() == "unit,slot,predicted,actual\n0,1,0.75,1.0\n1,1,1.5,2.0\n"


def test_sigmoid_and_episode_and_sweep_csv(tmp_path):
    fit = SigmoidFit(variable="wind_speed", a=2.0, c=3.5, L=0.9, rmse=0.01, n_points=42)
    sig = tmp_path / "s.csv"
    write_sigmoid_csv(sig, [fit])
    assert sig.read_text() == "variable,a,c,L,rmse,n_points\nwind_speed,2.0,3.5,0.9,0.01,42\n"

    epi = tmp_path / "e.csv"
    write_episodes_csv(epi, [Episode(unit=1, start_slot=4, end_slot=6, max_outage=7)])
    assert epi.read_text() == "unit,start,end,duration_slots,max_outage\n1,4,6,3,7\n"

    sw = tmp_path / "w.csv"
    write_sweep_csv(sw, [(0, 0, 0.0, 0.0), (1, 2, 12.5, 0.25)])
    assert sw.read_text() == (
        "top_units,edges_per_unit,reduction_pct,std_err\n0,0,0.0,0.0\n1,2,12.5,0.25\n"
    )
