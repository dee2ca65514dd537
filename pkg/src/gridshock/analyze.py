"""Downstream analyses of a fitted model and its data.

Covers four reporting surfaces:
  * decompose      — split expected outages into weather-driven vs cascade
  * predict_*      — teacher-forced and h-slot-ahead count predictions with
                     MAE/RMSE and a persistence baseline
  * fit_sigmoid    — outage-ratio response curves against cumulative weather,
                     whose threshold c is the disruption tolerance estimate
  * restoration_durations — outage episodes and how fast they clear

All functions are pure; CSV writers live at the bottom and emit byte-stable
output (fixed column order, shortest round-trip float formatting).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit

from .errors import InsufficientDataError, ValidationError
from .ingest import Dataset
from .model import ModelParams, intensity_field, mlp_forward
from .weather_effect import DecayConfig, accumulate

# -- decomposition ----------------------------------------------------------


@dataclass
class Decomposition:
    """Per-cell split of expected outages plus per-slot spatial totals."""

    direct: np.ndarray  # (K, T) weather-driven intensity
    indirect: np.ndarray  # (K, T) cascade intensity
    eps: float
    slot_direct: np.ndarray  # (T,) direct summed over units
    slot_indirect: np.ndarray  # (T,)
    slot_observed: np.ndarray  # (T,)

    @property
    def direct_share(self) -> float:
        total = self.direct.sum() + self.indirect.sum()
        return float(self.direct.sum() / total) if total > 0 else 0.0

    @property
    def indirect_share(self) -> float:
        total = self.direct.sum() + self.indirect.sum()
        return float(self.indirect.sum() / total) if total > 0 else 0.0


def decompose(params: ModelParams, dataset: Dataset) -> Decomposition:
    """Direct/cascade decomposition of the intensity over the dataset."""
    return decompose_counts(params, dataset.outages.counts, dataset.weather)


def decompose_counts(params: ModelParams, counts, weather) -> Decomposition:
    """Decomposition from raw (possibly non-integer) counts and weather."""
    counts = np.asarray(getattr(counts, "counts", counts), dtype=np.float64)
    fld = intensity_field(params, counts, weather)
    return Decomposition(
        direct=fld.direct,
        indirect=fld.indirect,
        eps=params.eps,
        slot_direct=fld.direct.sum(axis=0),
        slot_indirect=fld.indirect.sum(axis=0),
        slot_observed=counts.sum(axis=0),
    )


# -- prediction -------------------------------------------------------------


@dataclass
class PredictionReport:
    """Predicted vs actual counts over the evaluated cells."""

    horizon: int
    predicted: np.ndarray  # (K, T); NaN outside the evaluated span
    actual: np.ndarray  # (K, T)
    mae: float
    rmse: float
    persistence_mae: float
    per_unit_mae: np.ndarray  # (K,)

    @property
    def beats_persistence(self) -> bool:
        return self.mae < self.persistence_mae


def _metrics(pred: np.ndarray, actual: np.ndarray, t_from: int):
    err = pred[:, t_from:] - actual[:, t_from:]
    mae = float(np.abs(err).mean())
    rmse = float(np.sqrt((err**2).mean()))
    per_unit = np.abs(err).mean(axis=1)
    return mae, rmse, per_unit


def predict_in_sample(params: ModelParams, dataset: Dataset) -> PredictionReport:
    """Expected counts with fully observed (teacher-forced) history."""
    fld = intensity_field(params, dataset.outages, dataset.weather)
    actual = dataset.outages.counts.astype(np.float64)
    mae, rmse, per_unit = _metrics(fld.lam, actual, 0)
    persistence = actual[:, :-1]
    persistence_mae = float(np.abs(persistence - actual[:, 1:]).mean())
    return PredictionReport(
        horizon=0,
        predicted=fld.lam,
        actual=actual,
        mae=mae,
        rmse=rmse,
        persistence_mae=persistence_mae,
        per_unit_mae=per_unit,
    )


def _lambda_at(params, hist, direct_col, s, tgt, src, w):
    """Intensity column at slot s given history columns hist[:, :s]."""
    lags = np.arange(1, min(s, params.trig_window) + 1)
    if lags.size:
        kern = params.beta[:, None] * np.exp(-np.outer(params.beta, lags))  # (K, L)
        R = (hist[:, s - lags] * kern).sum(axis=1)
    else:
        R = np.zeros(params.num_units)
    lam = direct_col + R + params.eps
    if tgt.size:
        np.add.at(lam, tgt, w * R[src])
    return lam


def predict_ahead(params: ModelParams, dataset: Dataset, horizon_slots: int = 1) -> PredictionReport:
    """h-slot-ahead prediction: observed history ends at t - h, the gap is
    rolled forward on predicted means. Weather is exogenous and read at every
    step (a forecast assumption). Baseline: persistence N[t - h].

    Metrics cover slots t >= h only, so the model and the baseline see the
    same evaluation span.
    """
    h = int(horizon_slots)
    K, T = dataset.outages.counts.shape
    if h < 1:
        raise ValidationError(f"horizon must be >= 1 slot, got {h}")
    if h >= T:
        raise ValidationError(f"horizon {h} must be smaller than the {T}-slot series")
    counts = dataset.outages.counts.astype(np.float64)
    v = accumulate(params.scaler.transform(dataset.weather), params.decay)
    mu, _ = mlp_forward(params.mlp, v.reshape(K * T, -1))
    direct = params.gamma[:, None] * mu.reshape(K, T)
    edges = sorted(params.graph.edges, key=lambda e: (e[1], e[0]))
    tgt = np.array([t for s, t in edges], dtype=np.intp)
    src = np.array([s for s, t in edges], dtype=np.intp)
    w = np.array([params.alpha.alpha[t_, s_] for s_, t_ in edges])
    keep = w != 0.0
    tgt, src, w = tgt[keep], src[keep], w[keep]

    predicted = np.full((K, T), np.nan)
    hist = np.empty((K, T))
    for t in range(h, T):
        hist[:, : t - h + 1] = counts[:, : t - h + 1]
        for s in range(t - h + 1, t):
            hist[:, s] = _lambda_at(params, hist, direct[:, s], s, tgt, src, w)
        predicted[:, t] = _lambda_at(params, hist, direct[:, t], t, tgt, src, w)

    mae, rmse, per_unit = _metrics(predicted, counts, h)
    persistence_mae = float(np.abs(counts[:, : T - h] - counts[:, h:]).mean())
    return PredictionReport(
        horizon=h,
        predicted=predicted,
        actual=counts,
        mae=mae,
        rmse=rmse,
        persistence_mae=persistence_mae,
        per_unit_mae=per_unit,
    )


# -- sigmoid response / disruption tolerance --------------------------------


@dataclass
class SigmoidFit:
    """r = L / (1 + exp(-a (v - c))) fitted to outage-ratio points."""

    variable: str
    a: float
    c: float
    L: float
    rmse: float
    n_points: int

    def __post_init__(self):
        if self.a <= 0 or not 0 < self.L <= 1 or self.c < 0:
            raise ValidationError(
                f"sigmoid fit out of range: a={self.a}, c={self.c}, L={self.L}"
            )

    def predict(self, v: np.ndarray) -> np.ndarray:
        return self.L * expit(self.a * (np.asarray(v) - self.c))


MIN_SIGMOID_POINTS = 10
SIGMOID_STARTS = 8


def fit_sigmoid(
    dataset: Dataset,
    variable: int | str,
    cfg: DecayConfig | None = None,
    population=None,
) -> SigmoidFit:
    """Fit the outage-ratio response curve for one weather variable.

    Points are (cumulative raw weather, outage ratio) over all cells of the
    chosen units with ratio > 0; ratios use each unit's customer base. The
    best of >= 8 bounded least-squares starts wins (ties: earliest start).
    """
    if isinstance(variable, str):
        try:
            m = dataset.weather.variable_names.index(variable)
        except ValueError:
            raise ValidationError(
                f"unknown weather variable {variable!r}; have {dataset.weather.variable_names}"
            ) from None
    else:
        m = int(variable)
        if not 0 <= m < dataset.num_variables:
            raise ValidationError(f"weather variable index {m} out of range")
    var_name = dataset.weather.variable_names[m]
    cfg = cfg or DecayConfig(omega=np.zeros(dataset.num_variables))
    units = list(range(dataset.num_units)) if population is None else [int(u) for u in population]
    v_all = accumulate(dataset.weather, cfg)[:, :, m]
    customers = np.array([dataset.units[i].total_customers for i in range(dataset.num_units)], dtype=float)
    ratios = dataset.outages.counts / customers[:, None]
    v_pts, r_pts = [], []
    for u in units:
        sel = ratios[u] > 0
        v_pts.append(v_all[u][sel])
        r_pts.append(ratios[u][sel])
    v = np.concatenate(v_pts) if v_pts else np.zeros(0)
    r = np.concatenate(r_pts) if r_pts else np.zeros(0)
    if v.size < MIN_SIGMOID_POINTS:
        raise InsufficientDataError(
            f"sigmoid fit needs >= {MIN_SIGMOID_POINTS} positive-ratio points, got {v.size}"
        )
    return fit_sigmoid_points(v, r, variable=var_name)


def fit_sigmoid_points(v, r, variable: str = "v") -> SigmoidFit:
    """Fit the response curve to pre-extracted (exposure, ratio) points.

    Same estimator as `fit_sigmoid`, for callers that already hold the point
    cloud (e.g. ratios pooled across datasets, or externally derived curves).
    """
    v = np.asarray(v, dtype=np.float64).ravel()
    r = np.asarray(r, dtype=np.float64).ravel()
    if v.shape != r.shape:
        raise ValidationError(f"point arrays disagree: {v.shape} exposures vs {r.shape} ratios")
    if v.size < MIN_SIGMOID_POINTS:
        raise InsufficientDataError(
            f"sigmoid fit needs >= {MIN_SIGMOID_POINTS} points, got {v.size}"
        )
    a, c, L, rmse = _fit_sigmoid_points(v, r)
    return SigmoidFit(variable=variable, a=a, c=c, L=L, rmse=rmse, n_points=int(v.size))


def _fit_sigmoid_points(v: np.ndarray, r: np.ndarray):
    """Multi-start bounded least squares for (a, c, L); returns + rmse."""
    v_lo, v_hi = float(v.min()), float(v.max())
    span = max(v_hi - v_lo, 1e-9)
    L0 = float(np.clip(r.max(), 1e-3, 1.0))

    def loss(theta):
        a, c, L = theta
        resid = L * expit(a * (v - c)) - r
        return float(np.dot(resid, resid))

    c_starts = np.quantile(v, np.linspace(0.1, 0.9, SIGMOID_STARTS // 2))
    starts = []
    for a0 in (1.0 / span * 4.0, 1.0 / span * 40.0):
        for c0 in c_starts:
            starts.append((a0, max(c0, 0.0), L0))
    bounds = [(1e-8, None), (0.0, max(v_hi * 2.0, 1.0)), (1e-8, 1.0)]
    best = None
    for idx, x0 in enumerate(starts):
        res = minimize(loss, x0=np.array(x0), method="L-BFGS-B", bounds=bounds)
        if best is None or res.fun < best.fun:
            best = res
    a, c, L = best.x
    rmse = float(np.sqrt(best.fun / v.size))
    return float(a), float(c), float(L), rmse


def estimate_dtc(fit: SigmoidFit) -> float:
    """Disruption tolerance estimate: the fitted threshold c."""
    return float(fit.c)


# -- restoration episodes ----------------------------------------------------


@dataclass
class Episode:
    """A maximal outage spell for one unit."""

    unit: int
    start_slot: int
    end_slot: int  # inclusive
    max_outage: int

    @property
    def duration_slots(self) -> int:
        return self.end_slot - self.start_slot + 1


DEFAULT_ZERO_RUN = 2


def restoration_durations(dataset_or_counts, zero_run_threshold: int = DEFAULT_ZERO_RUN) -> list:
    """Outage episodes per unit: runs of N > 0; zero gaps shorter than
    `zero_run_threshold` are absorbed (telemetry flickers), so episodes are
    separated by at least that many consecutive zero slots (or the series
    boundary). Episodes are disjoint and cover every nonzero slot.
    """
    if zero_run_threshold < 1:
        raise ValidationError(f"zero_run_threshold must be >= 1, got {zero_run_threshold}")
    counts = np.asarray(getattr(getattr(dataset_or_counts, "outages", dataset_or_counts), "counts", dataset_or_counts))
    K, T = counts.shape
    episodes = []
    for i in range(K):
        row = counts[i]
        nz = np.flatnonzero(row)
        if nz.size == 0:
            continue
        start = int(nz[0])
        prev = int(nz[0])
        for s in nz[1:]:
            s = int(s)
            if s - prev - 1 >= zero_run_threshold:
                episodes.append(
                    Episode(unit=i, start_slot=start, end_slot=prev, max_outage=int(row[start : prev + 1].max()))
                )
                start = s
            prev = s
        episodes.append(
            Episode(unit=i, start_slot=start, end_slot=prev, max_outage=int(row[start : prev + 1].max()))
        )
    return episodes


def episode_duration_summary(episodes: list, within_slots: int = 2) -> dict:
    """Share of episodes clearing within `within_slots` plus basic stats."""
    if not episodes:
        return {"episodes": 0, "within_share": float("nan"), "median_slots": float("nan")}
    durations = np.array([e.duration_slots for e in episodes])
    return {
        "episodes": int(durations.size),
        "within_share": float((durations <= within_slots).mean()),
        "median_slots": float(np.median(durations)),
    }


# -- CSV writers -------------------------------------------------------------


def _fmt(x) -> str:
    return repr(float(x))


def write_decomposition_csv(path, decomp: Decomposition) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["slot", "direct_total", "indirect_total", "observed_total"])
        for t in range(decomp.slot_direct.shape[0]):
            wr.writerow([t, _fmt(decomp.slot_direct[t]), _fmt(decomp.slot_indirect[t]), _fmt(decomp.slot_observed[t])])


def write_predictions_csv(path, report: PredictionReport) -> None:
    K, T = report.predicted.shape
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["unit", "slot", "predicted", "actual"])
        for i in range(K):
            for t in range(T):
                if np.isnan(report.predicted[i, t]):
                    continue
                wr.writerow([i, t, _fmt(report.predicted[i, t]), _fmt(report.actual[i, t])])


def write_sigmoid_csv(path, fits: list) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["variable", "a", "c", "L", "rmse", "n_points"])
        for f in fits:
            wr.writerow([f.variable, _fmt(f.a), _fmt(f.c), _fmt(f.L), _fmt(f.rmse), f.n_points])


def write_episodes_csv(path, episodes: list) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["unit", "start", "end", "duration_slots", "max_outage"])
        for e in episodes:
            wr.writerow([e.unit, e.start_slot, e.end_slot, e.duration_slots, e.max_outage])


def write_sweep_csv(path, rows: list, axis1_name: str = "top_units", axis2_name: str = "edges_per_unit") -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow([axis1_name, axis2_name, "reduction_pct", "std_err"])
        for a1, a2, pct, se in rows:
            wr.writerow([a1, a2, _fmt(pct), _fmt(se)])
