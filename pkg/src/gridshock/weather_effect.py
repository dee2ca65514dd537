"""Cumulative weather effect: exponentially discounted windowed sums.

The model does not react to instantaneous weather alone; stress accumulates.
For unit i, slot t, variable m the effect is

    v[i,t,m] = sum_{tau = t-d+1 .. t} x[i,tau,m] * exp(-omega_m * (t - tau))

i.e. a length-d window where older samples are discounted at a per-variable
rate omega_m. omega is learned jointly with the rest of the model, so the
sensitivity dv/domega is computed here as well. Slots before the start of the
series contribute nothing (the window is truncated, not padded).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError

DEFAULT_WINDOW_SLOTS = 24  # 3 days of 3-hour slots


@dataclass
class DecayConfig:
    """Per-variable decay rates omega (M-vector) and window length d.

    Negative rates are representable (gradient steps pass through them before
    projection clamps); the constrained model space itself requires omega >= 0,
    which ModelParams.check_invariants enforces.
    """

    omega: np.ndarray
    window_slots: int = DEFAULT_WINDOW_SLOTS

    def __post_init__(self):
        self.omega = np.atleast_1d(np.asarray(self.omega, dtype=np.float64))
        if self.omega.ndim != 1:
            raise ValidationError(f"omega must be a vector, got shape {self.omega.shape}")
        if not np.isfinite(self.omega).all():
            raise ValidationError("decay rates must be finite")
        if self.window_slots < 1:
            raise ValidationError(f"window_slots must be >= 1, got {self.window_slots}")


def _as_array(weather) -> np.ndarray:
    x = getattr(weather, "values", weather)
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise ValidationError(f"expected a K x T x M tensor, got shape {x.shape}")
    if not np.isfinite(x).all():
        i, t, m = np.argwhere(~np.isfinite(x))[0]
        raise ValidationError(f"non-finite weather input at (unit={i}, slot={t}, var={m})")
    return x


def accumulate(weather, cfg: DecayConfig) -> np.ndarray:
    """Discounted windowed sum of `weather` (K x T x M array or WeatherTensor)."""
    return accumulate_with_grad(weather, cfg)[0]


def accumulate_with_grad(weather, cfg: DecayConfig) -> tuple[np.ndarray, np.ndarray]:
    """Return (v, dv/domega), both K x T x M.

    dv[i,t,m]/domega_m = sum_tau -(t - tau) * x[i,tau,m] * exp(-omega_m (t - tau)).
    The lag loop runs in fixed order, so results are bit-reproducible.
    """
    x = _as_array(weather)
    K, T, M = x.shape
    if cfg.omega.shape[0] != M:
        raise ValidationError(f"omega has {cfg.omega.shape[0]} entries for {M} weather variables")
    v = np.zeros_like(x)
    dv = np.zeros_like(x)
    max_lag = min(cfg.window_slots, T)
    for lag in range(max_lag):
        w = np.exp(-cfg.omega * lag)  # (M,)
        if lag == 0:
            v += x * w
        else:
            v[:, lag:, :] += x[:, : T - lag, :] * w
            dv[:, lag:, :] += x[:, : T - lag, :] * (-lag * w)
    return v, dv


@dataclass
class WeatherScaler:
    """Per-variable z-score standardization, fit on the training span.

    Applied to raw weather *before* accumulation; persisted alongside the
    model so held-out data is scaled identically. Constant variables get a
    unit scale so they pass through as zeros rather than dividing by zero.
    """

    mean: np.ndarray = field(default_factory=lambda: np.zeros(0))
    scale: np.ndarray = field(default_factory=lambda: np.ones(0))

    @classmethod
    def fit(cls, weather) -> "WeatherScaler":
        x = _as_array(weather)
        mean = x.mean(axis=(0, 1))
        std = x.std(axis=(0, 1))
        scale = np.where(std > 0, std, 1.0)
        return cls(mean=mean, scale=scale)

    def transform(self, weather) -> np.ndarray:
        x = _as_array(weather)
        if x.shape[2] != self.mean.shape[0]:
            raise ValidationError(
                f"scaler was fit on {self.mean.shape[0]} variables, input has {x.shape[2]}"
            )
        return (x - self.mean) / self.scale

    def __eq__(self, other):
        if not isinstance(other, WeatherScaler):
            return NotImplemented
        return np.array_equal(self.mean, other.mean) and np.array_equal(self.scale, other.scale)
