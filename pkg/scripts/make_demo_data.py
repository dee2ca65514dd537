#!/usr/bin/env python3
"""Generate a small deterministic demo dataset for the CLI walkthrough.

Twelve towns on a jittered grid, three days of hourly telemetry, two named
storms. Outage counts mix a weather-driven rate with some spillover from a
town's western neighbor, so the fitted model has real structure to find:
a response curve, a propagation direction, and restoration episodes.

Usage: python3 scripts/make_demo_data.py --out demo [--seed 0]
"""

import argparse
import csv
from pathlib import Path

import numpy as np

TOWNS = 12
HOURS = 72  # three days
VARIABLES = ("wind_speed", "precip_rate")


def synth_weather(rng):
    """(K, T, 2) raw weather: calm background plus two storm passages."""
    wind = rng.normal(4.0, 0.6, (TOWNS, HOURS)).clip(min=0.0)
    precip = rng.gamma(1.3, 0.8, (TOWNS, HOURS))
    for i in range(TOWNS):
        onset = 10 + i  # day-one storm sweeps west to east
        wind[i, onset : onset + 9] += 14.0 + rng.normal(0.0, 1.0)
        precip[i, onset : onset + 9] += 4.0
        onset2 = 50 + (i % 4)  # day-three squall, shorter and gustier
        wind[i, onset2 : onset2 + 5] += 19.0 + rng.normal(0.0, 1.5)
    return np.stack([wind, precip], axis=2)


def synth_outages(rng, weather):
    """Hourly counts: weather response plus lag-1 spillover from the west."""
    wind = weather[:, :, 0]
    base = 0.12 + 2.8 / (1.0 + np.exp(-0.8 * (wind - 12.0)))
    counts = np.zeros((TOWNS, HOURS), dtype=np.int64)
    for t in range(HOURS):
        lam = base[:, t].copy()
        if t > 0:
            lam[1:] += 0.45 * counts[:-1, t - 1]
        counts[:, t] = rng.poisson(lam)
    return counts


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="demo", help="output directory (default: demo)")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    lats = 42.25 + 0.08 * np.arange(TOWNS) + rng.normal(0.0, 0.01, TOWNS)
    lons = -71.30 + 0.05 * np.arange(TOWNS) + rng.normal(0.0, 0.01, TOWNS)
    customers = rng.integers(8000, 40000, TOWNS)

    with open(out / "units.csv", "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["unit_id", "lat", "lon", "total_customers"])
        for i in range(TOWNS):
            wr.writerow([f"town{i:02d}", f"{lats[i]:.5f}", f"{lons[i]:.5f}", int(customers[i])])

    weather = synth_weather(rng)
    with open(out / "weather.csv", "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["unit_id", "timestamp", *VARIABLES])
        for i in range(TOWNS):
            for h in range(HOURS):
                day, hour = divmod(h, 24)
                ts = f"2023-09-{day + 4:02d}T{hour:02d}:00:00Z"
                wr.writerow([f"town{i:02d}", ts, f"{weather[i, h, 0]:.3f}", f"{weather[i, h, 1]:.3f}"])

    counts = synth_outages(rng, weather)
    with open(out / "outages.csv", "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["unit_id", "timestamp", "customers_out"])
        for i in range(TOWNS):
            for h in range(HOURS):
                day, hour = divmod(h, 24)
                ts = f"2023-09-{day + 4:02d}T{hour:02d}:30:00Z"
                wr.writerow([f"town{i:02d}", ts, int(counts[i, h])])

    print(f"wrote {out}/units.csv, {out}/weather.csv, {out}/outages.csv")
    print(f"towns={TOWNS} hours={HOURS} total_outages={int(counts.sum())}")


if __name__ == "__main__":
    main()
