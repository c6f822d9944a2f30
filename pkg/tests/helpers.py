"""Shared test data builders."""

from __future__ import annotations

import datetime as dt
import math

import numpy as np

from aeroforecast import fundamentals as fund
from aeroforecast import indicators as ind
from aeroforecast.experiments import CompanyBundle
from aeroforecast.market_data import (AlignedDataset, PriceBar, SyntheticSpec,
                                      clean_and_align, generate_synthetic)

START = dt.date(2013, 7, 1)


def trading_days(n, start=START):
    days = []
    d = start
    while len(days) < n:
        if d.weekday() < 5:
            days.append(d)
        d += dt.timedelta(days=1)
    return days


def make_random_bars(seed, n=60, base=100.0, vol=0.02):
    """Seeded random-walk OHLCV bars satisfying the bar invariants."""
    rng = np.random.default_rng(seed)
    closes = base * np.exp(np.cumsum(vol * rng.standard_normal(n)))
    days = trading_days(n)
    bars = []
    prev = closes[0]
    for t in range(n):
        close = float(closes[t])
        open_ = float(prev)
        high = max(open_, close) * (1.0 + abs(float(rng.standard_normal())) * 0.01)
        low = min(open_, close) * (1.0 - abs(float(rng.standard_normal())) * 0.01)
        volume = float(rng.uniform(5e5, 5e6))
        bar = PriceBar(days[t], open_, high, low, close, volume)
        bar.validate()
        bars.append(bar)
        prev = close
    return bars


def make_smooth_bars(n=1260, trend=0.2, amplitude=8.0, period=504.0):
    """Deterministic series whose close is a smooth function of time.

    Volume is constant, so the dominant-variance direction of the
    technical features is the price level itself and the close tau days
    ahead is a noiseless smooth function of the top principal components.
    """
    days = trading_days(n)
    bars = []
    prev = None
    for t in range(n):
        close = 100.0 + trend * t + amplitude * math.sin(2.0 * math.pi * t / period)
        high, low = close * 1.005, close * 0.995
        open_ = close if prev is None else min(max(prev, low), high)
        bar = PriceBar(days[t], open_, high, low, close, 1.0e6)
        bar.validate()
        bars.append(bar)
        prev = close
    return bars


def technical_aligned(bars, cfg=None) -> AlignedDataset:
    """AlignedDataset with only the 15 technical features."""
    cfg = cfg or ind.IndicatorConfig()
    tech = ind.compute_technical_matrix(bars, cfg)
    keep = np.isfinite(tech).all(axis=1)
    return AlignedDataset(
        dates=tuple(b.date for i, b in enumerate(bars) if keep[i]),
        features=tech[keep],
        target=np.array([b.close for i, b in enumerate(bars) if keep[i]]),
        feature_names=ind.TECHNICAL_COLUMNS,
    )


def make_bundle(label, seed, n_days=260, **synth_kwargs) -> CompanyBundle:
    """Full technical + fundamental bundle from the synthetic generator."""
    spec = SyntheticSpec(seed=seed, n_days=n_days, **synth_kwargs)
    bars, reports = generate_synthetic(spec)
    technical = ind.compute_technical_matrix(bars)
    fund_daily, ratio_names = fund.daily_ratio_matrix(reports, bars)
    aligned = clean_and_align(bars, technical, ind.TECHNICAL_COLUMNS,
                              fund_daily, ratio_names)
    return CompanyBundle(label=label, aligned=aligned)
