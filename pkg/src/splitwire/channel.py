"""Rayleigh-fading outage model, worst-case retransmission latency, and rate search."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from functools import lru_cache

import numpy as np

from .errors import SplitwireError

GRID_POINTS = 10_000
# ratios this close above an integer are taken as that integer (log round-off)
_CEIL_SLACK = 1e-9


@dataclass(frozen=True)
class ChannelParams:
    epsilon: float = 1e-3
    bandwidth_hz: float = 1e7
    snr: float = 10.0
    sigma_h2: float = 1.0
    r_min: float = 1e6
    r_max: float = 1e8

    def __post_init__(self):
        if not 0 < self.epsilon < 1:
            raise SplitwireError("epsilon must lie in (0, 1)")
        if not (self.bandwidth_hz > 0 and self.snr > 0 and self.sigma_h2 > 0):
            raise SplitwireError("bandwidth_hz, snr and sigma_h2 must be positive")
        if not 0 < self.r_min <= self.r_max:
            raise SplitwireError("need 0 < r_min <= r_max")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ChannelParams":
        known = {k: float(d[k]) for k in ("epsilon", "bandwidth_hz", "snr", "sigma_h2", "r_min", "r_max") if k in d}
        unknown = set(d) - set(known)
        if unknown:
            raise SplitwireError(f"unknown channel fields: {sorted(unknown)}")
        if "r_min" not in known or "r_max" not in known:
            # default search window [0.1 W, 10 W]
            bw = known.get("bandwidth_hz", cls.bandwidth_hz)
            known.setdefault("r_min", 0.1 * bw)
            known.setdefault("r_max", 10.0 * bw)
        return cls(**known)


def outage_prob(rate: float, params: ChannelParams) -> float:
    """Probability that a Rayleigh channel cannot support ``rate`` bits/s."""
    if not rate > 0:
        raise SplitwireError(f"rate must be positive, got {rate}")
    x = math.expm1(rate / params.bandwidth_hz * math.log(2.0)) / (params.snr * params.sigma_h2)
    return -math.expm1(-x)


def retransmissions(epsilon: float, p_out: float) -> int:
    """Attempts needed so the residual outage probability drops to ``epsilon``."""
    if not 0 < p_out < 1:
        raise SplitwireError(f"outage probability {p_out} makes the attempt count undefined")
    ratio = math.log(epsilon) / math.log(p_out)
    n = math.floor(ratio)
    if ratio - n > _CEIL_SLACK * max(1.0, ratio):
        n += 1
    return max(1, int(n))


def epsilon_latency(d_tx_bits: float, rate: float, params: ChannelParams, check_range: bool = True) -> float:
    """Worst-case seconds to deliver ``d_tx_bits`` at ``rate`` with outage at most epsilon."""
    if d_tx_bits < 0:
        raise SplitwireError("payload size must be non-negative")
    if check_range and not (params.r_min * (1 - 1e-12) <= rate <= params.r_max * (1 + 1e-12)):
        raise SplitwireError(f"rate {rate} outside [{params.r_min}, {params.r_max}]")
    if d_tx_bits == 0:
        return 0.0
    p = outage_prob(rate, params)
    return d_tx_bits / rate * retransmissions(params.epsilon, p)


def g_metric(rate: float, params: ChannelParams) -> float:
    """``ln(1 / P_o(R)) / R``, the rate-selection metric used by ``paper-g`` mode."""
    p = outage_prob(rate, params)
    if not 0 < p < 1:
        return math.inf
    return -math.log(p) / rate


def rate_grid(params: ChannelParams, points: int = GRID_POINTS) -> np.ndarray:
    if params.r_min == params.r_max:
        return np.array([params.r_min])
    return np.linspace(params.r_min, params.r_max, points)


def _grid_argmin(values: list[float], grid: np.ndarray) -> float:
    best_i = -1
    best = math.inf
    for i, v in enumerate(values):
        # strict < keeps the smallest rate on ties
        if v < best:
            best, best_i = v, i
    if best_i < 0:
        raise SplitwireError("no rate on the grid gives a finite latency")
    return float(grid[best_i])


@lru_cache(maxsize=256)
def optimal_rate(params: ChannelParams, mode: str = "direct", points: int = GRID_POINTS) -> float:
    """Grid search for the transmission rate.

    ``direct`` minimizes the worst-case latency of a unit payload; ``paper-g``
    minimizes ``g_metric`` as literally stated. g is decreasing in R, so that
    mode picks the largest grid rate whose outage probability is still
    numerically below 1 (rates past that point have no defined latency).
    """
    grid = rate_grid(params, points)
    if mode == "direct":
        values = []
        for r in grid:
            try:
                values.append(epsilon_latency(1.0, float(r), params))
            except SplitwireError:
                values.append(math.inf)
    elif mode == "paper-g":
        values = [g_metric(float(r), params) for r in grid]
    else:
        raise SplitwireError(f"unknown rate mode {mode!r} (use 'direct' or 'paper-g')")
    return _grid_argmin(values, grid)
