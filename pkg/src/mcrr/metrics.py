"""Streamflow evaluation metrics and flow-regime tools.

The headline score is the Kling-Gupta efficiency (KGE), the Euclidean
distance in (variability ratio, bias ratio, correlation) space
subtracted from one, together with its skill-score rescaling against the
mean-flow benchmark.  All statistics are population statistics (divide
by n, not n - 1).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .errors import DegenerateDataError, InvalidInputError
from .model import (
    ModelConfig,
    PhysicalParams,
    SoilGeometry,
    baseflow_gated,
    drainage_gate,
    sigmoid,
)

# KGE of the mean-flow benchmark: alpha = 0, r undefined (taken as 0), beta = 1.
MEAN_BENCHMARK_KGE = 1.0 - math.sqrt(2.0)


@dataclass(frozen=True)
class KgeReport:
    """KGE decomposition for one simulated/observed pair."""

    kge: float
    kge_ss: float     # skill score vs the mean-flow benchmark
    r: float          # linear correlation (0 by convention if sim is constant)
    alpha: float      # std(sim) / std(obs)
    beta: float       # mean(sim) / mean(obs)
    n: int            # number of evaluated days


def _paired(sim, obs, mask) -> tuple[np.ndarray, np.ndarray]:
    sim = np.asarray(sim, dtype=float)
    obs = np.asarray(obs, dtype=float)
    if sim.shape != obs.shape or sim.ndim != 1:
        raise InvalidInputError("sim and obs must be aligned 1-D arrays")
    keep = np.isfinite(obs)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != obs.shape:
            raise InvalidInputError("mask must align with the series")
        keep &= mask
    return sim[keep], obs[keep]


def kge(sim, obs, mask=None) -> KgeReport:
    """Kling-Gupta efficiency of ``sim`` against ``obs``.

    Days where ``mask`` is false or ``obs`` is non-finite are excluded.
    Raises DegenerateDataError when fewer than two days survive or the
    observations are constant.  A constant simulation yields ``r = 0``
    rather than an undefined correlation.
    """
    s, o = _paired(sim, obs, mask)
    n = len(o)
    if n < 2:
        raise DegenerateDataError(f"need at least 2 evaluated days, got {n}")
    mu_o = float(np.mean(o))
    mu_s = float(np.mean(s))
    sd_o = float(np.std(o))
    sd_s = float(np.std(s))
    if sd_o == 0.0 or mu_o == 0.0:
        raise DegenerateDataError("observations are constant or zero-mean")
    alpha = sd_s / sd_o
    beta = mu_s / mu_o
    if sd_s == 0.0:
        r = 0.0
    else:
        r = float(np.mean((s - mu_s) * (o - mu_o))) / (sd_s * sd_o)
    value = 1.0 - math.sqrt((1.0 - alpha) ** 2 + (1.0 - beta) ** 2 + (1.0 - r) ** 2)
    return KgeReport(kge=value, kge_ss=kge_skill_score(value), r=r, alpha=alpha,
                     beta=beta, n=n)


def kge_skill_score(kge_value: float) -> float:
    """Rescale KGE so the mean-flow benchmark scores 0 and a perfect fit 1."""
    return 1.0 - (1.0 - kge_value) / math.sqrt(2.0)


def rmse(sim, obs, mask=None) -> float:
    """Root-mean-square error over the evaluated days."""
    s, o = _paired(sim, obs, mask)
    if len(o) == 0:
        raise DegenerateDataError("no evaluated days")
    return float(np.sqrt(np.mean((s - o) ** 2)))


def exceedance_probabilities(values) -> np.ndarray:
    """Weibull plotting-position exceedance probability of each value.

    The largest value gets rank 1; ties share their average rank; the
    probability is rank / (n + 1), strictly inside (0, 1).
    """
    v = np.asarray(values, dtype=float)
    if v.ndim != 1 or len(v) == 0:
        raise InvalidInputError("values must be a non-empty 1-D array")
    if not np.all(np.isfinite(v)):
        raise InvalidInputError("values must be finite")
    ranks = rankdata(-v, method="average")
    return ranks / (len(v) + 1.0)


@dataclass(frozen=True)
class FlowRegimes:
    """Disjoint low/mid/high masks over the full series (false outside the mask)."""

    low: np.ndarray
    mid: np.ndarray
    high: np.ndarray
    low_p: float
    high_p: float


def flow_regimes(obs, mask=None, low_p: float = 0.7, high_p: float = 0.2) -> FlowRegimes:
    """Classify evaluated days by the exceedance probability of observed flow.

    High flow: exceedance <= ``high_p``; low flow: exceedance >= ``low_p``;
    everything else is mid flow.  Requires ``0 < high_p < low_p < 1``.
    """
    if not (0.0 < high_p < low_p < 1.0):
        raise InvalidInputError(f"need 0 < high_p < low_p < 1, got {high_p}, {low_p}")
    obs = np.asarray(obs, dtype=float)
    keep = np.isfinite(obs)
    if mask is not None:
        keep &= np.asarray(mask, dtype=bool)
    idx = np.flatnonzero(keep)
    if len(idx) == 0:
        raise DegenerateDataError("no evaluated days to classify")
    prob = exceedance_probabilities(obs[idx])
    low = np.zeros(obs.shape, dtype=bool)
    mid = np.zeros(obs.shape, dtype=bool)
    high = np.zeros(obs.shape, dtype=bool)
    high[idx[prob <= high_p]] = True
    low[idx[prob >= low_p]] = True
    mid[idx[(prob > high_p) & (prob < low_p)]] = True
    return FlowRegimes(low=low, mid=mid, high=high, low_p=low_p, high_p=high_p)


def fdc(series, mask=None) -> np.ndarray:
    """Flow-duration curve: (exceedance probability, flow) sorted by probability.

    Returns an (n, 2) array; flows are sorted descending and paired with
    their Weibull plotting positions.
    """
    v = np.asarray(series, dtype=float)
    keep = np.isfinite(v)
    if mask is not None:
        keep &= np.asarray(mask, dtype=bool)
    v = v[keep]
    if len(v) == 0:
        raise DegenerateDataError("no data for a flow-duration curve")
    v = np.sort(v)[::-1]
    n = len(v)
    prob = np.arange(1, n + 1, dtype=float) / (n + 1.0)
    return np.column_stack([prob, v])


def gate_response_curve(
    config: ModelConfig,
    params: PhysicalParams,
    geom: SoilGeometry,
    n_points: int = 101,
) -> np.ndarray:
    """Gate responses over a sweep of relative saturation.

    Returns an (n_points, 3) array of columns ``s``, effective baseflow
    conductivity, and drainage gate value.  Inactive gates are nan.  For
    M1 the baseflow column is the constant ``k_sat``.
    """
    if n_points < 2:
        raise InvalidInputError("n_points must be at least 2")
    s_grid = np.linspace(0.0, 1.0, n_points)
    out = np.full((n_points, 3), np.nan)
    out[:, 0] = s_grid
    for i, s in enumerate(s_grid):
        if config.gated_baseflow:
            _, _, x_h, _ = baseflow_gated(float(s), 1.0, params, geom)
            out[i, 1] = params.k_sat * sigmoid(params.a_o * x_h - params.b_o)
        else:
            out[i, 1] = params.k_sat
        if config.drainage_active:
            out[i, 2] = drainage_gate(float(s), params.a_v, params.b_v)
    return out
