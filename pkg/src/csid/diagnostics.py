"""Normality checks on embedding residuals."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
from scipy.special import ndtr
from scipy.stats import kurtosis

from .embedding import ChannelPair, FitConfig, build_design, fit_design, predict_embeddable, e_step
from .errors import InsufficientDataError

MIN_SAMPLES = 8


@dataclass
class KsReport:
    statistic: float
    critical: float
    reject: bool
    excess_kurtosis: float
    n: int
    degenerate: bool = False

    def to_dict(self):
        return asdict(self)


def ks_critical_value(n: int, alpha_level: float = 0.05) -> float:
    """Asymptotic two-sided critical value c(alpha) / sqrt(n); c(0.05) = 1.358."""
    return float(np.sqrt(-0.5 * np.log(alpha_level / 2.0)) / np.sqrt(n))


def ks_statistic(sample, scale: float) -> float:
    """Two-sided K-S distance between the empirical CDF and N(0, scale^2)."""
    x = np.sort(np.asarray(sample, dtype=np.float64))
    n = x.size
    cdf = ndtr(x / scale)
    upper = np.arange(1, n + 1) / n - cdf
    lower = cdf - np.arange(0, n) / n
    return float(max(upper.max(), lower.max()))


def ks_normality_diagnostic(residuals, alpha_level: float = 0.05) -> KsReport:
    """Test residuals against a zero-mean Gaussian whose scale is the sample RMS."""
    r = np.asarray(residuals, dtype=np.float64).ravel()
    n = r.size
    if n < MIN_SAMPLES:
        raise InsufficientDataError(f"need at least {MIN_SAMPLES} residuals, got {n}")
    crit = ks_critical_value(n, alpha_level)
    scale = float(np.sqrt(np.mean(r ** 2)))
    if scale == 0.0 or np.ptp(r) == 0.0:
        # a point mass is never Gaussian
        return KsReport(1.0, crit, True, float("nan"), n, degenerate=True)
    stat = ks_statistic(r, scale)
    return KsReport(stat, crit, bool(stat > crit), float(kurtosis(r, fisher=True)), n)


def ols_residuals(data) -> np.ndarray:
    gamma = np.linalg.lstsq(data.neighbors, data.responses, rcond=None)[0]
    return data.responses - data.neighbors @ gamma


def residual_diagnostics(plane_k1, plane_k2, pair: ChannelPair, J: int, M: int = 2,
                         cfg: Optional[FitConfig] = None, seed: Optional[int] = None,
                         alpha_level: float = 0.05) -> dict:
    """K-S verdicts for one channel pair.

    ``full`` tests every least-squares residual; ``embeddable`` fits the EM
    model and tests the residuals of pixels whose posterior tau0 exceeds 1/2.
    ``gaussian_fraction`` is the share of such pixels.
    """
    cfg = cfg or FitConfig()
    data = build_design(plane_k1, plane_k2, pair, J)
    out = {"pair": [pair.k1, pair.k2], "J": J, "n_pixels": data.n_pixels,
           "full": ks_normality_diagnostic(ols_residuals(data), alpha_level).to_dict()}
    model = fit_design(data, M, cfg, seed=seed)
    tau0 = e_step(data, model).tau0
    subset = tau0 > 0.5
    out["gaussian_fraction"] = float(subset.mean())
    out["mean_tau0"] = float(tau0.mean())
    resid = data.responses - predict_embeddable(data, model.gamma)
    if subset.sum() >= MIN_SAMPLES:
        out["embeddable"] = ks_normality_diagnostic(resid[subset], alpha_level).to_dict()
    else:
        out["embeddable"] = None
    return out
