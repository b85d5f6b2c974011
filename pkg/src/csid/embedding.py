"""Two-level EM fit of the pixel-embedding model.

A response pixel I_k1(m, n) is either *embeddable*, i.e. Gaussian around a
linear combination of its (2J+1)^2 neighbours in channel k2, or drawn from an
M-component Gaussian mixture with a shared standard deviation. The outer EM
estimates the embeddable/non-embeddable split and the embedding coefficients
gamma; the inner EM estimates the mixture.

All densities are evaluated in log space.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from sklearn.cluster import KMeans
from sklearn.exceptions import ConvergenceWarning

from .errors import FitFailure, GeometryError, SingularSystemError
from .imaging import neighborhood_offsets

log = logging.getLogger(__name__)

MODEL_VERSION = 1
_LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class ChannelPair:
    k1: int
    k2: int

    def __post_init__(self):
        if self.k1 not in (0, 1, 2) or self.k2 not in (0, 1, 2):
            raise ValueError(f"channel indices must be in 0..2, got {self.k1}, {self.k2}")

    @property
    def intra(self) -> bool:
        return self.k1 == self.k2


INTRA_PAIRS = tuple(ChannelPair(k, k) for k in range(3))
INTER_PAIRS = tuple(ChannelPair(a, b) for a in range(3) for b in range(3) if a != b)


@dataclass
class FitConfig:
    tol: float = 1e-6
    max_iter: int = 200
    restarts: int = 3
    seed: int = 0
    sigma_floor: float = 1e-6
    lambda_floor: float = 1e-6
    M_candidates: tuple = (2, 4, 6, 8)
    kmeans_iter: int = 20
    # "mixture" (Gaussian mixture) or "uniform" (density 1 on [0, 1]) for non-embeddable pixels
    nonembeddable: str = "mixture"

    @classmethod
    def from_dict(cls, d: dict) -> "FitConfig":
        d = dict(d)
        if "M_candidates" in d:
            d["M_candidates"] = tuple(int(m) for m in d["M_candidates"])
        return cls(**d)

    def to_dict(self) -> dict:
        return {"tol": self.tol, "max_iter": self.max_iter, "restarts": self.restarts,
                "seed": self.seed, "sigma_floor": self.sigma_floor,
                "lambda_floor": self.lambda_floor, "M_candidates": list(self.M_candidates),
                "kmeans_iter": self.kmeans_iter, "nonembeddable": self.nonembeddable}


@dataclass
class RegressionData:
    responses: np.ndarray  # (N,)
    neighbors: np.ndarray  # (N, P), columns in row-major neighbourhood order
    pixel_index: np.ndarray  # (N, 2) of (m, n)
    J: int
    pair: ChannelPair

    @property
    def n_pixels(self) -> int:
        return self.responses.shape[0]

    @property
    def n_coeffs(self) -> int:
        return self.neighbors.shape[1]


@dataclass
class EmbeddableParams:
    gamma: np.ndarray
    sigma: float


@dataclass
class MixtureParams:
    alphas: np.ndarray
    mus: np.ndarray
    lam: float

    @property
    def M(self) -> int:
        return len(self.alphas)


@dataclass
class EmbeddingModel:
    pair: ChannelPair
    J: int
    pi: np.ndarray  # (pi0, pi1)
    embeddable: EmbeddableParams
    mixture: MixtureParams
    final_loglik: float = float("nan")
    iterations: int = 0
    loglik_trace: list = field(default_factory=list)
    ridge_used: bool = False
    nonembeddable: str = "mixture"

    @property
    def gamma(self) -> np.ndarray:
        return self.embeddable.gamma

    @property
    def M(self) -> int:
        return self.mixture.M

    def n_params(self) -> int:
        """Free parameters: gamma, sigma, pi, M-1 weights, M means, shared lambda."""
        p = len(self.gamma) + 2
        if self.nonembeddable == "mixture":
            p += (self.M - 1) + self.M + 1
        return p

    def to_dict(self) -> dict:
        return {
            "version": MODEL_VERSION,
            "pair": [self.pair.k1, self.pair.k2],
            "J": self.J,
            "pi": self.pi.tolist(),
            "gamma": self.embeddable.gamma.tolist(),
            "sigma": self.embeddable.sigma,
            "alphas": self.mixture.alphas.tolist(),
            "mus": self.mixture.mus.tolist(),
            "lambda": self.mixture.lam,
            "final_loglik": self.final_loglik,
            "iterations": self.iterations,
            "loglik_trace": list(self.loglik_trace),
            "ridge_used": self.ridge_used,
            "nonembeddable": self.nonembeddable,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EmbeddingModel":
        if d.get("version") != MODEL_VERSION:
            raise ValueError(f"unsupported embedding model version {d.get('version')!r}")
        return cls(
            pair=ChannelPair(*d["pair"]), J=d["J"], pi=np.array(d["pi"]),
            embeddable=EmbeddableParams(np.array(d["gamma"]), d["sigma"]),
            mixture=MixtureParams(np.array(d["alphas"]), np.array(d["mus"]), d["lambda"]),
            final_loglik=d["final_loglik"], iterations=d["iterations"],
            loglik_trace=list(d.get("loglik_trace", [])), ridge_used=d.get("ridge_used", False),
            nonembeddable=d.get("nonembeddable", "mixture"),
        )


@dataclass
class Responsibilities:
    tau0: np.ndarray  # (N,)
    iota: np.ndarray  # (N, M)

    @property
    def tau1(self) -> np.ndarray:
        return 1.0 - self.tau0


def build_design(plane_k1, plane_k2, pair: ChannelPair, J: int) -> RegressionData:
    """Regression rows for every interior pixel (border pixels are skipped)."""
    a = np.asarray(plane_k1, dtype=np.float64)
    b = np.asarray(plane_k2, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2:
        raise GeometryError(f"planes must be 2-D with equal shapes, got {a.shape} and {b.shape}")
    h, w = a.shape
    if h <= 2 * J or w <= 2 * J:
        raise GeometryError(f"plane {h}x{w} has no interior pixels for J={J}")
    side = 2 * J + 1
    windows = sliding_window_view(b, (side, side)).reshape(-1, side * side)
    if pair.intra:
        windows = np.delete(windows, side * side // 2, axis=1)
    mm, nn = np.meshgrid(np.arange(J, h - J), np.arange(J, w - J), indexing="ij")
    return RegressionData(
        responses=a[J:h - J, J:w - J].ravel().copy(),
        neighbors=np.ascontiguousarray(windows),
        pixel_index=np.column_stack([mm.ravel(), nn.ravel()]),
        J=J, pair=pair,
    )


def design_offsets(pair: ChannelPair, J: int):
    return neighborhood_offsets(J, include_center=not pair.intra)


def predict_embeddable(data: RegressionData, gamma) -> np.ndarray:
    gamma = np.asarray(gamma, dtype=np.float64)
    if gamma.shape != (data.n_coeffs,):
        raise ValueError(f"gamma has length {gamma.size}, design has {data.n_coeffs} columns")
    return data.neighbors @ gamma


def _logsumexp_rows(a: np.ndarray) -> np.ndarray:
    top = a.max(axis=1)
    safe = np.where(np.isfinite(top), top, 0.0)
    with np.errstate(divide="ignore"):
        return np.log(np.exp(a - safe[:, None]).sum(axis=1)) + safe


def _log_terms(data: RegressionData, model: EmbeddingModel):
    """Per-pixel log[pi0 p0] and per-component log[pi1 alpha_c N(y | mu_c, lambda^2)]."""
    y = data.responses
    sigma = model.embeddable.sigma
    resid = y - predict_embeddable(data, model.embeddable.gamma)
    with np.errstate(divide="ignore"):
        log_pi = np.log(model.pi)
        log_emb = log_pi[0] - 0.5 * _LOG_2PI - np.log(sigma) - 0.5 * (resid / sigma) ** 2
        if model.nonembeddable == "uniform":
            log_comp = np.full((y.size, 1), log_pi[1])
        else:
            mix = model.mixture
            z = (y[:, None] - mix.mus[None, :]) / mix.lam
            log_comp = (log_pi[1] + np.log(mix.alphas)[None, :]
                        - 0.5 * _LOG_2PI - np.log(mix.lam) - 0.5 * z ** 2)
    return log_emb, log_comp


def _posteriors(data: RegressionData, model: EmbeddingModel):
    log_emb, log_comp = _log_terms(data, model)
    log_non = _logsumexp_rows(log_comp)
    log_total = np.logaddexp(log_emb, log_non)
    tau0 = np.exp(log_emb - log_total)
    with np.errstate(invalid="ignore"):
        iota = np.exp(log_comp - log_non[:, None])
    # pi1 = 0 leaves iota undefined; fall back to the mixture prior
    bad = ~np.isfinite(log_non)
    if bad.any():
        iota[bad] = model.mixture.alphas if model.nonembeddable == "mixture" else 1.0
    return Responsibilities(tau0, iota), float(log_total.sum())


def e_step(data: RegressionData, model: EmbeddingModel) -> Responsibilities:
    return _posteriors(data, model)[0]


def observed_loglik(data: RegressionData, model: EmbeddingModel) -> float:
    return _posteriors(data, model)[1]


def accumulate_normal_equations(data: RegressionData, tau0):
    """Weighted normal equations A = sum tau0 x x^T, Y = sum tau0 y x."""
    tau0 = np.asarray(tau0, dtype=np.float64)
    X = data.neighbors
    Xw = X * tau0[:, None]
    A = Xw.T @ X
    A = 0.5 * (A + A.T)
    return A, Xw.T @ data.responses


def _solve_gamma(A, Y):
    A = np.asarray(A, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if not np.any(A):
        raise SingularSystemError("normal-equation matrix is identically zero")
    if np.linalg.cond(A) < 1e12:
        try:
            return np.linalg.solve(A, Y), False
        except np.linalg.LinAlgError:
            pass
    eps = 1e-8 * np.trace(A) / A.shape[0]
    return np.linalg.solve(A + eps * np.eye(A.shape[0]), Y), True


def solve_gamma(A, Y) -> np.ndarray:
    """Solve A gamma = Y, adding a small ridge when A is numerically singular."""
    return _solve_gamma(A, Y)[0]


def m_step(data: RegressionData, resp: Responsibilities, prev: EmbeddingModel,
           cfg: Optional[FitConfig] = None, rng: Optional[np.random.Generator] = None) -> EmbeddingModel:
    cfg = cfg or FitConfig()
    y = data.responses
    N = data.n_pixels
    tau0 = resp.tau0
    tau1 = resp.tau1
    s0, s1 = tau0.sum(), tau1.sum()
    pi = np.array([s0 / N, s1 / N])

    A, Y = accumulate_normal_equations(data, tau0)
    gamma, ridge = _solve_gamma(A, Y)
    resid = y - data.neighbors @ gamma
    sigma = np.sqrt(np.dot(tau0, resid ** 2) / s0) if s0 > 0 else prev.embeddable.sigma
    sigma = max(sigma, cfg.sigma_floor)

    mixture = prev.mixture
    if prev.nonembeddable == "mixture" and s1 > 0:
        w = tau1[:, None] * resp.iota
        wc = w.sum(axis=0)
        alphas = wc / s1
        mus = prev.mixture.mus.copy()
        live = wc >= 1e-12
        mus[live] = (w[:, live] * y[:, None]).sum(axis=0) / wc[live]
        if not live.all():
            rng = rng or np.random.default_rng(cfg.seed)
            for c in np.flatnonzero(~live):
                mus[c] = y[rng.integers(y.size)]
                log.info("reseeded empty mixture component %d at %.4g", c, mus[c])
        lam2 = np.sum(w * (y[:, None] - mus[None, :]) ** 2) / s1
        lam = max(np.sqrt(lam2), cfg.lambda_floor)
        mixture = MixtureParams(alphas / alphas.sum(), mus, lam)

    return replace(prev, pi=pi, embeddable=EmbeddableParams(gamma, sigma), mixture=mixture,
                   ridge_used=prev.ridge_used or ridge)


def kmeans_mixture_init(y: np.ndarray, M: int, seed: int, cfg: FitConfig) -> MixtureParams:
    """k-means++ seeded Lloyd iterations on the responses."""
    if M == 1:
        return MixtureParams(np.ones(1), np.array([y.mean()]), max(y.std(), cfg.lambda_floor))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        km = KMeans(n_clusters=M, init="k-means++", n_init=1, max_iter=cfg.kmeans_iter,
                    random_state=seed).fit(y[:, None])
    labels = km.labels_
    mus = km.cluster_centers_[:, 0].copy()
    counts = np.bincount(labels, minlength=M).astype(np.float64)
    alphas = np.maximum(counts, 1e-3) / np.maximum(counts, 1e-3).sum()
    pooled = np.sqrt(np.sum((y - mus[labels]) ** 2) / y.size)
    return MixtureParams(alphas, mus, max(pooled, cfg.lambda_floor))


def init_model(data: RegressionData, M: int, cfg: FitConfig, rng: np.random.Generator) -> EmbeddingModel:
    """Random start for one restart.

    gamma is the least-squares solution perturbed by N(0, 1) / P noise and sigma
    is 1.4826 times the median absolute residual (a robust scale about zero,
    which stays positive when the residuals are constant). A purely random gamma with
    sigma = std(responses) lets the mixture swallow the embeddable pixels in
    the first E-step, and EM rarely escapes that basin.
    """
    P = data.n_coeffs
    y = data.responses
    ols = np.linalg.lstsq(data.neighbors, y, rcond=None)[0]
    gamma = ols + rng.standard_normal(P) / P
    resid = y - data.neighbors @ gamma
    sigma = 1.4826 * float(np.median(np.abs(resid)))
    sigma = max(sigma, cfg.sigma_floor)
    mixture = kmeans_mixture_init(y, M, int(rng.integers(2 ** 31 - 1)), cfg)
    return EmbeddingModel(pair=data.pair, J=data.J, pi=np.array([0.5, 0.5]),
                          embeddable=EmbeddableParams(gamma, sigma), mixture=mixture,
                          nonembeddable=cfg.nonembeddable)


def run_em(data: RegressionData, model: EmbeddingModel, cfg: FitConfig,
           rng: np.random.Generator) -> EmbeddingModel:
    resp, ll = _posteriors(data, model)
    trace = [ll]
    it = 0
    while it < cfg.max_iter:
        model = m_step(data, resp, model, cfg, rng)
        it += 1
        resp, ll_new = _posteriors(data, model)
        trace.append(ll_new)
        converged = abs(ll_new - ll) <= cfg.tol * abs(ll_new)
        ll = ll_new
        if converged:
            break
    return replace(model, final_loglik=ll, iterations=it, loglik_trace=trace)


def fit_design(data: RegressionData, M: int, cfg: Optional[FitConfig] = None,
               seed: Optional[int] = None) -> EmbeddingModel:
    cfg = cfg or FitConfig()
    if M < 1:
        raise ValueError("M must be at least 1")
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    best, failures = None, []
    for restart in range(max(cfg.restarts, 1)):
        init = init_model(data, M, cfg, rng)
        try:
            model = run_em(data, init, cfg, rng)
        except SingularSystemError as exc:
            failures.append(f"restart {restart}: {exc}")
            continue
        if best is None or model.final_loglik > best.final_loglik:
            best = model
    if best is None:
        raise FitFailure(f"all {cfg.restarts} restarts failed for pair {data.pair}",
                         {"failures": failures, "n_pixels": data.n_pixels, "M": M})
    return best


def fit_embedding(plane_k1, plane_k2, pair: ChannelPair, J: int, M: int,
                  cfg: Optional[FitConfig] = None, seed: Optional[int] = None) -> EmbeddingModel:
    """Random gamma/sigma start, k-means mixture start, EM to convergence, best of restarts."""
    return fit_design(build_design(plane_k1, plane_k2, pair, J), M, cfg, seed)


def aic(model: EmbeddingModel) -> float:
    return 2.0 * model.n_params() - 2.0 * model.final_loglik


def select_by_aic(models: Sequence[EmbeddingModel]) -> EmbeddingModel:
    """Lowest AIC; ties go to the smaller M."""
    best = None
    for m in sorted(models, key=lambda m: m.M):
        if best is None or aic(m) < aic(best):
            best = m
    return best


def select_M_by_aic(plane_k1, plane_k2, pair: ChannelPair, J: int,
                    candidates: Optional[Sequence[int]] = None, cfg: Optional[FitConfig] = None,
                    seed: Optional[int] = None):
    cfg = cfg or FitConfig()
    candidates = sorted(candidates or cfg.M_candidates)
    if not candidates:
        raise ValueError("no candidate mixture sizes")
    data = build_design(plane_k1, plane_k2, pair, J)
    base = cfg.seed if seed is None else seed
    fitted, errors = [], []
    for M in candidates:
        try:
            fitted.append(fit_design(data, M, cfg, seed=base + 7919 * M))
        except FitFailure as exc:
            errors.append(exc)
    if not fitted:
        raise FitFailure(f"every candidate M failed for pair {pair}",
                         {"candidates": candidates, "errors": [str(e) for e in errors]})
    best = select_by_aic(fitted)
    return best.M, best
