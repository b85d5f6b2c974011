"""Per-image embedding features and generalized (kernel) discriminant analysis."""
from __future__ import annotations

import json
import logging
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.linalg import eigh
from scipy.spatial.distance import cdist, pdist

from .embedding import INTER_PAIRS, INTRA_PAIRS, ChannelPair, FitConfig, select_M_by_aic
from .errors import CsidError, DegenerateClassError, FeatureExtractionError
from .imaging import ImageRGB

log = logging.getLogger(__name__)

MODES = ("intra", "inter", "concat")
GDA_VERSION = 1


def feature_length(mode: str, J: int) -> int:
    side2 = (2 * J + 1) ** 2
    intra, inter = 3 * (side2 - 1), 6 * side2
    return {"intra": intra, "inter": inter, "concat": intra + inter}[mode]


@dataclass
class FeatureVector:
    values: np.ndarray
    image_id: str
    mode: str
    J: int
    label: Optional[str] = None
    seed: int = 0
    flags: list = field(default_factory=list)
    mixture_sizes: list = field(default_factory=list)

    def to_row(self, fingerprint: Optional[str] = None) -> dict:
        row = {"image_id": self.image_id, "mode": self.mode, "J": self.J, "label": self.label,
               "seed": self.seed, "values": [float(v) for v in self.values],
               "flags": self.flags, "M": self.mixture_sizes}
        if fingerprint:
            row["fingerprint"] = fingerprint
        return row

    @classmethod
    def from_row(cls, row: dict) -> "FeatureVector":
        return cls(np.asarray(row["values"], dtype=np.float64), row["image_id"], row["mode"],
                   row["J"], row.get("label"), row.get("seed", 0), row.get("flags", []),
                   row.get("M", []))


def pair_seed(seed: int, image_id: str, pair: ChannelPair) -> int:
    """Stable per-(image, pair) seed; independent of Python's hash randomization."""
    return (seed * 1_000_003 + zlib.crc32(image_id.encode()) * 9 + 3 * pair.k1 + pair.k2) % (2 ** 32)


def _pairs_features(img: ImageRGB, pairs: Sequence[ChannelPair], J: int, cfg: FitConfig,
                    image_id: str):
    parts, flags, sizes = [], [], []
    for pair in pairs:
        try:
            M, model = select_M_by_aic(img.data[:, :, pair.k1], img.data[:, :, pair.k2], pair, J,
                                       cfg=cfg, seed=pair_seed(cfg.seed, image_id, pair))
        except CsidError as exc:
            raise FeatureExtractionError(f"{image_id}: pair ({pair.k1},{pair.k2}) failed: {exc}") from exc
        if model.ridge_used:
            flags.append(f"ridge:{pair.k1}{pair.k2}")
        parts.append(model.gamma)
        sizes.append(M)
    return np.concatenate(parts), flags, sizes


def intra_features(img: ImageRGB, J: int, cfg: Optional[FitConfig] = None,
                   image_id: Optional[str] = None) -> FeatureVector:
    """Embedding coefficients of (C1,C1), (C2,C2), (C3,C3), concatenated."""
    cfg = cfg or FitConfig()
    image_id = image_id or img.name or "image"
    values, flags, sizes = _pairs_features(img, INTRA_PAIRS, J, cfg, image_id)
    return FeatureVector(values, image_id, "intra", J, img.space_tag, cfg.seed, flags, sizes)


def inter_features(img: ImageRGB, J: int, cfg: Optional[FitConfig] = None,
                   image_id: Optional[str] = None) -> FeatureVector:
    """Embedding coefficients of the six ordered pairs k1 != k2 in lexicographic order."""
    cfg = cfg or FitConfig()
    image_id = image_id or img.name or "image"
    values, flags, sizes = _pairs_features(img, INTER_PAIRS, J, cfg, image_id)
    return FeatureVector(values, image_id, "inter", J, img.space_tag, cfg.seed, flags, sizes)


def extract_features(img: ImageRGB, mode: str, J: int, cfg: Optional[FitConfig] = None,
                     image_id: Optional[str] = None) -> FeatureVector:
    if mode == "intra":
        return intra_features(img, J, cfg, image_id)
    if mode == "inter":
        return inter_features(img, J, cfg, image_id)
    if mode == "concat":
        a = intra_features(img, J, cfg, image_id)
        b = inter_features(img, J, cfg, image_id)
        return FeatureVector(np.concatenate([a.values, b.values]), a.image_id, "concat", J,
                             a.label, a.seed, a.flags + b.flags, a.mixture_sizes + b.mixture_sizes)
    raise ValueError(f"unknown feature mode {mode!r}")


# feature store: one JSON object per line

def read_store_rows(path) -> list:
    """(FeatureVector, fingerprint or None) per stored row."""
    path = Path(path)
    if not path.exists():
        return []
    with open(path) as fh:
        rows = [json.loads(line) for line in fh if line.strip()]
    return [(FeatureVector.from_row(r), r.get("fingerprint")) for r in rows]


def read_store(path) -> list[FeatureVector]:
    return [v for v, _ in read_store_rows(path)]


def write_store_rows(path, rows) -> None:
    """Atomically write (FeatureVector, fingerprint) pairs."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w") as fh:
        for v, fp in rows:
            fh.write(json.dumps(v.to_row(fp), sort_keys=True) + "\n")
    tmp.replace(path)


def write_store(path, vectors: Iterable[FeatureVector], fingerprint: Optional[str] = None) -> None:
    write_store_rows(path, ((v, fingerprint) for v in vectors))


@dataclass
class Standardizer:
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, X) -> "Standardizer":
        X = np.asarray(X, dtype=np.float64)
        scale = X.std(axis=0)
        return cls(X.mean(axis=0), np.where(scale > 0, scale, 1.0))

    def transform(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=np.float64) - self.mean) / self.scale

    def to_dict(self):
        return {"mean": self.mean.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["mean"]), np.array(d["scale"]))


def median_bandwidth(X) -> float:
    d = pdist(np.asarray(X, dtype=np.float64))
    d = d[d > 0]
    return float(np.median(d)) if d.size else 1.0


def kernel_matrix(X, Y, kernel: str, bandwidth: float) -> np.ndarray:
    if kernel == "linear":
        return np.asarray(X) @ np.asarray(Y).T
    if kernel == "rbf":
        return np.exp(-cdist(X, Y, "sqeuclidean") / (2.0 * bandwidth ** 2))
    raise ValueError(f"unknown kernel {kernel!r}")


@dataclass
class GdaModel:
    reference_points: np.ndarray  # (n, d)
    kernel: str
    bandwidth: float
    projection: np.ndarray  # (n, out_dim)
    column_means: np.ndarray  # training kernel column means, for centering
    grand_mean: float
    train_projection: np.ndarray  # (n, out_dim)
    eigenvalues: np.ndarray

    @property
    def out_dim(self) -> int:
        return self.projection.shape[1]

    @property
    def in_dim(self) -> int:
        return self.reference_points.shape[1]

    def to_dict(self):
        return {"version": GDA_VERSION, "kernel": self.kernel, "bandwidth": self.bandwidth,
                "reference_points": self.reference_points.tolist(),
                "projection": self.projection.tolist(),
                "column_means": self.column_means.tolist(), "grand_mean": self.grand_mean,
                "train_projection": self.train_projection.tolist(),
                "eigenvalues": self.eigenvalues.tolist()}

    @classmethod
    def from_dict(cls, d):
        if d.get("version") != GDA_VERSION:
            raise ValueError(f"unsupported GDA model version {d.get('version')!r}")
        return cls(np.array(d["reference_points"]), d["kernel"], d["bandwidth"],
                   np.array(d["projection"]), np.array(d["column_means"]), d["grand_mean"],
                   np.array(d["train_projection"]), np.array(d["eigenvalues"]))


def _center(Kx, column_means, grand_mean):
    return Kx - column_means[None, :] - Kx.mean(axis=1, keepdims=True) + grand_mean


def fit_gda(X, labels, out_dim: Optional[int] = None, kernel: str = "rbf",
            bandwidth: Optional[float] = None, reg: float = 1e-8) -> GdaModel:
    """Kernel discriminant directions maximizing between-class over total scatter.

    With centered kernel K and W the block matrix holding 1/n_c within class c,
    solves K W K a = l (K K + eps I) a and keeps the ``out_dim`` leading
    directions; eps = reg * trace(K K) / n.
    """
    X = np.asarray(X, dtype=np.float64)
    labels = np.asarray(labels)
    classes, counts = np.unique(labels, return_counts=True)
    if classes.size < 2:
        raise DegenerateClassError("degenerate-class: GDA needs at least two classes")
    if counts.min() < 2:
        raise DegenerateClassError(f"degenerate-class: class {str(classes[counts.argmin()])!r} has "
                                   f"{counts.min()} sample(s)")
    out_dim = classes.size - 1 if out_dim is None else out_dim
    if not 1 <= out_dim <= classes.size - 1:
        raise ValueError(f"out_dim must be in [1, {classes.size - 1}], got {out_dim}")
    if kernel == "rbf" and bandwidth is None:
        bandwidth = median_bandwidth(X)
    n = X.shape[0]
    K = kernel_matrix(X, X, kernel, bandwidth or 1.0)
    col_means = K.mean(axis=0)
    grand = float(K.mean())
    Kc = _center(K, col_means, grand)
    Kc = 0.5 * (Kc + Kc.T)

    W = np.zeros((n, n))
    for c, cnt in zip(classes, counts):
        idx = np.flatnonzero(labels == c)
        W[np.ix_(idx, idx)] = 1.0 / cnt
    between = Kc @ W @ Kc
    total = Kc @ Kc
    eps = reg * np.trace(total) / n
    vals, vecs = eigh(0.5 * (between + between.T), total + eps * np.eye(n))
    order = np.argsort(vals)[::-1][:out_dim]
    alpha = vecs[:, order] * np.sqrt(n)
    # deterministic sign: largest-magnitude coefficient positive
    signs = np.sign(alpha[np.abs(alpha).argmax(axis=0), np.arange(out_dim)])
    alpha = alpha * np.where(signs == 0, 1.0, signs)
    return GdaModel(X.copy(), kernel, float(bandwidth or 1.0), alpha, col_means, grand,
                    Kc @ alpha, vals[order])


def project_gda(model: GdaModel, X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != model.in_dim:
        raise ValueError(f"feature length {X.shape[1]} does not match GDA input {model.in_dim}")
    Kx = kernel_matrix(X, model.reference_points, model.kernel, model.bandwidth)
    return _center(Kx, model.column_means, model.grand_mean) @ model.projection
