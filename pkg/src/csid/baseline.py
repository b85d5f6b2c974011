"""Gamut-estimation baseline: per-space RGB occupancy histograms.

Reimplemented from a one-line description of the original method; the scoring
rule (share of an image's occupied bins that fall inside a reference) is our
own choice.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Optional

import numpy as np

from .colorspace import SPACES
from .errors import CoverageError
from .imaging import ImageRGB, sample_positions

MAGIC = b"GMUT"


@dataclass
class GamutDescriptor:
    bins: int
    occupancy: np.ndarray  # (bins, bins, bins) counts
    source: str = "image"

    @property
    def total(self) -> int:
        return int(self.occupancy.sum())

    def occupied(self) -> np.ndarray:
        return self.occupancy > 0

    def merge(self, other: "GamutDescriptor") -> "GamutDescriptor":
        if other.bins != self.bins:
            raise ValueError("cannot merge descriptors with different bin counts")
        return GamutDescriptor(self.bins, self.occupancy + other.occupancy, self.source)


def estimate_gamut(samples, bins: int = 32, source: str = "image") -> GamutDescriptor:
    """Count RGB triples (rows of ``samples``) on a bins^3 grid over the unit cube."""
    s = np.asarray(samples, dtype=np.float64).reshape(-1, 3)
    if s.shape[0] == 0:
        raise ValueError("no samples to build a gamut from")
    if bins < 2:
        raise ValueError("bins must be at least 2")
    idx = np.clip((s * bins).astype(np.int64), 0, bins - 1)
    flat = np.ravel_multi_index(idx.T, (bins, bins, bins))
    occ = np.bincount(flat, minlength=bins ** 3).reshape(bins, bins, bins)
    return GamutDescriptor(bins, occ, source)


def sample_triples(img: ImageRGB, count: int, seed: int) -> np.ndarray:
    """RGB triples at ``count`` random pixel positions (all pixels if the image is smaller)."""
    flat = img.data.reshape(-1, 3)
    count = min(count, flat.shape[0])
    return flat[sample_positions(flat.shape[0], count, seed)]


def build_reference_gamuts(items: Iterable, bins: int = 32, samples_per_image: int = 5000,
                           seed: int = 0, spaces=SPACES) -> dict:
    """items: (ImageRGB, label) pairs. Returns one aggregated descriptor per space."""
    refs: dict = {}
    for i, (img, label) in enumerate(items):
        desc = estimate_gamut(sample_triples(img, samples_per_image, seed + i), bins, source=label)
        refs[label] = refs[label].merge(desc) if label in refs else desc
    missing = [s for s in spaces if s not in refs]
    if missing:
        raise CoverageError(f"coverage error: no reference images for {missing}")
    return refs


def overlap_score(img_desc: GamutDescriptor, ref: GamutDescriptor) -> float:
    occ = img_desc.occupied()
    n = occ.sum()
    return float((occ & ref.occupied()).sum() / n) if n else 0.0


def classify_by_gamut(img_desc: GamutDescriptor, references: Mapping, order=SPACES) -> str:
    """Space whose reference covers the largest share of the image's occupied bins."""
    order = [s for s in order if s in references] + sorted(set(references) - set(order))
    best, best_score = None, -1.0
    for space in order:
        score = overlap_score(img_desc, references[space])
        if score > best_score:
            best, best_score = space, score
    return best


def _rle(flat: np.ndarray):
    change = np.flatnonzero(np.diff(flat)) + 1
    starts = np.concatenate([[0], change])
    lengths = np.diff(np.concatenate([starts, [flat.size]]))
    return lengths, flat[starts]


def save_gamut(desc: GamutDescriptor, path, metadata: Optional[dict] = None) -> None:
    """Binary payload (magic, bins, run count, (length, value) pairs) plus a JSON sidecar."""
    path = Path(path)
    lengths, values = _rle(desc.occupancy.ravel().astype(np.uint32))
    payload = MAGIC + struct.pack("<HI", desc.bins, lengths.size)
    payload += np.column_stack([lengths, values]).astype("<u4").tobytes()
    path.write_bytes(payload)
    meta = {"bins": desc.bins, "source": desc.source, "total": desc.total, **(metadata or {})}
    path.with_suffix(".json").write_text(json.dumps(meta, indent=1, sort_keys=True))


def load_gamut(path) -> GamutDescriptor:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] != MAGIC:
        raise ValueError(f"{path}: not a gamut descriptor")
    bins, runs = struct.unpack("<HI", raw[4:10])
    pairs = np.frombuffer(raw[10:10 + 8 * runs], dtype="<u4").reshape(runs, 2)
    occ = np.repeat(pairs[:, 1], pairs[:, 0]).astype(np.int64).reshape(bins, bins, bins)
    source = "image"
    meta = path.with_suffix(".json")
    if meta.exists():
        source = json.loads(meta.read_text()).get("source", source)
    return GamutDescriptor(bins, occ, source)


def gamut_cv(images, labels, k: int = 5, bins: int = 32, samples_per_image: int = 5000,
             seed: int = 0, groups=None):
    """Stratified k-fold accuracy of the gamut baseline, as an EvalReport."""
    from .classifier import EvalReport, _class_order, accuracy, confusion_matrix, stratified_folds

    labels = np.asarray(labels)
    classes = _class_order(labels)
    descs = [estimate_gamut(sample_triples(img, samples_per_image, seed + i), bins)
             for i, img in enumerate(images)]
    confusion = np.zeros((len(classes), len(classes)), dtype=np.int64)
    fold_acc = []
    for tr, te in stratified_folds(labels, k, seed, groups):
        refs = {}
        for i in tr:
            refs[labels[i]] = refs[labels[i]].merge(descs[i]) if labels[i] in refs else descs[i]
        pred = [classify_by_gamut(descs[i], refs, classes) for i in te]
        C = confusion_matrix(labels[te], pred, classes)
        fold_acc.append(accuracy(C))
        confusion += C
    return EvalReport(classes, confusion, fold_acc, "Gamut estimation baseline")
