"""Pipeline configuration (JSON-loadable dataclasses)."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, fields
from typing import Optional

from .classifier import ClassifierConfig
from .embedding import FitConfig
from .errors import ConfigError
from .features import MODES


@dataclass
class PipelineConfig:
    J: int = 2
    mode: str = "intra"
    folds: int = 5
    group_by_source: bool = True
    seed: int = 0
    jobs: int = 1
    source_dir: Optional[str] = None
    source_space: str = "sRGB"
    corpus_dir: Optional[str] = None
    features: Optional[str] = None
    bundle: Optional[str] = None
    report_dir: Optional[str] = None
    baseline: bool = False
    baseline_bins: int = 32
    samples_per_image: int = 5000
    diagnose_limit: Optional[int] = None
    space_overrides: dict = field(default_factory=dict)
    fit: FitConfig = field(default_factory=FitConfig)
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.J not in (1, 2, 3):
            raise ConfigError(f"J must be 1, 2 or 3, got {self.J}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.folds < 2:
            raise ConfigError("folds must be at least 2")

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        try:
            if "fit" in d:
                d["fit"] = FitConfig.from_dict(d["fit"])
            if "classifier" in d:
                d["classifier"] = ClassifierConfig.from_dict(d["classifier"])
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_file(cls, path) -> "PipelineConfig":
        try:
            with open(path) as fh:
                return cls.from_dict(json.load(fh))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["fit"] = self.fit.to_dict()
        d["classifier"] = self.classifier.to_dict()
        return d

    def extraction_settings(self) -> dict:
        fit = self.fit.to_dict()
        fit["seed"] = self.seed
        return {"J": self.J, "mode": self.mode, "fit": fit}

    def fingerprint(self) -> str:
        """Hash of every setting that changes the extracted features."""
        blob = json.dumps(self.extraction_settings(), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def fit_config(self) -> FitConfig:
        return FitConfig.from_dict({**self.fit.to_dict(), "seed": self.seed})
