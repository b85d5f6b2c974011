"""RGB-family color space definitions and conversion between them.

Conversions go linear RGB -> XYZ -> (Bradford adaptation) -> XYZ -> linear RGB,
collapsed into one 3x3 matrix per (source, target) pair.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path
from typing import Mapping, Optional

import numpy as np

from .errors import DatasetError, DataError, LabelingError, RegistryError, SingularGeometryError
from .imaging import ImageRGB, load_image, save_png, SIDECAR_NAME

log = logging.getLogger(__name__)

# alphabetical, which is also the row order of the reported tables
SPACES = ("AdobeRGB", "AppleRGB", "ColorMatchRGB", "ProPhotoRGB", "sRGB")

D65 = (0.3127, 0.3290)
D50 = (0.3457, 0.3585)

BRADFORD = np.array([
    [0.8951, 0.2664, -0.1614],
    [-0.7502, 1.7135, 0.0367],
    [0.0389, -0.0685, 1.0296],
])


@dataclass(frozen=True)
class Transfer:
    """Encoded value v -> linear light u.

    Pure power when ``threshold`` is 0; otherwise linear (u = v / slope) for
    v <= threshold and ((v + offset) / (1 + offset)) ** exponent above it.
    """
    exponent: float
    threshold: float = 0.0
    slope: float = 1.0
    offset: float = 0.0

    def decode(self, v):
        v = np.asarray(v, dtype=np.float64)
        power = np.power((np.maximum(v, 0.0) + self.offset) / (1.0 + self.offset), self.exponent)
        if self.threshold <= 0.0:
            return power
        return np.where(v <= self.threshold, v / self.slope, power)

    def encode(self, u):
        u = np.clip(np.asarray(u, dtype=np.float64), 0.0, 1.0)
        power = (1.0 + self.offset) * np.power(u, 1.0 / self.exponent) - self.offset
        if self.threshold <= 0.0:
            return power
        return np.where(u <= self.threshold / self.slope, u * self.slope, power)

    def to_dict(self):
        return {"exponent": self.exponent, "threshold": self.threshold,
                "slope": self.slope, "offset": self.offset}


SRGB_TRANSFER = Transfer(exponent=2.4, threshold=0.04045, slope=12.92, offset=0.055)
PROPHOTO_TRANSFER = Transfer(exponent=1.8, threshold=16.0 / 512.0, slope=16.0)


def xy_to_XYZ(xy) -> np.ndarray:
    x, y = xy
    if y <= 0:
        raise SingularGeometryError(f"chromaticity y must be positive, got {y}")
    return np.array([x / y, 1.0, (1.0 - x - y) / y])


@dataclass(frozen=True)
class ColorSpaceDef:
    id: str
    primaries: tuple  # ((xr, yr), (xg, yg), (xb, yb))
    white_point: tuple
    transfer: Transfer
    rgb_to_xyz: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "rgb_to_xyz", derive_rgb_to_xyz(self))

    @property
    def white_XYZ(self) -> np.ndarray:
        return xy_to_XYZ(self.white_point)

    def to_dict(self):
        return {"primaries": [list(p) for p in self.primaries],
                "white": list(self.white_point), "transfer": self.transfer.to_dict()}


def derive_rgb_to_xyz(cs: ColorSpaceDef) -> np.ndarray:
    """Primary XYZ columns scaled so that RGB (1, 1, 1) lands on the white point."""
    P = np.column_stack([xy_to_XYZ(p) for p in cs.primaries])
    if abs(np.linalg.det(P)) < 1e-12:
        raise SingularGeometryError(f"{cs.id}: primaries are collinear")
    scale = np.linalg.solve(P, xy_to_XYZ(cs.white_point))
    M = P * scale
    if abs(np.linalg.det(M)) < 1e-12:
        raise SingularGeometryError(f"{cs.id}: white point lies on the gamut boundary")
    return M


def decode_transfer(v, cs: ColorSpaceDef):
    return cs.transfer.decode(v)


def encode_transfer(u, cs: ColorSpaceDef):
    return cs.transfer.encode(u)


def _default_defs() -> dict:
    gamma18 = Transfer(exponent=1.8)
    return {
        "AdobeRGB": ColorSpaceDef("AdobeRGB", ((0.64, 0.33), (0.21, 0.71), (0.15, 0.06)), D65,
                                  Transfer(exponent=563.0 / 256.0)),
        "AppleRGB": ColorSpaceDef("AppleRGB", ((0.625, 0.34), (0.28, 0.595), (0.155, 0.07)), D65,
                                  gamma18),
        "ColorMatchRGB": ColorSpaceDef("ColorMatchRGB", ((0.63, 0.34), (0.295, 0.605), (0.15, 0.075)),
                                       D50, gamma18),
        "ProPhotoRGB": ColorSpaceDef("ProPhotoRGB", ((0.7347, 0.2653), (0.1596, 0.8404), (0.0366, 0.0001)),
                                     D50, PROPHOTO_TRANSFER),
        "sRGB": ColorSpaceDef("sRGB", ((0.64, 0.33), (0.30, 0.60), (0.15, 0.06)), D65, SRGB_TRANSFER),
    }


class Registry(Mapping):
    """Immutable id -> ColorSpaceDef table, optionally with per-space overrides."""

    def __init__(self, overrides: Optional[dict] = None):
        defs = _default_defs()
        for sid, ov in (overrides or {}).items():
            if sid not in defs:
                raise RegistryError(f"unknown color space {sid!r}")
            base = defs[sid]
            kw = {}
            if "primaries" in ov:
                kw["primaries"] = tuple(tuple(p) for p in ov["primaries"])
            if "white" in ov:
                kw["white_point"] = tuple(ov["white"])
            if "transfer" in ov:
                kw["transfer"] = Transfer(**ov["transfer"])
            defs[sid] = replace(base, **kw)
        self._defs = defs

    @classmethod
    def from_file(cls, path) -> "Registry":
        with open(path) as fh:
            return cls(json.load(fh))

    def __getitem__(self, sid):
        try:
            return self._defs[sid]
        except KeyError:
            raise RegistryError(f"unknown color space {sid!r}") from None

    def __iter__(self):
        return iter(SPACES)

    def __len__(self):
        return len(self._defs)


@lru_cache(maxsize=1)
def default_registry() -> Registry:
    return Registry()


def bradford_adaptation(white_src, white_dst) -> np.ndarray:
    src = BRADFORD @ xy_to_XYZ(white_src)
    dst = BRADFORD @ xy_to_XYZ(white_dst)
    return np.linalg.solve(BRADFORD, np.diag(dst / src) @ BRADFORD)


@dataclass(frozen=True)
class ConversionPlan:
    source: str
    target: str
    adapted_matrix: np.ndarray = field(repr=False)


def plan_conversion(src: str, dst: str, registry: Optional[Registry] = None) -> ConversionPlan:
    reg = registry or default_registry()
    s, d = reg[src], reg[dst]
    if src == dst:
        return ConversionPlan(src, dst, np.eye(3))
    if np.allclose(s.white_point, d.white_point, rtol=0, atol=1e-12):
        adapt = np.eye(3)
    else:
        adapt = bradford_adaptation(s.white_point, d.white_point)
    return ConversionPlan(src, dst, np.linalg.solve(d.rgb_to_xyz, adapt @ s.rgb_to_xyz))


def convert_pixels(rgb: np.ndarray, plan: ConversionPlan, registry: Optional[Registry] = None,
                   clip: bool = True) -> np.ndarray:
    """Convert an (..., 3) array of encoded values; ``clip=False`` keeps out-of-gamut linear values."""
    reg = registry or default_registry()
    if plan.source == plan.target:
        return np.array(rgb, dtype=np.float64)
    lin = decode_transfer(rgb, reg[plan.source])
    out = lin @ plan.adapted_matrix.T
    if not clip:
        return out
    return encode_transfer(np.clip(out, 0.0, 1.0), reg[plan.target])


def convert_image(img: ImageRGB, plan: ConversionPlan, registry: Optional[Registry] = None) -> ImageRGB:
    if img.space_tag is not None and img.space_tag != plan.source:
        raise LabelingError(f"image tagged {img.space_tag!r} but plan converts from {plan.source!r}")
    if plan.source == plan.target:
        return ImageRGB(img.data.copy(), space_tag=plan.target, name=img.name)
    out = convert_pixels(img.data, plan, registry)
    return ImageRGB(np.clip(out, 0.0, 1.0), space_tag=plan.target, name=img.name)


IMAGE_SUFFIXES = (".png", ".ppm")
MANIFEST_NAME = "manifest.jsonl"


def list_images(directory) -> list[Path]:
    return sorted(p for p in Path(directory).iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def read_manifest(path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def build_dataset(src_dir, out_dir, source_space: str, registry: Optional[Registry] = None,
                  spaces=SPACES) -> Path:
    """Write every source image in all target spaces as 16-bit PNG.

    Returns the path of the JSON-lines manifest; a ``labels.json`` sidecar with
    the same labels is written next to the images.
    """
    reg = registry or default_registry()
    reg[source_space]
    sources = list_images(src_dir)
    if not sources:
        raise DatasetError(f"dataset error: no PNG/PPM images in {src_dir}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    plans = {t: plan_conversion(source_space, t, reg) for t in spaces}
    rows = []
    for src in sources:
        try:
            img = load_image(src).with_tag(source_space)
        except DataError as exc:
            raise DatasetError(f"dataset error: {exc}") from exc
        for target in spaces:
            name = f"{src.stem}__{target}.png"
            save_png(convert_image(img, plans[target], reg), out_dir / name, bitdepth=16)
            rows.append({"file": name, "space": target, "source": src.name, "bitdepth": 16})
        log.info("converted %s into %d spaces", src.name, len(spaces))
    manifest = out_dir / MANIFEST_NAME
    _atomic_write(manifest, "".join(json.dumps(r, sort_keys=True) + "\n" for r in rows))
    _atomic_write(out_dir / SIDECAR_NAME, json.dumps({r["file"]: r["space"] for r in rows},
                                                     indent=1, sort_keys=True))
    return manifest


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    tmp.replace(path)
