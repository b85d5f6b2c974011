"""Cut natural-photo tiles from the sample images bundled with scikit-image and
scikit-learn and write them as sRGB PNG sources.

By default each tile goes through a simulated camera stage first: decode to
linear light, sample an RGGB Bayer mosaic, bilinear demosaic, re-encode as
16-bit sRGB. The bundled photos are downsampled JPEGs whose demosaicing traces
are long gone; RAW-developed images keep them, and the intra-channel features
depend on them. ``--no-camera`` writes the plain 8-bit tiles instead.

    python scripts/make_corpus.py out/sources --count 120 --size 64
"""
import argparse
import os
from pathlib import Path

import numpy as np
import skimage.data
from PIL import Image
from scipy.ndimage import convolve
from sklearn.datasets import load_sample_images

from csid.colorspace import decode_transfer, default_registry, encode_transfer
from csid.imaging import ImageRGB, save_png

GREEN_KERNEL = np.array([[0, 1, 0], [1, 4, 1], [0, 1, 0]]) / 4.0
RED_BLUE_KERNEL = np.array([[1, 2, 1], [2, 4, 2], [1, 2, 1]]) / 4.0


def photographs():
    yield "astronaut", skimage.data.astronaut()
    yield "chelsea", skimage.data.chelsea()
    yield "coffee", skimage.data.coffee()
    yield "rocket", skimage.data.rocket()
    data_dir = Path(skimage.data.__file__).parent
    for name in ("motorcycle_left", "motorcycle_right", "color"):
        path = data_dir / f"{name}.png"
        if path.exists():
            yield name, np.asarray(Image.open(path).convert("RGB"))
    for fname, arr in zip(load_sample_images().filenames, load_sample_images().images):
        yield Path(fname).stem, arr


def tiles(arr, size, stride):
    h, w, _ = arr.shape
    for r in range(0, h - size + 1, stride):
        for c in range(0, w - size + 1, stride):
            yield r, c, arr[r:r + size, c:c + size]


def usable(tile):
    """Reject flat or heavily clipped tiles; they make degenerate regressions."""
    t = tile.astype(np.float64)
    clipped = np.mean((tile == 0) | (tile == 255))
    return t.std() > 8.0 and clipped < 0.02


def develop(rgb):
    """Bayer-sample (RGGB) and bilinearly demosaic an sRGB image in linear light."""
    srgb = default_registry()["sRGB"]
    lin = decode_transfer(rgb, srgb)
    h, w, _ = lin.shape
    yy, xx = np.mgrid[0:h, 0:w]
    masks = [(yy % 2 == 0) & (xx % 2 == 0), (yy + xx) % 2 == 1, (yy % 2 == 1) & (xx % 2 == 1)]
    planes = [convolve(lin[:, :, k] * masks[k], GREEN_KERNEL if k == 1 else RED_BLUE_KERNEL,
                       mode="mirror") for k in range(3)]
    return encode_transfer(np.clip(np.dstack(planes), 0.0, 1.0), srgb)


def write_tiles(out_dir, count=120, size=64, seed=0, camera=True):
    """Pick ``count`` usable tiles at random and save them; returns (kept, candidates)."""
    candidates = []
    for name, arr in photographs():
        for r, c, tile in tiles(arr, size, size):
            if usable(tile):
                candidates.append((f"{name}_r{r:04d}c{c:04d}", tile))
    if len(candidates) < count:
        raise SystemExit(f"only {len(candidates)} usable tiles, asked for {count}")
    rng = np.random.default_rng(seed)
    keep = sorted(rng.choice(len(candidates), size=count, replace=False))
    os.makedirs(out_dir, exist_ok=True)
    for i in keep:
        name, tile = candidates[i]
        if camera:
            save_png(ImageRGB(develop(tile / 255.0)), Path(out_dir) / f"{name}.png", bitdepth=16)
        else:
            save_png(ImageRGB(tile / 255.0), Path(out_dir) / f"{name}.png", bitdepth=8)
    return len(keep), len(candidates)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("out_dir")
    ap.add_argument("--count", type=int, default=120)
    ap.add_argument("--size", type=int, default=64)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--camera", action=argparse.BooleanOptionalAction, default=True,
                    help="simulate Bayer sampling + demosaicing (default on)")
    args = ap.parse_args(argv)
    kept, total = write_tiles(args.out_dir, args.count, args.size, args.seed, args.camera)
    print(f"wrote {kept} tiles of {args.size}x{args.size} from {total} candidates")


if __name__ == "__main__":
    main()
