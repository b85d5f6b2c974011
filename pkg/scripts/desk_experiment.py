"""Desk-scale color-space identification experiment, end to end.

Cuts natural tiles, synthesizes the five-space corpus, extracts embedding
features, runs stratified cross-validation (embedding pipeline and gamut
baseline) and the residual normality diagnostics.

    python scripts/desk_experiment.py runs/desk --sources 120 --J 2 --mode intra
"""
import argparse
import json
import time
from dataclasses import asdict, dataclass
from pathlib import Path

from make_corpus import write_tiles

from csid.cli import main as csid


@dataclass
class Experiment:
    out: str
    sources: int = 120
    tile: int = 64
    J: int = 2
    mode: str = "intra"
    folds: int = 5
    seed: int = 0
    jobs: int = 1
    diagnose_limit: int = 50
    camera: bool = True  # simulated Bayer + demosaic stage on the source tiles
    grouped: bool = True  # keep the five renderings of a source in one fold


def run(exp: Experiment) -> dict:
    out = Path(exp.out)
    src, corpus, reports = out / "sources", out / "corpus", out / "reports"
    timings = {}
    t = time.perf_counter()
    if len(list(src.glob("*.png"))) != exp.sources:
        write_tiles(src, exp.sources, exp.tile, exp.seed, exp.camera)
    common = ["--seed", str(exp.seed), "--jobs", str(exp.jobs)]
    feat = ["--corpus", str(corpus), "-J", str(exp.J), "--mode", exp.mode]
    steps = [
        ("dataset", ["dataset", "--source", str(src), "--out", str(corpus)]),
        ("extract", common + ["extract"] + feat),
        ("evaluate", common + ["evaluate"] + feat + ["--folds", str(exp.folds), "--baseline",
                                                     "--report-dir", str(reports)]
         + ([] if exp.grouped else ["--ungrouped"])),
        ("diagnose", common + ["diagnose", "--corpus", str(corpus), "-J", str(exp.J), "--mode", exp.mode,
                               "--limit", str(exp.diagnose_limit), "--report-dir", str(reports)]),
    ]
    for name, argv in steps:
        code = csid(argv)
        timings[name] = round(time.perf_counter() - t, 1)
        t = time.perf_counter()
        if code:
            raise SystemExit(f"{name} failed with exit code {code}")
    summary = {"experiment": asdict(exp), "seconds": timings,
               "report": json.loads((reports / "report.json").read_text()),
               "diagnostics": json.loads((reports / "diagnostics.json").read_text())["summary"]}
    (out / "summary.json").write_text(json.dumps(summary, indent=1))
    return summary


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("out")
    for f in ("sources", "tile", "J", "folds", "seed", "jobs", "diagnose_limit"):
        ap.add_argument(f"--{f}", type=int, default=getattr(Experiment, f))
    ap.add_argument("--mode", default="intra", choices=("intra", "inter", "concat"))
    ap.add_argument("--camera", action=argparse.BooleanOptionalAction, default=True)
    ap.add_argument("--grouped", action=argparse.BooleanOptionalAction, default=True)
    exp = Experiment(**vars(ap.parse_args(argv)))
    s = run(exp)
    print(json.dumps({"seconds": s["seconds"], "diagnostics": s["diagnostics"]}, indent=1))


if __name__ == "__main__":
    main()
