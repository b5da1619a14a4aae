"""Regenerate the golden files under tests/golden/.

    python3 tools/make_golden.py

The files are checked in; the round-trip tests only read them and compare
re-serialized bytes, so regenerating is only needed after a format change.
"""

from pathlib import Path

import numpy as np

from deepsurfels import FitConfig, FusionConfig, build, fuse_frame, save_model
from deepsurfels.formats import write_pfm, write_ppm
from deepsurfels.scenegen import make_scene, orbit_cameras, render_gt
from deepsurfels.sdf import bake_grid, save_grid

OUT = Path(__file__).resolve().parents[1] / "tests" / "golden"


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    scene = make_scene("checker-sphere")
    cams = orbit_cameras(3, 2.2, width=24, height=20)
    frames = [render_gt(scene, c) for c in cams]

    model = build(scene.field, FitConfig.for_bounds(*scene.bounds, 4, patch_res=2))
    for cam, frame in zip(cams, frames):
        fuse_frame(model, cam, frame, FusionConfig(k=2))
    model.flagged[0, 0] = True  # exercise the flagged-texel encoding
    model.weights[0, 0] = 0.0
    model.features[0, 0] = 0.0
    save_model(model, OUT / "model.dsf")

    save_grid(bake_grid(scene.field, (9, 7, 5), (-1.0, -0.75, -0.5), 0.25), OUT / "sphere.sdfg")
    write_pfm(OUT / "depth.pfm", frames[0].depth)
    write_pfm(OUT / "color.pfm", frames[1].rgb)
    write_ppm(OUT / "view.ppm", frames[2].rgb)
    for p in sorted(OUT.iterdir()):
        print(f"{p.name:12s} {p.stat().st_size:7d} bytes")


if __name__ == "__main__":
    main()
