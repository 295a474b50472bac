#!/usr/bin/env python3
"""Segment a synthetic pore network end to end, straight from the library.

Builds a small tomogram-like volume with two dark inclusions, precomputes
slice embeddings with the shipped stub graphs, decodes point prompts into
masks, accepts a few keyframes, completes the segment by interpolation,
and exports the label map. Run it from the repository root:

    python demos/interactive_workflow.py
"""

import tempfile
from pathlib import Path

import numpy as np

from voxelsam import embedding_cache, prompt_engine, slice_interpolation
from voxelsam.labelmap_store import LabelMap, export_labelmap
from voxelsam.model_runtime import StubGraphPair
from voxelsam.volume_io import Volume3D


def build_volume(nx=64, ny=64, nz=40) -> Volume3D:
    """A bright matrix with one sphere and one slanted rod of dark voxels."""
    rng = np.random.default_rng(11)
    data = rng.normal(180, 12, size=(nz, ny, nx))
    zz, yy, xx = np.mgrid[0:nz, 0:ny, 0:nx]
    sphere = (xx - 20) ** 2 + (yy - 24) ** 2 + ((zz - 12) * 1.6) ** 2 <= 9 ** 2
    rod = (xx - (40 + zz * 0.3)) ** 2 + (yy - 40) ** 2 <= 5 ** 2
    data[sphere | rod] -= 110
    return Volume3D.from_array(np.clip(data, 0, 255).astype(np.uint8))


def main() -> None:
    workdir = Path(tempfile.mkdtemp(prefix="voxelsam-demo-"))
    vol = build_volume()
    print(f"volume dims (nx, ny, nz) = {vol.dims}")

    pair = StubGraphPair.create()
    cache = embedding_cache.precompute(
        vol, "z", pair.encoder, workdir / "demo.vsemb")
    print(f"cached {cache.header['entry_count']} slice embeddings "
          f"-> {workdir / 'demo.vsemb'}")

    lm = LabelMap(vol.dims, vol.spacing)
    seg = lm.create_segment("sphere").id
    session = prompt_engine.SegmentationSession(lm)

    # Decode and accept keyframes on three z-slices through the sphere.
    for z in (6, 12, 18):
        session.add_point(seg, "z", "include", (20, 24, z))
        if z == 12:  # steer the middle slice away from the rod
            session.add_point(seg, "z", "exclude", (40, 40, z))
        mask = prompt_engine.decode_prompt(session, seg, "z", z, cache,
                                           pair.decoder)
        prompt_engine.accept_mask(session, seg, mask)
        print(f"slice z={z}: decoded {int(mask.pixels.sum())} px "
              f"(score {mask.score:.2f}) and accepted it as a keyframe")

    written = slice_interpolation.fill_between(lm, seg, "z")
    keyed = lm.keyframes.indices(seg, prompt_engine.Axis.Z)
    print(f"interpolation filled {written} slices; keyframes now {keyed}")

    undone = lm.undo()
    print(f"undo rolled the fill back (generation {undone}); running it again")
    slice_interpolation.fill_between(lm, seg, "z")

    voxels = int((lm.data == seg).sum())
    out = export_labelmap(lm, workdir / "demo-labels.nrrd")
    print(f"segment holds {voxels} voxels; exported to {out} "
          f"(+ {out.with_suffix('').name}.segments.json sidecar)")
    cache.close()


if __name__ == "__main__":
    main()
