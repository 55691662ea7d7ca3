"""
Synthetic scenes and inverse warping
====================================

Render one ray-cast scene and warp a source frame into the target view with
the ground-truth depth. Writes PPM/PFM files to ``demo_out/``.
"""

import os

import numpy as np

from daccn.autodiff import Tensor
from daccn.fileio import write_pfm, write_ppm
from daccn.geometry import warp_image
from daccn.synthdata import SceneSpec, generate_scene, photometric_self_check

sample = generate_scene(SceneSpec(seed=7))
depth = sample.gt_depth[0]
print("image:", sample.target.shape, " depth range: %.2f .. %.2f m" % (depth.min(), depth.max()))
print("boxes (min corner, max corner):")
for box in sample.boxes:
    print("  ", np.round(box, 2))

synth, mask = warp_image(Tensor(sample.sources[0][None]), Tensor(sample.gt_depth[None]),
                         sample.poses[0], sample.K)
print("visible fraction: %.3f" % mask.data.mean())
for err, frac in photometric_self_check(sample):
    print("self-check masked L1 %.4f (visible %.2f)" % (err, frac))

os.makedirs("demo_out", exist_ok=True)
write_ppm("demo_out/target.ppm", sample.target)
write_ppm("demo_out/source0.ppm", sample.sources[0])
write_ppm("demo_out/warped0.ppm", synth.data[0])
write_pfm("demo_out/depth.pfm", depth)
print("wrote demo_out/")
