"""
Building a training pair
========================

Synthesizes one linear-light HDR scene and derives the LR-SDR input and
the HR-HDR target, then dumps both as 16-bit PPM images.
"""

import sys
import tempfile
from pathlib import Path

import numpy as np

from gpgmnet import data_io as D
from gpgmnet import metrics as mt

out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="gpgm_pair_"))
out.mkdir(parents=True, exist_ok=True)

# linear BT.2020 scene, 1.0 = 10000 nits
scene = D.synth_scene(seed=3, w=160, h=160)
lum = scene.pixels[0].mean(axis=0) * 10000
print(f"scene luminance: median {np.median(lum):.0f} nits, max {lum.max():.0f} nits, "
      f"{100 * np.mean(lum > 100):.1f}% above SDR white")

# LR side: tone map, 709 gamma, bicubic /4, 8-bit; HR side: PQ, 10-bit
lr, hr = D.degrade(scene, scale=4)
print(f"LR {lr.width}x{lr.height} {lr.bit_depth}-bit {lr.gamut.value} {lr.transfer.value}")
print(f"HR {hr.width}x{hr.height} {hr.bit_depth}-bit {hr.gamut.value} {hr.transfer.value}")

D.write_yuv(lr, out / "lr.yuv")
D.write_yuv(hr, out / "hr.yuv")
D.write_ppm16(D.frame_to_display_rgb(lr), out / "lr.ppm")
D.write_ppm16(D.frame_to_display_rgb(hr), out / "hr.ppm")

# how far is plain bicubic from the target? this is what the network must close
from gpgmnet.image_ops import bicubic_resize
bic = np.clip(bicubic_resize(lr.pixels, 4), 0, 1)
print(f"bicubic vs HR target: PSNR {mt.psnr(bic, hr.pixels):.2f} dB "
      "(large gap: different transfer function and gamut, not only resolution)")

# an aligned patch pair as fed to training
lr_b, hr_b = D.sample_patches((lr, hr), patch_lr=20, count=2, rng=np.random.default_rng(0))
print("patch batch shapes:", lr_b.shape, hr_b.shape)
print("files written to", out)
