"""
Training at desk scale
======================

Trains a narrow scale-2 network for a few hundred iterations on synthetic
pairs and compares held-out PSNR with plain bicubic upscaling.  Pass an
iteration count as the first argument for a longer run.
"""

import sys

from gpgmnet import data_io as D
from gpgmnet import training as T
from gpgmnet.model import ModelConfig, param_count

iterations = int(sys.argv[1]) if len(sys.argv) > 1 else 300

pairs = [D.degrade(D.synth_scene(D.scene_seed(1, i), 96, 96), 2) for i in range(6)]
# three color blocks instead of five: on 48-pixel frames five halvings would leave
# the color branch normalizing 1x1 and 2x2 maps, which makes its output size dependent
cfg = ModelConfig(scale=2, n_jmrm=2, n_cccb=3, channels=8, cccb_width=8, sscb_width=8, spcb_width=4)
tcfg = T.TrainConfig(lr=1e-4, batch_size=8, iterations=iterations, patch_lr=40, holdout=1,
                     eval_every=max(1, iterations // 3))

res = T.train(cfg, tcfg, pairs, log=print)
print(f"\n{param_count(res.params)} parameters")
print(f"loss {res.losses[0][1]:.4e} -> {res.losses[-1][1]:.4e}")
for ev in res.evals:
    print(f"iteration {ev.iteration:5d}: held-out {ev.psnr:.2f} dB, bicubic {ev.bicubic_psnr:.2f} dB, "
          f"gain {ev.gain:+.2f} dB")

# how smooth are the model's color transitions compared with the exact mapping?
bar = T.color_bar_test(res.params, cfg)
for name, s_out, s_ref in bar.bars:
    print(f"  {name:8s} smoothness {s_out:.2e} (ground truth {s_ref:.2e})")
