"""
Three ways to modulate a feature map
====================================

GFM scales and shifts each channel from the global priors vector, SFT uses
full-resolution maps from a condition network, and GSMB adds a single
spatial map to the per-channel terms.  Small random tensors show how the
three relate.
"""

import numpy as np

from gpgmnet import model as M

rng = np.random.default_rng(0)
c, d = 4, 12
F = rng.standard_normal((1, c, 5, 5))
v = rng.standard_normal((1, d))
S = rng.standard_normal((1, 1, 5, 5))

fc = {"fc_gamma.weight": rng.standard_normal((c, d)) * 0.1, "fc_gamma.bias": np.ones(c),
      "fc_beta.weight": rng.standard_normal((c, d)) * 0.1, "fc_beta.bias": np.zeros(c)}
gsmb_p = {f"jmrm0.gsmb.{k}": w for k, w in fc.items()}
gfm_p = {f"jmrm0.gfm.{k}": w for k, w in fc.items()}

# GSMB with a flat spatial map is exactly GFM
flat = M.gsmb_forward(F, v, np.zeros_like(S), gsmb_p)
print("GSMB(S=0) == GFM:", np.array_equal(flat, M.gfm_forward(F, v, gfm_p)))

# the spatial map adds the same offset to gamma and beta at each pixel
out = M.gsmb_forward(F, v, S, gsmb_p)
print("GSMB - GFM == S * (F + 1):", np.allclose(out - flat, S * (F + 1)))

# SFT with constant unit gamma and zero beta is the identity
sft_p = {"jmrm0.sft.gamma.weight": np.zeros((c, 3, 1, 1)), "jmrm0.sft.gamma.bias": np.ones(c),
         "jmrm0.sft.beta.weight": np.zeros((c, 3, 1, 1)), "jmrm0.sft.beta.bias": np.zeros(c)}
print("SFT(gamma=1, beta=0) is identity:",
      np.array_equal(M.sft_forward(F, rng.standard_normal((1, 3, 5, 5)), sft_p), F))

# where the parameters go in the full-size x4 network
P = M.init_params(M.ModelConfig(scale=4), 0)
print(f"\nx4 network: {M.param_count(P)} parameters")
for group, n in M.param_breakdown(P).items():
    if not group.startswith("jmrm") or group.startswith("jmrm0"):
        print(f"  {group:16s}{n:8d}")
