"""
From SDR code values to HDR10 code values
=========================================

Follows one gray ramp and a few saturated colors through the transfer
functions and gamut matrices used by the SDR -> HDR pipeline.
"""

import numpy as np

from gpgmnet import colorimetry as cm

# BT.709 camera curve: linear toe, then a 0.45 power
linear = np.array([0.0, 0.005, 0.018, 0.18, 0.5, 1.0])
print("linear      ", np.round(linear, 4))
print("BT.709 OETF ", np.round(cm.gamma_oetf(linear), 4))

# PQ is absolute: 1.0 means 10000 nits, SDR white sits near code 0.508
nits = np.array([0.1, 1, 10, 100, 1000, 4000, 10000])
print("\nnits        ", nits)
print("PQ code     ", np.round(cm.pq_oetf(nits / 10000), 4))
print("10-bit code ", cm.quantize(cm.pq_oetf(nits / 10000), 10))

# wide gamut container: a 709 primary lands inside the 2020 triangle
for name, rgb in [("red", [1, 0, 0]), ("green", [0, 1, 0]), ("blue", [0, 0, 1])]:
    print(f"\n709 {name:5s} -> 2020", np.round(cm.gamut_709_to_2020(np.array(rgb, float)), 4))

# the synthetic tone mapper used to make SDR training inputs, and its exact inverse;
# highlights are squeezed into the soft-clip shoulder but remain invertible
hdr = np.stack([nits / 10000] * 3)
sdr = cm.tone_map_forward(hdr, axis=0)
print("\nHDR nits -> SDR linear", np.round(sdr[0], 4))
back = cm.tone_map_inverse(sdr, axis=0)[0] * 10000
print("inverse map (nits)    ", np.round(back, 2))

# CIE Lab with 100 nits as reference white
print("\nLab of 100-nit gray:", np.round(cm.rgb_to_lab(np.full(3, 0.01), cm.Gamut.BT2020, white_scale=0.01), 3))
