"""
Chest-wall alignment
====================

Tilt a phantom, find the chest-wall line again and undo the tilt.
"""

import math

import numpy as np

from dchanet.phantom import PhantomConfig, generate_case
from dchanet.preprocess import (
    PreprocessConfig,
    align_and_resize,
    fit_chest_wall,
    remove_background,
    rotate_image,
)

img = generate_case(PhantomConfig(), 5, label=0).img_cc
h, w = img.shape

# rotate about the bottom-left corner so no tissue leaves the frame
tilted = rotate_image(img, 7.0, pivot=(h - 1, 0))
clean, mask = remove_background(tilted)
line = fit_chest_wall(clean, mask)
print("fitted angle %.2f deg, offset %.2f px, rms %.2f px"
      % (math.degrees(line.angle), line.offset, line.residual))

aligned = align_and_resize(clean, line, PreprocessConfig(target_size=64))
print("mean abs error after alignment: %.4f" % np.mean(np.abs(aligned - img)))

# the same pipeline also resizes, here to 128 x 128
print("resized:", align_and_resize(clean, line, PreprocessConfig(target_size=128)).shape)
