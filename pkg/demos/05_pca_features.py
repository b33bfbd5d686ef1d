"""
Looking at auxiliary features with PCA
======================================

The first three principal components of the auxiliary encoder's patch
features become an RGB image, with the label outline drawn on top.
"""

from pathlib import Path

import numpy as np
from PIL import Image

from usadapt.aux_encoder import AuxConfig, AuxEncoder, pca_rgb
from usadapt.cli import overlay_contour
from usadapt.data import PhantomSpec, generate
from usadapt.tensor import Tensor, no_grad

samples = generate(PhantomSpec(seed=2, count=2))
images = np.stack([s.image for s in samples])[..., None]

with no_grad():
    feats = AuxEncoder(AuxConfig(), seed=0)(Tensor(images))
res = pca_rgb(feats)
print("feature grid", feats.shape, "explained variance", np.round(res.explained, 3))

out = Path("demo_output")
out.mkdir(exist_ok=True)
for i, s in enumerate(samples):
    up = np.kron(res.rgb[i], np.ones((16, 16, 1)))
    img = overlay_contour(up, s.label)
    Image.fromarray(np.round(img * 255).astype(np.uint8)).save(out / f"pca_{s.id}.png")
print("saved to", out.resolve())
