"""
Frozen encoder, trainable adapters
==================================

The hierarchical encoder turns an image into a pyramid of feature maps.
Only the small bottleneck adapters inside each block are trainable.
Their up-projection starts at zero, so at initialisation the adapted
encoder reproduces the frozen one bit for bit.
"""

import numpy as np

from usadapt.hiera import HieraConfig, HieraEncoder
from usadapt.tensor import Tensor, no_grad

image = Tensor(np.random.default_rng(0).uniform(size=(1, 224, 224, 1)))

with no_grad():
    adapted = HieraEncoder(HieraConfig(adapter_enabled=True), seed=0)(image)
    frozen = HieraEncoder(HieraConfig(adapter_enabled=False), seed=0)(image)

for lvl, s in zip(adapted.levels, adapted.strides):
    print(f"stride {s:2d}: {lvl.shape}")

same = all(a.data.tobytes() == b.data.tobytes() for a, b in zip(adapted.levels, frozen.levels))
print("identical to the frozen encoder at init:", same)

###############################################################################
# Parameter budget: the backbone dwarfs the adapters.

enc = HieraEncoder(HieraConfig(), seed=0)
n_backbone = sum(p.size for p in enc.backbone.values())
n_adapter = sum(p.size for p in enc.trainable_parameters().values())
print(f"backbone {n_backbone} frozen, adapters {n_adapter} trainable")
