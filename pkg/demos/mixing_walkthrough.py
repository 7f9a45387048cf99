"""Object-aware mixing on a small bank of embeddings.

Builds masks from boxes, mixes with a hand-made kernel pair, checks two
identities and blends the result back into the raw bank.

    python3 demos/mixing_walkthrough.py
"""

import numpy as np

from deepmix import (
    BlendConfig,
    BoundingBox,
    MixKernelPair,
    alpha_blend,
    deepmix_combine,
    mask_from_boxes,
    sample_mix_conv,
)

rng = np.random.default_rng(0)
n, c, h, w, stride = 3, 4, 8, 8, 4
bank = rng.standard_normal((n, c, h, w)).astype(np.float32)

# one box per sample, in image pixels; the mask lives on the feature grid
boxes = [BoundingBox(8, 8, 12, 12), BoundingBox(4, 12, 8, 8), BoundingBox(16, 4, 10, 14)]
mask = mask_from_boxes(boxes, (c, h, w), stride, np.float32)
print("object cells per sample:", mask.mask[:, 0].sum(axis=(1, 2)).astype(int).tolist())

# object branch copies each sample, background branch averages the whole bank
w_obj = np.zeros((n, n, 3, 3), dtype=np.float32)
w_obj[np.arange(n), np.arange(n), 1, 1] = 1.0
w_bkg = np.full((n, n, 3, 3), 1.0 / (9 * n), dtype=np.float32)
mixed = deepmix_combine(bank, MixKernelPair(w_obj, w_bkg), mask)

inside = mask.mask == 1
print("object cells unchanged:", np.array_equal(mixed[inside], bank[inside]))
print("background smoothed: std", float(bank[~inside].std()), "->", float(mixed[~inside].std()))

# a delta kernel picks a sample unchanged; here output k takes sample (k + 1) mod n
shift = np.zeros((n, n, 3, 3), dtype=np.float32)
shift[np.arange(n), (np.arange(n) + 1) % n, 1, 1] = 1.0
print("delta kernel reorders samples:", np.array_equal(sample_mix_conv(bank, shift), bank[[1, 2, 0]]))

blend = BlendConfig()
out = alpha_blend(mixed, bank, blend)
print(f"blended bank = {blend.alpha_aug} * mixed + {blend.alpha_raw} * raw, shape {out.shape}")
