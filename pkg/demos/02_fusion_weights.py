"""How the softmax/nuclear-norm rule weighs two feature maps.

Uses an untrained network, so the numbers only illustrate the mechanics.
"""

# %%
import numpy as np

from fusenet.fusion import PhiKind, channel_nuclear_norms, channel_softmax, sfnn_weights
from fusenet.network import FusionNet, extract_features
from fusenet.phantom import phantom_pair

model = FusionNet(seed=0)
mri, ct = phantom_pair(size=64, seed=1)
f_mri, f_ct = extract_features(model, mri), extract_features(model, ct)
print("feature maps:", f_mri.shape)

# %% [markdown]
# Softmax across channels turns every pixel into a distribution over the 64
# channels. Each channel's nuclear norm then measures how strongly that
# channel is "on" across the image.

# %%
s = channel_softmax(f_mri)
print("softmax sums to one per pixel:", np.allclose(s.sum(axis=0), 1))
norms = channel_nuclear_norms(f_mri)
print("largest channel norms (MRI):", np.round(np.sort(norms)[-5:], 2))

# %%
for phi in PhiKind:
    w = sfnn_weights(f_mri, f_ct, phi)
    print(f"{phi.value:6s} w_mri={w.w1:.4f} w_ct={w.w2:.4f}")

# %% [markdown]
# mean and sum give the same weights (the channel count cancels); the
# squared variants push the weights further from one half.
