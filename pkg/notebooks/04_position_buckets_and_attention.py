# %% [markdown]
# # Relative position buckets and overflow-safe attention
# Offsets between query and key frames share learnable bias entries: exact
# buckets near zero, logarithmic ones further out, and a single saturated
# bucket beyond the maximum offset. Attention logits are computed in a
# translated form so nothing overflows a half-precision range.

# %%
import numpy as np

from wavlm_lite.transformer import bucket_index, half_range_flags

for offset in (-2000, -800, -799, -160, -50, 0, 50, 160, 799, 2000):
    print(f"offset {offset:+5d} -> bucket {bucket_index(offset)}")

# %% Large coherent queries and keys push raw logits near 1e5
rng = np.random.default_rng(0)
q = 158.0 + rng.normal(size=(8, 16))
k = 158.0 + rng.normal(size=(8, 16))
for key, value in half_range_flags(q, k).items():
    print(f"{key:18s} {value}")
