# %% [markdown]
# # Frame targets from MFCC k-means
# 39-dimensional MFCC frames (100 per second) are clustered, each frame gets
# its nearest centre, and the sequence is decimated to the encoder's 50 Hz rate.

# %%
import numpy as np

from wavlm_lite.audio import mfcc
from wavlm_lite.encoder import EncoderConfig
from wavlm_lite.labeler import fit_mfcc_codebook, label_waveforms
from wavlm_lite.train import synthetic_corpus

waves = synthetic_corpus(12, 1.0, seed=1)
print("MFCC frames per 1 s utterance:", mfcc(waves[0]).shape)

cb = fit_mfcc_codebook(waves, C=8, seed=0)
print("inertia by iteration:", [round(v, 1) for v in cb.history[:6]], "...")

labels = label_waveforms(cb, waves, EncoderConfig().frames)
for z in labels[:3]:
    print("".join("abcdefgh"[i] for i in z))

# %% Cluster usage across the corpus
print(np.bincount(np.concatenate(labels), minlength=cb.C))
