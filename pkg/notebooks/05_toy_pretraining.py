# %% [markdown]
# # Toy masked denoising pre-training
# A small model learns to predict clean-audio cluster ids on masked frames of
# mixed input. The run is deterministic given the seed and finishes in under a
# minute on a laptop CPU.

# %%
from wavlm_lite.model import parameter_breakdown
from wavlm_lite.train import TrainConfig, smoothed, train

cfg = TrainConfig(steps=200, seed=0)
result = train(cfg, out_dir="runs/notebook_toy")
s = smoothed(result.losses, cfg.smooth)
print(f"loss {result.losses[0]:.2f} -> {result.losses[-1]:.2f}; smoothed {s[0]:.2f} -> {s[-1]:.2f}")
print("parameters:", parameter_breakdown(result.model))

# %% Coarse text plot of the smoothed curve
for step in range(0, cfg.steps, 20):
    print(f"{step + 1:4d} {'#' * int(s[step])}")
