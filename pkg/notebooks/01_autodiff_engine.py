# %% [markdown]
# # The numpy autodiff engine
# Every model component is built from a small set of differentiable ops.
# Here we fit a two-layer network to a toy regression target and confirm one
# gradient entry against a central difference.

# %%
import numpy as np

from wavlm_lite import numeric as nm

rng = np.random.default_rng(0)
x = rng.normal(size=(64, 3))
y = np.sin(x @ np.array([1.0, -2.0, 0.5]))[:, None]

w1 = nm.Parameter(rng.normal(size=(3, 16)) * 0.5, "w1")
w2 = nm.Parameter(rng.normal(size=(16, 1)) * 0.25, "w2")


def loss():
    pred = nm.matmul(nm.gelu(nm.matmul(x, w1)), w2)
    err = nm.sub(pred, y)
    return nm.mean(nm.mul(err, err))


# %% Plain gradient descent
for step in range(301):
    nm.zero_grad([w1, w2])
    value = loss()
    nm.backward(value)
    for p in (w1, w2):
        p.data -= 0.1 * p.grad
    if step % 100 == 0:
        print(f"step {step:3d}  mse {value.item():.4f}")

# %% One entry checked by finite differences
nm.zero_grad([w1, w2])
nm.backward(loss())
h = 1e-6
old = w1.data[0, 0]
w1.data[0, 0] = old + h
up = loss().item()
w1.data[0, 0] = old - h
down = loss().item()
w1.data[0, 0] = old
print("analytic", w1.grad[0, 0], "numeric", (up - down) / (2 * h))
