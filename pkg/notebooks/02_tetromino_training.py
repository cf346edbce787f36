# %% [markdown]
# # Training on tetrominoes
#
# Two classes of 4x4 images, T (+1) and L (-1), in every position and
# orientation, plus one noisy copy of each. The default here is a short
# run; set `EPOCHS = 100` and `SEEDS = range(5)` for the full comparison
# (about an hour on one core).

# %%
import math

import numpy as np

from c4vqc.circuits import ModelSpec
from c4vqc.data import gen_tetrominoes
from c4vqc.experiments import compare_architectures, minima_census
from c4vqc.training import landscape_stats

EPOCHS = 20
SEEDS = range(2)
N_LAYERS = 6

# %% [markdown]
# ## The loss landscape at random angles
#
# With labels of +-1 and outputs near zero, the mean loss is close to 1 for
# all three models. The basic entangler's gradients are far more
# concentrated.

# %%
item = gen_tetrominoes(4).items[0]
x = math.pi * item.pixels.ravel() / 255.0
for arch in ("Equivariant", "NonEquivariant", "BasicEntangler"):
    spec = ModelSpec(arch, 4, 5, random_orbit_seed=0 if arch == "NonEquivariant" else None)
    s = landscape_stats(spec, x, item.label, 200, seed=0)
    print(f"{arch:15s} E[L]={s.mean_loss:.4f} Var[L]={s.var_loss:.2e} Var[dL]={s.var_grad:.2e}")

# %% [markdown]
# ## Architecture comparison
#
# Full-batch Adam with a learning rate of 0.1. Pixels map to angles in
# [0, pi]: the symmetric range [-pi, pi] sends black and white pixels to
# RX(-pi) and RX(pi), which differ only by a global phase.

# %%
config = {
    "dataset": {"kind": "tetromino", "copies": 1},
    "train": {"learning_rate": 0.1, "max_epochs": EPOCHS},
    "sweep": {"seeds": list(SEEDS), "n_layers": [N_LAYERS]},
}
records, rows = compare_architectures(config)
for row in rows:
    arch, n_l, runs, failed, loss = row[:5]
    f1_train, f1_test = row[8], row[12]
    print(f"{arch:15s} n_l={n_l} runs={runs} loss={float(loss):.3f} F1 {float(f1_train):.2f}/{float(f1_test):.2f}")

# %% [markdown]
# ## Where the runs ended
#
# Final training losses per architecture and the share of runs that ended
# strictly below the mean.

# %%
for arch in ("Equivariant", "NonEquivariant", "BasicEntangler"):
    census = minima_census([r for r in records if r.spec.architecture == arch])
    print(arch, {k: round(v, 4) for k, v in census.items() if isinstance(v, float)})

# %% [markdown]
# ## Loss curves
#
# The first and last few epochs of each run.

# %%
for r in records:
    losses = r.history.losses
    print(f"{r.spec.architecture:15s} seed {r.seed}: {np.round(losses[:3], 3)} ... {np.round(losses[-3:], 3)}")
