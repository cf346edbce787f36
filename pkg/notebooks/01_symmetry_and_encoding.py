# %% [markdown]
# # Rotations, orbits and an invariant classifier
#
# A 90 degree image rotation permutes pixels. With one qubit per pixel and
# an RX angle encoding, the same rotation becomes a qubit permutation
# `U_g`. Gates tied across each rotation orbit commute with `U_g`, and an
# observable summed over one orbit is left unchanged by it, so the whole
# circuit output is rotation invariant.

# %%
import math

import numpy as np

from c4vqc.circuits import ModelSpec, build_model, encoding_layer, model_forward, resource_counts
from c4vqc.statevector import run_circuit
from c4vqc.symmetry import build_group_rep, compute_orbits, rotate_image

# %% [markdown]
# ## Orbits of a 4x4 grid
#
# Every orbit has four pixels, so there are 16 / 4 = 4 of them. Odd grids
# add the centre pixel as an orbit of its own.

# %%
table = compute_orbits(4)
labels = np.zeros((4, 4), dtype=int)
for o, members in enumerate(table.orbits):
    for i, j in members:
        labels[i, j] = o
print(labels)
print({n: compute_orbits(n).n_orbits for n in range(2, 9)})

# %% [markdown]
# ## The rotation as a qubit permutation
#
# Encoding a rotated image gives the permuted state of the original one.

# %%
rep = build_group_rep(4)
print("U_g moves qubit q to", rep.generator.tolist())
x = np.random.default_rng(0).uniform(0, math.pi, (4, 4))
enc = encoding_layer(4)
base = run_circuit(enc, 16, inputs=x.ravel())
for k in range(4):
    moved = run_circuit(enc, 16, inputs=rotate_image(x, k).ravel())
    print(k, np.linalg.norm(moved.amplitudes - rep.act(base, k).amplitudes))

# %% [markdown]
# ## Invariance of the three models
#
# Same parameters, original and rotated image. Only the equivariant model
# gives the same output up to rounding.

# %%
rng = np.random.default_rng(1)
images = np.stack([x.ravel()] + [rotate_image(x, k).ravel() for k in (1, 2, 3)])
for arch in ("Equivariant", "NonEquivariant", "BasicEntangler"):
    spec = ModelSpec(arch, 4, 3, random_orbit_seed=0 if arch == "NonEquivariant" else None)
    plan = build_model(spec)
    f = model_forward(plan, rng.uniform(0, 2 * math.pi, plan.n_params), images)
    print(f"{arch:15s}", np.round(f, 6))

# %% [markdown]
# ## Resources per layer
#
# The tied models need three angles per orbit; the basic entangler needs one
# per pixel.

# %%
for arch in ("Equivariant", "NonEquivariant", "BasicEntangler"):
    for n in (2, 4, 6):
        c = resource_counts(ModelSpec(arch, n, 1, random_orbit_seed=0 if arch == "NonEquivariant" else None))
        print(f"{arch:15s} n={n}: {c['params_per_layer']:3d} params, {c['cnots_per_layer']:3d} CNOTs")
