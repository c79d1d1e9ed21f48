# %% [markdown]
# # Blow-up barriers and large-data decay
#
# The barrier W_R is finite on the ball of radius R and blows up at the edge.
# It is a supersolution of  Lap W >= alpha W^p.  A graded grid resolves the
# boundary layer, and the discrete residual stays negative everywhere.

# %%
import numpy as np

from fdelab.elliptic import (
    BarrierSpec,
    default_barrier_constant,
    graded_barrier_field,
    nonexistence_experiment,
    verify_supersolution,
)
from fdelab.geometry import make_profile

euc = make_profile("euclidean", n=3)
pe3 = make_profile("power_exponential", q=3.0, n=3)

# %%
for p in (2, 3):
    spec = BarrierSpec(p, 1.0, 1.0, default_barrier_constant(p))
    for h in (4e-3, 2e-3, 1e-3):
        W = graded_barrier_field(euc, spec, h)
        rep = verify_supersolution(euc, W, spec, 0.0)
        print(f"p={p} h={h:.0e} nodes={W.grid.N + 1:5d} max_violation={rep.max_violation: .3e}")

# %% [markdown]
# Solve  Lap u = u^2  on growing balls with a huge boundary value, and look
# at sup over the unit ball.  On flat space the barrier squeezes it to zero.
# On the fast-growing profile it levels off instead.

# %%
Rs = [5, 10, 20, 40]
for name, prof in (("euclidean", euc), ("power_exponential(3)", pe3)):
    rows = nonexistence_experiment(prof, 2.0, 1.0, Rs, 1.0)
    sups = np.array([r.sup_solution for r in rows])
    print(name, np.round(sups, 5))
