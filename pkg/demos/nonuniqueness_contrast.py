# %% [markdown]
# # Uniqueness on flat space, and where it breaks
#
# Two ladders towards the same minimal solution give the same answer up to
# discretisation error; the contraction functional W measures the gap.

# %%
import numpy as np

from fdelab.cli import demo_nonuniqueness
from fdelab.estimates import probe_alpha, uniqueness_probe
from fdelab.geometry import make_profile
from fdelab.parabolic import FdeConfig, LiftSchedule, datum_tent, minimal_solution

euc = make_profile("euclidean", n=3)
cfg = FdeConfig(m=0.5, dt=0.05, t_end=1.0)

# %%
A = LiftSchedule((2.0, 4.0, 8.0), (1e-1, 1e-2, 1e-3, 1e-4), (0.25, 0.5, 1.0, 2.0), 1e-4, 1.0, 0.05)
B = LiftSchedule((2.0, 4.0, 8.0), (3e-1, 3e-2, 3e-3, 3e-4, 3e-5), (0.3, 0.6, 1.2), 1e-4, 1.0, 0.05)
ua = minimal_solution(euc, cfg, datum_tent(), A).field
ub = minimal_solution(euc, cfg, datum_tent(), B).field
rep = uniqueness_probe(ua, ub, euc, 0.5, 1.0, probe_radius=1.0)
print(f"alpha={probe_alpha(0.5, 1.0):.7f} sup W={rep.sup_w:.2e} barrier={rep.barrier_sup:.3f}")

# %% [markdown]
# Now zero data with boundary value 1 on growing balls.  On flat space the
# solution at the pole dies out as R grows, so the limit is the zero solution.
# On the incomplete profile mass keeps arriving from infinity and a nonzero
# limit survives: a second solution with zero data.

# %%
res = demo_nonuniqueness(euc, make_profile("power_exponential", q=3.0, n=3), 0.5, [2, 4, 8, 16], 1.0)
print("R          ", res["R"])
print("euclidean  ", np.round(res["complete"], 5))
print("pow-exp(3) ", np.round(res["incomplete"], 4))
print("ratio at R=16:", round(res["contrast_at_Rmax"], 1))
