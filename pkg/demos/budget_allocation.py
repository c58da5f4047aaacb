"""Turn one measured trial into per-level sample counts for MLFT and ML2MC.

No training happens here: the trial numbers below are of the kind printed by
``mlft run``. The script fits both a posteriori estimators, solves the budget
problem for each, and checks the convex solve against exhaustive search.

    python3 demos/budget_allocation.py
"""
import numpy as np

from mlft import budget as bud
from mlft import estimate as est

costs = (1.0, 64.0)
T = 8 * costs[1]

# level errors of an anchor trial with M = (64, 4); the gap is |f_2 - f_1| on validation
mlft_trial = est.TrialRecord((64, 4), g=(0.032, 1.38), e=(0.0, 1.31))
ml2mc_trial = est.TrialRecord((64, 4), g=(0.032, 0.0675))

mlft = est.fit_heuristic_mlft(mlft_trial, costs)
ml2mc = est.fit_heuristic_ml2mc(ml2mc_trial, costs)
print("fitted MLFT  a =", np.round(mlft.a, 4), " b =", np.round(mlft.b, 4))
print("fitted ML2MC a =", np.round(ml2mc.a, 4))

for name, model, solve in (("MLFT", mlft, bud.optimize_mlft), ("ML2MC", ml2mc, bud.optimize_ml2mc)):
    sol = solve(model, T)
    brute = bud.optimize_bruteforce(model, T)
    print(f"\n{name}: budget {T:g}, costs {costs}")
    print(f"  continuous M = {np.round(sol.m_continuous, 2)}  ghat = {sol.ghat_continuous:.4f}")
    print(f"  rounded    M = {sol.m_rounded}  ghat = {sol.ghat_rounded:.4f}  slack = {sol.slack:g}")
    print(f"  grid search M = {brute.m_rounded}  ghat = {brute.ghat_rounded:.4f}")
    print(f"  KKT residual at the continuous point = {bud.kkt_residual(model, sol.m_continuous):.1e}")

print("\nestimated error along the coarse-to-total ratio (MLFT model):")
for r in np.linspace(0.05, 0.95, 10):
    m = bud.ratio_to_counts(r, T, costs)
    if min(m) > 0:
        print(f"  r = {r:.2f}  M = {m}  ghat = {est.eval_ghat(mlft, m):.4f}")
