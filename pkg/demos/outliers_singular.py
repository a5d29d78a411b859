"""Why a pseudo-inverse is not good enough when the process noise is singular.

A 1-D target moves with a random-walk velocity, and its position is the exact
integral of that velocity, so Q = C C^T has rank 1.  Ten percent of the
position readings are gross outliers.

Three smoothers see the same data:

* least squares on the constrained model (outliers drag the track around),
* Huber on the constrained model (outliers are down-weighted),
* Huber after whitening with a pseudo-inverse of Q.  The position equation
  x_k = x_{k-1} + T v_{k-1} falls in the null space of Q^+ and stops being
  enforced, so the track is free to chase the outliers.

Run:  python3 demos/outliers_singular.py [seed]
"""

import sys

import numpy as np

from singsmooth import SolverConfig, solve
from singsmooth.reference import pinv_huber_smoother
from singsmooth.scenarios import fig1_problem, fig1_scenario, rmse

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
scn = fig1_scenario(seed=seed)
truth = scn.truth[:, :1]
print(f"{len(scn.y)} samples, {scn.outliers.sum()} outliers, seed {seed}\n")

cfg = SolverConfig(tol_rel=1e-8)
results = {}
for loss in ("l2", "huber"):
    r = solve(fig1_problem(scn, loss), cfg)
    results[f"{loss} (constrained)"] = r.states[:, :1]
    print(f"DRS {loss:5s}: {r.iterations} iterations, converged={r.converged}")

X, info = pinv_huber_smoother(fig1_problem(scn, "huber"))
results["huber (pseudo-inverse)"] = X[:, :1]
print(f"L-BFGS pinv: {info['iterations']} iterations\n")

print(f"{'method':26s} position RMSE")
for name, est in results.items():
    print(f"{name:26s} {rmse(est, truth):.3f}")

# how well does each track honour x_k = x_{k-1} + T v_{k-1}?
r = solve(fig1_problem(scn, "huber"), cfg).states
gap_drs = np.max(np.abs(r[1:, 0] - r[:-1, 0] - scn.T * r[:-1, 1]))
gap_pinv = np.max(np.abs(X[1:, 0] - X[:-1, 0] - scn.T * X[:-1, 1]))
print(f"\nlargest violation of the exact position update: DRS {gap_drs:.1e}, pinv {gap_pinv:.2f}")
