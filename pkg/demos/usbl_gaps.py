"""Dead reckoning between sparse USBL fixes.

A vehicle drifts through the water.  An IMU reports rotated, biased and
quantized acceleration at 5 Hz, with occasional spikes.  A USBL system gives
a position fix every two seconds.  We throw away more and more of the fixes
and watch how each navigation model copes:

* ``l2``           quadratic losses, no bias state
* ``l2+bias``      adds a constant accelerometer bias to the state
* ``hubnik+bias``  robust process and accelerometer losses as well

The constant-acceleration process has only three noise directions for nine
states, so the process covariance is singular.  The DRS smoother handles
that directly.

Run:  python3 demos/usbl_gaps.py [seed]   (about ten seconds)
"""

import sys

from singsmooth.cli import ablation_configs, default_solver, smooth_nav
from singsmooth.navigation import NavConfig
from singsmooth.scenarios import nav_scenario, rmse

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
scn = nav_scenario(seed=seed, duration=120.0)
print(f"{len(scn.imu)} IMU samples, {len(scn.usbl)} fixes, true bias {scn.bias}\n")

configs = ablation_configs(NavConfig())
gaps = (0.0, 10.0, 30.0)
print(f"{'model':14s}" + "".join(f"  gap {g:4.0f}s" for g in gaps))
for name, nav in configs.items():
    row = []
    for gap in gaps:
        _, res, _ = smooth_nav(scn.imu, scn.usbl, nav, default_solver(), gap)
        row.append(rmse(res.states[:, :3], scn.truth_pos))
    print(f"{name:14s}" + "".join(f"  {e:9.2f}" for e in row))

_, res, _ = smooth_nav(scn.imu, scn.usbl, configs["l2+bias"], default_solver())
print(f"\nbias estimate with every fix: {res.states[0, 9:].round(3)}")
