"""Risk-budgeted safety filtering for a velocity-controlled unicycle vehicle.

The package provides:

* exact zero-order-hold unicycle/pedestrian propagation and polyline paths,
* distance control-barrier residuals, deterministic and sample-based,
* a dense convex QP solver with affirmative infeasibility certificates,
* relaxed and CVaR-tightened barrier QP safety filters,
* a sliding-window risk-budget monitor with a window-level safety certificate,
* feasibility- and quota-triggered supervisors switching between filters,
* a tracking LTV-MPC nominal controller, and
* a Monte-Carlo closed-loop harness with CSV emission and a CLI.
"""

import os

# Single-threaded BLAS keeps small-matrix solves bitwise reproducible and
# avoids oversubscription; must be set before numpy initialises its backend.
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

__version__ = "0.1.0"
