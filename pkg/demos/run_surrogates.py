"""Run the experiments at their default settings and print the headline metrics.

Without the CIFAR-10 archive the image-classification experiments fall back to
the procedural shapes10 set and say so in their report. Expect tens of minutes
per experiment on a single CPU thread.

    python3 demos/run_surrogates.py [out_dir] [experiment ...]
"""

import sys
import time

from advbenign.experiments import RUNNERS, run_experiment

out = sys.argv[1] if len(sys.argv) > 1 else "runs"
names = sys.argv[2:] or list(RUNNERS)
for name in names:
    t0 = time.perf_counter()
    rep = run_experiment(name, "default", f"{out}/{name}")
    scalars = {k: round(v, 4) if isinstance(v, float) else v for k, v in rep.metrics.items()
               if not isinstance(v, (list, dict))}
    print(f"{name} ({time.perf_counter() - t0:.0f}s): {scalars}")
