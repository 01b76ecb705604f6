# Picking a decision threshold from distances.
#
# A probe is accepted as REAL when its embedding distance to the client's
# enrolled reference is strictly below tau. Sweeping tau trades false
# rejections of real faces (FRR) against false acceptances of spoofs (FAR).

import numpy as np

from idlv.evaluation import best_threshold, emit_report, threshold_sweep
from idlv.labels import Liveness

rng = np.random.default_rng(4)
real_d = np.abs(rng.normal(0.3, 0.15, size=200))
fake_d = np.abs(rng.normal(0.9, 0.25, size=200))
distances = np.concatenate([real_d, fake_d])
truths = [Liveness.REAL] * 200 + [Liveness.FAKE] * 200

sweep = threshold_sweep(distances, truths)
print(len(sweep), "candidate thresholds")
for p in sweep[:: len(sweep) // 8]:
    print(f"tau {p.tau:7.4f}  FRR {p.frr:.3f}  FAR {p.far:.3f}  HTER {p.hter:.3f}")

best = best_threshold(distances, truths)
print("\nchosen:", best.to_dict())

# the CSV form holds the sweep only
print(emit_report(best, sweep[:3], "csv").decode())
