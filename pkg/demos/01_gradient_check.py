# Checking the hand-written backward pass against finite differences.
#
# A tiny Siamese network is built, a pair of random images is pushed through
# both (shared) branches, and every parameter gradient of the contrastive loss
# is compared with a central difference.

import numpy as np

from idlv.autodiff import Architecture
from idlv.gradcheck import finite_diff_check, kink_gap
from idlv.siamese import SiameseModel, embed, pair_distance

arch = Architecture.parse("conv:3:3:1:1 relu pool:2 flatten dense:4", (1, 6, 6))
print("layer shapes:", arch.shapes())

model = SiameseModel.initialize(arch, seed=3)
rng = np.random.default_rng(0)
pair = rng.normal(size=(2, 1, 6, 6))

e = embed(model, pair)
d = pair_distance(e[0], e[1])
print("pair distance:", d)

# ReLU and max-pool are piecewise; a finite difference straddling a kink is
# meaningless, so look at how far we are from one first.
for label in (1, 0):
    margin = 3 * d
    print(f"\nlabel y={label}, margin={margin:.4f}")
    print("  distance to nearest kink:", kink_gap(arch, model.store, pair, label, margin))
    report = finite_diff_check(arch, model.store, pair, label, margin)
    print(" ", report)
