# Training a shared embedding on a toy task.
#
# "Real" images are random binary patterns and a "fake" is the inverted
# pattern. Positive pairs join two real images of a client; negative pairs
# join a real image with its inverse. Contrastive loss pulls the former
# together and pushes the latter beyond the margin.

import numpy as np

from idlv.autodiff import Architecture
from idlv.siamese import LabeledPair, SiameseModel, TrainConfig, embed, fit, pair_distance

rng = np.random.default_rng(1)
pairs = []
for client in range(6):
    reals = [rng.integers(0, 2, size=(1, 8, 8)).astype(float) for _ in range(2)]
    for k in range(2):
        pairs.append(LabeledPair(reals[k], reals[1 - k], 1, client))
        pairs.append(LabeledPair(reals[k], 1.0 - reals[k], 0, client))
print(len(pairs), "pairs")

arch = Architecture.parse("conv:4:3:1:1 relu pool:2 flatten dense:8", (1, 8, 8))
model = SiameseModel.initialize(arch, seed=1)
config = TrainConfig(margin=1.0, learning_rate=0.05, epochs=40, batch_size=6, seed=1)
model, history = fit(model, pairs, config)

for epoch in (0, 9, 19, 39):
    print(f"epoch {epoch + 1:3d}  loss {history[epoch]:.5f}")


def mean_distance(y):
    ds = [pair_distance(*embed(model, np.stack([p.a, p.b]))) for p in pairs if p.y == y]
    return np.mean(ds)


print("\nmean positive-pair distance:", mean_distance(1))
print("mean negative-pair distance:", mean_distance(0))

# both branches are the same function, so an image is at distance 0 from itself
x = rng.uniform(size=(1, 8, 8))
print("self distance:", pair_distance(embed(model, x), embed(model, x)))
