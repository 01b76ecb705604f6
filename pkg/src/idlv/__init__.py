"""Face liveness detection conditioned on the claimed client identity.

A shared-weight Siamese conv net embeds a test image and the enrolled real
reference of the same client; a small embedding distance means the test
image is live.
"""

from .autodiff import Architecture, LayerSpec, ParamStore, default_architecture, five_conv_architecture
from .checkpoint import CheckpointMeta, load_checkpoint, save_checkpoint
from .data import build_pairs, decode_image, load_dataset, preprocess, synth_dataset
from .evaluation import ConfusionCounts, MetricsReport, confusion_counts, hter, threshold_sweep
from .gradcheck import finite_diff_check
from .labels import Liveness
from .protocol import Decision, Gallery, calibrate_threshold, enroll, verify
from .siamese import LabeledPair, SiameseModel, TrainConfig, contrastive_loss, embed, fit, pair_distance, train_step

__version__ = "0.1.0"
