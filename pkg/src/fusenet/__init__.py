"""Multimodal medical image fusion with a dilated residual attention network.

Main entry points:

- :mod:`fusenet.network`: feature extractor, reconstructor, checkpoints
- :mod:`fusenet.fusion`: softmax/nuclear-norm weighted fusion and baselines
- :mod:`fusenet.training`: losses, Adam, training loop
- :mod:`fusenet.metrics`: PSNR, SSIM, FSIM, MI, FMI and entropy
- :mod:`fusenet.pipeline`: fuse image pairs and evaluate a test split
"""

from .dataio import Image, PairManifest, load_pair, make_splits, save_image, scan_pairs
from .fusion import STRATEGIES, FusionWeights, PhiKind, channel_softmax, fuse, sfnn_weights
from .losses import LossConfig, PerceptualFeatureNet, total_loss
from .metrics import MetricReport, compute_all
from .network import FusionNet, extract_features, load_checkpoint, load_model, reconstruct, save_checkpoint
from .ops import nuclear_norm
from .pipeline import evaluate_batch, fuse_images
from .tensor import Tensor, backward, no_grad
from .training import TrainConfig, adam_step, train

__version__ = "0.1.0"
