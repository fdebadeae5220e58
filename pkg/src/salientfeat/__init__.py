"""Local-feature learning and matching toolkit.

A small trainable detector/descriptor network whose training objective
splits feature-covariance statistics into a style part (suppressed) and a
structure part (expanded), plus the full pipeline around it: synthetic
training pairs, keypoint extraction, nearest-neighbour matching and mean
matching accuracy evaluation.
"""

from .covariance import (CovarianceMatrix, LossWeights, MaskPair, build_masks,
                         cov_loss, covariance, covariance_difference,
                         standardize, standardized_covariance, total_loss)
from .extraction import (ExtractConfig, Keypoint, KeypointSet, extract,
                         extract_multiscale, load_descriptors, save_descriptors)
from .geometry import (CorrespondenceMap, Homography, apply_homography,
                       build_correspondence_map, warp_image)
from .losses import (ReliabilityConfig, RepeatabilityConfig, reliability_loss,
                     repeatability_loss, warp_repeatability)
from .matching import (BenchResult, MatchSet, MMAReport, bench_match, match,
                       mma)
from .network import (BackboneConfig, FeatureMaps, Network, build_network,
                      forward, forward_pair, load_checkpoint, save_checkpoint)
from .synth import AugmentConfig, PairSample, make_scene, synth_pair, synthetic_corpus
from .tensor import Tensor, grad_check, no_grad
from .training import TrainConfig, TrainLog, adam_step, train

__version__ = "0.1.0"
