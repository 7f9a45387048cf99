"""Online embedding-mixing data augmentation for visual object trackers.

The package is layered: :mod:`deepmix.tensor` (NCHW conv primitives and
their adjoints), :mod:`deepmix.mix` (sample mixing), :mod:`deepmix.mixnet`
(kernel predictor), :mod:`deepmix.opt` (per-update kernel optimisation),
:mod:`deepmix.tracker` with its simulator and metrics, and
:mod:`deepmix.experiment` / :mod:`deepmix.cli` on top.
"""

from .container import FormatError, read_container, write_container
from .corpus import CorpusConfig, build_corpus
from .episode import Episode, episode_grad, episode_loss
from .extractor import EmbeddingExtractor, extract_embedding
from .metrics import (
    FrameResult,
    OpeSummary,
    iou,
    norm_precision,
    ope_summary,
    precision,
    reset_eval,
    success_auc,
)
from .mix import (
    BlendConfig,
    BoundingBox,
    MixKernelPair,
    ObjectMask,
    alpha_blend,
    deepmix_combine,
    mask_from_boxes,
    sample_mix_conv,
    template_refresh,
)
from .mixnet import MixNetWeights, TrainConfig, load_weights, mixnet_forward, mixnet_init, save_weights, train_mixnet
from .opt import OptConfig, deepmix_opt, opt_gradient, opt_objective
from .sequence import Difficulty, SyntheticSequence, gen_sequence, load_sequence, save_sequence
from .tensor import ShapeError, SgdState, conv2d, conv2d_grad, make_rng, sgd_step
from .tracker import Augmentor, SampleMemory, Tracker, TrackerConfig, build_training_set, run_tracker

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
