"""Physiology-based face presentation attack detection.

A two-branch convolutional attention network over normalized frame
differences (motion) and raw face crops (appearance).  It is first trained
to regress the pulse, then adapted to attack detection either by retraining
everything or by fitting a new head on the frozen body.  Evaluation fixes the
threshold at the validation EER and reports APCER/BPCER/ACER per attack type.
"""
from .metrics import MetricsReport, VideoScore, classify_and_report, eer_threshold, pool_video, roc_curve
from .network import ModelWeights, NetworkConfig, forward, init_weights, load_weights, save_weights
from .preprocess import BoundingBox, PreprocessConfig, motion_input, prepare_clip
from .synthdata import SynthConfig, generate
from .training import TrainConfig, train

__version__ = "0.1.0"
