"""Bird call detection from 10-second audio clips.

The pipeline: decode WAV audio, extract log mel-band energies and
interpolated spectral-peak features, train a compact convolutional +
bidirectional recurrent network on them, and score clips for bird
presence under an ROC-AUC protocol with stratified cross-validation.
"""

from .audio import AudioClip, DecodeError, UnsupportedFormatError, decode_wav, standardize_clip
from .augment import (
    LabeledSample,
    Provenance,
    adapt_test_mixing,
    augment_blocks,
    blocks_mix,
    harmonize_domfreq_width,
    stack_features,
)
from .cache import CacheError, read_feature_cache, read_feature_cache_entry, write_feature_cache
from .features import (
    FeatureConfig,
    FeaturePair,
    dominant_frequencies,
    extract_features,
    hz_to_mel,
    log_mel_energies,
    mel_filterbank,
    mel_to_hz,
    parabolic_interpolate,
    stft_magnitude,
)
from .layers import ShapeError
from .manifest import Manifest, ManifestEntry, ManifestError, load_manifest
from .metrics import (
    EvalReport,
    SplitSpec,
    classify_errors,
    ensemble_average,
    evaluate_scores,
    roc_auc,
    roc_points,
    stratified_splits,
    tied_ranks,
)
from .model import CbrnnConfig, CbrnnModel, CheckpointError, load_checkpoint, save_checkpoint
from .train import (
    AdamConfig,
    TrainConfig,
    TrainHistory,
    adam_step,
    mse_loss,
    score_samples,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "AudioClip", "DecodeError", "UnsupportedFormatError", "decode_wav",
    "standardize_clip",
    "FeatureConfig", "FeaturePair", "extract_features", "stft_magnitude",
    "log_mel_energies", "mel_filterbank", "dominant_frequencies",
    "parabolic_interpolate", "hz_to_mel", "mel_to_hz",
    "Manifest", "ManifestEntry", "ManifestError", "load_manifest",
    "CacheError", "write_feature_cache", "read_feature_cache",
    "read_feature_cache_entry",
    "ShapeError",
    "CbrnnConfig", "CbrnnModel", "CheckpointError", "save_checkpoint",
    "load_checkpoint",
    "AdamConfig", "TrainConfig", "TrainHistory", "adam_step", "mse_loss",
    "train", "score_samples",
    "Provenance", "LabeledSample", "blocks_mix", "augment_blocks",
    "adapt_test_mixing", "harmonize_domfreq_width", "stack_features",
    "SplitSpec", "EvalReport", "tied_ranks", "roc_auc", "roc_points",
    "stratified_splits", "ensemble_average", "classify_errors",
    "evaluate_scores",
    "__version__",
]
