"""Feature-space data augmentation and domain adaptation.

Two clips' features are mixed by taking the elementwise maximum of
their log mel-band energies and concatenating their spectral-peak
slots, so the mixture sounds like both clips playing at once as far as
the features are concerned. The mixed label is present unless both
parents are absent.

``augment_blocks`` doubles a training set by mixing every sample with
one random partner. ``adapt_test_mixing`` doubles the positive class
by mixing each present-labeled sample with one random unlabeled test
clip, pulling test-domain texture into training.

Mixing doubles the peak-slot width (3 -> 6), so augmented sets hold a
mixture of widths; ``harmonize_domfreq_width`` promotes the narrow ones
by repeating their slots.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .features import FeaturePair

__all__ = [
    "Provenance",
    "LabeledSample",
    "blocks_mix",
    "augment_blocks",
    "adapt_test_mixing",
    "harmonize_domfreq_width",
    "stack_features",
]


@dataclass(frozen=True)
class Provenance:
    """How a sample came to be: 'original', 'blocks_mixed', or
    'test_mixed', with the source clip ids for mixed kinds."""

    kind: str = "original"
    sources: tuple[str, ...] = ()

    KINDS = ("original", "blocks_mixed", "test_mixed")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown provenance kind {self.kind!r}")
        if self.kind != "original" and len(self.sources) != 2:
            raise ValueError(f"{self.kind} provenance must record both source ids")


@dataclass(frozen=True)
class LabeledSample:
    """One training/evaluation unit: features plus presence label.

    ``label`` is 1 (bird present), 0 (absent), or None (unknown).
    """

    clip_id: str
    features: FeaturePair
    label: int | None
    provenance: Provenance = Provenance()

    def __post_init__(self):
        if self.label not in (0, 1, None):
            raise ValueError(f"label must be 0, 1, or None, got {self.label!r}")


def _mix_features(a: FeaturePair, b: FeaturePair) -> FeaturePair:
    if a.n_frames != b.n_frames:
        raise ValueError(
            f"cannot mix features with different frame counts: "
            f"{a.n_frames} vs {b.n_frames}"
        )
    if a.mbe.shape[1] != b.mbe.shape[1]:
        raise ValueError(
            f"cannot mix features with different band counts: "
            f"{a.mbe.shape[1]} vs {b.mbe.shape[1]}"
        )
    return FeaturePair(
        mbe=np.maximum(a.mbe, b.mbe),
        domfreq=np.concatenate([a.domfreq, b.domfreq], axis=1),
    )


def blocks_mix(a: LabeledSample, b: LabeledSample) -> LabeledSample:
    """Mix two labeled samples; the result is absent only if both are."""
    if a.label is None or b.label is None:
        raise ValueError("mixing requires labeled samples")
    return LabeledSample(
        clip_id=f"{a.clip_id}+{b.clip_id}",
        features=_mix_features(a.features, b.features),
        label=1 if (a.label == 1 or b.label == 1) else 0,
        provenance=Provenance("blocks_mixed", (a.clip_id, b.clip_id)),
    )


def augment_blocks(train: list[LabeledSample],
                   rng: np.random.Generator) -> list[LabeledSample]:
    """Double the set: originals plus one mix per original with a
    uniformly drawn partner (never itself)."""
    n = len(train)
    if n < 2:
        raise ValueError("blocks mixing needs at least 2 samples")
    mixed = []
    for i, sample in enumerate(train):
        j = int(rng.integers(0, n - 1))
        if j >= i:
            j += 1
        mixed.append(blocks_mix(sample, train[j]))
    return list(train) + mixed


def adapt_test_mixing(train: list[LabeledSample], test_features: list[FeaturePair],
                      rng: np.random.Generator,
                      test_ids: list[str] | None = None) -> list[LabeledSample]:
    """Double the positive class: each present-labeled sample is mixed
    with one uniformly drawn test clip, and the mix stays present.

    ``test_ids`` names the test clips in provenance records; positional
    names are used when omitted.
    """
    if not test_features:
        raise ValueError("test mixing needs at least one test clip")
    if any(s.label is None for s in train):
        raise ValueError("mixing requires labeled samples")
    if test_ids is None:
        test_ids = [f"test[{i}]" for i in range(len(test_features))]
    elif len(test_ids) != len(test_features):
        raise ValueError(
            f"{len(test_ids)} ids for {len(test_features)} test clips"
        )
    positives = [s for s in train if s.label == 1]
    if not positives:
        raise ValueError("test mixing needs at least one present-labeled sample")
    mixed = []
    for sample in positives:
        j = int(rng.integers(0, len(test_features)))
        mixed.append(LabeledSample(
            clip_id=f"{sample.clip_id}+{test_ids[j]}",
            features=_mix_features(sample.features, test_features[j]),
            label=1,
            provenance=Provenance("test_mixed", (sample.clip_id, test_ids[j])),
        ))
    return list(train) + mixed


def harmonize_domfreq_width(samples: list[LabeledSample],
                            width: int | None = None) -> list[LabeledSample]:
    """Promote every sample's peak-slot width to ``width`` (default: the
    widest in the set) by repeating its slots."""
    if not samples:
        return []
    widths = [s.features.domfreq.shape[1] for s in samples]
    target = max(widths) if width is None else width
    out = []
    for sample, w in zip(samples, widths):
        if w == target:
            out.append(sample)
            continue
        if target % w:
            raise ValueError(
                f"cannot widen {sample.clip_id!r} from {w} peak slots to {target}: "
                f"not an integer multiple"
            )
        features = FeaturePair(
            mbe=sample.features.mbe,
            domfreq=np.tile(sample.features.domfreq, (1, target // w, 1)),
        )
        out.append(LabeledSample(sample.clip_id, features, sample.label,
                                 sample.provenance))
    return out


def stack_features(samples) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stack a sample sequence into batched arrays.

    Returns (mbe (N,T,M), domfreq (N,T,K,2), labels (N,)); unknown
    labels become NaN. All samples must agree in shape.
    """
    if not samples:
        raise ValueError("cannot stack an empty sample list")
    first = samples[0].features
    for s in samples:
        if s.features.mbe.shape != first.mbe.shape:
            raise ValueError(
                f"sample {s.clip_id!r} has mel shape {s.features.mbe.shape}, "
                f"expected {first.mbe.shape}"
            )
        if s.features.domfreq.shape != first.domfreq.shape:
            raise ValueError(
                f"sample {s.clip_id!r} has peak shape {s.features.domfreq.shape}, "
                f"expected {first.domfreq.shape}"
            )
    mbe = np.stack([s.features.mbe for s in samples])
    domfreq = np.stack([s.features.domfreq for s in samples])
    labels = np.array([np.nan if s.label is None else float(s.label)
                       for s in samples])
    return mbe, domfreq, labels
