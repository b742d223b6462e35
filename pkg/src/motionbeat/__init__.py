"""Beat-synchronous music-motion representation learning at desk scale.

Library layout:

* :mod:`motionbeat.rhythm` — beat grids, beat-synchronous tokenization,
  rhythm annotations, synthetic paired data.
* :mod:`motionbeat.align` — differentiable Soft-DTW and 1-D EMD kernels
  with brute-force oracles.
* :mod:`motionbeat.model` — encoder stacks with bar-phase rotations and
  contact-guided attention, built on a small reverse-mode autodiff core
  (:mod:`motionbeat.autodiff`).
* :mod:`motionbeat.losses` — the embodied contrastive objective with
  structured negatives and the structural rhythm alignment loss.
* :mod:`motionbeat.training` / :mod:`motionbeat.evaluation` — AdamW,
  the training loop, retrieval metrics, beat alignment score.
* :mod:`motionbeat.cli` — `motionbeat` command-line entry point.
"""

from motionbeat.rhythm import (
    BeatGrid,
    RhythmAnnotation,
    SyntheticPairSpec,
    TokenSequence,
    bar_mass,
    beat_shift,
    build_beat_grid,
    generate_synthetic_pair,
    log_mel_spectrogram,
    motion_kinematics_per_beat,
    onset_envelope_per_beat,
    pool_per_beat,
)
from motionbeat.align import (
    AlignmentResult,
    SoftDtwConfig,
    emd_1d,
    emd_oracle,
    hard_dtw_oracle,
    soft_dtw,
)

__all__ = [
    "BeatGrid",
    "RhythmAnnotation",
    "SyntheticPairSpec",
    "TokenSequence",
    "bar_mass",
    "beat_shift",
    "build_beat_grid",
    "generate_synthetic_pair",
    "log_mel_spectrogram",
    "motion_kinematics_per_beat",
    "onset_envelope_per_beat",
    "pool_per_beat",
    "AlignmentResult",
    "SoftDtwConfig",
    "emd_1d",
    "emd_oracle",
    "hard_dtw_oracle",
    "soft_dtw",
]
