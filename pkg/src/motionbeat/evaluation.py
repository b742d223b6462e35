"""Retrieval metrics and the beat alignment score."""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class RetrievalReport:
    direction: str
    recall_at: dict
    median_rank: float

    def to_dict(self):
        return {
            "direction": self.direction,
            "recall_at": {str(k): v for k, v in self.recall_at.items()},
            "median_rank": self.median_rank,
        }


def pair_ranks(sims):
    """Rank of the true pair for each query row of a similarity matrix.

    Candidates are ordered by descending similarity with ties broken by
    candidate index, so reports are deterministic.
    """
    N = sims.shape[0]
    ranks = np.zeros(N, dtype=np.float64)
    idx = np.arange(N)
    for i in range(N):
        row = sims[i]
        better = np.sum(row > row[i])
        tied_before = np.sum((row == row[i]) & (idx < i))
        ranks[i] = 1 + better + tied_before
    return ranks


def eval_retrieval(audio_embs, motion_embs, direction="music_to_motion",
                   ks=(1, 5, 10)) -> RetrievalReport:
    """Recall@K and median rank for one retrieval direction.

    Queries are ranked against all N candidates by dot product; row i of
    either matrix is the true pair of row i of the other.
    """
    audio_embs = np.asarray(audio_embs, dtype=np.float64)
    motion_embs = np.asarray(motion_embs, dtype=np.float64)
    if audio_embs.shape != motion_embs.shape:
        raise ValueError(
            f"embedding shapes differ: {audio_embs.shape} vs {motion_embs.shape}"
        )
    N = audio_embs.shape[0]
    if N < 10:
        raise ValueError(f"retrieval needs at least 10 pairs, got {N}")
    if direction == "music_to_motion":
        sims = audio_embs @ motion_embs.T
    elif direction == "motion_to_music":
        sims = motion_embs @ audio_embs.T
    else:
        raise ValueError(f"unknown direction {direction!r}")
    ranks = pair_ranks(sims)
    recall = {k: float(100.0 * np.mean(ranks <= k)) for k in ks}
    return RetrievalReport(
        direction=direction, recall_at=recall, median_rank=float(np.median(ranks))
    )


def beat_alignment_score(music_beats, motion_kinematic_beats, sigma=0.1) -> float:
    """Mean Gaussian agreement between music beats and motion event times.

    score = mean over music beats t of exp(-min_j (t - t_motion_j)^2 / (2 sigma^2));
    equals 1 iff every music beat coincides exactly with some motion event.
    """
    music = np.asarray(music_beats, dtype=np.float64)
    motion = np.asarray(motion_kinematic_beats, dtype=np.float64)
    if music.size == 0 or motion.size == 0:
        raise ValueError("beat lists must be nonempty")
    if np.any(np.diff(music) < 0) or np.any(np.diff(motion) < 0):
        raise ValueError("beat lists must be sorted")
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    d2 = (music[:, None] - motion[None, :]) ** 2
    return float(np.mean(np.exp(-d2.min(axis=1) / (2.0 * sigma**2))))
