"""Dataset records, JSONL persistence, WAV ingestion, and split hashing.

One dataset file holds one JSON object per line, one line per paired
clip. Field names are part of the on-disk contract:

    pair_id            int
    bpm                float
    bar_len            int
    num_beats          int
    phase_offset       int
    accent_pattern     [bar_len floats]      generator metadata, used for
                                             tempo-negative mining
    audio_tokens       [num_beats][F floats]
    motion_tokens      [num_beats][M floats]
    audio_onset        [num_beats floats]
    audio_accent_mass  [bars][bar_len floats]
    motion_contact     [num_beats floats]
    motion_energy_mass [bars][bar_len floats]
"""

import hashlib
import json
from dataclasses import dataclass

import numpy as np
from scipy.io import wavfile

from motionbeat.rhythm import (
    BeatGrid,
    RhythmAnnotation,
    SyntheticPairSpec,
    TokenSequence,
    bar_mass,
    build_beat_grid,
    derive_pair_spec,
    generate_synthetic_pair,
)


@dataclass(frozen=True)
class PairRecord:
    pair_id: int
    audio: TokenSequence
    motion: TokenSequence
    accent_pattern: np.ndarray

    @property
    def grid(self) -> BeatGrid:
        return self.audio.grid


@dataclass(frozen=True)
class ClipMeta:
    """The fields tempo-negative mining filters on."""

    index: int
    bpm: float
    phase_offset: int
    accent_pattern: np.ndarray


def clip_metadata(records):
    return [
        ClipMeta(
            index=i,
            bpm=r.grid.bpm,
            phase_offset=r.grid.phase_offset,
            accent_pattern=r.accent_pattern,
        )
        for i, r in enumerate(records)
    ]


def generate_dataset(spec: SyntheticPairSpec, count: int):
    """`count` pairs with per-pair seeds spec.seed + i and varied accents."""
    records = []
    for i in range(count):
        pair_spec = derive_pair_spec(spec, i)
        audio, motion = generate_synthetic_pair(pair_spec)
        records.append(
            PairRecord(
                pair_id=i,
                audio=audio,
                motion=motion,
                accent_pattern=pair_spec.accent_pattern,
            )
        )
    return records


def record_to_dict(record: PairRecord) -> dict:
    grid = record.grid
    return {
        "pair_id": record.pair_id,
        "bpm": grid.bpm,
        "bar_len": grid.bar_len_B,
        "num_beats": grid.num_beats_K,
        "phase_offset": grid.phase_offset,
        "accent_pattern": record.accent_pattern.tolist(),
        "audio_tokens": record.audio.tokens.tolist(),
        "motion_tokens": record.motion.tokens.tolist(),
        "audio_onset": record.audio.annotation.onset_envelope.tolist(),
        "audio_accent_mass": record.audio.annotation.bar_accent_mass.tolist(),
        "motion_contact": record.motion.annotation.contact_pulse.tolist(),
        "motion_energy_mass": record.motion.annotation.bar_energy_mass.tolist(),
    }


def record_from_dict(d: dict) -> PairRecord:
    grid = build_beat_grid(d["bpm"], d["bar_len"], d["num_beats"], d["phase_offset"])
    onset = np.asarray(d["audio_onset"], dtype=np.float64)
    contact = np.asarray(d["motion_contact"], dtype=np.float64)
    accent_mass = np.asarray(d["audio_accent_mass"], dtype=np.float64)
    energy_mass = np.asarray(d["motion_energy_mass"], dtype=np.float64)
    audio_ann = RhythmAnnotation(
        onset_envelope=onset,
        contact_pulse=np.zeros_like(onset),
        bar_accent_mass=accent_mass,
        bar_energy_mass=accent_mass,
    )
    motion_ann = RhythmAnnotation(
        onset_envelope=contact,
        contact_pulse=contact,
        bar_accent_mass=bar_mass(contact, grid),
        bar_energy_mass=energy_mass,
    )
    audio = TokenSequence(
        "audio", np.asarray(d["audio_tokens"], dtype=np.float64), grid, audio_ann
    )
    motion = TokenSequence(
        "motion", np.asarray(d["motion_tokens"], dtype=np.float64), grid, motion_ann
    )
    return PairRecord(
        pair_id=int(d["pair_id"]),
        audio=audio,
        motion=motion,
        accent_pattern=np.asarray(d["accent_pattern"], dtype=np.float64),
    )


def save_pairs_jsonl(path, records):
    with open(path, "w") as fh:
        for record in records:
            fh.write(json.dumps(record_to_dict(record)) + "\n")


def load_pairs_jsonl(path):
    records = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(record_from_dict(json.loads(line)))
    return records


def split_indices(num_pairs, seed):
    """Deterministic 80/10/10 split by hashing pair indices.

    Indices are ranked by sha256(f"{seed}:{index}") so the split is stable
    under reordering of the file and under repeated runs, and the split
    sizes are exact.
    """

    def rank(i):
        return hashlib.sha256(f"{seed}:{i}".encode()).hexdigest()

    order = sorted(range(num_pairs), key=rank)
    n_train = int(num_pairs * 0.8)
    n_val = int(num_pairs * 0.1)
    train = sorted(order[:n_train])
    val = sorted(order[n_train : n_train + n_val])
    test = sorted(order[n_train + n_val :])
    return train, val, test


def load_wav(path):
    """Mono PCM WAV (16-bit int or float32) as float64 samples in [-1, 1]."""
    sample_rate, samples = wavfile.read(path)
    if samples.ndim != 1:
        raise ValueError(f"{path} is not mono ({samples.ndim} channels)")
    if samples.dtype == np.int16:
        samples = samples.astype(np.float64) / 32768.0
    elif samples.dtype in (np.float32, np.float64):
        samples = samples.astype(np.float64)
    else:
        raise ValueError(f"unsupported WAV sample format {samples.dtype}")
    return samples, int(sample_rate)
