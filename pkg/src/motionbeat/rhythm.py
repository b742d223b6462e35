"""Beat grids, beat-synchronous features, and synthetic paired data.

Everything downstream (encoders, objectives, retrieval) operates on
fixed-length sequences of per-beat tokens. This module owns the temporal
skeleton (:class:`BeatGrid`), the pooling from frame-level features onto
it, the rhythm annotations consumed by the structural alignment loss, and
a controllable generator of paired audio/motion clips that substitutes
for real mocap data at desk scale.
"""

import math
from dataclasses import dataclass, replace

import numpy as np

# STFT parameters for audio ingestion; chosen so a beat at 120 BPM spans
# at least 4 analysis frames at the default rate.
SAMPLE_RATE_DEFAULT = 22050
STFT_WINDOW = 1024
STFT_HOP = 256
LOG_EPS = 1e-6

# Synthetic token layout (see generate_synthetic_pair).
AUDIO_DIM = 16
MOTION_DIM = 16
NUM_CONTENT_CLUSTERS = 6
_ECHO_RNG = np.random.default_rng(20240917)
_AUDIO_ECHO = _ECHO_RNG.normal(size=4)
_MOTION_ECHO = _ECHO_RNG.normal(size=4)


@dataclass(frozen=True)
class BeatGrid:
    """Constant-tempo grid of `num_beats_K` beats grouped into bars of `bar_len_B`.

    `phase_offset` is the beat index of the first downbeat, in [0, bar_len_B).
    """

    bpm: float
    bar_len_B: int
    num_beats_K: int
    beat_boundaries: np.ndarray
    phase_offset: int

    @property
    def beat_duration(self) -> float:
        return 60.0 / self.bpm

    def bar_position(self, t) -> np.ndarray:
        """Position of beat `t` within its bar; 0 at downbeats."""
        return (np.asarray(t) - self.phase_offset) % self.bar_len_B


def build_beat_grid(bpm, bar_len_B, num_beats_K, phase_offset=0) -> BeatGrid:
    if not bpm > 0:
        raise ValueError(f"bpm must be positive, got {bpm}")
    if bar_len_B < 1:
        raise ValueError(f"bar_len_B must be >= 1, got {bar_len_B}")
    if num_beats_K < 1:
        raise ValueError(f"num_beats_K must be >= 1, got {num_beats_K}")
    if not 0 <= phase_offset < bar_len_B:
        raise ValueError(
            f"phase_offset must be in [0, {bar_len_B}), got {phase_offset}"
        )
    boundaries = np.arange(num_beats_K + 1, dtype=np.float64) * (60.0 / bpm)
    return BeatGrid(
        bpm=float(bpm),
        bar_len_B=int(bar_len_B),
        num_beats_K=int(num_beats_K),
        beat_boundaries=boundaries,
        phase_offset=int(phase_offset),
    )


@dataclass(frozen=True)
class RhythmAnnotation:
    """Per-beat rhythm signals plus within-bar mass distributions.

    `onset_envelope` is nonnegative with one value per beat;
    `contact_pulse` lies in [0, 1] per beat; the two bar-mass arrays are
    (num_bars, bar_len_B) with each row on the simplex.
    """

    onset_envelope: np.ndarray
    contact_pulse: np.ndarray
    bar_accent_mass: np.ndarray
    bar_energy_mass: np.ndarray

    def validate(self, num_beats=None):
        if num_beats is not None and self.onset_envelope.shape != (num_beats,):
            raise ValueError("onset_envelope length mismatch")
        if np.any(self.onset_envelope < 0):
            raise ValueError("onset_envelope must be nonnegative")
        if np.any(self.contact_pulse < 0) or np.any(self.contact_pulse > 1):
            raise ValueError("contact_pulse must lie in [0, 1]")
        for name, mass in (
            ("bar_accent_mass", self.bar_accent_mass),
            ("bar_energy_mass", self.bar_energy_mass),
        ):
            if np.any(mass < 0):
                raise ValueError(f"{name} must be nonnegative")
            if np.any(np.abs(mass.sum(axis=1) - 1.0) > 1e-6):
                raise ValueError(f"{name} rows must sum to 1")
        return self


@dataclass(frozen=True)
class TokenSequence:
    """K per-beat feature vectors for one modality, with rhythm annotations."""

    modality: str
    tokens: np.ndarray
    grid: BeatGrid
    annotation: RhythmAnnotation

    def __post_init__(self):
        if self.modality not in ("audio", "motion"):
            raise ValueError(f"unknown modality {self.modality!r}")
        if self.tokens.shape[0] != self.grid.num_beats_K:
            raise ValueError(
                f"tokens have {self.tokens.shape[0]} rows, grid has "
                f"{self.grid.num_beats_K} beats"
            )
        if not np.all(np.isfinite(self.tokens)):
            raise ValueError("tokens must be finite")


@dataclass(frozen=True)
class SyntheticPairSpec:
    """Controls for one generated audio/motion pair.

    `contact_lag_std` is the standard deviation, in beats, of the timing
    noise on motion contacts relative to the audio accents they answer.
    """

    bpm_range: tuple
    bar_len_B: int
    num_beats_K: int
    accent_pattern: np.ndarray
    contact_lag_std: float = 0.0
    feature_noise_std: float = 0.0
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.bpm_range
        if not lo <= hi:
            raise ValueError("bpm_range must satisfy min <= max")
        if self.contact_lag_std < 0 or self.feature_noise_std < 0:
            raise ValueError("noise standard deviations must be >= 0")
        pattern = np.asarray(self.accent_pattern, dtype=np.float64)
        if pattern.shape != (self.bar_len_B,):
            raise ValueError("accent_pattern must have bar_len_B entries")
        if np.any(pattern < 0):
            raise ValueError("accent_pattern must be nonnegative")
        object.__setattr__(self, "accent_pattern", pattern)


# -- audio features -------------------------------------------------------


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(sample_rate, n_fft, n_mels, fmin=0.0, fmax=None):
    """Triangular mel filters as an (n_mels, n_fft//2 + 1) weight matrix."""
    if fmax is None:
        fmax = sample_rate / 2.0
    mel_points = np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2)
    hz_points = mel_to_hz(mel_points)
    bin_freqs = np.fft.rfftfreq(n_fft, d=1.0 / sample_rate)
    weights = np.zeros((n_mels, bin_freqs.size))
    for i in range(n_mels):
        left, center, right = hz_points[i], hz_points[i + 1], hz_points[i + 2]
        up = (bin_freqs - left) / max(center - left, 1e-12)
        down = (right - bin_freqs) / max(right - center, 1e-12)
        weights[i] = np.clip(np.minimum(up, down), 0.0, None)
    return weights


def log_mel_spectrogram(samples, sample_rate, n_mels=128):
    """Log-magnitude mel spectrogram, frames in rows.

    Hann-windowed STFT (window 1024, hop 256), magnitude spectra through
    a triangular mel filterbank, then log(x + 1e-6).
    """
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 1:
        raise ValueError("samples must be mono (1-D)")
    if n_mels < 1:
        raise ValueError("n_mels must be >= 1")
    if not sample_rate > 0:
        raise ValueError("sample_rate must be positive")
    if samples.size < STFT_WINDOW:
        raise ValueError(
            f"need at least {STFT_WINDOW} samples (one analysis window), "
            f"got {samples.size}"
        )
    window = np.hanning(STFT_WINDOW)
    n_frames = 1 + (samples.size - STFT_WINDOW) // STFT_HOP
    starts = np.arange(n_frames) * STFT_HOP
    frames = np.stack([samples[s : s + STFT_WINDOW] * window for s in starts])
    mags = np.abs(np.fft.rfft(frames, axis=1))
    mel = mags @ mel_filterbank(sample_rate, STFT_WINDOW, n_mels).T
    return np.log(mel + LOG_EPS)


def mel_frame_times(n_frames, sample_rate):
    """Center timestamps of the STFT frames produced by log_mel_spectrogram."""
    starts = np.arange(n_frames) * STFT_HOP
    return (starts + STFT_WINDOW / 2.0) / sample_rate


# -- pooling onto the grid --------------------------------------------------


def _beat_indices(frame_times, grid):
    frame_times = np.asarray(frame_times, dtype=np.float64)
    if np.any(np.diff(frame_times) < 0):
        raise ValueError("frame_times must be monotone nondecreasing")
    idx = np.searchsorted(grid.beat_boundaries, frame_times, side="right") - 1
    return frame_times, idx


def pool_per_beat(frames, frame_times, grid):
    """Mean of the frames falling in each beat interval [b_t, b_{t+1})."""
    frames = np.asarray(frames, dtype=np.float64)
    frame_times, idx = _beat_indices(frame_times, grid)
    if frames.shape[0] != frame_times.size:
        raise ValueError("frames and frame_times disagree on frame count")
    pooled = np.zeros((grid.num_beats_K, frames.shape[1]))
    for t in range(grid.num_beats_K):
        in_beat = idx == t
        if not np.any(in_beat):
            raise ValueError(f"beat {t} contains no frames")
        pooled[t] = frames[in_beat].mean(axis=0)
    return pooled


def onset_envelope_per_beat(frames, frame_times, grid):
    """Half-wave-rectified spectral flux, max-pooled within each beat."""
    frames = np.asarray(frames, dtype=np.float64)
    flux = np.zeros(frames.shape[0])
    if frames.shape[0] > 1:
        diffs = np.diff(frames, axis=0)
        flux[1:] = np.clip(diffs, 0.0, None).sum(axis=1)
    frame_times, idx = _beat_indices(frame_times, grid)
    envelope = np.zeros(grid.num_beats_K)
    for t in range(grid.num_beats_K):
        in_beat = idx == t
        if not np.any(in_beat):
            raise ValueError(f"beat {t} contains no frames")
        envelope[t] = flux[in_beat].max()
    return envelope


def motion_kinematics_per_beat(
    joint_positions,
    frame_times,
    grid,
    height_threshold=0.05,
    speed_threshold=0.1,
    contact_joint=0,
    height_axis=2,
):
    """Beat-pooled kinematic tokens plus energy and foot-contact signals.

    Tokens concatenate pooled positions, velocities, and accelerations
    (9 features per joint). Energy is the mean squared joint speed inside
    each beat. Contact probability is the fraction of frames where the
    designated end-effector is both low (height < height_threshold along
    `height_axis`) and slow (speed < speed_threshold).
    """
    pos = np.asarray(joint_positions, dtype=np.float64)
    if pos.ndim != 3 or pos.shape[2] != 3:
        raise ValueError("joint_positions must be (frames, joints, 3)")
    if pos.shape[0] < 3:
        raise ValueError("need at least 3 frames for velocity/acceleration")
    frame_times = np.asarray(frame_times, dtype=np.float64)

    vel = np.gradient(pos, frame_times, axis=0)
    acc = np.gradient(vel, frame_times, axis=0)
    n_frames, n_joints, _ = pos.shape
    feats = np.concatenate(
        [pos.reshape(n_frames, -1), vel.reshape(n_frames, -1), acc.reshape(n_frames, -1)],
        axis=1,
    )
    tokens = pool_per_beat(feats, frame_times, grid)

    speed = np.linalg.norm(vel, axis=2)
    sq_speed = (speed**2).mean(axis=1)
    effector_low = pos[:, contact_joint, height_axis] < height_threshold
    effector_slow = speed[:, contact_joint] < speed_threshold
    contact_frame = (effector_low & effector_slow).astype(np.float64)

    _, idx = _beat_indices(frame_times, grid)
    energy = np.zeros(grid.num_beats_K)
    contacts = np.zeros(grid.num_beats_K)
    for t in range(grid.num_beats_K):
        in_beat = idx == t
        if not np.any(in_beat):
            raise ValueError(f"beat {t} contains no frames")
        energy[t] = sq_speed[in_beat].mean()
        contacts[t] = contact_frame[in_beat].mean()
    return tokens, energy, contacts


def bar_mass(per_beat_values, grid):
    """Within-bar distributions of a nonnegative per-beat signal.

    Beats are grouped into consecutive blocks of B, and within each block
    values are laid out by bar position (downbeat first), so rows are
    comparable across clips with different phase offsets. A bar with zero
    total mass falls back to the uniform distribution, which keeps the
    transport distance finite and its gradient zero there.
    """
    vals = np.asarray(per_beat_values, dtype=np.float64)
    if np.any(vals < 0):
        raise ValueError("per-beat values must be nonnegative")
    B, K = grid.bar_len_B, grid.num_beats_K
    if vals.shape != (K,):
        raise ValueError("expected one value per beat")
    if K % B != 0:
        raise ValueError(f"{K} beats do not divide into complete bars of {B}")
    blocks = vals.reshape(K // B, B)
    blocks = np.roll(blocks, -grid.phase_offset, axis=1)
    sums = blocks.sum(axis=1, keepdims=True)
    out = np.where(sums > 0, blocks / np.where(sums > 0, sums, 1.0), 1.0 / B)
    return out


def beat_shift(seq: TokenSequence, delta_beats: int) -> TokenSequence:
    """Circularly shift a token sequence and its annotations by whole beats.

    Positive delta delays content: the token at beat t moves to beat
    t + delta (mod K). Bar masses are shifted in their flattened per-beat
    layout, which composes exactly (the circular-shift group law); for
    deltas that are not whole bars the shifted rows splice adjacent bars
    and are no longer normalized, which is acceptable for the jittered
    negatives this is used to build.
    """
    K = seq.grid.num_beats_K
    if abs(delta_beats) >= K:
        raise ValueError(f"|delta_beats| must be < {K}, got {delta_beats}")
    d = int(delta_beats)
    ann = seq.annotation
    num_bars = ann.bar_accent_mass.shape[0]

    def roll_mass(mass):
        return np.roll(mass.reshape(-1), d).reshape(num_bars, -1)

    shifted = RhythmAnnotation(
        onset_envelope=np.roll(ann.onset_envelope, d),
        contact_pulse=np.roll(ann.contact_pulse, d),
        bar_accent_mass=roll_mass(ann.bar_accent_mass),
        bar_energy_mass=roll_mass(ann.bar_energy_mass),
    )
    return TokenSequence(
        modality=seq.modality,
        tokens=np.roll(seq.tokens, d, axis=0),
        grid=seq.grid,
        annotation=shifted,
    )


# -- synthetic paired data ---------------------------------------------------


def _spill_events(weights, lags, num_beats):
    """Place event mass at fractional beat positions, split linearly.

    Event t lands at t + lags[t]; its weight splits between the two
    neighboring integer beats so the center of mass equals the landing
    position exactly (circular in t).
    """
    out = np.zeros(num_beats)
    for t, (w, lag) in enumerate(zip(weights, lags)):
        if w <= 0:
            continue
        tau = t + lag
        lo = math.floor(tau)
        frac = tau - lo
        out[lo % num_beats] += w * (1.0 - frac)
        out[(lo + 1) % num_beats] += w * frac
    return out


def generate_synthetic_pair(spec: SyntheticPairSpec):
    """One rhythm-consistent audio/motion pair, deterministic under the seed.

    The audio onset envelope repeats `accent_pattern` across bars; motion
    contacts answer every accent after a Gaussian timing lag
    (`contact_lag_std`, in beats), and motion energy carries the same
    lagged accent mass. Both token matrices embed their rhythm signals,
    a shared cluster identity, and white feature noise.

    Returns (audio: TokenSequence, motion: TokenSequence).
    """
    rng = np.random.default_rng(spec.seed)
    K, B = spec.num_beats_K, spec.bar_len_B
    bpm = float(rng.uniform(spec.bpm_range[0], spec.bpm_range[1]))
    grid = build_beat_grid(bpm, B, K, phase_offset=0)

    onset = spec.accent_pattern[np.arange(K) % B].astype(np.float64)

    lags = (
        rng.normal(0.0, spec.contact_lag_std, size=K)
        if spec.contact_lag_std > 0
        else np.zeros(K)
    )
    energy = _spill_events(onset, lags, K)
    peak = energy.max()
    contact = np.clip(energy / peak, 0.0, 1.0) if peak > 0 else np.zeros(K)

    cluster = int(rng.integers(NUM_CONTENT_CLUSTERS))
    content = np.zeros(NUM_CONTENT_CLUSTERS)
    content[cluster] = 1.0

    audio_tokens = np.zeros((K, AUDIO_DIM))
    audio_tokens[:, 0] = onset
    audio_tokens[:, 1:5] = onset[:, None] * _AUDIO_ECHO[None, :]
    audio_tokens[:, 5:11] = content[None, :]

    motion_tokens = np.zeros((K, MOTION_DIM))
    motion_tokens[:, 0] = energy
    motion_tokens[:, 1] = contact
    motion_tokens[:, 2:6] = contact[:, None] * _MOTION_ECHO[None, :]
    motion_tokens[:, 6:12] = content[None, :]

    if spec.feature_noise_std > 0:
        audio_tokens += rng.normal(0.0, spec.feature_noise_std, audio_tokens.shape)
        motion_tokens += rng.normal(0.0, spec.feature_noise_std, motion_tokens.shape)

    audio_ann = RhythmAnnotation(
        onset_envelope=onset,
        contact_pulse=np.zeros(K),
        bar_accent_mass=bar_mass(onset, grid),
        bar_energy_mass=bar_mass(onset, grid),
    ).validate(K)
    motion_ann = RhythmAnnotation(
        onset_envelope=energy,
        contact_pulse=contact,
        bar_accent_mass=bar_mass(contact, grid),
        bar_energy_mass=bar_mass(energy, grid),
    ).validate(K)

    audio = TokenSequence("audio", audio_tokens, grid, audio_ann)
    motion = TokenSequence("motion", motion_tokens, grid, motion_ann)
    return audio, motion


def derive_pair_spec(base: SyntheticPairSpec, pair_index: int) -> SyntheticPairSpec:
    """Per-pair spec for dataset generation: seeded accent variation.

    Pair i reseeds to base.seed + i and replaces the accent pattern with a
    rotated, multiplicatively jittered copy of the base pattern
    (renormalized to peak 1), so a generated dataset contains clips that
    share tempo ranges but differ in bar-phase and accent structure.
    """
    rng = np.random.default_rng((base.seed, pair_index, 0xACC))
    B = base.bar_len_B
    rot = int(rng.integers(B))
    jitter = 1.0 + 0.25 * rng.uniform(-1.0, 1.0, size=B)
    pattern = np.roll(base.accent_pattern, rot) * jitter
    peak = pattern.max()
    if peak > 0:
        pattern = pattern / peak
    return replace(base, accent_pattern=pattern, seed=base.seed + pair_index)
