"""Training objectives: embodied contrastive loss and rhythm alignment.

The contrastive objective extends in-batch InfoNCE with two structured
negative categories per anchor: tempo-aware negatives (clips with similar
BPM but different bar-phase/accent structure, mined from a pool) and
beat-jitter negatives (the anchor's own motion clip shifted by +-1 beat).
Structured negatives enter the denominator as constants (stop-gradient);
in-batch negatives are differentiable as in standard InfoNCE.

The structural rhythm alignment loss couples the modalities at two time
scales: a Soft-DTW term between the onset envelope and the contact pulse,
and a per-bar earth-mover term between accent mass and energy mass. Both
kernels provide analytic gradients, spliced into the autodiff graph as
custom nodes so the loss can train the rhythm heads.
"""

from dataclasses import dataclass, field

import numpy as np

from motionbeat import autodiff as ad
from motionbeat.align import SoftDtwConfig, emd_1d, soft_dtw
from motionbeat.rhythm import BeatGrid, TokenSequence, beat_shift


@dataclass(frozen=True)
class LossWeights:
    tau: float = 0.07
    lambda_beat: float = 0.9
    lambda_bar: float = 0.2
    alpha: float = 0.2

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if min(self.lambda_beat, self.lambda_bar, self.alpha) < 0:
            raise ValueError("loss weights must be >= 0")


@dataclass
class NegativeSet:
    """Per-anchor negatives for the contrastive denominator.

    batch_negs: indices into the batch's motion embeddings (anchor's own
    index excluded); tempo_negs: indices into a separately encoded tempo
    pool; jitter_negs: (n, d) embeddings of the anchor's shifted clip.
    """

    batch_negs: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    tempo_negs: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    jitter_negs: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))


def mine_tempo_negatives(anchor, pool, count, bpm_tol, seed=0):
    """Indices of pool clips with similar BPM but different rhythm identity.

    A candidate qualifies when |bpm - anchor.bpm| <= bpm_tol * anchor.bpm
    and its (phase_offset, accent_pattern) differs from the anchor's. At
    most `count` indices are returned; oversupply is subsampled with the
    given seed, undersupply returns whatever exists.
    """
    if bpm_tol < 0:
        raise ValueError("bpm_tol must be >= 0")
    candidates = []
    for clip in pool:
        if clip.index == anchor.index:
            continue
        if abs(clip.bpm - anchor.bpm) > bpm_tol * anchor.bpm:
            continue
        same_phase = clip.phase_offset == anchor.phase_offset
        same_accent = clip.accent_pattern.shape == anchor.accent_pattern.shape and np.allclose(
            clip.accent_pattern, anchor.accent_pattern, atol=1e-12
        )
        if same_phase and same_accent:
            continue
        candidates.append(clip.index)
    if len(candidates) <= count:
        return np.array(candidates, dtype=int)
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(candidates, size=count, replace=False))


def make_beat_jitter_negatives(anchor_motion: TokenSequence, model) -> np.ndarray:
    """Embeddings of the anchor's motion shifted by +1 and -1 beats.

    Encoded without gradient: jitter negatives act as constants in the
    anchor's loss (the clip still receives gradients as a positive).
    """
    if anchor_motion.grid.num_beats_K < 2:
        raise ValueError("beat-jitter negatives need at least 2 beats")
    embs = []
    with ad.no_grad():
        for delta in (+1, -1):
            shifted = beat_shift(anchor_motion, delta)
            embs.append(model.encode_motion(shifted).z.data)
    return np.stack(embs)


def _check_unit_rows(name, rows):
    norms = np.linalg.norm(np.atleast_2d(rows), axis=1)
    if np.any(np.abs(norms - 1.0) > 1e-3):
        raise ValueError(f"{name} must be unit-norm (max deviation {np.abs(norms - 1).max():.2e})")


def ecl_loss_graph(z_a, z_m, negsets, tau, tempo_pool=None):
    """Embodied contrastive loss over Tensor embeddings (graph-building).

    z_a, z_m: (N, d) Tensors of unit-norm anchor/positive embeddings.
    Per anchor i the denominator collects the positive, the listed
    in-batch negatives, and the similarity of the anchor with each tempo
    and jitter negative embedding (held constant).
    """
    if not tau > 0:
        raise ValueError("tau must be positive")
    z_a, z_m = ad.as_tensor(z_a), ad.as_tensor(z_m)
    N = z_a.shape[0]
    if z_m.shape[0] != N or len(negsets) != N:
        raise ValueError("anchors, positives, and negative sets must align")
    _check_unit_rows("anchors", z_a.data)
    _check_unit_rows("positives", z_m.data)

    sims = ad.mul(ad.matmul(z_a, z_m.swapaxes(0, 1)), 1.0 / tau)
    per_anchor = []
    for i, negs in enumerate(negsets):
        if np.any(np.asarray(negs.batch_negs) == i):
            raise ValueError(f"anchor {i}: batch negatives collide with the positive")
        parts = [sims[i, i].reshape(1)]
        if len(negs.batch_negs):
            parts.append(sims[i, np.asarray(negs.batch_negs, dtype=int)])
        if len(negs.tempo_negs):
            if tempo_pool is None:
                raise ValueError("tempo_negs given but no tempo_pool")
            sel = np.asarray(tempo_pool)[np.asarray(negs.tempo_negs, dtype=int)]
            _check_unit_rows("tempo pool", sel)
            t_sims = ad.mul(ad.matmul(z_a[i : i + 1, :], ad.Tensor(sel.T)), 1.0 / tau)
            parts.append(t_sims.reshape(len(negs.tempo_negs)))
        if len(negs.jitter_negs):
            jit = np.asarray(negs.jitter_negs)
            _check_unit_rows("jitter negatives", jit)
            j_sims = ad.mul(ad.matmul(z_a[i : i + 1, :], ad.Tensor(jit.T)), 1.0 / tau)
            parts.append(j_sims.reshape(jit.shape[0]))
        logits = ad.concat(parts) if len(parts) > 1 else parts[0]
        lse = ad.logsumexp_last(logits).reshape(1)
        per_anchor.append(ad.add(lse, ad.mul(parts[0], -1.0)))
    return ad.tmean(ad.concat(per_anchor))


def ecl_loss(z_a, z_m, negsets, tau, tempo_pool=None):
    """Array-facing wrapper: returns (value, (grad_z_a, grad_z_m))."""
    ta = ad.Tensor(np.asarray(z_a, dtype=np.float64), requires_grad=True)
    tm = ad.Tensor(np.asarray(z_m, dtype=np.float64), requires_grad=True)
    loss = ecl_loss_graph(ta, tm, negsets, tau, tempo_pool=tempo_pool)
    loss.backward()
    grad_a = ta.grad if ta.grad is not None else np.zeros_like(ta.data)
    grad_m = tm.grad if tm.grad is not None else np.zeros_like(tm.data)
    return float(loss.data), (grad_a, grad_m)


# -- rhythm alignment ----------------------------------------------------------


def softdtw_node(a, b, cfg: SoftDtwConfig):
    """Soft-DTW as a custom graph node with its analytic gradients."""
    a, b = ad.as_tensor(a), ad.as_tensor(b)
    res = soft_dtw(a.data, b.data, cfg)
    return ad.custom_op(
        res.value, (a, b), (lambda g: g * res.grad_a, lambda g: g * res.grad_b)
    )


def emd_node(p, q):
    """1-D EMD as a custom graph node; subgradients on both sides."""
    p, q = ad.as_tensor(p), ad.as_tensor(q)
    value, grad_p = emd_1d(p.data, q.data)
    _, grad_q = emd_1d(q.data, p.data)
    return ad.custom_op(value, (p, q), (lambda g: g * grad_p, lambda g: g * grad_q))


def bar_mass_graph(per_beat, grid: BeatGrid, eps=1e-12):
    """Differentiable within-bar normalization of a per-beat Tensor."""
    per_beat = ad.as_tensor(per_beat)
    B, K = grid.bar_len_B, grid.num_beats_K
    if K % B != 0:
        raise ValueError(f"{K} beats do not divide into complete bars of {B}")
    order = (
        np.arange(K).reshape(K // B, B)
        if grid.phase_offset == 0
        else np.roll(np.arange(K).reshape(K // B, B), -grid.phase_offset, axis=1)
    )
    blocks = per_beat[order.reshape(-1)].reshape((K // B, B))
    sums = ad.tsum(blocks, axis=1, keepdims=True)
    return ad.div(blocks, ad.add(sums, eps))


def sral_loss_graph(onset, contact, accent_mass, energy_mass, weights: LossWeights,
                    sdtw_cfg: SoftDtwConfig = SoftDtwConfig()):
    """SRAL over Tensors: lambda_beat * SoftDTW + lambda_bar * mean bar EMD.

    accent_mass / energy_mass are (num_bars, B) Tensors with simplex rows.
    """
    beat_term = softdtw_node(onset, contact, sdtw_cfg)
    accent_mass, energy_mass = ad.as_tensor(accent_mass), ad.as_tensor(energy_mass)
    num_bars = accent_mass.shape[0]
    bar_terms = [
        emd_node(accent_mass[j, :], energy_mass[j, :]).reshape(1)
        for j in range(num_bars)
    ]
    bar_term = ad.tmean(ad.concat(bar_terms))
    return ad.add(
        ad.mul(beat_term, weights.lambda_beat), ad.mul(bar_term, weights.lambda_bar)
    )


def sral_loss(onset, contact, accent_mass, energy_mass, weights: LossWeights,
              sdtw_cfg: SoftDtwConfig = SoftDtwConfig()):
    """Array-facing SRAL: returns (value, grads dict).

    grads holds d(value)/d(onset), /d(contact), /d(accent_mass),
    /d(energy_mass); the bar-mass gradients are the per-bar EMD
    subgradients scaled by lambda_bar / num_bars.
    """
    tens = {
        "onset": ad.Tensor(np.asarray(onset, dtype=np.float64), requires_grad=True),
        "contact": ad.Tensor(np.asarray(contact, dtype=np.float64), requires_grad=True),
        "accent_mass": ad.Tensor(np.asarray(accent_mass, dtype=np.float64), requires_grad=True),
        "energy_mass": ad.Tensor(np.asarray(energy_mass, dtype=np.float64), requires_grad=True),
    }
    loss = sral_loss_graph(
        tens["onset"], tens["contact"], tens["accent_mass"], tens["energy_mass"],
        weights, sdtw_cfg,
    )
    loss.backward()
    grads = {
        name: (t.grad if t.grad is not None else np.zeros_like(t.data))
        for name, t in tens.items()
    }
    return float(loss.data), grads


def total_loss(ecl_value, sral_value, alpha):
    """Total objective: contrastive term plus alpha-weighted rhythm term."""
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    if isinstance(ecl_value, ad.Tensor) or isinstance(sral_value, ad.Tensor):
        return ad.add(ad.as_tensor(ecl_value), ad.mul(ad.as_tensor(sral_value), alpha))
    return ecl_value + alpha * sral_value


# -- auxiliary head supervision -------------------------------------------------


def onset_regression_loss(pred, target):
    """Mean squared error of the onset head against the annotated envelope."""
    diff = ad.add(ad.as_tensor(pred), -np.asarray(target, dtype=np.float64))
    return ad.tmean(ad.mul(diff, diff))


def contact_bce_loss(pred, target, eps=1e-12):
    """Binary cross-entropy of the contact head against annotated pulses."""
    pred = ad.as_tensor(pred)
    target = np.asarray(target, dtype=np.float64)
    pos = ad.mul(ad.log(ad.add(pred, eps)), target)
    neg = ad.mul(ad.log(ad.add(ad.mul(pred, -1.0), 1.0 + eps)), 1.0 - target)
    return ad.mul(ad.tmean(ad.add(pos, neg)), -1.0)
