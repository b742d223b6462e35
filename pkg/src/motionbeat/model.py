"""Encoder stacks with bar-phase rotations and contact-guided attention.

Each modality is encoded by a stack of pre-norm transformer blocks whose
queries and keys are rotated, per attention head, by the token's bar
phase (2D channel pairs, one angle per token). Because every token in a
bar of B beats shares the rotation group, attention logits depend only on
relative bar phase: shifting a clip by whole bars leaves logits, and
therefore the pooled clip embedding, unchanged.

The motion branch additionally biases attention logits toward tokens with
high contact probability and reweights their value vectors; both biases
are controlled by learnable nonnegative scalars (stored unconstrained and
mapped through softplus).

All forward passes build an autodiff graph over :class:`~motionbeat.autodiff.Tensor`;
wrap calls in :func:`motionbeat.autodiff.no_grad` when gradients are not
needed (e.g. encoding negatives or evaluation).
"""

import math
from dataclasses import dataclass, field

import numpy as np

from motionbeat import autodiff as ad
from motionbeat.rhythm import BeatGrid

CHECKPOINT_MAGIC = b"MBT1"
_HEADER_FIELDS = 9  # per-encoder int32 config fields, see save_checkpoint


@dataclass(frozen=True)
class EncoderConfig:
    """Shape of one encoder stack.

    head_dim = hidden_dim / num_heads must be even so channels pair into
    2D planes for the phase rotation.
    """

    in_dim: int
    num_layers: int = 6
    hidden_dim: int = 512
    num_heads: int = 8
    embed_dim: int = 128
    bar_len_B: int = 4
    alpha_logit_init: float = 0.5
    alpha_val_init: float = 0.5
    use_phase_features: bool = False
    ffn_ratio: int = 2

    def __post_init__(self):
        if min(self.in_dim, self.num_layers, self.hidden_dim, self.num_heads,
               self.embed_dim, self.bar_len_B) < 1:
            raise ValueError("all encoder dimensions must be >= 1")
        if self.hidden_dim % self.num_heads != 0:
            raise ValueError("hidden_dim must be divisible by num_heads")
        if (self.hidden_dim // self.num_heads) % 2 != 0:
            raise ValueError("head_dim must be even for channel pairing")
        if self.alpha_logit_init < 0 or self.alpha_val_init < 0:
            raise ValueError("alpha inits must be >= 0")

    @property
    def head_dim(self) -> int:
        return self.hidden_dim // self.num_heads


class ModelParams:
    """Ordered name -> Tensor store with a fixed, documented flat layout.

    Serialization order is insertion order:

        in_proj_w, in_proj_b,
        for each layer i:
            Li.ln1_g, Li.ln1_b,
            Li.wq, Li.bq, Li.wk, Li.bk, Li.wv, Li.bv, Li.wo, Li.bo,
            Li.ln2_g, Li.ln2_b,
            Li.ffn_w1, Li.ffn_b1, Li.ffn_w2, Li.ffn_b2,
        final_ln_g, final_ln_b,
        proj_w, proj_b,
        onset_w, onset_b,
        contact_w, contact_b,
        alpha_logit_raw, alpha_val_raw
    """

    def __init__(self):
        self._store = {}

    def add(self, name, array):
        if name in self._store:
            raise ValueError(f"duplicate parameter {name}")
        self._store[name] = ad.Tensor(array, requires_grad=True, name=name)
        return self._store[name]

    def __getitem__(self, name) -> ad.Tensor:
        return self._store[name]

    def __contains__(self, name):
        return name in self._store

    def names(self):
        return list(self._store)

    def items(self):
        return self._store.items()

    def zero_grad(self):
        for t in self._store.values():
            t.grad = None

    def num_values(self):
        return sum(t.data.size for t in self._store.values())

    def copy(self) -> "ModelParams":
        out = ModelParams()
        for name, t in self._store.items():
            out.add(name, t.data.copy())
        return out


def softplus_inverse(y):
    """Raw value r with softplus(r) = y; very negative for y == 0."""
    if y <= 0:
        return -745.0  # softplus underflows to exactly 0.0
    return float(y + np.log1p(-np.exp(-y))) if y < 30 else float(y)


def init_params(cfg: EncoderConfig, seed: int) -> ModelParams:
    """Scaled uniform fan-in init for weights; zeros/ones for biases/gains."""
    rng = np.random.default_rng(seed)
    params = ModelParams()
    h, d = cfg.hidden_dim, cfg.embed_dim
    in_dim = cfg.in_dim + (2 if cfg.use_phase_features else 0)
    ffn = cfg.ffn_ratio * h

    def weight(name, fan_in, fan_out):
        bound = 1.0 / math.sqrt(fan_in)
        params.add(name, rng.uniform(-bound, bound, size=(fan_in, fan_out)))

    weight("in_proj_w", in_dim, h)
    params.add("in_proj_b", np.zeros(h))
    for i in range(cfg.num_layers):
        params.add(f"L{i}.ln1_g", np.ones(h))
        params.add(f"L{i}.ln1_b", np.zeros(h))
        for mat, bias in (("wq", "bq"), ("wk", "bk"), ("wv", "bv"), ("wo", "bo")):
            weight(f"L{i}.{mat}", h, h)
            params.add(f"L{i}.{bias}", np.zeros(h))
        params.add(f"L{i}.ln2_g", np.ones(h))
        params.add(f"L{i}.ln2_b", np.zeros(h))
        weight(f"L{i}.ffn_w1", h, ffn)
        params.add(f"L{i}.ffn_b1", np.zeros(ffn))
        weight(f"L{i}.ffn_w2", ffn, h)
        params.add(f"L{i}.ffn_b2", np.zeros(h))
    params.add("final_ln_g", np.ones(h))
    params.add("final_ln_b", np.zeros(h))
    weight("proj_w", h, d)
    params.add("proj_b", np.zeros(d))
    weight("onset_w", h, 1)
    params.add("onset_b", np.zeros(1))
    weight("contact_w", h, 1)
    params.add("contact_b", np.zeros(1))
    params.add("alpha_logit_raw", np.float64(softplus_inverse(cfg.alpha_logit_init)))
    params.add("alpha_val_raw", np.float64(softplus_inverse(cfg.alpha_val_init)))
    return params


# -- phase rotation ---------------------------------------------------------


def bar_phase(t, B) -> float:
    """Angle of beat t within a bar of B beats: 2*pi*(t mod B)/B."""
    if B < 1:
        raise ValueError("bar length must be >= 1")
    return 2.0 * math.pi * (int(t) % B) / B


def grid_phases(grid: BeatGrid) -> np.ndarray:
    """Rotation angle per beat; downbeats (per the grid's offset) get 0."""
    t = np.arange(grid.num_beats_K)
    return 2.0 * np.pi * ((t - grid.phase_offset) % grid.bar_len_B) / grid.bar_len_B


def _rotate_pairs(x, cos, sin):
    """Rotate consecutive channel pairs of `x` (Tensor) by per-token angles."""
    xe = x[..., ::2]
    xo = x[..., 1::2]
    re = ad.add(ad.mul(xe, cos), ad.mul(xo, -sin))
    ro = ad.add(ad.mul(xe, sin), ad.mul(xo, cos))
    stacked = ad.stack([re, ro], axis=-1)
    return stacked.reshape(x.shape)


def phase_rotate(vec, phi) -> np.ndarray:
    """Rotate consecutive channel pairs of a head vector by angle `phi`."""
    vec = np.asarray(vec, dtype=np.float64)
    if vec.shape[-1] % 2 != 0:
        raise ValueError("head_dim must be even for channel pairing")
    return _rotate_pairs(ad.Tensor(vec), math.cos(phi), math.sin(phi)).data


# -- attention ----------------------------------------------------------------


def _as_alpha(alpha, name):
    if isinstance(alpha, ad.Tensor):
        return alpha
    if alpha < 0:
        raise ValueError(f"{name} must be >= 0, got {alpha}")
    return ad.Tensor(float(alpha))


def contact_attention_weights(q, k, r=None, alpha_logit=0.0):
    """Softmax attention rows over keys, biased by contact probabilities.

    logits[t, u] = <q_t, k_u> / sqrt(d_h) + alpha_logit * r[u].
    """
    q, k = ad.as_tensor(q), ad.as_tensor(k)
    d_h = q.shape[-1]
    logits = ad.mul(ad.matmul(q, ad.swapaxes(k, -1, -2)), 1.0 / math.sqrt(d_h))
    if r is not None:
        r = np.asarray(r, dtype=np.float64)
        if np.any(r < 0) or np.any(r > 1):
            raise ValueError("contact probabilities must lie in [0, 1]")
        bias = ad.mul(_as_alpha(alpha_logit, "alpha_logit"), ad.Tensor(r))
        logits = ad.add(logits, bias)  # broadcasts over query rows
    return ad.softmax_last(logits)


def contact_attention(q, k, v, r=None, alpha_logit=0.0, alpha_val=0.0):
    """Contact-guided attention output.

    Rows of the attention matrix are softmax-normalized with a contact
    logit bias; value vectors are reweighted by (1 + alpha_val * r) before
    aggregation. With r=None (or both alphas 0) this is vanilla scaled
    dot-product attention.
    """
    A = contact_attention_weights(q, k, r=r, alpha_logit=alpha_logit)
    v = ad.as_tensor(v)
    if r is not None:
        scale = ad.add(ad.mul(_as_alpha(alpha_val, "alpha_val"), ad.Tensor(np.asarray(r, dtype=np.float64))), 1.0)
        v = ad.mul(v, scale.reshape((1,) * (v.ndim - 2) + (len(np.asarray(r)), 1)))
    return ad.matmul(A, v)


# -- encoder -------------------------------------------------------------------


@dataclass
class EncoderOutput:
    hidden: ad.Tensor       # (K, hidden_dim) final per-token states
    z: ad.Tensor            # (embed_dim,) unit-norm clip embedding
    onset_pred: ad.Tensor   # (K,) nonnegative onset envelope prediction
    contact_pred: ad.Tensor  # (K,) contact probability prediction


def encoder_forward(tokens, grid: BeatGrid, contacts, params: ModelParams,
                    cfg: EncoderConfig) -> EncoderOutput:
    """Run one encoder stack over beat-synchronous tokens.

    `contacts` is a length-K array of probabilities for the motion branch,
    or None for plain rotated attention (audio branch).
    """
    tokens = np.asarray(tokens, dtype=np.float64)
    K = grid.num_beats_K
    if tokens.shape != (K, cfg.in_dim):
        raise ValueError(
            f"tokens: expected shape ({K}, {cfg.in_dim}), got {tokens.shape}"
        )
    if grid.bar_len_B != cfg.bar_len_B:
        raise ValueError(
            f"grid: bar length {grid.bar_len_B} != config bar length {cfg.bar_len_B}"
        )
    if contacts is not None:
        contacts = np.asarray(contacts, dtype=np.float64)
        if contacts.shape != (K,):
            raise ValueError(f"contacts: expected shape ({K},), got {contacts.shape}")

    phis = grid_phases(grid)
    cos_tok = np.cos(phis)[:, None]          # (K, 1) over channel pairs
    sin_tok = np.sin(phis)[:, None]
    cos_head = cos_tok[None, :, :]           # (1, K, 1) over heads
    sin_head = sin_tok[None, :, :]

    x = tokens
    if cfg.use_phase_features:
        x = np.concatenate([tokens, np.cos(phis)[:, None], np.sin(phis)[:, None]], axis=1)
    h = ad.add(ad.matmul(ad.Tensor(x), params["in_proj_w"]), params["in_proj_b"])

    H, dh = cfg.num_heads, cfg.head_dim
    alpha_logit = ad.softplus(params["alpha_logit_raw"])
    alpha_val = ad.softplus(params["alpha_val_raw"])

    def split_heads(m):
        return m.reshape((K, H, dh)).swapaxes(0, 1)

    for i in range(cfg.num_layers):
        y = ad.layer_norm(h, params[f"L{i}.ln1_g"], params[f"L{i}.ln1_b"])
        q = split_heads(ad.add(ad.matmul(y, params[f"L{i}.wq"]), params[f"L{i}.bq"]))
        k = split_heads(ad.add(ad.matmul(y, params[f"L{i}.wk"]), params[f"L{i}.bk"]))
        v = split_heads(ad.add(ad.matmul(y, params[f"L{i}.wv"]), params[f"L{i}.bv"]))
        q = _rotate_pairs(q, cos_head, sin_head)
        k = _rotate_pairs(k, cos_head, sin_head)
        attn = contact_attention(
            q, k, v, r=contacts, alpha_logit=alpha_logit, alpha_val=alpha_val
        )
        merged = attn.swapaxes(0, 1).reshape((K, cfg.hidden_dim))
        h = ad.add(h, ad.add(ad.matmul(merged, params[f"L{i}.wo"]), params[f"L{i}.bo"]))

        y = ad.layer_norm(h, params[f"L{i}.ln2_g"], params[f"L{i}.ln2_b"])
        mid = ad.gelu(ad.add(ad.matmul(y, params[f"L{i}.ffn_w1"]), params[f"L{i}.ffn_b1"]))
        h = ad.add(h, ad.add(ad.matmul(mid, params[f"L{i}.ffn_w2"]), params[f"L{i}.ffn_b2"]))

    hidden = ad.layer_norm(h, params["final_ln_g"], params["final_ln_b"])
    pooled = hidden.mean(axis=0, keepdims=True)
    z = ad.l2_normalize(
        ad.add(ad.matmul(pooled, params["proj_w"]), params["proj_b"]).reshape(cfg.embed_dim)
    )
    onset = ad.softplus(
        ad.add(ad.matmul(hidden, params["onset_w"]), params["onset_b"]).reshape(K)
    )
    contact = ad.sigmoid(
        ad.add(ad.matmul(hidden, params["contact_w"]), params["contact_b"]).reshape(K)
    )
    return EncoderOutput(hidden=hidden, z=z, onset_pred=onset, contact_pred=contact)


# -- dual encoder + checkpointing ---------------------------------------------


@dataclass
class DualEncoder:
    """Both modality encoders plus convenience encode entry points."""

    audio_cfg: EncoderConfig
    motion_cfg: EncoderConfig
    audio_params: ModelParams
    motion_params: ModelParams

    @classmethod
    def initialize(cls, audio_cfg, motion_cfg, seed):
        return cls(
            audio_cfg=audio_cfg,
            motion_cfg=motion_cfg,
            audio_params=init_params(audio_cfg, seed),
            motion_params=init_params(motion_cfg, seed + 1),
        )

    def encode_audio(self, seq) -> EncoderOutput:
        return encoder_forward(seq.tokens, seq.grid, None, self.audio_params, self.audio_cfg)

    def encode_motion(self, seq, contacts="annotation") -> EncoderOutput:
        """Encode motion with contact-guided attention.

        contacts="annotation" uses the sequence's annotated pulse;
        contacts="predicted" runs a first pass without bias and feeds the
        (detached) contact-head prediction back in; an array is used as-is.
        """
        if isinstance(contacts, str):
            if contacts == "annotation":
                r = seq.annotation.contact_pulse
            elif contacts == "predicted":
                with ad.no_grad():
                    first = encoder_forward(
                        seq.tokens, seq.grid, None, self.motion_params, self.motion_cfg
                    )
                r = np.clip(first.contact_pred.data, 0.0, 1.0)
            else:
                raise ValueError(f"unknown contacts mode {contacts!r}")
        else:
            r = contacts
        return encoder_forward(seq.tokens, seq.grid, r, self.motion_params, self.motion_cfg)

    def all_params(self):
        for name, t in self.audio_params.items():
            yield f"audio.{name}", t
        for name, t in self.motion_params.items():
            yield f"motion.{name}", t

    def zero_grad(self):
        self.audio_params.zero_grad()
        self.motion_params.zero_grad()


def _pack_cfg(cfg: EncoderConfig) -> np.ndarray:
    return np.array(
        [cfg.num_layers, cfg.hidden_dim, cfg.num_heads, cfg.embed_dim,
         cfg.bar_len_B, cfg.in_dim, int(cfg.use_phase_features), cfg.ffn_ratio, 0],
        dtype="<i4",
    )


def _unpack_cfg(raw: np.ndarray, alpha_logit_init, alpha_val_init) -> EncoderConfig:
    vals = [int(v) for v in raw]
    if vals[8] != 0:
        raise ValueError(f"unknown activation id {vals[8]} in checkpoint")
    return EncoderConfig(
        num_layers=vals[0], hidden_dim=vals[1], num_heads=vals[2],
        embed_dim=vals[3], bar_len_B=vals[4], in_dim=vals[5],
        use_phase_features=bool(vals[6]), ffn_ratio=vals[7],
        alpha_logit_init=alpha_logit_init, alpha_val_init=alpha_val_init,
    )


def save_checkpoint(path, model: DualEncoder):
    """Flat binary checkpoint.

    Layout: magic "MBT1"; two 9-field little-endian int32 config blocks
    (audio then motion): num_layers, hidden_dim, num_heads, embed_dim,
    bar_len_B, in_dim, use_phase_features, ffn_ratio, activation_id; then
    every parameter tensor as raw little-endian float32 in the ModelParams
    serialization order, audio stack first. Save -> load -> save is
    byte-identical.
    """
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(_pack_cfg(model.audio_cfg).tobytes())
        fh.write(_pack_cfg(model.motion_cfg).tobytes())
        for params in (model.audio_params, model.motion_params):
            for _, t in params.items():
                fh.write(np.ascontiguousarray(t.data, dtype="<f4").tobytes())


def load_checkpoint(path) -> DualEncoder:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path} is not a model checkpoint (bad magic)")
    off = 4
    raw_cfgs = []
    for _ in range(2):
        raw_cfgs.append(np.frombuffer(blob, dtype="<i4", count=_HEADER_FIELDS, offset=off))
        off += _HEADER_FIELDS * 4

    def read_params(cfg):
        nonlocal off
        template = init_params(cfg, seed=0)
        params = ModelParams()
        for name in template.names():
            shape = template[name].data.shape
            count = int(np.prod(shape)) if shape else 1
            vals = np.frombuffer(blob, dtype="<f4", count=count, offset=off)
            off += count * 4
            params.add(name, vals.astype(np.float64).reshape(shape))
        return params

    cfg_a = _unpack_cfg(raw_cfgs[0], 0.5, 0.5)
    cfg_m = _unpack_cfg(raw_cfgs[1], 0.5, 0.5)
    params_a = read_params(cfg_a)
    params_m = read_params(cfg_m)
    if off != len(blob):
        raise ValueError(f"{path}: {len(blob) - off} trailing bytes")
    return DualEncoder(cfg_a, cfg_m, params_a, params_m)
