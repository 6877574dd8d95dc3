"""Length-regulated EMG-to-mel network with toneme and vocal-EMG auxiliary heads."""

from dataclasses import asdict, dataclass

import numpy as np

from .nn import tensor as T
from .nn.layers import Conv1d, LayerNorm, Linear, MultiHeadAttention, ParamStore, sinusoidal_encoding
from .nn.tensor import Tensor, no_grad

CLASSIFIER_POSITIONS = ("before_decoder", "after_decoder")


@dataclass
class SsrnetConfig:
    in_dim: int = 355
    mel_dim: int = 80
    n_classes: int = 140
    d_model: int = 384
    enc_layers: int = 6
    dec_layers: int = 6
    hidden_units: int = 1536
    heads: int = 4
    fft_kernel: int = 3
    postnet_layers: int = 5
    postnet_channels: int = 256
    postnet_kernel: int = 5
    durpred_layers: int = 2
    durpred_channels: int = 384
    durpred_kernel: int = 3
    dropout_main: float = 0.1
    dropout_postnet: float = 0.5
    lambda_tm: float = 0.5
    lambda_recons: float = 0.5
    classifier_position: str = "before_decoder"
    tones_enabled: bool = True
    seed: int = 0

    def __post_init__(self):
        ints = ("in_dim", "mel_dim", "n_classes", "d_model", "enc_layers", "dec_layers", "hidden_units",
                "heads", "fft_kernel", "postnet_channels", "postnet_kernel", "durpred_layers",
                "durpred_channels", "durpred_kernel")
        for name in ints:
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.postnet_layers < 0:
            raise ValueError("postnet_layers must be non-negative")
        if self.d_model % self.heads:
            raise ValueError(f"d_model {self.d_model} not divisible by {self.heads} heads")
        if self.lambda_tm < 0 or self.lambda_recons < 0:
            raise ValueError("loss weights must be non-negative")
        if not (0 <= self.dropout_main < 1 and 0 <= self.dropout_postnet < 1):
            raise ValueError("dropout rates must lie in [0, 1)")
        if self.classifier_position not in CLASSIFIER_POSITIONS:
            raise ValueError(f"classifier_position must be one of {CLASSIFIER_POSITIONS}")

    def to_dict(self):
        return asdict(self)


def reduced_config(**overrides):
    """Small configuration used for gradient checks and desk-scale training."""
    base = dict(d_model=8, enc_layers=2, dec_layers=2, hidden_units=16, heads=2, postnet_layers=2,
                postnet_channels=8, durpred_channels=8, dropout_main=0.0, dropout_postnet=0.0)
    base.update(overrides)
    return SsrnetConfig(**base)


def regulate_index(durations, max_len=None):
    """Gather index and mask that repeat source frame i ``durations[i]`` times."""
    durations = [np.asarray(d, dtype=np.int64) for d in durations]
    lengths = [int(d.sum()) for d in durations]
    if any(n == 0 for n in lengths):
        raise ValueError("durations must sum to at least one frame")
    if any(np.any(d < 0) for d in durations):
        raise ValueError("durations must be non-negative")
    L = max_len or max(lengths)
    index = np.zeros((len(durations), L), dtype=np.int64)
    mask = np.zeros((len(durations), L))
    for b, d in enumerate(durations):
        rep = np.repeat(np.arange(len(d)), d)
        index[b, :len(rep)] = rep
        mask[b, :len(rep)] = 1.0
    return index, mask


def length_regulate(h, durations):
    """Repeat each row of ``h`` (N, D) durations[i] times -> (sum(d), D)."""
    durations = np.asarray(durations, dtype=np.int64)
    h = h if isinstance(h, Tensor) else Tensor(h)
    if len(durations) != h.shape[0]:
        raise ValueError(f"{len(durations)} durations for {h.shape[0]} frames")
    index, _ = regulate_index([durations])
    return T.gather_rows(h.reshape(1, *h.shape), index).reshape(index.shape[1], h.shape[1])


def round_durations(raw):
    """Round half up, clamp at zero; an all-zero result keeps one frame at the argmax."""
    raw = np.asarray(raw, dtype=np.float64)
    d = np.maximum(np.floor(raw + 0.5), 0).astype(np.int64)
    if d.sum() == 0:
        d[int(np.argmax(raw))] = 1
    return d


class FFTBlock:
    """Self-attention and a two-layer convolutional feed-forward, each residual + layer norm."""

    def __init__(self, store, name, cfg):
        self.attn = MultiHeadAttention(store, f"{name}.attn", cfg.d_model, cfg.heads)
        self.norm1 = LayerNorm(store, f"{name}.norm1", cfg.d_model)
        self.conv1 = Conv1d(store, f"{name}.conv1", cfg.d_model, cfg.hidden_units, cfg.fft_kernel)
        self.conv2 = Conv1d(store, f"{name}.conv2", cfg.hidden_units, cfg.d_model, cfg.fft_kernel)
        self.norm2 = LayerNorm(store, f"{name}.norm2", cfg.d_model)
        self.rate = cfg.dropout_main

    def __call__(self, x, mask, rng, training):
        m = mask[..., None]
        a = self.attn(x, mask, rng, self.rate, training)
        x = self.norm1(x + T.dropout(a, self.rate, rng, training)) * m
        # mask between the convs too, or padded frames leak in at the boundary
        y = self.conv2(T.relu(self.conv1(x)) * m) * m
        return self.norm2(x + T.dropout(y, self.rate, rng, training)) * m


class Ssrnet:
    def __init__(self, cfg: SsrnetConfig, store=None):
        self.cfg = cfg
        self.store = store or ParamStore(cfg.seed)
        self.rng = np.random.default_rng(cfg.seed + 1)
        s, d = self.store, cfg.d_model
        self.in_proj = Linear(s, "encoder.in_proj", cfg.in_dim, d)
        self.encoder = [FFTBlock(s, f"encoder.block{k}", cfg) for k in range(cfg.enc_layers)]
        self.dur_convs, self.dur_norms = [], []
        cin = d
        for k in range(cfg.durpred_layers):
            self.dur_convs.append(Conv1d(s, f"durpred.conv{k}", cin, cfg.durpred_channels, cfg.durpred_kernel))
            self.dur_norms.append(LayerNorm(s, f"durpred.norm{k}", cfg.durpred_channels))
            cin = cfg.durpred_channels
        self.dur_out = Linear(s, "durpred.out", cin, 1)
        self.decoder = [FFTBlock(s, f"decoder.block{k}", cfg) for k in range(cfg.dec_layers)]
        self.mel_out = Linear(s, "decoder.mel_out", d, cfg.mel_dim)
        self.postnet = []
        cin = cfg.mel_dim
        for k in range(cfg.postnet_layers):
            cout = cfg.mel_dim if k == cfg.postnet_layers - 1 else cfg.postnet_channels
            self.postnet.append(Conv1d(s, f"postnet.conv{k}", cin, cout, cfg.postnet_kernel))
            cin = cout
        self.toneme_head = Linear(s, "joint.toneme", d, cfg.n_classes)
        self.recons_head = Linear(s, "joint.recons", d, cfg.in_dim)

    # -- pieces -------------------------------------------------------------
    def _add_positions(self, x, mask):
        pe = sinusoidal_encoding(x.shape[1], self.cfg.d_model)
        return (x + pe[None]) * mask[..., None]

    def encode(self, X, mask, training=False):
        """X: (B, N, in_dim) -> hidden (B, N, d_model)."""
        if X.shape[-1] != self.cfg.in_dim:
            raise ValueError(f"encoder expects feature width {self.cfg.in_dim}, got {X.shape[-1]}")
        h = T.relu(self.in_proj(X))
        h = T.dropout(self._add_positions(h, mask), self.cfg.dropout_main, self.rng, training)
        for block in self.encoder:
            h = block(h, mask, self.rng, training)
        return h

    def duration_raw(self, h, mask, training=False):
        """Real-valued duration predictions (B, N)."""
        x = h
        m = mask[..., None]
        for conv, norm in zip(self.dur_convs, self.dur_norms):
            x = norm(T.relu(conv(x))) * m
            x = T.dropout(x, self.cfg.dropout_main, self.rng, training)
        out = self.dur_out(x)
        return out.reshape(out.shape[0], out.shape[1]) * mask

    def regulate(self, h, durations):
        index, mask = regulate_index(durations)
        return T.gather_rows(h, index) * mask[..., None], mask

    def decode(self, hM, mask, training=False):
        """Regulated hidden (B, M, d) -> (mel_before, mel_after, decoder hidden)."""
        x = self._add_positions(hM, mask)
        for block in self.decoder:
            x = block(x, mask, self.rng, training)
        m = mask[..., None]
        before = self.mel_out(x) * m
        y = before
        for k, conv in enumerate(self.postnet):
            y = conv(y) * m
            if k < len(self.postnet) - 1:
                y = T.tanh(y)
            y = T.dropout(y, self.cfg.dropout_postnet, self.rng, training)
        after = before + y if self.postnet else before
        return before, after, x

    def joint_heads(self, hidden):
        return self.toneme_head(hidden), self.recons_head(hidden)

    # -- full passes --------------------------------------------------------
    def forward(self, X, src_mask, durations, training=False):
        """Teacher-forced pass with ground-truth durations (list of int arrays)."""
        X = X if isinstance(X, Tensor) else Tensor(X)
        h = self.encode(X, src_mask, training)
        dur_raw = self.duration_raw(h, src_mask, training)
        hM, tgt_mask = self.regulate(h, durations)
        before, after, dec_hidden = self.decode(hM, tgt_mask, training)
        head_in = hM if self.cfg.classifier_position == "before_decoder" else dec_hidden
        logits, recons = self.joint_heads(head_in)
        return {"mel_before": before, "mel_after": after, "dur_raw": dur_raw, "logits": logits,
                "recons": recons, "tgt_mask": tgt_mask, "src_mask": src_mask}

    def bypass(self, X):
        """Eval-mode mel prediction with every duration forced to one (N frames out)."""
        X = np.asarray(X, dtype=np.float64)
        with no_grad():
            out = self.forward(X[None], np.ones((1, len(X))), [np.ones(len(X), dtype=np.int64)])
        return out["mel_after"].data[0]

    def infer(self, X):
        """Silent features (N, in_dim) -> (mel (m, mel_dim), predicted integer durations)."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.cfg.in_dim:
            raise ValueError(f"expected features of width {self.cfg.in_dim}, got shape {X.shape}")
        mask = np.ones((1, len(X)))
        with no_grad():
            h = self.encode(Tensor(X[None]), mask)
            d = round_durations(self.duration_raw(h, mask).data[0])
            hM, tgt_mask = self.regulate(h, [d])
            _, after, _ = self.decode(hM, tgt_mask)
        return after.data[0], d

    def classify(self, X, durations):
        """Frame toneme ids predicted by the toneme head under given durations."""
        X = np.asarray(X, dtype=np.float64)
        with no_grad():
            out = self.forward(X[None], np.ones((1, len(X))), [np.asarray(durations)])
        return out["logits"].data[0].argmax(-1)


LOSS_TERMS = ("mae_post", "mae_pre", "mse_dur", "ce_tm", "mse_recons")


def total_loss(out, targets, cfg):
    """Composite loss and its (weighted) per-term breakdown.

    ``targets`` holds padded arrays: mel (B, M, 80), durations (B, N),
    tonemes (B, M) and vocal (B, M, in_dim).
    """
    tgt_mask, src_mask = out["tgt_mask"], out["src_mask"]
    mel = np.asarray(targets["mel"])
    if mel.shape[:2] != tgt_mask.shape:
        raise ValueError(f"target mel {mel.shape[:2]} does not match regulated length {tgt_mask.shape}")
    for key in ("tonemes", "vocal"):
        if np.asarray(targets[key]).shape[:2] != tgt_mask.shape:
            raise ValueError(f"{key} length does not match the mel target")
    m3 = tgt_mask[..., None]
    terms = {
        "mae_post": T.mae(out["mel_after"], mel, m3),
        "mae_pre": T.mae(out["mel_before"], mel, m3),
        "mse_dur": T.mse(out["dur_raw"], np.asarray(targets["durations"], dtype=np.float64), src_mask),
        "ce_tm": T.cross_entropy(out["logits"], targets["tonemes"], tgt_mask) * cfg.lambda_tm,
        "mse_recons": T.mse(out["recons"], np.asarray(targets["vocal"]), m3) * cfg.lambda_recons,
    }
    total = terms["mae_post"] + terms["mae_pre"] + terms["mse_dur"] + terms["ce_tm"] + terms["mse_recons"]
    breakdown = {k: float(v.data) for k, v in terms.items()}
    breakdown["total"] = float(total.data)
    return total, breakdown
