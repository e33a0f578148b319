"""Small transformer encoder-decoder speech recognizer.

The encoder consumes log-mel frames grouped into fixed-stride patches; the
decoder is autoregressive over the vocabulary with the special-token
protocol from :mod:`mutelab.vocab`. Output logits are the product of the
final decoder state with the token embedding matrix (weights tied), so the
greedy token is literally the row of the embedding matrix with the largest
projection onto the final hidden state.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import tensor as T
from .audio import AudioSignal
from .features import FeatureConfig, LogMelFrontEnd
from .vocab import Vocab


@dataclass
class ModelConfig:
    name: str = "base"
    width: int = 64
    enc_layers: int = 2
    dec_layers: int = 2
    heads: int = 4
    mlp_ratio: int = 4
    frames_per_patch: int = 4
    context_seconds: float = 2.56
    max_dec_len: int = 24
    feature: FeatureConfig = field(default_factory=FeatureConfig)

    def __post_init__(self):
        if self.width % self.heads:
            raise ValueError("width must be divisible by heads")

    @property
    def context_samples(self) -> int:
        return int(round(self.context_seconds * self.feature.sample_rate))

    @property
    def n_frames(self) -> int:
        return self.feature.frame_count(self.context_samples)

    @property
    def n_patches(self) -> int:
        return -(-self.n_frames // self.frames_per_patch)

    @property
    def patch_dim(self) -> int:
        return self.frames_per_patch * self.feature.n_mels


MODEL_PRESETS = {
    "tiny": dict(name="tiny", width=48, enc_layers=1, dec_layers=1, heads=4),
    "base": dict(name="base", width=64, enc_layers=2, dec_layers=2, heads=4),
}

# log-power of digital silence, used to pad the frame axis up to a whole
# number of patches
_SILENCE_LOGMEL = -10.0


def sinusoid_table(n: int, d: int) -> np.ndarray:
    pos = np.arange(n, dtype=np.float64)[:, None]
    dim = np.arange(d // 2, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, 2.0 * dim / d)
    table = np.zeros((n, d))
    table[:, 0::2] = np.sin(angle)
    table[:, 1::2] = np.cos(angle)
    return table.astype(np.float32)


def _attn_param_names(prefix: str) -> list[str]:
    return [f"{prefix}.{n}" for n in ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo")]


def param_shapes(cfg: ModelConfig, vocab_size: int) -> dict[str, tuple[int, ...]]:
    w = cfg.width
    hid = cfg.mlp_ratio * w
    shapes: dict[str, tuple[int, ...]] = {
        "enc.ln0.g": (cfg.feature.n_mels,),
        "enc.ln0.b": (cfg.feature.n_mels,),
        "enc.in.w": (cfg.patch_dim, w),
        "enc.in.b": (w,),
        "dec.emb": (vocab_size, w),
        "dec.pos": (cfg.max_dec_len, w),
    }

    def attn(prefix):
        for name in _attn_param_names(prefix):
            shapes[name] = (w,) if name.endswith((".bq", ".bk", ".bv", ".bo")) else (w, w)

    def ln(prefix):
        shapes[f"{prefix}.g"] = (w,)
        shapes[f"{prefix}.b"] = (w,)

    def mlp(prefix):
        shapes[f"{prefix}.w1"] = (w, hid)
        shapes[f"{prefix}.b1"] = (hid,)
        shapes[f"{prefix}.w2"] = (hid, w)
        shapes[f"{prefix}.b2"] = (w,)

    for i in range(cfg.enc_layers):
        ln(f"enc.{i}.ln1")
        attn(f"enc.{i}.attn")
        ln(f"enc.{i}.ln2")
        mlp(f"enc.{i}.mlp")
    ln("enc.lnf")
    for i in range(cfg.dec_layers):
        ln(f"dec.{i}.ln1")
        attn(f"dec.{i}.self")
        ln(f"dec.{i}.ln2")
        attn(f"dec.{i}.cross")
        ln(f"dec.{i}.ln3")
        mlp(f"dec.{i}.mlp")
    ln("dec.lnf")
    return shapes


def init_params(cfg: ModelConfig, vocab_size: int, seed: int) -> dict[str, T.Tensor]:
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in sorted(param_shapes(cfg, vocab_size).items()):
        if name.endswith(".g"):
            data = np.ones(shape, dtype=np.float32)
        elif name.endswith((".b", ".bq", ".bk", ".bv", ".bo", ".b1", ".b2")):
            data = np.zeros(shape, dtype=np.float32)
        else:
            data = rng.normal(0.0, 0.02, shape).astype(np.float32)
        params[name] = T.Tensor(data, requires_grad=True)
    return params


class ToyASRModel:
    def __init__(self, cfg: ModelConfig, vocab: Vocab, params: dict[str, T.Tensor]):
        self.cfg = cfg
        self.vocab = vocab
        self.params = params
        self.front = LogMelFrontEnd(cfg.feature)
        self._enc_pos = T.Tensor(sinusoid_table(cfg.n_patches, cfg.width))
        self._causal = {}

    @classmethod
    def create(cls, cfg: ModelConfig, vocab: Vocab, seed: int) -> "ToyASRModel":
        return cls(cfg, vocab, init_params(cfg, len(vocab), seed))

    # -- identity -------------------------------------------------------------

    def param_blob(self) -> bytes:
        return b"".join(
            self.params[k].data.astype("<f4").tobytes() for k in sorted(self.params)
        )

    @property
    def model_id(self) -> str:
        digest = hashlib.sha256(self.param_blob()).hexdigest()[:10]
        return f"{self.cfg.name}:{digest}"

    @property
    def projection_matrix(self) -> np.ndarray:
        """Output projection W (rows are per-token vectors, tied embedding)."""
        return self.params["dec.emb"].data

    # -- forward pieces ---------------------------------------------------------

    def _mask(self, n: int) -> T.Tensor:
        if n not in self._causal:
            m = np.triu(np.full((n, n), -1e9, dtype=np.float32), k=1)
            self._causal[n] = T.Tensor(m)
        return self._causal[n]

    def _attention(self, prefix: str, x_q: T.Tensor, x_kv: T.Tensor, mask=None) -> T.Tensor:
        p = self.params
        h = self.cfg.heads
        b, lq, w = x_q.shape
        lk = x_kv.shape[1]
        hd = w // h
        q = x_q @ p[f"{prefix}.wq"] + p[f"{prefix}.bq"]
        k = x_kv @ p[f"{prefix}.wk"] + p[f"{prefix}.bk"]
        v = x_kv @ p[f"{prefix}.wv"] + p[f"{prefix}.bv"]
        q = q.reshape(b, lq, h, hd).swapaxes(1, 2)
        k = k.reshape(b, lk, h, hd).swapaxes(1, 2)
        v = v.reshape(b, lk, h, hd).swapaxes(1, 2)
        scores = (q @ k.swapaxes(2, 3)) * (1.0 / math.sqrt(hd))
        if mask is not None:
            scores = scores + mask
        att = T.softmax(scores)
        out = (att @ v).swapaxes(1, 2).reshape(b, lq, w)
        return out @ p[f"{prefix}.wo"] + p[f"{prefix}.bo"]

    def _ln(self, prefix: str, x: T.Tensor) -> T.Tensor:
        return T.layer_norm(x, self.params[f"{prefix}.g"], self.params[f"{prefix}.b"])

    def _mlp(self, prefix: str, x: T.Tensor) -> T.Tensor:
        p = self.params
        return T.gelu(x @ p[f"{prefix}.w1"] + p[f"{prefix}.b1"]) @ p[f"{prefix}.w2"] + p[f"{prefix}.b2"]

    def encode(self, feats: T.Tensor) -> T.Tensor:
        """(B, n_frames, n_mels) log-mel frames -> (B, n_patches, width)."""
        cfg = self.cfg
        b, f, m = feats.shape
        if f != cfg.n_frames:
            raise ValueError(f"expected {cfg.n_frames} frames, got {f}")
        pad = cfg.n_patches * cfg.frames_per_patch - f
        if pad:
            filler = T.Tensor(
                np.full((b, pad, m), _SILENCE_LOGMEL, dtype=np.float32)
            )
            feats = T.concat([feats, filler], axis=1)
        # per-frame normalization over mel bins: log-mel frames share a large
        # common-mode offset that otherwise dominates every gradient
        feats = self._ln("enc.ln0", feats)
        x = feats.reshape(b, cfg.n_patches, cfg.patch_dim)
        x = x @ self.params["enc.in.w"] + self.params["enc.in.b"]
        x = x + self._enc_pos
        for i in range(cfg.enc_layers):
            h = self._ln(f"enc.{i}.ln1", x)
            x = x + self._attention(f"enc.{i}.attn", h, h)
            x = x + self._mlp(f"enc.{i}.mlp", self._ln(f"enc.{i}.ln2", x))
        return self._ln("enc.lnf", x)

    def decode_hidden(self, enc: T.Tensor, tokens: np.ndarray) -> T.Tensor:
        """Final decoder states (B, L, width) after the last layer norm."""
        cfg = self.cfg
        tokens = np.asarray(tokens, dtype=np.int64)
        b, l = tokens.shape
        if l > cfg.max_dec_len:
            raise ValueError(f"decoder length {l} exceeds budget {cfg.max_dec_len}")
        if tokens.min() < 0 or tokens.max() >= len(self.vocab):
            raise ValueError("token id out of vocabulary")
        x = T.take_rows(self.params["dec.emb"], tokens) + self.params["dec.pos"][:l]
        mask = self._mask(l)
        for i in range(cfg.dec_layers):
            h = self._ln(f"dec.{i}.ln1", x)
            x = x + self._attention(f"dec.{i}.self", h, h, mask=mask)
            x = x + self._attention(f"dec.{i}.cross", self._ln(f"dec.{i}.ln2", x), enc)
            x = x + self._mlp(f"dec.{i}.mlp", self._ln(f"dec.{i}.ln3", x))
        return self._ln("dec.lnf", x)

    def decode_logits(self, enc: T.Tensor, tokens: np.ndarray) -> T.Tensor:
        h = self.decode_hidden(enc, tokens)
        return h @ T.swapaxes(self.params["dec.emb"], 0, 1)

    # -- audio plumbing -----------------------------------------------------------

    def fit_context(self, x: T.Tensor) -> T.Tensor:
        """Pad with zeros or truncate the last axis to the fixed audio context."""
        ctx = self.cfg.context_samples
        n = x.shape[-1]
        if n > ctx:
            x = x[..., :ctx]
        elif n < ctx:
            pad_shape = x.shape[:-1] + (ctx - n,)
            x = T.concat([x, T.Tensor(np.zeros(pad_shape, dtype=np.float32))], axis=-1)
        return x

    def context_batch(self, signals) -> np.ndarray:
        """Stack raw waveforms into a fixed-context (B, ctx) float32 array."""
        ctx = self.cfg.context_samples
        out = np.zeros((len(signals), ctx), dtype=np.float32)
        for i, s in enumerate(signals):
            arr = s.samples if isinstance(s, AudioSignal) else np.asarray(s, np.float32)
            n = min(arr.size, ctx)
            out[i, :n] = arr[:n]
        return out

    def features_from_audio(self, audio: T.Tensor) -> T.Tensor:
        """Differentiable path: raw samples (B, n) -> (B, n_frames, n_mels)."""
        return self.front(self.fit_context(audio))

    def encode_signals(self, signals) -> T.Tensor:
        with T.no_grad():
            feats = self.front(T.Tensor(self.context_batch(signals)))
            return self.encode(feats)

    def first_token_log_probs(
        self, audio: T.Tensor, task: str = "transcribe", timestamps: bool = False
    ) -> T.Tensor:
        """Log distribution of the first generated token, differentiable
        w.r.t. the raw audio batch (B, n)."""
        from .vocab import decoder_prefix

        prefix = decoder_prefix(self.vocab, task=task, timestamps=timestamps)
        feats = self.features_from_audio(audio)
        enc = self.encode(feats)
        tokens = np.tile(np.asarray(prefix, dtype=np.int64), (audio.shape[0], 1))
        logits = self.decode_logits(enc, tokens)
        return T.log_softmax(logits[:, -1, :])


# -- checkpoint container -------------------------------------------------------

_CKPT_FORMAT = "mutelab-checkpoint"
_CKPT_VERSION = 1


def save_checkpoint(path, model: ToyASRModel) -> None:
    """Versioned container: one JSON header line, then raw little-endian
    float32 parameter data in header order."""
    names = sorted(model.params)
    cfg = asdict(model.cfg)
    header = {
        "format": _CKPT_FORMAT,
        "version": _CKPT_VERSION,
        "config": cfg,
        "vocab": {"words": model.vocab.words},
        "tensors": [{"name": n, "shape": list(model.params[n].shape)} for n in names],
        "model_id": model.model_id,
    }
    blob = b"".join(model.params[n].data.astype("<f4").tobytes() for n in names)
    with open(path, "wb") as f:
        f.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        f.write(blob)


def load_checkpoint(path) -> ToyASRModel:
    raw = Path(path).read_bytes()
    nl = raw.index(b"\n")
    header = json.loads(raw[:nl])
    if header.get("format") != _CKPT_FORMAT or header.get("version") != _CKPT_VERSION:
        raise ValueError(f"{path}: not a version-{_CKPT_VERSION} {_CKPT_FORMAT} file")
    cfg_dict = dict(header["config"])
    feature = FeatureConfig(**cfg_dict.pop("feature"))
    cfg = ModelConfig(feature=feature, **cfg_dict)
    vocab = Vocab(header["vocab"]["words"])
    shapes = param_shapes(cfg, len(vocab))
    blob = raw[nl + 1 :]
    expected = 4 * sum(int(np.prod(s["shape"])) for s in header["tensors"])
    if expected != len(blob):
        raise ValueError(
            f"{path}: parameter blob size mismatch ({len(blob)} vs {expected} bytes)"
        )
    params: dict[str, T.Tensor] = {}
    offset = 0
    for spec in header["tensors"]:
        name, shape = spec["name"], tuple(spec["shape"])
        if name not in shapes or shapes[name] != shape:
            raise ValueError(f"{path}: tensor {name} has unexpected shape {shape}")
        count = int(np.prod(shape))
        data = np.frombuffer(blob, dtype="<f4", count=count, offset=offset)
        params[name] = T.Tensor(data.reshape(shape).copy(), requires_grad=True)
        offset += count * 4
    if set(params) != set(shapes):
        missing = sorted(set(shapes) - set(params))
        raise ValueError(f"{path}: missing tensors {missing}")
    return ToyASRModel(cfg, vocab, params)
