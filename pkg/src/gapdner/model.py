"""Grid scoring network: BiLSTM encoder, biaffine + linear-attention span
features, criss-cross attention over the token-pair grid, per-cell classifier.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from gapdner import tensor as T
from gapdner.data import AnnotatedExample, LabelSet
from gapdner.scheme import FRAG_ID, GAP_ID, GridLabelMatrix
from gapdner.tensor import Tensor

UNK = "<unk>"


@dataclass
class ModelConfig:
    vocab_size: int = 1
    embed_dim: int = 32
    lstm_hidden: int = 16
    d_prime: int | None = None  # defaults to d // 2
    num_labels: int = 4
    dropout_rate: float = 0.5
    input_mode: str = "embedding"  # or "vectors": precomputed per-token inputs of width embed_dim

    def __post_init__(self):
        if self.d_prime is None:
            self.d_prime = max(1, self.d // 2)
        for key in ("vocab_size", "embed_dim", "lstm_hidden", "d_prime", "num_labels"):
            if getattr(self, key) <= 0:
                raise ValueError(f"{key} must be positive")
        if self.d_prime > self.d:
            raise ValueError(f"d_prime {self.d_prime} exceeds d {self.d}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")
        if self.input_mode not in ("embedding", "vectors"):
            raise ValueError(f"unknown input_mode {self.input_mode!r}")

    @property
    def d(self) -> int:
        return 2 * self.lstm_hidden

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Vocab:
    tokens: list[str] = field(default_factory=lambda: [UNK])

    def __post_init__(self):
        self._ids = {tok: k for k, tok in enumerate(self.tokens)}

    @classmethod
    def build(cls, corpus) -> "Vocab":
        seen = sorted({tok for ex in corpus for tok in ex.sentence.tokens} - {UNK})
        return cls([UNK] + seen)

    def __len__(self):
        return len(self.tokens)

    def encode(self, tokens) -> np.ndarray:
        return np.array([self._ids.get(tok, 0) for tok in tokens], dtype=np.int64)


def param_shapes(cfg: ModelConfig) -> dict[str, tuple]:
    d, h, e, dp, c = cfg.d, cfg.lstm_hidden, cfg.embed_dim, cfg.d_prime, cfg.num_labels
    shapes = {}
    if cfg.input_mode == "embedding":
        shapes["embedding"] = (cfg.vocab_size, e)
    for side in ("lstm_f", "lstm_b"):
        shapes.update({f"{side}.Wx": (e, 4 * h), f"{side}.Wh": (h, 4 * h), f"{side}.b": (4 * h,)})
    for mlp, width_in in (("head", d), ("tail", d), ("reduce", 2 * d)):
        shapes.update({f"{mlp}.W1": (width_in, d), f"{mlp}.b1": (d,), f"{mlp}.W2": (d, d), f"{mlp}.b2": (d,)})
    shapes.update({"biaffine.U1": (d, d, d), "biaffine.U2": (2 * d, d), "biaffine.b1": (d,)})
    for tri in ("reg_upper", "reg_lower"):
        shapes.update({f"{tri}.w": (d, 1), f"{tri}.b": (1,)})
    shapes.update({
        "cc.Wq": (d, dp), "cc.bq": (dp,),
        "cc.Wk": (d, dp), "cc.bk": (dp,),
        "cc.Wv": (d, d), "cc.bv": (d,),
        "cls.W": (d, c), "cls.b": (c,),
    })
    return shapes


# parameter groups, used by gradient checks and reporting
GROUPS = {
    "encoder": ("embedding", "lstm_f.", "lstm_b."),
    "intra_span": ("head.", "tail.", "biaffine.", "reg_upper.", "reg_lower."),
    "inter_span": ("reduce.", "cc."),
    "classifier": ("cls.",),
}


def group_of(name: str) -> str:
    for group, prefixes in GROUPS.items():
        if any(name == p or name.startswith(p) for p in prefixes):
            return group
    raise KeyError(name)


def init_params(cfg: ModelConfig, rng: np.random.Generator) -> dict[str, Tensor]:
    params = {}
    for name, shape in param_shapes(cfg).items():
        if name.endswith(".b") and name.startswith("lstm"):
            data = np.zeros(shape)
            data[cfg.lstm_hidden : 2 * cfg.lstm_hidden] = 1.0  # forget gate
        elif len(shape) == 1 or name.endswith(("b1", "b2", "bq", "bk", "bv")):
            data = np.zeros(shape)
        elif name == "embedding":
            data = rng.normal(0.0, 1.0 / math.sqrt(shape[1]), size=shape)
        elif name == "biaffine.U1":
            data = rng.normal(0.0, 1.0 / shape[0], size=shape)
        else:
            bound = math.sqrt(6.0 / (shape[0] + shape[-1]))
            data = rng.uniform(-bound, bound, size=shape)
        params[name] = T.parameter(data, name=name)
    return params


@dataclass
class ForwardResult:
    logits: Tensor  # (n, n, |C|)
    probs: Tensor  # (n, n, |C|)
    linear_attention: np.ndarray  # (n, n, n): weight of token t for cell (i, j)
    criss_cross: np.ndarray  # (n, n, 2n): row weights over (i, b) then column weights over (a, j)
    stages: dict = field(default_factory=dict)


_MASKS: dict[int, tuple] = {}


def _masks(n: int):
    if n not in _MASKS:
        i, j, t = np.meshgrid(np.arange(n), np.arange(n), np.arange(n), indexing="ij")
        upper = (i <= j) & (i <= t) & (t <= j)
        lower = (i > j) & (j <= t) & (t <= i)
        # criss-cross: full row i, then column j without the query cell itself
        col = i != t
        cc = np.concatenate([np.ones_like(col), col], axis=-1)
        _MASKS[n] = (upper, lower, cc)
    return _MASKS[n]


def _mlp(x: Tensor, params, prefix: str) -> Tensor:
    hidden = T.tanh(T.affine(x, params[f"{prefix}.W1"], params[f"{prefix}.b1"]))
    return T.affine(hidden, params[f"{prefix}.W2"], params[f"{prefix}.b2"])


def _lstm(xw: Tensor, Wh: Tensor, h_size: int, reverse: bool) -> list[Tensor]:
    n = xw.shape[0]
    h = T.constant(np.zeros(h_size))
    c = T.constant(np.zeros(h_size))
    outs = [None] * n
    steps = range(n - 1, -1, -1) if reverse else range(n)
    for t in steps:
        z = xw[t] + T.matmul(h, Wh)
        i_g = T.sigmoid(z[0:h_size])
        f_g = T.sigmoid(z[h_size : 2 * h_size])
        g_g = T.tanh(z[2 * h_size : 3 * h_size])
        o_g = T.sigmoid(z[3 * h_size :])
        c = f_g * c + i_g * g_g
        h = o_g * T.tanh(c)
        outs[t] = h
    return outs


def encode_tokens(inputs, params, cfg: ModelConfig, train: bool = False, rng=None) -> Tensor:
    """Token ids (embedding mode) or an (n, embed_dim) array (vectors mode) -> H of shape (n, d)."""
    if cfg.input_mode == "embedding":
        ids = np.asarray(inputs, dtype=np.int64)
        if ids.ndim != 1 or ids.size == 0:
            raise ValueError("encode_tokens needs a non-empty 1-D sequence of token ids")
        if ids.max() >= cfg.vocab_size or ids.min() < 0:
            raise ValueError(f"token id outside vocabulary of size {cfg.vocab_size}")
        x = params["embedding"][ids]
    else:
        arr = np.asarray(inputs.data if isinstance(inputs, Tensor) else inputs, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] == 0 or arr.shape[1] != cfg.embed_dim:
            raise ValueError(f"expected (n, {cfg.embed_dim}) token vectors with n >= 1, got {arr.shape}")
        x = inputs if isinstance(inputs, Tensor) else T.constant(arr)
    h = cfg.lstm_hidden
    fwd = _lstm(T.affine(x, params["lstm_f.Wx"], params["lstm_f.b"]), params["lstm_f.Wh"], h, reverse=False)
    bwd = _lstm(T.affine(x, params["lstm_b.Wx"], params["lstm_b.b"]), params["lstm_b.Wh"], h, reverse=True)
    H = T.concat([T.stack(fwd), T.stack(bwd)], axis=-1)
    return T.dropout(H, cfg.dropout_rate, rng, train)


def intra_span_features(H: Tensor, params, cfg: ModelConfig):
    """Return (G of shape (n, n, 2d), linear attention weights (n, n, n) tensor)."""
    n = H.shape[0]
    ones = T.constant(np.ones(n))
    hh = _mlp(H, params, "head")
    ht = _mlp(H, params, "tail")
    head_grid = T.einsum("ik,j->ijk", hh, ones)
    tail_grid = T.einsum("jk,i->ijk", ht, ones)
    span = T.bilinear_grid(hh, params["biaffine.U1"], ht) + T.affine(
        T.concat([head_grid, tail_grid], axis=-1), params["biaffine.U2"], params["biaffine.b1"]
    )

    upper, lower, _ = _masks(n)
    grid_ones = T.constant(np.ones((n, n)))
    weights = None
    for tri, mask in (("reg_upper", upper), ("reg_lower", lower)):
        scores = T.reshape(T.affine(H, params[f"{tri}.w"], params[f"{tri}.b"]), (n,))
        alpha = T.masked_softmax(T.einsum("t,ij->ijt", scores, grid_ones), mask)
        weights = alpha if weights is None else weights + alpha
    reg = T.einsum("ijt,td->ijd", weights, H)
    return T.concat([span, reg], axis=-1), weights


def criss_cross_attention(M: Tensor, params, cfg: ModelConfig):
    """Return (M', weights) where weights has shape (n, n, 2n)."""
    n = M.shape[0]
    Q = T.affine(M, params["cc.Wq"], params["cc.bq"])
    K = T.affine(M, params["cc.Wk"], params["cc.bk"])
    V = T.affine(M, params["cc.Wv"], params["cc.bv"])
    row = T.einsum("ijc,ibc->ijb", Q, K)
    col = T.einsum("ijc,ajc->ija", Q, K)
    scores = T.concat([row, col], axis=-1) * (1.0 / math.sqrt(cfg.d_prime))
    weights = T.masked_softmax(scores, _masks(n)[2])
    out = T.einsum("ijb,ibd->ijd", weights[:, :, :n], V) + T.einsum("ija,ajd->ijd", weights[:, :, n:], V)
    return out, weights


def inter_span_enhance(G: Tensor, params, cfg: ModelConfig, train: bool = False, rng=None):
    """Return (M'' of shape (n, n, d), criss-cross weights)."""
    M = T.dropout(_mlp(G, params, "reduce"), cfg.dropout_rate, rng, train)
    attended, weights = criss_cross_attention(M, params, cfg)
    return attended + M, weights


def classify_grid(enhanced: Tensor, params):
    logits = T.affine(enhanced, params["cls.W"], params["cls.b"])
    return logits, T.softmax(logits, axis=-1)


def forward(inputs, params, cfg: ModelConfig, train: bool = False, rng=None, keep_stages: bool = False) -> ForwardResult:
    H = encode_tokens(inputs, params, cfg, train, rng)
    G, lin = intra_span_features(H, params, cfg)
    enhanced, cc = inter_span_enhance(G, params, cfg, train, rng)
    logits, probs = classify_grid(enhanced, params)
    stages = {"H": H, "G": G, "M2": enhanced} if keep_stages else {}
    return ForwardResult(logits, probs, lin.data, cc.data, stages)


def constrained_argmax(probs: np.ndarray, n_labels: int) -> np.ndarray:
    """Per-cell argmax restricted to labels legal in that triangle of the grid."""
    n = probs.shape[0]
    scores = np.array(probs, copy=True)
    iu = np.triu_indices(n, 1)
    il = np.tril_indices(n, -1)
    scores[iu[0], iu[1], 3:] = -np.inf
    scores[il[0], il[1], FRAG_ID] = -np.inf
    scores[il[0], il[1], GAP_ID] = -np.inf
    return scores.argmax(axis=-1)


class GapDNER:
    """Configuration, label set, vocabulary and parameters bundled for training and inference."""

    def __init__(self, config: ModelConfig, labels: LabelSet, vocab: Vocab, params: dict[str, Tensor]):
        self.config = config
        self.labels = labels
        self.vocab = vocab
        self.params = params
        expected = param_shapes(config)
        if set(expected) != set(params):
            raise ValueError(f"parameter names mismatch: {sorted(set(expected) ^ set(params))}")
        for name, shape in expected.items():
            if params[name].shape != tuple(shape):
                raise ValueError(f"parameter {name} has shape {params[name].shape}, expected {shape}")

    @classmethod
    def create(cls, config: ModelConfig, labels: LabelSet, vocab: Vocab, rng: np.random.Generator) -> "GapDNER":
        if config.num_labels != len(labels):
            raise ValueError(f"num_labels {config.num_labels} != label set size {len(labels)}")
        if config.input_mode == "embedding" and config.vocab_size != len(vocab):
            raise ValueError(f"vocab_size {config.vocab_size} != vocabulary size {len(vocab)}")
        return cls(config, labels, vocab, init_params(config, rng))

    def inputs_for(self, example: AnnotatedExample, vectors: dict | None = None):
        if self.config.input_mode == "embedding":
            return self.vocab.encode(example.sentence.tokens)
        if vectors is None or example.id not in vectors:
            raise KeyError(f"no precomputed token vectors for example {example.id!r}")
        arr = vectors[example.id]
        if arr.shape[0] != example.n:
            raise ValueError(f"example {example.id!r}: {arr.shape[0]} vectors for {example.n} tokens")
        return arr

    def forward(self, example: AnnotatedExample, train: bool = False, rng=None, vectors=None) -> ForwardResult:
        return forward(self.inputs_for(example, vectors), self.params, self.config, train, rng)

    def predict_grid(self, example: AnnotatedExample, vectors=None) -> GridLabelMatrix:
        result = self.forward(example, vectors=vectors)
        return GridLabelMatrix(self.labels, constrained_argmax(result.probs.data, len(self.labels)))

    def parameters(self) -> list[Tensor]:
        return [self.params[k] for k in sorted(self.params)]

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def save(self, path, extra: dict | None = None):
        meta = {
            "model_config": self.config.to_dict(),
            "labels": list(self.labels.entity_types),
            "vocab": self.vocab.tokens,
        }
        if extra:
            meta["extra"] = extra
        T.save_arrays(path, {k: self.params[k] for k in sorted(self.params)}, meta)

    @classmethod
    def load(cls, path) -> "GapDNER":
        meta, arrays = T.load_arrays(path)
        cfg = ModelConfig(**meta["model_config"])
        params = {k: T.parameter(v, name=k) for k, v in arrays.items()}
        return cls(cfg, LabelSet(tuple(meta["labels"])), Vocab(list(meta["vocab"])), params)


def load_token_vectors(path) -> dict[str, np.ndarray]:
    """Read precomputed per-token vectors: JSONL lines {"id": str, "vectors": [[float, ...], ...]}."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            rec = json.loads(line)
            arr = np.asarray(rec["vectors"], dtype=np.float64)
            if arr.ndim != 2:
                raise ValueError(f"{path}:{lineno}: vectors must be a list of equal-length lists")
            out[str(rec["id"])] = arr
    return out
