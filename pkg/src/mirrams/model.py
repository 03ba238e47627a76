"""Transformer classifier over per-feature tokens with learned missing tokens.

Row ``x`` becomes ``p + 1`` tokens: a CLS token, then one token per feature.
A continuous feature is embedded by its own 1 -> hidden -> d MLP, a
categorical one by its own lookup table.  Wherever the mask says the feature
is missing, that feature's learned missing token is substituted, so the raw
value is never read.  A pre-norm transformer encoder attends across the
tokens of each row (never across rows); the head reads the CLS position.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .data import TabularDataset
from .tensor import (
    Tensor,
    broadcast_to,
    concat,
    dropout,
    gather,
    layer_norm,
    softmax,
    where,
)

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    n_cont: int
    cat_vocab: tuple[int, ...] = ()
    n_classes: int = 2
    d: int = 32
    depth: int = 6
    heads: int = 8
    ff_mult: int = 4
    dropout: float = 0.1
    mlp_hidden: int = 100

    def __post_init__(self):
        object.__setattr__(self, "cat_vocab", tuple(int(v) for v in self.cat_vocab))
        if self.d % self.heads:
            raise ValueError(f"embedding dim {self.d} is not divisible by {self.heads} heads")
        if self.depth < 1:
            raise ValueError("depth must be at least 1")
        if self.n_classes < 2:
            raise ValueError("need at least two classes")
        if self.n_cont + len(self.cat_vocab) < 1:
            raise ValueError("model needs at least one feature")

    @property
    def p(self) -> int:
        return self.n_cont + len(self.cat_vocab)

    @classmethod
    def for_dataset(cls, ds: TabularDataset, preset: str | None = None, **overrides) -> "ModelConfig":
        if preset is None:
            preset = "full-wide" if ds.p > 100 else "full"
        arch = dict(PRESETS[preset]["arch"])
        arch.update(overrides)
        vocab = tuple(len(c.vocabulary) for c in ds.schema.categorical)
        return cls(n_cont=ds.x_cont.shape[1], cat_vocab=vocab, n_classes=ds.n_classes, **arch)


# Architecture presets.  "full*" are the full-size settings; "desk" and
# "tiny" are reduced sizes for single-CPU runs and tests.
PRESETS: dict[str, dict] = {
    "full": {"arch": {"d": 32, "depth": 6, "heads": 8}, "batch_size": 256},
    "full-wide": {"arch": {"d": 4, "depth": 6, "heads": 2}, "batch_size": 64},
    "arrhythmia": {"arch": {"d": 4, "depth": 1, "heads": 2}, "batch_size": 64},
    "arcene": {"arch": {"d": 4, "depth": 4, "heads": 1}, "batch_size": 64},
    "desk": {"arch": {"d": 16, "depth": 1, "heads": 4, "ff_mult": 2}, "batch_size": 256},
    "tiny": {"arch": {"d": 8, "depth": 1, "heads": 2, "ff_mult": 2, "mlp_hidden": 16}, "batch_size": 64},
}


def preset_batch_size(preset: str | None, p: int) -> int:
    if preset is None:
        preset = "full-wide" if p > 100 else "full"
    return PRESETS[preset]["batch_size"]


def _truncated_normal(rng, shape, std=0.02):
    z = rng.standard_normal(shape)
    bad = np.abs(z) > 2.0
    while bad.any():
        z[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(z) > 2.0
    return z * std


def _kaiming_uniform(rng, shape, fan_in):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_params(config: ModelConfig, seed: int = 0) -> dict[str, Tensor]:
    rng = np.random.default_rng(seed)
    d, h = config.d, config.mlp_hidden
    arrays: dict[str, np.ndarray] = {}
    if config.n_cont:
        pc = config.n_cont
        arrays["cont.w1"] = _kaiming_uniform(rng, (pc, h), 1)
        arrays["cont.b1"] = np.zeros((pc, h))
        arrays["cont.w2"] = _kaiming_uniform(rng, (pc, h, d), h)
        arrays["cont.b2"] = np.zeros((pc, d))
    for j, v in enumerate(config.cat_vocab):
        arrays[f"cat{j}.table"] = _truncated_normal(rng, (v + 1, d))
    arrays["missing"] = _truncated_normal(rng, (config.p, d))
    arrays["cls"] = _truncated_normal(rng, (d,))
    ff = config.ff_mult * d
    for i in range(config.depth):
        b = f"block{i}."
        arrays[b + "ln1.scale"] = np.ones(d)
        arrays[b + "ln1.shift"] = np.zeros(d)
        arrays[b + "attn.wqkv"] = _kaiming_uniform(rng, (d, 3 * d), d)
        arrays[b + "attn.bqkv"] = np.zeros(3 * d)
        arrays[b + "attn.wo"] = _kaiming_uniform(rng, (d, d), d)
        arrays[b + "attn.bo"] = np.zeros(d)
        arrays[b + "ln2.scale"] = np.ones(d)
        arrays[b + "ln2.shift"] = np.zeros(d)
        arrays[b + "ff.w1"] = _kaiming_uniform(rng, (d, ff), d)
        arrays[b + "ff.b1"] = np.zeros(ff)
        arrays[b + "ff.w2"] = _kaiming_uniform(rng, (ff, d), ff)
        arrays[b + "ff.b2"] = np.zeros(d)
    arrays["final_ln.scale"] = np.ones(d)
    arrays["final_ln.shift"] = np.zeros(d)
    arrays["head.w1"] = _kaiming_uniform(rng, (d, d), d)
    arrays["head.b1"] = np.zeros(d)
    arrays["head.w2"] = _kaiming_uniform(rng, (d, config.n_classes), d)
    arrays["head.b2"] = np.zeros(config.n_classes)
    return {k: Tensor(v, requires_grad=True, name=k) for k, v in arrays.items()}


def _linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    # Flatten leading axes so the product is a single 2-D GEMM.
    lead = x.shape[:-1]
    flat = x.reshape(-1, x.shape[-1]) if x.ndim != 2 else x
    out = flat @ w + b
    return out.reshape(*lead, w.shape[-1]) if x.ndim != 2 else out


@dataclass(frozen=True)
class Prediction:
    probs: np.ndarray

    @property
    def labels(self) -> np.ndarray:
        return np.argmax(self.probs, axis=1)

    @property
    def confidence(self) -> np.ndarray:
        return self.probs.max(axis=1)

    @property
    def positive_score(self) -> np.ndarray:
        return self.probs[:, -1]


@dataclass
class MirramsModel:
    config: ModelConfig
    params: dict[str, Tensor] = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if not self.params:
            self.params = init_params(self.config, self.seed)

    # -- forward ----------------------------------------------------------

    def embed(self, ds: TabularDataset, mask: np.ndarray | None = None) -> Tensor:
        """Token embeddings, shape ``(n, p + 1, d)``; position 0 is CLS."""
        cfg, P = self.config, self.params
        mask = ds.mask if mask is None else np.asarray(mask, dtype=bool)
        n = ds.n
        if mask.shape != (n, cfg.p):
            raise ValueError(f"mask shape {mask.shape} != ({n}, {cfg.p})")
        pieces = []
        if cfg.n_cont:
            # Masked raw values (NaN sentinels included) are replaced before use.
            x = np.where(mask[:, : cfg.n_cont], ds.x_cont, 0.0)
            hid = (Tensor(x[:, :, None]) * P["cont.w1"] + P["cont.b1"]).relu()
            emb = (hid.transpose(1, 0, 2) @ P["cont.w2"]).transpose(1, 0, 2) + P["cont.b2"]
            pieces.append(emb)
        for j, v in enumerate(cfg.cat_vocab):
            idx = np.where(mask[:, cfg.n_cont + j], ds.x_cat[:, j], 0)
            if idx.size and (idx.min() < 0 or idx.max() > v):
                raise IndexError(f"categorical feature {j}: index outside vocabulary of size {v}")
            pieces.append(gather(P[f"cat{j}.table"], idx).reshape(n, 1, cfg.d))
        feats = pieces[0] if len(pieces) == 1 else concat(pieces, axis=1)
        tokens = where(mask[:, :, None], feats, P["missing"])
        cls = broadcast_to(P["cls"].reshape(1, 1, cfg.d), (n, 1, cfg.d))
        return concat([cls, tokens], axis=1)

    def _block(self, x: Tensor, i: int, rng, cls_only: bool) -> Tensor:
        cfg, P = self.config, self.params
        b = f"block{i}."
        n, t, d = x.shape
        h, dh = cfg.heads, d // cfg.heads
        a = layer_norm(x, P[b + "ln1.scale"], P[b + "ln1.shift"])
        qkv = _linear(a, P[b + "attn.wqkv"], P[b + "attn.bqkv"])
        qkv = qkv.reshape(n, t, 3, h, dh).transpose(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        tq = t
        if cls_only:
            # Only the CLS row feeds the head, so the last block queries it alone.
            q, tq = q[:, :, 0:1, :], 1
            x = x[:, 0:1, :]
        att = softmax((q @ k.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(dh)))
        o = (att @ v).transpose(0, 2, 1, 3).reshape(n, tq, d)
        o = dropout(_linear(o, P[b + "attn.wo"], P[b + "attn.bo"]), cfg.dropout, rng)
        x = x + o
        f = _linear(layer_norm(x, P[b + "ln2.scale"], P[b + "ln2.shift"]), P[b + "ff.w1"], P[b + "ff.b1"])
        f = dropout(f.gelu(), cfg.dropout, rng)
        f = dropout(_linear(f, P[b + "ff.w2"], P[b + "ff.b2"]), cfg.dropout, rng)
        return x + f

    def logits(self, ds: TabularDataset, mask: np.ndarray | None = None,
               rng: np.random.Generator | None = None) -> Tensor:
        """Class logits ``(n, K)``.  ``rng`` enables dropout (training mode)."""
        P = self.params
        x = self.embed(ds, mask)
        for i in range(self.config.depth):
            x = self._block(x, i, rng, cls_only=i == self.config.depth - 1)
        c = layer_norm(x[:, 0, :], P["final_ln.scale"], P["final_ln.shift"])
        hid = _linear(c, P["head.w1"], P["head.b1"]).relu()
        return _linear(hid, P["head.w2"], P["head.b2"])

    def forward(self, ds: TabularDataset, mask=None, rng=None) -> Tensor:
        """Scores on the K-simplex, as a graph node."""
        return softmax(self.logits(ds, mask, rng))

    def predict(self, ds: TabularDataset, mask: np.ndarray | None = None, batch_size: int = 1024) -> Prediction:
        mask = ds.mask if mask is None else np.asarray(mask, dtype=bool)
        out = []
        for start in range(0, ds.n, batch_size):
            rows = np.arange(start, min(start + batch_size, ds.n))
            part = ds.subset(rows)
            out.append(self.forward(part, mask[rows]).data)
        probs = np.concatenate(out, axis=0) if out else np.zeros((0, self.config.n_classes))
        return Prediction(probs)

    # -- state ------------------------------------------------------------

    def state(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for k, v in state.items():
            if self.params[k].shape != v.shape:
                raise ValueError(f"parameter {k!r}: shape {v.shape} != {self.params[k].shape}")
            self.params[k].data = np.array(v, dtype=np.float64)

    def copy(self) -> "MirramsModel":
        clone = MirramsModel(self.config, params={k: Tensor(v.data.copy(), True, k) for k, v in self.params.items()},
                             seed=self.seed)
        return clone

    def n_parameters(self) -> int:
        return int(sum(p.data.size for p in self.params.values()))

    def save(self, path) -> None:
        header = json.dumps({"format": "mirrams-checkpoint", "version": CHECKPOINT_VERSION,
                             "config": asdict(self.config), "seed": self.seed})
        with Path(path).open("wb") as fh:
            np.savez(fh, __header__=np.array(header), **{k: v.data for k, v in self.params.items()})

    @classmethod
    def load(cls, path) -> "MirramsModel":
        with np.load(path, allow_pickle=False) as z:
            header = json.loads(str(z["__header__"]))
            if header.get("format") != "mirrams-checkpoint":
                raise ValueError(f"{path}: not a checkpoint file")
            if header["version"] > CHECKPOINT_VERSION:
                raise ValueError(f"{path}: checkpoint version {header['version']} is newer than supported")
            config = ModelConfig(**header["config"])
            params = {k: Tensor(z[k].copy(), True, k) for k in z.files if k != "__header__"}
        model = cls(config, params=params, seed=header["seed"])
        expected = set(init_params(replace(config), 0))
        if set(params) != expected:
            raise ValueError(f"{path}: parameter set does not match the config")
        return model
