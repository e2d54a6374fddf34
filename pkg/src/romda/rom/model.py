"""Parametric ROM: xi-conditioned VAE plus a transformer latent propagator.

All forward passes are written once against the autodiff :class:`Graph`;
inference simply runs them on a non-recording graph.
"""
from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field, fields

import numpy as np

from romda.errors import ContractError, ShapeError
from romda.numerics import autodiff as ad
from romda.numerics.autodiff import Graph, Node
from romda.numerics.rng import Rng

XI_CENTER = 110.0
XI_HALF_RANGE = 30.0
COMPONENTS = ("encoder", "decoder", "transformer")
_PREFIX = {"encoder": "enc.", "decoder": "dec.", "transformer": "tf."}
_MASK_VALUE = -1e9


@dataclass
class RomHyper:
    m: int
    p_latent: int = 4
    d_h: int = 64
    n_blocks: int = 1
    n_heads: int = 8
    lookback: int = 9
    horizon: int = 10
    beta_kl: float = 3e-4
    gamma_roll: float = 1.0
    lr: float = 1e-3
    lr_final_ratio: float = 0.1
    epochs: int = 200
    batch: int = 32
    enc_hidden: tuple = (256, 64)
    dec_hidden: tuple = (64, 256)
    n_ctx: int = 4
    recon_reduction: str = "sum"
    logvar_init: float = -17.0
    window_stride: int = 4

    def __post_init__(self):
        self.enc_hidden = tuple(int(h) for h in self.enc_hidden)
        self.dec_hidden = tuple(int(h) for h in self.dec_hidden)
        if self.m < 1:
            raise ContractError(f"m must be positive, got {self.m}")
        if self.p_latent < 1:
            raise ContractError(f"p_latent must be >= 1, got {self.p_latent}")
        if self.lookback < 1 or self.horizon < 1:
            raise ContractError("lookback and horizon must be >= 1")
        if self.n_heads < 1 or self.d_h % self.n_heads:
            raise ContractError(f"d_h={self.d_h} not divisible by n_heads={self.n_heads}")
        if self.recon_reduction not in ("sum", "mean"):
            raise ContractError(f"recon_reduction must be 'sum' or 'mean', got {self.recon_reduction!r}")
        if not 0 < self.lr_final_ratio <= 1:
            raise ContractError(f"lr_final_ratio must lie in (0, 1], got {self.lr_final_ratio}")
        if self.beta_kl < 0 or self.gamma_roll < 0 or not self.lr > 0:
            raise ContractError("beta_kl, gamma_roll must be >= 0 and lr > 0")
        if self.batch < 1 or self.epochs < 0 or self.window_stride < 1:
            raise ContractError("batch, window_stride must be >= 1 and epochs >= 0")

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["enc_hidden"], d["dec_hidden"] = list(self.enc_hidden), list(self.dec_hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RomHyper":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ContractError(f"unknown RomHyper fields: {sorted(unknown)}")
        return cls(**d)


@dataclass
class LatentGaussian:
    mu: np.ndarray
    logvar: np.ndarray

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64)
        self.logvar = np.asarray(self.logvar, dtype=np.float64)
        if self.mu.shape != self.logvar.shape:
            raise ShapeError(f"mu {self.mu.shape} and logvar {self.logvar.shape} differ")
        if not (np.all(np.isfinite(self.mu)) and np.all(np.isfinite(self.logvar))):
            raise ContractError("latent Gaussian has non-finite entries")


def normalize_xi(xi) -> np.ndarray:
    return (np.asarray(xi, dtype=np.float64) - XI_CENTER) / XI_HALF_RANGE


@dataclass
class Normalizer:
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, X, floor: float = 0.1) -> "Normalizer":
        """Per-feature mean and std, with std floored at ``floor * max(std)``."""
        X = np.asarray(X, dtype=np.float64)
        sd = X.std(axis=0)
        top = sd.max()
        if top == 0:
            top = 1.0
        return cls(X.mean(axis=0), np.maximum(sd, floor * top))

    def normalize(self, X):
        return (np.asarray(X, dtype=np.float64) - self.mean) / self.scale

    def denormalize(self, Xn):
        return np.asarray(Xn, dtype=np.float64) * self.scale + self.mean


def _glorot(rng: Rng, fan_in, fan_out, gain=1.0):
    return rng.normal((fan_in, fan_out)) * (gain * math.sqrt(2.0 / (fan_in + fan_out)))


def init_params(hyper: RomHyper, rng: Rng) -> dict[str, np.ndarray]:
    """Fresh parameters; each component draws from its own spawned stream."""
    p, d = hyper.p_latent, hyper.d_h
    params: dict[str, np.ndarray] = {}

    r = rng.spawn(1)
    sizes = [hyper.m + 1, *hyper.enc_hidden, 2 * p]
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        params[f"enc.w{i}"] = _glorot(r, a, b)
        params[f"enc.b{i}"] = np.zeros(b)
    last = len(sizes) - 2
    params[f"enc.b{last}"][p:] = hyper.logvar_init

    r = rng.spawn(2)
    sizes = [p + 1, *hyper.dec_hidden, hyper.m]
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        params[f"dec.w{i}"] = _glorot(r, a, b)
        params[f"dec.b{i}"] = np.zeros(b)

    r = rng.spawn(3)
    L = hyper.lookback
    params["tf.w_in"] = _glorot(r, p, d)
    params["tf.b_in"] = np.zeros(d)
    params["tf.pos"] = 0.02 * r.normal((L, d))
    params["tf.w_ctx"] = _glorot(r, 1, hyper.n_ctx * d)
    params["tf.b_ctx"] = 0.1 * r.normal(hyper.n_ctx * d)
    for k in range(hyper.n_blocks):
        pre = f"tf.blk{k}."
        for ln in ("ln1", "ln2", "ln3"):
            params[pre + ln + ".g"] = np.ones(d)
            params[pre + ln + ".b"] = np.zeros(d)
        for att in ("sa", "ca"):
            for w in ("q", "k", "v", "o"):
                params[f"{pre}{att}.w{w}"] = _glorot(r, d, d)
        params[pre + "ff.w1"] = _glorot(r, d, 2 * d)
        params[pre + "ff.b1"] = np.zeros(2 * d)
        params[pre + "ff.w2"] = _glorot(r, 2 * d, d)
        params[pre + "ff.b2"] = np.zeros(d)
    params["tf.lnf.g"] = np.ones(d)
    params["tf.lnf.b"] = np.zeros(d)
    params["tf.w_out"] = _glorot(r, d, p, gain=0.1)
    params["tf.b_out"] = np.zeros(p)
    return params


def component_of(name: str) -> str:
    for comp, pre in _PREFIX.items():
        if name.startswith(pre):
            return comp
    raise ContractError(f"parameter {name!r} belongs to no component")


# ------------------------------------------------------------------ forward passes

def _n_layers(nodes, prefix):
    return sum(1 for k in nodes if k.startswith(prefix + "w"))


def _mlp(x: Node, nodes, prefix) -> Node:
    n = _n_layers(nodes, prefix)
    for i in range(n):
        x = x @ nodes[f"{prefix}w{i}"] + nodes[f"{prefix}b{i}"]
        if i < n - 1:
            x = ad.gelu(x)
    return x


def encoder_forward(nodes, xn: Node, xin: Node, p: int):
    """Normalised states (n, m) and normalised xi (n, 1) -> (mu, logvar)."""
    out = _mlp(ad.concat([xn, xin], axis=-1), nodes, "enc.")
    return out[:, :p], out[:, p:]


def decoder_forward(nodes, z: Node, xin: Node) -> Node:
    return _mlp(ad.concat([z, xin], axis=-1), nodes, "dec.")


def _heads(x: Node, n_heads):
    B, T, d = x.shape
    return ad.transpose(ad.reshape(x, (B, T, n_heads, d // n_heads)), (0, 2, 1, 3))


def _merge(x: Node):
    B, H, T, dk = x.shape
    return ad.reshape(ad.transpose(x, (0, 2, 1, 3)), (B, T, H * dk))


def attention(q_in: Node, kv_in: Node, nodes, prefix, n_heads, mask=None, keep=None):
    """Multi-head attention; ``keep`` (optional list) receives the weights."""
    q = _heads(q_in @ nodes[prefix + "wq"], n_heads)
    k = _heads(kv_in @ nodes[prefix + "wk"], n_heads)
    v = _heads(kv_in @ nodes[prefix + "wv"], n_heads)
    scores = ad.scale(q @ ad.transpose(k, (0, 1, 3, 2)), 1.0 / math.sqrt(q.shape[-1]))
    if mask is not None:
        scores = scores + mask
    w = ad.softmax(scores)
    if keep is not None:
        keep.append(w.value)
    return _merge(w @ v) @ nodes[prefix + "wo"]


def causal_mask(L: int) -> np.ndarray:
    return np.triu(np.full((L, L), _MASK_VALUE), k=1)


def transformer_forward(nodes, hyper: RomHyper, window: Node, xin: Node, keep=None) -> Node:
    """Window (B, L, p) and normalised xi (B, 1) -> hidden states (B, L, d)."""
    B, L, _ = window.shape
    d = hyper.d_h
    h = window @ nodes["tf.w_in"] + nodes["tf.b_in"] + nodes["tf.pos"][:L]
    ctx = ad.reshape(ad.tanh(xin @ nodes["tf.w_ctx"] + nodes["tf.b_ctx"]), (B, hyper.n_ctx, d))
    mask = causal_mask(L)
    for k in range(hyper.n_blocks):
        pre = f"tf.blk{k}."
        a = ad.layer_norm(h, nodes[pre + "ln1.g"], nodes[pre + "ln1.b"])
        h = h + attention(a, a, nodes, pre + "sa.", hyper.n_heads, mask, keep)
        c = ad.layer_norm(h, nodes[pre + "ln2.g"], nodes[pre + "ln2.b"])
        h = h + attention(c, ctx, nodes, pre + "ca.", hyper.n_heads, None, keep)
        f = ad.layer_norm(h, nodes[pre + "ln3.g"], nodes[pre + "ln3.b"])
        f = ad.gelu(f @ nodes[pre + "ff.w1"] + nodes[pre + "ff.b1"])
        h = h + f @ nodes[pre + "ff.w2"] + nodes[pre + "ff.b2"]
    return ad.layer_norm(h, nodes["tf.lnf.g"], nodes["tf.lnf.b"])


def next_latent(nodes, hyper: RomHyper, window: Node, xin: Node) -> Node:
    """One-step prediction ``z_last + W_out h_last`` for a window (B, L, p)."""
    h = transformer_forward(nodes, hyper, window, xin)
    return window[:, -1, :] + h[:, -1, :] @ nodes["tf.w_out"] + nodes["tf.b_out"]


def rollout_graph(nodes, hyper: RomHyper, window: Node, xin: Node, steps: int) -> list[Node]:
    """Autoregressive predictions; each output is appended and the oldest entry dropped."""
    B, L, p = window.shape
    preds = []
    for _ in range(steps):
        z = next_latent(nodes, hyper, window, xin)
        preds.append(z)
        window = ad.concat([window[:, 1:, :], ad.reshape(z, (B, 1, p))], axis=1)
    return preds


def kl_standard_normal(mu: Node, logvar: Node) -> Node:
    """Batch mean of ``0.5 * sum(exp(lv) + mu^2 - 1 - lv)``."""
    per = ad.exp(logvar) + ad.square(mu) - 1.0 - logvar
    return ad.scale(ad.sum(per), 0.5 / mu.shape[0])


def kl_value(mu, logvar) -> np.ndarray:
    mu, logvar = np.asarray(mu, float), np.asarray(logvar, float)
    return 0.5 * np.sum(np.exp(logvar) + mu * mu - 1.0 - logvar, axis=-1)


# ------------------------------------------------------------------ the model

@dataclass
class RomModel:
    hyper: RomHyper
    params: dict
    norm: Normalizer
    frozen: dict = field(default_factory=lambda: {c: False for c in COMPONENTS})

    @classmethod
    def create(cls, hyper: RomHyper, train_states, rng: Rng) -> "RomModel":
        X = np.asarray(train_states, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != hyper.m:
            raise ShapeError(f"training states must be (T, {hyper.m}), got {X.shape}")
        return cls(hyper, init_params(hyper, rng), Normalizer.fit(X))

    def copy(self) -> "RomModel":
        return copy.deepcopy(self)

    def freeze(self, *components, frozen: bool = True) -> "RomModel":
        for c in components:
            if c not in COMPONENTS:
                raise ContractError(f"unknown component {c!r}")
            self.frozen[c] = frozen
        return self

    def component_params(self, component: str) -> dict:
        return {k: v for k, v in self.params.items() if component_of(k) == component}

    def nodes(self, graph: Graph) -> dict[str, Node]:
        """Register parameters on ``graph``; frozen ones enter as constants."""
        out = {}
        for name, value in self.params.items():
            if self.frozen[component_of(name)]:
                out[name] = graph.const(value, name)
            else:
                out[name] = graph.param(name, value)
        return out

    def _check_states(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.shape[-1] != self.hyper.m:
            raise ShapeError(f"state dimension {X.shape[-1]} != model m {self.hyper.m}")
        return X

    @staticmethod
    def _xi_column(xi, n):
        return np.full((n, 1), float(normalize_xi(xi)))

    def encode_batch(self, X, xi) -> tuple[np.ndarray, np.ndarray]:
        X = np.atleast_2d(self._check_states(X))
        g = Graph(record=False)
        nodes = {k: g.const(v) for k, v in self.params.items()}
        mu, lv = encoder_forward(nodes, g.const(self.norm.normalize(X)),
                                 g.const(self._xi_column(xi, X.shape[0])), self.hyper.p_latent)
        return mu.value, lv.value

    def encode(self, state, xi) -> LatentGaussian:
        state = self._check_states(state)
        if state.ndim != 1:
            raise ShapeError(f"encode expects one state of length {self.hyper.m}")
        mu, lv = self.encode_batch(state[None, :], xi)
        return LatentGaussian(mu[0], lv[0])

    def decode_batch(self, Z, xi) -> np.ndarray:
        Z = np.atleast_2d(np.asarray(Z, dtype=np.float64))
        if Z.shape[-1] != self.hyper.p_latent:
            raise ShapeError(f"latent dimension {Z.shape[-1]} != p_latent {self.hyper.p_latent}")
        g = Graph(record=False)
        nodes = {k: g.const(v) for k, v in self.params.items()}
        out = decoder_forward(nodes, g.const(Z), g.const(self._xi_column(xi, Z.shape[0])))
        return self.norm.denormalize(out.value)

    def decode(self, z, xi) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        if z.ndim != 1:
            raise ShapeError("decode expects a single latent vector")
        return self.decode_batch(z[None, :], xi)[0]

    def reconstruct(self, X, xi) -> np.ndarray:
        """``decode(mu(encode(x)))`` for a batch of states."""
        mu, _ = self.encode_batch(X, xi)
        return self.decode_batch(mu, xi)


def reparameterize(g: LatentGaussian, rng: Rng) -> np.ndarray:
    """``z = mu + exp(logvar / 2) * n``; the noise term is dropped when logvar < -100."""
    n = rng.normal(g.mu.shape)
    sd = np.where(g.logvar < -100.0, 0.0, np.exp(0.5 * g.logvar))
    return g.mu + sd * n
