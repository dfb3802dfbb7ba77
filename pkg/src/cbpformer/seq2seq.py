"""A small encoder-decoder Transformer in numpy, with exact backpropagation.

Each scalar parameter ``theta_i`` is one encoder token.  The decoder reads a
learned start vector followed by the (shifted) control-point tokens, uses a
causal self-attention mask, and emits one token per position through a
linear head and a logistic squashing into (0, 1).  Layers use
pre-normalization with residual connections; everything runs in float64.

Training is teacher forcing with Adam on the summed squared error; inference
is greedy autoregression.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import struct
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigurationError, NumericError, ShapeError, StateError

log = logging.getLogger(__name__)

LN_EPS = 1e-5
_MAGIC = b"CBPCKPT1"


@dataclass
class HyperParams:
    d_emb: int = 64
    n_heads: int = 4
    n_layers: int = 1
    dropout_rate: float = 0.1
    learning_rate: float = 4e-4
    batch_size: int = 8
    epochs: int = 30
    seed: int = 0
    d_ff: int | None = None  # defaults to 4 * d_emb
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.d_emb % self.n_heads:
            raise ConfigurationError("d_emb must be divisible by n_heads")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigurationError("dropout_rate must lie in [0, 1)")
        if self.learning_rate < 0:
            raise ConfigurationError("learning_rate must be nonnegative")
        if self.batch_size < 1 or self.epochs < 0 or self.n_layers < 1:
            raise ConfigurationError("batch_size and n_layers must be >= 1, epochs >= 0")
        if self.d_ff is None:
            self.d_ff = 4 * self.d_emb


# -- primitive layers -------------------------------------------------------


def _linear(x, W, b):
    y = x.reshape(-1, x.shape[-1]) @ W
    y += b
    return y.reshape(x.shape[:-1] + (W.shape[1],))


def _linear_back(dy, x, W, gW, gb):
    dy2 = dy.reshape(-1, dy.shape[-1])
    gW += x.reshape(-1, x.shape[-1]).T @ dy2
    gb += dy2.sum(axis=0)
    return (dy2 @ W.T).reshape(dy.shape[:-1] + (W.shape[0],))


def _layernorm(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + LN_EPS)
    xhat = xc * inv
    return xhat * g + b, (xhat, inv)


def _layernorm_back(dy, cache, g, gg, gb):
    xhat, inv = cache
    gg += (dy * xhat).reshape(-1, xhat.shape[-1]).sum(axis=0)
    gb += dy.reshape(-1, dy.shape[-1]).sum(axis=0)
    dxhat = dy * g
    return inv * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )


def _dropout(x, rate, rng):
    if rng is None or rate == 0.0:
        return x, None
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * mask, mask


def _split_heads(x, h):
    B, T, D = x.shape
    return x.reshape(B, T, h, D // h).transpose(0, 2, 1, 3)


def _merge_heads(x):
    B, h, T, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(B, T, h * dh)


def _attention(P, pre, xq, xkv, h, causal):
    q = _split_heads(_linear(xq, P[pre + "Wq"], P[pre + "bq"]), h)
    k = _split_heads(_linear(xkv, P[pre + "Wk"], P[pre + "bk"]), h)
    v = _split_heads(_linear(xkv, P[pre + "Wv"], P[pre + "bv"]), h)
    scale = 1.0 / np.sqrt(q.shape[-1])
    s = (q @ k.transpose(0, 1, 3, 2)) * scale
    if causal:
        Tq, Tk = s.shape[-2:]
        allowed = np.tril(np.ones((Tq, Tk), dtype=bool))
        s = np.where(allowed, s, -np.inf)
    s = s - s.max(axis=-1, keepdims=True)
    a = np.exp(s)
    a /= a.sum(axis=-1, keepdims=True)
    ctx = _merge_heads(a @ v)
    out = _linear(ctx, P[pre + "Wo"], P[pre + "bo"])
    return out, (xq, xkv, q, k, v, a, ctx, scale)


def _attention_back(dout, cache, P, G, pre, h):
    xq, xkv, q, k, v, a, ctx, scale = cache
    dctx = _linear_back(dout, ctx, P[pre + "Wo"], G[pre + "Wo"], G[pre + "bo"])
    dctx = _split_heads(dctx, h)
    da = dctx @ v.transpose(0, 1, 3, 2)
    dv = a.transpose(0, 1, 3, 2) @ dctx
    ds = a * (da - (da * a).sum(axis=-1, keepdims=True)) * scale
    dq = ds @ k
    dk = ds.transpose(0, 1, 3, 2) @ q
    dxq = _linear_back(_merge_heads(dq), xq, P[pre + "Wq"], G[pre + "Wq"], G[pre + "bq"])
    dxkv = _linear_back(_merge_heads(dk), xkv, P[pre + "Wk"], G[pre + "Wk"], G[pre + "bk"])
    dxkv += _linear_back(_merge_heads(dv), xkv, P[pre + "Wv"], G[pre + "Wv"], G[pre + "bv"])
    return dxq, dxkv


def _feedforward(P, pre, x):
    hpre = _linear(x, P[pre + "W1"], P[pre + "b1"])
    hact = np.maximum(hpre, 0.0)
    return _linear(hact, P[pre + "W2"], P[pre + "b2"]), (x, hpre, hact)


def _feedforward_back(dy, cache, P, G, pre):
    x, hpre, hact = cache
    dh = _linear_back(dy, hact, P[pre + "W2"], G[pre + "W2"], G[pre + "b2"])
    dh = dh * (hpre > 0)
    return _linear_back(dh, x, P[pre + "W1"], G[pre + "W1"], G[pre + "b1"])


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _check_finite(x, where):
    if not np.all(np.isfinite(x)):
        raise NumericError(f"non-finite activation in {where}")


# -- model -----------------------------------------------------------------


@dataclass
class Cache:
    entries: dict = field(default_factory=dict)
    batch: int = 0


class Seq2Seq:
    """Encoder-decoder over ``theta`` tokens and control-point tokens.

    Parameters
    ----------
    hp : HyperParams
    enc_len : int
        Number of ``theta`` components (encoder tokens).
    dec_len : int
        Number of output tokens, ``M + 1``.
    channels : int
        Size of each output token.
    meta : dict, optional
        Problem metadata (kind, K, N, constants, normalizations) carried into
        checkpoints and used by :meth:`infer` for consistency checks.
    """

    def __init__(self, hp: HyperParams, enc_len: int, dec_len: int, channels: int, meta=None):
        self.hp = hp
        self.enc_len = enc_len
        self.dec_len = dec_len
        self.channels = channels
        self.meta = dict(meta or {})
        self.step = 0
        self._layout = self.shapes()
        self.flat = np.zeros(sum(int(np.prod(s)) for s in self._layout.values()))
        self.params = self._views(self.flat)
        self._init_params(np.random.default_rng(hp.seed))
        self.m_flat = np.zeros_like(self.flat)
        self.v_flat = np.zeros_like(self.flat)
        self.adam_m = self._views(self.m_flat)
        self.adam_v = self._views(self.v_flat)

    def _views(self, buf) -> dict:
        """Named parameter-shaped views into one contiguous buffer."""
        out, off = {}, 0
        for name, shape in self._layout.items():
            n = int(np.prod(shape))
            out[name] = buf[off : off + n].reshape(shape)
            off += n
        return out

    # parameter layout ------------------------------------------------------

    def shapes(self) -> dict:
        d, f, C = self.hp.d_emb, self.hp.d_ff, self.channels
        s = {
            "enc_in.W": (1, d),
            "enc_in.b": (d,),
            "enc_pos": (self.enc_len, d),
            "dec_in.W": (C, d),
            "dec_in.b": (d,),
            "dec_start": (d,),
            "dec_pos": (self.dec_len + 1, d),
        }

        def attn(pre):
            for n in "qkvo":
                s[f"{pre}W{n}"] = (d, d)
                s[f"{pre}b{n}"] = (d,)

        def ln(pre):
            s[pre + "g"] = (d,)
            s[pre + "b"] = (d,)

        def ff(pre):
            s.update({pre + "W1": (d, f), pre + "b1": (f,), pre + "W2": (f, d), pre + "b2": (d,)})

        for l in range(self.hp.n_layers):
            p = f"enc.{l}."
            ln(p + "ln1.")
            attn(p + "attn.")
            ln(p + "ln2.")
            ff(p + "ff.")
        ln("enc.lnf.")
        for l in range(self.hp.n_layers):
            p = f"dec.{l}."
            ln(p + "ln1.")
            attn(p + "self.")
            ln(p + "ln2.")
            attn(p + "cross.")
            ln(p + "ln3.")
            ff(p + "ff.")
        ln("dec.lnf.")
        s["out.W"] = (d, C)
        s["out.b"] = (C,)
        return s

    def _init_params(self, rng):
        for name, shape in self._layout.items():
            p = self.params[name]
            if name.endswith(".g"):
                p[...] = 1.0
            elif len(shape) == 1 and name != "dec_start":
                p[...] = 0.0
            else:
                fan_in = shape[0] if len(shape) == 2 and not name.endswith("_pos") else shape[-1]
                lim = 1.0 / np.sqrt(fan_in)
                p[...] = rng.uniform(-lim, lim, shape)

    def zero_grads(self) -> "Grads":
        g = Grads(self._views(buf := np.zeros_like(self.flat)))
        g.flat = buf
        return g

    # forward / backward ----------------------------------------------------

    def forward(self, enc_in, dec_in, train_mode: bool = False, rng=None):
        """Predict every decoder position.

        ``enc_in`` is ``(B, p)`` normalized parameters; ``dec_in`` is the
        ``(B, T, C)`` token sequence *without* the start token (position 0
        is always the start vector, position ``i`` embeds ``dec_in[:, i-1]``).
        ``T + 1`` predictions are returned.  Dropout is active only with
        ``train_mode`` and an ``rng``.
        """
        P, hp = self.params, self.hp
        enc_in = np.asarray(enc_in, dtype=np.float64)
        dec_in = np.asarray(dec_in, dtype=np.float64)
        if enc_in.ndim != 2 or enc_in.shape[1] != self.enc_len:
            raise ShapeError(f"encoder input must be (B, {self.enc_len})")
        if dec_in.ndim != 3 or dec_in.shape[2] != self.channels or dec_in.shape[1] > self.dec_len:
            raise ShapeError(f"decoder input must be (B, T<={self.dec_len}, {self.channels})")
        drop = hp.dropout_rate if train_mode else 0.0
        rng = rng if train_mode else None
        c = {}
        B, T = dec_in.shape[0], dec_in.shape[1] + 1

        x = enc_in[:, :, None] * P["enc_in.W"] + P["enc_in.b"] + P["enc_pos"]
        x, c["enc.drop"] = _dropout(x, drop, rng)
        for l in range(hp.n_layers):
            p = f"enc.{l}."
            hN, c[p + "ln1"] = _layernorm(x, P[p + "ln1.g"], P[p + "ln1.b"])
            a, c[p + "attn"] = _attention(P, p + "attn.", hN, hN, hp.n_heads, False)
            a, c[p + "drop1"] = _dropout(a, drop, rng)
            x = x + a
            hN, c[p + "ln2"] = _layernorm(x, P[p + "ln2.g"], P[p + "ln2.b"])
            f, c[p + "ff"] = _feedforward(P, p + "ff.", hN)
            f, c[p + "drop2"] = _dropout(f, drop, rng)
            x = x + f
            _check_finite(x, f"encoder layer {l}")
        mem, c["enc.lnf"] = _layernorm(x, P["enc.lnf.g"], P["enc.lnf.b"])

        emb = _linear(dec_in, P["dec_in.W"], P["dec_in.b"])
        y = np.concatenate([np.broadcast_to(P["dec_start"], (B, 1, hp.d_emb)), emb], axis=1)
        y = y + P["dec_pos"][:T]
        y, c["dec.drop"] = _dropout(y, drop, rng)
        for l in range(hp.n_layers):
            p = f"dec.{l}."
            hN, c[p + "ln1"] = _layernorm(y, P[p + "ln1.g"], P[p + "ln1.b"])
            a, c[p + "self"] = _attention(P, p + "self.", hN, hN, hp.n_heads, True)
            a, c[p + "drop1"] = _dropout(a, drop, rng)
            y = y + a
            hN, c[p + "ln2"] = _layernorm(y, P[p + "ln2.g"], P[p + "ln2.b"])
            a, c[p + "cross"] = _attention(P, p + "cross.", hN, mem, hp.n_heads, False)
            a, c[p + "drop2"] = _dropout(a, drop, rng)
            y = y + a
            hN, c[p + "ln3"] = _layernorm(y, P[p + "ln3.g"], P[p + "ln3.b"])
            f, c[p + "ff"] = _feedforward(P, p + "ff.", hN)
            f, c[p + "drop3"] = _dropout(f, drop, rng)
            y = y + f
            _check_finite(y, f"decoder layer {l}")
        yN, c["dec.lnf"] = _layernorm(y, P["dec.lnf.g"], P["dec.lnf.b"])
        logits = _linear(yN, P["out.W"], P["out.b"])
        _check_finite(logits, "output head")
        pred = _sigmoid(logits)
        c.update(enc_in=enc_in, dec_in=dec_in, yN=yN, pred=pred)
        return pred, Cache(c, B)

    def backward(self, cache: Cache | None, dpred) -> dict:
        """Gradients of a scalar loss given ``dpred = dL/dpred``."""
        if cache is None or "pred" not in cache.entries:
            raise StateError("backward needs the cache of a forward pass")
        P, G, hp = self.params, self.zero_grads(), self.hp
        c = cache.entries
        pred = c["pred"]
        dlog = dpred * pred * (1.0 - pred)
        dyN = _linear_back(dlog, c["yN"], P["out.W"], G["out.W"], G["out.b"])
        dy = _layernorm_back(dyN, c["dec.lnf"], P["dec.lnf.g"], G["dec.lnf.g"], G["dec.lnf.b"])
        dmem = 0.0
        for l in reversed(range(hp.n_layers)):
            p = f"dec.{l}."
            df = _drop_back(dy, c[p + "drop3"])
            dh = _feedforward_back(df, c[p + "ff"], P, G, p + "ff.")
            dy = dy + _layernorm_back(dh, c[p + "ln3"], P[p + "ln3.g"], G[p + "ln3.g"], G[p + "ln3.b"])
            da = _drop_back(dy, c[p + "drop2"])
            dq, dkv = _attention_back(da, c[p + "cross"], P, G, p + "cross.", hp.n_heads)
            dmem = dmem + dkv
            dy = dy + _layernorm_back(dq, c[p + "ln2"], P[p + "ln2.g"], G[p + "ln2.g"], G[p + "ln2.b"])
            da = _drop_back(dy, c[p + "drop1"])
            dq, dkv = _attention_back(da, c[p + "self"], P, G, p + "self.", hp.n_heads)
            dy = dy + _layernorm_back(dq + dkv, c[p + "ln1"], P[p + "ln1.g"], G[p + "ln1.g"], G[p + "ln1.b"])
        dy = _drop_back(dy, c["dec.drop"])
        T = dy.shape[1]
        G["dec_pos"][:T] += dy.sum(axis=0)
        G["dec_start"] += dy[:, 0].sum(axis=0)
        _linear_back(dy[:, 1:], c["dec_in"], P["dec_in.W"], G["dec_in.W"], G["dec_in.b"])

        dx = _layernorm_back(dmem, c["enc.lnf"], P["enc.lnf.g"], G["enc.lnf.g"], G["enc.lnf.b"])
        for l in reversed(range(hp.n_layers)):
            p = f"enc.{l}."
            df = _drop_back(dx, c[p + "drop2"])
            dh = _feedforward_back(df, c[p + "ff"], P, G, p + "ff.")
            dx = dx + _layernorm_back(dh, c[p + "ln2"], P[p + "ln2.g"], G[p + "ln2.g"], G[p + "ln2.b"])
            da = _drop_back(dx, c[p + "drop1"])
            dq, dkv = _attention_back(da, c[p + "attn"], P, G, p + "attn.", hp.n_heads)
            dx = dx + _layernorm_back(dq + dkv, c[p + "ln1"], P[p + "ln1.g"], G[p + "ln1.g"], G[p + "ln1.b"])
        dx = _drop_back(dx, c["enc.drop"])
        G["enc_pos"] += dx.sum(axis=0)
        G["enc_in.W"] += np.einsum("bp,bpd->d", c["enc_in"], dx)[None, :]
        G["enc_in.b"] += dx.sum(axis=(0, 1))
        return G

    # optimizer -----------------------------------------------------------

    def adam_step(self, grads: "Grads") -> None:
        hp = self.hp
        self.step += 1
        bc1 = 1.0 - hp.beta1**self.step
        bc2 = 1.0 - hp.beta2**self.step
        g = grads.flat
        m, v = self.m_flat, self.v_flat
        tmp = np.multiply(g, 1.0 - hp.beta1)
        m *= hp.beta1
        m += tmp
        np.multiply(g, g, out=tmp)
        tmp *= 1.0 - hp.beta2
        v *= hp.beta2
        v += tmp
        # in place: flat -= lr * (m / bc1) / (sqrt(v / bc2) + eps)
        np.sqrt(v, out=tmp)
        tmp *= 1.0 / np.sqrt(bc2)
        tmp += hp.adam_eps
        np.divide(m, tmp, out=tmp)
        tmp *= hp.learning_rate / bc1
        self.flat -= tmp

    # inference -------------------------------------------------------------

    def infer(self, theta_norm, length: int | None = None):
        """Greedy autoregressive decoding from normalized parameters.

        ``theta_norm`` is ``(p,)`` or ``(B, p)``; returns ``(length, C)`` or
        ``(B, length, C)`` tokens in (0, 1).
        """
        enc = np.asarray(theta_norm, dtype=np.float64)
        single = enc.ndim == 1
        enc = np.atleast_2d(enc)
        length = self.dec_len if length is None else length
        if length < 1 or length > self.dec_len:
            raise ConfigurationError(f"length must be in [1, {self.dec_len}]")
        out = np.zeros((enc.shape[0], 0, self.channels))
        for i in range(length):
            pred, _ = self.forward(enc, out, train_mode=False)
            out = np.concatenate([out, pred[:, i : i + 1]], axis=1)
        return out[0] if single else out

    # checkpoints -----------------------------------------------------------

    def copy(self) -> "Seq2Seq":
        other = Seq2Seq.__new__(Seq2Seq)
        other.hp = HyperParams(**asdict(self.hp))
        other.enc_len, other.dec_len, other.channels = self.enc_len, self.dec_len, self.channels
        other.meta = json.loads(json.dumps(self.meta))
        other.step = self.step
        other._layout = dict(self._layout)
        other.flat = self.flat.copy()
        other.m_flat = self.m_flat.copy()
        other.v_flat = self.v_flat.copy()
        other.params = other._views(other.flat)
        other.adam_m = other._views(other.m_flat)
        other.adam_v = other._views(other.v_flat)
        return other

    def _blocks(self):
        for k in self.params:
            yield k, self.params[k]
        for k in self.params:
            yield "adam.m." + k, self.adam_m[k]
        for k in self.params:
            yield "adam.v." + k, self.adam_v[k]

    def to_bytes(self) -> bytes:
        manifest = {
            "hp": asdict(self.hp),
            "enc_len": self.enc_len,
            "dec_len": self.dec_len,
            "channels": self.channels,
            "meta": self.meta,
            "step": self.step,
            "blocks": [[k, list(v.shape)] for k, v in self._blocks()],
        }
        head = json.dumps(manifest, sort_keys=True).encode()
        buf = io.BytesIO()
        buf.write(_MAGIC)
        buf.write(struct.pack("<Q", len(head)))
        buf.write(head)
        for _, arr in self._blocks():
            buf.write(struct.pack("<Q", arr.size))
            buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "Seq2Seq":
        if data[:8] != _MAGIC:
            raise ConfigurationError("not a checkpoint file")
        (n,) = struct.unpack_from("<Q", data, 8)
        manifest = json.loads(data[16 : 16 + n])
        model = cls(
            HyperParams(**manifest["hp"]),
            manifest["enc_len"],
            manifest["dec_len"],
            manifest["channels"],
            manifest["meta"],
        )
        model.step = manifest["step"]
        off = 16 + n
        for name, shape in manifest["blocks"]:
            (size,) = struct.unpack_from("<Q", data, off)
            off += 8
            arr = np.frombuffer(data, dtype="<f8", count=size, offset=off).reshape(shape).copy()
            off += 8 * size
            if name.startswith("adam.m."):
                model.adam_m[name[7:]][...] = arr
            elif name.startswith("adam.v."):
                model.adam_v[name[7:]][...] = arr
            else:
                model.params[name][...] = arr
        return model

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "Seq2Seq":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


class Grads(dict):
    """Parameter gradients by name; ``flat`` is the shared backing buffer."""

    flat: np.ndarray


def _drop_back(dy, mask):
    return dy if mask is None else dy * mask


# -- loss and training ------------------------------------------------------


def loss(pred, target) -> float:
    """Sum over sequences, tokens and channels of the squared error."""
    pred, target = np.asarray(pred), np.asarray(target)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction {pred.shape} vs target {target.shape}")
    return float(np.sum((target - pred) ** 2))


def loss_grad(pred, target):
    return 2.0 * (np.asarray(pred) - np.asarray(target))


@dataclass
class TrainResult:
    model: Seq2Seq
    history: list  # per-epoch mean loss per sequence
    wall: list

    def log_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["epoch", "mean_loss", "wall_seconds"])
        for i, (l, t) in enumerate(zip(self.history, self.wall), start=1):
            w.writerow([i, format(l, ".17g"), format(t, ".6f")])
        return out.getvalue()


def train(model: Seq2Seq, thetas, targets, hp: HyperParams | None = None, callback=None) -> TrainResult:
    """Teacher-forced Adam training.

    ``thetas`` is ``(n, p)`` normalized parameters and ``targets`` the
    ``(n, M + 1, C)`` normalized tokens.  Shuffling and dropout draw from a
    generator seeded by ``hp.seed``, so results are reproducible.  A
    non-finite loss raises :class:`NumericError` carrying the model as it was
    at the end of the last finite epoch.
    """
    hp = hp or model.hp
    model.hp = hp
    X = np.asarray(thetas, dtype=np.float64)
    Y = np.asarray(targets, dtype=np.float64)
    if len(X) == 0:
        raise ConfigurationError("empty training set")
    if Y.shape[1:] != (model.dec_len, model.channels) or X.shape[1] != model.enc_len:
        raise ShapeError("dataset shapes do not match the model")
    rng = np.random.default_rng([hp.seed, 1])
    history, wall = [], []
    checkpoint = model.copy()
    t0 = time.perf_counter()
    for epoch in range(hp.epochs):
        order = rng.permutation(len(X))
        total = 0.0
        for s in range(0, len(X), hp.batch_size):
            idx = order[s : s + hp.batch_size]
            tgt = Y[idx]
            try:
                pred, cache = model.forward(X[idx], tgt[:, :-1], train_mode=True, rng=rng)
            except NumericError as err:
                raise NumericError(f"training diverged in epoch {epoch + 1}: {err}", best=checkpoint)
            batch_loss = loss(pred, tgt)
            if not np.isfinite(batch_loss):
                raise NumericError(f"non-finite loss in epoch {epoch + 1}", best=checkpoint)
            total += batch_loss
            model.adam_step(model.backward(cache, loss_grad(pred, tgt)))
        history.append(total / len(X))
        wall.append(time.perf_counter() - t0)
        checkpoint = model.copy()
        log.info("epoch %d mean loss %.6g", epoch + 1, history[-1])
        if callback is not None:
            callback(epoch + 1, history[-1])
    return TrainResult(model, history, wall)


def model_for_dataset(dataset, hp: HyperParams) -> Seq2Seq:
    """Fresh model sized for ``dataset`` (an ``oracles.Dataset``)."""
    cfg = dataset.config
    meta = {
        "kind": dataset.kind,
        "K": cfg.K,
        "N": cfg.N,
        "delta_P": cfg.delta_P,
        "constants": {k: float(v) for k, v in sorted(dataset.constants.items())},
        "target_norm": dataset.target_norm.to_dict(),
        "theta_norm": dataset.theta_norm.to_dict(),
    }
    C = dataset.records[0].target.shape[1]
    return Seq2Seq(hp, len(dataset.records[0].theta), cfg.M + 1, C, meta)


def normalized_thetas(model: Seq2Seq, thetas):
    """Map raw parameters into the model's [0, 1] input range (clipped)."""
    lo = np.array(model.meta["theta_norm"]["min"])
    hi = np.array(model.meta["theta_norm"]["max"])
    span = np.where(hi > lo, hi - lo, 1.0)
    return np.clip((np.asarray(thetas, dtype=np.float64) - lo) / span, 0.0, 1.0)


def predict_tokens(model: Seq2Seq, thetas, kind: str | None = None, K: int | None = None, N: int | None = None):
    """Raw (denormalized) token sequences for raw parameter vectors."""
    for key, val in (("kind", kind), ("K", K), ("N", N)):
        if val is not None and model.meta.get(key) != val:
            raise ConfigurationError(f"model was trained for {key}={model.meta.get(key)!r}, not {val!r}")
    th = np.asarray(thetas, dtype=np.float64)
    single = th.ndim == 1
    out = model.infer(normalized_thetas(model, np.atleast_2d(th)))
    lo = np.array(model.meta["target_norm"]["min"])
    hi = np.array(model.meta["target_norm"]["max"])
    span = np.where(hi > lo, hi - lo, 1.0)
    raw = out * span + lo
    return raw[0] if single else raw
