"""Patch-level MLP noise predictor with hand-written reverse-mode gradients,
an Adam optimizer and a binary checkpoint format."""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"IRSDE1"
FORMAT_VERSION = 1


def time_embedding(i, T: int, dim: int = 16) -> np.ndarray:
    """Sinusoidal features of ``i / T``; ``i`` scalar or 1-D array -> ``(n, dim)``."""
    if dim % 2:
        raise ValueError("embedding dimension must be even")
    t = np.atleast_1d(np.asarray(i, dtype=np.float64)) / T
    freqs = math.pi * np.exp(np.linspace(0.0, math.log(100.0), dim // 2))
    ang = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


def softplus(h):
    return np.logaddexp(0.0, h)


def sigmoid(h):
    return 0.5 * (1.0 + np.tanh(0.5 * h))


@dataclass
class ForwardCache:
    inputs: np.ndarray
    pre: list
    post: list


class ScoreModel:
    """Noise predictor built on ``F = MLP(concat(x patch, mu patch, time embedding))``.

    Without preconditioning the MLP output is the noise estimate.  With
    ``decay[i] = exp(-theta_bar_i)`` and ``std[i] = sqrt(v_i)`` supplied, the
    MLP output estimates ``x0 - mu`` and is mapped to noise through

        eps_hat = ((x - mu) - decay[i] * F) / std[i]

    so a zero output layer starts the model at the exact score for
    ``x0 = mu``.  Parameters live in one flat float64 vector; ``layout``
    records the ``(offset, shape)`` of every weight matrix and bias.
    """

    def __init__(self, patch_shape=(32,), T: int = 100, hidden=(256, 256), embed_dim: int = 16,
                 rng: np.random.Generator | None = None, params: np.ndarray | None = None,
                 decay=None, std=None, input_shift: float = 0.5, input_scale: float = 10.0):
        self.input_shift = float(input_shift)
        self.input_scale = float(input_scale)
        if (decay is None) != (std is None):
            raise ValueError("decay and std must be given together")
        self.decay = None if decay is None else np.asarray(decay, dtype=np.float64)
        self.std = None if std is None else np.asarray(std, dtype=np.float64)
        if self.std is not None and (self.std.shape != (int(T) + 1,) or self.decay.shape != (int(T) + 1,)):
            raise ValueError(f"decay/std must have length T + 1 = {int(T) + 1}")
        self.patch_shape = tuple(int(n) for n in patch_shape)
        self.patch_size = int(np.prod(self.patch_shape))
        self.T = int(T)
        self.hidden = tuple(int(h) for h in hidden)
        self.embed_dim = int(embed_dim)
        sizes = [2 * self.patch_size + self.embed_dim, *self.hidden, self.patch_size]
        self.layer_sizes = sizes
        self.layout = []
        offset = 0
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            self.layout.append(((offset, (fan_in, fan_out)), (offset + fan_in * fan_out, (fan_out,))))
            offset += fan_in * fan_out + fan_out
        self.n_params = offset
        if params is not None:
            params = np.asarray(params, dtype=np.float64)
            if params.shape != (self.n_params,):
                raise ValueError(f"expected {self.n_params} parameters, got {params.shape}")
            self.params = params.copy()
        else:
            self.params = self._init_params(rng or np.random.default_rng(0))

    @classmethod
    def for_config(cls, cfg, preconditioned: bool = True, **kwargs) -> "ScoreModel":
        if preconditioned:
            kwargs.setdefault("decay", np.exp(-cfg.theta_bar))
            kwargs.setdefault("std", np.sqrt(cfg.variances))
        return cls(T=cfg.T, **kwargs)

    @property
    def preconditioned(self) -> bool:
        return self.std is not None

    def output_to_noise(self, raw, x, mu, i):
        """Map MLP output to a noise estimate; ``i`` broadcasts against the states."""
        if not self.preconditioned:
            return raw
        return ((x - mu) - self.decay[i] * raw) / self.std[i]

    def noise_grad_to_output(self, grad_eps, i):
        """Chain ``d loss / d eps_hat`` back to ``d loss / d F``."""
        if not self.preconditioned:
            return grad_eps
        return grad_eps * (-self.decay[i] / self.std[i])

    def _init_params(self, rng):
        p = np.zeros(self.n_params)
        for (w_off, (fan_in, fan_out)), _ in self.layout[:-1]:
            bound = 1.0 / math.sqrt(fan_in)
            p[w_off:w_off + fan_in * fan_out] = rng.uniform(-bound, bound, fan_in * fan_out)
        # output layer stays zero: the initial noise prediction (and score) is 0
        return p

    def weights(self, params=None):
        params = self.params if params is None else params
        out = []
        for (w_off, w_shape), (b_off, b_shape) in self.layout:
            W = params[w_off:w_off + w_shape[0] * w_shape[1]].reshape(w_shape)
            b = params[b_off:b_off + b_shape[0]]
            out.append((W, b))
        return out

    def features(self, x_patches, mu_patches, i) -> np.ndarray:
        """Stack flattened ``(n, *patch_shape)`` patches, shifted and scaled, with the
        time embedding of ``i``."""
        n = x_patches.shape[0]
        i = np.broadcast_to(np.asarray(i), (n,))
        emb = time_embedding(i, self.T, self.embed_dim)
        c, s = self.input_shift, self.input_scale
        return np.concatenate([(x_patches.reshape(n, -1) - c) * s, (mu_patches.reshape(n, -1) - c) * s, emb],
                              axis=1)

    def forward(self, inputs, params=None):
        """Batched forward pass on feature rows; returns ``(output, cache)``."""
        if inputs.ndim != 2 or inputs.shape[1] != self.layer_sizes[0]:
            raise ValueError(f"expected inputs of shape (n, {self.layer_sizes[0]}), got {inputs.shape}")
        layers = self.weights(params)
        pre, post = [], []
        a = inputs
        for W, b in layers[:-1]:
            h = a @ W + b
            a = softplus(h)
            pre.append(h)
            post.append(a)
        W, b = layers[-1]
        return a @ W + b, ForwardCache(inputs=inputs, pre=pre, post=post)

    def backward(self, cache: ForwardCache, grad_out, params=None) -> np.ndarray:
        """Gradient of ``sum(grad_out * output)`` w.r.t. the flat parameter vector."""
        if cache is None:
            raise ValueError("backward needs the cache from a forward pass")
        layers = self.weights(params)
        grad = np.zeros(self.n_params)
        g = np.asarray(grad_out, dtype=np.float64)
        acts = [cache.inputs, *cache.post]
        for k in range(len(layers) - 1, -1, -1):
            W, _ = layers[k]
            (w_off, w_shape), (b_off, b_shape) = self.layout[k]
            grad[w_off:w_off + W.size] = (acts[k].T @ g).ravel()
            grad[b_off:b_off + b_shape[0]] = g.sum(axis=0)
            if k > 0:
                g = (g @ W.T) * sigmoid(cache.pre[k - 1])
        return grad

    # tiling of whole states into patches

    def _tile(self, state):
        p = self.patch_shape
        nd = len(p)
        lead = state.shape[:-nd]
        spatial = state.shape[-nd:]
        pads = [(0, 0)] * len(lead) + [(0, (-n) % q) for n, q in zip(spatial, p)]
        padded = np.pad(state, pads, mode="symmetric")
        if nd == 1:
            (q,) = p
            tiles = padded.reshape(*lead, -1, q)
        else:
            qh, qw = p
            H, W = padded.shape[-2:]
            tiles = padded.reshape(*lead, H // qh, qh, W // qw, qw)
            tiles = np.moveaxis(tiles, -3, -2)
        grid = tiles.shape[len(lead):len(lead) + nd]
        return tiles.reshape(-1, *p), (lead, spatial, grid, padded.shape)

    def _untile(self, tiles, meta):
        lead, spatial, grid, padded_shape = meta
        p = self.patch_shape
        t = tiles.reshape(*lead, *grid, *p)
        if len(p) == 2:
            t = np.moveaxis(t, -2, -3)
        full = t.reshape(padded_shape)
        return full[(Ellipsis, *[slice(0, n) for n in spatial])]

    def predict(self, x, mu, i) -> np.ndarray:
        """Noise prediction for whole states (any leading batch dims), tiled by patch."""
        x = np.asarray(x, dtype=np.float64)
        mu = np.asarray(mu, dtype=np.float64)
        if x.shape != mu.shape:
            raise ValueError(f"shape mismatch: {x.shape} vs {mu.shape}")
        if x.ndim < len(self.patch_shape):
            raise ValueError(f"state of shape {x.shape} has fewer dims than patch {self.patch_shape}")
        xt, meta = self._tile(x)
        mt, _ = self._tile(mu)
        out, _ = self.forward(self.features(xt, mt, i))
        raw = self._untile(out.reshape(-1, *self.patch_shape), meta)
        return self.output_to_noise(raw, x, mu, i)

    __call__ = predict

    # checkpoints

    def header(self) -> dict:
        return {"version": FORMAT_VERSION, "patch_shape": list(self.patch_shape), "T": self.T,
                "hidden": list(self.hidden), "embed_dim": self.embed_dim, "activation": "softplus",
                "input_shift": self.input_shift, "input_scale": self.input_scale,
                "layer_sizes": self.layer_sizes, "n_params": self.n_params,
                "decay": None if self.decay is None else self.decay.tolist(),
                "std": None if self.std is None else self.std.tolist()}

    def save(self, path) -> None:
        head = json.dumps(self.header(), sort_keys=True).encode("utf-8")
        body = self.params.astype("<f8").tobytes()
        Path(path).write_bytes(MAGIC + struct.pack("<I", len(head)) + head + body)

    @classmethod
    def load(cls, path) -> "ScoreModel":
        raw = Path(path).read_bytes()
        if raw[:len(MAGIC)] != MAGIC:
            raise ValueError(f"{path}: not a model checkpoint (bad magic)")
        (n,) = struct.unpack("<I", raw[len(MAGIC):len(MAGIC) + 4])
        start = len(MAGIC) + 4
        head = json.loads(raw[start:start + n].decode("utf-8"))
        if head.get("version") != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {head.get('version')}")
        params = np.frombuffer(raw[start + n:], dtype="<f8").astype(np.float64)
        if params.size != head["n_params"]:
            raise ValueError(f"{path}: expected {head['n_params']} parameters, found {params.size}")
        return cls(patch_shape=head["patch_shape"], T=head["T"], hidden=head["hidden"],
                   embed_dim=head["embed_dim"], params=params, decay=head.get("decay"), std=head.get("std"),
                   input_shift=head["input_shift"], input_scale=head["input_scale"])


@dataclass
class Adam:
    n_params: int
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-8
    step_count: int = 0
    m: np.ndarray = field(default=None, repr=False)
    v: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.m is None:
            self.m = np.zeros(self.n_params)
        if self.v is None:
            self.v = np.zeros(self.n_params)

    def step(self, params, grads, lr: float | None = None) -> np.ndarray:
        """Return updated parameters (bias-corrected Adam)."""
        grads = np.asarray(grads, dtype=np.float64)
        if grads.shape != params.shape or grads.shape != self.m.shape:
            raise ValueError(f"gradient shape {grads.shape} does not match parameters {params.shape}")
        if not np.all(np.isfinite(grads)):
            raise FloatingPointError(f"non-finite gradient at optimizer step {self.step_count + 1}")
        lr = self.lr if lr is None else lr
        self.step_count += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grads
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grads ** 2
        m_hat = self.m / (1.0 - self.beta1 ** self.step_count)
        v_hat = self.v / (1.0 - self.beta2 ** self.step_count)
        with np.errstate(invalid="ignore", over="ignore"):
            out = params - lr * m_hat / (np.sqrt(v_hat) + self.eps)
        if not np.all(np.isfinite(out)):
            raise FloatingPointError(f"non-finite parameters after optimizer step {self.step_count}")
        return out
