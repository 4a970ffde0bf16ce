"""Channel-attention heads.

``VaHead`` pools a feature map, encodes it into a diagonal Gaussian posterior
over a latent ``z`` and decodes ``z`` into a sigmoid gate over channels.
``SeHead`` is the squeeze-and-excitation baseline: pool, bottleneck MLP, sigmoid.

Domain labels never enter the forward pass; they only select which prior
component the training losses target. The batched ``*_batch`` functions work on
pooled ``[B, C]`` arrays and are what the trainer uses; the single-sample
functions take ``[C, H, W]`` feature maps.
"""

from dataclasses import dataclass

import numpy as np

from vattn.errors import InvalidArgumentError
from vattn.gaussian_latent import GaussianParams, reparameterize
from vattn.ndtensor import as_tensor, channelwise_product, global_avg_pool, sigmoid


@dataclass
class VaHead:
    enc_mean_w: np.ndarray  # [C_feat, d]
    enc_mean_b: np.ndarray  # [d]
    enc_logvar_w: np.ndarray  # [C_feat, d]
    enc_logvar_b: np.ndarray  # [d]
    dec_w: np.ndarray  # [d, C_feat]
    dec_b: np.ndarray  # [C_feat]

    @classmethod
    def init(cls, c_feat, dim, rng):
        return cls(
            enc_mean_w=rng.normal((c_feat, dim)) / np.sqrt(c_feat),
            enc_mean_b=np.zeros(dim),
            # small log-variance weights so initial posteriors are near N(mu, I)
            enc_logvar_w=0.1 * rng.normal((c_feat, dim)) / np.sqrt(c_feat),
            enc_logvar_b=np.zeros(dim),
            dec_w=rng.normal((dim, c_feat)) / np.sqrt(dim),
            dec_b=np.zeros(c_feat),
        )

    @classmethod
    def zeros(cls, c_feat, dim):
        return cls(
            np.zeros((c_feat, dim)), np.zeros(dim),
            np.zeros((c_feat, dim)), np.zeros(dim),
            np.zeros((dim, c_feat)), np.zeros(c_feat),
        )

    @property
    def c_feat(self):
        return self.enc_mean_w.shape[0]

    @property
    def dim(self):
        return self.enc_mean_w.shape[1]

    def params(self, prefix="va"):
        return {f"{prefix}.{k}": getattr(self, k) for k in self.__dataclass_fields__}


@dataclass
class SeHead:
    w1: np.ndarray  # [C_feat, C_feat // r]
    b1: np.ndarray
    w2: np.ndarray  # [C_feat // r, C_feat]
    b2: np.ndarray

    @classmethod
    def init(cls, c_feat, rng, reduction=4):
        if c_feat % reduction:
            raise InvalidArgumentError(f"reduction {reduction} does not divide {c_feat}")
        hid = c_feat // reduction
        return cls(
            w1=rng.normal((c_feat, hid)) * np.sqrt(2.0 / c_feat),
            b1=np.zeros(hid),
            w2=rng.normal((hid, c_feat)) / np.sqrt(hid),
            b2=np.zeros(c_feat),
        )

    @property
    def c_feat(self):
        return self.w1.shape[0]

    @property
    def reduction(self):
        return self.w1.shape[0] // self.w1.shape[1]

    def params(self, prefix="se"):
        return {f"{prefix}.{k}": getattr(self, k) for k in self.__dataclass_fields__}


def _pool(x, c_feat):
    x = as_tensor(x)
    if x.ndim != 3 or x.shape[0] != c_feat:
        raise InvalidArgumentError(f"expected features [{c_feat}, H, W], got {x.shape}")
    return global_avg_pool(x)


# --- batched ------------------------------------------------------------------


def encode_batch(head, pooled):
    mu = pooled @ head.enc_mean_w + head.enc_mean_b
    lv = pooled @ head.enc_logvar_w + head.enc_logvar_b
    return mu, lv


def encode_backward(head, pooled, d_mu, d_lv):
    grads = {
        "enc_mean_w": pooled.T @ d_mu,
        "enc_mean_b": d_mu.sum(0),
        "enc_logvar_w": pooled.T @ d_lv,
        "enc_logvar_b": d_lv.sum(0),
    }
    d_pooled = d_mu @ head.enc_mean_w.T + d_lv @ head.enc_logvar_w.T
    return d_pooled, grads


def gate_batch(head, z):
    return sigmoid(z @ head.dec_w + head.dec_b)


def gate_backward(head, z, y, d_y):
    d_logit = d_y * y * (1.0 - y)
    grads = {"dec_w": z.T @ d_logit, "dec_b": d_logit.sum(0)}
    return d_logit @ head.dec_w.T, grads


def se_batch(head, pooled):
    pre = pooled @ head.w1 + head.b1
    hid = np.maximum(pre, 0.0)
    y = sigmoid(hid @ head.w2 + head.b2)
    return y, (pre, hid)


def se_backward(head, pooled, cache, y, d_y):
    pre, hid = cache
    d_logit = d_y * y * (1.0 - y)
    grads = {"w2": hid.T @ d_logit, "b2": d_logit.sum(0)}
    d_pre = (d_logit @ head.w2.T) * (pre > 0)
    grads["w1"] = pooled.T @ d_pre
    grads["b1"] = d_pre.sum(0)
    return d_pre @ head.w1.T, grads


# --- single sample --------------------------------------------------------------


def encode(head, x):
    """Posterior ``q(z | x)`` for one ``[C_feat, H, W]`` feature map."""
    p = _pool(x, head.c_feat)
    mu, lv = encode_batch(head, p[None])
    return GaussianParams(mu[0], lv[0])


def decode_gate(head, z):
    z = as_tensor(z).reshape(-1)
    if z.size != head.dim:
        raise InvalidArgumentError(f"latent must have dim {head.dim}, got {z.size}")
    return gate_batch(head, z[None])[0]


def se_forward(head, x):
    p = _pool(x, head.c_feat)
    return se_batch(head, p[None])[0][0]


def va_forward(head, x, label=None, prior=None, rng=None, mode="eval", eps=None):
    """Full VA pass: returns ``(x * y, y, q, z)``.

    In ``train`` mode ``z`` is a reparameterized sample (noise from ``rng`` or
    the explicit ``eps``); in ``eval`` mode ``z`` is the posterior mean.
    ``label`` and ``prior`` are validated but never change the output: the
    label conditions only the loss, so inference stays label-free.
    """
    if prior is not None and label is not None:
        n = prior.n_components if hasattr(prior, "n_components") else prior.n_clusters
        if not 0 <= int(label) < n:
            raise InvalidArgumentError(f"label {label} outside [0, {n})")
    q = encode(head, x)
    if mode == "train":
        z = reparameterize(q, rng=rng, eps=eps)
    elif mode == "eval":
        z = q.mean.copy()
    else:
        raise InvalidArgumentError(f"mode must be 'train' or 'eval', got {mode!r}")
    y = decode_gate(head, z)
    return channelwise_product(x, y), y, q, z
