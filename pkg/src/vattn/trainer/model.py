"""Backbone -> channel attention -> density head, with an explicit backward pass.

Activations are NHWC internally. The backbone is two 3x3 convolutions with
ReLU; the density head is three 1x1 convolutions with ReLU between them and a
final softplus so predicted maps are non-negative.
"""

from dataclasses import dataclass, field

import numpy as np

from vattn import attention as att
from vattn.errors import InvalidArgumentError
from vattn.gaussian_latent import MixturePrior
from vattn.intrinsic import SubGaussianPrior, select_batch
from vattn.ndtensor import Rng, conv3x3_backward, conv3x3_forward, sigmoid, softplus

ATTENTION_KINDS = ("none", "se", "va", "inva")


@dataclass
class ModelConfig:
    attention: str = "none"
    c_in: int = 1
    c_mid: int = 16
    c_feat: int = 32
    head: tuple = (16, 8)
    latent_dim: int = 8
    n_components: int = 3
    k: int = 1
    se_reduction: int = 4
    drop_rate: float = 0.2

    def __post_init__(self):
        if self.attention not in ATTENTION_KINDS:
            raise InvalidArgumentError(f"unknown attention kind {self.attention!r}")
        self.head = tuple(self.head)


@dataclass
class Model:
    config: ModelConfig
    weights: dict  # backbone and head tensors
    attention: object = None  # None | SeHead | VaHead
    prior: object = None  # None | MixturePrior | SubGaussianPrior
    _names: list = field(default_factory=list, repr=False)

    @classmethod
    def init(cls, config, seed):
        """Deterministic init from the ``(seed, 1)`` stream.

        Draw order is backbone, head, attention, prior; the prior for ``inva``
        with ``k == 1`` consumes exactly the draws of a ``va`` prior, so both
        start from identical parameters.
        """
        rng = Rng.derived(seed, 1)
        c = config
        w = {
            "conv1.w": rng.normal((9 * c.c_in, c.c_mid)) * np.sqrt(2.0 / (9 * c.c_in)),
            "conv1.b": np.zeros(c.c_mid),
            "conv2.w": rng.normal((9 * c.c_mid, c.c_feat)) * np.sqrt(2.0 / (9 * c.c_mid)),
            "conv2.b": np.zeros(c.c_feat),
        }
        dims = (c.c_feat,) + c.head + (1,)
        for i, (a, b) in enumerate(zip(dims[:-1], dims[1:]), start=1):
            w[f"head{i}.w"] = rng.normal((a, b)) / np.sqrt(a)
            w[f"head{i}.b"] = np.zeros(b)
        # start near an empty map: softplus(-4) ~ 0.018
        w[f"head{len(dims) - 1}.b"][:] = -4.0
        head = prior = None
        if c.attention == "se":
            head = att.SeHead.init(c.c_feat, rng, c.se_reduction)
        elif c.attention in ("va", "inva"):
            head = att.VaHead.init(c.c_feat, c.latent_dim, rng)
            if c.attention == "va":
                prior = MixturePrior.init(c.n_components, c.latent_dim, rng)
            else:
                prior = SubGaussianPrior.init(
                    c.n_components, c.k, c.latent_dim, rng, c.drop_rate
                )
        return cls(c, w, head, prior)

    def parameters(self):
        """Name -> array for every trainable tensor, in a stable order."""
        p = dict(self.weights)
        if isinstance(self.attention, att.SeHead):
            p.update(self.attention.params("se"))
        elif isinstance(self.attention, att.VaHead):
            p.update(self.attention.params("va"))
        if self.prior is not None:
            p.update(self.prior.params("prior"))
        return p

    def load_parameters(self, params):
        for name, arr in self.parameters().items():
            if name not in params:
                raise InvalidArgumentError(f"missing parameter {name!r}")
            if params[name].shape != arr.shape:
                raise InvalidArgumentError(f"shape mismatch for {name!r}")
            arr[...] = params[name]

    @property
    def n_head_layers(self):
        return len(self.config.head) + 1


def to_nhwc(x):
    """``[B, 1, H, W]`` (or ``[1, H, W]``) -> ``[B, H, W, 1]``."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        x = x[None]
    return np.ascontiguousarray(x.transpose(0, 2, 3, 1))


def backbone_forward(model, x):
    w = model.weights
    a1, cols1 = conv3x3_forward(x, w["conv1.w"], w["conv1.b"])
    h1 = np.maximum(a1, 0.0)
    a2, cols2 = conv3x3_forward(h1, w["conv2.w"], w["conv2.b"])
    feat = np.maximum(a2, 0.0)
    return feat, (x.shape, a1, cols1, h1.shape, a2, cols2)


def backbone_backward(model, cache, d_feat, grads):
    w = model.weights
    x_shape, a1, cols1, h1_shape, a2, cols2 = cache
    d_a2 = d_feat * (a2 > 0)
    d_h1, grads["conv2.w"], grads["conv2.b"] = conv3x3_backward(d_a2, cols2, w["conv2.w"], h1_shape)
    d_a1 = d_h1 * (a1 > 0)
    _, grads["conv1.w"], grads["conv1.b"] = conv3x3_backward(
        d_a1, cols1, w["conv1.w"], x_shape, need_dx=False
    )


def head_forward(model, xr):
    w = model.weights
    n = model.n_head_layers
    h = xr
    pre = []
    for i in range(1, n + 1):
        pre.append(h)
        a = h @ w[f"head{i}.w"] + w[f"head{i}.b"]
        pre.append(a)
        h = softplus(a) if i == n else np.maximum(a, 0.0)
    return h, pre


def head_backward(model, pre, d_out, grads):
    w = model.weights
    n = model.n_head_layers
    g = d_out
    for i in range(n, 0, -1):
        h_in, a = pre[2 * (i - 1)], pre[2 * (i - 1) + 1]
        g = g * (sigmoid(a) if i == n else (a > 0))
        grads[f"head{i}.w"] = np.tensordot(h_in, g, axes=([0, 1, 2], [0, 1, 2]))
        grads[f"head{i}.b"] = g.sum(axis=(0, 1, 2))
        g = g @ w[f"head{i}.w"].T
    return g


@dataclass
class Forward:
    """Everything a backward pass or an evaluation needs from one forward pass."""

    pred: np.ndarray  # [B, H, W, 1]
    feat: np.ndarray
    pooled: np.ndarray
    y: object = None
    mu: object = None
    log_var: object = None
    z: object = None
    eps: object = None
    selection: object = None  # [B, C_bar] sub-center indices (inva)
    caches: dict = field(default_factory=dict)


def forward(model, x, mode="eval", rng=None, eps=None, keep=None):
    """Forward pass on an NHWC batch.

    Train-mode noise is drawn from ``rng`` after batch sampling (``eps`` first,
    then dropout masks) unless ``eps`` / ``keep`` are given explicitly.
    """
    if mode not in ("train", "eval"):
        raise InvalidArgumentError(f"mode must be 'train' or 'eval', got {mode!r}")
    feat, bb_cache = backbone_forward(model, x)
    pooled = feat.mean(axis=(1, 2))
    out = Forward(pred=None, feat=feat, pooled=pooled)
    out.caches["backbone"] = bb_cache
    kind = model.config.attention
    if kind == "none":
        xr = feat
    elif kind == "se":
        out.y, out.caches["se"] = att.se_batch(model.attention, pooled)
        xr = feat * out.y[:, None, None, :]
    else:
        out.mu, out.log_var = att.encode_batch(model.attention, pooled)
        if mode == "train":
            if eps is None:
                eps = rng.normal(out.mu.shape)
            out.eps = eps
            out.z = out.mu + np.exp(0.5 * out.log_var) * eps
        else:
            out.z = out.mu
        if kind == "inva":
            out.selection = select_batch(model.prior, out.mu, rng, mode, keep)
        out.y = att.gate_batch(model.attention, out.z)
        xr = feat * out.y[:, None, None, :]
    out.pred, out.caches["head"] = head_forward(model, xr)
    return out


def backward(model, fw, d_pred, d_mu=None, d_lv=None, d_z=None):
    """Gradients for every backbone/head/attention tensor (prior grads are added by the loss)."""
    grads = {}
    d_xr = head_backward(model, fw.caches["head"], d_pred, grads)
    kind = model.config.attention
    hw = fw.feat.shape[1] * fw.feat.shape[2]
    if kind == "none":
        d_feat = d_xr
    else:
        d_feat = d_xr * fw.y[:, None, None, :]
        d_y = np.einsum("bhwc,bhwc->bc", d_xr, fw.feat)
        if kind == "se":
            d_pool, g = att.se_backward(model.attention, fw.pooled, fw.caches["se"], fw.y, d_y)
            prefix = "se"
        else:
            d_zz, g = att.gate_backward(model.attention, fw.z, fw.y, d_y)
            if d_z is not None:
                d_zz = d_zz + d_z
            dm = d_zz if d_mu is None else d_zz + d_mu
            if fw.eps is not None:
                dl = 0.5 * d_zz * np.exp(0.5 * fw.log_var) * fw.eps
            else:
                dl = np.zeros_like(fw.log_var)
            if d_lv is not None:
                dl = dl + d_lv
            d_pool, g2 = att.encode_backward(model.attention, fw.pooled, dm, dl)
            g.update(g2)
            prefix = "va"
        for k, v in g.items():
            grads[f"{prefix}.{k}"] = v
        d_feat = d_feat + d_pool[:, None, None, :] / hw
    backbone_backward(model, fw.caches["backbone"], d_feat, grads)
    return grads


def stack_inputs(samples):
    return to_nhwc(np.stack([s.input for s in samples]))


def stack_targets(samples):
    return to_nhwc(np.stack([s.density_gt for s in samples]))


def predict(model, samples, batch_size=64):
    """Eval-mode forward over ``samples``; returns (counts [N], gates [N, C] or None, mu or None)."""
    counts, gates, mus = [], [], []
    for i in range(0, len(samples), batch_size):
        chunk = samples[i : i + batch_size]
        fw = forward(model, stack_inputs(chunk), "eval")
        counts.append(fw.pred.sum(axis=(1, 2, 3)))
        if fw.y is not None:
            gates.append(fw.y)
        if fw.mu is not None:
            mus.append(fw.mu)
    counts = np.concatenate(counts)
    gates = np.concatenate(gates) if gates else None
    mus = np.concatenate(mus) if mus else None
    return counts, gates, mus


def gates_for(model, samples):
    _, gates, _ = predict(model, samples)
    if gates is None:
        raise InvalidArgumentError("model has no attention head; there are no gates to cluster")
    return gates
