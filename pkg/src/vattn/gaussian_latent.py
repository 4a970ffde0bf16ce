"""Diagonal-Gaussian latent machinery.

Covers the Gaussian-mixture prior over latents (one learnable component per
domain, equal fixed weights), the closed-form KL between diagonal Gaussians,
reparameterized sampling, the log-sum-exp separation regularizer and the
squared log-determinant regularizer. Every loss returns its value together with
gradients so the trainer can assemble backward passes by hand.

Variances are carried as log-variances. Sampling scales the noise by the
standard deviation ``exp(log_var / 2)``.
"""

from dataclasses import dataclass

import numpy as np

from vattn.errors import InvalidArgumentError
from vattn.ndtensor import as_tensor

LOG_VAR_CLAMP = 30.0

# incremented whenever a log-variance is clamped before exponentiation
clamp_events = {"count": 0}


def _clamp_logvar(lv):
    """Clamp to [-30, 30]; returns (clamped, mask of entries left untouched)."""
    inside = np.abs(lv) <= LOG_VAR_CLAMP
    if not inside.all():
        clamp_events["count"] += int((~inside).sum())
        lv = np.clip(lv, -LOG_VAR_CLAMP, LOG_VAR_CLAMP)
    return lv, inside


@dataclass
class GaussianParams:
    mean: np.ndarray
    log_var: np.ndarray

    def __post_init__(self):
        self.mean = as_tensor(self.mean).reshape(-1)
        self.log_var = as_tensor(self.log_var).reshape(-1)
        if self.mean.shape != self.log_var.shape:
            raise InvalidArgumentError(
                f"mean and log_var lengths differ: {self.mean.size} vs {self.log_var.size}"
            )

    @property
    def dim(self):
        return self.mean.size


@dataclass
class MixturePrior:
    """``C`` learnable diagonal Gaussians with fixed equal weights ``1/C``.

    ``means`` is ``[C, d]`` and ``log_vars`` is ``[C, d]``; both are updated in
    place by the optimizer.
    """

    means: np.ndarray
    log_vars: np.ndarray

    def __post_init__(self):
        self.means = np.asarray(self.means, dtype=np.float64)
        self.log_vars = np.asarray(self.log_vars, dtype=np.float64)
        if self.means.ndim != 2 or self.means.shape != self.log_vars.shape:
            raise InvalidArgumentError("prior means/log_vars must both be [C, d]")
        if self.means.shape[0] < 1:
            raise InvalidArgumentError("prior needs at least one component")

    @classmethod
    def init(cls, n_components, dim, rng):
        return cls(init_centers(rng, (n_components,), dim), np.zeros((n_components, dim)))

    @property
    def n_components(self):
        return self.means.shape[0]

    @property
    def dim(self):
        return self.means.shape[1]

    @property
    def weights(self):
        return np.full(self.n_components, 1.0 / self.n_components)

    @property
    def components(self):
        return [GaussianParams(m, lv) for m, lv in zip(self.means, self.log_vars)]

    def params(self, prefix="prior"):
        return {f"{prefix}.means": self.means, f"{prefix}.log_vars": self.log_vars}


def init_centers(rng, lead_shape, dim):
    """Unit-length centers drawn from N(0, I/d) then normalized."""
    raw = rng.normal(tuple(lead_shape) + (dim,)) / np.sqrt(dim)
    return raw / np.linalg.norm(raw, axis=-1, keepdims=True)


def kl_diag_gaussian(q, p):
    """KL(q || p) for diagonal Gaussians.

    Returns ``(value, grads)`` with grads keyed ``q_mean``, ``q_log_var``,
    ``p_mean``, ``p_log_var``.
    """
    if q.dim != p.dim:
        raise InvalidArgumentError(f"dimension mismatch: {q.dim} vs {p.dim}")
    val, dqm, dqlv, dpm, dplv = kl_diag_batch(
        q.mean[None], q.log_var[None], p.mean[None], p.log_var[None]
    )
    grads = {"q_mean": dqm[0], "q_log_var": dqlv[0], "p_mean": dpm[0], "p_log_var": dplv[0]}
    return float(val[0]), grads


def kl_diag_batch(q_mean, q_lv, p_mean, p_lv):
    """Row-wise KL for ``[B, d]`` arrays; returns values ``[B]`` and four gradient arrays."""
    d = q_mean.shape[-1]
    qlv, q_in = _clamp_logvar(q_lv)
    plv, p_in = _clamp_logvar(p_lv)
    ratio = np.exp(qlv - plv)
    inv_p = np.exp(-plv)
    diff = p_mean - q_mean
    sq = diff * diff * inv_p
    val = 0.5 * ((plv - qlv).sum(-1) - d + ratio.sum(-1) + sq.sum(-1))
    d_qm = -diff * inv_p
    d_pm = diff * inv_p
    d_qlv = 0.5 * (ratio - 1.0) * q_in
    d_plv = 0.5 * (1.0 - ratio - sq) * p_in
    return val, d_qm, d_qlv, d_pm, d_plv


def kl_to_component(q, prior, label):
    """KL from ``q`` to the prior component selected by ``label``.

    Grads are keyed ``q_mean``, ``q_log_var``, ``prior.means`` and
    ``prior.log_vars`` (the latter two full ``[C, d]`` arrays, non-zero only in
    row ``label``).
    """
    if not 0 <= int(label) < prior.n_components:
        raise InvalidArgumentError(f"label {label} outside [0, {prior.n_components})")
    comp = GaussianParams(prior.means[label], prior.log_vars[label])
    val, g = kl_diag_gaussian(q, comp)
    gm = np.zeros_like(prior.means)
    glv = np.zeros_like(prior.log_vars)
    gm[label] = g["p_mean"]
    glv[label] = g["p_log_var"]
    return val, {
        "q_mean": g["q_mean"],
        "q_log_var": g["q_log_var"],
        "prior.means": gm,
        "prior.log_vars": glv,
    }


def reparameterize(q, rng=None, eps=None):
    """``z = mean + exp(log_var / 2) * eps`` with ``eps ~ N(0, I)``.

    Pass ``eps`` explicitly to fix the noise (the gradient path for fixed noise is
    ``dz/dmean = 1`` and ``dz/dlog_var = exp(log_var / 2) * eps / 2``).
    """
    if eps is None:
        if rng is None:
            raise InvalidArgumentError("reparameterize needs an rng or explicit eps")
        eps = rng.normal(q.mean.shape)
    return q.mean + np.exp(0.5 * q.log_var) * eps


def lse_regularizer(z, centers, label):
    """``log sum_i exp(z.u_i - z.u_c)`` computed with max subtraction.

    ``centers`` is ``[C, d]``. Returns ``(value, {"z": [d], "centers": [C, d]})``.
    """
    z = as_tensor(z).reshape(-1)
    centers = as_tensor(centers)
    if centers.ndim != 2 or centers.shape[1] != z.size:
        raise InvalidArgumentError(f"centers must be [C, {z.size}], got {centers.shape}")
    if not 0 <= int(label) < centers.shape[0]:
        raise InvalidArgumentError(f"label {label} outside [0, {centers.shape[0]})")
    val, dz, dcent = lse_batch(z[None], centers[None], np.array([label]))
    return float(val[0]), {"z": dz[0], "centers": dcent[0]}


def lse_batch(z, centers, labels):
    """Batched regularizer: ``z`` [B, d], ``centers`` [B, C, d], ``labels`` [B]."""
    b = np.arange(z.shape[0])
    sims = np.einsum("bcd,bd->bc", centers, z)
    s = sims - sims[b, labels][:, None]
    m = s.max(axis=1, keepdims=True)
    e = np.exp(s - m)
    tot = e.sum(axis=1, keepdims=True)
    val = (m + np.log(tot))[:, 0]
    w = e / tot
    dz = np.einsum("bc,bcd->bd", w, centers) - centers[b, labels]
    dcent = w[:, :, None] * z[:, None, :]
    dcent[b, labels] -= z
    return val, dz, dcent


def logdet_regularizer(p):
    """Squared log-determinant ``(sum_i log_var_i)^2``; returns (value, d/dlog_var)."""
    s = float(np.sum(p.log_var))
    return s * s, np.full_like(p.log_var, 2.0 * s)
