"""Training objectives.

The total loss is the density term ``1/(2B) sum_i ||pred_i - gt_i||^2`` plus, for
variational heads, batch means of three latent terms weighted by
``lambda_kl``, ``lambda_lse`` and ``lambda_det``:

* KL from the posterior to the prior component of the sample's label,
* the log-sum-exp separation regularizer on the sampled latent,
* the squared log-determinant of the labeled component's covariance.

VA and InVA share one code path: a VA prior is treated as a sub-Gaussian prior
with a single sub-center per component, so ``k = 1`` InVA reproduces VA bit for
bit.
"""

from dataclasses import dataclass

import numpy as np

from vattn.errors import InvalidArgumentError, InvalidStateError
from vattn.gaussian_latent import kl_diag_batch, lse_batch
from vattn.trainer.model import backward, forward, stack_inputs, stack_targets

TERMS = ("density", "kl", "lse", "det")


@dataclass
class LossWeights:
    kl: float = 1.0
    lse: float = 0.1
    det: float = 0.1

    def __post_init__(self):
        if min(self.kl, self.lse, self.det) < 0:
            raise InvalidArgumentError("loss weights must be non-negative")


@dataclass
class Batch:
    x: np.ndarray  # [B, H, W, 1]
    gt: np.ndarray  # [B, H, W, 1]
    labels: np.ndarray  # [B] int, the labels the latent terms target

    @property
    def size(self):
        return self.x.shape[0]


def make_batch(samples, label_field="dataset_label"):
    labels = [getattr(s, label_field) for s in samples]
    if any(lab is None for lab in labels):
        raise InvalidStateError(f"every sample needs {label_field!r} set")
    return Batch(stack_inputs(samples), stack_targets(samples), np.array(labels, dtype=np.int64))


def density_loss(pred, gt, batch_size=None):
    """``(1 / 2B) * sum ||pred - gt||^2``; returns (value, d/dpred)."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise InvalidArgumentError(f"shape mismatch {pred.shape} vs {gt.shape}")
    b = pred.shape[0] if batch_size is None else batch_size
    diff = pred - gt
    return float(np.sum(diff * diff)) / (2.0 * b), diff / b


def _prior_arrays(model):
    kind = model.config.attention
    if kind == "va":
        return model.prior.means[:, None, :], model.prior.log_vars
    return model.prior.sub_centers, model.prior.log_vars


def latent_terms(mu, lv, z, centers, log_vars, selection, labels, w):
    """Batch-mean latent losses and their gradients.

    ``centers`` is ``[C, k, d]``, ``selection`` ``[B, C]`` picks one sub-center
    per component for every sample. Returns (terms, d_mu, d_lv, d_z, d_centers,
    d_log_vars).
    """
    bsz, n_comp = selection.shape
    if labels.min() < 0 or labels.max() >= n_comp:
        raise InvalidArgumentError(f"labels outside [0, {n_comp})")
    rows = np.arange(bsz)
    comp = np.broadcast_to(np.arange(n_comp), selection.shape)
    eff = centers[comp, selection]  # [B, C, d]
    own_lv = log_vars[labels]
    kl, d_mu_kl, d_lv_kl, d_pm, d_plv = kl_diag_batch(mu, lv, eff[rows, labels], own_lv)
    lse, d_z_lse, d_eff = lse_batch(z, eff, labels)
    s = own_lv.sum(-1)
    det = s * s
    terms = {"kl": float(kl.mean()), "lse": float(lse.mean()), "det": float(det.mean())}
    d_mu = (w.kl / bsz) * d_mu_kl
    d_lv = (w.kl / bsz) * d_lv_kl
    d_z = (w.lse / bsz) * d_z_lse
    d_eff = (w.lse / bsz) * d_eff
    d_eff[rows, labels] += (w.kl / bsz) * d_pm
    d_centers = np.zeros_like(centers)
    np.add.at(d_centers, (comp, selection), d_eff)
    d_own = (w.kl / bsz) * d_plv + (w.det / bsz) * (2.0 * s)[:, None]
    d_log_vars = np.zeros_like(log_vars)
    np.add.at(d_log_vars, labels, d_own)
    return terms, d_mu, d_lv, d_z, d_centers, d_log_vars


def total_loss(model, batch, weights=None, rng=None, mode="train", eps=None, keep=None):
    """Total objective for any attention kind; returns (total, terms, grads)."""
    w = weights or LossWeights()
    fw = forward(model, batch.x, mode, rng=rng, eps=eps, keep=keep)
    dens, d_pred = density_loss(fw.pred, batch.gt, batch.size)
    terms = {"density": dens}
    kind = model.config.attention
    if kind in ("va", "inva"):
        centers, log_vars = _prior_arrays(model)
        selection = (
            fw.selection
            if fw.selection is not None
            else np.zeros((batch.size, centers.shape[0]), dtype=np.int64)
        )
        lt, d_mu, d_lv, d_z, d_c, d_lvs = latent_terms(
            fw.mu, fw.log_var, fw.z, centers, log_vars, selection, batch.labels, w
        )
        terms.update(lt)
        grads = backward(model, fw, d_pred, d_mu, d_lv, d_z)
        if kind == "va":
            grads["prior.means"] = d_c[:, 0, :]
        else:
            grads["prior.sub_centers"] = d_c
        grads["prior.log_vars"] = d_lvs
        total = (
            terms["density"]
            + w.kl * terms["kl"]
            + w.lse * terms["lse"]
            + w.det * terms["det"]
        )
    else:
        grads = backward(model, fw, d_pred)
        total = dens
    terms["total"] = total
    return total, terms, grads


def va_total_loss(model, batch, weights=None, rng=None, eps=None):
    if model.config.attention != "va":
        raise InvalidArgumentError("va_total_loss needs a model with a VA head")
    return total_loss(model, batch, weights, rng, "train", eps)


def inva_total_loss(model, batch, weights=None, rng=None, eps=None, keep=None):
    """InVA objective; ``batch.labels`` must be the clustering (CL) labels."""
    if model.config.attention != "inva":
        raise InvalidArgumentError("inva_total_loss needs a model with a sub-Gaussian prior")
    return total_loss(model, batch, weights, rng, "train", eps, keep)
