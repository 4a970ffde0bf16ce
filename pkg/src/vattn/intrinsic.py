"""Stage-II machinery: clustering of attention proposals and sub-center selection.

Stage-I gate vectors are clustered with a diagonal Gaussian mixture (EM, best of
several restarts) or k-means, and the cluster indices become the new training
labels. Each cluster then owns ``k`` learnable sub-centers sharing one
log-variance; a sample's effective prior mean for a cluster is the sub-center
with the largest dropout-perturbed inner product against the posterior mean.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from vattn.errors import DegenerateDataError, InvalidArgumentError
from vattn.gaussian_latent import init_centers
from vattn.ndtensor import Rng, as_tensor

DROP_RATE = 0.2


@dataclass
class GmmConfig:
    max_iters: int = 200
    tol: float = 1e-6
    var_floor: float = 1e-6
    n_init: int = 5


@dataclass
class ClusterModel:
    means: np.ndarray  # [K, D]
    variances: np.ndarray  # [K, D]
    weights: np.ndarray  # [K]
    backend: str = "gmm"
    log_likelihood_trace: list = field(default_factory=list)
    n_iter: int = 0

    @property
    def n_components(self):
        return self.means.shape[0]

    def log_joint(self, points):
        """``log(weight_k) + log N(x | mean_k, var_k)`` as an ``[N, K]`` array."""
        x = np.asarray(points, dtype=np.float64)
        d = x.shape[1]
        diff = x[:, None, :] - self.means[None]
        maha = (diff * diff / self.variances[None]).sum(-1)
        log_norm = -0.5 * (d * np.log(2 * np.pi) + np.log(self.variances).sum(-1))
        return np.log(self.weights)[None] + log_norm[None] - 0.5 * maha

    def to_dict(self):
        return {
            "backend": self.backend,
            "means": self.means.tolist(),
            "variances": self.variances.tolist(),
            "weights": self.weights.tolist(),
            "n_iter": self.n_iter,
            "log_likelihood_trace": list(self.log_likelihood_trace),
        }


def _as_points(points, k):
    x = np.stack([as_tensor(p).reshape(-1) for p in points]) if isinstance(points, list) else (
        np.asarray(points, dtype=np.float64)
    )
    if x.ndim != 2:
        raise InvalidArgumentError(f"points must be [N, D], got shape {x.shape}")
    if k < 1:
        raise InvalidArgumentError("number of clusters must be >= 1")
    if x.shape[0] < k:
        raise InvalidArgumentError(f"{x.shape[0]} points cannot form {k} clusters")
    if np.all(x == x[0]):
        raise DegenerateDataError("all points are identical")
    return x


def _em(x, means, var_floor, max_iters, tol):
    n = x.shape[0]
    k = means.shape[0]
    model = ClusterModel(
        means=means.copy(),
        variances=np.tile(np.maximum(x.var(0), var_floor), (k, 1)),
        weights=np.full(k, 1.0 / k),
    )
    trace = []
    for it in range(max_iters):
        lj = model.log_joint(x)
        lse = logsumexp(lj, axis=1)
        ll = float(lse.sum())
        trace.append(ll)
        if len(trace) > 1 and abs(trace[-1] - trace[-2]) <= tol * abs(trace[-2]):
            break
        resp = np.exp(lj - lse[:, None])
        nk = resp.sum(0)
        live = nk > 1e-10
        mu = (resp.T @ x) / np.where(live, nk, 1.0)[:, None]
        ex2 = (resp.T @ (x * x)) / np.where(live, nk, 1.0)[:, None]
        var = np.maximum(ex2 - mu * mu, var_floor)
        model.means = np.where(live[:, None], mu, model.means)
        model.variances = np.where(live[:, None], var, model.variances)
        model.weights = np.maximum(nk / n, 1e-300)
        model.weights /= model.weights.sum()
        model.n_iter = it + 1
    model.log_likelihood_trace = trace
    return model


def fit_gmm(points, n_clusters, rng, config=None):
    """Diagonal-covariance GMM by EM; the restart with the best final log-likelihood wins."""
    cfg = config or GmmConfig()
    x = _as_points(points, n_clusters)
    best = None
    for _ in range(cfg.n_init):
        init = x[_distinct_picks(x, n_clusters, rng)]
        model = _em(x, init, cfg.var_floor, cfg.max_iters, cfg.tol)
        if best is None or model.log_likelihood_trace[-1] > best.log_likelihood_trace[-1]:
            best = model
    return best


def _distinct_picks(x, k, rng):
    """k-means++ seeding restricted to distinct rows."""
    n = x.shape[0]
    picks = [int(rng.integers(n, size=None))]
    d2 = ((x - x[picks[0]]) ** 2).sum(1)
    while len(picks) < k:
        if d2.sum() <= 0:
            # fewer distinct rows than clusters; reuse an earlier pick
            picks.append(picks[len(picks) % len(picks)])
            continue
        r = rng.uniform(1)[0] * d2.sum()
        nxt = int(min(np.searchsorted(np.cumsum(d2), r, side="right"), n - 1))
        picks.append(nxt)
        d2 = np.minimum(d2, ((x - x[nxt]) ** 2).sum(1))
    return np.array(picks)


def fit_kmeans(points, n_clusters, rng, config=None):
    """Lloyd's k-means; returns a ClusterModel whose assignment is nearest-mean."""
    cfg = config or GmmConfig()
    x = _as_points(points, n_clusters)
    best, best_inertia = None, np.inf
    for _ in range(cfg.n_init):
        centers = x[_distinct_picks(x, n_clusters, rng)].copy()
        inertia_trace = []
        for it in range(cfg.max_iters):
            d2 = ((x[:, None, :] - centers[None]) ** 2).sum(-1)
            lab = d2.argmin(1)
            inertia_trace.append(float(d2[np.arange(len(x)), lab].sum()))
            new = np.array(
                [x[lab == j].mean(0) if np.any(lab == j) else centers[j] for j in range(n_clusters)]
            )
            if np.allclose(new, centers, rtol=0, atol=1e-12):
                break
            centers = new
        if inertia_trace[-1] < best_inertia:
            best_inertia = inertia_trace[-1]
            counts = np.bincount(lab, minlength=n_clusters).astype(float)
            var = np.array(
                [x[lab == j].var(0) if counts[j] > 0 else x.var(0) for j in range(n_clusters)]
            )
            best = ClusterModel(
                means=centers,
                variances=np.maximum(var, cfg.var_floor),
                weights=np.maximum(counts, 1e-12) / counts.sum(),
                backend="kmeans",
                log_likelihood_trace=[-v for v in inertia_trace],
                n_iter=it + 1,
            )
    return best


def fit_clusters(points, n_clusters, rng, backend="gmm", config=None):
    if backend == "gmm":
        return fit_gmm(points, n_clusters, rng, config)
    if backend == "kmeans":
        return fit_kmeans(points, n_clusters, rng, config)
    raise InvalidArgumentError(f"unknown clustering backend {backend!r}")


def assign_cl_labels(model, points):
    """Most responsible component per point; ties go to the lowest index."""
    x = np.asarray(points, dtype=np.float64)
    if x.ndim == 1:
        x = x[None]
    if x.shape[1] != model.means.shape[1]:
        raise InvalidArgumentError("point dimension does not match the cluster model")
    if model.backend == "kmeans":
        return ((x[:, None, :] - model.means[None]) ** 2).sum(-1).argmin(1)
    return model.log_joint(x).argmax(1)


# --- sub-Gaussian components --------------------------------------------------------


@dataclass
class SubGaussianPrior:
    """``sub_centers`` is ``[C_bar, k, d]``; ``log_vars`` is ``[C_bar, d]`` (shared per cluster)."""

    sub_centers: np.ndarray
    log_vars: np.ndarray
    drop_rate: float = DROP_RATE

    def __post_init__(self):
        self.sub_centers = np.asarray(self.sub_centers, dtype=np.float64)
        self.log_vars = np.asarray(self.log_vars, dtype=np.float64)
        if self.sub_centers.ndim != 3:
            raise InvalidArgumentError("sub_centers must be [C_bar, k, d]")
        c, k, d = self.sub_centers.shape
        if k < 1 or self.log_vars.shape != (c, d):
            raise InvalidArgumentError("log_vars must be [C_bar, d] and k >= 1")

    @classmethod
    def init(cls, n_clusters, k, dim, rng, drop_rate=DROP_RATE):
        """Unit sub-centers drawn like mixture-prior means; ``k = 1`` consumes the same draws."""
        return cls(init_centers(rng, (n_clusters, k), dim), np.zeros((n_clusters, dim)), drop_rate)

    @property
    def n_clusters(self):
        return self.sub_centers.shape[0]

    @property
    def k(self):
        return self.sub_centers.shape[1]

    @property
    def dim(self):
        return self.sub_centers.shape[2]

    def params(self, prefix="prior"):
        return {f"{prefix}.sub_centers": self.sub_centers, f"{prefix}.log_vars": self.log_vars}


def draw_keep_masks(rng, shape, drop_rate):
    return rng.uniform(shape) >= drop_rate


def _select(scores, keep, drop_rate):
    if keep is not None:
        scores = np.where(keep, scores / (1.0 - drop_rate), 0.0)
    return scores.argmax(-1)


def sgc_select(sub_prior, c, u_phi, rng=None, mode="eval", keep=None):
    """Pick the sub-center of cluster ``c`` best aligned with the posterior mean.

    In train mode each score is zeroed with probability ``drop_rate`` and the
    survivors are scaled by ``1 / (1 - drop_rate)`` before the argmax; pass
    ``keep`` to fix the mask. Returns ``(center, index)``.
    """
    if not 0 <= int(c) < sub_prior.n_clusters:
        raise InvalidArgumentError(f"cluster label {c} outside [0, {sub_prior.n_clusters})")
    u_phi = as_tensor(u_phi).reshape(-1)
    scores = sub_prior.sub_centers[c] @ u_phi
    if mode == "train" and sub_prior.k > 1:
        if keep is None:
            keep = draw_keep_masks(rng, (sub_prior.k,), sub_prior.drop_rate)
    elif mode != "train":
        if mode != "eval":
            raise InvalidArgumentError(f"mode must be 'train' or 'eval', got {mode!r}")
        keep = None
    idx = int(_select(scores, keep, sub_prior.drop_rate))
    return sub_prior.sub_centers[c, idx], idx


def select_batch(sub_prior, mu, rng=None, mode="eval", keep=None):
    """Selected sub-center index for every (sample, cluster) pair: ``[B, C_bar]``.

    Masks are only drawn when ``k > 1``, so a one-sub-center prior consumes no
    randomness.
    """
    scores = np.einsum("ckd,bd->bck", sub_prior.sub_centers, mu)
    if mode == "train" and sub_prior.k > 1:
        if keep is None:
            keep = draw_keep_masks(rng, scores.shape, sub_prior.drop_rate)
        return _select(scores, keep, sub_prior.drop_rate)
    return scores.argmax(-1)


def relabel_dataset(model, samples, n_clusters, rng, backend="gmm", config=None):
    """Cluster eval-mode gates of ``samples`` and write ``cl_label`` on each.

    ``model`` is a trained Stage-I :class:`vattn.trainer.model.Model`. Returns
    ``(labels, histogram, cluster_model)``.
    """
    from vattn.trainer.model import gates_for

    if not samples:
        raise InvalidArgumentError("cannot relabel an empty dataset")
    gates = gates_for(model, samples)
    cm = fit_clusters(gates, n_clusters, rng, backend, config)
    labels = assign_cl_labels(cm, gates)
    for s, lab in zip(samples, labels):
        s.cl_label = int(lab)
    hist = np.bincount(labels, minlength=n_clusters)
    return labels, hist, cm


def derived_cluster_rng(seed):
    return Rng.derived(seed, 2)
