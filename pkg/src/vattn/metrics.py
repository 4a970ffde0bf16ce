"""Counting errors, separability statistics and sub-domain tables."""

import math

import numpy as np

from vattn.errors import InvalidArgumentError


def mae_mse(pred_counts, gt_counts):
    """MAE and root-mean-squared error (the counting community's "MSE")."""
    p = np.asarray(pred_counts, dtype=np.float64).reshape(-1)
    g = np.asarray(gt_counts, dtype=np.float64).reshape(-1)
    if p.size == 0 or p.size != g.size:
        raise InvalidArgumentError(f"need equal non-zero lengths, got {p.size} and {g.size}")
    err = p - g
    return float(np.mean(np.abs(err))), float(np.sqrt(np.mean(err * err)))


def predicted_count(density_pred):
    return float(np.sum(density_pred))


def per_domain_errors(pred_counts, gt_counts, labels, names):
    """``{name: {"mae", "mse", "n"}}`` for every domain label present."""
    pred = np.asarray(pred_counts)
    gt = np.asarray(gt_counts)
    labels = np.asarray(labels)
    out = {}
    for lab, name in enumerate(names):
        sel = labels == lab
        if not sel.any():
            continue
        mae, mse = mae_mse(pred[sel], gt[sel])
        out[name] = {"mae": mae, "mse": mse, "n": int(sel.sum())}
    return out


def silhouette(points, labels):
    """Mean silhouette coefficient under Euclidean distance; singletons score 0."""
    x = np.asarray(points, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    labels = np.asarray(labels)
    if x.shape[0] != labels.size:
        raise InvalidArgumentError("points and labels differ in length")
    uniq, lab = np.unique(labels, return_inverse=True)
    if uniq.size < 2:
        raise InvalidArgumentError("silhouette needs at least two distinct labels")
    sq = (x * x).sum(1)
    d = np.sqrt(np.maximum(sq[:, None] + sq[None] - 2.0 * x @ x.T, 0.0))
    np.fill_diagonal(d, 0.0)
    onehot = np.eye(uniq.size)[lab]  # [N, K]
    sizes = onehot.sum(0)
    sums = d @ onehot  # distance sums to each cluster
    own = sizes[lab]
    a = sums[np.arange(len(lab)), lab] / np.maximum(own - 1, 1)
    other = sums / sizes[None]
    other[np.arange(len(lab)), lab] = np.inf
    b = other.min(1)
    denom = np.maximum(a, b)
    s = np.where(denom > 0, (b - a) / np.where(denom > 0, denom, 1.0), 0.0)
    s[own == 1] = 0.0
    return float(s.mean())


def contingency_table(rows, cols, n_rows=None, n_cols=None):
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    n_rows = int(rows.max()) + 1 if n_rows is None else n_rows
    n_cols = int(cols.max()) + 1 if n_cols is None else n_cols
    table = np.zeros((n_rows, n_cols), dtype=np.int64)
    np.add.at(table, (rows, cols), 1)
    return table


def adjusted_rand_index(a, b):
    """Permutation-invariant agreement between two labelings (1.0 = identical partitions)."""
    a = np.unique(np.asarray(a), return_inverse=True)[1]
    b = np.unique(np.asarray(b), return_inverse=True)[1]
    if a.size != b.size:
        raise InvalidArgumentError("labelings differ in length")
    table = contingency_table(a, b)

    def comb2(v):
        v = np.asarray(v, dtype=np.float64)
        return float((v * (v - 1) / 2).sum())

    idx = comb2(table)
    sa, sb = comb2(table.sum(1)), comb2(table.sum(0))
    total = a.size * (a.size - 1) / 2
    expected = sa * sb / total if total else 0.0
    max_idx = 0.5 * (sa + sb)
    if max_idx == expected:
        return 1.0
    return (idx - expected) / (max_idx - expected)


def cosine_matrix(vectors):
    v = np.asarray(vectors, dtype=np.float64)
    norms = np.linalg.norm(v, axis=1)
    norms = np.where(norms > 0, norms, 1.0)
    u = v / norms[:, None]
    return np.clip(u @ u.T, -1.0, 1.0)


def subdomain_report(sub_prior, cluster_labels, selections):
    """Per-cluster cosine similarities among sub-centers and selection counts.

    ``selections[i]`` is the eval-mode sub-center index chosen for sample ``i``
    within its own cluster ``cluster_labels[i]``. Returns ``(cosines, counts)``:
    a list of ``[k, k]`` matrices and an ``[k, C_bar]`` table (Sub-p rows, CL-c
    columns).
    """
    cosines = [cosine_matrix(sub_prior.sub_centers[c]) for c in range(sub_prior.n_clusters)]
    counts = contingency_table(
        np.asarray(selections), np.asarray(cluster_labels), sub_prior.k, sub_prior.n_clusters
    )
    return cosines, counts


def mean_offdiag(m):
    m = np.asarray(m)
    k = m.shape[0]
    if k < 2:
        return float("nan")
    return float((m.sum() - np.trace(m)) / (k * (k - 1)))


def mean_std(values):
    """Sample mean and (n-1) standard deviation; std is 0 for a single value."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise InvalidArgumentError("no values to aggregate")
    mean = float(v.mean())
    std = float(v.std(ddof=1)) if v.size > 1 else 0.0
    return mean, std


def welford(values):
    """One-pass mean / sample std, an independent check for :func:`mean_std`."""
    n, mean, m2 = 0, 0.0, 0.0
    for x in values:
        n += 1
        delta = x - mean
        mean += delta / n
        m2 += delta * (x - mean)
    return mean, math.sqrt(m2 / (n - 1)) if n > 1 else 0.0
