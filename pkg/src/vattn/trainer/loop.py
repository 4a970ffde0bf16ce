"""Training loop, evaluation and the two-stage VA -> InVA pipeline."""

import dataclasses
import math
import time

import numpy as np

from vattn.errors import InvalidArgumentError, NumericalDomainError
from vattn.intrinsic import (
    assign_cl_labels,
    derived_cluster_rng,
    fit_clusters,
    select_batch,
)
from vattn.metrics import (
    contingency_table,
    mean_offdiag,
    per_domain_errors,
    silhouette,
    subdomain_report,
)
from vattn.ndtensor import Rng
from vattn.report import RunReport
from vattn.trainer import checkpoint as ckpt_io
from vattn.trainer.config import TrainConfig
from vattn.trainer.losses import TERMS, Batch, LossWeights, total_loss
from vattn.trainer.model import Model, ModelConfig, predict, stack_inputs, stack_targets
from vattn.trainer.optim import Adam, lr_at

_ATTENTION = {"it": "none", "jt": "none", "se": "se", "va": "va", "inva": "inva"}


class BalancedSampler:
    """Each batch slot picks a domain uniformly, then a sample uniformly within it.

    Domains are ordered by first appearance in the sample list, so renaming label
    values without reordering samples leaves the draw sequence unchanged.
    """

    def __init__(self, labels):
        labels = np.asarray(labels)
        order = []
        for lab in labels:
            if lab not in order:
                order.append(lab)
        self.groups = [np.flatnonzero(labels == lab) for lab in order]
        self.sizes = np.array([len(g) for g in self.groups])

    def draw(self, rng, n):
        dom = rng.integers(len(self.groups), size=n)
        pos = np.floor(rng.uniform(n) * self.sizes[dom]).astype(np.int64)
        return np.array([self.groups[d][p] for d, p in zip(dom, pos)])


def model_config_for(config, n_domains):
    kind = _ATTENTION[config.mode]
    if kind == "inva":
        n_comp, k = config.cbar, config.k
    else:
        n_comp, k = (config.n_components or n_domains), 1
    return ModelConfig(
        attention=kind,
        c_mid=config.c_mid,
        c_feat=config.c_feat,
        head=config.head,
        latent_dim=config.latent_dim,
        n_components=n_comp,
        k=k,
        se_reduction=config.se_reduction,
        drop_rate=config.drop_rate,
    )


def model_from_checkpoint(ck):
    config = TrainConfig.from_dict(ck.config)
    model = Model.init(model_config_for(config, ck.state["n_domains"]), config.seed)
    model.load_parameters(ck.tensors)
    return model


def evaluate(model, samples, names):
    counts, _, _ = predict(model, samples)
    gt = [s.count_gt for s in samples]
    labels = [s.dataset_label for s in samples]
    return per_domain_errors(counts, gt, labels, names)


def _default_names(samples):
    n = max(s.dataset_label for s in samples) + 1
    return [f"domain{i}" for i in range(n)]


def make_checkpoint(model, config, adam, rng, epoch, trace, names, extra=None):
    tensors = {k: v.copy() for k, v in model.parameters().items()}
    tensors.update({k: v.copy() for k, v in adam.state_tensors().items()})
    state = {
        "rng": rng.get_state(),
        "adam_t": adam.t,
        "n_domains": len(names),
        "domains": list(names),
        "loss_trace": trace,
    }
    state.update(extra or {})
    return ckpt_io.Checkpoint(tensors=tensors, config=config.to_dict(), epoch=epoch, state=state)


def train(config, train_samples, test_samples=None, names=None, resume=None, stop_epoch=None):
    """Adam training with balanced domain sampling.

    Returns ``(Checkpoint, RunReport)``. ``resume`` continues from a checkpoint
    written by an earlier call (bitwise-equal to never stopping); ``stop_epoch``
    ends early, which is how such checkpoints are produced.
    """
    t0 = time.perf_counter()
    if not train_samples:
        raise InvalidArgumentError("training set is empty")
    names = list(names or _default_names(train_samples))
    test_samples = test_samples or []
    present = sorted({s.dataset_label for s in train_samples})
    if config.mode == "it" and len(present) != 1:
        raise InvalidArgumentError("IT mode trains on exactly one domain")
    label_field = "cl_label" if config.mode == "inva" else "dataset_label"
    loss_labels = [getattr(s, label_field) for s in train_samples]
    if any(lab is None for lab in loss_labels):
        raise InvalidArgumentError(f"InVA training needs {label_field} on every sample")

    model = Model.init(model_config_for(config, len(names)), config.seed)
    weights = LossWeights(config.lambda_kl, config.lambda_lse, config.lambda_det)
    adam = Adam(config.adam_betas)
    rng = Rng(config.seed)
    trace = {t: [] for t in TERMS + ("total",)}
    start = 0
    eval_trace = []
    if resume is not None:
        model.load_parameters(resume.tensors)
        adam.load_state(resume.tensors, resume.state["adam_t"])
        rng.set_state(resume.state["rng"])
        trace = {k: list(v) for k, v in resume.state["loss_trace"].items()}
        eval_trace = list(resume.state.get("eval_trace", []))
        start = resume.epoch

    eval_set = [s for s in test_samples if s.dataset_label in present]
    init_metrics = evaluate(model, eval_set, names) if eval_set and resume is None else {}

    x_all = stack_inputs(train_samples)
    gt_all = stack_targets(train_samples)
    lab_all = np.asarray(loss_labels, dtype=np.int64)
    sampler = BalancedSampler([s.dataset_label for s in train_samples])
    steps = config.steps_per_epoch or math.ceil(len(train_samples) / config.batch_size)
    params = model.parameters()
    end = config.epochs if stop_epoch is None else min(stop_epoch, config.epochs)

    for epoch in range(start, end):
        lr = lr_at(epoch, config.lr, config.lr_decay_factor, config.lr_decay_period)
        sums = dict.fromkeys(trace, 0.0)
        for step in range(steps):
            idx = sampler.draw(rng, config.batch_size)
            batch = Batch(x_all[idx], gt_all[idx], lab_all[idx])
            total, terms, grads = total_loss(model, batch, weights, rng, "train")
            if not all(math.isfinite(v) for v in terms.values()):
                raise NumericalDomainError(
                    f"non-finite loss at epoch {epoch}, step {step}",
                    {"epoch": epoch, "step": step, "terms": terms},
                )
            adam.step(params, grads, lr)
            for t in sums:
                sums[t] += terms.get(t, 0.0)
        for t in sums:
            trace[t].append(sums[t] / steps)
        if config.eval_every and eval_set and (epoch + 1) % config.eval_every == 0:
            eval_trace.append({"epoch": epoch + 1, "per_domain": evaluate(model, eval_set, names)})

    done = max(start, end)
    extra = {"eval_trace": eval_trace, "trained_domains": [names[i] for i in present]}
    ck = make_checkpoint(model, config, adam, rng, done, trace, names, extra)
    report = RunReport(
        mode=config.mode,
        seed=config.seed,
        config=config.to_dict(),
        domains=[names[i] for i in present],
        per_domain=evaluate(model, eval_set, names) if eval_set else {},
        init_per_domain=init_metrics,
        loss_trace=trace,
        eval_trace=eval_trace,
    )
    if model.config.attention != "none" and len(present) > 1:
        _, gates, _ = predict(model, train_samples)
        report.gate_silhouette = silhouette(gates, [s.dataset_label for s in train_samples])
    report.wall_clock = time.perf_counter() - t0
    return ck, report


def cluster_samples(model, samples, n_clusters, seed, backend="gmm"):
    """Eval-mode gates -> clustering -> CL labels. Returns (labels, cluster_model, gates)."""
    _, gates, _ = predict(model, samples)
    if gates is None:
        raise InvalidArgumentError("model has no attention head; there are no gates to cluster")
    cm = fit_clusters(gates, n_clusters, derived_cluster_rng(seed), backend)
    return assign_cl_labels(cm, gates), cm, gates


def eval_selections(model, samples):
    """Eval-mode sub-center index each sample picks within its own CL cluster."""
    _, _, mus = predict(model, samples)
    sel = select_batch(model.prior, mus, mode="eval")
    return sel[np.arange(len(samples)), [s.cl_label for s in samples]]


def run_dkpnet(config, train_samples, test_samples=None, names=None, label_hook=None):
    """Stage I (VA on dataset labels) -> clustering -> Stage II (InVA on CL labels).

    Stage II restarts from the same initial backbone/head weights as Stage I with
    freshly initialized attention and sub-centers. ``label_hook(samples, labels)``
    may replace the clustering output (used by tests).
    Returns ``(stage1_ckpt, stage2_ckpt, RunReport)``.
    """
    t0 = time.perf_counter()
    if not train_samples:
        raise InvalidArgumentError("training set is empty")
    names = list(names or _default_names(train_samples))
    cfg1 = dataclasses.replace(config, mode="va")
    ck1, rep1 = train(cfg1, train_samples, test_samples, names)
    model1 = model_from_checkpoint(ck1)
    labels, cm, gates = cluster_samples(model1, train_samples, config.cbar, config.seed,
                                        config.cluster_backend)
    if label_hook is not None:
        labels = np.asarray(label_hook(train_samples, labels), dtype=np.int64)
    relabeled = [dataclasses.replace(s, cl_label=int(lab)) for s, lab in zip(train_samples, labels)]
    cfg2 = dataclasses.replace(config, mode="inva")
    ck2, rep2 = train(cfg2, relabeled, test_samples, names)
    model2 = model_from_checkpoint(ck2)

    ds_labels = [s.dataset_label for s in train_samples]
    sel = eval_selections(model2, relabeled)
    cos, counts = subdomain_report(model2.prior, labels, sel)
    report = RunReport(
        mode="dkpnet",
        seed=config.seed,
        config=config.to_dict(),
        domains=rep2.domains,
        per_domain=rep2.per_domain,
        init_per_domain=rep1.init_per_domain,
        loss_trace=rep2.loss_trace,
        gate_silhouette=rep1.gate_silhouette,
        cl_silhouette=(
            silhouette(gates, labels) if len(set(labels.tolist())) > 1 else None
        ),
        contingency=contingency_table(ds_labels, labels, len(names), config.cbar),
        cluster_sizes=np.bincount(labels, minlength=config.cbar),
        subdomain_cosines=cos,
        subdomain_counts=counts,
        subdomain_mean_offdiag=[mean_offdiag(c) for c in cos],
        stages={"stage1": rep1.to_dict(), "stage2": rep2.to_dict()},
    )
    if np.any(counts.sum(0) == 0):
        report.flags.append("empty_cluster")
    if np.any(counts == 0):
        report.flags.append("unused_subcenter")
    ck2.state["cl_labels"] = [int(v) for v in labels]
    ck2.state["cluster_model"] = cm.to_dict()
    report.wall_clock = time.perf_counter() - t0
    return ck1, ck2, report
