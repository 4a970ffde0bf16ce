"""Finite-difference verification of every hand-derived gradient in the package.

Each case builds a small random instance, wraps the function as
``f(params) -> (value, grads)`` and hands it to :func:`vattn.ndtensor.grad_errors`.
"""

import time

import numpy as np

from vattn.gaussian_latent import (
    GaussianParams,
    kl_diag_gaussian,
    logdet_regularizer,
    lse_regularizer,
)
from vattn.ndtensor import Rng, grad_errors
from vattn.trainer.losses import Batch, LossWeights, density_loss, inva_total_loss, va_total_loss
from vattn.trainer.model import Model, ModelConfig

TOLERANCE = 1e-4
EPS = 1e-5


def _density_case(rng):
    gt = np.abs(rng.normal((2, 4, 4, 1)))
    params = {"pred": rng.normal((2, 4, 4, 1))}

    def f(p):
        val, d = density_loss(p["pred"], gt)
        return val, {"pred": d}

    return f, params


def _kl_case(rng, d=4):
    params = {
        "q_mean": rng.normal(d),
        "q_log_var": 0.5 * rng.normal(d),
        "p_mean": rng.normal(d),
        "p_log_var": 0.5 * rng.normal(d),
    }

    def f(p):
        return kl_diag_gaussian(
            GaussianParams(p["q_mean"], p["q_log_var"]),
            GaussianParams(p["p_mean"], p["p_log_var"]),
        )

    return f, params


def _lse_case(rng, c=4, d=3):
    params = {"z": rng.normal(d), "centers": rng.normal((c, d))}

    def f(p):
        return lse_regularizer(p["z"], p["centers"], 2)

    return f, params


def _logdet_case(rng, d=5):
    params = {"log_var": 0.3 * rng.normal(d)}
    mean = np.zeros(d)

    def f(p):
        val, g = logdet_regularizer(GaussianParams(mean, p["log_var"]))
        return val, {"log_var": g}

    return f, params


def micro_model(kind, k, rng, seed=5):
    """Tiny model with every parameter jittered so no ReLU sits exactly at a kink."""
    cfg = ModelConfig(
        attention=kind, c_mid=3, c_feat=4, head=(3, 2), latent_dim=2,
        n_components=2, k=k, se_reduction=2,
    )
    model = Model.init(cfg, seed)
    for p in model.parameters().values():
        p += 0.1 * rng.normal(p.shape)
    return model


def _model_case(rng, kind):
    k = 3 if kind == "inva" else 1
    model = micro_model(kind, k, rng)
    batch = Batch(rng.normal((2, 4, 4, 1)), 0.1 * np.abs(rng.normal((2, 4, 4, 1))), np.array([0, 1]))
    weights = LossWeights(1.0, 0.5, 0.3)
    eps = rng.normal((2, 2))
    keep = rng.uniform((2, 2, k)) >= 0.2

    def f(p):
        if kind == "va":
            total, _, grads = va_total_loss(model, batch, weights, eps=eps)
        else:
            total, _, grads = inva_total_loss(model, batch, weights, eps=eps, keep=keep)
        return total, grads

    return f, model.parameters()


CASES = {
    "density_loss": _density_case,
    "kl_diag_gaussian": _kl_case,
    "lse_regularizer": _lse_case,
    "logdet_regularizer": _logdet_case,
    "va_total_loss": lambda rng: _model_case(rng, "va"),
    "inva_total_loss": lambda rng: _model_case(rng, "inva"),
}


def run_suite(seed=3, eps=EPS):
    """``{case: {"max_rel_error", "worst_param", "seconds"}}`` for every case."""
    out = {}
    for i, (name, build) in enumerate(CASES.items()):
        t0 = time.perf_counter()
        f, params = build(Rng.derived(seed, i))
        errs = grad_errors(f, params, eps)
        worst = max(errs, key=errs.get)
        out[name] = {
            "max_rel_error": errs[worst],
            "worst_param": worst,
            "seconds": time.perf_counter() - t0,
        }
    return out


def suite_passes(results, tol=TOLERANCE):
    return all(r["max_rel_error"] < tol for r in results.values())
