import dataclasses
import json

import numpy as np
import pytest

from oracles import adam_scalar
from vattn.errors import InvalidArgumentError, InvalidStateError, NumericalDomainError
from vattn.ndtensor import Rng
from vattn.synthdomains import DomainSpec, generate
from vattn.trainer import (
    LossWeights,
    Model,
    ModelConfig,
    TrainConfig,
    density_loss,
    inva_total_loss,
    load_config,
    make_batch,
    run_dkpnet,
    total_loss,
    train,
    va_total_loss,
)
from vattn.trainer import checkpoint as ckpt_io
from vattn.trainer.loop import BalancedSampler
from vattn.trainer.optim import Adam, lr_at

TINY = dict(c_mid=4, c_feat=8, head=(4,), latent_dim=3, batch_size=4, steps_per_epoch=3)


@pytest.fixture(scope="module")
def data():
    specs = [
        DomainSpec("P", (3, 8), 1.0, "clutter", 0.3, 12, 4, (6, 6)),
        DomainSpec("R", (0, 2), 1.5, "gradient", 0.5, 8, 4, (6, 6)),
    ]
    train_s, test_s = generate(specs, seed=2)
    return train_s, test_s, ["P", "R"]


def tiny(**kw):
    return TrainConfig(**{**TINY, "epochs": 4, **kw})


def micro_model(attention, k=1, n_comp=2, seed=0):
    return Model.init(ModelConfig(attention=attention, c_mid=4, c_feat=8, head=(4,), latent_dim=3,
                                  n_components=n_comp, k=k), seed)


# --- losses ------------------------------------------------------------------------


def test_density_loss_examples():
    assert density_loss(np.ones((2, 3)), np.ones((2, 3)))[0] == 0.0
    assert density_loss(np.array([[1.0, 1.0]]), np.zeros((1, 2)))[0] == 1.0
    pred, gt = Rng(0).normal((4, 5)), Rng(1).normal((4, 5))
    assert np.array_equal(density_loss(pred, gt)[1], (pred - gt) / 4)
    with pytest.raises(InvalidArgumentError):
        density_loss(np.ones(3), np.ones(4))


def test_zero_weights_reduce_to_density_bitwise(data):
    batch = make_batch(data[0][:5])
    model = micro_model("va")
    total, terms, _ = va_total_loss(model, batch, LossWeights(0, 0, 0), Rng(3))
    assert total == terms["density"]
    model2 = micro_model("va")
    fw_rng = Rng(3)
    from vattn.trainer.model import forward

    fw = forward(model2, batch.x, "train", rng=fw_rng)
    assert total == density_loss(fw.pred, batch.gt)[0]


def test_k1_inva_equals_va_bitwise(data):
    samples = [dataclasses.replace(s, cl_label=s.dataset_label) for s in data[0][:6]]
    va, inva = micro_model("va"), micro_model("inva", k=1)
    a = va_total_loss(va, make_batch(samples), rng=Rng(9))
    b = inva_total_loss(inva, make_batch(samples, "cl_label"), rng=Rng(9))
    assert a[0] == b[0] and a[1] == b[1]
    for name, g in a[2].items():
        other = b[2]["prior.sub_centers"][:, 0] if name == "prior.means" else b[2][name]
        assert np.array_equal(g, other), name


def test_inva_needs_cl_labels(data):
    with pytest.raises(InvalidStateError):
        make_batch(data[0][:3], "cl_label")


def test_loss_is_exactly_additive(data):
    w = LossWeights(0.7, 0.3, 0.2)
    total, terms, _ = va_total_loss(micro_model("va"), make_batch(data[0][:5]), w, Rng(4))
    parts = terms["density"] + w.kl * terms["kl"] + w.lse * terms["lse"] + w.det * terms["det"]
    assert abs(total - parts) <= 1e-12


def test_identical_centers_and_frozen_posterior():
    # q equals its component and every center coincides: loss = density + lse * log C
    model = micro_model("va", n_comp=3)
    model.prior.means[:] = 0.0
    model.attention.enc_mean_w[:] = 0.0
    model.attention.enc_mean_b[:] = 0.0
    model.attention.enc_logvar_w[:] = 0.0
    model.attention.enc_logvar_b[:] = 0.0
    x = Rng(2).normal((2, 6, 6, 1))
    from vattn.trainer.losses import Batch

    batch = Batch(x, np.zeros_like(x), np.array([0, 2]))
    w = LossWeights(1.0, 0.5, 0.1)
    total, terms, _ = total_loss(model, batch, w, Rng(1), "train")
    assert terms["kl"] == 0.0 and terms["det"] == 0.0
    assert total == pytest.approx(terms["density"] + 0.5 * np.log(3), abs=1e-12)


def test_inva_dominant_center_used_without_dropout(data):
    samples = [dataclasses.replace(s, cl_label=0) for s in data[0][:4]]
    model = micro_model("inva", k=3, n_comp=1)
    batch = make_batch(samples, "cl_label")
    keep = np.ones((4, 1, 3), dtype=bool)
    from vattn.trainer.model import forward

    mu = forward(model, batch.x, "eval").mu
    model.prior.sub_centers[0, 1] = 50.0 * mu.mean(0) / np.linalg.norm(mu.mean(0))
    a = inva_total_loss(model, batch, rng=Rng(5), keep=keep)
    b = inva_total_loss(model, batch, rng=Rng(5), keep=keep)
    assert a[0] == b[0]
    g = a[2]["prior.sub_centers"]
    assert np.any(g[0, 1] != 0) and np.all(g[0, 0] == 0) and np.all(g[0, 2] == 0)


# --- optimizer and schedule --------------------------------------------------------


def test_adam_matches_scalar_reference():
    grads = list(np.sin(np.arange(100) * 0.7) * 3.0 + 0.5)
    ref = adam_scalar(grads, lr=0.01, w0=1.5)
    p = {"w": np.array([1.5])}
    opt = Adam()
    for g, want in zip(grads, ref):
        opt.step(p, {"w": np.array([g])}, 0.01)
        assert abs(p["w"][0] - want) <= 1e-12


def test_lr_schedule_exact():
    for e in range(0, 400, 7):
        assert lr_at(e, 1e-3, 2.5, 60) == 1e-3 / 2.5 ** (e // 60)
    assert lr_at(59, 1e-3, 2.5, 60) == 1e-3 and lr_at(60, 1e-3, 2.5, 60) == 1e-3 / 2.5


def test_balanced_sampler_frequencies():
    labels = [0] * 700 + [1] * 200 + [2] * 100
    idx = BalancedSampler(labels).draw(Rng(8), 10**5)
    freq = np.bincount(np.asarray(labels)[idx], minlength=3) / 1e5
    assert np.all(np.abs(freq - 1 / 3) < 0.02)


# --- training loop -----------------------------------------------------------------


def test_epochs_zero_returns_init(data):
    tr, te, names = data
    ck, rep = train(tiny(epochs=0, mode="va"), tr, te, names)
    assert ck.epoch == 0 and all(len(v) == 0 for v in rep.loss_trace.values())
    fresh = Model.init(ModelConfig(attention="va", c_mid=4, c_feat=8, head=(4,), latent_dim=3,
                                   n_components=2), 0)
    for name, arr in fresh.parameters().items():
        assert np.array_equal(ck.tensors[name], arr)
    assert rep.per_domain == rep.init_per_domain


@pytest.mark.parametrize("mode", ["jt", "se", "va"])
def test_training_is_deterministic(data, mode):
    tr, te, names = data
    a, b = train(tiny(mode=mode), tr, te, names), train(tiny(mode=mode), tr, te, names)
    assert a[1].loss_trace == b[1].loss_trace
    assert ckpt_io.encode(a[0]) == ckpt_io.encode(b[0])


def test_resume_is_bitwise(data, tmp_path):
    tr, te, names = data
    cfg = tiny(mode="va", epochs=8)
    full, rep_full = train(cfg, tr, te, names)
    part, _ = train(cfg, tr, te, names, stop_epoch=3)
    ckpt_io.save(part, tmp_path / "p.vack")
    resumed, rep_res = train(cfg, tr, te, names, resume=ckpt_io.load(tmp_path / "p.vack"))
    assert rep_res.loss_trace == rep_full.loss_trace
    assert ckpt_io.encode(resumed) == ckpt_io.encode(full)


def test_checkpoint_round_trip(data, tmp_path):
    ck, _ = train(tiny(mode="se", epochs=1), *data)
    ckpt_io.save(ck, tmp_path / "c.vack")
    back = ckpt_io.load(tmp_path / "c.vack")
    assert back.config == ck.config and back.state == json.loads(json.dumps(ck.state))
    assert all(np.array_equal(back.tensors[k], v) for k, v in ck.tensors.items())
    with pytest.raises(InvalidArgumentError):
        ckpt_io.decode(b"XXXX" + ckpt_io.encode(ck)[4:])


def test_va_loss_decreases(data):
    tr, te, names = data
    _, rep = train(tiny(mode="va", epochs=15, lr=3e-3), tr, te, names)
    assert rep.loss_trace["total"][-1] < rep.loss_trace["total"][0]


def test_jt_invariant_to_label_renaming(data):
    tr, te, names = data
    swapped = [dataclasses.replace(s, dataset_label=1 - s.dataset_label) for s in tr]
    swapped_te = [dataclasses.replace(s, dataset_label=1 - s.dataset_label) for s in te]
    a = train(tiny(mode="jt"), tr, te, names)
    b = train(tiny(mode="jt"), swapped, swapped_te, names[::-1])
    assert a[1].loss_trace == b[1].loss_trace
    for k, v in a[0].tensors.items():
        assert np.array_equal(v, b[0].tensors[k])


def test_it_rejects_multiple_domains(data):
    with pytest.raises(InvalidArgumentError):
        train(tiny(mode="it"), *data)


def test_empty_dataset_rejected():
    with pytest.raises(InvalidArgumentError):
        train(tiny(), [])
    with pytest.raises(InvalidArgumentError):
        run_dkpnet(tiny(), [])


def test_non_finite_loss_aborts(data):
    tr, te, names = data
    bad = [dataclasses.replace(s, density_gt=np.full_like(s.density_gt, np.inf)) for s in tr]
    with pytest.raises(NumericalDomainError) as info, np.errstate(all="ignore"):
        train(tiny(mode="jt"), bad, te, names)
    diag = info.value.diagnostics
    assert diag["epoch"] == 0 and diag["step"] == 0 and "density" in diag["terms"]


def test_dkpnet_k1_with_dataset_labels_equals_va(data):
    tr, te, names = data
    cfg = tiny(mode="va", cbar=2, k=1)
    _, ck2, rep = run_dkpnet(cfg, tr, te, names, label_hook=lambda s, lab: [x.dataset_label for x in s])
    _, va_rep = train(cfg, tr, te, names)
    assert rep.loss_trace == va_rep.loss_trace
    assert np.asarray(rep.contingency).shape == (2, 2)


def test_dkpnet_report_structure(data):
    tr, te, names = data
    _, _, rep = run_dkpnet(tiny(mode="va", cbar=2, k=3), tr, te, names)
    assert set(rep.stages) == {"stage1", "stage2"}
    counts = np.asarray(rep.subdomain_counts)
    assert counts.shape == (3, 2) and counts.sum() == len(tr)
    assert np.asarray(rep.contingency).sum() == len(tr)


# --- config ------------------------------------------------------------------------


def test_config_json_and_env_seed(tmp_path, monkeypatch):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"lr": 5e-4, "mode": "se"}))
    monkeypatch.setenv("VATTN_SEED", "17")
    cfg = load_config(path)
    assert cfg.lr == 5e-4 and cfg.mode == "se" and cfg.seed == 17
    assert TrainConfig.from_dict(json.loads(cfg.to_json())) == cfg


@pytest.mark.parametrize("kw", [dict(mode="x"), dict(batch_size=0), dict(lambda_kl=-1), dict(lr=0)])
def test_config_validation(kw):
    with pytest.raises(InvalidArgumentError):
        TrainConfig(**kw)
