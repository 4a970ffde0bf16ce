import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vattn.errors import InvalidArgumentError
from vattn.synthdomains import (
    DomainSpec,
    default_presets,
    generate,
    load_dataset,
    read_dots_csv,
    read_samples,
    render_density,
    save_dataset,
    write_samples,
)


def small(**kw):
    base = dict(name="T", count_range=(2, 9), kernel_sigma=1.0, n_train=5, n_test=3, grid=(8, 8))
    base.update(kw)
    return DomainSpec(**base)


def test_zero_counts_give_zero_density():
    train, _ = generate([small(count_range=(0, 0))], seed=1)
    for s in train:
        assert s.count_gt == 0 and np.array_equal(s.density_gt, np.zeros_like(s.density_gt))


@pytest.mark.parametrize("pos", [(0.1, 0.1), (3.7, 5.2), (7.9, 0.0)])
def test_single_dot_has_unit_mass(pos):
    assert render_density(np.array([pos]), 1.3, (8, 8)).sum() == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31), st.sampled_from(["none", "gradient", "clutter", "mixed"]))
def test_density_sums_to_count(seed, bg):
    train, test = generate([small(background=bg, background_amp=0.4, kernel_sigma=(0.5, 3.0))], seed)
    for s in train + test:
        assert abs(s.density_gt.sum() - s.count_gt) < 1e-6


def test_seed_7_mean_counts_near_midpoint():
    specs = default_presets(grid=(16, 16))["three_joint"]
    train, _ = generate(specs, seed=7)
    for lab, spec in enumerate(specs):
        mean = np.mean([s.count_gt for s in train if s.dataset_label == lab])
        mid = 0.5 * sum(spec.count_range)
        assert abs(mean - mid) <= 0.1 * mid, (spec.name, mean, mid)


def test_regeneration_is_bitwise():
    specs = [small(background="mixed", background_amp=0.3)]
    a, b = generate(specs, 4), generate(specs, 4)
    for x, y in zip(a[0] + a[1], b[0] + b[1]):
        assert np.array_equal(x.input, y.input) and np.array_equal(x.density_gt, y.density_gt)
    other = generate(specs, 5)[0]
    assert not np.array_equal(other[0].input, a[0][0].input)


def test_presets_structure():
    p = default_presets()
    three, four = p["three_joint"], p["four_joint"]
    assert [s.name for s in three] == ["A", "Q", "B"]
    a, q, b = (s.count_range for s in three)
    assert a[1] >= q[0] and b[1] < min(a[0], q[0])
    n = four[3].count_range
    assert n[0] <= b[0] and n[1] >= q[1]
    assert [s.n_train for s in three] == [300, 400, 150]


@pytest.mark.parametrize(
    "kw",
    [
        dict(count_range=(5, 2)),
        dict(count_range=(-1, 2)),
        dict(kernel_sigma=0.0),
        dict(n_train=0),
        dict(count_range=(0, 65)),
        dict(background="stripes"),
    ],
)
def test_spec_validation(kw):
    with pytest.raises(InvalidArgumentError):
        small(**kw)


def test_mixed_grids_rejected():
    with pytest.raises(InvalidArgumentError):
        generate([small(), small(name="U", grid=(6, 6))], 0)


def test_round_trip(tmp_path):
    specs = [small(), small(name="U", count_range=(0, 3), background="gradient", background_amp=0.5)]
    train, test = generate(specs, 11)
    save_dataset(tmp_path, train, test, specs, seed=11)
    tr2, te2, names = load_dataset(tmp_path)
    assert names == ["T", "U"]
    for x, y in zip(train + test, tr2 + te2):
        assert np.array_equal(x.input, y.input) and np.array_equal(x.density_gt, y.density_gt)
        assert x.count_gt == y.count_gt and x.dataset_label == y.dataset_label
    dots = read_dots_csv(tmp_path / "train_dots.csv")
    for s in train:
        if s.count_gt:
            assert np.array_equal(dots[s.sample_id], s.dots)


def test_corrupt_file_rejected(tmp_path):
    train, _ = generate([small()], 0)
    path = tmp_path / "x.vatn"
    write_samples(path, train)
    raw = path.read_bytes()
    path.write_bytes(raw[:-3])
    with pytest.raises(InvalidArgumentError):
        read_samples(path)
    path.write_bytes(b"NOPE" + raw[4:])
    with pytest.raises(InvalidArgumentError):
        read_samples(path)


def test_preset_replace_keeps_validation():
    spec = dataclasses.replace(default_presets(grid=(12, 12))["three_joint"][0], n_train=3)
    assert spec.grid == (12, 12) and spec.n_train == 3
