"""Synthetic multi-domain density-estimation benchmark.

Each domain scatters dots on a small grid. The ground-truth density is a sum of
Gaussian kernels renormalized on the discrete grid, so every map integrates to
its dot count exactly. The input image is the density map times a fixed gain
(``INPUT_GAIN``, so a width-1 kernel peaks near 1) over a domain-specific
background, plus additive pixel noise (std 0.1).

Binary file layout (little-endian)::

    b"VATN" | version u32 | n_samples u32 | H u32 | W u32
    per sample: label u8 | count f64 | input f64[H*W] | density f64[H*W]
"""

import csv
import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from vattn.errors import InvalidArgumentError
from vattn.ndtensor import Rng

MAGIC = b"VATN"
VERSION = 1
NOISE_STD = 0.1
INPUT_GAIN = 2.0 * np.pi
BACKGROUNDS = ("none", "gradient", "clutter", "mixed")
_SPLITS = {"train": 0, "test": 1}


@dataclass
class DomainSpec:
    name: str
    count_range: tuple
    kernel_sigma: object  # float, or (lo, hi) for a per-image uniform draw
    background: str = "none"
    background_amp: float = 0.0
    n_train: int = 100
    n_test: int = 50
    grid: tuple = (32, 32)

    def __post_init__(self):
        lo, hi = self.count_range
        if not 0 <= lo <= hi:
            raise InvalidArgumentError(f"{self.name}: bad count_range {self.count_range}")
        sig = np.atleast_1d(np.asarray(self.kernel_sigma, dtype=float))
        if np.any(sig <= 0):
            raise InvalidArgumentError(f"{self.name}: kernel_sigma must be positive")
        if self.background not in BACKGROUNDS:
            raise InvalidArgumentError(f"{self.name}: unknown background {self.background!r}")
        if self.n_train < 1 or self.n_test < 1:
            raise InvalidArgumentError(f"{self.name}: n_train and n_test must be >= 1")
        h, w = self.grid
        if hi > h * w:
            raise InvalidArgumentError(
                f"{self.name}: count max {hi} exceeds grid capacity {h * w}"
            )

    def to_dict(self):
        sig = self.kernel_sigma
        return {
            "name": self.name,
            "count_range": list(self.count_range),
            "kernel_sigma": list(sig) if isinstance(sig, (tuple, list)) else sig,
            "background": self.background,
            "background_amp": self.background_amp,
            "n_train": self.n_train,
            "n_test": self.n_test,
            "grid": list(self.grid),
        }

    @classmethod
    def from_dict(cls, d):
        sig = d["kernel_sigma"]
        return cls(
            name=d["name"],
            count_range=tuple(d["count_range"]),
            kernel_sigma=tuple(sig) if isinstance(sig, list) else sig,
            background=d["background"],
            background_amp=d["background_amp"],
            n_train=d["n_train"],
            n_test=d["n_test"],
            grid=tuple(d["grid"]),
        )


@dataclass
class DomainSample:
    input: np.ndarray  # [1, H, W]
    density_gt: np.ndarray  # [1, H, W]
    count_gt: float
    dataset_label: int
    sample_id: int
    cl_label: object = None
    dots: np.ndarray = field(default=None, repr=False)  # [n, 2] (row, col) in pixels


def default_presets(grid=(32, 32), n_test=100):
    """Three- and four-domain presets.

    three_joint: A and Q are similar dense domains (the dominant pair), B is a
    sparse domain with wide kernels on a gradient background. four_joint adds N,
    whose counts span B's and Q's ranges with per-image kernel width and
    background type.
    """
    grid = tuple(grid)
    a = DomainSpec("A", (20, 60), 1.0, "clutter", 0.3, 300, n_test, grid)
    q = DomainSpec("Q", (40, 120), 0.8, "clutter", 0.3, 400, n_test, grid)
    b = DomainSpec("B", (1, 10), 2.0, "gradient", 0.5, 150, n_test, grid)
    n = DomainSpec("N", (1, 120), (0.8, 2.0), "mixed", 0.4, 500, n_test, grid)
    return {"three_joint": [a, q, b], "four_joint": [a, q, b, n]}


def _axis_kernels(centers, sigma, size):
    coords = np.arange(size) + 0.5
    return np.exp(-((coords[None, :] - centers[:, None]) ** 2) / (2.0 * sigma * sigma))


def render_density(dots, sigma, grid):
    """Sum of per-dot Gaussians, each renormalized to unit mass on the grid."""
    h, w = grid
    if len(dots) == 0:
        return np.zeros((h, w))
    gy = _axis_kernels(dots[:, 0], sigma, h)
    gx = _axis_kernels(dots[:, 1], sigma, w)
    mass = gy.sum(1) * gx.sum(1)
    return np.einsum("nh,nw->hw", gy / mass[:, None], gx)


def render_background(kind, amp, grid, rng):
    h, w = grid
    if kind == "mixed":
        kind = ("none", "gradient", "clutter")[int(rng.integers(3, size=None))]
    if kind == "none" or amp == 0.0:
        return np.zeros((h, w))
    ys = (np.arange(h) + 0.5)[:, None] / h
    xs = (np.arange(w) + 0.5)[None, :] / w
    if kind == "gradient":
        theta = 2.0 * np.pi * rng.uniform(1)[0]
        ramp = np.cos(theta) * xs + np.sin(theta) * ys
        ramp = ramp - ramp.min()
        return amp * ramp / max(ramp.max(), 1e-12)
    # clutter: a few broad bumps of random size and strength
    n_bumps = 3 + int(rng.integers(4, size=None))
    u = rng.uniform((n_bumps, 4))
    bg = np.zeros((h, w))
    scale = min(h, w) / 32.0
    for cy, cx, s, a in u:
        sig = (3.0 + 3.0 * s) * scale
        bg += (0.5 + 0.5 * a) * np.exp(
            -((ys * h - cy * h) ** 2 + (xs * w - cx * w) ** 2) / (2.0 * sig * sig)
        )
    return amp * bg


def _make_sample(spec, label, sample_id, rng):
    h, w = spec.grid
    lo, hi = spec.count_range
    n = int(lo + rng.integers(hi - lo + 1, size=None))
    if isinstance(spec.kernel_sigma, (tuple, list)):
        s_lo, s_hi = spec.kernel_sigma
        sigma = s_lo + (s_hi - s_lo) * rng.uniform(1)[0]
    else:
        sigma = float(spec.kernel_sigma)
    dots = rng.uniform((n, 2)) * np.array([h, w]) if n else np.zeros((0, 2))
    density = render_density(dots, sigma, spec.grid)
    img = INPUT_GAIN * density
    img = img + render_background(spec.background, spec.background_amp, spec.grid, rng)
    img = img + NOISE_STD * rng.normal((h, w))
    return DomainSample(
        input=img[None],
        density_gt=density[None],
        count_gt=float(n),
        dataset_label=label,
        sample_id=sample_id,
        dots=dots,
    )


def generate(specs, seed):
    """Deterministic (train, test) sample lists; each sample has its own derived stream."""
    if not specs:
        raise InvalidArgumentError("generate needs at least one DomainSpec")
    grids = {tuple(s.grid) for s in specs}
    if len(grids) != 1:
        raise InvalidArgumentError(f"all domains must share one grid, got {sorted(grids)}")
    out = {"train": [], "test": []}
    for label, spec in enumerate(specs):
        for split, n in (("train", spec.n_train), ("test", spec.n_test)):
            for i in range(n):
                rng = Rng.derived(seed, label, _SPLITS[split], i)
                sid = len(out[split])
                out[split].append(_make_sample(spec, label, sid, rng))
    return out["train"], out["test"]


# --- serialization ----------------------------------------------------------------


def write_samples(path, samples):
    if not samples:
        raise InvalidArgumentError("refusing to write an empty sample file")
    _, h, w = samples[0].input.shape
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<4I", VERSION, len(samples), h, w))
        for s in samples:
            fh.write(struct.pack("<Bd", s.dataset_label, s.count_gt))
            fh.write(np.ascontiguousarray(s.input, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(s.density_gt, dtype="<f8").tobytes())


def read_samples(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != MAGIC:
        raise InvalidArgumentError(f"{path}: not a VATN file")
    version, n, h, w = struct.unpack_from("<4I", raw, 4)
    if version != VERSION:
        raise InvalidArgumentError(f"{path}: unsupported version {version}")
    rec = 9 + 16 * h * w
    if len(raw) != 20 + n * rec:
        raise InvalidArgumentError(f"{path}: truncated or oversized file")
    samples = []
    off = 20
    for i in range(n):
        label, count = struct.unpack_from("<Bd", raw, off)
        img = np.frombuffer(raw, "<f8", h * w, off + 9).reshape(1, h, w).astype(np.float64)
        den = np.frombuffer(raw, "<f8", h * w, off + 9 + 8 * h * w).reshape(1, h, w)
        samples.append(DomainSample(img, den.astype(np.float64), count, label, i))
        off += rec
    return samples


def write_dots_csv(path, samples):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["sample_id", "dataset_label", "row", "col"])
        for s in samples:
            for r, c in s.dots if s.dots is not None else ():
                wr.writerow([s.sample_id, s.dataset_label, repr(float(r)), repr(float(c))])


def read_dots_csv(path):
    """Dot coordinates keyed by sample id."""
    dots = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            dots.setdefault(int(row["sample_id"]), []).append(
                (float(row["row"]), float(row["col"]))
            )
    return {k: np.array(v) for k, v in dots.items()}


def save_dataset(directory, train, test, specs, seed=None):
    """Writes ``train.vatn``, ``test.vatn``, ``domains.json`` and ``*_dots.csv``."""
    os.makedirs(directory, exist_ok=True)
    write_samples(os.path.join(directory, "train.vatn"), train)
    write_samples(os.path.join(directory, "test.vatn"), test)
    meta = {"seed": seed, "domains": [s.to_dict() for s in specs]}
    with open(os.path.join(directory, "domains.json"), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    write_dots_csv(os.path.join(directory, "train_dots.csv"), train)
    write_dots_csv(os.path.join(directory, "test_dots.csv"), test)


def load_dataset(directory):
    """Returns (train, test, domain_names)."""
    with open(os.path.join(directory, "domains.json")) as fh:
        meta = json.load(fh)
    names = [d["name"] for d in meta["domains"]]
    train = read_samples(os.path.join(directory, "train.vatn"))
    test = read_samples(os.path.join(directory, "test.vatn"))
    return train, test, names
