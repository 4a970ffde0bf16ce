"""Training configuration and its canonical JSON form."""

import json
import os
from dataclasses import asdict, dataclass, fields

from vattn.errors import InvalidArgumentError

MODES = ("it", "jt", "se", "va", "inva")
SEED_ENV = "VATTN_SEED"


@dataclass
class TrainConfig:
    mode: str = "va"
    epochs: int = 120
    batch_size: int = 16
    lr: float = 1e-3
    adam_betas: tuple = (0.9, 0.999)
    lr_decay_factor: float = 2.5
    lr_decay_period: int = 60
    seed: int = 0
    lambda_kl: float = 1.0
    lambda_lse: float = 0.1
    lambda_det: float = 0.1
    n_components: int = 0  # 0: one component per training domain
    cbar: int = 3
    k: int = 3
    cluster_backend: str = "gmm"
    latent_dim: int = 8
    c_mid: int = 16
    c_feat: int = 32
    head: tuple = (16, 8)
    se_reduction: int = 4
    drop_rate: float = 0.2
    steps_per_epoch: int = 0  # 0: ceil(n_train / batch_size)
    eval_every: int = 0  # 0: evaluate only before and after training

    def __post_init__(self):
        if self.mode not in MODES:
            raise InvalidArgumentError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.batch_size < 1:
            raise InvalidArgumentError("batch_size must be >= 1")
        if min(self.lambda_kl, self.lambda_lse, self.lambda_det) < 0:
            raise InvalidArgumentError("loss weights must be non-negative")
        if self.epochs < 0 or self.lr_decay_period < 1 or self.lr <= 0:
            raise InvalidArgumentError("epochs >= 0, lr > 0 and lr_decay_period >= 1 required")
        if self.cluster_backend not in ("gmm", "kmeans"):
            raise InvalidArgumentError(f"unknown cluster_backend {self.cluster_backend!r}")
        self.adam_betas = tuple(self.adam_betas)
        self.head = tuple(self.head)

    def to_dict(self):
        d = asdict(self)
        d["adam_betas"] = list(self.adam_betas)
        d["head"] = list(self.head)
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InvalidArgumentError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


def load_config(path=None, **overrides):
    """Defaults <- JSON file <- ``VATTN_SEED`` <- explicit (non-None) overrides."""
    d = {}
    if path is not None:
        with open(path) as fh:
            try:
                d = json.load(fh)
            except json.JSONDecodeError as exc:
                raise InvalidArgumentError(f"{path}: malformed JSON ({exc.msg})") from exc
        if not isinstance(d, dict):
            raise InvalidArgumentError(f"{path}: config must be a JSON object")
    if os.environ.get(SEED_ENV):
        try:
            d["seed"] = int(os.environ[SEED_ENV])
        except ValueError as exc:
            raise InvalidArgumentError(f"{SEED_ENV} must be an integer") from exc
    d.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return TrainConfig.from_dict(d)
    except TypeError as exc:
        raise InvalidArgumentError(str(exc)) from exc
