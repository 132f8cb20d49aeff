"""Run configuration: one flat key = value document drives everything.

Keys are exactly the ``RunConfig`` field names.  Values are JSON fragments
(numbers, true/false, null, quoted strings); bare words parse as strings.
Lines starting with ``#`` are comments.  Defaults follow the reference
hyperparameter table: 6 processes, embedding dimension 100, epoch 5,
step multiplier 1.2, 3 candidates, diversity weight 1.0, bounds
[-0.1, 0.1].
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace
import json

from .errors import ConfigurationError
from .ncs import EmbeddingConfig, NcsConfig
from .surrogate import FcpsConfig


@dataclass
class RunConfig:
    # search engine
    processes: int = 6            # parallel search processes (lambda)
    epoch: int = 5                # iterations per step-size update
    r: float = 1.2                # step-size multiplier
    phi: float = 1.0              # diversity trade-off factor
    candidates: int = 3           # offspring per iteration (M)
    sigma0: float = 0.02          # initial step size
    normalize_fd: bool = False    # per-generation min-max selection scaling
    # embedding
    embed_dim: int = 100          # effective subspace dimension (d)
    embed_mode: str = "per_iteration"   # per_iteration | fixed | bypass
    embed_dtype: str = "float64"        # float64 | float32 matrix precision
    sample_in_subspace: bool = False
    max_dense_entries: int = 50_000_000
    # pre-selection surrogate
    surrogate_enabled: bool = True
    knn_k: int = 3
    fuzzifier: float = 2.0
    label_split: float = 0.5
    min_archive: int = 6
    top_quantile: float | None = None
    archive_capacity: int = 200
    # search space bounds (low-dimensional space; also the uniform init range)
    bound_low: float = -0.1
    bound_high: float = 0.1
    # fitness backend
    env_name: str = "cartpole"    # cartpole | sphere
    network: str = "input=4 dense:32:relu dense:2:none"
    sphere_dim: int = 10_000
    sphere_effective_dim: int = 10
    sphere_rotation_seed: int = 0
    train_episodes: int = 1
    test_episodes: int = 30
    # harness
    max_steps: int = 10_000
    master_seed: int = 0
    repeats: int = 1
    output_dir: str = "runs/default"
    workers: int = 1
    checkpoint_every: int = 0     # generations between checkpoints; 0 disables

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        self.ncs_config()
        self.embedding_config()
        self.fcps_config()
        if self.bound_low >= self.bound_high:
            raise ConfigurationError(
                f"bound_low must be < bound_high, got [{self.bound_low}, {self.bound_high}]")
        if self.env_name not in ("cartpole", "sphere"):
            raise ConfigurationError(f"unknown env_name {self.env_name!r}")
        if self.max_steps < 1:
            raise ConfigurationError(f"max_steps must be >= 1, got {self.max_steps}")
        if self.repeats < 1:
            raise ConfigurationError(f"repeats must be >= 1, got {self.repeats}")
        if self.train_episodes < 1 or self.test_episodes < 1:
            raise ConfigurationError("episode counts must be >= 1")

    def ncs_config(self) -> NcsConfig:
        return NcsConfig(n_processes=self.processes, epoch=self.epoch, r=self.r,
                         phi=self.phi, n_candidates=self.candidates,
                         sigma0=self.sigma0, normalize_fd=self.normalize_fd)

    def embedding_config(self) -> EmbeddingConfig:
        return EmbeddingConfig(dim=self.embed_dim, mode=self.embed_mode,
                               sample_in_subspace=self.sample_in_subspace,
                               max_dense_entries=self.max_dense_entries,
                               dtype=self.embed_dtype)

    def fcps_config(self) -> FcpsConfig | None:
        if not self.surrogate_enabled:
            return None
        return FcpsConfig(k=self.knn_k, fuzzifier=self.fuzzifier,
                          label_split=self.label_split, min_archive=self.min_archive,
                          top_quantile=self.top_quantile)

    @property
    def bounds(self) -> tuple[float, float]:
        return (self.bound_low, self.bound_high)

    def with_overrides(self, **overrides) -> "RunConfig":
        for name in overrides:
            if name not in field_names():
                raise ConfigurationError(
                    f"unknown config field {name!r}; valid fields: "
                    + ", ".join(sorted(field_names())))
        return replace(self, **overrides)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            lines.append(f"{f.name} = {json.dumps(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"


def field_names() -> set[str]:
    return {f.name for f in fields(RunConfig)}


def parse_value(raw: str):
    raw = raw.strip()
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw  # bare word: keep as string


def parse_config_text(text: str) -> RunConfig:
    overrides = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = line.split("=", 1)
        key = key.strip()
        if key not in field_names():
            raise ConfigurationError(
                f"line {lineno}: unknown config field {key!r}; valid fields: "
                + ", ".join(sorted(field_names())))
        overrides[key] = parse_value(raw)
    try:
        return RunConfig(**overrides)
    except TypeError as exc:
        raise ConfigurationError(str(exc)) from exc


def load_config(path) -> RunConfig:
    with open(path) as fh:
        return parse_config_text(fh.read())


def save_config(cfg: RunConfig, path) -> None:
    with open(path, "w") as fh:
        fh.write(cfg.to_text())


def config_dict(cfg: RunConfig) -> dict:
    return asdict(cfg)
