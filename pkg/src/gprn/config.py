"""Run configuration, loaded from JSON and overridable from the command line."""

from dataclasses import asdict, dataclass, field, fields, replace
import json

from .errors import ConfigError
from .model import make_tensorization
from .train import AdamConfig


@dataclass(frozen=True)
class RunConfig:
    data: str = None
    K: int = 2
    M: int = None
    dims: tuple = None
    adam: AdamConfig = field(default_factory=AdamConfig)
    seed: int = 0
    split: tuple = (0.8, 0.2)
    jitter: float = 1e-8
    out: str = "run"
    diagonal: bool = False

    def __post_init__(self):
        if not isinstance(self.K, int) or self.K < 1:
            raise ConfigError(f"K must be a positive integer, got {self.K!r}")
        if self.dims is not None:
            object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        split = tuple(self.split)
        if len(split) != 2:
            raise ConfigError("split must be [train, test]")
        if all(isinstance(s, int) and not isinstance(s, bool) and s > 1 for s in split):
            pass  # exact row counts
        elif not all(0 <= float(s) <= 1 for s in split) or sum(float(s) for s in split) > 1 + 1e-12:
            raise ConfigError(f"split fractions must lie in [0, 1] and sum to <= 1, got {split}")
        if not split[0] > 0:
            raise ConfigError("the training split must be non-empty")
        object.__setattr__(self, "split", split)
        if not self.jitter >= 0:
            raise ConfigError("jitter must be non-negative")

    def tensorization(self, D):
        if self.dims is None and self.M is None:
            return make_tensorization(D, dims=(D,))
        if self.dims is not None:
            return make_tensorization(D, dims=self.dims)
        return make_tensorization(D, M=self.M)

    def to_dict(self):
        d = asdict(self)
        d["dims"] = None if self.dims is None else list(self.dims)
        d["split"] = list(self.split)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "adam" in d:
            adam = d["adam"]
            if isinstance(adam, dict):
                adam_known = {f.name for f in fields(AdamConfig)}
                bad = set(adam) - adam_known
                if bad:
                    raise ConfigError(f"unknown adam keys: {sorted(bad)}")
                try:
                    d["adam"] = AdamConfig(**adam)
                except (TypeError, ValueError) as exc:
                    raise ConfigError(f"bad adam settings: {exc}") from exc
        try:
            return cls(**d)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"bad config: {exc}") from exc


def load_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    return RunConfig.from_dict(raw)


def override(config, **changes):
    """Apply non-None flag values on top of ``config``."""
    adam_keys = {f.name for f in fields(AdamConfig)}
    adam_changes = {k: v for k, v in changes.items() if k in adam_keys and v is not None}
    top = {k: v for k, v in changes.items() if k not in adam_keys and v is not None}
    try:
        if adam_changes:
            top["adam"] = replace(config.adam, **adam_changes)
        return replace(config, **top)
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc
