"""Pipeline configuration: defaults, flat key=value files, and config hashing.

Defaulted constants mirror the construction protocol exactly: top-10
retrieval, 0.6 intruder similarity cap, 0.72 version threshold, 0.5 easy
threshold, 3-of-5 agreement. Reports embed the config hash and seed so any two
artifacts with equal hashes came from identical runs.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, fields
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass
class PipelineConfig:
    global_seed: int = 0
    num_bins: int = 2 ** 24
    similarity_cap: float = 0.6
    version_threshold: float = 0.72
    top_k: int = 10
    easy_threshold: float = 0.5
    test_fraction: float = 0.2
    min_agreement: int = 3
    workers: int = 1
    paths: dict[str, str] = field(default_factory=dict)

    def validate(self) -> "PipelineConfig":
        if not 0.0 < self.similarity_cap <= 1.0:
            raise ConfigError(f"similarity_cap must be in (0, 1], got {self.similarity_cap}")
        if not 0.0 < self.version_threshold <= 1.0:
            raise ConfigError(f"version_threshold must be in (0, 1], got {self.version_threshold}")
        if self.top_k < 1:
            raise ConfigError(f"top_k must be >= 1, got {self.top_k}")
        if not 0.0 <= self.easy_threshold <= 1.0:
            raise ConfigError(f"easy_threshold must be in [0, 1], got {self.easy_threshold}")
        if not 0.0 <= self.test_fraction < 1.0:
            raise ConfigError(f"test_fraction must be in [0, 1), got {self.test_fraction}")
        if not 1 <= self.min_agreement <= 5:
            raise ConfigError(f"min_agreement must be in 1..5, got {self.min_agreement}")
        if self.num_bins < 2 or self.num_bins & (self.num_bins - 1):
            raise ConfigError(f"num_bins must be a power of two, got {self.num_bins}")
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}")
        return self

    def config_hash(self) -> str:
        """Hash of everything that determines output content. I/O paths are
        excluded so identical runs in different directories hash alike, and
        the worker count is excluded because parallelism never changes
        output bytes."""
        lines = []
        for f in sorted(fields(self), key=lambda f: f.name):
            if f.name in ("paths", "workers"):
                continue
            lines.append(f"{f.name}={getattr(self, f.name)}")
        lines.extend(
            f"option.{k}={self.paths[k]}" for k in sorted(OPTION_KEYS & self.paths.keys())
        )
        return hashlib.blake2b("\n".join(lines).encode("utf-8"), digest_size=8).hexdigest()

    def header_rows(self) -> list[tuple[str, object]]:
        return [("config_hash", self.config_hash()), ("seed", self.global_seed)]


# paths-dict keys that change output content (unlike file locations)
OPTION_KEYS = {
    "source", "input_format", "scorer", "strategy", "phenomenon", "probe_n",
    "adapter", "eval_mode", "eval_threshold", "eval_batch", "demo_docs",
    "demo_topics", "audit_acc_margin", "audit_f1_margin",
}

_INT_KEYS = {"global_seed", "num_bins", "top_k", "min_agreement", "workers"}
_FLOAT_KEYS = {"similarity_cap", "version_threshold", "easy_threshold", "test_fraction"}


def load_config(path: str | Path) -> PipelineConfig:
    """Flat `key = value` lines; '#' starts a comment; unknown keys are paths."""
    cfg = PipelineConfig()
    for lineno, raw in enumerate(Path(path).read_text("utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value, got {raw!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        try:
            if key in _INT_KEYS:
                setattr(cfg, key, int(value))
            elif key in _FLOAT_KEYS:
                setattr(cfg, key, float(value))
            else:
                cfg.paths[key] = value
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: bad value for {key}: {value!r}") from exc
    return cfg.validate()
