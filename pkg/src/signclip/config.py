"""Run configuration: one flat set of ``key = value`` settings with defaults.

File format: one ``key = value`` per line, ``#`` starts a comment, blank lines
are ignored. Booleans accept ``true/false/yes/no/1/0``. Unknown keys are an error.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .synth import SyntheticConfig


class ConfigKeyError(ValueError):
    def __init__(self, key: str, message: str | None = None):
        super().__init__(message or f"unknown config key: {key}")
        self.key = key


@dataclass(frozen=True)
class RunConfig:
    # synthetic corpus
    n_signs: int = 24
    n_ambiguous_pairs: int = 6
    frames_per_sign: int = 4
    sentence_min: int = 3
    sentence_max: int = 6
    height: int = 32
    width: int = 32
    channels: int = 3
    landmark_sigma: float = 1.0
    pixel_noise: float = 0.08
    position_jitter: float = 1.5
    mouth_amplitude: float = 0.035
    n_train: int = 600
    n_valid: int = 100
    n_test: int = 100
    # encoders
    encoder_seed: int = 1234
    base_res: int = 16
    spatial_grid: int = 4
    mouth_height: int = 16
    mouth_width: int = 24
    lip_downsample: int = 2
    crop_margin: float = 0.10
    # fusion and decoder
    d_model: int = 32
    n_heads: int = 2
    prompt_len: int = 4
    kernel_width: int = 5
    lora_rank: int = 4
    lora_scale: float = 1.0
    tau: float = 0.1
    alpha: float = 1.0
    beta: float = 0.2
    use_spatial: bool = True
    use_mouth: bool = True
    # optimisation
    lr: float = 5e-4
    weight_decay: float = 0.01
    grad_clip: float = 1.0
    epochs: int = 30
    batch_size: int = 16
    max_decode_len: int = 10
    seed: int = 0
    ablation_seeds: int = 3

    def synthetic(self) -> SyntheticConfig:
        names = {f.name for f in fields(SyntheticConfig)}
        return SyntheticConfig(**{k: v for k, v in asdict(self).items() if k in names})

    def with_overrides(self, **kwargs) -> "RunConfig":
        for k in kwargs:
            if k not in _TYPES:
                raise ConfigKeyError(k)
        return replace(self, **kwargs)

    def to_text(self) -> str:
        return "".join(f"{k} = {_format(v)}\n" for k, v in asdict(self).items())


_TYPES = {f.name: type(getattr(RunConfig(), f.name)) for f in fields(RunConfig)}


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


def _parse_value(key: str, raw: str):
    kind = _TYPES[key]
    try:
        if kind is bool:
            low = raw.lower()
            if low in ("true", "yes", "1"):
                return True
            if low in ("false", "no", "0"):
                return False
            raise ValueError(raw)
        if kind is int:
            return int(raw)
        return kind(raw)
    except ValueError:
        raise ConfigKeyError(key, f"bad value for {key}: {raw!r}") from None


def parse_config_text(text: str, base: RunConfig | None = None) -> RunConfig:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in _TYPES:
            raise ConfigKeyError(key)
        values[key] = _parse_value(key, raw)
    return replace(base or RunConfig(), **values)


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    return parse_config_text(Path(path).read_text())
