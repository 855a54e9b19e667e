"""Runtime configuration: defaults, TOML-style file parsing, env overrides.

The config file is flat ``key = value`` pairs (strings quoted, arrays in
brackets, ``#`` starts a full-line comment). Precedence is defaults < file <
environment (``DOCPOST_<KEY>``) < command-line flags.
"""

from __future__ import annotations

import dataclasses
import os
import shlex
from dataclasses import dataclass, fields

from .idtp import IdtpConfig
from .rewards import (
    HttpRewardScorer,
    RewardScorer,
    RuleWeights,
    SubprocessRewardScorer,
)
from .table_merge import (
    ContinuationScorer,
    HttpContinuationScorer,
    MergeConfig,
    SubprocessContinuationScorer,
)

ENV_PREFIX = "DOCPOST_"


class ConfigError(Exception):
    pass


@dataclass(frozen=True)
class Config:
    near_threshold: float = 0.8
    continuation_threshold: float = 0.5
    min_confidence: float = 0.3
    overlap_tolerance: float = 0.5
    w_rule: float = 0.5
    rule_weights: tuple[float, float, float, float] = (0.25, 0.25, 0.25, 0.25)
    eps: float = 1e-6
    include_headers_footers: bool = False
    mask_fill: tuple[int, int, int] = (200, 200, 200)
    continuation_scorer_cmd: str = ""
    continuation_scorer_url: str = ""
    reward_scorer_cmd: str = ""
    reward_scorer_url: str = ""

    def __post_init__(self):
        for name in (
            "near_threshold",
            "continuation_threshold",
            "min_confidence",
            "overlap_tolerance",
            "w_rule",
        ):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigError(f"{name} must be in [0,1], got {value}")
        if abs(sum(self.rule_weights) - 1.0) > 1e-9:
            raise ConfigError(f"rule_weights must sum to 1, got {self.rule_weights}")
        if len(self.mask_fill) != 3 or any(not 0 <= v <= 255 for v in self.mask_fill):
            raise ConfigError(f"mask_fill must be three bytes, got {self.mask_fill}")

    # -- views consumed by the modules --------------------------------------

    def merge_config(self) -> MergeConfig:
        return MergeConfig(self.near_threshold, self.continuation_threshold)

    def idtp_config(self) -> IdtpConfig:
        return IdtpConfig(
            min_confidence=self.min_confidence,
            overlap_tolerance=self.overlap_tolerance,
            fill=tuple(self.mask_fill),
        )

    def rule_weights_obj(self) -> RuleWeights:
        return RuleWeights(*self.rule_weights)

    def continuation_scorer(self) -> ContinuationScorer | None:
        if self.continuation_scorer_cmd:
            return SubprocessContinuationScorer(shlex.split(self.continuation_scorer_cmd))
        if self.continuation_scorer_url:
            return HttpContinuationScorer(self.continuation_scorer_url)
        return None

    def reward_scorer(self) -> RewardScorer | None:
        if self.reward_scorer_cmd:
            return SubprocessRewardScorer(shlex.split(self.reward_scorer_cmd))
        if self.reward_scorer_url:
            return HttpRewardScorer(self.reward_scorer_url)
        return None


def _parse_value(text: str):
    text = text.strip()
    if not text:
        raise ConfigError("empty value")
    if text.startswith("[") and text.endswith("]"):
        inner = text[1:-1].strip()
        if not inner:
            return ()
        return tuple(_parse_value(part) for part in inner.split(","))
    if text.startswith('"') and text.endswith('"') and len(text) >= 2:
        return text[1:-1]
    if text in ("true", "false"):
        return text == "true"
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        raise ConfigError(f"cannot parse value {text!r}") from None


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, str):
        return f'"{value}"'
    if isinstance(value, tuple):
        return "[" + ", ".join(_format_value(v) for v in value) + "]"
    return repr(value)


def parse_config_text(text: str, base: Config | None = None) -> Config:
    known = {f.name: f for f in fields(Config)}
    overrides: dict = {}
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in known:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        parsed = _parse_value(value)
        if key in ("rule_weights", "mask_fill"):
            parsed = tuple(parsed)
        overrides[key] = parsed
    return dataclasses.replace(base or Config(), **overrides)


def dumps_config(cfg: Config) -> str:
    lines = [f"{f.name} = {_format_value(getattr(cfg, f.name))}" for f in fields(Config)]
    return "\n".join(lines) + "\n"


def load_config(path: str, base: Config | None = None) -> Config:
    with open(path, encoding="utf-8") as fh:
        return parse_config_text(fh.read(), base)


def save_config(cfg: Config, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_config(cfg))


def apply_env_overrides(cfg: Config, environ=None) -> Config:
    """Apply ``DOCPOST_<UPPERCASE_KEY>`` environment overrides."""
    environ = os.environ if environ is None else environ
    string_fields = {
        "continuation_scorer_cmd",
        "continuation_scorer_url",
        "reward_scorer_cmd",
        "reward_scorer_url",
    }
    overrides: dict = {}
    for f in fields(Config):
        env_key = ENV_PREFIX + f.name.upper()
        if env_key not in environ:
            continue
        raw = environ[env_key]
        if f.name in string_fields:
            parsed = raw[1:-1] if raw.startswith('"') and raw.endswith('"') else raw
        else:
            parsed = _parse_value(raw)
            if f.name in ("rule_weights", "mask_fill"):
                parsed = tuple(parsed)
        overrides[f.name] = parsed
    return dataclasses.replace(cfg, **overrides)
