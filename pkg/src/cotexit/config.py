"""Configuration loading: defaults < file < ``--set`` overrides.

The key set is flat and dotted.  Files may be YAML or JSON and may nest
(``loop: {m: 4}`` is the same as ``loop.m: 4``)::

    tau_sim             redundancy threshold, strict (0.35)
    k                   redundancy look-back in steps (1)
    lambda              anchor confidence threshold, strict (0.98)
    epsilon             confidence-drop tolerance (0.03)
    L                   verification window length (2)
    probe_token_cap     probe max tokens; null means 30, or 50 for code
    mc_temperature      softmax temperature for multiple-choice (1.0)
    code_match_threshold  similarity for code answers to agree (0.8)
    slide_windows       reuse a failed window's later probes (false)
    loop.min_steps      loop breaker idles through this many steps (50)
    loop.m              consecutive redundant steps to fire; null = off
    loop.gate           best-probe confidence the loop breaker needs (0.8)
    segmenter.l_min     target minimum step length in characters (200)
    segmenter.l_max     maximum merged step length in characters (1000)
    task                math | mc | code
    max_steps           safety cap on steps per episode (512)
    max_total_tokens    safety cap on tokens per episode (32768)
    end_of_thinking     delimiter that ends the reasoning stream
    temperature         sampling temperature (0.6)
    top_p               nucleus sampling (0.95)
    embedding.backend   hash | http
    embedding.dim       hash embedder dimension (256)
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping

import yaml

from .controller import EmbeddingSettings, ExitConfig, GenerationSettings
from .errors import ConfigurationError
from .loop_breaker import LoopBreakerConfig
from .redundancy import RedundancyConfig
from .segmenter import SegmenterConfig
from .verification import TaskKind, VerificationConfig

__all__ = ["KEYS", "DEFAULTS", "load_config", "config_from_flat", "flatten", "resolved_flat", "parse_override"]


@dataclass(frozen=True)
class _Key:
    kind: type
    default: Any
    check: Callable[[Any], bool] | None = None
    rule: str = ""
    nullable: bool = False


def _open01(x: float) -> bool:
    return 0.0 < x <= 1.0


KEYS: dict[str, _Key] = {
    "tau_sim": _Key(float, 0.35, lambda x: -1.0 <= x <= 1.0, "in [-1, 1]"),
    "k": _Key(int, 1, lambda x: x >= 1, ">= 1"),
    "lambda": _Key(float, 0.98, _open01, "in (0, 1]"),
    "epsilon": _Key(float, 0.03, lambda x: 0.0 <= x <= 1.0, "in [0, 1]"),
    "L": _Key(int, 2, lambda x: x >= 1, ">= 1"),
    "probe_token_cap": _Key(int, None, lambda x: x >= 1, ">= 1", nullable=True),
    "mc_temperature": _Key(float, 1.0, lambda x: x > 0, "> 0"),
    "code_match_threshold": _Key(float, 0.8, _open01, "in (0, 1]"),
    "slide_windows": _Key(bool, False),
    "loop.min_steps": _Key(int, 50, lambda x: x >= 0, ">= 0"),
    "loop.m": _Key(int, None, lambda x: x >= 1, ">= 1", nullable=True),
    "loop.gate": _Key(float, 0.8, lambda x: 0.0 <= x < 1.0, "in [0, 1)"),
    "segmenter.l_min": _Key(int, 200, lambda x: x >= 1, ">= 1"),
    "segmenter.l_max": _Key(int, 1000, lambda x: x >= 1, ">= 1"),
    "task": _Key(str, "math", lambda x: x in {"math", "mc", "code"}, "one of math, mc, code"),
    "max_steps": _Key(int, 512, lambda x: x >= 1, ">= 1"),
    "max_total_tokens": _Key(int, 32768, lambda x: x >= 1, ">= 1"),
    "end_of_thinking": _Key(str, "</think>"),
    "temperature": _Key(float, 0.6, lambda x: x >= 0, ">= 0"),
    "top_p": _Key(float, 0.95, _open01, "in (0, 1]"),
    "embedding.backend": _Key(str, "hash", lambda x: x in {"hash", "http"}, "one of hash, http"),
    "embedding.dim": _Key(int, 256, lambda x: x >= 8, ">= 8"),
}

DEFAULTS: dict[str, Any] = {name: key.default for name, key in KEYS.items()}


def flatten(tree: Mapping[str, Any], prefix: str = "") -> dict[str, Any]:
    out: dict[str, Any] = {}
    for k, v in tree.items():
        name = f"{prefix}{k}"
        if isinstance(v, Mapping):
            out.update(flatten(v, name + "."))
        else:
            out[name] = v
    return out


def _coerce(name: str, value: Any, source: str) -> Any:
    key = KEYS.get(name)
    if key is None:
        raise ConfigurationError(f"unknown config key {name!r} ({source}); known keys: {', '.join(sorted(KEYS))}")
    if value is None:
        if key.nullable:
            return None
        raise ConfigurationError(f"config key {name!r} ({source}) may not be null")
    try:
        if key.kind is bool:
            if not isinstance(value, bool):
                raise TypeError
            out: Any = value
        elif key.kind is int:
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise TypeError
            out = int(value)
        elif key.kind is float:
            if isinstance(value, bool):
                raise TypeError
            out = float(value)
            if not math.isfinite(out):
                raise TypeError
        else:
            if not isinstance(value, str):
                raise TypeError
            out = value
    except (TypeError, ValueError):
        raise ConfigurationError(
            f"config key {name!r} ({source}) expects {key.kind.__name__}, got {value!r}"
        ) from None
    if key.check is not None and not key.check(out):
        raise ConfigurationError(f"config key {name!r} ({source}) out of range: {out!r}, must be {key.rule}")
    return out


def parse_override(item: str) -> tuple[str, Any]:
    """``"loop.m=4"`` -> ``("loop.m", 4)``.  Values are read as YAML scalars."""
    if "=" not in item:
        raise ConfigurationError(f"override {item!r} is not KEY=VALUE")
    name, raw = item.split("=", 1)
    name = name.strip()
    try:
        value = yaml.safe_load(raw) if raw.strip() else ""
    except yaml.YAMLError:
        value = raw
    if isinstance(value, (dict, list)):
        value = raw
    return name, value


def _read_file(path: str | Path) -> dict[str, Any]:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigurationError(f"cannot read config file {str(p)!r}: {exc.strerror or exc}") from exc
    if not text.strip():
        return {}
    try:
        data = json.loads(text) if p.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigurationError(f"config file {str(p)!r} does not parse: {exc}") from exc
    if data is None:
        return {}
    if not isinstance(data, Mapping):
        raise ConfigurationError(f"config file {str(p)!r} must hold a mapping at top level")
    return flatten(data)


def config_from_flat(flat: Mapping[str, Any]) -> ExitConfig:
    """Build an :class:`ExitConfig` from a complete, validated flat mapping."""
    v = {**DEFAULTS, **flat}
    if v["segmenter.l_min"] >= v["segmenter.l_max"]:
        raise ConfigurationError(
            f"config key 'segmenter.l_min' ({v['segmenter.l_min']}) must be below 'segmenter.l_max' ({v['segmenter.l_max']})"
        )
    return ExitConfig(
        segmenter=SegmenterConfig(l_min=v["segmenter.l_min"], l_max=v["segmenter.l_max"]),
        redundancy=RedundancyConfig(k=v["k"], tau_sim=v["tau_sim"]),
        verification=VerificationConfig(
            lam=v["lambda"],
            epsilon=v["epsilon"],
            window_len=v["L"],
            probe_token_cap=v["probe_token_cap"],
            mc_temperature=v["mc_temperature"],
            code_match_threshold=v["code_match_threshold"],
        ),
        loop_breaker=LoopBreakerConfig(min_steps=v["loop.min_steps"], m=v["loop.m"], min_confidence_gate=v["loop.gate"]),
        task=TaskKind.parse(v["task"]),
        max_steps=v["max_steps"],
        max_total_tokens=v["max_total_tokens"],
        end_of_thinking=v["end_of_thinking"],
        slide_windows=v["slide_windows"],
        generation=GenerationSettings(temperature=v["temperature"], top_p=v["top_p"]),
        embedding=EmbeddingSettings(backend=v["embedding.backend"], dim=v["embedding.dim"]),
    )


def load_config(
    path: str | Path | None = None,
    overrides: Mapping[str, Any] | Iterable[str] | None = None,
) -> ExitConfig:
    """Resolve defaults, then the file at ``path``, then ``overrides``.

    ``overrides`` is either a mapping or ``KEY=VALUE`` strings as given to
    ``--set``.
    """
    flat: dict[str, Any] = {}
    if path is not None:
        for name, value in _read_file(path).items():
            flat[name] = _coerce(name, value, f"file {str(path)!r}")
    if overrides:
        pairs = overrides.items() if isinstance(overrides, Mapping) else map(parse_override, overrides)
        for name, value in pairs:
            flat[name] = _coerce(name, value, "override")
    return config_from_flat(flat)


def resolved_flat(cfg: ExitConfig) -> dict[str, Any]:
    """The flat key view of ``cfg``: what gets echoed into output headers."""
    ver = cfg.verification
    return {
        "tau_sim": cfg.redundancy.tau_sim,
        "k": cfg.redundancy.k,
        "lambda": ver.lam,
        "epsilon": ver.epsilon,
        "L": ver.window_len,
        "probe_token_cap": ver.probe_token_cap,
        "mc_temperature": ver.mc_temperature,
        "code_match_threshold": ver.code_match_threshold,
        "slide_windows": cfg.slide_windows,
        "loop.min_steps": cfg.loop_breaker.min_steps,
        "loop.m": cfg.loop_breaker.m,
        "loop.gate": cfg.loop_breaker.min_confidence_gate,
        "segmenter.l_min": cfg.segmenter.l_min,
        "segmenter.l_max": cfg.segmenter.l_max,
        "task": cfg.task.value,
        "max_steps": cfg.max_steps,
        "max_total_tokens": cfg.max_total_tokens,
        "end_of_thinking": cfg.end_of_thinking,
        "temperature": cfg.generation.temperature,
        "top_p": cfg.generation.top_p,
        "embedding.backend": cfg.embedding.backend,
        "embedding.dim": cfg.embedding.dim,
    }
